"""``SADC`` checkpoint files.

Layout (little-endian)::

    "SADC" u32 version
    u32 len, config text (UTF-8, key = value lines)
    u32 count, count x (u32 len, name, SADT tensor)      parameters
    u32 count, count x (u32 len, name, SADT tensor)      momentum buffers
    u64 iteration
    u32 len, RNG state (UTF-8 JSON of the numpy bit-generator state)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .. import tensor
from .config import parse_config

MAGIC = b"SADC"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, msg, path="<checkpoint>", offset=None):
        where = f"{path}" + (f": byte {offset}" if offset is not None else "")
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.offset = offset


@dataclass
class Checkpoint:
    config: object
    params: dict
    buffers: dict
    iteration: int
    rng_state: dict


def _table(tensors):
    out = struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw + tensor.dumps(arr)
    return out


def dumps(ckpt):
    cfg = ckpt.config.to_text().encode("utf-8")
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    return (MAGIC + struct.pack("<I", VERSION)
            + struct.pack("<I", len(cfg)) + cfg
            + _table(ckpt.params) + _table(ckpt.buffers)
            + struct.pack("<Q", ckpt.iteration)
            + struct.pack("<I", len(rng)) + rng)


def loads(buf, path="<checkpoint>"):
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated while reading {what}", path, pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)", path, 0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", path, 4)
    (n,) = struct.unpack("<I", take(4, "config length"))
    cfg = parse_config(take(n, "config").decode("utf-8"), source=f"{path}[config]")

    def table(what):
        nonlocal pos
        (count,) = struct.unpack("<I", take(4, f"{what} count"))
        out = {}
        for _ in range(count):
            (ln,) = struct.unpack("<I", take(4, f"{what} name length"))
            name = take(ln, f"{what} name").decode("utf-8")
            try:
                arr, pos = tensor.loads(buf, pos)
            except tensor.TensorFormatError as e:
                raise CheckpointError(f"{what} {name!r}: {e}", path, e.offset) from None
            out[name] = arr
        return out

    params = table("parameter")
    buffers = table("buffer")
    (iteration,) = struct.unpack("<Q", take(8, "iteration"))
    (n,) = struct.unpack("<I", take(4, "rng length"))
    rng_state = json.loads(take(n, "rng state").decode("utf-8"))
    return Checkpoint(cfg, params, buffers, iteration, rng_state)


def save(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as e:
        raise CheckpointError(str(e), str(path)) from None
    return loads(buf, str(path))
