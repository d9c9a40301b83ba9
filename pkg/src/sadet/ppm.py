"""Binary PPM (P6, 8-bit) reading and writing."""

import numpy as np


class PPMError(ValueError):
    def __init__(self, path, offset, msg):
        super().__init__(f"{path}: byte {offset}: {msg}")
        self.path = path
        self.offset = offset


def encode_ppm(pixels):
    """Serialise an ``(H, W, 3)`` uint8 array as P6 bytes."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 array")
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


def decode_ppm(buf, path="<bytes>"):
    pos = 0
    tokens = []
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos] in b" \t\r\n":
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise PPMError(path, pos, "truncated header")
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n#":
            pos += 1
        tokens.append((start, buf[start:pos]))
    start, magic = tokens[0]
    if magic != b"P6":
        raise PPMError(path, start, f"unsupported magic {magic!r} (only P6)")
    vals = []
    for start, tok in tokens[1:]:
        try:
            vals.append(int(tok))
        except ValueError:
            raise PPMError(path, start, f"bad header field {tok!r}") from None
    width, height, maxval = vals
    if width < 1 or height < 1:
        raise PPMError(path, tokens[1][0], f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise PPMError(path, tokens[3][0], f"only maxval 255 is supported, got {maxval}")
    if pos >= n:
        raise PPMError(path, pos, "missing whitespace after header")
    pos += 1
    need = width * height * 3
    if n - pos < need:
        raise PPMError(path, n, f"truncated pixel data: expected {need} bytes, found {n - pos}")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape(height, width, 3).copy()


def write_ppm(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(pixels))


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read(), path=str(path))


def to_pixels(image):
    """``(3, H, W)`` float image in [0, 1] -> ``(H, W, 3)`` uint8."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255).astype(np.uint8).transpose(1, 2, 0)


def from_pixels(pixels, dtype=np.float64):
    return (np.asarray(pixels).transpose(2, 0, 1) / 255.0).astype(dtype)


def draw_boxes(pixels, boxes, color=(0, 255, 0)):
    """Copy of ``pixels`` with 1-pixel rectangles for center-size ``boxes``."""
    out = np.array(pixels, copy=True)
    H, W = out.shape[:2]
    for x, y, w, h in np.asarray(boxes, dtype=np.float64).reshape(-1, 4):
        x1 = int(np.clip(np.floor(x - w / 2), 0, W - 1))
        x2 = int(np.clip(np.ceil(x + w / 2) - 1, 0, W - 1))
        y1 = int(np.clip(np.floor(y - h / 2), 0, H - 1))
        y2 = int(np.clip(np.ceil(y + h / 2) - 1, 0, H - 1))
        out[y1, x1:x2 + 1] = color
        out[y2, x1:x2 + 1] = color
        out[y1:y2 + 1, x1] = color
        out[y1:y2 + 1, x2] = color
    return out
