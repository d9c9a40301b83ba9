import numpy as np
import pytest

from sadet.network import checkpoint as ckpt_io
from sadet.network.config import ConfigError, TrainConfig, apply_overrides, load_config, parse_config
from sadet.network.optim import clip_by_global_norm, init_buffers, sgd_step


class TestConfig:
    def test_defaults_validate(self):
        cfg = TrainConfig()
        assert cfg.n_anchors_per_cell == 3
        assert cfg.precision == 32

    def test_text_roundtrip(self):
        cfg = TrainConfig(alpha=0.25, aspect_ratios=(1.5, 7.0), anchor_conv=False, seed=9)
        assert parse_config(cfg.to_text()) == cfg

    def test_parse_comments_and_blank_lines(self):
        cfg = parse_config("# run\n\nalpha = 0.75  # blend\nflip = no\n")
        assert cfg.alpha == 0.75 and cfg.flip is False

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("alpha = 0.5\nalhpa = 0.2\n", source="run.cfg")
        assert err.value.line == 2 and err.value.key == "alhpa"
        assert "run.cfg:2" in str(err.value)

    def test_bad_value(self):
        with pytest.raises(ConfigError) as err:
            parse_config("iterations = many\n")
        assert err.value.key == "iterations"

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("alpha 0.5\n")

    @pytest.mark.parametrize("text", ["alpha = 2", "precision = 16", "momentum = 1.0",
                                      "aspect_ratios = ", "background = plaid", "max_width = 999"])
    def test_validation(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_overrides(self):
        cfg = apply_overrides(TrainConfig(), ["model.alpha=0.1", "seed=4", "scale_grad_conv=true"])
        assert cfg.alpha == 0.1 and cfg.seed == 4 and cfg.scale_grad_conv is True

    def test_override_errors(self):
        with pytest.raises(ConfigError):
            apply_overrides(TrainConfig(), ["alpha"])
        with pytest.raises(ConfigError):
            apply_overrides(TrainConfig(), ["nope=1"])

    def test_load(self, tmp_path):
        (tmp_path / "c.cfg").write_text("beta = 2.0\n")
        assert load_config(tmp_path / "c.cfg").beta == 2.0

    def test_schedule(self):
        cfg = TrainConfig(lr=1e-3, lr_decayed=1e-4, lr_decay_iter=10, warmup_iters=4)
        assert cfg.lr_at(0) == pytest.approx(2.5e-4)
        assert cfg.lr_at(3) == pytest.approx(1e-3)
        assert cfg.lr_at(9) == 1e-3
        assert cfg.lr_at(10) == 1e-4


class TestOptimizer:
    def test_momentum_update(self):
        w = {"a": np.array([1.0, 2.0])}
        g = {"a": np.array([0.5, -1.0])}
        buf = init_buffers(w)
        sgd_step(w, g, buf, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(w["a"], [0.95, 2.1])
        sgd_step(w, g, buf, lr=0.1, momentum=0.9, weight_decay=0.0)
        # v = 0.9 * g + g
        np.testing.assert_allclose(buf["a"], [0.95, -1.9])
        np.testing.assert_allclose(w["a"], [0.855, 2.29])

    def test_weight_decay(self):
        w = {"a": np.array([2.0])}
        sgd_step(w, {"a": np.zeros(1)}, init_buffers(w), lr=0.5, momentum=0.0, weight_decay=0.1)
        np.testing.assert_allclose(w["a"], [1.9])

    def test_lr_mult(self):
        w = {"scale.w": np.array([1.0]), "conv1.w": np.array([1.0])}
        g = {k: np.ones(1) for k in w}
        sgd_step(w, g, init_buffers(w), lr=0.1, momentum=0.0, weight_decay=0.0, lr_mult={"scale.": 0.5})
        assert w["scale.w"][0] == pytest.approx(0.95) and w["conv1.w"][0] == pytest.approx(0.9)

    def test_shape_mismatch(self):
        w = {"a": np.zeros(2)}
        with pytest.raises(ValueError):
            sgd_step(w, {"a": np.zeros(3)}, init_buffers(w), 0.1, 0.9, 0.0)

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
        assert g["a"][0] == pytest.approx(0.6) and g["b"][0] == pytest.approx(0.8)

    def test_clip_disabled(self):
        g = {"a": np.array([3.0])}
        clip_by_global_norm(g, 0.0)
        assert g["a"][0] == 3.0


class TestCheckpoint:
    def make(self):
        rng = np.random.default_rng(0)
        params = {"w": rng.standard_normal((2, 3)), "b": rng.standard_normal(2).astype(np.float32)}
        state = np.random.default_rng(5).bit_generator.state
        return ckpt_io.Checkpoint(TrainConfig(alpha=0.3), params, init_buffers(params), 17, state)

    def test_roundtrip(self, tmp_path):
        ck = self.make()
        ckpt_io.save(tmp_path / "c.sadc", ck)
        back = ckpt_io.load(tmp_path / "c.sadc")
        assert back.config == ck.config and back.iteration == 17
        assert back.rng_state == ck.rng_state
        for k in ck.params:
            np.testing.assert_array_equal(back.params[k], ck.params[k])
            assert back.params[k].dtype == ck.params[k].dtype

    def test_bytes_stable(self):
        assert ckpt_io.dumps(self.make()) == ckpt_io.dumps(self.make())

    def test_bad_magic(self):
        with pytest.raises(ckpt_io.CheckpointError) as err:
            ckpt_io.loads(b"NOPE" + bytes(8))
        assert err.value.offset == 0

    def test_truncated(self):
        buf = ckpt_io.dumps(self.make())
        with pytest.raises(ckpt_io.CheckpointError) as err:
            ckpt_io.loads(buf[:-10])
        assert err.value.offset is not None

    def test_corrupt_tensor_names_parameter(self):
        buf = bytearray(ckpt_io.dumps(self.make()))
        pos = buf.index(b"SADT")
        buf[pos:pos + 4] = b"XXXX"
        with pytest.raises(ckpt_io.CheckpointError, match="parameter 'w'") as err:
            ckpt_io.loads(bytes(buf))
        assert err.value.offset == pos

    def test_missing_file(self, tmp_path):
        with pytest.raises(ckpt_io.CheckpointError):
            ckpt_io.load(tmp_path / "none.sadc")
