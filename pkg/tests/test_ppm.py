import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sadet import ppm


class TestCodec:
    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
    def test_roundtrip(self, pixels):
        np.testing.assert_array_equal(ppm.decode_ppm(ppm.encode_ppm(pixels)), pixels)

    def test_header_with_comments(self):
        body = bytes(range(12))
        buf = b"P6\n# made by hand\n2 2\n# another\n255\n" + body
        out = ppm.decode_ppm(buf)
        assert out.shape == (2, 2, 3)
        assert out.reshape(-1).tolist() == list(body)

    def test_bad_magic(self):
        with pytest.raises(ppm.PPMError) as err:
            ppm.decode_ppm(b"P3\n1 1\n255\n0 0 0")
        assert err.value.offset == 0

    def test_bad_maxval_offset(self):
        with pytest.raises(ppm.PPMError) as err:
            ppm.decode_ppm(b"P6\n1 1\n65535\n" + bytes(6))
        assert err.value.offset == 7

    def test_truncated(self):
        with pytest.raises(ppm.PPMError, match="truncated pixel data"):
            ppm.decode_ppm(b"P6\n2 2\n255\n" + bytes(5))

    def test_bad_field(self):
        with pytest.raises(ppm.PPMError) as err:
            ppm.decode_ppm(b"P6\nx 2\n255\n")
        assert err.value.offset == 3

    def test_encode_rejects_float(self):
        with pytest.raises(ValueError):
            ppm.encode_ppm(np.zeros((2, 2, 3)))

    def test_file_roundtrip(self, tmp_path):
        px = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        ppm.write_ppm(tmp_path / "a.ppm", px)
        np.testing.assert_array_equal(ppm.read_ppm(tmp_path / "a.ppm"), px)


class TestConversions:
    def test_pixels_roundtrip(self):
        img = np.round(np.random.default_rng(0).random((3, 4, 5)) * 255) / 255
        np.testing.assert_allclose(ppm.from_pixels(ppm.to_pixels(img)), img, atol=1e-12)

    def test_draw_boxes(self):
        px = np.zeros((10, 10, 3), np.uint8)
        out = ppm.draw_boxes(px, [[5.0, 5.0, 4.0, 4.0]])
        green = np.all(out == [0, 255, 0], axis=-1)
        # outline of the 4x4 square spanning pixels 3..6
        expected = np.zeros((10, 10), bool)
        expected[3, 3:7] = expected[6, 3:7] = True
        expected[3:7, 3] = expected[3:7, 6] = True
        np.testing.assert_array_equal(green, expected)
        assert not px.any()

    def test_draw_clips_to_image(self):
        out = ppm.draw_boxes(np.zeros((5, 5, 3), np.uint8), [[0.0, 0.0, 20.0, 20.0]])
        assert np.all(out[0, :, 1] == 255)
