import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sadet import tensor


class TestAlloc:
    def test_filled(self):
        t = tensor.alloc((2, 3), fill=1.5, dtype=np.float32)
        assert t.shape == (2, 3)
        assert t.dtype == np.float32
        assert np.all(t == 1.5)

    @pytest.mark.parametrize("shape", [(), (0,), (3, 0), (-1, 2)])
    def test_bad_shapes(self, shape):
        with pytest.raises(tensor.ShapeError):
            tensor.alloc(shape)


class TestElementwise:
    def test_ops(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([4.0, 5.0, 6.0])
        np.testing.assert_array_equal(tensor.elementwise("add", a, b), [5, 7, 9])
        np.testing.assert_array_equal(tensor.elementwise("sub", a, b), [-3, -3, -3])
        np.testing.assert_array_equal(tensor.elementwise("mul", a, b), [4, 10, 18])
        np.testing.assert_array_equal(tensor.elementwise("scale", a, 2.0), [2, 4, 6])

    def test_shape_mismatch(self):
        with pytest.raises(tensor.ShapeError):
            tensor.elementwise("add", np.zeros(3), np.zeros(4))

    def test_no_broadcasting(self):
        with pytest.raises(tensor.ShapeError):
            tensor.elementwise("add", np.zeros((2, 3)), np.zeros(3))

    def test_scale_needs_scalar(self):
        with pytest.raises(tensor.ShapeError):
            tensor.elementwise("scale", np.zeros(3), np.ones(3))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            tensor.elementwise("div", np.zeros(3), np.zeros(3))

    def test_scale_keeps_float32(self):
        out = tensor.elementwise("scale", np.ones(3, np.float32), 0.1)
        assert out.dtype == np.float32


class TestMatvec:
    def test_ascending_order_sum(self):
        k = np.array([1e16, 1.0, -1e16, 1.0])
        v = np.ones(4)
        # left-to-right: (1e16 + 1) - 1e16 + 1 == 0 + 1 in float64
        expected = 0.0
        for a, b in zip(k, v):
            expected = expected + a * b
        assert tensor.matvec_accumulate(k, v) == expected

    def test_accumulator(self):
        assert tensor.matvec_accumulate([1.0, 2.0], [3.0, 4.0], acc=1.0) == 12.0

    def test_length_mismatch(self):
        with pytest.raises(tensor.ShapeError):
            tensor.matvec_accumulate([1.0], [1.0, 2.0])


class TestFinite:
    def test_passes_through(self):
        a = np.ones(3)
        assert tensor.check_finite("a", a) is a

    def test_counts(self):
        with pytest.raises(tensor.NonFiniteError) as err:
            tensor.check_finite("grad", np.array([1.0, np.nan, np.inf]))
        assert err.value.count == 2
        assert "grad" in str(err.value)


class TestDtype:
    @pytest.mark.parametrize("p,dt", [(32, np.float32), (4, np.float32), (64, np.float64), (8, np.float64)])
    def test_map(self, p, dt):
        assert tensor.dtype_for(p) is dt

    def test_bad(self):
        with pytest.raises(ValueError):
            tensor.dtype_for(16)


class TestDump:
    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(st.sampled_from([np.float32, np.float64]),
                      hnp.array_shapes(min_dims=1, max_dims=4, max_side=5)))
    def test_roundtrip(self, arr):
        buf = tensor.dumps(arr)
        back, end = tensor.loads(buf)
        assert end == len(buf)
        assert back.dtype == arr.dtype
        assert back.shape == arr.shape
        np.testing.assert_array_equal(back.view(np.uint8), arr.view(np.uint8))

    def test_layout(self):
        arr = np.array([[1.0, 2.0]], dtype=np.float32)
        buf = tensor.dumps(arr)
        assert buf[:4] == b"SADT"
        version, tag, rank = struct.unpack_from("<BBI", buf, 4)
        assert (version, tag, rank) == (1, 4, 2)
        assert struct.unpack_from("<2I", buf, 10) == (1, 2)
        assert np.frombuffer(buf[18:], "<f4").tolist() == [1.0, 2.0]

    def test_concatenated(self):
        a, b = np.arange(3.0), np.ones((2, 2), np.float32)
        buf = tensor.dumps(a) + tensor.dumps(b)
        x, off = tensor.loads(buf)
        y, end = tensor.loads(buf, off)
        np.testing.assert_array_equal(x, a)
        np.testing.assert_array_equal(y, b)
        assert end == len(buf)

    def test_file_helpers(self):
        fh = io.BytesIO()
        tensor.write(fh, np.eye(2))
        fh.seek(0)
        np.testing.assert_array_equal(tensor.read(fh), np.eye(2))

    def test_bad_magic(self):
        with pytest.raises(tensor.TensorFormatError) as err:
            tensor.loads(b"XXXX" + bytes(20))
        assert err.value.offset == 0

    def test_truncated_data_reports_offset(self):
        buf = tensor.dumps(np.arange(4.0))
        with pytest.raises(tensor.TensorFormatError) as err:
            tensor.loads(buf[:-3])
        assert err.value.offset == 14

    def test_bad_tag(self):
        buf = bytearray(tensor.dumps(np.arange(2.0)))
        buf[5] = 2
        with pytest.raises(tensor.TensorFormatError) as err:
            tensor.loads(bytes(buf))
        assert err.value.offset == 5

    def test_rejects_ints(self):
        with pytest.raises(TypeError):
            tensor.dumps(np.arange(3))
