import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posinv.kernels import NEG_INF, NumericError, ShapeError, matmul, rms_norm, row_softmax, swiglu


def f32(x):
    return np.asarray(x, dtype=np.float32)


class TestMatmul:
    def test_identity(self):
        out = matmul(f32([[1, 0], [0, 1]]), f32([[3, 4], [5, 6]]))
        assert np.array_equal(out, f32([[3, 4], [5, 6]]))

    def test_scalar(self):
        assert matmul(f32([[2]]), f32([[3]]))[0, 0] == 6

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 7)).astype(np.float32)
        b = rng.normal(size=(7, 3)).astype(np.float32)
        ref = np.zeros((5, 3), dtype=np.float64)
        for i in range(5):
            for j in range(3):
                for r in range(7):
                    ref[i, j] += float(a[i, r]) * float(b[r, j])
        assert np.max(np.abs(matmul(a, b) - ref)) < 1e-6

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(f32([[1, 2]]), f32([[1, 2]]))

    def test_dtype_error(self):
        with pytest.raises(ShapeError):
            matmul(f32([[1]]), np.asarray([[1.0]], dtype=np.float64))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(8, 8)).astype(np.float32)
        b = rng.normal(size=(8, 8)).astype(np.float32)
        assert np.array_equal(matmul(a, b), matmul(a, b))


class TestRowSoftmax:
    def test_uniform_logits(self):
        out = row_softmax(f32([[0, 0, 0]]), 1.0)
        assert np.allclose(out, [[1 / 3] * 3], atol=1e-7)

    def test_single_visible_key(self):
        out = row_softmax(np.asarray([[NEG_INF, 0.0]], dtype=np.float32), 1.0)
        assert out[0, 0] == 0.0
        assert out[0, 1] == 1.0

    def test_float64_reference(self):
        row = np.asarray([[1.0, 2.0, 3.0]])
        e = np.exp(row - 3.0)
        ref = e / e.sum()
        assert np.max(np.abs(row_softmax(row, 1.0) - ref)) < 1e-9

    def test_fully_masked_row(self):
        with pytest.raises(NumericError, match="fully masked"):
            row_softmax(np.asarray([[NEG_INF, NEG_INF]], dtype=np.float32), 1.0)

    @given(
        st.lists(st.floats(-50, 50, width=32), min_size=1, max_size=8),
        st.floats(0.01, 4.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_rows_normalized(self, row, scale):
        out = row_softmax(f32([row]), scale)
        assert (out >= 0).all()
        assert abs(float(out.sum()) - 1.0) < 1e-6


class TestRmsNorm:
    def test_zero_row(self):
        out = rms_norm(f32([[0, 0, 0, 0]]), f32([1, 1, 1, 1]), 1e-5)
        assert np.array_equal(out, np.zeros((1, 4), dtype=np.float32))

    def test_constant_row(self):
        c, eps = 2.5, 1e-5
        out = rms_norm(f32([[c] * 4]), f32([1] * 4), eps)
        assert np.allclose(out, c / np.sqrt(c * c + eps), atol=1e-6)

    def test_float64_reference(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 8)).astype(np.float32)
        g = rng.normal(size=8).astype(np.float32)
        x64, g64 = x.astype(np.float64), g.astype(np.float64)
        ref = x64 / np.sqrt(np.mean(x64**2, axis=-1, keepdims=True) + 1e-5) * g64
        assert np.max(np.abs(rms_norm(x, g, 1e-5) - ref)) < 1e-6

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            rms_norm(f32([[1.0]]), f32([1.0]), 0.0)


class TestSwiglu:
    def test_zero_gate(self):
        out = swiglu(f32([[0, 0]]), f32([[5, -3]]))
        assert np.array_equal(out, np.zeros((1, 2), dtype=np.float32))

    def test_large_gate_asymptote(self):
        u = f32([[0.7]])
        out = swiglu(f32([[20.0]]), u)
        assert abs(float(out[0, 0]) - 20.0 * 0.7) < 1e-4

    def test_float64_reference(self):
        rng = np.random.default_rng(3)
        g = rng.normal(size=(2, 6)).astype(np.float32)
        u = rng.normal(size=(2, 6)).astype(np.float32)
        g64, u64 = g.astype(np.float64), u.astype(np.float64)
        ref = g64 / (1 + np.exp(-g64)) * u64
        assert np.max(np.abs(swiglu(g, u) - ref)) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            swiglu(f32([[1, 2]]), f32([[1, 2, 3]]))
