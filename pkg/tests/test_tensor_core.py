import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from token_insight import tensor_core as tc

from oracles import direct_layer_norm_slice, naive_matmul

finite_f32 = st.floats(
    min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False, width=32
)


class TestMatmul:
    def test_identity(self):
        a = tc.as_tensor([[1, 2], [3, 4]])
        assert np.array_equal(tc.matmul(np.eye(2, dtype=np.float32), a), a)

    def test_hand_case(self):
        out = tc.matmul([[1, 2], [3, 4]], [[5, 6], [7, 8]])
        assert np.array_equal(out, np.array([[19, 22], [43, 50]], dtype=np.float32))

    def test_random_matches_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((7, 5)).astype(np.float32)
        b = rng.standard_normal((5, 3)).astype(np.float32)
        assert np.max(np.abs(tc.matmul(a, b) - naive_matmul(a, b))) < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            tc.matmul(np.zeros((2, 3), np.float32), np.zeros((2, 2), np.float32))

    def test_bit_identical_repeated_and_threaded(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((33, 47)).astype(np.float32)
        b = rng.standard_normal((47, 29)).astype(np.float32)
        first = tc.matmul(a, b)
        again = tc.matmul(a, b)
        assert first.tobytes() == again.tobytes()
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda _: tc.matmul(a, b).tobytes(), range(16)))
        assert all(r == first.tobytes() for r in results)


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(tc.softmax_rows([0.0, 0.0]), [0.5, 0.5], atol=1e-7)

    def test_large_values_stable(self):
        out = tc.softmax_rows([1000.0, 1000.0])
        assert np.all(np.isfinite(out))
        assert np.allclose(out, [0.5, 0.5], atol=1e-7)

    def test_closed_form(self):
        out = tc.softmax_rows([math.log(2.0), 0.0])
        assert np.allclose(out, [2 / 3, 1 / 3], atol=1e-6)

    @settings(max_examples=60)
    @given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                  elements=finite_f32))
    def test_rows_sum_to_one(self, x):
        out = tc.softmax_rows(x)
        assert np.all(np.abs(out.sum(axis=-1) - 1.0) < 1e-6)

    @settings(max_examples=60)
    @given(arrays(np.float32, st.integers(1, 8), elements=st.floats(-10, 10, width=32)),
           st.floats(-5, 5, width=32))
    def test_shift_invariance(self, x, c):
        a = tc.softmax_rows(x)
        b = tc.softmax_rows(x + np.float32(c))
        assert np.max(np.abs(a - b)) < 1e-6

    def test_rejects_empty_last_axis(self):
        with pytest.raises(ValueError):
            tc.softmax_rows(np.zeros((2, 0), np.float32))


class TestLayerNorm:
    def test_already_normalized(self):
        out = tc.layer_norm([1.0, -1.0], [1.0, 1.0], [0.0, 0.0], eps=1e-12)
        assert np.allclose(out, [1.0, -1.0], atol=1e-5)

    def test_constant_slice_collapses_to_beta(self):
        out = tc.layer_norm([3.0, 3.0, 3.0, 3.0], np.ones(4, np.float32),
                            np.full(4, 0.25, np.float32))
        assert np.allclose(out, 0.25, atol=1e-6)

    def test_random_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(16).astype(np.float32)
        gamma = rng.standard_normal(16).astype(np.float32)
        beta = rng.standard_normal(16).astype(np.float32)
        want = direct_layer_norm_slice(x, gamma, beta, 1e-6)
        assert np.max(np.abs(tc.layer_norm(x, gamma, beta) - want)) < 1e-6

    @settings(max_examples=40)
    @given(arrays(np.float32, st.tuples(st.integers(1, 3), st.just(16)),
                  elements=st.floats(-50, 50, width=32)))
    def test_unit_stats(self, x):
        # only meaningful when the slice variance dwarfs eps
        if np.any(x.var(axis=-1) < 1e-2):
            return
        out = tc.layer_norm(x, np.ones(16, np.float32), np.zeros(16, np.float32))
        assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
        assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            tc.layer_norm([1.0, 2.0], [1.0, 1.0], [0.0, 0.0], eps=0.0)


class TestGelu:
    def test_zero(self):
        assert tc.gelu(np.float32(0.0)) == 0.0

    def test_saturation(self):
        assert abs(float(tc.gelu(np.float32(10.0))) - 10.0) < 1e-6

    def test_erf_value_at_one(self):
        # 1 * Phi(1) with Phi from the erf definition
        want = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(float(tc.gelu(np.float32(1.0))) - want) < 1e-6
        assert abs(float(tc.gelu(np.float32(1.0))) - 0.841345) < 1e-6

    def test_odd_negative_tail(self):
        assert abs(float(tc.gelu(np.float32(-10.0)))) < 1e-6


class TestLinear:
    def test_identity_weight(self):
        x = tc.as_tensor([[1.0, 2.0], [3.0, 4.0]])
        out = tc.linear(x, np.eye(2, dtype=np.float32), np.zeros(2, np.float32))
        assert np.array_equal(out, x)

    def test_hand_case(self):
        out = tc.linear([1.0, 1.0], [[2.0, 3.0]], [1.0])
        assert np.allclose(out, [6.0])

    def test_matches_matmul_plus_bias(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((3, 6)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        want = tc.matmul(x, np.ascontiguousarray(w.T)) + b
        assert np.max(np.abs(tc.linear(x, w, b) - want)) < 1e-6

    def test_leading_dims(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((2, 5, 6)).astype(np.float32)
        w = rng.standard_normal((3, 6)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        out = tc.linear(x, w, b)
        assert out.shape == (2, 5, 3)
        assert np.allclose(out[1], tc.linear(x[1], w, b))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            tc.linear(np.zeros((2, 4), np.float32), np.zeros((3, 6), np.float32),
                      np.zeros(3, np.float32))


def test_outputs_stay_finite():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((5, 8)).astype(np.float32) * 100
    for out in (
        tc.softmax_rows(x),
        tc.layer_norm(x, np.ones(8, np.float32), np.zeros(8, np.float32)),
        tc.gelu(x),
    ):
        assert np.all(np.isfinite(out))
