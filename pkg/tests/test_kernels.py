import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import (
    KernelSpec,
    _l1dist_numba,
    _l1dist_numpy,
    _sqdist_numba,
    _sqdist_numpy,
    cross_gram,
    eval_kernel,
    gram,
    median_heuristic,
    resolve_spec,
)

points = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 4)), elements=st.floats(-5, 5))


class TestKernelSpec:
    def test_aliases(self):
        assert KernelSpec("gaussian-rbf", 2.0).family == "rbf"
        assert KernelSpec("Laplace", 1.0).family == "laplace"

    @pytest.mark.parametrize("bw", [0.0, -1.0, math.inf, math.nan])
    def test_bad_bandwidth(self, bw):
        with pytest.raises(InputError):
            KernelSpec("rbf", bw)

    def test_linear_ignores_bandwidth(self):
        assert KernelSpec("linear", -3.0).family == "linear"

    def test_unknown_family(self):
        with pytest.raises(InputError):
            KernelSpec("matern", 1.0)

    def test_frozen(self):
        spec = KernelSpec("rbf", 1.0)
        with pytest.raises(AttributeError):
            spec.family = "laplace"


class TestEvalKernel:
    def test_rbf_identity(self):
        assert eval_kernel(KernelSpec("rbf", 0.7), [1.0, 2.0], [1.0, 2.0]) == 1.0

    def test_rbf_hand_value(self):
        # ||x - z||^2 = 2 with sigma = 1
        v = eval_kernel(KernelSpec("rbf", 1.0), [0.0, 0.0], [1.0, 1.0])
        assert v == pytest.approx(math.exp(-1.0), abs=1e-15)
        assert v == pytest.approx(0.3678794, abs=1e-7)

    def test_linear_hand_value(self):
        assert eval_kernel(KernelSpec("linear"), [1, 2], [3, 4]) == 11.0

    def test_laplace_hand_value(self):
        assert eval_kernel(KernelSpec("laplace", 2.0), [0, 0], [1, -1]) == pytest.approx(math.exp(-1.0))

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            eval_kernel(KernelSpec("rbf", 1.0), [1.0], [1.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(InputError):
            eval_kernel(KernelSpec("rbf", 1.0), [math.nan], [1.0])


class TestGram:
    def test_singleton(self):
        np.testing.assert_array_equal(gram(KernelSpec("rbf", 1.0), [[3.0, 1.0]]).values, [[1.0]])

    def test_identical_points(self):
        np.testing.assert_array_equal(gram(KernelSpec("rbf", 1.0), [[1.0], [1.0]]).values, np.ones((2, 2)))

    def test_linear_basis_vectors(self):
        np.testing.assert_array_equal(gram(KernelSpec("linear"), np.eye(3)).values, np.eye(3))

    def test_empty(self):
        with pytest.raises(InputError):
            gram(KernelSpec("rbf", 1.0), np.zeros((0, 2)))

    def test_linear_matches_outer_product(self, rng):
        X = rng.standard_normal((30, 4))
        X -= X.mean(axis=0)
        np.testing.assert_allclose(gram(KernelSpec("linear"), X).values, X @ X.T, atol=1e-12)

    @given(points, st.sampled_from(["rbf", "laplace", "linear"]), st.floats(0.1, 5.0))
    def test_invariants(self, X, fam, bw):
        spec = KernelSpec(fam, bw)
        K = gram(spec, X).values
        assert np.array_equal(K, K.T)
        for i in range(min(3, len(X))):
            for j in range(min(3, len(X))):
                assert K[i, j] == pytest.approx(eval_kernel(spec, X[i], X[j]), rel=1e-12, abs=1e-12)
        if fam != "linear":
            np.testing.assert_array_equal(np.diag(K), 1.0)
            assert np.all(K >= 0) and np.all(K <= 1)
            # strictly positive wherever exp() does not underflow
            D = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1) / (2 * bw**2) if fam == "rbf" else (
                np.abs(X[:, None, :] - X[None, :, :]).sum(-1) / bw)
            assert np.all(K[D < 700] > 0)
            lam = np.linalg.eigvalsh(K)
            assert lam[0] >= -1e-8 * lam[-1]


class TestCrossGram:
    def test_self(self, rng):
        X = rng.standard_normal((7, 2))
        spec = KernelSpec("laplace", 1.3)
        np.testing.assert_allclose(cross_gram(spec, X, X), gram(spec, X).values, atol=1e-15)

    def test_single_pair(self):
        spec = KernelSpec("rbf", 0.5)
        assert cross_gram(spec, [[0.0, 1.0]], [[1.0, 1.0]])[0, 0] == eval_kernel(spec, [0, 1], [1, 1])

    def test_far_points_underflow(self):
        # ||x - z||^2 = 200 sigma^2
        v = cross_gram(KernelSpec("rbf", 1.0), [[0.0]], [[math.sqrt(200.0)]])
        assert v[0, 0] < 1e-40

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            cross_gram(KernelSpec("rbf", 1.0), np.zeros((2, 2)), np.zeros((2, 3)))


class TestMedianHeuristic:
    def test_three_points(self):
        assert median_heuristic(np.array([[0.0], [1.0], [3.0]])) == pytest.approx(2.0)

    def test_two_points(self):
        assert median_heuristic(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(2.0)

    def test_even_count_averages(self):
        # pairs of {0, 1, 2, 4}: 1, 4, 16, 1, 9, 4 -> central values 4 and 4
        assert median_heuristic(np.array([[0.0], [1.0], [2.0], [4.0]])) == pytest.approx(2.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError, match="zero median distance"):
            median_heuristic(np.ones((5, 2)))

    def test_subsample_matches_explicit_oracle(self, rng):
        X = rng.standard_normal((300, 2))
        idx = np.sort(np.random.default_rng(7).choice(300, size=50, replace=False))
        sub = X[idx]
        d = [np.sum((sub[i] - sub[j]) ** 2) for i in range(50) for j in range(i + 1, 50)]
        assert median_heuristic(X, cap=50, seed=7) == pytest.approx(math.sqrt(np.median(d)), rel=1e-12)

    def test_deterministic(self, rng):
        X = rng.standard_normal((300, 2))
        assert median_heuristic(X, cap=40, seed=3) == median_heuristic(X, cap=40, seed=3)

    @given(arrays(np.float64, st.tuples(st.integers(2, 15), st.integers(1, 3)), elements=st.floats(-10, 10)))
    def test_permutation_invariant(self, X):
        try:
            a = median_heuristic(X)
        except DegenerateDataError:
            return
        b = median_heuristic(X[::-1])
        assert a == pytest.approx(b, rel=1e-12)

    def test_resolve_spec(self):
        X = np.array([[0.0], [1.0], [3.0]])
        assert resolve_spec("rbf", "median", X).bandwidth == pytest.approx(2.0)
        assert resolve_spec("laplace", "0.5").bandwidth == 0.5
        with pytest.raises(InputError):
            resolve_spec("rbf", "wide", X)


class TestBackends:
    @given(points, points)
    def test_distance_backends_agree(self, X, Z):
        if X.shape[1] != Z.shape[1]:
            Z = np.resize(Z, (Z.shape[0], X.shape[1]))
        X, Z = np.ascontiguousarray(X), np.ascontiguousarray(Z)
        np.testing.assert_allclose(_sqdist_numba(X, Z), _sqdist_numpy(X, Z), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(_l1dist_numba(X, Z), _l1dist_numpy(X, Z), rtol=1e-12, atol=1e-12)
