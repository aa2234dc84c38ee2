import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfa import embedding as emb
from kfa.embedding import (
    EmbeddingCoeffs,
    SampleTable,
    conditional_embeddings,
    group_difference,
    is_zero_element,
    mean_embedding,
    mmd2_vstat,
    rkhs_inner,
    rkhs_norm,
    witness_eval,
)
from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import KernelSpec, cross_gram, gram
from kfa.synthetic import PopulationSpec, gen_population, mmd_oracle

from conftest import random_table


def four_cell_table():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return SampleTable(X, [0, 0, 1, 1], ["a", "b", "a", "b"])


class TestSampleTable:
    def test_validation(self):
        with pytest.raises(InputError):
            SampleTable(np.zeros((2, 1)), [0, 2], ["a", "b"])
        with pytest.raises(InputError):
            SampleTable(np.zeros((2, 1)), [0, 1], ["a", "c"])
        with pytest.raises(InputError):
            SampleTable(np.zeros((2, 1)), [0, 1], ["a", "b"], score=[0.5, 1.5])
        with pytest.raises(InputError):
            SampleTable(np.zeros((0, 1)), [], [])

    def test_take_keeps_ids(self, table):
        sub = table.take([5, 2])
        assert list(sub.ids) == [5, 2]
        np.testing.assert_array_equal(sub.features, table.features[[5, 2]])


class TestMeanEmbedding:
    def test_all_rows(self, table):
        e = mean_embedding(table)
        np.testing.assert_allclose(e.weights, 1.0 / table.n)
        assert e.kind == "mean"

    def test_singleton(self, table):
        e = mean_embedding(table, np.array([4]))
        assert e.weights[4] == 1.0 and e.weights.sum() == 1.0

    def test_cell(self):
        X = np.arange(6.0)
        t = SampleTable(X, [1, 1, 1, 0, 0, 1], ["a", "a", "a", "a", "b", "b"])
        e = mean_embedding(t, (1, "a"))
        np.testing.assert_allclose(e.weights, [1 / 3, 1 / 3, 1 / 3, 0, 0, 0])

    def test_empty_cell_is_named(self):
        t = SampleTable(np.zeros(3), [0, 0, 1], ["a", "b", "a"])
        with pytest.raises(DegenerateDataError, match=r"y=1, g=b"):
            mean_embedding(t, (1, "b"))

    def test_callable_subset(self, table):
        e = mean_embedding(table, lambda t: t.y == 1)
        assert e.weights[table.y == 1].sum() == pytest.approx(1.0)


class TestCoeffs:
    def test_kinds(self):
        a = EmbeddingCoeffs([0.5, 0.5, 0.0])
        b = EmbeddingCoeffs([0.0, 0.0, 1.0])
        assert (a - b).kind == "difference"
        assert (2 * a).kind == "combination"
        with pytest.raises(InputError):
            EmbeddingCoeffs([0.3, 0.3], "mean")
        with pytest.raises(InputError):
            EmbeddingCoeffs([1.0, 0.0], "difference")


class TestConditional:
    def test_point_masses(self):
        ce = conditional_embeddings(four_cell_table())
        for y in (0, 1):
            for g in ("a", "b"):
                w = ce.cell(y, g).weights
                assert sorted(w) == [0, 0, 0, 1]

    def test_total_expectation(self, table):
        ce = conditional_embeddings(table)
        for g, p in (("a", ce.p_a), ("b", ce.p_b)):
            mix = p * ce.cell(1, g).weights + (1 - p) * ce.cell(0, g).weights
            np.testing.assert_allclose(getattr(ce, f"mu_{g}").weights, mix, atol=1e-15)

    def test_identical_groups_zero_norm(self, rng):
        X = rng.standard_normal((10, 2))
        t = SampleTable(np.vstack([X, X]), np.tile([0, 1], 10), ["a"] * 10 + ["b"] * 10)
        d = group_difference(t)
        K = gram(KernelSpec("rbf", 1.0), t.features)
        assert np.abs(d.weights).sum() > 0
        assert rkhs_norm(d, K) < 1e-7
        assert is_zero_element(d, K)

    def test_degenerate_base_rate_flag(self):
        t = SampleTable(np.zeros(4), [0, 1, 1, 1], ["a", "a", "b", "b"])
        with pytest.raises(DegenerateDataError):
            conditional_embeddings(t)  # cell (0, b) empty
        t = SampleTable(np.zeros(6), [0, 1, 0, 1, 1, 1], ["a", "a", "b", "b", "b", "b"])
        assert not conditional_embeddings(t).degenerate_base_rate

    def test_adult_like_base_rates(self):
        spec = PopulationSpec.shifted(dim=2, p_a=0.306, p_b=0.109, n=40000, seed=3)
        ce = conditional_embeddings(gen_population(spec))
        assert ce.delta_p == pytest.approx(0.197, abs=0.015)


class TestInnerAndNorm:
    def test_diagonal(self, table):
        K = gram(KernelSpec("rbf", 1.0), table.features)
        e = mean_embedding(table, np.array([3]))
        assert rkhs_inner(e, e, K) == 1.0

    def test_orthogonal_linear(self):
        K = gram(KernelSpec("linear"), np.eye(3))
        assert rkhs_inner([1, 0, 0], [0, 1, 1], K) == 0.0

    def test_size_mismatch(self):
        with pytest.raises(InputError):
            rkhs_inner([1.0], [1.0, 0.0], np.eye(2))

    def test_zero_weights(self):
        assert rkhs_norm(np.zeros(3), np.eye(3)) == 0.0

    def test_point_mass_difference(self):
        spec = KernelSpec("rbf", 0.8)
        X = np.array([[0.0], [1.1]])
        K = gram(spec, X)
        assert rkhs_norm([1, -1], K) == pytest.approx(math.sqrt(2 - 2 * K.values[0, 1]), abs=1e-14)

    def test_mean_embedding_norm_in_unit_interval(self, table):
        K = gram(KernelSpec("rbf", 1.0), table.features)
        assert 0 < rkhs_norm(mean_embedding(table), K) <= 1

    def test_clamp_counter(self):
        emb.reset_diagnostics()
        assert rkhs_norm([1.0], np.array([[-1e-18]])) == 0.0
        assert emb.diagnostics["clamped_quadratic_forms"] == 1

    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_bilinearity(self, seed, a, b):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((12, 2))
        K = gram(KernelSpec("laplace", 1.0), X)
        al, be, ga = rng.standard_normal((3, 12))
        lhs = rkhs_inner(a * al + b * be, ga, K)
        rhs = a * rkhs_inner(al, ga, K) + b * rkhs_inner(be, ga, K)
        assert lhs == pytest.approx(rhs, abs=1e-10)
        assert rkhs_inner(al, be, K) == pytest.approx(rkhs_inner(be, al, K), abs=1e-12)


class TestMMD:
    def test_same_sets(self, table):
        K = gram(KernelSpec("rbf", 1.0), table.features)
        assert abs(mmd2_vstat(np.arange(10), np.arange(10), K)) <= 1e-12

    def test_singletons_closed_form(self):
        sigma = 0.7
        X = np.array([[0.0], [math.sqrt(2) * sigma]])
        K = gram(KernelSpec("rbf", sigma), X)
        assert mmd2_vstat([0], [1], K) == pytest.approx(2 - 2 * math.exp(-1), abs=1e-12)
        assert mmd2_vstat([0], [1], K) == pytest.approx(1.2642411, abs=1e-7)

    def test_oracle_agreement(self, rng):
        X = rng.standard_normal((40, 3))
        spec = KernelSpec("rbf", 1.2)
        A, B = np.arange(20), np.arange(20, 40)
        assert abs(mmd2_vstat(A, B, gram(spec, X)) - mmd_oracle(A, B, spec, X)) <= 1e-12

    def test_equals_delta_quadratic_form(self, table):
        K = gram(KernelSpec("rbf", 1.0), table.features)
        d = group_difference(table)
        v = mmd2_vstat(table.g == "a", table.g == "b", K)
        assert v == pytest.approx(rkhs_inner(d, d, K), abs=1e-10)

    def test_symmetric(self, table):
        K = gram(KernelSpec("laplace", 1.0), table.features)
        a, b = np.arange(0, 25), np.arange(25, 60)
        assert mmd2_vstat(a, b, K) == pytest.approx(mmd2_vstat(b, a, K), abs=1e-15)

    def test_empty(self):
        with pytest.raises(InputError):
            mmd2_vstat([], [0], np.eye(2))


class TestWitness:
    def test_mean_gap_equals_mmd(self, table):
        spec = KernelSpec("rbf", 1.0)
        K = gram(spec, table.features)
        pa = mean_embedding(table, (None, "a"))
        pb = mean_embedding(table, (None, "b"))
        f = witness_eval(pa, pb, K, cross_gram(spec, table.features, table.features))
        gap = f[table.g == "a"].mean() - f[table.g == "b"].mean()
        assert gap == pytest.approx(rkhs_norm(pa - pb, K), abs=1e-10)

    def test_coincident_embeddings(self, rng):
        X = rng.standard_normal((6, 1))
        t = SampleTable(np.vstack([X, X[::-1]]), np.zeros(12, dtype=int), ["a"] * 6 + ["b"] * 6)
        K = gram(KernelSpec("rbf", 1.0), t.features)
        with pytest.raises(DegenerateDataError, match="witness undefined"):
            witness_eval(mean_embedding(t, (None, "a")), mean_embedding(t, (None, "b")), K, K.values)

    def test_sign(self, rng):
        X = np.concatenate([rng.normal(-2, 0.5, 50), rng.normal(2, 0.5, 50)])[:, None]
        t = SampleTable(X, np.zeros(100, dtype=int), ["a"] * 50 + ["b"] * 50)
        spec = KernelSpec("rbf", 1.0)
        K = gram(spec, X)
        f = witness_eval(mean_embedding(t, (None, "a")), mean_embedding(t, (None, "b")), K,
                         cross_gram(spec, X, np.array([[-2.0], [2.0]])))
        assert f[0] > 0 > f[1]


class TestLinearReduction:
    def test_delta_norm_is_mean_gap(self, rng):
        t = random_table(rng, n=80, d=4)
        K = gram(KernelSpec("linear"), t.features)
        gap = t.features[t.g == "a"].mean(0) - t.features[t.g == "b"].mean(0)
        assert rkhs_norm(group_difference(t), K) == pytest.approx(np.linalg.norm(gap), abs=1e-10)
