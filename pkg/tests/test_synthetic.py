import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kfa.embedding import conditional_embeddings, rkhs_norm
from kfa.errors import InputError
from kfa.kernels import KernelSpec, gram
from kfa.spectral import EllipsoidSpec
from kfa.synthetic import (
    PopulationSpec,
    gen_bridge_instance,
    gen_collapse_encoder,
    gen_kmr_score,
    gen_population,
    gen_separated_classifier,
    mmd_oracle,
)
from kfa.theorems import fair_feature_report


class TestPopulation:
    def test_roundtrip(self):
        spec = PopulationSpec.shifted(dim=3, p_a=0.4, p_b=0.2, n=100, seed=4)
        again = PopulationSpec.from_json(spec.to_json())
        assert again == spec
        assert json.loads(spec.to_json())["p_a"] == 0.4

    def test_validation(self):
        with pytest.raises(InputError):
            PopulationSpec.shifted(p_a=1.0)
        with pytest.raises(InputError):
            PopulationSpec(cells={}, p_a=0.3, p_b=0.2)
        with pytest.raises(InputError):
            PopulationSpec.from_dict({"bogus": 1})

    def test_deterministic(self):
        spec = PopulationSpec.shifted(n=200, seed=9)
        a, b = gen_population(spec), gen_population(spec)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.y, b.y)

    def test_cells_occupied_small_n(self):
        t = gen_population(PopulationSpec.shifted(p_a=0.1, p_b=0.1, n=8, seed=0))
        for y in (0, 1):
            for g in ("a", "b"):
                assert t.cell_mask(y, g).any()

    def test_moments(self):
        spec = PopulationSpec.shifted(dim=2, shift=1.5, class_shift=0.5, p_a=0.4, p_b=0.2, n=60_000, seed=1)
        t = gen_population(spec)
        m = t.features[t.cell_mask(1, "a"), 0].mean()
        assert m == pytest.approx(2.0, abs=0.05)
        assert t.base_rate("a") == pytest.approx(0.4, abs=0.015)
        assert spec.p == pytest.approx(0.3)


class TestClassifier:
    def test_rates(self):
        t = gen_separated_classifier(0.3, 0.1, 0.5, 0.9, 0.2, 100_000, seed=2)
        assert t.yhat[t.y == 1].mean() == pytest.approx(0.9, abs=0.01)
        assert t.yhat[t.y == 0].mean() == pytest.approx(0.2, abs=0.01)

    def test_validation(self):
        with pytest.raises(InputError):
            gen_separated_classifier(0.3, 0.1, 0.5, 1.2, 0.2, 10, seed=0)


class TestKmrScores:
    def test_modes(self):
        t = gen_population(PopulationSpec.shifted(n=300, seed=3))
        np.testing.assert_array_equal(gen_kmr_score(t, "perfect"), t.y)
        s = gen_kmr_score(t, "unbiased-only")
        assert s[t.g == "a"].mean() == pytest.approx(t.base_rate("a"))
        assert set(gen_kmr_score(t, "balanced-only")) == {0.25, 0.75}
        with pytest.raises(InputError):
            gen_kmr_score(t, "other")


knob = st.one_of(st.just(0.0), st.floats(1e-6, 0.5))


class TestCollapseEncoder:
    base = gen_population(PopulationSpec.shifted(n=400, p_a=0.45, p_b=0.2, seed=5))

    @given(knob, knob)
    def test_knobs_exact(self, eps, rho):
        base = self.base
        if eps == 0 and rho == 0:
            return
        enc = gen_collapse_encoder(base, eps, rho, seed=1)
        rep = fair_feature_report(enc, KernelSpec("linear"))
        assert rep.epsilon == pytest.approx(eps, abs=1e-7)
        assert rep.rho_0 == pytest.approx(rho, abs=1e-7)
        assert rep.rho_1 == pytest.approx(rho, abs=1e-7)
        assert rep.signal_b == pytest.approx(rep.bound, rel=1e-6, abs=1e-7)

    def test_zero_knobs_collapse(self):
        base = self.base
        enc = gen_collapse_encoder(base, 0.0, 0.0)
        assert np.all(enc.features == 0)
        with pytest.raises(InputError, match="infeasible"):
            gen_collapse_encoder(base, 0.0, 0.0, signal=0.5)

    def test_signal_above_bound_refused(self):
        base = self.base
        dp = base.base_rate("a") - base.base_rate("b")
        with pytest.raises(InputError, match="infeasible"):
            gen_collapse_encoder(base, 0.1, 0.1, signal=0.2 / abs(dp) + 0.01)

    def test_smaller_signal(self):
        base = self.base
        enc = gen_collapse_encoder(base, 0.15, 0.1, signal=0.5)
        rep = fair_feature_report(enc, KernelSpec("linear"))
        assert rep.signal_b == pytest.approx(0.5, abs=1e-9)
        assert rep.epsilon == pytest.approx(0.15, abs=1e-9)
        # |s dp| + rho is about 0.1995 here, so epsilon = 0.2 is out of reach
        with pytest.raises(InputError, match="infeasible"):
            gen_collapse_encoder(base, 0.2, 0.1, signal=0.5)


class TestBridgeInstance:
    def test_population_rho_and_unbiasedness(self):
        spec = EllipsoidSpec(dim=8, alpha=2.0, c=0.05, r=0.5, R=1.0)
        inst = gen_bridge_instance(2, spec, n=50_000, seed=0)
        D = spec.R * spec.lambdas[2] ** spec.r
        assert inst.delta_norms == pytest.approx((D, D))
        assert inst.rhoM_true == pytest.approx(D)
        assert inst.clip_fraction == 0.0
        assert np.all((inst.scores >= 0) & (inst.scores <= 1))
        assert max(inst.unbiasedness_residual.values()) < 0.01

    def test_class_conditional_gap_direction(self):
        spec = EllipsoidSpec(dim=6, alpha=2.0, c=0.05)
        inst = gen_bridge_instance(1, spec, n=20_000, seed=1)
        t = inst.table
        gap = t.features[t.cell_mask(1, "a")].mean(0) - t.features[t.cell_mask(1, "b")].mean(0)
        # only the (m+1)-th spectral axis carries a population gap
        assert abs(gap[2 + 1]) > 5 * np.delete(np.abs(gap[2:]), 1).max()

    def test_infeasible_base_rates(self):
        spec = EllipsoidSpec(dim=4, alpha=1.0, c=1.0, R=0.01)
        with pytest.raises(InputError, match="infeasible"):
            gen_bridge_instance(0, spec, p_a=0.9, p_b=0.05, n=100)

    def test_validation(self):
        spec = EllipsoidSpec(dim=3)
        with pytest.raises(InputError):
            gen_bridge_instance(2, spec)
        with pytest.raises(InputError):
            gen_bridge_instance(0, spec, p_a=0.3, p_b=0.3)


def test_mmd_oracle_matches_gram(rng):
    X = rng.standard_normal((12, 2))
    spec = KernelSpec("laplace", 0.9)
    K = gram(spec, X).values
    u = np.r_[np.full(5, 1 / 5), np.full(7, -1 / 7)]
    assert mmd_oracle(np.arange(5), np.arange(5, 12), spec, X) == pytest.approx(u @ K @ u, abs=1e-12)


def test_population_linear_delta(rng):
    t = gen_population(PopulationSpec.shifted(dim=1, shift=2.0, n=500, seed=7))
    K = gram(KernelSpec("linear"), t.features)
    ce = conditional_embeddings(t)
    gap = t.features[t.g == "a", 0].mean() - t.features[t.g == "b", 0].mean()
    assert rkhs_norm(ce.delta, K) == pytest.approx(abs(gap), abs=1e-10)
