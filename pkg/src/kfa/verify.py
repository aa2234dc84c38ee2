"""
Self-verification suite.

Each ``check_*`` function runs one family of property checks against an
independent oracle and returns a :class:`CheckResult`. ``run_all`` is what
``kfa verify`` executes; the ``scale`` argument trades replicate counts for
runtime ("quick" for the CLI default, "full" for the acceptance suite).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from kfa.embedding import SampleTable, group_difference, mmd2_vstat, rkhs_norm
from kfa.errors import InputError
from kfa.kernels import KernelSpec, gram
from kfa.spectral import (
    EllipsoidSpec,
    delta_projections,
    loglog_slope,
    mwidth_exact,
    mwidth_sup_oracle,
    pooled_spectrum,
    random_subspace,
)
from kfa.stats import bh_fdr, bootstrap_ci, permutation_test_mmd
from kfa.synthetic import (
    PopulationSpec,
    gen_bridge_instance,
    gen_collapse_encoder,
    gen_kmr_score,
    gen_population,
    gen_separated_classifier,
    mmd_oracle,
)
from kfa.theorems import (
    bridge_rate_bound,
    bridge_tail_bound,
    classifier_error,
    dp_gap_identity,
    fair_feature_report,
    kmr_audit,
    pareto_frontier_scan,
    rho_m,
)

SCALES = ("quick", "full")


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.margin = float(self.margin)

    def to_dict(self):
        d = {"name": self.name, "passed": bool(self.passed), "margin": _num(self.margin)}
        d["details"] = {k: _num(v) if isinstance(v, float) else v for k, v in self.details.items()}
        return d


def _num(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _pick(scale, quick, full):
    if scale not in SCALES:
        raise InputError(f"unknown scale {scale!r}; expected one of {SCALES}")
    return quick if scale == "quick" else full


def _random_table(rng, n, dim, shift=1.0):
    """Random (x, y, g) table with every (y, g) cell occupied."""
    while True:
        g = np.where(rng.random(n) < 0.5, "a", "b")
        p = np.where(g == "a", rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8))
        y = (rng.random(n) < p).astype(np.int8)
        if all(np.any((y == yy) & (g == gg)) for yy in (0, 1) for gg in ("a", "b")):
            if y[g == "a"].mean() != y[g == "b"].mean():
                break
    X = rng.standard_normal((n, dim)) + shift * np.outer(y + (g == "a"), rng.standard_normal(dim))
    return SampleTable(X, y, g)


# -- 1: MMD against the double-sum oracle -------------------------------------


def check_mmd_oracle(scale="quick", seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_inst = _pick(scale, 20, 100)
    worst = 0.0
    for _ in range(n_inst):
        n = int(rng.integers(2, 51))
        d = int(rng.integers(1, 5))
        X = rng.standard_normal((n, d))
        fam = ("rbf", "laplace", "linear")[int(rng.integers(3))]
        spec = KernelSpec(fam, float(rng.uniform(0.5, 2.0)))
        nA = int(rng.integers(1, n))
        perm = rng.permutation(n)
        A, B = perm[:nA], perm[nA:]
        K = gram(spec, X)
        worst = max(worst, abs(mmd2_vstat(A, B, K) - mmd_oracle(A, B, spec, X)))
    single = mmd2_vstat([0], [1], gram(KernelSpec("laplace", 1.0), np.array([[0.0], [1.0]])))
    single_err = abs(single - (2.0 - 2.0 * math.exp(-1.0)))
    tol = 1e-12
    return CheckResult(
        "mmd_oracle",
        worst <= tol and single_err <= tol,
        tol - max(worst, single_err),
        {"instances": n_inst, "max_abs_diff": worst, "singleton_abs_err": single_err},
    )


# -- 2: linear kernel reduces to Euclidean geometry ---------------------------


def check_linear_reduction(scale="quick", seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_inst = _pick(scale, 5, 20)
    spec = KernelSpec("linear")
    worst = {"norm": 0.0, "eigenvalues": 0.0, "projections": 0.0, "eigenvectors": 0.0}
    for _ in range(n_inst):
        n = int(rng.integers(30, 121))
        d = int(rng.integers(2, 6))
        t = _random_table(rng, n, d)
        K = gram(spec, t.features)
        X = t.features
        ma, mb = X[t.g == "a"].mean(axis=0), X[t.g == "b"].mean(axis=0)
        delta = group_difference(t)
        worst["norm"] = max(worst["norm"], abs(rkhs_norm(delta, K) - np.linalg.norm(ma - mb)))

        basis = pooled_spectrum(t, K)
        w = basis.group_weights
        xbar = w @ X
        C = (X - xbar).T @ ((X - xbar) * w[:, None])
        lam, U = np.linalg.eigh(C)
        lam, U = lam[::-1], U[:, ::-1]
        J = basis.J
        worst["eigenvalues"] = max(worst["eigenvalues"], float(np.max(np.abs(basis.eigenvalues - lam[:J]))))
        E = basis.phi_coeffs @ X  # eigenfunctions as vectors in R^d
        sign = np.sign(np.sum(E * U[:, :J].T, axis=1))
        worst["eigenvectors"] = max(worst["eigenvectors"], float(np.max(np.abs(E - sign[:, None] * U[:, :J].T))))
        proj = delta_projections(delta, basis, K)
        worst["projections"] = max(worst["projections"], float(np.max(np.abs(proj - sign * (U[:, :J].T @ (ma - mb))))))
    tol = 1e-10
    m = max(worst.values())
    return CheckResult("linear_reduction", m <= tol, tol - m, {"instances": n_inst, **{f"max_{k}": v for k, v in worst.items()}})


# -- 3: m-width sandwich ------------------------------------------------------


def check_mwidth(scale="quick", seed=2, fault=None) -> CheckResult:
    """
    Top-m coordinate subspaces attain R^2 lambda_{m+1}^{2r}; random subspaces
    never do better; the exact widths follow slope -2 alpha r in log-log.

    ``fault="lambda"`` perturbs the eigenvalues fed to the closed form (a
    negative control that must make the check fail).
    """
    rng = np.random.default_rng(seed)
    n_sub = _pick(scale, 10, 100)
    dim, ms = 50, range(0, 21)
    worst_rel = worst_gap = worst_slope = 0.0
    for alpha in (1.5, 2.0, 3.0):
        for r in (0.25, 0.5, 1.0):
            spec = EllipsoidSpec(dim=dim, alpha=alpha, r=r, R=1.0)
            claimed = spec
            if fault == "lambda":
                lam = spec.lambdas.copy()
                lam *= 1.0 + 1e-3 * np.linspace(0.0, 1.0, dim)[::-1]
                claimed = EllipsoidSpec(dim=dim, r=r, R=1.0, eigenvalues=tuple(np.sort(lam)[::-1]))
            exact = []
            for m in ms:
                e = mwidth_exact(claimed, m)
                exact.append(e)
                top = mwidth_sup_oracle(spec, np.eye(dim)[:, :m])
                worst_rel = max(worst_rel, abs(top - e) / e)
                for _ in range(n_sub):
                    v = mwidth_sup_oracle(spec, random_subspace(dim, m, rng))
                    worst_gap = max(worst_gap, e - v)
            slope = loglog_slope(np.arange(1, len(exact) + 1), exact)
            worst_slope = max(worst_slope, abs(slope + 2 * alpha * r))
    ok = worst_rel <= 1e-10 and worst_gap <= 1e-10 and worst_slope <= 1e-6
    margin = min(1e-10 - worst_rel, 1e-10 - worst_gap, 1e-6 - worst_slope)
    return CheckResult(
        "mwidth_sandwich",
        ok,
        margin,
        {"random_subspaces": n_sub, "max_rel_err_top_m": worst_rel, "max_random_gap": worst_gap,
         "max_slope_err": worst_slope, "fault": fault or "none"},
    )


# -- 4: coupling identity and representation bound ----------------------------


def check_master_identity(scale="quick", seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_tab = _pick(scale, 20, 100)
    worst_res = 0.0
    worst_excess = -math.inf
    for i in range(n_tab):
        n = int(rng.integers(20, 201))
        t = _random_table(rng, n, int(rng.integers(1, 6)), shift=float(rng.uniform(0, 2)))
        fam = ("rbf", "laplace", "linear")[i % 3]
        rep = fair_feature_report(t, KernelSpec(fam, float(rng.uniform(0.5, 3.0))))
        worst_res = max(worst_res, rep.identity_residual_a, rep.identity_residual_b)
        worst_excess = max(worst_excess, rep.signal - rep.bound)
    ok = worst_res <= 1e-10 and worst_excess <= 1e-8
    return CheckResult(
        "master_identity",
        ok,
        min(1e-10 - worst_res, 1e-8 - worst_excess),
        {"tables": n_tab, "max_identity_residual": worst_res, "max_signal_minus_bound": worst_excess},
    )


# -- 5: classifier frontier ---------------------------------------------------


def check_pareto(scale="quick", seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    configs = []
    while len(configs) < 20:
        p_a, p_b = rng.uniform(0.05, 0.95, size=2)
        if abs(p_a - p_b) > 0.02:
            configs.append((float(p_a), float(p_b)))
    configs[0] = (0.3, 0.1)  # p < 1/2
    configs[1] = (0.9, 0.5)  # p > 1/2
    violations = 0
    untight = 0
    min_margin = math.inf
    for p_a, p_b in configs:
        s = pareto_frontier_scan(0.5 * (p_a + p_b), abs(p_a - p_b), resolution=101, tol=1e-12)
        violations += s.violations
        untight += s.corner_points - s.corner_equalities
        min_margin = min(min_margin, s.min_margin)

    n = _pick(scale, 20_000, 100_000)
    worst_z = 0.0
    for k, (tpr, fpr) in enumerate([(0.8, 0.1), (0.6, 0.0), (1.0, 0.3), (0.5, 0.5), (0.3, 0.7)]):
        p_a, p_b = configs[k]
        t = gen_separated_classifier(p_a, p_b, 0.5, tpr, fpr, n, seed + k)
        p = 0.5 * (p_a + p_b)
        na, nb = int((t.g == "a").sum()), int((t.g == "b").sum())
        sa = p_a * tpr + (1 - p_a) * fpr
        sb = p_b * tpr + (1 - p_b) * fpr
        se_dp = math.sqrt(sa * (1 - sa) / na + sb * (1 - sb) / nb)
        err = classifier_error(p, tpr, fpr)
        se_err = math.sqrt(max(err * (1 - err), 1e-12) / n)
        emp_dp = abs(t.yhat[t.g == "a"].mean() - t.yhat[t.g == "b"].mean())
        emp_err = float(np.mean(t.yhat != t.y))
        z_dp = abs(emp_dp - dp_gap_identity(abs(p_a - p_b), tpr, fpr)) / max(se_dp, 1e-12)
        z_err = abs(emp_err - err) / se_err
        worst_z = max(worst_z, z_dp, z_err)
    ok = violations == 0 and untight == 0 and worst_z <= 3.0
    return CheckResult(
        "pareto_frontier",
        ok,
        min(min_margin + 1e-12, 3.0 - worst_z),
        {"configs": len(configs), "violations": violations, "corner_misses": untight,
         "min_grid_margin": min_margin, "mc_n": n, "max_mc_z": worst_z},
    )


# -- 6: score dichotomy -------------------------------------------------------


def check_kmr(scale="quick", seed=5) -> CheckResult:
    n = _pick(scale, 2000, 20000)
    t = gen_population(PopulationSpec.shifted(dim=2, p_a=0.35, p_b=0.15, n=n, seed=seed))
    got = {}
    res = 0.0
    for mode in ("perfect", "unbiased-only", "balanced-only"):
        chk = kmr_audit(t.with_score(gen_kmr_score(t, mode)))
        got[mode] = (chk.verdict, list(chk.violated))
        if not chk.violated:
            res = max(res, abs(chk.dichotomy_residual))
    want = {
        "perfect": ("forces-S-equals-Y", []),
        "unbiased-only": ("hypotheses-violated", ["balance"]),
        "balanced-only": ("hypotheses-violated", ["unbiasedness"]),
    }
    ok = all(got[m] == (v, viol) for m, (v, viol) in want.items()) and res <= 1e-12
    return CheckResult("kmr_dichotomy", ok, 1e-12 - res,
                       {"verdicts": {m: v[0] for m, v in got.items()}, "max_dichotomy_residual": res})


# -- 7: collapse ---------------------------------------------------------------


def check_collapse(scale="quick", seed=6) -> CheckResult:
    n_seeds = _pick(scale, 5, 20)
    worst = 0.0
    refused = 0
    for s in range(n_seeds):
        t = gen_population(PopulationSpec.shifted(dim=3, p_a=0.4, p_b=0.2, n=500, seed=seed + s))
        if t.base_rate("a") == t.base_rate("b"):
            continue
        enc = gen_collapse_encoder(t, 0.0, 0.0, dimZ=3, seed=s)
        rep = fair_feature_report(enc, KernelSpec("linear"))
        worst = max(worst, rep.signal_a, rep.signal_b)
        try:
            gen_collapse_encoder(t, 0.0, 0.0, dimZ=3, seed=s, signal=1.0)
        except InputError:
            refused += 1
    ok = worst <= 1e-10 and refused == n_seeds
    return CheckResult("fair_feature_collapse", ok, 1e-10 - worst,
                       {"seeds": n_seeds, "max_signal": worst, "refusals": refused})


# -- 8: bridge tail bound -----------------------------------------------------


def check_bridge(scale="quick", seed=7) -> CheckResult:
    # the empirical rho slope is too noisy at smaller n; n = 1e5 costs under a second
    _pick(scale, None, None)
    n = 100_000
    ms = (1, 2, 4, 8, 16)
    ts = np.round(np.arange(1, 11) / 10.0, 10)
    worst = -math.inf
    rhos, rates, emp_rhos = [], [], []
    for m in ms:
        spec = EllipsoidSpec(dim=m + 4, alpha=2.0, r=0.5, R=1.0)
        inst = gen_bridge_instance(m, spec, n=n, seed=seed + m)
        dev = np.abs(inst.scores - inst.table.y)
        for t in ts:
            emp = float(np.mean(dev > t))
            se = math.sqrt(emp * (1 - emp) / n)
            bound = bridge_tail_bound(inst.W, inst.rhoM_true, abs(inst.p_a - inst.p_b), float(t))
            worst = max(worst, emp - 3 * se - bound)
        rhos.append(inst.rhoM_true)
        X, tb = inst.table.features, inst.table
        d1, d0 = (np.linalg.norm(X[tb.cell_mask(y, "a")].mean(0) - X[tb.cell_mask(y, "b")].mean(0)) for y in (1, 0))
        emp_rhos.append(float(rho_m(inst.p_a, inst.p_b, d1, d0)))
        rates.append(bridge_rate_bound(1.0, spec.lambdas[m], 0.5))
    slope = loglog_slope(np.array(ms) + 1.0, rhos)
    rate_gap = float(np.max(np.array(rhos) - np.array(rates)))
    emp_slope = loglog_slope(np.array(ms) + 1.0, emp_rhos)
    slope_err = max(abs(slope + 1.0), abs(emp_slope + 1.0))
    ok = worst <= 0.0 and slope_err <= 0.05 and rate_gap <= 1e-12
    return CheckResult(
        "bridge_tail",
        ok,
        min(-worst, 0.05 - slope_err),
        {"n": n, "max_excess_over_bound": worst, "rho_slope": slope, "empirical_rho_slope": emp_slope,
         "max_rho_minus_rate": rate_gap},
    )


# -- 9: inference calibration ------------------------------------------------


def check_inference(scale="quick", seed=8) -> CheckResult:
    # 50 runs leave the KS and coverage tolerances under-powered, so both scales
    # run the full protocol; it costs a few seconds
    runs = 200
    rng = np.random.default_rng(seed)
    pvals = []
    spec = KernelSpec("rbf", 1.0)
    for r in range(runs):
        X = rng.standard_normal((40, 2))
        g = np.where(rng.permutation(40) < 20, "a", "b")
        t = SampleTable(X, np.zeros(40, dtype=np.int8), g)
        pvals.append(permutation_test_mmd(t, gram(spec, X), B=199, seed=seed + r).p_value)
    ks = float(sps.kstest(pvals, "uniform").statistic)

    pop = np.arange(1, 101, dtype=float)
    cover = 0
    reps = 200
    for r in range(reps):
        sample = rng.choice(pop, size=100, replace=True)
        ci = bootstrap_ci(np.mean, sample, B=1000, level=0.95, seed=seed + r, strata="whole-sample")
        cover += ci.lo <= pop.mean() <= ci.hi
    coverage = cover / reps
    cov_tol = 0.04

    bh = bh_fdr([0.01, 0.03, 0.04, 0.5], q=0.05).tolist()
    ok = ks <= 0.15 and abs(coverage - 0.95) <= cov_tol and bh == [True, False, False, False]
    return CheckResult(
        "inference_calibration",
        ok,
        min(0.15 - ks, cov_tol - abs(coverage - 0.95)),
        {"null_runs": runs, "ks_distance": ks, "coverage": coverage, "coverage_runs": reps, "bh_example": bh},
    )


CHECKS = {
    "mmd_oracle": check_mmd_oracle,
    "linear_reduction": check_linear_reduction,
    "mwidth_sandwich": check_mwidth,
    "master_identity": check_master_identity,
    "pareto_frontier": check_pareto,
    "kmr_dichotomy": check_kmr,
    "fair_feature_collapse": check_collapse,
    "bridge_tail": check_bridge,
    "inference_calibration": check_inference,
}


def run_all(scale="quick", seed=0, fault=None) -> list:
    out = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        t0 = time.perf_counter()
        kwargs = {"scale": scale, "seed": seed + i}
        if name == "mwidth_sandwich":
            kwargs["fault"] = fault
        res = fn(**kwargs)
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out

