"""
Closed-form bounds and their empirical checks.

Covers the scalar dichotomy for unbiased, class-balanced scores, the
representation-level parity/separation trade-off, the separation-conditional
error frontier for binary classifiers, and the tail bound linking directional
class balance to ``Pr[|S - Y| > t]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from kfa.embedding import SampleTable, conditional_embeddings, rkhs_norm
from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import KernelSpec, as_matrix, gram

BOUND_TOL = 1e-8
IDENTITY_TOL = 1e-10


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _check_prob(name, v, open_interval=False):
    v = float(v)
    ok = 0.0 < v < 1.0 if open_interval else 0.0 <= v <= 1.0
    if not ok:
        rng = "(0, 1)" if open_interval else "[0, 1]"
        raise InputError(f"{name}={v} must lie in {rng}")
    return v


# -- rates of binary classifiers ---------------------------------------------


@dataclass(frozen=True)
class RatesSummary:
    p: float
    p_a: float
    p_b: float
    delta_p: float
    TPR: float
    FPR: float
    TPR_a: float
    TPR_b: float
    FPR_a: float
    FPR_b: float
    DP_gap: float
    EO_gap: float
    error: float

    def to_dict(self):
        return asdict(self)


def rates_summary(table: SampleTable) -> RatesSummary:
    """Group and pooled rates of the prediction ``table.yhat``."""
    if table.yhat is None:
        raise InputError("table has no predictions (yhat)")
    yh = table.yhat.astype(float)

    def rate(mask, what):
        if not mask.any():
            raise DegenerateDataError(f"empty cell for {what}")
        return float(yh[mask].mean())

    tpr = {g: rate(table.cell_mask(1, g), f"TPR_{g}") for g in ("a", "b")}
    fpr = {g: rate(table.cell_mask(0, g), f"FPR_{g}") for g in ("a", "b")}
    sel = {g: rate(table.cell_mask(None, g), f"selection rate of {g}") for g in ("a", "b")}
    p_a, p_b = table.base_rate("a"), table.base_rate("b")
    return RatesSummary(
        p=float(table.y.mean()),
        p_a=p_a,
        p_b=p_b,
        delta_p=p_a - p_b,
        TPR=rate(table.y == 1, "TPR"),
        FPR=rate(table.y == 0, "FPR"),
        TPR_a=tpr["a"],
        TPR_b=tpr["b"],
        FPR_a=fpr["a"],
        FPR_b=fpr["b"],
        DP_gap=abs(sel["a"] - sel["b"]),
        EO_gap=max(abs(tpr["a"] - tpr["b"]), abs(fpr["a"] - fpr["b"])),
        error=float(np.mean(table.yhat != table.y)),
    )


# -- score dichotomy ----------------------------------------------------------


@dataclass(frozen=True)
class KmrCheck:
    mu_plus: float
    mu_minus: float
    mu_plus_a: float
    mu_plus_b: float
    mu_minus_a: float
    mu_minus_b: float
    p_a: float
    p_b: float
    unbiasedness_residual_a: float
    unbiasedness_residual_b: float
    balance_gap_plus: float
    balance_gap_minus: float
    dichotomy_residual: float
    max_abs_s_minus_y: float
    verdict: str
    violated: tuple = field(default=())
    tol: float = BOUND_TOL

    def to_dict(self):
        d = asdict(self)
        d["violated"] = list(self.violated)
        return d


def kmr_audit(table: SampleTable, tol: float = BOUND_TOL) -> KmrCheck:
    """
    Check group-conditional unbiasedness and class balance of ``table.score``
    and classify the outcome of the dichotomy ``(p_a - p_b)(1 - (mu+ - mu-)) = 0``.

    Verdicts: ``hypotheses-violated`` (with the failing hypotheses listed in
    ``violated``), ``equal-base-rates``, ``forces-S-equals-Y``, or
    ``inconsistent`` when the hypotheses hold to ``tol`` yet neither branch does.
    """
    if table.score is None:
        raise InputError("kmr_audit needs scores on the table")
    S = table.score
    p = {g: table.base_rate(g) for g in ("a", "b")}
    for g, v in p.items():
        if not 0.0 < v < 1.0:
            raise DegenerateDataError(f"refusing: base rate p_{g}={v} must lie strictly inside (0, 1)")

    def cmean(y, g):
        return float(S[table.cell_mask(y, g)].mean())

    mp = {g: cmean(1, g) for g in ("a", "b")}
    mm = {g: cmean(0, g) for g in ("a", "b")}
    resid = {g: abs(float(S[table.g == g].mean()) - p[g]) for g in ("a", "b")}
    gap_plus = mp["a"] - mp["b"]
    gap_minus = mm["a"] - mm["b"]

    violated = []
    if max(resid.values()) > tol:
        violated.append("unbiasedness")
    if abs(gap_plus) > tol or abs(gap_minus) > tol:
        violated.append("balance")

    mu_plus = float(S[table.y == 1].mean())
    mu_minus = float(S[table.y == 0].mean())
    dp = p["a"] - p["b"]
    residual = dp * (1.0 - (mu_plus - mu_minus))
    max_dev = float(np.max(np.abs(S - table.y)))

    if violated:
        verdict = "hypotheses-violated"
    elif abs(dp) <= tol:
        verdict = "equal-base-rates"
    elif abs(1.0 - (mu_plus - mu_minus)) <= tol and max_dev <= tol:
        verdict = "forces-S-equals-Y"
    else:
        verdict = "inconsistent"
    return KmrCheck(
        mu_plus=mu_plus,
        mu_minus=mu_minus,
        mu_plus_a=mp["a"],
        mu_plus_b=mp["b"],
        mu_minus_a=mm["a"],
        mu_minus_b=mm["b"],
        p_a=p["a"],
        p_b=p["b"],
        unbiasedness_residual_a=resid["a"],
        unbiasedness_residual_b=resid["b"],
        balance_gap_plus=gap_plus,
        balance_gap_minus=gap_minus,
        dichotomy_residual=residual,
        max_abs_s_minus_y=max_dev,
        verdict=verdict,
        violated=tuple(violated),
        tol=tol,
    )


# -- representation-level trade-off ------------------------------------------


@dataclass(frozen=True)
class BoundsReport:
    epsilon: float
    rho: float
    rho_0: float
    rho_1: float
    p_a: float
    p_b: float
    absDeltaP: float
    bound: float
    signal_a: float
    signal_b: float
    identity_residual_b: float
    identity_residual_a: float
    margin_a: float
    margin_b: float
    violation_a: bool
    violation_b: bool
    identity_violation: bool

    @property
    def signal(self) -> float:
        return max(self.signal_a, self.signal_b)

    def to_dict(self):
        d = asdict(self)
        for k in ("bound", "margin_a", "margin_b"):
            d[k] = _finite_or_none(d[k])
        return d


def fair_feature_report(table: SampleTable, spec: KernelSpec | None = None, K=None) -> BoundsReport:
    """
    Parity gap, separation gap and class signal of an encoded table.

    ``table.features`` hold encoder outputs. Either a kernel ``spec`` or a
    precomputed Gram ``K`` on those outputs must be given. The coupling identity

        mu_a - mu_b = p_a d1 + (1 - p_a) d0 + (p_a - p_b)(mu_1b - mu_0b)

    (and its mirror with the roles of a and b swapped) is evaluated as an RKHS
    residual; it is exact algebra on empirical embeddings.
    """
    if K is None:
        if spec is None:
            raise InputError("fair_feature_report needs a kernel spec or a Gram matrix")
        K = gram(spec, table.features)
    M = as_matrix(K)
    ce = conditional_embeddings(table)
    eps = rkhs_norm(ce.delta, M)
    rho_0 = rkhs_norm(ce.delta_0, M)
    rho_1 = rkhs_norm(ce.delta_1, M)
    rho = max(rho_0, rho_1)
    sig_a = rkhs_norm(ce.mu_1a - ce.mu_0a, M)
    sig_b = rkhs_norm(ce.mu_1b - ce.mu_0b, M)
    dp = ce.delta_p
    wa = ce.delta.weights
    rhs_b = ce.p_a * ce.delta_1.weights + (1 - ce.p_a) * ce.delta_0.weights + dp * (ce.mu_1b.weights - ce.mu_0b.weights)
    rhs_a = ce.p_b * ce.delta_1.weights + (1 - ce.p_b) * ce.delta_0.weights + dp * (ce.mu_1a.weights - ce.mu_0a.weights)
    res_b = rkhs_norm(wa - rhs_b, M)
    res_a = rkhs_norm(wa - rhs_a, M)
    abs_dp = abs(dp)
    bound = (eps + rho) / abs_dp if abs_dp > 0 else math.inf
    return BoundsReport(
        epsilon=eps,
        rho=rho,
        rho_0=rho_0,
        rho_1=rho_1,
        p_a=ce.p_a,
        p_b=ce.p_b,
        absDeltaP=abs_dp,
        bound=bound,
        signal_a=sig_a,
        signal_b=sig_b,
        identity_residual_b=res_b,
        identity_residual_a=res_a,
        margin_a=bound - sig_a,
        margin_b=bound - sig_b,
        violation_a=sig_a > bound + BOUND_TOL,
        violation_b=sig_b > bound + BOUND_TOL,
        identity_violation=max(res_a, res_b) > IDENTITY_TOL,
    )


# -- binary classifier frontier ----------------------------------------------


def pareto_bound(p: float, absDeltaP: float, dpGap: float) -> float:
    """Minimum error of an exactly separated classifier with a given DP gap."""
    p = _check_prob("p", p, open_interval=True)
    if absDeltaP == 0:
        raise InputError("bound undefined: equal base rates")
    if not absDeltaP > 0 or dpGap < 0:
        raise InputError("absDeltaP must be positive and dpGap non-negative")
    return max(0.0, min(p, 1.0 - p) * (1.0 - dpGap / absDeltaP))


def dp_gap_identity(absDeltaP: float, tpr: float, fpr: float) -> float:
    """DP gap of a separated classifier: |p_a - p_b| * |TPR - FPR|."""
    _check_prob("tpr", tpr)
    _check_prob("fpr", fpr)
    return absDeltaP * abs(tpr - fpr)


def classifier_error(p: float, tpr: float, fpr: float) -> float:
    return p * (1.0 - tpr) + (1.0 - p) * fpr


@dataclass(frozen=True)
class FrontierScan:
    p: float
    absDeltaP: float
    resolution: int
    n_points: int
    violations: int
    min_margin: float
    corner_points: int
    corner_equalities: int
    negative_branch_min_margin: float

    @property
    def tight(self) -> bool:
        return self.corner_equalities == self.corner_points

    def to_dict(self):
        d = asdict(self)
        d["tight"] = self.tight
        return d


def pareto_frontier_scan(p: float, absDeltaP: float, resolution: int = 101, tol: float = 1e-12) -> FrontierScan:
    """
    Exhaustive (tpr, fpr) grid check of the error frontier.

    Every grid point must satisfy error >= bound - tol. Equality is certified at
    the minimising corners: (tpr=kappa, fpr=0) when p <= 1/2 and
    (tpr=1, fpr=1-kappa) when p >= 1/2.
    """
    if resolution < 2:
        raise InputError("grid resolution must be at least 2")
    p = _check_prob("p", p, open_interval=True)
    if not absDeltaP > 0:
        raise InputError("bound undefined: equal base rates")
    grid = np.linspace(0.0, 1.0, resolution)
    tpr, fpr = np.meshgrid(grid, grid, indexing="ij")
    kappa = np.abs(tpr - fpr)
    dp_gap = absDeltaP * kappa
    bound = np.maximum(0.0, min(p, 1 - p) * (1.0 - dp_gap / absDeltaP))
    err = p * (1.0 - tpr) + (1.0 - p) * fpr
    margin = err - bound
    violations = int(np.count_nonzero(margin < -tol))

    if p <= 0.5:
        corners = (np.arange(resolution), np.zeros(resolution, dtype=int))
    else:
        corners = (np.full(resolution, resolution - 1), np.arange(resolution))
    corner_margin = np.abs(margin[corners])
    neg = (tpr < fpr) & (kappa > 0)
    return FrontierScan(
        p=p,
        absDeltaP=float(absDeltaP),
        resolution=resolution,
        n_points=int(margin.size),
        violations=violations,
        min_margin=float(margin.min()),
        corner_points=resolution,
        corner_equalities=int(np.count_nonzero(corner_margin <= tol)),
        negative_branch_min_margin=float(margin[neg].min()) if neg.any() else math.inf,
    )


# -- score tail bound ---------------------------------------------------------


@dataclass(frozen=True)
class RhoM:
    """max_g [p_gbar ||d1|| + (1 - p_gbar) ||d0||] and its per-group parts."""

    value: float
    rho_a: float
    rho_b: float
    kappa_a: float | None = None
    kappa_b: float | None = None

    def __float__(self):
        return float(self.value)


def rho_m(p_a: float, p_b: float, normDelta1: float, normDelta0: float, W=None) -> RhoM:
    """Class-balance residual; pass ``W`` to also get kappa_g = W rho^(g) / |dp|."""
    _check_prob("p_a", p_a, open_interval=True)
    _check_prob("p_b", p_b, open_interval=True)
    if normDelta1 < 0 or normDelta0 < 0:
        raise InputError("norms must be non-negative")
    rho_a = p_b * normDelta1 + (1 - p_b) * normDelta0
    rho_b = p_a * normDelta1 + (1 - p_a) * normDelta0
    kappa_a = kappa_b = None
    if W is not None and p_a != p_b:
        kappa_a = W * rho_a / abs(p_a - p_b)
        kappa_b = W * rho_b / abs(p_a - p_b)
    return RhoM(float(max(rho_a, rho_b)), float(rho_a), float(rho_b), kappa_a, kappa_b)


def bridge_tail_bound(W: float, rhoM: float, absDeltaP: float, t: float) -> float:
    """Upper bound min(1, W rho_m / (|dp| t)) on Pr[|S - Y| > t]."""
    if not W > 0 or not absDeltaP > 0:
        raise InputError("W and absDeltaP must be positive")
    if not 0 < t <= 1:
        raise InputError("t must lie in (0, 1]")
    if rhoM < 0:
        raise InputError("rho_m must be non-negative")
    return min(1.0, W * float(rhoM) / (absDeltaP * t))


def bridge_rate_bound(R: float, lambdaM1: float, r: float) -> float:
    """Ceiling R * lambda_{m+1}^r on rho_m under the class-conditional source condition."""
    if R < 0 or lambdaM1 <= 0 or r < 0:
        raise InputError("R must be non-negative, lambda positive, r non-negative")
    return R * lambdaM1**r
