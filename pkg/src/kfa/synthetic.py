"""
Synthetic populations with known ground truth.

Every generator is a pure function of its arguments and seed. Linear-kernel
constructions are the reference world: there every RKHS quantity is a
Euclidean one, so the checks elsewhere in the package have brute-force answers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from kfa.embedding import GROUPS, SampleTable
from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import KernelSpec, eval_kernel
from kfa.spectral import EllipsoidSpec

CELLS = tuple(f"y{y}_{g}" for y in (0, 1) for g in GROUPS)
MAX_REDRAWS = 100


def _cell_key(y, g):
    return f"y{int(y)}_{g}"


@dataclass(frozen=True)
class PopulationSpec:
    """
    Gaussian cell-conditional features with diagonal covariance.

    ``cells`` maps ``"y{0,1}_{a,b}"`` to ``{"mean": [...], "var": [...]}``.
    """

    cells: dict
    p_a: float
    p_b: float
    group_mass: float = 0.5
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("p_a", "p_b", "group_mass"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InputError(f"{name}={v} must lie strictly inside (0, 1)")
        missing = [c for c in CELLS if c not in self.cells]
        if missing:
            raise InputError(f"population spec is missing cells {missing}")
        dims = set()
        norm = {}
        for key in CELLS:
            cell = self.cells[key]
            mean = np.asarray(cell["mean"], dtype=float).ravel()
            var = np.asarray(cell.get("var", np.ones_like(mean)), dtype=float).ravel()
            if mean.shape != var.shape:
                raise InputError(f"cell {key}: mean and var lengths differ")
            if np.any(var <= 0):
                raise InputError(f"cell {key}: variances must be positive")
            dims.add(mean.size)
            norm[key] = {"mean": mean.tolist(), "var": var.tolist()}
        if len(dims) != 1:
            raise InputError("all cells must share one feature dimension")
        if int(self.n) < 4:
            raise InputError("n must be at least 4 (one row per cell)")
        object.__setattr__(self, "cells", norm)

    @property
    def dim(self) -> int:
        return len(self.cells[CELLS[0]]["mean"])

    @property
    def p(self) -> float:
        return self.group_mass * self.p_a + (1 - self.group_mass) * self.p_b

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> PopulationSpec:
        known = {"cells", "p_a", "p_b", "group_mass", "n", "seed"}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown population spec fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> PopulationSpec:
        return cls.from_dict(json.loads(text))

    @classmethod
    def shifted(cls, dim=2, shift=1.0, class_shift=1.0, p_a=0.3, p_b=0.1, group_mass=0.5, n=1000, seed=0, axis=0):
        """Unit-variance cells; group a is shifted by ``shift`` and y=1 by ``class_shift`` along ``axis``."""
        cells = {}
        for y in (0, 1):
            for g in GROUPS:
                mean = np.zeros(dim)
                mean[axis] = class_shift * y + (shift if g == "a" else 0.0)
                cells[_cell_key(y, g)] = {"mean": mean.tolist(), "var": [1.0] * dim}
        return cls(cells=cells, p_a=p_a, p_b=p_b, group_mass=group_mass, n=n, seed=seed)


def _draw_labels(rng, n, p_a, p_b, group_mass):
    is_a = rng.random(n) < group_mass
    p = np.where(is_a, p_a, p_b)
    y = (rng.random(n) < p).astype(np.int8)
    return y, np.where(is_a, "a", "b")


def gen_population(spec: PopulationSpec) -> SampleTable:
    """i.i.d. draws of (G, Y, X); redraws the labels until every cell is occupied."""
    rng = np.random.default_rng(spec.seed)
    n = int(spec.n)
    for _ in range(MAX_REDRAWS):
        y, g = _draw_labels(rng, n, spec.p_a, spec.p_b, spec.group_mass)
        if all(np.any((y == yy) & (g == gg)) for yy in (0, 1) for gg in GROUPS):
            break
    else:
        raise DegenerateDataError(f"a (y, g) cell stayed empty after {MAX_REDRAWS} redraws at n={n}")
    X = np.empty((n, spec.dim))
    Zs = rng.standard_normal((n, spec.dim))
    for yy in (0, 1):
        for gg in GROUPS:
            mask = (y == yy) & (g == gg)
            cell = spec.cells[_cell_key(yy, gg)]
            X[mask] = np.asarray(cell["mean"]) + np.sqrt(cell["var"]) * Zs[mask]
    return SampleTable(X, y, g, feature_names=tuple(f"x{j}" for j in range(spec.dim)))


def gen_separated_classifier(p_a, p_b, group_mass, tpr, fpr, n, seed) -> SampleTable:
    """
    Labels from group base rates, then predictions from (tpr, fpr) independent of G.

    Features are a single zero column; only (y, g, yhat) carry information.
    """
    for name, v in (("tpr", tpr), ("fpr", fpr), ("p_a", p_a), ("p_b", p_b), ("group_mass", group_mass)):
        if not 0.0 <= v <= 1.0:
            raise InputError(f"{name}={v} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    y, g = _draw_labels(rng, int(n), p_a, p_b, group_mass)
    return SampleTable(np.zeros((int(n), 1)), y, g, yhat=separated_predictions(y, tpr, fpr, rng))


def separated_predictions(y, tpr, fpr, rng) -> np.ndarray:
    """Binary predictions with Pr[yhat=1 | Y=1] = tpr and Pr[yhat=1 | Y=0] = fpr."""
    if not (0.0 <= tpr <= 1.0 and 0.0 <= fpr <= 1.0):
        raise InputError("tpr and fpr must lie in [0, 1]")
    u = rng.random(len(y))
    return np.where(np.asarray(y) == 1, u < tpr, u < fpr).astype(np.int8)


KMR_MODES = ("perfect", "unbiased-only", "balanced-only")


def gen_kmr_score(table: SampleTable, mode: str = "perfect") -> np.ndarray:
    """
    Scores with controlled hypotheses.

    perfect        S = Y
    unbiased-only  S = p-hat_g on every row of group g (class balance fails when p_a != p_b)
    balanced-only  S = 0.25 + 0.5 Y (equal class means across groups, biased group means)
    """
    if mode == "perfect":
        return table.y.astype(float)
    if mode == "unbiased-only":
        p = {g: table.base_rate(g) for g in GROUPS}
        return np.where(table.g == "a", p["a"], p["b"])
    if mode == "balanced-only":
        return 0.25 + 0.5 * table.y.astype(float)
    raise InputError(f"unknown score mode {mode!r}; expected one of {KMR_MODES}")


def gen_collapse_encoder(table: SampleTable, epsilon=0.0, rho=0.0, dimZ=2, seed=0, signal=None, noise=0.1):
    """
    Encoded table whose linear-kernel (epsilon, rho) equal the requested knobs.

    Cell means are built from a class direction u1 (signal ``s``) and a common
    class-conditional group offset ``v`` with ``||v|| = rho``; the angle between
    ``v`` and ``u1`` is solved so that ``||s dp u1 + v|| = epsilon``. Gaussian
    noise is re-centred within every cell, so the empirical cell means are the
    design means exactly. The default signal is the largest one the knobs admit,
    ``(epsilon + rho) / |dp|``.

    Knobs (0, 0) return a constant encoder; asking for non-zero signal there is
    refused since parity plus separation under unequal base rates forces class
    collapse.
    """
    if dimZ < 1:
        raise InputError("dimZ must be at least 1")
    if epsilon < 0 or rho < 0:
        raise InputError("knobs must be non-negative")
    n = table.n
    dp = table.base_rate("a") - table.base_rate("b")
    abs_dp = abs(dp)
    s_max = (epsilon + rho) / abs_dp if abs_dp > 0 else math.inf
    s = s_max if signal is None else float(signal)
    if epsilon == 0 and rho == 0:
        if s > 0 and abs_dp > 0:
            raise InputError("infeasible: exact parity and separation with unequal base rates force zero class signal")
        return table.with_features(np.zeros((n, dimZ)), [f"z{j}" for j in range(dimZ)])
    if not math.isfinite(s):
        raise InputError("equal base rates: pass an explicit signal")
    if s > s_max + 1e-12:
        raise InputError(f"infeasible: signal {s} exceeds (epsilon + rho)/|dp| = {s_max}")

    a = s * dp
    if rho == 0:
        if abs(abs(a) - epsilon) > 1e-12:
            raise InputError("with rho = 0 the signal must equal epsilon/|dp|")
        v = np.zeros(2)
    else:
        cos = (epsilon**2 - a**2 - rho**2) / (2 * a * rho) if a * rho != 0 else 0.0
        if not abs(abs(a) - rho) - 1e-12 <= epsilon <= abs(a) + rho + 1e-12:
            raise InputError(
                f"infeasible: epsilon={epsilon} must lie in [||s dp| - rho|, |s dp| + rho] = "
                f"[{abs(abs(a) - rho)}, {abs(a) + rho}] for signal {s}"
            )
        cos = float(np.clip(cos, -1.0, 1.0))
        if dimZ == 1 and abs(abs(cos) - 1.0) > 1e-12:
            raise InputError("requested knobs need dimZ >= 2")
        v = rho * np.array([cos, math.sqrt(max(0.0, 1 - cos**2))])

    width = max(dimZ, 2)
    means = {}
    for y in (0, 1):
        for g in GROUPS:
            m = np.zeros(width)
            m[0] = s * y
            if g == "a":
                m[:2] += v
            means[(y, g)] = m[:dimZ] if dimZ >= 2 else m[:1]

    rng = np.random.default_rng(seed)
    Z = np.empty((n, dimZ))
    for (y, g), m in means.items():
        mask = table.cell_mask(y, g)
        if not mask.any():
            raise DegenerateDataError(f"empty cell (y={y}, g={g})")
        e = noise * rng.standard_normal((int(mask.sum()), dimZ))
        e -= e.mean(axis=0)
        Z[mask] = m + e
    return table.with_features(Z, [f"z{j}" for j in range(dimZ)])


@dataclass(frozen=True)
class BridgeInstance:
    table: SampleTable
    scores: np.ndarray
    W: float
    rhoM_true: float
    w: np.ndarray
    delta_norms: tuple
    p_a: float
    p_b: float
    m: int
    clip_fraction: float
    unbiasedness_residual: dict = field(default_factory=dict)


def gen_bridge_instance(m: int, spectrum: EllipsoidSpec, p_a=0.45, p_b=0.3, n=100_000, seed=0, w_delta=1.0,
                        group_mass=0.5, max_retries=30) -> BridgeInstance:
    """
    Finite-dimensional linear-kernel population for the score tail bound.

    Features are ``x = (1, y, z_1, ..., z_dim)``. Within every (y, g) cell the
    ``z_j`` are independent uniforms with variance ``lambda_j``; group a's cell
    means are shifted by ``D_y = R lambda_{m+1}^r`` along ``z_{m+1}`` only, so the
    class-conditional group differences vanish on the first m spectral axes and
    have norm ``R lambda_{m+1}^r``.

    The score is ``S = <w, x> = b + w_y y + w_delta z_{m+1}`` with ``(b, w_y)``
    solved from E[S | G=g] = p_g. Support of S is checked analytically per cell;
    when it leaves [0, 1], ``w_delta`` is halved (up to ``max_retries``). No
    clipping is ever applied, so S stays linear in x.
    """
    dim = spectrum.dim
    if dim < m + 2:
        raise InputError(f"spectrum dimension {dim} must be at least m + 2 = {m + 2}")
    if m < 0:
        raise InputError("m must be non-negative")
    if not (0 < p_a < 1 and 0 < p_b < 1) or p_a == p_b:
        raise InputError("need 0 < p_a, p_b < 1 with p_a != p_b")
    lam = spectrum.lambdas
    D = spectrum.R * lam[m] ** spectrum.r
    half = math.sqrt(3.0 * lam[m])
    dp = p_a - p_b
    shift_a = math.copysign(D, dp)  # oriented so that A > 0
    A = shift_a / dp  # (p_a D_1 + (1 - p_a) D_0) / dp with D_0 = D_1 = shift_a
    z_max = max(0.0, shift_a) + half
    z_min = min(0.0, shift_a) - half

    def support(wd):
        b = p_b * wd * A
        wy = 1.0 - wd * A
        lo = hi = None
        for y in (0, 1):
            for shift in (0.0, shift_a):
                base = b + wy * y + wd * shift
                span = abs(wd) * half
                lo = base - span if lo is None else min(lo, base - span)
                hi = base + span if hi is None else max(hi, base + span)
        return b, wy, lo, hi

    # y=0 rows have S = w_delta (p_b A + z) and y=1 rows have S = 1 - w_delta ((1 - p_b) A - z),
    # so one side of each bound does not move with w_delta and is checked outright.
    if D > 0 and (-z_min > p_b * A * (1 + 1e-12) or z_max > (1 - p_b) * A * (1 + 1e-12)):
        raise InputError(
            "infeasible score: unbiased linear S leaves [0, 1] for every w_delta; "
            "use closer base rates or a smaller eigenvalue scale"
        )
    wd = float(w_delta) if D > 0 else 0.0
    for _ in range(max_retries):
        b, wy, lo, hi = support(wd)
        if lo >= -1e-12 and hi <= 1.0 + 1e-12:
            break
        wd *= 0.5
    else:
        raise InputError("infeasible score: support of S leaves [0, 1] after the retry cap")

    rng = np.random.default_rng(seed)
    y, g = _draw_labels(rng, int(n), p_a, p_b, group_mass)
    Z = (rng.random((int(n), dim)) * 2.0 - 1.0) * np.sqrt(3.0 * lam)[None, :]
    Z[:, m] += np.where(g == "a", shift_a, 0.0)
    X = np.column_stack([np.ones(int(n)), y.astype(float), Z])
    w = np.zeros(dim + 2)
    w[0], w[1], w[2 + m] = b, wy, wd
    S = X @ w
    clip = float(np.mean((S < 0.0) | (S > 1.0)))
    S = np.clip(S, 0.0, 1.0)  # removes roundoff at the support edges only
    table = SampleTable(X, y, g, score=S)
    resid = {gg: abs(float(S[g == gg].mean()) - table.base_rate(gg)) for gg in GROUPS}

    mu = {}
    for yy in (0, 1):
        for gg in GROUPS:
            mean = np.zeros(dim + 2)
            mean[0], mean[1] = 1.0, yy
            mean[2 + m] = shift_a if gg == "a" else 0.0
            mu[(yy, gg)] = mean
    norms = tuple(float(np.linalg.norm(mu[(yy, "a")] - mu[(yy, "b")])) for yy in (0, 1))
    rho_a = p_b * norms[1] + (1 - p_b) * norms[0]
    rho_b = p_a * norms[1] + (1 - p_a) * norms[0]
    return BridgeInstance(
        table=table,
        scores=S,
        W=float(np.linalg.norm(w)),
        rhoM_true=max(rho_a, rho_b),
        w=w,
        delta_norms=norms,
        p_a=p_a,
        p_b=p_b,
        m=m,
        clip_fraction=clip,
        unbiasedness_residual=resid,
    )


def mmd_oracle(idxA, idxB, spec: KernelSpec, X) -> float:
    """Squared-MMD V-statistic by direct double sums of kernel evaluations (no Gram reuse)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = [X[i] for i in idxA]
    B = [X[i] for i in idxB]
    if not A or not B:
        raise InputError("index sets must be non-empty")

    def block(P, Q):
        total = 0.0
        for p in P:
            for q in Q:
                total += eval_kernel(spec, p, q)
        return total

    nA, nB = len(A), len(B)
    return block(A, A) / nA**2 - 2.0 * block(A, B) / (nA * nB) + block(B, B) / nB**2
