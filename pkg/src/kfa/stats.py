"""
Inference: permutation tests, HSIC, percentile bootstrap and BH-FDR.

Permutation nulls relabel groups uniformly at random; the p-value uses the +1
convention ``(1 + #{T_b >= T_obs}) / (B + 1)`` so it is never exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from kfa._accel import njit, prange
from kfa.embedding import GROUPS, SampleTable
from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import as_matrix

STRATA = ("within-group", "whole-sample", "within-(y,g)")
MAX_UNDEFINED_FRACTION = 0.05
REDRAW_FACTOR = 10
_BATCH = 128


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    B: int
    seed: int

    __test__ = False  # not a pytest class

    def to_dict(self):
        return {"statistic": self.statistic, "pValue": self.p_value, "B": self.B, "seed": self.seed}


@dataclass(frozen=True)
class IntervalEstimate:
    point: float
    lo: float
    hi: float
    level: float
    B: int
    redrawn: int = 0
    point_inside: bool = True

    def to_dict(self):
        return asdict(self)


def _check_B(B):
    if int(B) != B or B < 1:
        raise InputError(f"replicate count must be a positive integer, got {B!r}")
    return int(B)


def _tie_tol(obs):
    return 1e-12 * max(1.0, abs(obs))


def _pvalue(obs, null):
    return (1.0 + float(np.count_nonzero(null >= obs - _tie_tol(obs)))) / (null.size + 1.0)


# -- MMD permutation test -----------------------------------------------------


@njit(cache=True, parallel=True)
def _perm_mmd2_numba(K, in_a, nA, nB):
    B, n = in_a.shape
    out = np.empty(B)
    for b in prange(B):
        u = np.empty(n)
        for i in range(n):
            u[i] = 1.0 / nA if in_a[b, i] else -1.0 / nB
        s = 0.0
        for i in range(n):
            row = 0.0
            for j in range(i + 1, n):
                row += K[i, j] * u[j]
            s += u[i] * (2.0 * row + K[i, i] * u[i])
        out[b] = s
    return out


def _perm_mmd2_numpy(K, in_a, nA, nB):
    out = np.empty(in_a.shape[0])
    for s in range(0, in_a.shape[0], _BATCH):
        U = np.where(in_a[s : s + _BATCH], 1.0 / nA, -1.0 / nB)
        out[s : s + _BATCH] = np.einsum("bi,bi->b", U @ K, U)
    return out


def mmd2_batch(K, in_a, backend=None) -> np.ndarray:
    """
    Squared-MMD V-statistics for many group labelings at once.

    ``in_a`` is a boolean (B, n) matrix; every row must have the same number of
    True entries. ``backend`` is ``"numba"`` or ``"numpy"``; the default is the
    batched BLAS form, which beats the compiled loop for every n measured in
    ``benchmarks/bench_accel.py``.
    """
    K = np.ascontiguousarray(as_matrix(K))
    in_a = np.ascontiguousarray(np.atleast_2d(np.asarray(in_a, dtype=bool)))
    nA = int(in_a[0].sum())
    nB = in_a.shape[1] - nA
    if nA == 0 or nB == 0:
        raise InputError("both groups must be non-empty")
    if backend not in (None, "numpy", "numba"):
        raise InputError(f"unknown backend {backend!r}")
    if backend == "numba":
        return _perm_mmd2_numba(K, in_a, float(nA), float(nB))
    return _perm_mmd2_numpy(K, in_a, float(nA), float(nB))


def permutations(labels, B, seed) -> np.ndarray:
    """B independent uniform permutations of ``labels``, one per row."""
    rng = np.random.default_rng(seed)
    return rng.permuted(np.tile(np.asarray(labels), (B, 1)), axis=1)


def permutation_test_mmd(table: SampleTable, K, B: int = 999, seed: int = 0, backend=None) -> TestResult:
    """One-sided group-label permutation test of P_a = P_b using the squared MMD."""
    B = _check_B(B)
    K = as_matrix(K)
    if K.shape != (table.n, table.n):
        raise InputError("Gram matrix does not match the table")
    in_a = table.g == "a"
    if in_a.all() or not in_a.any():
        raise InputError("both groups must be non-empty")
    obs = float(mmd2_batch(K, in_a[None, :], backend="numpy")[0])
    null = mmd2_batch(K, permutations(in_a, B, seed), backend=backend)
    return TestResult(obs, _pvalue(obs, null), B, int(seed))


# -- HSIC ---------------------------------------------------------------------


def _center(M):
    M = M - M.mean(axis=0, keepdims=True)
    return M - M.mean(axis=1, keepdims=True)


def hsic_vstat(K, L) -> float:
    """Biased HSIC ``trace(K H L H) / n^2``, clamped at zero."""
    K = as_matrix(K)
    L = as_matrix(L)
    if K.shape != L.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"Gram shapes differ: {K.shape} vs {L.shape}")
    n = K.shape[0]
    v = float(np.sum(_center(K) * _center(L))) / n**2
    return max(v, 0.0)


def permutation_test_hsic(K, L, B: int = 999, seed: int = 0) -> TestResult:
    """Independence test: permute the sample order of L against K."""
    B = _check_B(B)
    K = as_matrix(K)
    L = as_matrix(L)
    if K.shape != L.shape:
        raise InputError(f"Gram shapes differ: {K.shape} vs {L.shape}")
    n = K.shape[0]
    Kc = _center(K)
    Lc = _center(L)
    obs = max(float(np.sum(Kc * Lc)) / n**2, 0.0)
    rng = np.random.default_rng(seed)
    null = np.empty(B)
    for b in range(B):
        p = rng.permutation(n)
        null[b] = max(float(np.sum(Kc * Lc[np.ix_(p, p)])) / n**2, 0.0)
    return TestResult(obs, _pvalue(obs, null), B, int(seed))


# -- bootstrap ----------------------------------------------------------------


def _strata_index(table: SampleTable, strata: str):
    if strata == "whole-sample":
        return [np.arange(table.n)]
    if strata == "within-group":
        parts = [np.flatnonzero(table.g == g) for g in GROUPS]
    elif strata == "within-(y,g)":
        parts = [np.flatnonzero(table.cell_mask(y, g)) for y in (0, 1) for g in GROUPS]
    else:
        raise InputError(f"unknown strata policy {strata!r}; expected one of {STRATA}")
    return [p for p in parts if p.size]


def resample_index(table: SampleTable, strata: str, rng) -> np.ndarray:
    """Indices of one with-replacement resample, sizes preserved per stratum."""
    return _draw(_strata_index(table, strata), rng)


def _draw(parts, rng):
    return np.concatenate([p[rng.integers(0, p.size, size=p.size)] for p in parts])


def nearest_rank(sorted_vals, q: float) -> float:
    """Nearest-rank quantile: the ceil(q B)-th smallest value (at least the first)."""
    B = len(sorted_vals)
    k = max(1, math.ceil(q * B - 1e-12))
    return float(sorted_vals[min(k, B) - 1])


def _interval(point, reps, level, B, redrawn):
    reps = np.sort(np.asarray(reps, dtype=float))
    alpha = (1.0 - level) / 2.0
    lo = nearest_rank(reps, alpha)
    hi = nearest_rank(reps, 1.0 - alpha)
    return IntervalEstimate(float(point), lo, hi, float(level), int(B), int(redrawn), bool(lo <= point <= hi))


def _check_level(level):
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")


def bootstrap_ci(statistic, table, B: int = 1000, level: float = 0.95, seed: int = 0,
                 strata: str = "within-group") -> IntervalEstimate:
    """
    Percentile bootstrap interval for ``statistic(table) -> float``.

    ``table`` is a SampleTable (any strata policy) or a plain array, which is
    resampled along its first axis (whole-sample only).

    A resample on which the statistic is undefined (it raises
    DegenerateDataError / ValueError or returns a non-finite value) is redrawn.
    More than 5% undefined draws, or more than ``10 B`` attempts, is an error.
    """
    B = _check_B(B)
    _check_level(level)
    point = float(statistic(table))
    if isinstance(table, SampleTable):
        parts = _strata_index(table, strata)
        take = table.take
    else:
        table = np.asarray(table)
        if strata != "whole-sample":
            raise InputError("plain arrays only support the whole-sample policy")
        parts = [np.arange(table.shape[0])]
        take = table.__getitem__
    rng = np.random.default_rng(seed)
    reps = []
    failed = 0
    attempts = 0
    while len(reps) < B:
        if attempts >= REDRAW_FACTOR * B:
            break
        attempts += 1
        sub = take(_draw(parts, rng))
        try:
            v = float(statistic(sub))
        except (DegenerateDataError, ValueError, ZeroDivisionError):
            v = math.nan
        if math.isfinite(v):
            reps.append(v)
        else:
            failed += 1
    if len(reps) < B or failed > MAX_UNDEFINED_FRACTION * attempts:
        raise DegenerateDataError(f"statistic undefined on {failed} of {attempts} bootstrap resamples")
    return _interval(point, reps, level, B, failed)


def bootstrap_mmd_ci(table: SampleTable, K, B: int = 1000, level: float = 0.95, seed: int = 0) -> IntervalEstimate:
    """
    Within-group percentile bootstrap of the squared-MMD V-statistic.

    Resamples act on the fixed Gram matrix through multiplicity weights, so no
    kernel is re-evaluated.
    """
    B = _check_B(B)
    _check_level(level)
    K = as_matrix(K)
    ia = np.flatnonzero(table.g == "a")
    ib = np.flatnonzero(table.g == "b")
    if ia.size == 0 or ib.size == 0:
        raise DegenerateDataError("both groups must be non-empty")
    u0 = np.where(table.g == "a", 1.0 / ia.size, -1.0 / ib.size)
    point = max(float(u0 @ K @ u0), 0.0)
    rng = np.random.default_rng(seed)
    reps = np.empty(B)
    for s in range(0, B, _BATCH):
        nb = min(_BATCH, B - s)
        U = np.zeros((nb, table.n))
        for r in range(nb):
            U[r] += np.bincount(ia[rng.integers(0, ia.size, ia.size)], minlength=table.n) / ia.size
            U[r] -= np.bincount(ib[rng.integers(0, ib.size, ib.size)], minlength=table.n) / ib.size
        reps[s : s + nb] = np.maximum(np.einsum("bi,bi->b", U @ K, U), 0.0)
    return _interval(point, reps, level, B, 0)


# -- multiplicity -------------------------------------------------------------


def bh_fdr(p_values, q: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up rejection mask in the input order."""
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise InputError("p-values must lie in (0, 1]")
    if not 0.0 < q < 1.0:
        raise InputError(f"q must lie in (0, 1), got {q}")
    order = np.argsort(p, kind="stable")
    m = p.size
    ok = np.flatnonzero(p[order] <= q * np.arange(1, m + 1) / m)
    reject = np.zeros(m, dtype=bool)
    if ok.size:
        reject[order[: ok[-1] + 1]] = True
    return reject
