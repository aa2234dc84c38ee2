"""
Empirical mean embeddings represented as coefficient vectors over the sample.

An RKHS element ``f = sum_i w_i phi(x_i)`` is stored as its weight vector ``w``;
every inner product is then a Gram quadratic form ``w' K v``. No feature space is
ever materialised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import as_matrix

GROUPS = ("a", "b")
_SUM_TOL = 1e-9
# Quadratic forms at or below this (relative to the largest Gram diagonal entry)
# are treated as an exactly zero RKHS element.
ZERO_QUAD_TOL = 1e-12

diagnostics = {"clamped_quadratic_forms": 0}


def reset_diagnostics():
    diagnostics["clamped_quadratic_forms"] = 0


@dataclass(frozen=True)
class SampleTable:
    """Rows of (features, label y in {0,1}, group g in {'a','b'}) with optional score and prediction."""

    features: np.ndarray
    y: np.ndarray
    g: np.ndarray
    score: np.ndarray | None = None
    yhat: np.ndarray | None = None
    ids: np.ndarray | None = None
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if n < 1:
            raise InputError("a sample table needs at least one row")
        y = np.asarray(self.y)
        if y.shape != (n,):
            raise InputError(f"y has shape {y.shape}, expected ({n},)")
        if not np.all((y == 0) | (y == 1)):
            raise InputError("labels y must be binary 0/1")
        g = np.asarray(self.g).astype(str)
        if g.shape != (n,):
            raise InputError(f"g has shape {g.shape}, expected ({n},)")
        bad = sorted(set(np.unique(g)) - set(GROUPS))
        if bad:
            raise InputError(f"groups must be 'a' or 'b'; found {bad}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "y", y.astype(np.int8))
        object.__setattr__(self, "g", g)
        if self.score is not None:
            s = np.asarray(self.score, dtype=float)
            if s.shape != (n,):
                raise InputError(f"score has shape {s.shape}, expected ({n},)")
            if not np.all((s >= 0.0) & (s <= 1.0)):
                raise InputError("scores must lie in [0, 1]")
            object.__setattr__(self, "score", s)
        if self.yhat is not None:
            yh = np.asarray(self.yhat)
            if yh.shape != (n,) or not np.all((yh == 0) | (yh == 1)):
                raise InputError("predictions yhat must be a binary vector of length n")
            object.__setattr__(self, "yhat", yh.astype(np.int8))
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def cell_mask(self, y=None, g=None) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        if y is not None:
            mask &= self.y == y
        if g is not None:
            mask &= self.g == g
        return mask

    def cell_counts(self) -> dict:
        return {f"y{y}_{g}": int(self.cell_mask(y, g).sum()) for y in (0, 1) for g in GROUPS}

    def base_rate(self, g) -> float:
        mask = self.g == g
        if not mask.any():
            raise DegenerateDataError(f"group {g!r} is empty")
        return float(self.y[mask].mean())

    def take(self, idx) -> SampleTable:
        idx = np.asarray(idx)
        return SampleTable(
            features=self.features[idx],
            y=self.y[idx],
            g=self.g[idx],
            score=None if self.score is None else self.score[idx],
            yhat=None if self.yhat is None else self.yhat[idx],
            ids=self.ids[idx],
            feature_names=self.feature_names,
        )

    def with_features(self, Z, names=()) -> SampleTable:
        return replace(self, features=np.asarray(Z, dtype=float), feature_names=tuple(names))

    def with_score(self, s) -> SampleTable:
        return replace(self, score=s)

    def with_yhat(self, yhat) -> SampleTable:
        return replace(self, yhat=yhat)


def _infer_kind(w) -> str:
    total = float(w.sum())
    if abs(total) <= _SUM_TOL:
        return "difference"
    if abs(total - 1.0) <= _SUM_TOL and w.min() >= 0.0:
        return "mean"
    return "combination"


@dataclass(frozen=True)
class EmbeddingCoeffs:
    """
    Weight vector over sample indices representing an RKHS element.

    ``kind`` is ``"mean"`` (non-negative, sums to one), ``"difference"``
    (sums to zero) or ``"combination"`` for any other linear combination.
    """

    weights: np.ndarray
    kind: str = "mean"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "weights", w)
        if self.kind == "mean":
            if abs(w.sum() - 1.0) > _SUM_TOL or w.min(initial=0.0) < 0.0:
                raise InputError("mean embedding weights must be non-negative and sum to 1")
        elif self.kind == "difference":
            if abs(w.sum()) > _SUM_TOL:
                raise InputError("difference weights must sum to 0")
        elif self.kind != "combination":
            raise InputError(f"unknown embedding kind {self.kind!r}")

    def __len__(self):
        return self.weights.shape[0]

    def __add__(self, other):
        w = self.weights + _weights(other)
        return EmbeddingCoeffs(w, _infer_kind(w))

    def __sub__(self, other):
        w = self.weights - _weights(other)
        return EmbeddingCoeffs(w, _infer_kind(w))

    def __mul__(self, c):
        w = float(c) * self.weights
        return EmbeddingCoeffs(w, _infer_kind(w))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def _weights(a) -> np.ndarray:
    if isinstance(a, EmbeddingCoeffs):
        return a.weights
    return np.asarray(a, dtype=float).ravel()


def _resolve_subset(table: SampleTable, subset):
    if subset is None:
        return np.ones(table.n, dtype=bool), "all rows"
    if isinstance(subset, tuple) and len(subset) == 2:
        y, g = subset
        return table.cell_mask(y, g), f"(y={y}, g={g})"
    if callable(subset):
        mask = np.asarray(subset(table), dtype=bool)
    else:
        mask = np.asarray(subset)
        if mask.dtype != bool:
            idx = mask.astype(int)
            mask = np.zeros(table.n, dtype=bool)
            mask[idx] = True
    if mask.shape != (table.n,):
        raise InputError("subset mask does not match the table length")
    return mask, "subset"


def mean_embedding(table: SampleTable, subset=None) -> EmbeddingCoeffs:
    """
    Uniform weights over a subset of rows.

    ``subset`` may be ``None`` (all rows), a ``(y, g)`` cell (either entry may be
    ``None``), a boolean mask, an index array, or a callable returning a mask.
    """
    mask, label = _resolve_subset(table, subset)
    count = int(mask.sum())
    if count == 0:
        raise DegenerateDataError(f"empty cell {label}: cannot form a mean embedding")
    w = np.zeros(table.n)
    w[mask] = 1.0 / count
    return EmbeddingCoeffs(w, "mean")


@dataclass(frozen=True)
class ConditionalEmbeddings:
    mu_a: EmbeddingCoeffs
    mu_b: EmbeddingCoeffs
    mu_0a: EmbeddingCoeffs
    mu_0b: EmbeddingCoeffs
    mu_1a: EmbeddingCoeffs
    mu_1b: EmbeddingCoeffs
    delta: EmbeddingCoeffs
    delta_0: EmbeddingCoeffs
    delta_1: EmbeddingCoeffs
    p_a: float
    p_b: float
    delta_p: float
    degenerate_base_rate: bool

    def cell(self, y, g) -> EmbeddingCoeffs:
        return getattr(self, f"mu_{y}{g}")


def conditional_embeddings(table: SampleTable) -> ConditionalEmbeddings:
    """Group, cell and difference embeddings plus empirical base rates."""
    cells = {}
    for y in (0, 1):
        for g in GROUPS:
            cells[(y, g)] = mean_embedding(table, (y, g))
    mu_a = mean_embedding(table, (None, "a"))
    mu_b = mean_embedding(table, (None, "b"))
    p_a = table.base_rate("a")
    p_b = table.base_rate("b")
    return ConditionalEmbeddings(
        mu_a=mu_a,
        mu_b=mu_b,
        mu_0a=cells[(0, "a")],
        mu_0b=cells[(0, "b")],
        mu_1a=cells[(1, "a")],
        mu_1b=cells[(1, "b")],
        delta=mu_a - mu_b,
        delta_0=cells[(0, "a")] - cells[(0, "b")],
        delta_1=cells[(1, "a")] - cells[(1, "b")],
        p_a=p_a,
        p_b=p_b,
        delta_p=p_a - p_b,
        degenerate_base_rate=p_a in (0.0, 1.0) or p_b in (0.0, 1.0),
    )


def group_difference(table: SampleTable) -> EmbeddingCoeffs:
    """delta-hat = mu-hat_a - mu-hat_b (needs only both groups non-empty)."""
    return mean_embedding(table, (None, "a")) - mean_embedding(table, (None, "b"))


def rkhs_inner(alpha, beta, K) -> float:
    K = as_matrix(K)
    a = _weights(alpha)
    b = _weights(beta)
    if a.shape[0] != K.shape[0] or b.shape[0] != K.shape[0]:
        raise InputError(f"coefficient lengths {a.shape[0]}, {b.shape[0]} do not match Gram size {K.shape[0]}")
    return float(a @ (K @ b))


def rkhs_norm(alpha, K) -> float:
    q = rkhs_inner(alpha, alpha, K)
    if q < 0.0:
        diagnostics["clamped_quadratic_forms"] += 1
        q = 0.0
    return math.sqrt(q)


def is_zero_element(alpha, K) -> bool:
    """True when the quadratic form is indistinguishable from roundoff."""
    M = as_matrix(K)
    scale = max(1e-300, float(np.max(np.abs(np.diag(M)))))
    return rkhs_inner(alpha, alpha, M) <= ZERO_QUAD_TOL * scale


def _as_index(idx, n, name):
    idx = np.asarray(idx)
    if idx.dtype == bool:
        if idx.shape != (n,):
            raise InputError(f"{name} mask has the wrong length")
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.intp).ravel()
    if idx.size == 0:
        raise InputError(f"{name} is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise InputError(f"{name} contains out-of-range indices")
    return idx


def mmd2_vstat(idxA, idxB, K) -> float:
    """Biased (V-statistic) squared MMD between two index sets of one Gram matrix."""
    K = as_matrix(K)
    n = K.shape[0]
    A = _as_index(idxA, n, "idxA")
    B = _as_index(idxB, n, "idxB")
    sAA = K[np.ix_(A, A)].sum()
    sBB = K[np.ix_(B, B)].sum()
    sAB = K[np.ix_(A, B)].sum()
    nA, nB = A.size, B.size
    return float(sAA / nA**2 - 2.0 * sAB / (nA * nB) + sBB / nB**2)


def witness_eval(alpha_p, alpha_q, K, cross_k) -> np.ndarray:
    """
    Evaluate the unit-norm MMD witness ``(mu_P - mu_Q) / ||mu_P - mu_Q||``.

    ``cross_k`` is the n x m matrix ``k(x_i, z_j)`` between the sample and the
    query points.
    """
    d = _weights(alpha_p) - _weights(alpha_q)
    M = as_matrix(K)
    C = np.asarray(cross_k, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if C.shape[0] != d.shape[0]:
        raise InputError("cross-kernel rows do not match the coefficient length")
    if is_zero_element(d, M):
        raise DegenerateDataError("witness undefined: embeddings coincide")
    return (d @ C) / rkhs_norm(d, M)
