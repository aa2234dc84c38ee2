"""
Kernel evaluation, Gram matrices and median-heuristic bandwidths.

Three families are supported::

    rbf      k(x, z) = exp(-||x - z||^2 / (2 sigma^2))
    laplace  k(x, z) = exp(-||x - z||_1 / sigma)
    linear   k(x, z) = <x, z>

Pairwise distance blocks are the hot loop of the package; they run through a
numba kernel unless ``KFA_USE_NUMBA=0`` (see :mod:`kfa._accel`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from kfa._accel import USE_NUMBA, njit, prange
from kfa.errors import DegenerateDataError, InputError

FAMILIES = ("rbf", "laplace", "linear")
_ALIASES = {"gaussian-rbf": "rbf", "gaussian": "rbf", "rbf": "rbf", "laplace": "laplace", "linear": "linear"}

DEFAULT_MEDIAN_CAP = 5000
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth. The bandwidth is ignored for ``linear``."""

    family: str = "rbf"
    bandwidth: float = 1.0

    def __post_init__(self):
        fam = _ALIASES.get(str(self.family).strip().lower())
        if fam is None:
            raise InputError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        bw = float(self.bandwidth)
        if fam != "linear" and not (math.isfinite(bw) and bw > 0):
            raise InputError(f"bandwidth must be a positive finite number, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", bw)

    def to_dict(self):
        return {"family": self.family, "bandwidth": self.bandwidth}


@dataclass(frozen=True)
class Gram:
    """Dense kernel matrix together with the kernel that produced it."""

    values: np.ndarray
    spec: KernelSpec

    @property
    def n(self) -> int:
        return self.values.shape[0]


def as_matrix(K) -> np.ndarray:
    """Return the raw matrix of a :class:`Gram` or array-like."""
    if isinstance(K, Gram):
        return K.values
    return np.asarray(K, dtype=float)


def _as_points(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be a 2-D array of feature vectors, got shape {X.shape}")
    if X.shape[0] < 1:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(X)


# -- distance kernels ---------------------------------------------------------


@njit(cache=True, parallel=True)
def _sqdist_numba(X, Z):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = X[i, k] - Z[j, k]
                s += t * t
            out[i, j] = s
    return out


@njit(cache=True, parallel=True)
def _l1dist_numba(X, Z):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += abs(X[i, k] - Z[j, k])
            out[i, j] = s
    return out


def _dist_numpy(X, Z, power):
    n, d = X.shape
    m = Z.shape[0]
    out = np.empty((n, m))
    step = max(1, _CHUNK_ELEMS // max(1, m * d))
    for i0 in range(0, n, step):
        diff = X[i0 : i0 + step, None, :] - Z[None, :, :]
        if power == 2:
            out[i0 : i0 + step] = np.einsum("ijk,ijk->ij", diff, diff)
        else:
            out[i0 : i0 + step] = np.abs(diff).sum(axis=-1)
    return out


def _sqdist_numpy(X, Z):
    return _dist_numpy(X, Z, 2)


def _l1dist_numpy(X, Z):
    return _dist_numpy(X, Z, 1)


def pairwise_sqdist(X, Z):
    if USE_NUMBA:
        return _sqdist_numba(X, Z)
    return _sqdist_numpy(X, Z)


def pairwise_l1(X, Z):
    if USE_NUMBA:
        return _l1dist_numba(X, Z)
    return _l1dist_numpy(X, Z)


def _kernel_block(spec: KernelSpec, X, Z):
    if spec.family == "linear":
        return X @ Z.T
    if spec.family == "rbf":
        D = pairwise_sqdist(X, Z)
        D *= -1.0 / (2.0 * spec.bandwidth**2)
    else:
        D = pairwise_l1(X, Z)
        D *= -1.0 / spec.bandwidth
    np.exp(D, out=D)
    return D


# -- public operations --------------------------------------------------------


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise InputError("kernel arguments contain non-finite entries")
    if spec.family == "linear":
        return float(np.dot(x, x2))
    diff = x - x2
    if spec.family == "rbf":
        return math.exp(-float(np.dot(diff, diff)) / (2.0 * spec.bandwidth**2))
    return math.exp(-float(np.abs(diff).sum()) / spec.bandwidth)


def gram(spec: KernelSpec, X) -> Gram:
    """Kernel matrix of ``X`` against itself, stored exactly symmetric."""
    X = _as_points(X)
    K = _kernel_block(spec, X, X)
    iu = np.triu_indices(K.shape[0], k=1)
    K[(iu[1], iu[0])] = K[iu]
    return Gram(K, spec)


def cross_gram(spec: KernelSpec, X, Z) -> np.ndarray:
    """n x m matrix of k(x_i, z_j)."""
    X = _as_points(X, "X")
    Z = _as_points(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise InputError(f"dimension mismatch: X has {X.shape[1]} columns, Z has {Z.shape[1]}")
    return _kernel_block(spec, X, Z)


def median_heuristic(X, cap: int = DEFAULT_MEDIAN_CAP, seed: int = 0) -> float:
    """
    Bandwidth from the median of pairwise squared distances.

    Returns ``sigma = sqrt(median{||x_i - x_j||^2 : i < j})`` computed on a uniform
    subsample (without replacement) of at most ``cap`` rows. An even number of
    pairs takes the mean of the two central order statistics.
    """
    X = _as_points(X)
    n = X.shape[0]
    if n < 2:
        raise InputError("median heuristic needs at least 2 points")
    if cap < 2:
        raise InputError("subsample cap must be at least 2")
    if n > cap:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=cap, replace=False))
        X = X[idx]
    D = pairwise_sqdist(X, X)
    med = float(np.median(D[np.triu_indices(D.shape[0], k=1)]))
    if med <= 0.0:
        raise DegenerateDataError("degenerate sample: zero median distance")
    return math.sqrt(med)


def resolve_spec(family: str, bandwidth, X=None, cap: int = DEFAULT_MEDIAN_CAP, seed: int = 0) -> KernelSpec:
    """Build a KernelSpec, resolving ``bandwidth="median"`` against ``X``."""
    fam = KernelSpec(family, 1.0).family
    if fam == "linear":
        return KernelSpec("linear", 1.0)
    if isinstance(bandwidth, str):
        if bandwidth.strip().lower() != "median":
            try:
                bandwidth = float(bandwidth)
            except ValueError:
                raise InputError(f"bandwidth must be a number or 'median', got {bandwidth!r}") from None
        else:
            if X is None:
                raise InputError("median bandwidth needs data")
            bandwidth = median_heuristic(X, cap=cap, seed=seed)
    return KernelSpec(fam, bandwidth)
