"""
Pooled covariance spectra, spectral audit curves and m-widths of ellipsoids.

The pooled distribution gives each group total mass 1/2, i.e. row weights
``w_i = 1 / (2 n_g(i))``. With ``psi_i = phi(x_i) - sum_k w_k phi(x_k)`` the
covariance operator is ``sum_i w_i psi_i (x) psi_i`` and its non-zero spectrum
coincides with that of the symmetric n x n matrix

    M = D^{1/2} (I - 1 w') K (I - w 1') D^{1/2},   D = diag(w).

An eigenpair ``(lam, v)`` of ``M`` gives the RKHS-unit eigenfunction
``e = sum_i a_i psi_i`` with ``a = D^{1/2} v / sqrt(lam)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from kfa.embedding import SampleTable, _weights, is_zero_element, rkhs_norm
from kfa.errors import DegenerateDataError, InputError
from kfa.kernels import as_matrix

DEFAULT_TOP_J = 200
# Eigenpairs below this fraction of the top eigenvalue are dropped. Unit-norm
# eigenfunctions are built by dividing by sqrt(lambda), so orthonormality can
# only be certified to ~eps/lambda_rel; 1e-8 keeps that within 1e-8.
DEFAULT_REL_TOL = 1e-8


@dataclass(frozen=True)
class SpectralBasis:
    """
    Eigenvalues (non-increasing) and eigenfunction coefficients.

    ``coeffs[j]`` expands e_j over the centred feature maps ``psi_i``;
    ``phi_coeffs[j]`` expands the same element over the raw ``phi(x_i)`` and is
    what Gram algebra uses.
    """

    eigenvalues: np.ndarray
    coeffs: np.ndarray
    phi_coeffs: np.ndarray
    group_weights: np.ndarray
    weighting: str = "group"

    @property
    def n(self) -> int:
        return self.group_weights.shape[0]

    @property
    def J(self) -> int:
        return self.eigenvalues.shape[0]

    def eigenfunction_gram(self, K) -> np.ndarray:
        """J x J matrix of <e_j, e_l>; the identity up to roundoff."""
        B = self.phi_coeffs
        return B @ as_matrix(K) @ B.T

    def spectrum_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["j", "lambda_j"])
        for j, lam in enumerate(self.eigenvalues, start=1):
            writer.writerow([j, repr(float(lam))])
        return buf.getvalue()


def _row_weights(table: SampleTable, weighting: str) -> np.ndarray:
    is_a = table.g == "a"
    n_a = int(is_a.sum())
    n_b = table.n - n_a
    if n_a == 0 or n_b == 0:
        raise InputError("pooled spectrum needs both groups non-empty")
    if weighting == "group":
        return np.where(is_a, 0.5 / n_a, 0.5 / n_b)
    if weighting == "pooled":
        return np.full(table.n, 1.0 / table.n)
    raise InputError(f"unknown weighting {weighting!r}; expected 'group' or 'pooled'")


def pooled_spectrum(
    table: SampleTable,
    K,
    top_j: int = DEFAULT_TOP_J,
    weighting: str = "group",
    rel_tol: float = DEFAULT_REL_TOL,
) -> SpectralBasis:
    """Top eigenpairs of the pooled (group-weighted, centred) covariance operator."""
    K = as_matrix(K)
    n = table.n
    if K.shape != (n, n):
        raise InputError(f"Gram shape {K.shape} does not match table size {n}")
    if top_j < 1:
        raise InputError("top_j must be at least 1")
    w = _row_weights(table, weighting)

    Kw = K @ w
    M = K - Kw[None, :]
    M -= Kw[:, None]
    M += float(w @ Kw)
    s = np.sqrt(w)
    M *= s[:, None]
    M *= s[None, :]
    M = 0.5 * (M + M.T)

    J = min(int(top_j), n)
    lam, V = linalg.eigh(M, subset_by_index=[n - J, n - 1])
    lam = lam[::-1]
    V = V[:, ::-1]
    top = lam[0] if lam.size else 0.0
    keep = lam > max(rel_tol * top, 0.0) if top > 0 else np.zeros(lam.shape, dtype=bool)
    lam = lam[keep]
    V = V[:, keep]

    A = (s[:, None] * V) / np.sqrt(lam)[None, :]
    phi = A - w[:, None] * A.sum(axis=0)[None, :]
    return SpectralBasis(
        eigenvalues=lam,
        coeffs=np.ascontiguousarray(A.T),
        phi_coeffs=np.ascontiguousarray(phi.T),
        group_weights=w,
        weighting=weighting,
    )


def delta_projections(delta, basis: SpectralBasis, K) -> np.ndarray:
    """Inner products <delta, e_j> for every retained eigenfunction."""
    d = _weights(delta)
    K = as_matrix(K)
    if d.shape[0] != basis.n or K.shape[0] != basis.n:
        raise InputError("delta, basis and Gram refer to different sample sets")
    return basis.phi_coeffs @ (K @ d)


@dataclass(frozen=True)
class AuditCurve:
    m: np.ndarray
    capture: np.ndarray
    residual: np.ndarray
    delta_norm: float
    clamped: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["m", "c_m", "residual"])
        for m, c, r in zip(self.m, self.capture, self.residual):
            writer.writerow([int(m), repr(float(c)), repr(float(r))])
        return buf.getvalue()


def audit_curve(projections, delta_norm: float) -> AuditCurve:
    """Cumulative capture c_m = sum_{j<=m} <delta, e_j>^2 / ||delta||^2 for m = 0..J."""
    p = np.asarray(projections, dtype=float).ravel()
    if not delta_norm > 0.0:
        raise DegenerateDataError("audit undefined: groups indistinguishable in RKHS")
    c = np.concatenate([[0.0], np.cumsum(p**2) / delta_norm**2])
    clamped = int(np.count_nonzero(c > 1.0))
    c = np.minimum(c, 1.0)
    return AuditCurve(
        m=np.arange(c.size),
        capture=c,
        residual=1.0 - c,
        delta_norm=float(delta_norm),
        clamped=clamped,
    )


def k99(curve: AuditCurve, threshold: float = 0.99):
    """Smallest budget m with c_m >= threshold, or None if not reached within J."""
    hit = np.flatnonzero(curve.capture >= threshold)
    return int(curve.m[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class SpectralAudit:
    basis: SpectralBasis
    projections: np.ndarray
    curve: AuditCurve
    k99: int | None


def spectral_audit(table: SampleTable, K, top_j=DEFAULT_TOP_J, threshold=0.99, weighting="group") -> SpectralAudit:
    """Pooled spectrum, projections of delta-hat and the audit curve in one go."""
    from kfa.embedding import group_difference

    delta = group_difference(table)
    if is_zero_element(delta, K):
        raise DegenerateDataError("audit undefined: groups indistinguishable in RKHS")
    basis = pooled_spectrum(table, K, top_j=top_j, weighting=weighting)
    proj = delta_projections(delta, basis, K)
    curve = audit_curve(proj, rkhs_norm(delta, K))
    return SpectralAudit(basis, proj, curve, k99(curve, threshold))


# -- finite-dimensional ellipsoids -------------------------------------------


@dataclass(frozen=True)
class EllipsoidSpec:
    """
    Source-condition ellipsoid ``{Lambda^r u : ||u|| <= R}`` in R^dim.

    Eigenvalues default to the power law ``c * j^(-alpha)``.
    """

    dim: int
    alpha: float = 2.0
    c: float = 1.0
    r: float = 0.5
    R: float = 1.0
    eigenvalues: tuple | None = None

    def __post_init__(self):
        if int(self.dim) < 1:
            raise InputError("ellipsoid dimension must be at least 1")
        if not self.r > 0:
            raise InputError("source exponent r must be positive")
        if not self.R >= 0:
            raise InputError("radius R must be non-negative")
        if self.eigenvalues is not None:
            lam = np.asarray(self.eigenvalues, dtype=float)
            if lam.shape != (self.dim,):
                raise InputError("explicit eigenvalues must have length dim")
            if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
                raise InputError("eigenvalues must be positive and non-increasing")
            object.__setattr__(self, "eigenvalues", tuple(float(v) for v in lam))
        elif not self.c > 0:
            raise InputError("eigenvalue scale c must be positive")

    @property
    def lambdas(self) -> np.ndarray:
        if self.eigenvalues is not None:
            return np.asarray(self.eigenvalues)
        j = np.arange(1, self.dim + 1, dtype=float)
        return self.c * j ** (-self.alpha)


def mwidth_exact(spec: EllipsoidSpec, m: int) -> float:
    """Worst-case squared residual of the best m-dim subspace: R^2 lambda_{m+1}^{2r}."""
    if not 0 <= m < spec.dim:
        raise InputError(f"m={m} outside [0, dim={spec.dim}); finite-dimensional saturation")
    return spec.R**2 * spec.lambdas[m] ** (2 * spec.r)


def mwidth_sup_oracle(spec: EllipsoidSpec, V) -> float:
    """
    sup over the ellipsoid of ||P_{V-perp} delta||^2 for a given subspace.

    Computed as R^2 times the top eigenvalue of Lambda^r P Lambda^r, with P the
    orthogonal projector onto the complement of span(V).
    """
    d = spec.dim
    V = np.asarray(V, dtype=float)
    if V.size == 0:
        V = np.zeros((d, 0))
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != d:
        raise InputError(f"subspace basis has {V.shape[0]} rows, expected dim={d}")
    k = V.shape[1]
    if k > d:
        raise InputError("subspace dimension exceeds ambient dimension")
    if k and np.max(np.abs(V.T @ V - np.eye(k))) > 1e-10:
        raise InputError("subspace basis is not orthonormal")
    h = spec.lambdas**spec.r
    P = np.eye(d) - V @ V.T
    T = h[:, None] * P * h[None, :]
    return spec.R**2 * float(linalg.eigvalsh(T, subset_by_index=[d - 1, d - 1])[0])


def random_subspace(dim: int, m: int, rng) -> np.ndarray:
    """Haar-random m-dimensional orthonormal basis in R^dim."""
    if m == 0:
        return np.zeros((dim, 0))
    Q, R = np.linalg.qr(rng.standard_normal((dim, m)))
    return Q * np.sign(np.diag(R))[None, :]


def approx_pokemon_residual(mmd: float, epsilons) -> float:
    """Lower bound max(0, MMD^2 - sum eps_i^2) on the unaudited squared residual."""
    eps = np.asarray(epsilons, dtype=float).ravel()
    if mmd < 0 or np.any(eps < 0) or not math.isfinite(mmd):
        raise InputError("mmd and epsilons must be non-negative")
    return max(0.0, mmd**2 - float(np.sum(eps**2)))


def eigendecay_fit(basis_or_eigs, j_range=None):
    """
    Least-squares fit of log lambda_j = log c - alpha log j.

    Parameters
    ----------
    basis_or_eigs : SpectralBasis or array of eigenvalues (lambda_1 first)
    j_range : (lo, hi), optional
        1-based inclusive index range; defaults to every retained eigenvalue.

    Returns
    -------
    (alpha_hat, c_hat)
    """
    lam = basis_or_eigs.eigenvalues if isinstance(basis_or_eigs, SpectralBasis) else basis_or_eigs
    lam = np.asarray(lam, dtype=float)
    lo, hi = (1, lam.size) if j_range is None else j_range
    j = np.arange(max(1, lo), min(hi, lam.size) + 1)
    vals = lam[j - 1]
    ok = vals > 0
    if ok.sum() < 3:
        raise DegenerateDataError("eigendecay fit needs at least 3 positive eigenvalues in range")
    x = np.log(j[ok].astype(float))
    yv = np.log(vals[ok])
    A = np.column_stack([np.ones_like(x), x])
    (intercept, slope), *_ = np.linalg.lstsq(A, yv, rcond=None)
    return float(-slope), float(math.exp(intercept))


def loglog_slope(x, y) -> float:
    """OLS slope of log y against log x."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    A = np.column_stack([np.ones_like(lx), lx])
    (_, slope), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(slope)
