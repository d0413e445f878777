"""Kernel estimates of the confounder-dependent covariance of residuals.

The estimator at a confounder value ``z0`` is the kernel-weighted average
of residual cross-products, computed pair by pair with its own bandwidth,
then symmetrised and repaired to be positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import (
    InsufficientDataError,
    ParameterError,
    SelectionError,
    SparseRegionError,
    SymmetryError,
)
from .linalg import eigh_desc

SQRT_2PI = np.sqrt(2.0 * np.pi)
DEFAULT_MIN_WEIGHT = 10.0
DEFAULT_EIG_FLOOR_REL = 1e-8
DEFAULT_BANDWIDTH_GRID = (0.1, 0.15, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0)


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ParameterError(f"unsupported kernel family {self.family!r}")
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")


def kernel_weight(spec: KernelSpec, d):
    """Scaled Gaussian density ``phi(d / h) / h``."""
    u = np.asarray(d, dtype=np.float64) / spec.bandwidth
    return np.exp(-0.5 * u * u) / (SQRT_2PI * spec.bandwidth)


def pair_index(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the upper triangle, diagonal included."""
    return np.triu_indices(p)


def cross_products(R: np.ndarray) -> np.ndarray:
    """Columns ``R[:, j] * R[:, k]`` for every pair ``j <= k``."""
    iu, ju = pair_index(R.shape[1])
    return R[:, iu] * R[:, ju]


def _bandwidth_groups(H: np.ndarray):
    iu, ju = pair_index(H.shape[0])
    hs = H[iu, ju]
    uniq, groups = np.unique(hs, return_inverse=True)
    return uniq, groups.astype(np.intp)


def eig_floor(S: np.ndarray, rel: float = DEFAULT_EIG_FLOOR_REL) -> np.ndarray:
    """Eigenvalue floor ``rel * trace / p`` (vectorised over stacks)."""
    p = S.shape[-1]
    return rel * np.maximum(np.trace(S, axis1=-2, axis2=-1), 0.0) / p


def nearest_psd(M, floor: float = 0.0):
    """Clip the eigenvalues of symmetric ``M`` at ``floor`` and recompose.

    Matrices that already satisfy the floor are returned as given (after
    exact symmetrisation), so the repair is a no-op on well-posed input.

    Raises
    ------
    SymmetryError
        If ``M`` departs from symmetry by more than ``1e-8`` relative to its
        largest entry.
    """
    M = np.asarray(M, dtype=np.float64)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-8 * scale:
        raise SymmetryError("matrix is not symmetric")
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    if w[0] >= floor:
        return M
    out = (V * np.maximum(w, floor)) @ V.T
    out = 0.5 * (out + out.T)
    lo = np.linalg.eigvalsh(out)[0]
    if lo < floor:
        out = out + (floor - lo) * np.eye(out.shape[0])
    return out


def _nearest_psd_stack(S: np.ndarray, rel: float):
    """Batched :func:`nearest_psd` with per-matrix relative floors.

    Returns the repaired stack and a mask of matrices that needed repair.
    """
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    floors = eig_floor(S, rel)
    w, V = np.linalg.eigh(S)
    bad = w[:, 0] < floors
    if bad.any():
        wc = np.maximum(w[bad], floors[bad, None])
        fixed = np.einsum("mij,mj,mkj->mik", V[bad], wc, V[bad])
        fixed = 0.5 * (fixed + np.swapaxes(fixed, -1, -2))
        lo = np.linalg.eigvalsh(fixed)[:, 0]
        short = np.maximum(floors[bad] - lo, 0.0)
        fixed = fixed + short[:, None, None] * np.eye(S.shape[-1])
        S[bad] = fixed
    return S, bad


@dataclass(frozen=True)
class PartialCov:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def partial_covariance(R) -> PartialCov:
    """Second-moment matrix ``R.T @ R / n`` of mean-adjusted residuals."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] < 2:
        raise InsufficientDataError("partial covariance needs at least 2 rows")
    S = R.T @ R / R.shape[0]
    S = 0.5 * (S + S.T)
    w, V = eigh_desc(S)
    return PartialCov(matrix=S, eigenvalues=w, eigenvectors=V)


@dataclass(frozen=True, eq=False)
class CondCovModel:
    """Residuals, confounder values and per-pair bandwidths.

    ``bandwidths`` is a symmetric ``p x p`` matrix; entry ``(j, k)`` is the
    bandwidth used for the ``(j, k)`` covariance entry.
    """

    residuals: np.ndarray
    z: np.ndarray
    bandwidths: np.ndarray
    eig_floor_rel: float = DEFAULT_EIG_FLOOR_REL
    min_weight: float = DEFAULT_MIN_WEIGHT
    _products: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = np.ascontiguousarray(self.residuals, dtype=np.float64)
        if R.ndim == 1:
            R = R[:, None]
        z = np.ascontiguousarray(self.z, dtype=np.float64).ravel()
        H = np.asarray(self.bandwidths, dtype=np.float64)
        if H.ndim == 0:
            H = np.full((R.shape[1], R.shape[1]), float(H))
        if z.shape[0] != R.shape[0]:
            raise ParameterError("residuals and z differ in length")
        if H.shape != (R.shape[1], R.shape[1]):
            raise ParameterError(f"bandwidth matrix must be {R.shape[1]}x{R.shape[1]}")
        if not np.array_equal(H, H.T):
            raise ParameterError("bandwidth matrix must be symmetric")
        if not (np.isfinite(H).all() and (H > 0).all()):
            raise ParameterError("bandwidths must be positive and finite")
        for name, a in (("residuals", R), ("z", z), ("bandwidths", H)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        prods = np.ascontiguousarray(cross_products(R))
        object.__setattr__(self, "_products", prods)

    @property
    def p(self) -> int:
        return self.residuals.shape[1]

    @property
    def z_range(self) -> tuple[float, float]:
        return float(self.z.min()), float(self.z.max())

    def evaluate(self, z0, on_sparse: str = "raise"):
        """Covariance estimates at every value in ``z0``.

        Parameters
        ----------
        z0 : array_like
            Query values of the confounder.
        on_sparse : {"raise", "flag"}
            With ``"flag"`` sparse queries are still estimated (if any weight
            is left at all) and reported in the returned mask.

        Returns
        -------
        S : ndarray, shape (m, p, p)
            Symmetric matrices with eigenvalues at or above the floor.
        weight : ndarray, shape (m,)
            Effective number of observations for the smallest bandwidth.
        sparse : ndarray of bool, shape (m,)
        repaired : ndarray of bool, shape (m,)
            Matrices whose eigenvalues had to be clipped.
        """
        z0 = np.ascontiguousarray(np.atleast_1d(z0), dtype=np.float64)
        if not np.isfinite(z0).all():
            raise ParameterError("query confounder values must be finite")
        uniq, groups = _bandwidth_groups(self.bandwidths)
        est, wsum = kernels.kernel_smooth(self.z, self._products, z0, uniq, groups)
        est, wsum = np.asarray(est), np.asarray(wsum)
        weight = wsum.min(axis=1)
        sparse = weight < self.min_weight
        empty = ~(weight > 0.0)
        if on_sparse == "raise" and sparse.any():
            t = int(np.flatnonzero(sparse)[0])
            raise SparseRegionError(z0[t], weight[t], self.min_weight)
        if empty.any():
            t = int(np.flatnonzero(empty)[0])
            raise SparseRegionError(z0[t], weight[t], self.min_weight)
        p = self.p
        iu, ju = pair_index(p)
        S = np.empty((z0.size, p, p))
        S[:, iu, ju] = est
        S[:, ju, iu] = est
        S, repaired = _nearest_psd_stack(S, self.eig_floor_rel)
        return S, weight, sparse, repaired


def estimate_cond_cov(model: CondCovModel, z0: float) -> np.ndarray:
    """Kernel-weighted residual covariance at a single confounder value."""
    S, _, _, _ = model.evaluate([z0], on_sparse="raise")
    return S[0]


def cv_folds(n: int, folds: int, hours=None, block_len: int = 24) -> np.ndarray:
    """Fold label per row; whole day-blocks are dealt to folds in turn."""
    if hours is None:
        day = np.arange(n) // block_len
    else:
        day = np.floor(np.asarray(hours, dtype=np.float64) / block_len).astype(np.int64)
    _, rank = np.unique(day, return_inverse=True)
    return (rank % folds).astype(np.int64)


def cv_scores(z, R, grid, folds: int = 5, hours=None, block_len: int = 24,
              min_weight: float = DEFAULT_MIN_WEIGHT):
    """Cross-validated squared error for every candidate and pair.

    Returns an array of shape ``(len(grid), q)`` with one column per pair
    ``j <= k``. Held-out points that are sparse even at the widest
    candidate are not scored; a candidate that leaves any other held-out
    point in a sparse region gets ``inf`` throughout.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or not (grid > 0).all():
        raise ParameterError("bandwidth grid must be non-empty and positive")
    if folds < 2:
        raise ParameterError("need at least 2 folds")
    prods = cross_products(R)
    fold = cv_folds(z.size, folds, hours, block_len)
    sse = np.zeros((grid.size, prods.shape[1]))
    scored = 0
    for f in range(folds):
        held = fold == f
        if not held.any():
            continue
        ztr = np.ascontiguousarray(z[~held])
        ptr = np.ascontiguousarray(prods[~held])
        zte = np.ascontiguousarray(z[held])
        groups = np.zeros(prods.shape[1], dtype=np.intp)
        _, wmax = kernels.kernel_smooth(ztr, ptr, zte, np.array([grid.max()]), groups)
        reach = np.asarray(wmax)[:, 0] >= min_weight
        if not reach.any():
            continue
        zte, pte = np.ascontiguousarray(zte[reach]), prods[held][reach]
        scored += zte.size
        for g, h in enumerate(grid):
            if not np.isfinite(sse[g, 0]):
                continue
            est, wsum = kernels.kernel_smooth(ztr, ptr, zte, np.array([h]), groups)
            if (np.asarray(wsum)[:, 0] < min_weight).any():
                sse[g] = np.inf
                continue
            sse[g] += ((pte - np.asarray(est)) ** 2).sum(axis=0)
    if scored == 0:
        return np.full_like(sse, np.inf)
    return sse / scored


def select_bandwidths_cv(z, R, grid=DEFAULT_BANDWIDTH_GRID, folds: int = 5,
                         hours=None, block_len: int = 24,
                         min_weight: float = DEFAULT_MIN_WEIGHT):
    """Per-pair bandwidth matrix minimising block cross-validation error."""
    grid = np.asarray(grid, dtype=np.float64)
    p = np.asarray(R).shape[1]
    iu, ju = pair_index(p)
    if grid.size == 1:
        best = np.full(iu.size, grid[0])
    else:
        scores = cv_scores(z, R, grid, folds, hours, block_len, min_weight)
        if not np.isfinite(scores).any():
            raise SelectionError(
                "every bandwidth candidate leaves held-out points in sparse regions"
            )
        best = grid[np.argmin(scores, axis=0)]
    H = np.empty((p, p))
    H[iu, ju] = best
    H[ju, iu] = best
    return H


def select_bandwidth_cv(z, R, pair, grid, folds: int = 5, hours=None,
                        block_len: int = 24, min_weight: float = DEFAULT_MIN_WEIGHT):
    """Cross-validated bandwidth for the single pair ``(j, k)``."""
    j, k = sorted(pair)
    R = np.asarray(R, dtype=np.float64)
    sub = R[:, [j, k]] if j != k else R[:, [j]]
    H = select_bandwidths_cv(z, sub, grid, folds, hours, block_len, min_weight)
    return float(H[0, -1])
