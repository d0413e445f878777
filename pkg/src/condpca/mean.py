"""Conditional mean of the outputs given the confounder."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline

from ._backend import kernels
from .errors import (
    DegenerateConfounderError,
    ParameterError,
    RankError,
    SparseRegionWarning,
)

PSPLINE = "pspline"
NADARAYA_WATSON = "nadaraya_watson"
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 4, 25))


@dataclass(frozen=True)
class PSplineConfig:
    n_knots: int = 20
    degree: int = 3
    penalty_order: int = 2
    penalty: float | str = "auto"
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID

    def __post_init__(self):
        if self.n_knots < self.degree + 2:
            raise ParameterError("n_knots must be at least degree + 2")
        if self.degree < 0:
            raise ParameterError("degree must be non-negative")
        if self.penalty_order not in (1, 2, 3):
            raise ParameterError("penalty_order must be 1, 2 or 3")
        if self.penalty != "auto":
            if not (np.isfinite(float(self.penalty)) and float(self.penalty) >= 0):
                raise ParameterError("penalty must be 'auto' or a non-negative number")


def bspline_knots(lo: float, hi: float, n_knots: int, degree: int) -> np.ndarray:
    """Equally spaced knots on ``[lo, hi]`` padded by ``degree`` on each side."""
    inner = np.linspace(lo, hi, n_knots)
    dx = inner[1] - inner[0]
    left = lo - dx * np.arange(degree, 0, -1)
    right = hi + dx * np.arange(1, degree + 1)
    return np.concatenate([left, inner, right])


def bspline_basis(x, knots: np.ndarray, degree: int) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), knots[degree], knots[-degree - 1])
    return BSpline.design_matrix(x, knots, degree).toarray()


@dataclass(frozen=True, eq=False)
class MeanModel:
    """Fitted conditional mean; ``predict`` clamps queries to the training range."""

    method: str
    z_min: float
    z_max: float
    p: int
    # P-spline
    knots: np.ndarray | None = None
    degree: int | None = None
    coefs: np.ndarray | None = None
    penalties: np.ndarray | None = None
    # Nadaraya-Watson
    z_train: np.ndarray | None = None
    X_train: np.ndarray | None = None
    bandwidth: float | None = None
    min_weight: float = 0.0
    _nearest_cache: dict = field(default_factory=dict, init=False, repr=False)

    def predict(self, z0) -> np.ndarray:
        """Conditional mean at each query; returns shape ``(m, p)``."""
        z0 = np.clip(np.atleast_1d(np.asarray(z0, dtype=np.float64)),
                     self.z_min, self.z_max)
        if self.method == PSPLINE:
            return bspline_basis(z0, self.knots, self.degree) @ self.coefs
        return self._predict_nw(np.ascontiguousarray(z0))

    def _predict_nw(self, z0: np.ndarray) -> np.ndarray:
        est, wsum = kernels.kernel_smooth(
            self.z_train, self.X_train, z0, np.array([self.bandwidth]),
            np.zeros(self.p, dtype=np.intp))
        est, wsum = np.asarray(est), np.asarray(wsum)[:, 0]
        low = ~(wsum > self.min_weight)
        if low.any():
            warnings.warn(
                f"{int(low.sum())} queries fall in sparse regions; using the "
                "nearest well-supported training point",
                SparseRegionWarning, stacklevel=3)
            zt, good = self._supported_points()
            pos = np.abs(z0[low, None] - zt[None, good]).argmin(axis=1)
            fallback, _ = kernels.kernel_smooth(
                self.z_train, self.X_train, np.ascontiguousarray(zt[good][pos]),
                np.array([self.bandwidth]), np.zeros(self.p, dtype=np.intp))
            est[low] = fallback
        return est

    def _supported_points(self):
        if "pts" not in self._nearest_cache:
            zt = np.unique(self.z_train)
            _, w = kernels.kernel_smooth(
                self.z_train, self.X_train[:, :1].copy(), zt,
                np.array([self.bandwidth]), np.zeros(1, dtype=np.intp))
            good = np.asarray(w)[:, 0] > self.min_weight
            if not good.any():
                good = np.ones_like(good)
            self._nearest_cache["pts"] = (zt, good)
        return self._nearest_cache["pts"]

    def residuals(self, z, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) - self.predict(z)

    def to_dict(self) -> dict:
        doc = {"method": self.method, "z_min": self.z_min, "z_max": self.z_max,
               "p": self.p}
        if self.method == PSPLINE:
            doc.update(knots=self.knots.tolist(), degree=self.degree,
                       coefs=self.coefs.tolist(), penalties=self.penalties.tolist())
        else:
            doc.update(z_train=self.z_train.tolist(), X_train=self.X_train.tolist(),
                       bandwidth=self.bandwidth, min_weight=self.min_weight)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MeanModel":
        common = dict(method=doc["method"], z_min=float(doc["z_min"]),
                      z_max=float(doc["z_max"]), p=int(doc["p"]))
        if doc["method"] == PSPLINE:
            return cls(**common, knots=np.asarray(doc["knots"]),
                       degree=int(doc["degree"]),
                       coefs=np.asarray(doc["coefs"]).reshape(-1, common["p"]),
                       penalties=np.asarray(doc["penalties"]))
        return cls(**common,
                   z_train=np.ascontiguousarray(doc["z_train"], dtype=np.float64),
                   X_train=np.ascontiguousarray(doc["X_train"], dtype=np.float64).reshape(
                       -1, common["p"]),
                   bandwidth=float(doc["bandwidth"]),
                   min_weight=float(doc["min_weight"]))


def predict_mean(m: MeanModel, z0: float) -> np.ndarray:
    return m.predict([z0])[0]


def _check_inputs(z, X):
    z = np.asarray(z, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != z.shape[0]:
        raise ParameterError("z and X differ in length")
    if not (np.isfinite(z).all() and np.isfinite(X).all()):
        raise ParameterError("z and X must be finite")
    return z, X


def fit_pspline_mean(z, X, cfg: PSplineConfig = PSplineConfig()) -> MeanModel:
    """One penalised B-spline smoother per output column.

    With ``cfg.penalty == "auto"`` each column picks its penalty from
    ``cfg.lambda_grid`` by generalised cross-validation.
    """
    z, X = _check_inputs(z, X)
    n, p = X.shape
    if n <= cfg.n_knots:
        raise RankError(f"{n} observations cannot support {cfg.n_knots} knots")
    lo, hi = float(z.min()), float(z.max())
    if not hi > lo:
        raise DegenerateConfounderError("all confounder values are equal")
    knots = bspline_knots(lo, hi, cfg.n_knots, cfg.degree)
    B = bspline_basis(z, knots, cfg.degree)
    K = B.shape[1]
    BtB = B.T @ B
    BtY = B.T @ X
    D = np.diff(np.eye(K), cfg.penalty_order, axis=0)
    P = D.T @ D
    lambdas = (np.asarray(cfg.lambda_grid, dtype=np.float64) if cfg.penalty == "auto"
               else np.array([float(cfg.penalty)]))
    coefs = np.empty((lambdas.size, K, p))
    gcv = np.empty((lambdas.size, p))
    for i, lam in enumerate(lambdas):
        A = BtB + lam * P
        try:
            cf = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            raise RankError(
                f"penalised normal equations are singular at penalty {lam:g}; "
                "too few distinct confounder values for the basis") from None
        C = scipy.linalg.cho_solve(cf, BtY)
        edf = np.trace(scipy.linalg.cho_solve(cf, BtB))
        rss = ((X - B @ C) ** 2).sum(axis=0)
        coefs[i] = C
        gcv[i] = n * rss / max(n - edf, 1e-12) ** 2
    best = np.argmin(gcv, axis=0)
    C = coefs[best, :, np.arange(p)].T
    return MeanModel(method=PSPLINE, z_min=lo, z_max=hi, p=p, knots=knots,
                     degree=cfg.degree, coefs=np.ascontiguousarray(C),
                     penalties=lambdas[best])


def fit_nw_mean(z, X, h: float, min_weight: float = 0.0) -> MeanModel:
    """Nadaraya-Watson smoother with a Gaussian kernel of bandwidth ``h``."""
    z, X = _check_inputs(z, X)
    if not h > 0:
        raise ParameterError("bandwidth must be positive")
    if z.size < 1:
        raise ParameterError("need at least one observation")
    return MeanModel(method=NADARAYA_WATSON, z_min=float(z.min()),
                     z_max=float(z.max()), p=X.shape[1],
                     z_train=np.ascontiguousarray(z), X_train=np.ascontiguousarray(X),
                     bandwidth=float(h), min_weight=float(min_weight))
