"""Conditional PCA scores and feature reconstruction.

Three reconstruction methods share one fitted :class:`ReconModel`:

``conditional``
    residuals from the conditional mean are standardised with the
    eigendecomposition of the conditional covariance at their own
    confounder value, then mapped back with the partial eigenbasis.
``partial``
    residuals plus the marginal mean.
``unsupervised``
    marginal PCA on the raw outputs with the leading components removed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .covariance import (
    DEFAULT_BANDWIDTH_GRID,
    DEFAULT_EIG_FLOOR_REL,
    DEFAULT_MIN_WEIGHT,
    CondCovModel,
    partial_covariance,
    select_bandwidths_cv,
)
from .errors import ParameterError
from .io import read_document, write_document
from .linalg import eigh_desc
from .mean import MeanModel, PSplineConfig, fit_nw_mean, fit_pspline_mean

CONDITIONAL = "conditional"
PARTIAL = "partial"
UNSUPERVISED = "unsupervised"
METHODS = (CONDITIONAL, PARTIAL, UNSUPERVISED)

DEGENERATE_GAP_REL = 1e-6


@dataclass(frozen=True, eq=False)
class CondEigen:
    z0: float
    vectors: np.ndarray
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class ScoreVector:
    s: np.ndarray
    floored: bool = False
    sparse: bool = False


def conditional_eigen(S, z0: float) -> CondEigen:
    """Descending eigendecomposition of a conditional covariance matrix."""
    w, V = eigh_desc(np.asarray(S, dtype=np.float64))
    return CondEigen(z0=float(z0), vectors=V, values=w)


def _degenerate_groups(values: np.ndarray, tol: float) -> list[np.ndarray]:
    groups, cur = [], [0]
    for j in range(1, values.size):
        if abs(values[j - 1] - values[j]) < tol:
            cur.append(j)
        else:
            if len(cur) > 1:
                groups.append(np.array(cur))
            cur = [j]
    if len(cur) > 1:
        groups.append(np.array(cur))
    return groups


def _align_one(ref: np.ndarray, values: np.ndarray, vectors: np.ndarray):
    """Match columns of ``vectors`` to ``ref``: reorder degenerate groups, fix signs."""
    values = values.copy()
    vectors = vectors.copy()
    tol = DEGENERATE_GAP_REL * max(float(values.sum()), 0.0)
    for grp in _degenerate_groups(values, tol):
        overlap = np.abs(ref[:, grp].T @ vectors[:, grp])
        _, cols = linear_sum_assignment(-overlap)
        vectors[:, grp] = vectors[:, grp[cols]]
        values[grp] = values[grp[cols]]
    dots = np.einsum("ij,ij->j", ref, vectors)
    vectors *= np.where(dots < 0, -1.0, 1.0)
    return values, vectors


def align_eigen(grid: list[CondEigen], reference: np.ndarray | None = None) -> list[CondEigen]:
    """Make eigenvectors continuous along a grid ordered by confounder value.

    Each entry is aligned to its predecessor (the first one to ``reference``
    if given). Sign flips and reordering within near-degenerate eigenvalue
    groups leave each decomposition intact.
    """
    out = []
    prev = reference
    for e in grid:
        if prev is None:
            vals, vecs = e.values.copy(), e.vectors.copy()
        else:
            vals, vecs = _align_one(prev, e.values, e.vectors)
        out.append(CondEigen(z0=e.z0, vectors=vecs, values=vals))
        prev = vecs
    return out


def _align_stack(refs: np.ndarray, values: np.ndarray, vectors: np.ndarray):
    """Vectorised :func:`_align_one` over a stack of decompositions."""
    values = values.copy()
    vectors = vectors.copy()
    tol = DEGENERATE_GAP_REL * np.maximum(values.sum(axis=1), 0.0)
    gaps = np.abs(np.diff(values, axis=1))
    needs = (gaps < tol[:, None]).any(axis=1)
    for t in np.flatnonzero(needs):
        values[t], vectors[t] = _align_one(refs[t], values[t], vectors[t])
    dots = np.einsum("mij,mij->mj", refs, vectors)
    vectors *= np.where(dots < 0, -1.0, 1.0)[:, None, :]
    return values, vectors


@dataclass(frozen=True, eq=False)
class ReconModel:
    """Frozen Phase-I artifact used to reconstruct any observation."""

    method: str
    outputs: tuple
    x_bar: np.ndarray
    mean_model: MeanModel | None = None
    cov_model: CondCovModel | None = None
    partial_values: np.ndarray | None = None
    partial_vectors: np.ndarray | None = None
    anchors_z: np.ndarray | None = None
    anchors_values: np.ndarray | None = None
    anchors_vectors: np.ndarray | None = None
    k_drop: int | None = None
    marginal_values: np.ndarray | None = None
    marginal_vectors: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.x_bar.size

    # -- scores ---------------------------------------------------------
    def conditional_decomposition(self, z, on_sparse: str = "raise"):
        """Aligned eigenpairs of the conditional covariance at each ``z``.

        Returns ``(values, vectors, sparse, floored)``.
        """
        if self.method != CONDITIONAL:
            raise ParameterError("conditional scores need a conditional model")
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        S, _, sparse, floored = self.cov_model.evaluate(z, on_sparse=on_sparse)
        w, V = eigh_desc(S)
        pos = np.searchsorted(self.anchors_z, z)
        pos = np.clip(pos, 1, self.anchors_z.size - 1)
        left = self.anchors_z[pos - 1]
        right = self.anchors_z[pos]
        nearest = np.where(np.abs(z - left) <= np.abs(right - z), pos - 1, pos)
        w, V = _align_stack(self.anchors_vectors[nearest], w, V)
        return w, V, sparse, floored

    def scores(self, X, z, on_sparse: str = "raise"):
        """Standardised scores for rows of ``X``; returns ``(S, sparse, floored)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        z = np.atleast_1d(np.asarray(z, dtype=np.float64))
        w, V, sparse, floored = self.conditional_decomposition(z, on_sparse)
        r = X - self.mean_model.predict(z)
        s = np.einsum("mij,mi->mj", V, r) / np.sqrt(w)
        return s, sparse, floored

    def reconstruct_scores(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        M = self.partial_vectors * np.sqrt(self.partial_values)
        return self.x_bar + S @ M.T

    def transform(self, X, z=None, on_sparse: str = "flag"):
        """Reconstructed features for rows of ``X``.

        Returns ``(X_tilde, flags)`` where ``flags`` holds boolean arrays
        ``sparse`` and ``floored`` (all false for the baseline methods).
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        flags = {"sparse": np.zeros(n, bool), "floored": np.zeros(n, bool)}
        if X.shape[1] != self.p:
            raise ParameterError(f"expected {self.p} output columns, got {X.shape[1]}")
        if self.method == UNSUPERVISED:
            return _project_out(X, self.x_bar, self.marginal_vectors, self.k_drop), flags
        if z is None:
            raise ParameterError(f"method {self.method!r} needs confounder values")
        if self.method == PARTIAL:
            return reconstruct_partial(X, z, self.mean_model, self.x_bar), flags
        S, sparse, floored = self.scores(X, z, on_sparse=on_sparse)
        flags["sparse"], flags["floored"] = sparse, floored
        return self.reconstruct_scores(S), flags

    # -- persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        doc = {"method": self.method, "outputs": list(self.outputs),
               "x_bar": self.x_bar.tolist()}
        if self.mean_model is not None:
            doc["mean_model"] = self.mean_model.to_dict()
        if self.cov_model is not None:
            cm = self.cov_model
            doc["cov_model"] = {
                "residuals": cm.residuals.tolist(), "z": cm.z.tolist(),
                "bandwidths": cm.bandwidths.tolist(),
                "eig_floor_rel": cm.eig_floor_rel, "min_weight": cm.min_weight,
            }
        for name in ("partial_values", "partial_vectors", "anchors_z",
                     "anchors_values", "anchors_vectors", "marginal_values",
                     "marginal_vectors"):
            val = getattr(self, name)
            if val is not None:
                doc[name] = val.tolist()
        if self.k_drop is not None:
            doc["k_drop"] = self.k_drop
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ReconModel":
        kw = {"method": doc["method"], "outputs": tuple(doc["outputs"]),
              "x_bar": np.asarray(doc["x_bar"], dtype=np.float64)}
        if "mean_model" in doc:
            kw["mean_model"] = MeanModel.from_dict(doc["mean_model"])
        if "cov_model" in doc:
            c = doc["cov_model"]
            kw["cov_model"] = CondCovModel(
                residuals=np.asarray(c["residuals"], dtype=np.float64),
                z=np.asarray(c["z"], dtype=np.float64),
                bandwidths=np.asarray(c["bandwidths"], dtype=np.float64),
                eig_floor_rel=float(c["eig_floor_rel"]),
                min_weight=float(c["min_weight"]))
        for name in ("partial_values", "partial_vectors", "anchors_z",
                     "anchors_values", "anchors_vectors", "marginal_values",
                     "marginal_vectors"):
            if name in doc:
                kw[name] = np.asarray(doc[name], dtype=np.float64)
        if "k_drop" in doc:
            kw["k_drop"] = int(doc["k_drop"])
        return cls(**kw)


def save_model(model: ReconModel, path) -> str:
    return write_document(path, "recon_model", model.to_dict())


def load_model(path) -> tuple[ReconModel, str]:
    content, digest = read_document(path, "recon_model")
    return ReconModel.from_dict(content), digest


def compute_scores(x, z: float, model: ReconModel, on_sparse: str = "raise") -> ScoreVector:
    """Confounder-adjusted standardised scores of a single observation."""
    s, sparse, floored = model.scores(np.asarray(x, dtype=np.float64)[None, :], [z],
                                      on_sparse=on_sparse)
    return ScoreVector(s=s[0], floored=bool(floored[0]), sparse=bool(sparse[0]))


def reconstruct(s, model: ReconModel) -> np.ndarray:
    """Map scores back to the output scale with the partial eigenbasis."""
    vec = s.s if isinstance(s, ScoreVector) else s
    return model.reconstruct_scores(vec)[0]


def _project_out(X, centre, vectors, k_drop):
    keep = vectors[:, k_drop:]
    return centre + (X - centre) @ keep @ keep.T


def marginal_pca(X):
    X = np.asarray(X, dtype=np.float64)
    centre = X.mean(axis=0)
    Xc = X - centre
    w, V = eigh_desc(Xc.T @ Xc / X.shape[0])
    return centre, w, V


def reconstruct_unsupervised(X, k_drop: int = 1, _allow_zero: bool = False) -> np.ndarray:
    """Remove the leading ``k_drop`` marginal principal components."""
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    lo = 0 if _allow_zero else 1
    if not (lo <= k_drop < p):
        raise ParameterError(f"k_drop must satisfy 1 <= k_drop < p={p}")
    centre, _, V = marginal_pca(X)
    return _project_out(X, centre, V, k_drop)


def reconstruct_partial(X, z, m: MeanModel, x_bar=None) -> np.ndarray:
    """Residuals from the conditional mean shifted to the marginal mean."""
    X = np.asarray(X, dtype=np.float64)
    if x_bar is None:
        x_bar = X.mean(axis=0)
    return np.asarray(x_bar) + (X - m.predict(z))


def _anchor_grid(model_cov: CondCovModel, partial_vectors, n_anchors, z_ref):
    lo, hi = model_cov.z_range
    zs = np.linspace(lo, hi, n_anchors)
    S, _, _, _ = model_cov.evaluate(zs, on_sparse="flag")
    w, V = eigh_desc(S)
    start = int(np.argmin(np.abs(zs - z_ref)))
    vals = np.empty_like(w)
    vecs = np.empty_like(V)
    vals[start], vecs[start] = _align_one(partial_vectors, w[start], V[start])
    for t in range(start + 1, zs.size):
        vals[t], vecs[t] = _align_one(vecs[t - 1], w[t], V[t])
    for t in range(start - 1, -1, -1):
        vals[t], vecs[t] = _align_one(vecs[t + 1], w[t], V[t])
    return zs, vals, vecs


def fit_mean(z, X, mean_method: str = "pspline", pspline: PSplineConfig | None = None,
             nw_bandwidth: float | None = None) -> MeanModel:
    if mean_method == "pspline":
        return fit_pspline_mean(z, X, pspline or PSplineConfig())
    if mean_method in ("nw", "nadaraya_watson"):
        if nw_bandwidth is None:
            raise ParameterError("Nadaraya-Watson mean needs nw_bandwidth")
        return fit_nw_mean(z, X, nw_bandwidth)
    raise ParameterError(f"unknown mean method {mean_method!r}")


def fit_recon(
    z,
    X,
    method: str = CONDITIONAL,
    *,
    outputs=(),
    mean_model: MeanModel | None = None,
    mean_method: str = "pspline",
    pspline: PSplineConfig | None = None,
    nw_bandwidth: float | None = None,
    bandwidth: float | np.ndarray | None = None,
    bandwidth_grid=DEFAULT_BANDWIDTH_GRID,
    bandwidth_floor: float = 0.0,
    cv_folds: int = 5,
    hours=None,
    min_weight: float = DEFAULT_MIN_WEIGHT,
    eig_floor_rel: float = DEFAULT_EIG_FLOOR_REL,
    n_anchors: int = 256,
    k_drop: int = 1,
) -> ReconModel:
    """Fit the reconstruction model on Phase-I data.

    ``bandwidth`` fixes every pair's bandwidth (scalar) or supplies the full
    matrix; otherwise bandwidths come from block cross-validation over
    ``bandwidth_grid`` and are raised to at least ``bandwidth_floor``.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}")
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    outputs = tuple(outputs) or tuple(f"x{j + 1}" for j in range(p))
    x_bar = X.mean(axis=0)
    if method == UNSUPERVISED:
        if not (1 <= k_drop < p):
            raise ParameterError(f"k_drop must satisfy 1 <= k_drop < p={p}")
        centre, w, V = marginal_pca(X)
        return ReconModel(method=method, outputs=outputs, x_bar=centre, k_drop=int(k_drop),
                          marginal_values=w, marginal_vectors=V)
    z = np.asarray(z, dtype=np.float64)
    if mean_model is None:
        mean_model = fit_mean(z, X, mean_method, pspline, nw_bandwidth)
    if method == PARTIAL:
        return ReconModel(method=method, outputs=outputs, x_bar=x_bar,
                          mean_model=mean_model)
    R = mean_model.residuals(z, X)
    if bandwidth is None:
        H = select_bandwidths_cv(z, R, bandwidth_grid, cv_folds, hours,
                                 min_weight=min_weight)
    else:
        H = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (p, p)).copy()
    H = np.maximum(H, bandwidth_floor)
    cov = CondCovModel(residuals=R, z=z, bandwidths=H, eig_floor_rel=eig_floor_rel,
                       min_weight=min_weight)
    part = partial_covariance(R)
    az, av, aV = _anchor_grid(cov, part.eigenvectors, n_anchors, float(np.median(z)))
    return ReconModel(method=method, outputs=outputs, x_bar=x_bar, mean_model=mean_model,
                      cov_model=cov, partial_values=part.eigenvalues,
                      partial_vectors=part.eigenvectors, anchors_z=az,
                      anchors_values=av, anchors_vectors=aV)
