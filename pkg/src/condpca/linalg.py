"""Symmetric eigendecomposition helpers shared by the covariance and PCA code."""

import numpy as np

from .errors import NumericalError

_TIE_RTOL = 1e-12


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so each column's largest-magnitude entry is positive.

    Entries within a relative ``1e-12`` of the column maximum count as ties,
    and the lowest such index decides. Works on stacks ``(..., p, p)``.
    """
    V = np.array(V, copy=True)
    mag = np.abs(V)
    top = mag.max(axis=-2, keepdims=True)
    is_top = mag >= top * (1.0 - _TIE_RTOL)
    first = np.argmax(is_top, axis=-2)  # (..., p) row index per column
    pick = np.take_along_axis(V, first[..., None, :], axis=-2)
    sign = np.where(pick < 0, -1.0, 1.0)
    return V * sign


def eigh_desc(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and sign-normalised eigenvectors of symmetric ``S``.

    Accepts a single matrix or a stack. Raises :class:`NumericalError` with
    basic diagnostics if LAPACK fails to converge.
    """
    S = np.asarray(S, dtype=np.float64)
    try:
        w, V = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        diag = {
            "shape": S.shape,
            "finite": bool(np.isfinite(S).all()),
            "max_abs": float(np.nanmax(np.abs(S))) if S.size else 0.0,
        }
        raise NumericalError(f"eigendecomposition failed: {exc}; {diag}") from exc
    # stable, so exactly tied eigenvalues keep LAPACK's column order
    order = np.argsort(-w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)
    return w, fix_signs(V)
