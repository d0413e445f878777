"""Multivariate EWMA control chart.

The recursion runs on in-control-centred data with a zero start, and the
control statistic is the Mahalanobis norm of the smoothed vector under its
asymptotic covariance ``kappa / (2 - kappa) * Gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from ._backend import kernels
from .errors import ConfigurationError, DataError

DEFAULT_KAPPA = 0.2
_RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ChartConfig:
    """Chart parameters.

    ``allow_singular`` admits a rank-deficient ``Gamma``; the statistic then
    uses the Moore-Penrose inverse, i.e. it lives on the range of ``Gamma``.
    """

    kappa: float
    mu0: np.ndarray
    gamma: np.ndarray
    h4: float = np.inf
    reinitialize_on_alarm: bool = True
    allow_singular: bool = False
    whitener: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (0.0 < self.kappa <= 1.0):
            raise ConfigurationError(f"kappa must lie in (0, 1], got {self.kappa}")
        mu0 = np.asarray(self.mu0, dtype=np.float64).ravel()
        G = np.atleast_2d(np.asarray(self.gamma, dtype=np.float64))
        if G.shape != (mu0.size, mu0.size):
            raise ConfigurationError("Gamma must be p x p with p = len(mu0)")
        if not np.allclose(G, G.T, rtol=1e-10, atol=0.0):
            raise ConfigurationError("Gamma must be symmetric")
        if not (np.isnan(self.h4) or self.h4 > 0):
            raise ConfigurationError("h4 must be positive")
        G = 0.5 * (G + G.T)
        w, V = np.linalg.eigh(G)
        top = w[-1] if w.size else 0.0
        keep = w > _RANK_RTOL * max(top, 0.0)
        if top <= 0 or (not keep.all() and not self.allow_singular):
            raise ConfigurationError("Gamma is singular; the chart statistic is undefined")
        if (w < -_RANK_RTOL * top).any():
            raise ConfigurationError("Gamma is not positive semi-definite")
        gw = self.kappa / (2.0 - self.kappa)
        W = (V[:, keep] / np.sqrt(gw * w[keep])).T
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "gamma", G)
        object.__setattr__(self, "whitener", np.ascontiguousarray(W))

    @property
    def p(self) -> int:
        return self.mu0.size

    @property
    def gamma_omega(self) -> np.ndarray:
        return self.kappa / (2.0 - self.kappa) * self.gamma

    def whiten(self, X) -> np.ndarray:
        """Centre on ``mu0`` and map so that the statistic is a sum of squares."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.ascontiguousarray((X - self.mu0) @ self.whitener.T)

    def with_h4(self, h4: float) -> "ChartConfig":
        return ChartConfig(self.kappa, self.mu0, self.gamma, h4,
                           self.reinitialize_on_alarm, self.allow_singular)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "mu0": self.mu0.tolist(),
                "gamma": self.gamma.tolist(),
                "h4": None if not np.isfinite(self.h4) else float(self.h4),
                "reinitialize_on_alarm": self.reinitialize_on_alarm,
                "allow_singular": self.allow_singular}

    @classmethod
    def from_dict(cls, doc: dict) -> "ChartConfig":
        h4 = doc.get("h4")
        return cls(kappa=float(doc["kappa"]), mu0=np.asarray(doc["mu0"]),
                   gamma=np.asarray(doc["gamma"]),
                   h4=np.inf if h4 is None else float(h4),
                   reinitialize_on_alarm=bool(doc.get("reinitialize_on_alarm", True)),
                   allow_singular=bool(doc.get("allow_singular", False)))


def fit_chart_config(features, kappa: float = DEFAULT_KAPPA, h4: float = np.inf,
                     allow_singular: bool = False) -> ChartConfig:
    """Plug-in ``mu0`` and ``Gamma`` from Phase-I reconstructed features."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 2:
        raise DataError("need at least two feature rows")
    return ChartConfig(kappa=kappa, mu0=F.mean(axis=0), gamma=np.cov(F, rowvar=False),
                       h4=h4, allow_singular=allow_singular)


def mewma_update(omega_prev, x, kappa: float) -> np.ndarray:
    """One smoothing step on a centred observation."""
    return (1.0 - kappa) * np.asarray(omega_prev) + kappa * np.asarray(x)


def t2_statistic(omega, cfg: ChartConfig) -> float:
    """Mahalanobis norm of a centred smoothed vector under ``Gamma_omega``."""
    u = cfg.whitener @ np.asarray(omega, dtype=np.float64)
    return float(u @ u)


@dataclass(frozen=True, eq=False)
class ChartResult:
    """Statistic trace and alarms; ``alarms`` holds 0-based row indices."""

    t2: np.ndarray
    alarm: np.ndarray
    h4: float

    @property
    def alarms(self) -> np.ndarray:
        return np.flatnonzero(self.alarm)

    @property
    def m(self) -> int:
        return self.t2.size


def _check_rows(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        raise DataError(f"non-finite values in row {int(np.flatnonzero(bad)[0])}")
    return X


def run_chart(X, cfg: ChartConfig, reset=None) -> ChartResult:
    """Apply the chart to a stream of feature vectors.

    Parameters
    ----------
    X : array_like, shape (m, p)
    cfg : ChartConfig
    reset : array_like of bool, optional
        Rows after whose alarm the recursion may restart. Defaults to every
        row when ``cfg.reinitialize_on_alarm`` is set and to none otherwise.
    """
    X = _check_rows(X)
    m = X.shape[0]
    if reset is None:
        reset = np.full(m, bool(cfg.reinitialize_on_alarm))
    reset = np.ascontiguousarray(np.asarray(reset, dtype=bool) & cfg.reinitialize_on_alarm,
                                 dtype=np.uint8)
    if reset.size != m:
        raise DataError("reset mask does not match the number of rows")
    Xw = cfg.whiten(X)
    t2, alarm, _ = kernels.mewma_trace(Xw, cfg.kappa, cfg.h4, reset,
                                       np.zeros(Xw.shape[1]))
    return ChartResult(t2=np.asarray(t2), alarm=np.asarray(alarm, dtype=bool), h4=cfg.h4)


class RunLength(NamedTuple):
    length: int
    censored: bool


def run_length(X, cfg: ChartConfig) -> RunLength:
    """Index (1-based) of the first alarm, without reinitialisation."""
    X = _check_rows(X)
    if X.shape[0] == 0 or X.size == 0:
        raise DataError("empty stream")
    Xw = cfg.whiten(X)
    t2, alarm, _ = kernels.mewma_trace(Xw, cfg.kappa, cfg.h4,
                                       np.zeros(Xw.shape[0], dtype=np.uint8),
                                       np.zeros(Xw.shape[1]))
    hits = np.flatnonzero(np.asarray(alarm))
    if hits.size == 0:
        return RunLength(X.shape[0], True)
    return RunLength(int(hits[0]) + 1, False)


class ARLEstimate(NamedTuple):
    arl: float
    se: float
    reps: int
    censored_fraction: float
    unreliable: bool


def summarize_run_lengths(rl, censored) -> ARLEstimate:
    rl = np.asarray(rl, dtype=np.float64)
    cens = float(np.mean(censored)) if rl.size else 0.0
    se = float(rl.std(ddof=1) / np.sqrt(rl.size)) if rl.size > 1 else float("nan")
    return ARLEstimate(float(rl.mean()), se, int(rl.size), cens, cens > 0.5)


def simulate_arl(cfg: ChartConfig, reps: int, seed: int = 0, cap: int | None = None,
                 chunk: int = 1 << 16) -> ARLEstimate:
    """Average run length on independent Gaussian in-control data.

    Rows are drawn from ``N(mu0, Gamma)``. The chart restarts after every
    run, so one long stream yields consecutive independent runs.
    """
    if reps < 1:
        raise DataError("reps must be positive")
    cap = int(cap) if cap else np.iinfo(np.int64).max // 2
    rng = np.random.default_rng(seed)
    r = cfg.whitener.shape[0]
    scale = np.sqrt((2.0 - cfg.kappa) / cfg.kappa)
    omega, run = np.zeros(r), 0
    lens, cens = [], []
    total = 0
    while total < reps:
        Xw = np.ascontiguousarray(scale * rng.standard_normal((chunk, r)))
        l, c, omega, run = kernels.stream_run_lengths(Xw, cfg.kappa, cfg.h4, cap,
                                                      omega, run)
        lens.append(np.asarray(l))
        cens.append(np.asarray(c))
        total += len(l)
    rl = np.concatenate(lens)[:reps]
    cf = np.concatenate(cens)[:reps]
    return summarize_run_lengths(rl, cf)


def write_chart_result(result: ChartResult, path, timestamps=None, scenario=None,
                       delimiter: str = ",") -> None:
    """Delimited text: index, timestamp, T2, alarm flag, scenario."""
    from .data import format_timestamps

    cols = {"index": np.arange(result.m)}
    cols["timestamp"] = (format_timestamps(timestamps) if timestamps is not None
                         else [""] * result.m)
    cols["t2"] = [repr(float(v)) for v in result.t2]
    cols["log10_t2"] = [repr(float(np.log10(v))) if v > 0 else "-inf" for v in result.t2]
    cols["alarm"] = result.alarm.astype(int)
    cols["h4"] = [repr(float(result.h4))] * result.m
    cols["scenario"] = ([str(s) for s in scenario] if scenario is not None
                        else [""] * result.m)
    pd.DataFrame(cols).to_csv(path, sep=delimiter, index=False)
