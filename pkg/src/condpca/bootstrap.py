"""Day-block bootstrap: control-limit calibration, covariance bands, metrics.

Replicate ``r`` draws its blocks from ``numpy.random.default_rng([seed, r])``,
so results do not depend on how replicates are split across threads.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._backend import kernels
from .data import Dataset, day_blocks
from .covariance import CondCovModel
from .errors import CalibrationError, DataError, ParameterError, SparseRegionError
from .mewma import ARLEstimate, ChartConfig, ChartResult, summarize_run_lengths

THREADS_ENV = "CONDPCA_THREADS"
_CHUNK = 1024
_BIDX_CACHE_LIMIT = 16_000_000


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items, threads=None):
    threads = n_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(rep)])


@dataclass(frozen=True, eq=False)
class BlockPlan:
    """Start rows of complete, gap-free blocks plus the master seed."""

    starts: np.ndarray
    block_len: int = 24
    seed: int = 0

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.int64)
        if starts.size == 0:
            raise DataError("no complete blocks available for resampling")
        object.__setattr__(self, "starts", starts)

    @property
    def n_blocks(self) -> int:
        return self.starts.size

    def draw(self, rep: int, n_blocks: int) -> np.ndarray:
        return replicate_rng(self.seed, rep).integers(0, self.n_blocks, n_blocks)

    def rows(self, rep: int, length_out: int) -> np.ndarray:
        k = math.ceil(length_out / self.block_len)
        b = self.draw(rep, k)
        rows = (self.starts[b][:, None] + np.arange(self.block_len)).ravel()
        return rows[:length_out]


def make_block_plan(source, block_len: int = 24, seed: int = 0) -> BlockPlan:
    """Blocks from a :class:`Dataset` or an array of hourly time stamps (hours)."""
    return BlockPlan(starts=day_blocks(source, block_len), block_len=block_len, seed=seed)


def block_resample(data, plan: BlockPlan, length_out: int, rep: int = 0):
    """Concatenate randomly drawn blocks, truncated to ``length_out`` rows.

    A :class:`Dataset` yields ``(X, z)``; an array yields an array.
    """
    rows = plan.rows(rep, length_out)
    if isinstance(data, Dataset):
        return data.X[rows], data.z[rows]
    return np.asarray(data)[rows]


class _RunLengthSimulator:
    """Common-random-number run lengths for block-bootstrap streams."""

    def __init__(self, cfg: ChartConfig, features, plan: BlockPlan, reps: int, cap: int):
        self.kappa = cfg.kappa
        self.Xw = cfg.whiten(features)
        last = int(plan.starts.max()) + plan.block_len
        if last > self.Xw.shape[0]:
            raise DataError("block plan exceeds the feature matrix")
        self.plan = plan
        self.reps = int(reps)
        self.cap = int(cap)
        self.width = math.ceil(self.cap / plan.block_len)
        self.chunks = [(lo, min(lo + _CHUNK, self.reps)) for lo in range(0, self.reps, _CHUNK)]
        self._cache = {}
        self._use_cache = self.reps * self.width <= _BIDX_CACHE_LIMIT

    def _bidx(self, lo, hi):
        if (lo, hi) in self._cache:
            return self._cache[(lo, hi)]
        b = np.empty((hi - lo, self.width), dtype=np.int64)
        for r in range(lo, hi):
            b[r - lo] = self.plan.draw(r, self.width)
        if self._use_cache:
            self._cache[(lo, hi)] = b
        return b

    def __call__(self, h4: float):
        def work(span):
            lo, hi = span
            return kernels.block_run_lengths(self.Xw, self.plan.starts, self.plan.block_len,
                                             self._bidx(lo, hi), self.kappa, float(h4),
                                             self.cap)
        parts = _map(work, self.chunks)
        rl = np.concatenate([np.asarray(p[0]) for p in parts])
        cens = np.concatenate([np.asarray(p[1]) for p in parts])
        return rl, cens


def default_cap(target: float = 720.0) -> int:
    return int(math.ceil(20 * target))


def estimate_arl(h4: float, cfg: ChartConfig, phase1_features, plan: BlockPlan,
                 reps: int = 10_000, cap: int | None = None) -> ARLEstimate:
    """Mean run length of the chart on block-bootstrapped in-control streams.

    Censored runs count at the cap; ``unreliable`` is set when more than
    half of the runs are censored.
    """
    if reps < 1:
        raise ParameterError("reps must be positive")
    sim = _RunLengthSimulator(cfg, phase1_features, plan, reps, cap or default_cap())
    return summarize_run_lengths(*sim(h4))


@dataclass(frozen=True)
class CalibrationResult:
    h4: float
    arl: float
    se: float
    reps: int
    target: float
    converged: bool
    iterations: int
    censored_fraction: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def calibrate_h4(target: float, cfg: ChartConfig, phase1_features, plan: BlockPlan,
                 reps: int = 10_000, tolerance: float = 0.05, max_iter: int = 40,
                 cap: int | None = None) -> CalibrationResult:
    """Control limit whose bootstrap in-control ARL matches ``target``.

    Bisection on a bracket grown geometrically from the chi-square limit of
    the independent Hotelling case. All candidates share the same resampled
    streams, so the estimated ARL is monotone in the limit.
    """
    if not target > 1:
        raise ParameterError("target ARL must exceed 1")
    sim = _RunLengthSimulator(cfg, phase1_features, plan, reps, cap or default_cap(target))
    r = cfg.whitener.shape[0]
    seen = {}

    def arl(h):
        if h not in seen:
            seen[h] = summarize_run_lengths(*sim(h))
        return seen[h]

    def close(est):
        return abs(est.arl - target) / target <= tolerance

    def result(h, it, ok):
        est = arl(h)
        return CalibrationResult(h4=float(h), arl=est.arl, se=est.se, reps=est.reps,
                                 target=float(target), converged=ok, iterations=it,
                                 censored_fraction=est.censored_fraction)

    h0 = float(stats.chi2.ppf(1.0 - 1.0 / target, df=r))
    it = 1
    if close(arl(h0)):
        return result(h0, it, True)
    if arl(h0).arl < target:
        lo, hi = h0, 2.0 * h0
        while arl(hi).arl < target:
            it += 1
            if it > max_iter:
                raise CalibrationError(
                    f"could not bracket target {target}: ARL {arl(hi).arl:.1f} at h4={hi:.4g}")
            lo, hi = hi, 2.0 * hi
    else:
        lo, hi = 0.5 * h0, h0
        while arl(lo).arl >= target:
            it += 1
            if it > max_iter or lo < 1e-12:
                raise CalibrationError(
                    f"could not bracket target {target}: ARL {arl(lo).arl:.1f} at h4={lo:.4g}")
            lo, hi = 0.5 * lo, lo
    for h in (lo, hi):
        if close(arl(h)):
            return result(h, it, True)
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        est = arl(mid)
        if close(est):
            return result(mid, it, True)
        if est.arl < target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda h: abs(arl(h).arl - target))
    return result(best, it, False)


@dataclass(frozen=True, eq=False)
class Bands:
    """Pointwise bootstrap bands for conditional variances and correlations.

    ``variance`` arrays have shape ``(g, p)``; ``correlation`` arrays have
    shape ``(g, q)`` for the pairs ``j < k`` listed in ``pairs``.
    """

    z_grid: np.ndarray
    pairs: list
    variance: np.ndarray
    variance_lo: np.ndarray
    variance_hi: np.ndarray
    variance_median: np.ndarray
    correlation: np.ndarray
    correlation_lo: np.ndarray
    correlation_hi: np.ndarray
    correlation_median: np.ndarray
    excluded: np.ndarray
    flagged: np.ndarray
    reps: int
    level: float


def _curves(z, X, z_grid, H, fit_mean, min_weight, eig_floor_rel):
    mean = fit_mean(z, X)
    R = mean.residuals(z, X)
    cm = CondCovModel(residuals=R, z=z, bandwidths=H, eig_floor_rel=eig_floor_rel,
                      min_weight=min_weight)
    try:
        S, _, sparse, _ = cm.evaluate(z_grid, on_sparse="flag")
    except SparseRegionError:
        # some grid point has no weight at all; keep the others
        p = X.shape[1]
        S = np.full((z_grid.size, p, p), np.nan)
        sparse = np.ones(z_grid.size, dtype=bool)
        for t, z0 in enumerate(z_grid):
            try:
                St, _, sp, _ = cm.evaluate([z0], on_sparse="flag")
            except SparseRegionError:
                continue
            S[t], sparse[t] = St[0], sp[0]
    var = np.diagonal(S, axis1=1, axis2=2).copy()
    iu, ju = np.triu_indices(S.shape[-1], k=1)
    corr = S[:, iu, ju] / np.sqrt(var[:, iu] * var[:, ju])
    var[sparse] = np.nan
    corr[sparse] = np.nan
    return var, corr


def cov_confidence_bands(z, X, z_grid, bandwidths, fit_mean, plan: BlockPlan,
                         reps: int = 10_000, level: float = 0.95,
                         min_weight: float = 10.0, eig_floor_rel: float = 1e-8) -> Bands:
    """Pointwise percentile bands from day-block bootstrap refits.

    Each replicate resamples whole days of ``(z, X)``, refits the mean with
    ``fit_mean(z, X) -> MeanModel`` and re-estimates the conditional
    covariance on ``z_grid`` with the given bandwidth matrix. Replicates that
    leave a grid point in a sparse region are excluded there; grid points
    losing more than 10% of replicates are flagged.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    z_grid = np.ascontiguousarray(z_grid, dtype=np.float64)
    p = X.shape[1]
    H = np.broadcast_to(np.asarray(bandwidths, dtype=np.float64), (p, p)).copy()
    if not (0.0 < level < 1.0):
        raise ParameterError("level must be in (0, 1)")
    var0, corr0 = _curves(z, X, z_grid, H, fit_mean, min_weight, eig_floor_rel)

    def one(rep):
        rows = plan.rows(rep, z.size)
        return _curves(np.ascontiguousarray(z[rows]), X[rows], z_grid, H, fit_mean,
                       min_weight, eig_floor_rel)

    spans = [list(range(lo, min(lo + 64, reps))) for lo in range(0, reps, 64)]
    parts = _map(lambda span: [one(r) for r in span], spans)
    res = [c for part in parts for c in part]
    V = np.stack([r[0] for r in res])
    C = np.stack([r[1] for r in res])
    excluded = np.isnan(V).any(axis=2).sum(axis=0)
    flagged = excluded > 0.1 * reps
    a = (1.0 - level) / 2.0
    with warnings.catch_warnings():
        # all-NaN slices at fully excluded grid points
        warnings.simplefilter("ignore", RuntimeWarning)
        vlo, vmed, vhi = np.nanquantile(V, [a, 0.5, 1.0 - a], axis=0)
        clo, cmed, chi = np.nanquantile(C, [a, 0.5, 1.0 - a], axis=0)
    iu, ju = np.triu_indices(p, k=1)
    return Bands(z_grid=z_grid, pairs=list(zip(iu.tolist(), ju.tolist())),
                 variance=var0, variance_lo=vlo, variance_hi=vhi, variance_median=vmed,
                 correlation=corr0, correlation_lo=clo, correlation_hi=chi,
                 correlation_median=cmed, excluded=excluded, flagged=flagged,
                 reps=int(reps), level=float(level))


def detection_metrics(result: ChartResult, out_of_control) -> dict:
    """False alarms on in-control rows and detection rate on the rest.

    ``out_of_control`` is a boolean per row (True where damage is present).
    """
    ooc = np.asarray(out_of_control, dtype=bool)
    if ooc.shape != (result.m,):
        raise DataError(f"{ooc.size} labels for {result.m} chart rows")
    alarm = np.asarray(result.alarm, dtype=bool)
    above = result.t2 > result.h4
    n_in = int((~ooc).sum())
    n_out = int(ooc.sum())
    fa = int((alarm & ~ooc).sum())
    return {
        "false_alarms": fa,
        "false_alarm_rate": fa / n_in if n_in else 0.0,
        "in_control_rows": n_in,
        "out_of_control_rows": n_out,
        "pod": float(above[ooc].mean()) if n_out else 0.0,
        "detections": int(above[ooc].sum()),
    }
