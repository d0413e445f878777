"""Synthetic monitoring data with known conditional mean and covariance.

Outputs follow ``x_t = mu(z_t) + delta_t + Sigma(z_t)^{1/2} e_t`` where ``e_t``
is a unit-variance AR(1) process, ``Sigma(z) = D(z) C(z) D(z)`` has
confounder-dependent standard deviations ``D`` and equicorrelation ``C``,
and ``delta_t`` is a piecewise-constant damage shift.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .data import PHASE_I, PHASE_II, Dataset
from .errors import ConfigurationError

HOURS_PER_YEAR = 8760.0


@dataclass(frozen=True)
class DamageWindow:
    start: int
    end: int
    delta: tuple
    label: str = "damage"


@dataclass(frozen=True)
class SimConfig:
    """Synthetic scenario. Indices in damage windows are 0-based rows, end exclusive."""

    n: int = 6576
    n_phase1: int = 5760
    p: int = 3
    start: str = "2023-07-02T00:00:00"
    temp_base: float = 10.0
    temp_seasonal: float = 10.0
    temp_daily: float = 3.0
    temp_noise: float = 1.0
    temp_noise_ar: float = 0.9
    temp_offset_hours: float = 0.0
    z_center: float = 10.0
    z_scale: float = 10.0
    mean_coefs: tuple = ()
    sd_base: tuple = ()
    sd_slope: tuple = ()
    rho_mid: float = 0.3
    rho_amp: float = 0.0
    ar: float = 0.5
    damage: tuple = ()
    outputs: tuple = ()

    def __post_init__(self):
        if self.n < 1 or not (0 <= self.n_phase1 <= self.n):
            raise ConfigurationError("need n >= 1 and 0 <= n_phase1 <= n")
        if not (0.0 <= self.ar < 1.0):
            raise ConfigurationError("AR coefficient must lie in [0, 1)")
        if not (0.0 <= self.temp_noise_ar < 1.0):
            raise ConfigurationError("temperature AR coefficient must lie in [0, 1)")
        p = self.p
        mc = np.asarray(self.mean_coefs if len(self.mean_coefs) else np.zeros((p, 1)),
                        dtype=np.float64)
        if mc.ndim != 2 or mc.shape[0] != p:
            raise ConfigurationError("mean_coefs must have one row per output")
        sd = np.asarray(self.sd_base if len(self.sd_base) else np.ones(p), dtype=np.float64)
        sl = np.asarray(self.sd_slope if len(self.sd_slope) else np.zeros(p), dtype=np.float64)
        if sd.shape != (p,) or sl.shape != (p,) or (sd <= 0).any():
            raise ConfigurationError("sd_base must be p positive values, sd_slope p values")
        windows = []
        for w in self.damage:
            w = w if isinstance(w, DamageWindow) else DamageWindow(**w)
            if not (0 <= w.start < w.end <= self.n):
                raise ConfigurationError(f"damage window {w} outside [0, n]")
            if len(w.delta) != p:
                raise ConfigurationError("damage shift must have p entries")
            windows.append(DamageWindow(int(w.start), int(w.end),
                                        tuple(float(v) for v in w.delta), str(w.label)))
        windows.sort(key=lambda w: w.start)
        for a, b in zip(windows, windows[1:]):
            if b.start < a.end:
                raise ConfigurationError("damage windows overlap")
        outs = tuple(self.outputs) or tuple(f"s{j + 1}" for j in range(p))
        object.__setattr__(self, "mean_coefs", tuple(map(tuple, mc.tolist())))
        object.__setattr__(self, "sd_base", tuple(sd.tolist()))
        object.__setattr__(self, "sd_slope", tuple(sl.tolist()))
        object.__setattr__(self, "damage", tuple(windows))
        object.__setattr__(self, "outputs", outs)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["damage"] = [asdict(w) for w in self.damage]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        doc["damage"] = tuple(DamageWindow(**w) for w in doc.get("damage", ()))
        for key in ("mean_coefs", "sd_base", "sd_slope", "outputs"):
            if key in doc:
                doc[key] = tuple(tuple(v) if isinstance(v, list) else v for v in doc[key])
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class SimTruth:
    """Ground-truth conditional moments of a :class:`SimConfig`."""

    cfg: SimConfig

    def _u(self, z):
        return (np.asarray(z, dtype=np.float64) - self.cfg.z_center) / self.cfg.z_scale

    def mean(self, z) -> np.ndarray:
        u = np.atleast_1d(self._u(z))
        mc = np.asarray(self.cfg.mean_coefs)
        powers = u[:, None] ** np.arange(mc.shape[1])
        return powers @ mc.T

    def sd(self, z) -> np.ndarray:
        u = np.atleast_1d(self._u(z))
        return np.asarray(self.cfg.sd_base) * np.exp(
            np.asarray(self.cfg.sd_slope) * np.tanh(u)[:, None])

    def rho(self, z) -> np.ndarray:
        return self.cfg.rho_mid + self.cfg.rho_amp * np.tanh(np.atleast_1d(self._u(z)))

    def corr(self, z) -> np.ndarray:
        r = self.rho(z)
        p = self.cfg.p
        C = r[:, None, None] * np.ones((p, p))
        C[:, np.arange(p), np.arange(p)] = 1.0
        return C

    def cov(self, z) -> np.ndarray:
        d = self.sd(z)
        return d[:, :, None] * self.corr(z) * d[:, None, :]

    def shift(self) -> np.ndarray:
        """Damage shift per row, shape ``(n, p)``."""
        delta = np.zeros((self.cfg.n, self.cfg.p))
        for w in self.cfg.damage:
            delta[w.start:w.end] = w.delta
        return delta


def _ar1(rng, n, shape, phi):
    """Unit stationary variance AR(1) series along axis 0."""
    eta = rng.standard_normal((n, *shape))
    out = np.empty_like(eta)
    out[0] = eta[0]
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, n):
        out[t] = phi * out[t - 1] + scale * eta[t]
    return out


def temperature_path(cfg: SimConfig, seed=0) -> np.ndarray:
    """Seasonal plus daily cycle plus AR(1) noise, one value per hour."""
    rng = np.random.default_rng([int(seed), 0])
    t = np.arange(cfg.n, dtype=np.float64)
    z = (cfg.temp_base
         + cfg.temp_seasonal * np.sin(2 * np.pi * (t + cfg.temp_offset_hours) / HOURS_PER_YEAR)
         + cfg.temp_daily * np.sin(2 * np.pi * t / 24.0))
    if cfg.temp_noise > 0:
        z = z + cfg.temp_noise * _ar1(rng, cfg.n, (), cfg.temp_noise_ar)
    return z


def _sqrtm_sym(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return np.einsum("mij,mj,mkj->mik", V, np.sqrt(np.maximum(w, 0.0)), V)


def simulate_dataset(cfg: SimConfig, seed=0) -> tuple[Dataset, SimTruth]:
    """Draw a dataset and return it with its ground-truth moments."""
    truth = SimTruth(cfg)
    z = temperature_path(cfg, seed)
    p = cfg.p
    r = truth.rho(z)
    if p > 1 and not ((r > -1.0 / (p - 1)) & (r < 1.0)).all():
        raise ConfigurationError("correlation curve leaves the positive-definite range")
    Sig = truth.cov(z)
    rng = np.random.default_rng([int(seed), 1])
    e = _ar1(rng, cfg.n, (p,), cfg.ar)
    X = truth.mean(z) + truth.shift() + np.einsum("mij,mj->mi", _sqrtm_sym(Sig), e)
    ts = np.datetime64(cfg.start, "ns") + np.arange(cfg.n) * np.timedelta64(1, "h")
    phase = np.where(np.arange(cfg.n) < cfg.n_phase1, PHASE_I, PHASE_II).astype(object)
    scen = np.full(cfg.n, "baseline", dtype=object)
    for w in cfg.damage:
        scen[w.start:w.end] = w.label
    d = Dataset(timestamps=ts, X=X, z=z, phase=phase, outputs=cfg.outputs,
                confounder="temperature", scenario=scen)
    return d, truth


def truth_document(cfg: SimConfig, seed) -> str:
    return json.dumps({"seed": int(seed), "config": cfg.to_dict()}, indent=2, sort_keys=True)


def bridge_like_config(p: int = 3, shift_sd: float = 1.5, **overrides) -> SimConfig:
    """About eight months of Phase I then a month with three stepped shifts.

    The shift in window ``k`` (k = 1, 2, 3) is ``k / 3 * shift_sd`` residual
    standard deviations on every output.
    """
    n1, lead, win = 5760, 96, 240
    sd = np.linspace(1.0, 1.5, p)
    windows = tuple(
        DamageWindow(n1 + lead + k * win, n1 + lead + (k + 1) * win,
                     tuple((shift_sd * (k + 1) / 3.0 * sd).tolist()), label)
        for k, label in enumerate("ABC")
    )
    coefs = np.column_stack([np.linspace(0, 5, p), np.linspace(8, 4, p),
                             np.linspace(1, -1, p)])
    base = dict(n=n1 + lead + 3 * win, n_phase1=n1, p=p, mean_coefs=tuple(map(tuple, coefs)),
                sd_base=tuple(sd.tolist()), sd_slope=tuple([0.55] * p), rho_mid=0.4,
                rho_amp=0.4, temp_offset_hours=2190.0, damage=windows)
    base.update(overrides)
    return SimConfig(**base)


def phase1_residual_sd(cfg: SimConfig) -> np.ndarray:
    """Residual standard deviation per output, averaged over the noise-free
    Phase-I temperature curve."""
    z = temperature_path(replace(cfg, temp_noise=0.0))[:max(cfg.n_phase1, 1)]
    return np.sqrt((SimTruth(cfg).sd(z) ** 2).mean(axis=0))


def detection_config(p: int = 3, shift_sd: float = 1.5, month: int = 720,
                     window: int = 240, signs=None, **overrides) -> SimConfig:
    """Phase I, an in-control month, then one shifted window.

    Cold hours are strongly correlated and quiet, warm hours loose and
    noisy. The shift is ``shift_sd`` Phase-I residual standard deviations
    per output with alternating signs, so it cuts across the dominant
    cold-weather noise direction.
    """
    n1 = 5760
    sd = np.linspace(1.0, 1.5, p)
    coefs = np.column_stack([np.linspace(0, 5, p), np.linspace(8, 4, p),
                             np.linspace(1, -1, p)])
    base = dict(n=n1 + month + window, n_phase1=n1, p=p,
                mean_coefs=tuple(map(tuple, coefs)), sd_base=tuple(sd.tolist()),
                sd_slope=tuple([0.55] * p), rho_mid=0.5, rho_amp=-0.45,
                temp_offset_hours=2190.0)
    base.update(overrides)
    cfg = SimConfig(**base)
    signs = np.asarray(signs if signs is not None else [(-1) ** j for j in range(cfg.p)],
                       dtype=np.float64)
    delta = shift_sd * phase1_residual_sd(cfg) * signs
    win = DamageWindow(cfg.n_phase1 + month, cfg.n_phase1 + month + window,
                       tuple(delta.tolist()), "damage")
    return replace(cfg, damage=(win,))
