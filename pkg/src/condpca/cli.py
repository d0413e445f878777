"""Command-line front end.

Each subcommand reads a YAML run configuration, writes its artifacts into
the output directory and finishes with a ``manifest_<command>.json`` that
lists the resolved configuration, seed, input and output checksums. No
wall-clock information is recorded, so reruns with the same configuration
and seed reproduce every file byte for byte, whatever the thread count.

Exit status: 0 on success, 1 on a package error, 2 on bad usage or
configuration, 3 when a result carries unresolved flags (always for a
non-converged calibration, otherwise only under ``--strict``).
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import simulate as sim
from ._backend import BACKEND
from .bootstrap import calibrate_h4, cov_confidence_bands, detection_metrics, make_block_plan
from .covariance import DEFAULT_BANDWIDTH_GRID, pair_index
from .data import (
    PHASE_I,
    PHASE_II,
    Dataset,
    IngestSchema,
    concat,
    format_timestamps,
    load_dataset,
    phase_rows,
    split_phases,
    write_dataset,
)
from .errors import (
    ArtifactConsistencyError,
    CalibrationError,
    CondPCAError,
    ConfigurationError,
    DataError,
    EmptyDataError,
    SchemaError,
)
from .io import file_checksum, read_document, write_document
from .mean import PSplineConfig
from .mewma import ChartConfig, fit_chart_config, run_chart, write_chart_result
from .recon import CONDITIONAL, METHODS, UNSUPERVISED, fit_mean, fit_recon, load_model, save_model

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_FLAGGED = 0, 1, 2, 3

# Every accepted key with its default. ``None`` marks an optional value.
DEFAULTS = {
    "data": {
        "path": None,
        "outputs": None,
        "confounder": "z",
        "timestamp": "timestamp",
        "sentinel": "NA",
        "delimiter": ",",
        "phase_cut": None,
    },
    "method": CONDITIONAL,
    "mean": {
        "method": "pspline",
        "n_knots": 20,
        "degree": 3,
        "penalty_order": 2,
        "nw_bandwidth": None,
    },
    "kernel": {
        "grid": list(DEFAULT_BANDWIDTH_GRID),
        "override": None,
        "floor": 0.0,
        "folds": 5,
        "min_weight": 10.0,
        "eig_floor_rel": 1e-8,
        "n_anchors": 256,
    },
    "unsupervised": {"k_drop": 1},
    "chart": {
        "kappa": 0.2,
        "target_arl": 720.0,
        "reps": 10_000,
        "seed": 0,
        "block_len": 24,
        "tolerance": 0.05,
        "max_iter": 40,
        "cap": None,
    },
    "curves": {"grid_size": 50, "trim": 0.05, "reps": 1000, "level": 0.95,
               "bandwidth_scale": 0.5},
    "simulate": {"scenario": "detection", "params": {}},
    "output": {"dir": "out"},
}

_NUMBER = (int, float)
TYPES = {
    "data.path": str, "data.outputs": list, "data.confounder": str,
    "data.timestamp": str, "data.sentinel": str, "data.delimiter": str,
    "data.phase_cut": str,
    "method": str,
    "mean.method": str, "mean.n_knots": int, "mean.degree": int,
    "mean.penalty_order": int, "mean.nw_bandwidth": _NUMBER,
    "kernel.grid": list, "kernel.override": (*_NUMBER, list), "kernel.floor": _NUMBER,
    "kernel.folds": int, "kernel.min_weight": _NUMBER, "kernel.eig_floor_rel": _NUMBER,
    "kernel.n_anchors": int,
    "unsupervised.k_drop": int,
    "chart.kappa": _NUMBER, "chart.target_arl": _NUMBER, "chart.reps": int,
    "chart.seed": int, "chart.block_len": int, "chart.tolerance": _NUMBER,
    "chart.max_iter": int, "chart.cap": int,
    "curves.grid_size": int, "curves.trim": _NUMBER, "curves.reps": int,
    "curves.level": _NUMBER, "curves.bandwidth_scale": _NUMBER,
    "simulate.scenario": str, "simulate.params": dict,
    "output.dir": str,
}

SCENARIOS = {
    "detection": sim.detection_config,
    "bridge": sim.bridge_like_config,
    "custom": lambda **kw: sim.SimConfig(**kw),
}


# -- configuration --------------------------------------------------------

def _merge(base: dict, new: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in new.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {name!r}")
        if isinstance(base[key], dict) and name != "simulate.params":
            if not isinstance(val, dict):
                raise ConfigurationError(f"{name!r} must be a section")
            out[key] = _merge(base[key], val, name + ".")
        else:
            out[key] = val
    return out


def _check_types(cfg: dict, prefix: str = "") -> None:
    for key, val in cfg.items():
        name = f"{prefix}{key}"
        if name in TYPES:
            if val is None:
                continue
            want = TYPES[name]
            if isinstance(val, bool) or not isinstance(val, want):
                raise ConfigurationError(f"{name!r} has invalid value {val!r}")
        elif isinstance(val, dict):
            _check_types(val, name + ".")


def validate_config(cfg: dict) -> dict:
    """Range and consistency checks; raises :class:`ConfigurationError`."""
    _check_types(cfg)
    if cfg["method"] not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}")
    if cfg["mean"]["method"] not in ("pspline", "nadaraya_watson"):
        raise ConfigurationError("mean.method must be 'pspline' or 'nadaraya_watson'")
    if cfg["mean"]["method"] == "nadaraya_watson" and not cfg["mean"]["nw_bandwidth"]:
        raise ConfigurationError("mean.nw_bandwidth is required for nadaraya_watson")
    grid = cfg["kernel"]["grid"]
    if not grid or not all(isinstance(h, _NUMBER) and h > 0 for h in grid):
        raise ConfigurationError("kernel.grid must be a list of positive numbers")
    ch = cfg["chart"]
    if not (0 < ch["kappa"] <= 1):
        raise ConfigurationError("chart.kappa must lie in (0, 1]")
    if not ch["target_arl"] > 1:
        raise ConfigurationError("chart.target_arl must exceed 1")
    if ch["reps"] < 1 or ch["block_len"] < 1 or ch["seed"] < 0:
        raise ConfigurationError("chart.reps and chart.block_len must be positive, "
                                 "chart.seed non-negative")
    cv = cfg["curves"]
    if cv["grid_size"] < 2 or not (0 <= cv["trim"] < 0.5) or not (0 < cv["level"] < 1):
        raise ConfigurationError("curves: need grid_size >= 2, 0 <= trim < 0.5, "
                                 "0 < level < 1")
    if cv["reps"] < 1 or not cv["bandwidth_scale"] > 0:
        raise ConfigurationError("curves.reps and curves.bandwidth_scale must be positive")
    sc = cfg["simulate"]
    if sc["scenario"] not in SCENARIOS:
        raise ConfigurationError(f"simulate.scenario must be one of {sorted(SCENARIOS)}")
    known = {f.name for f in fields(sim.SimConfig)} | {"shift_sd", "month", "window", "signs"}
    bad = set(sc["params"]) - known
    if bad:
        raise ConfigurationError(f"unknown simulate.params keys {sorted(bad)}")
    if cfg["data"]["outputs"] is not None and not all(
            isinstance(o, str) for o in cfg["data"]["outputs"]):
        raise ConfigurationError("data.outputs must be a list of column names")
    return cfg


def load_config(path=None, args=None) -> tuple[dict, Path]:
    """Defaults, then the YAML file, then command-line overrides."""
    doc, base = {}, Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError("configuration must be a mapping")
        base = path.resolve().parent
    cfg = _merge(DEFAULTS, doc)
    if args is not None:
        for attr, key in (("seed", "chart.seed"), ("kappa", "chart.kappa"),
                          ("target_arl", "chart.target_arl"), ("reps", "chart.reps"),
                          ("method", "method"), ("out", "output.dir")):
            val = getattr(args, attr, None)
            if val is None:
                continue
            *sect, leaf = key.split(".")
            node = cfg
            for s in sect:
                node = node[s]
            node[leaf] = val
    return validate_config(cfg), base


# -- helpers --------------------------------------------------------------

class Run:
    """Bookkeeping for one command: resolved paths, inputs and outputs."""

    def __init__(self, command: str, cfg: dict, base: Path, strict: bool):
        self.command = command
        self.cfg = cfg
        self.base = base
        self.strict = strict
        self.out = self.resolve(cfg["output"]["dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.flags: list[str] = []

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base / p

    def input(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"input file {p} does not exist")
        self.inputs[p.name] = file_checksum(p)
        return p

    def output(self, name: str) -> Path:
        return self.out / name

    def record(self, path: Path) -> None:
        self.outputs[path.name] = file_checksum(path)

    def write_json(self, name: str, doc: dict) -> Path:
        path = self.output(name)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")
        self.record(path)
        return path

    def finish(self) -> int:
        cfg = copy.deepcopy(self.cfg)
        del cfg["output"]
        manifest = {
            "command": self.command,
            "config": cfg,
            "seed": self.cfg["chart"]["seed"],
            "backend": BACKEND,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "flags": self.flags,
        }
        path = self.output(f"manifest_{self.command}.json")
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return EXIT_FLAGGED if (self.strict and self.flags) else EXIT_OK


def _schema(cfg: dict, path: Path, outputs=None, need_confounder=True) -> IngestSchema:
    d = cfg["data"]
    outs = outputs or d["outputs"]
    header = pd.read_csv(path, sep=d["delimiter"], nrows=0).columns
    header = [c.strip() for c in header]
    conf = d["confounder"]
    if not need_confounder and conf not in header:
        conf = None
    if outs is None:
        skip = {d["timestamp"], d["confounder"], "phase", "scenario", "sparse", "floored"}
        outs = [c for c in header if c not in skip]
    return IngestSchema(outputs=tuple(outs), confounder=conf, timestamp=d["timestamp"],
                        sentinel=d["sentinel"], delimiter=d["delimiter"])


def _load(run: Run, path, outputs=None, need_confounder=True) -> Dataset:
    if path is None:
        path = run.cfg["data"]["path"]
        if path is None:
            raise ConfigurationError("no data file: set data.path or pass --data")
        path = run.resolve(path)
    path = run.input(path)
    return load_dataset(path, _schema(run.cfg, path, outputs, need_confounder))


def _phases(cfg: dict, d: Dataset) -> tuple[Dataset | None, Dataset | None]:
    cut = cfg["data"]["phase_cut"]
    if cut is not None:
        return split_phases(d, cut)
    labels = d.phase.astype(str)
    one = phase_rows(d, PHASE_I) if (labels == PHASE_I).any() else None
    two = phase_rows(d, PHASE_II) if (labels == PHASE_II).any() else None
    return one, two


def _method(run: Run) -> str:
    return run.cfg["method"]


def _model_path(run: Run, given=None) -> Path:
    return Path(given) if given else run.output(f"model_{_method(run)}.json")


def _load_model(run: Run, given=None):
    path = run.input(_model_path(run, given))
    model, digest = load_model(path)
    if model.method != _method(run):
        raise ArtifactConsistencyError(
            f"model {path.name} was fitted with method {model.method!r}, "
            f"requested {_method(run)!r}")
    return model, digest


def _bandwidth_override(cfg: dict, p: int):
    ov = cfg["kernel"]["override"]
    if ov is None:
        return None
    H = np.asarray(ov, dtype=np.float64)
    if H.ndim == 0:
        return float(H)
    if H.shape != (p, p) or not np.allclose(H, H.T) or (H <= 0).any():
        raise ConfigurationError("kernel.override must be positive scalar or p x p symmetric")
    return H


def _pspline(cfg: dict) -> PSplineConfig:
    m = cfg["mean"]
    return PSplineConfig(n_knots=m["n_knots"], degree=m["degree"],
                         penalty_order=m["penalty_order"])


# -- commands -------------------------------------------------------------

def cmd_simulate(run: Run, args) -> None:
    sc = run.cfg["simulate"]
    params = dict(sc["params"])
    if "damage" in params:
        params["damage"] = tuple(sim.DamageWindow(**w) for w in params["damage"])
    for key in ("mean_coefs",):
        if key in params:
            params[key] = tuple(tuple(r) for r in params[key])
    try:
        scfg = SCENARIOS[sc["scenario"]](**params)
    except TypeError as exc:
        raise ConfigurationError(f"simulate.params: {exc}") from None
    seed = run.cfg["chart"]["seed"]
    d, truth = sim.simulate_dataset(scfg, seed)
    data_path = run.output("dataset.csv")
    write_dataset(d, data_path)
    run.record(data_path)
    grid = np.linspace(d.z.min(), d.z.max(), 101)
    iu, ju = pair_index(scfg.p)
    cov = truth.cov(grid)
    content = {
        "seed": int(seed),
        "scenario": sc["scenario"],
        "config": scfg.to_dict(),
        "curves": {
            "z": grid.tolist(),
            "mean": truth.mean(grid).tolist(),
            "covariance": cov[:, iu, ju].tolist(),
            "pairs": [[int(a), int(b)] for a, b in zip(iu, ju)],
        },
    }
    truth_path = run.output("truth.json")
    write_document(truth_path, "sim_truth", content)
    run.record(truth_path)


def cmd_fit(run: Run, args) -> None:
    cfg = run.cfg
    method = _method(run)
    d = _load(run, args.data, need_confounder=method != UNSUPERVISED)
    p1, _ = _phases(cfg, d)
    if p1 is None:
        raise EmptyDataError("no Phase-I rows to fit on")
    kern = cfg["kernel"]
    model = fit_recon(
        p1.z, p1.X, method, outputs=p1.outputs,
        mean_method=cfg["mean"]["method"], pspline=_pspline(cfg),
        nw_bandwidth=cfg["mean"]["nw_bandwidth"],
        bandwidth=_bandwidth_override(cfg, p1.p), bandwidth_grid=tuple(kern["grid"]),
        bandwidth_floor=kern["floor"], cv_folds=kern["folds"], hours=p1.hours,
        min_weight=kern["min_weight"], eig_floor_rel=kern["eig_floor_rel"],
        n_anchors=kern["n_anchors"], k_drop=cfg["unsupervised"]["k_drop"])
    path = run.output(f"model_{method}.json")
    digest = save_model(model, path)
    run.record(path)
    report = {"method": method, "model_checksum": digest, "phase1_rows": p1.n,
              "dropped_rows": d.dropped, "outputs": list(p1.outputs)}
    if model.mean_model is not None:
        report["mean"] = {"method": model.mean_model.method,
                          "penalties": None if model.mean_model.penalties is None
                          else [float(v) for v in model.mean_model.penalties]}
    if model.cov_model is not None:
        H = model.cov_model.bandwidths
        iu, ju = pair_index(model.p)
        report["bandwidths"] = [
            {"pair": [p1.outputs[a], p1.outputs[b]], "bandwidth": float(H[a, b])}
            for a, b in zip(iu, ju)]
        _, _, sparse, floored = model.cov_model.evaluate(p1.z, on_sparse="flag")
        report["sparse_phase1_rows"] = int(sparse.sum())
        report["floored_phase1_rows"] = int(floored.sum())
        if sparse.any():
            run.flags.append(f"{int(sparse.sum())} Phase-I rows in sparse regions")
    if model.method == UNSUPERVISED:
        report["k_drop"] = model.k_drop
        report["marginal_eigenvalues"] = model.marginal_values.tolist()
    run.write_json(f"fit_report_{method}.json", report)


def _write_features(path: Path, d: Dataset, F: np.ndarray, flags: dict, has_z: bool):
    cols = {"timestamp": format_timestamps(d.timestamps)}
    for j, name in enumerate(d.outputs):
        cols[name] = [repr(float(v)) for v in F[:, j]]
    if has_z:
        cols[d.confounder] = [repr(float(v)) for v in d.z]
    cols["phase"] = [str(v) for v in d.phase]
    if d.scenario is not None:
        cols["scenario"] = [str(v) for v in d.scenario]
    cols["sparse"] = flags["sparse"].astype(int)
    cols["floored"] = flags["floored"].astype(int)
    pd.DataFrame(cols).to_csv(path, index=False)


def cmd_reconstruct(run: Run, args) -> None:
    cfg = run.cfg
    model, digest = _load_model(run, args.model)
    if cfg["data"]["outputs"] is not None and tuple(cfg["data"]["outputs"]) != model.outputs:
        raise SchemaError(f"configured outputs {cfg['data']['outputs']} differ from "
                          f"the model's {list(model.outputs)}")
    has_z = model.method != UNSUPERVISED
    d = _load(run, args.data, outputs=model.outputs, need_confounder=has_z)
    if cfg["data"]["phase_cut"] is not None:
        d = concat(split_phases(d, cfg["data"]["phase_cut"]))
    F, flags = model.transform(d.X, d.z if has_z else None, on_sparse="flag")
    path = run.output(f"features_{model.method}.csv")
    _write_features(path, d, F, flags, has_z)
    run.record(path)
    report = {"method": model.method, "model_checksum": digest, "rows": d.n,
              "dropped_rows": d.dropped, "sparse_rows": int(flags["sparse"].sum()),
              "floored_rows": int(flags["floored"].sum())}
    if flags["sparse"].any():
        run.flags.append(f"{int(flags['sparse'].sum())} rows in sparse regions")
    if flags["floored"].any():
        run.flags.append(f"{int(flags['floored'].sum())} rows with floored eigenvalues")
    run.write_json(f"reconstruct_report_{model.method}.json", report)


def _features(run: Run, model, given=None) -> tuple[Dataset, Path]:
    path = Path(given) if given else run.output(f"features_{model.method}.csv")
    has_z = model.method != UNSUPERVISED
    d = _load(run, path, outputs=model.outputs, need_confounder=has_z)
    return d, path


def cmd_calibrate(run: Run, args) -> None:
    cfg = run.cfg
    ch = cfg["chart"]
    model, digest = _load_model(run, args.model)
    feats, fpath = _features(run, model, args.features)
    p1 = phase_rows(feats, PHASE_I)
    ccfg = fit_chart_config(p1.X, kappa=ch["kappa"],
                            allow_singular=model.method == UNSUPERVISED)
    plan = make_block_plan(p1, block_len=ch["block_len"], seed=ch["seed"])
    content = {"method": model.method, "model_checksum": digest,
               "features_checksum": run.inputs[fpath.name], "seed": ch["seed"],
               "block_len": ch["block_len"], "phase1_rows": p1.n}
    try:
        cal = calibrate_h4(ch["target_arl"], ccfg, p1.X, plan, reps=ch["reps"],
                           tolerance=ch["tolerance"], max_iter=ch["max_iter"], cap=ch["cap"])
    except CalibrationError as exc:
        content.update(chart=ccfg.to_dict(), calibration=None, converged=False,
                       error=str(exc))
        _write_chart_doc(run, model.method, content)
        raise
    content.update(chart=ccfg.with_h4(cal.h4).to_dict(), calibration=cal.to_dict(),
                   converged=cal.converged)
    _write_chart_doc(run, model.method, content)
    if not cal.converged:
        run.flags.append("calibration did not converge")
        run.strict = True
    if cal.censored_fraction > 0.5:
        run.flags.append("more than half of the bootstrap runs were censored")


def _write_chart_doc(run: Run, method: str, content: dict) -> None:
    path = run.output(f"chart_{method}.json")
    write_document(path, "chart_config", content)
    run.record(path)


def cmd_monitor(run: Run, args) -> None:
    model, digest = _load_model(run, args.model)
    cpath = run.input(Path(args.chart) if args.chart
                      else run.output(f"chart_{model.method}.json"))
    chart, _ = read_document(cpath, "chart_config")
    if chart.get("model_checksum") != digest:
        raise ArtifactConsistencyError(
            f"{cpath.name} was calibrated for a different model than {model.method}")
    if chart.get("method") != model.method:
        raise ArtifactConsistencyError("chart and model methods differ")
    if not chart.get("converged") or chart["chart"].get("h4") is None:
        raise ArtifactConsistencyError(f"{cpath.name} holds no converged control limit")
    ccfg = ChartConfig.from_dict(chart["chart"])
    has_z = model.method != UNSUPERVISED
    d = _load(run, args.data, outputs=model.outputs, need_confounder=has_z)
    _, p2 = _phases(run.cfg, d)
    if p2 is None or p2.n == 0:
        raise DataError("no Phase-II rows to monitor")
    F, flags = model.transform(p2.X, p2.z if has_z else None, on_sparse="flag")
    ooc = None if p2.scenario is None else ~p2.in_control()
    # during labelled evaluation the chart restarts only after false alarms
    reset = None if ooc is None else ~ooc
    res = run_chart(F, ccfg, reset=reset)
    path = run.output(f"monitor_{model.method}.csv")
    write_chart_result(res, path, p2.timestamps, p2.scenario)
    run.record(path)
    metrics = {"method": model.method, "rows": int(res.m), "h4": float(res.h4),
               "alarms": int(res.alarm.sum()), "first_alarm": (
                   None if not res.alarm.any() else int(res.alarms[0])),
               "sparse_rows": int(flags["sparse"].sum()),
               "floored_rows": int(flags["floored"].sum())}
    if ooc is not None:
        metrics["detection"] = detection_metrics(res, ooc)
    if flags["sparse"].any():
        run.flags.append(f"{int(flags['sparse'].sum())} Phase-II rows in sparse regions")
    run.write_json(f"metrics_{model.method}.json", metrics)


def cmd_curves(run: Run, args) -> None:
    cfg = run.cfg
    if cfg["method"] != CONDITIONAL:
        raise ConfigurationError("curves need a conditional model")
    model, digest = _load_model(run, args.model)
    d = _load(run, args.data, outputs=model.outputs)
    p1, _ = _phases(cfg, d)
    if p1 is None:
        raise EmptyDataError("no Phase-I rows")
    cv = cfg["curves"]
    lo, hi = np.quantile(p1.z, [cv["trim"], 1.0 - cv["trim"]])
    grid = np.linspace(lo, hi, cv["grid_size"])
    reps = args.reps if args.reps is not None else cv["reps"]
    m = cfg["mean"]

    def refit(z, X):
        return fit_mean(z, X, m["method"], _pspline(cfg), m["nw_bandwidth"])

    plan = make_block_plan(p1, block_len=cfg["chart"]["block_len"], seed=cfg["chart"]["seed"])
    cm = model.cov_model
    # undersmoothing keeps the O(h^2) kernel bias small next to the band width
    H = cv["bandwidth_scale"] * cm.bandwidths
    bands = cov_confidence_bands(p1.z, p1.X, grid, H, refit, plan, reps=reps,
                                 level=cv["level"], min_weight=cm.min_weight,
                                 eig_floor_rel=cm.eig_floor_rel)
    rows = []
    names = model.outputs
    for j, name in enumerate(names):
        for g in range(grid.size):
            rows.append(("variance", name, grid[g], bands.variance_lo[g, j],
                         bands.variance[g, j], bands.variance_median[g, j],
                         bands.variance_hi[g, j], int(bands.excluded[g]),
                         int(bands.flagged[g])))
    for c, (a, b) in enumerate(bands.pairs):
        for g in range(grid.size):
            rows.append(("correlation", f"{names[a]}:{names[b]}", grid[g],
                         bands.correlation_lo[g, c], bands.correlation[g, c],
                         bands.correlation_median[g, c], bands.correlation_hi[g, c],
                         int(bands.excluded[g]), int(bands.flagged[g])))
    frame = pd.DataFrame(rows, columns=["quantity", "pair", "z", "low", "estimate",
                                        "median", "high", "excluded", "flag"])
    for col in ("z", "low", "estimate", "median", "high"):
        frame[col] = [repr(float(v)) for v in frame[col]]
    path = run.output("bands.csv")
    frame.to_csv(path, index=False)
    run.record(path)
    if bands.flagged.any():
        run.flags.append(f"{int(bands.flagged.sum())} grid points lost >10% of replicates")
    run.write_json("curves_report.json", {"model_checksum": digest, "reps": int(reps),
                                          "bandwidth_scale": cv["bandwidth_scale"],
                                          "level": cv["level"], "grid_size": int(grid.size),
                                          "flagged_points": int(bands.flagged.sum())})


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "reconstruct": cmd_reconstruct,
    "calibrate": cmd_calibrate,
    "monitor": cmd_monitor,
    "curves": cmd_curves,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condpca",
        description="Confounder-adjusted PCA features and MEWMA monitoring.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides chart.seed)")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--kappa", type=float)
    common.add_argument("--target-arl", type=float, dest="target_arl")
    common.add_argument("--reps", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--strict", action="store_true",
                        help="exit with status 3 when any result carries a flag")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "draw a synthetic dataset and its ground truth",
        "fit": "fit the reconstruction model on Phase-I data",
        "reconstruct": "write reconstructed features for every row",
        "calibrate": "calibrate the MEWMA limit by block bootstrap",
        "monitor": "run the chart on Phase-II data",
        "curves": "conditional variance and correlation curves with bootstrap bands",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name != "simulate":
            sp.add_argument("--data", help="data file (overrides data.path)")
            sp.add_argument("--model", help="model artifact (default: out/model_<method>.json)")
        if name == "calibrate":
            sp.add_argument("--features", help="feature file (default: out/features_<method>.csv)")
        if name == "monitor":
            sp.add_argument("--chart", help="chart artifact (default: out/chart_<method>.json)")
    return parser


def _provenance(exc: BaseException) -> str:
    """Name of the innermost package module on the traceback."""
    mod = "cli"
    tb = exc.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("condpca."):
            mod = name.split(".", 1)[1]
        tb = tb.tb_next
    return mod


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, base = load_config(args.config, args)
    except ConfigurationError as exc:
        print(f"condpca: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    run = Run(args.command, cfg, base, args.strict)
    try:
        COMMANDS[args.command](run, args)
    except ConfigurationError as exc:
        print(f"condpca {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CondPCAError as exc:
        print(f"condpca {args.command}: {type(exc).__name__} in {_provenance(exc)}: {exc}",
              file=sys.stderr)
        return EXIT_ERROR
    code = run.finish()
    for flag in run.flags:
        print(f"condpca {args.command}: flag: {flag}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
