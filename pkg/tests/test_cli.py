import json
import shutil

import numpy as np
import pandas as pd
import pytest
import yaml

from condpca.cli import EXIT_ERROR, EXIT_FLAGGED, EXIT_OK, EXIT_USAGE, main

N1, N = 24 * 50, 24 * 60

CONFIG = {
    "simulate": {"scenario": "custom", "params": {
        "n": N, "n_phase1": N1, "p": 2, "mean_coefs": [[0, 3, 1], [1, -2, 0]],
        "sd_base": [1.0, 1.5], "sd_slope": [0.4, 0.3], "rho_mid": 0.4, "rho_amp": 0.3,
        "damage": [{"start": N1 + 120, "end": N, "delta": [3.0, -3.0]}]}},
    "chart": {"reps": 400, "target_arl": 100, "seed": 4},
    "curves": {"reps": 20, "grid_size": 5},
    "kernel": {"n_anchors": 32},
    "data": {"confounder": "temperature"},
}


def write_config(path, cfg=CONFIG):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.yaml")
    for cmd in ("simulate", "fit", "reconstruct", "calibrate", "monitor"):
        assert main([cmd, "--config", cfg, "--data", str(root / "out" / "dataset.csv")]
                    if cmd != "simulate" else [cmd, "--config", cfg]) == EXIT_OK, cmd
    return root


def args(root, cmd, *extra):
    a = [cmd, "--config", str(root / "run.yaml")]
    if cmd != "simulate":
        a += ["--data", str(root / "out" / "dataset.csv")]
    return a + list(extra)


def test_simulate_outputs(workdir):
    d = pd.read_csv(workdir / "out" / "dataset.csv")
    assert len(d) == N and {"s1", "s2", "temperature", "phase"} <= set(d.columns)
    truth = json.loads((workdir / "out" / "truth.json").read_text())
    assert truth["kind"] == "sim_truth"
    assert truth["content"]["seed"] == 4


def test_fit_report_lists_bandwidth_per_pair(workdir):
    rep = json.loads((workdir / "out" / "fit_report_conditional.json").read_text())
    pairs = [tuple(r["pair"]) for r in rep["bandwidths"]]
    assert pairs == [("s1", "s1"), ("s1", "s2"), ("s2", "s2")]
    assert all(r["bandwidth"] > 0 for r in rep["bandwidths"])
    assert len(rep["mean"]["penalties"]) == 2


def test_reconstruct_rows_and_flags(workdir):
    f = pd.read_csv(workdir / "out" / "features_conditional.csv")
    assert len(f) == N
    assert {"sparse", "floored"} <= set(f.columns)
    assert set(f["phase"]) == {"PhaseI", "PhaseII"}


def test_monitor_metrics(workdir):
    m = json.loads((workdir / "out" / "metrics_conditional.json").read_text())
    det = m["detection"]
    assert det["out_of_control_rows"] == N - N1 - 120
    assert det["pod"] > 0.5
    mon = pd.read_csv(workdir / "out" / "monitor_conditional.csv")
    assert len(mon) == N - N1


def test_manifest_has_checksums(workdir):
    man = json.loads((workdir / "out" / "manifest_calibrate.json").read_text())
    assert man["seed"] == 4
    assert set(man["inputs"]) == {"model_conditional.json", "features_conditional.csv"}
    assert "chart_conditional.json" in man["outputs"]
    assert "dir" not in man["config"].get("output", {})


def test_calibrate_deterministic(workdir, tmp_path):
    out = workdir / "out"
    before = (out / "chart_conditional.json").read_bytes()
    assert main(args(workdir, "calibrate")) == EXIT_OK
    assert (out / "chart_conditional.json").read_bytes() == before


def test_unsupervised_without_confounder(workdir, tmp_path):
    d = pd.read_csv(workdir / "out" / "dataset.csv").drop(columns=["temperature"])
    d.to_csv(tmp_path / "noz.csv", index=False)
    cfg = write_config(tmp_path / "u.yaml", {**CONFIG, "method": "unsupervised"})
    assert main(["fit", "--config", cfg, "--data", str(tmp_path / "noz.csv")]) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "fit_report_unsupervised.json").read_text())
    assert rep["k_drop"] == 1 and "bandwidths" not in rep
    # the conditional method needs the confounder column
    cfg = write_config(tmp_path / "c.yaml", CONFIG)
    assert main(["fit", "--config", cfg, "--data", str(tmp_path / "noz.csv")]) == EXIT_ERROR


def test_monitor_rejects_foreign_chart(workdir, tmp_path):
    out = tmp_path / "out"
    shutil.copytree(workdir / "out", out)
    doc = json.loads((out / "chart_conditional.json").read_text())
    doc["content"]["model_checksum"] = "0" * 64
    from condpca.io import write_document
    write_document(out / "chart_conditional.json", doc["kind"], doc["content"])
    cfg = write_config(tmp_path / "run.yaml")
    code = main(["monitor", "--config", cfg, "--data", str(out / "dataset.csv")])
    assert code == EXIT_ERROR


def test_monitor_needs_phase_two(workdir, tmp_path, capsys):
    d = pd.read_csv(workdir / "out" / "dataset.csv")
    d[d["phase"] == "PhaseI"].to_csv(tmp_path / "p1.csv", index=False)
    code = main(["monitor", "--config", str(workdir / "run.yaml"),
                 "--data", str(tmp_path / "p1.csv")])
    assert code == EXIT_ERROR
    assert "no Phase-II rows" in capsys.readouterr().err


def test_curves_grid_and_columns(workdir):
    assert main(args(workdir, "curves")) in (EXIT_OK,)
    b = pd.read_csv(workdir / "out" / "bands.csv")
    assert list(b.columns) == ["quantity", "pair", "z", "low", "estimate", "median",
                               "high", "excluded", "flag"]
    assert (b["quantity"] == "variance").sum() == 2 * 5
    assert (b["quantity"] == "correlation").sum() == 5
    assert (b["low"] <= b["high"]).all()


def test_strict_mode_exit(workdir, tmp_path):
    cfg = dict(CONFIG, kernel={"n_anchors": 32, "override": 0.01})
    path = write_config(tmp_path / "s.yaml", cfg)
    data = str(workdir / "out" / "dataset.csv")
    assert main(["fit", "--config", path, "--data", data]) == EXIT_OK
    assert main(["fit", "--config", path, "--data", data, "--strict"]) == EXIT_FLAGGED


@pytest.mark.parametrize("bad", [
    {"chart": {"kapa": 0.2}},
    {"method": "pca"},
    {"chart": {"kappa": 1.5}},
    {"chart": {"reps": "many"}},
    {"simulate": {"params": {"nn": 3}}},
])
def test_config_rejected(tmp_path, bad, capsys):
    assert main(["simulate", "--config", write_config(tmp_path / "b.yaml", bad)]) == EXIT_USAGE
    assert "configuration error" in capsys.readouterr().err


def test_curves_requires_conditional(workdir):
    assert main(args(workdir, "curves", "--method", "partial")) == EXIT_USAGE


def test_error_names_module(tmp_path, capsys):
    cfg = write_config(tmp_path / "r.yaml", {})
    (tmp_path / "d.csv").write_text("timestamp,z,s1\n")
    assert main(["fit", "--config", cfg, "--data", str(tmp_path / "d.csv")]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert "in data:" in err or "in recon:" in err


def test_partial_phase1_means_and_methods_differ(workdir, tmp_path):
    cfg = write_config(tmp_path / "p.yaml", CONFIG)
    data = str(workdir / "out" / "dataset.csv")
    for cmd in ("fit", "reconstruct"):
        assert main([cmd, "--config", cfg, "--data", data, "--method", "partial"]) == EXIT_OK
    raw = pd.read_csv(data)
    part = pd.read_csv(tmp_path / "out" / "features_partial.csv")
    cond = pd.read_csv(workdir / "out" / "features_conditional.csv")
    p1 = raw["phase"] == "PhaseI"
    xbar = raw.loc[p1, ["s1", "s2"]].mean().to_numpy()
    np.testing.assert_allclose(part.loc[p1, ["s1", "s2"]].mean().to_numpy(), xbar, atol=1e-6)
    assert np.abs(part[["s1", "s2"]].to_numpy() - cond[["s1", "s2"]].to_numpy()).max() > 0
