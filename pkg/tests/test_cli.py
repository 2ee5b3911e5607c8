"""Command-line behaviour on a small synthetic dataset."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from stgode.cli import main
from stgode.data import read_matrix_csv
from stgode.model import load_checkpoint
from stgode.pipeline import load_dataset, prepare_splits
from stgode.training import predict

SMALL = [
    "--n-nodes", "6", "--n-steps", "300", "--semantic-band", "12", "--channels", "4,2,4",
    "--blocks-per-kind", "1", "--head-hidden", "8", "--epochs", "2", "--batch-size", "16", "--seed", "3",
]


def run(args, expect=0):
    res = CliRunner().invoke(main, args, catch_exceptions=False)
    assert res.exit_code == expect, res.output
    return res


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    run(["synth", *SMALL])
    return tmp_path


@pytest.fixture
def built(workdir):
    run(["build-graph", *SMALL])
    return workdir


def test_synth_writes_files(workdir):
    assert (workdir / "data/series.csv").exists() and (workdir / "data/edges.csv").exists()
    meta = json.loads((workdir / "data/series.meta.json").read_text())
    assert meta["config"]["n_nodes"] == 6


def test_build_graph_outputs_and_determinism(built):
    g = built / "graph"
    first = {p.name: p.read_bytes() for p in g.iterdir()}
    assert {"spatial.csv", "semantic.csv", "graph_summary.json"} <= set(first)
    summary = json.loads(first["graph_summary.json"])
    assert summary["spatial"]["eig_max"] <= 0.8 + 1e-8 and summary["config"]["alpha"] == 0.8
    run(["build-graph", *SMALL])
    assert {p.name: p.read_bytes() for p in g.iterdir()} == first


def test_build_graph_two_node_toy(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "s.csv").write_text("a,b\n" + "".join(f"{i % 3},{(i + 1) % 3}\n" for i in range(30)))
    (tmp_path / "e.csv").write_text("from,to,distance\na,b,0\n")
    run(["build-graph", "--series", "s.csv", "--edges", "e.csv", "--epsilon-spatial", "1.0", "--export-raw"])
    np.testing.assert_allclose(read_matrix_csv("graph/spatial.csv"), [[0.4, 0.4], [0.4, 0.4]], atol=1e-15)
    np.testing.assert_array_equal(read_matrix_csv("graph/spatial_raw.csv"), [[0, 1], [1, 0]])


def test_spatial_threshold_extreme(workdir):
    run(["build-graph", *SMALL, "--epsilon-spatial", "1.0", "--export-raw"])
    raw = read_matrix_csv("graph/spatial_raw.csv")
    assert np.all(raw[~np.eye(6, dtype=bool)] == 0)  # no zero-length roads in the generator


def test_parse_error_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "s.csv").write_text("a,b\n1,2\n3,oops\n")
    res = CliRunner().invoke(main, ["build-graph", "--series", "s.csv"])
    assert res.exit_code == 2 and "s.csv:3" in res.output


def test_missing_input_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    res = CliRunner().invoke(main, ["build-graph"])
    assert res.exit_code == 2 and "no such file" in res.output


def test_validation_error_exit_code(workdir):
    res = CliRunner().invoke(main, ["build-graph", *SMALL, "--alpha", "1.5"])
    assert res.exit_code == 1
    res = CliRunner().invoke(main, ["train", "--config", "nope.cfg"])
    assert res.exit_code == 2


def test_unknown_config_key(workdir):
    (workdir / "bad.cfg").write_text("histroy = 3\n")
    res = CliRunner().invoke(main, ["train", "--config", "bad.cfg"])
    assert res.exit_code == 1 and "histroy" in res.output


def test_train_missing_adjacency_names_path(workdir):
    res = CliRunner().invoke(main, ["train", *SMALL])
    assert res.exit_code == 2 and "graph/spatial.csv" in res.output


def test_train_eval_persistence_and_determinism(built):
    run(["train", *SMALL, "--persistence"])
    metrics = (built / "run/metrics.json").read_bytes()
    m = json.loads(metrics)
    assert m["config"]["seed"] == 3 and len(m["history"]) == 2 and "persistence" in m
    assert len(m["test"]["per_step"]) == 12

    run(["eval", *SMALL, "--persistence"])
    ev = json.loads((built / "run/eval_metrics.json").read_text())
    assert ev["test"] == m["test"]
    assert ev["persistence"] == m["persistence"]

    cfg_args = dict(zip(SMALL[::2], SMALL[1::2]))
    model, _ = load_checkpoint("run/checkpoint.npz")
    assert model.cfg.channels == (4, 2, 4) and int(cfg_args["--seed"]) == model.cfg.seed

    run(["train", *SMALL, "--persistence"])
    assert (built / "run/metrics.json").read_bytes() == metrics


def test_checkpoint_predictions_bit_identical(built):
    from stgode.config import load_config

    run(["train", *SMALL])
    cfg = load_config(None, {"series": "data/series.csv"})
    splits = prepare_splits(cfg, load_dataset(cfg))
    a, _ = load_checkpoint("run/checkpoint.npz")
    b, _ = load_checkpoint("run/checkpoint.npz")
    assert np.array_equal(predict(a, splits.test.inputs), predict(b, splits.test.inputs))


def test_eval_dimension_mismatch(built):
    run(["train", *SMALL])
    res = CliRunner().invoke(main, ["eval", *SMALL, "--history", "6"])
    assert res.exit_code == 1 and "history" in res.output


def test_verify_selected_suites_and_fault(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    res = run(["verify", "--only", "dtw_brute_force", "--only", "mode_product_identities"])
    assert res.output.count("PASS") == 2
    report = json.loads((tmp_path / "run/verify_report.json").read_text())
    assert report["passed"] and {s["name"] for s in report["suites"]} == {"dtw_brute_force", "mode_product_identities"}
    assert all("max_error" in s for s in report["suites"])

    res = run(["verify", "--only", "ode_oracle_triangle", "--inject-fault"], expect=1)
    assert "FAIL  ode_oracle_triangle" in res.output
    res = CliRunner().invoke(main, ["verify", "--only", "nonsense"])
    assert res.exit_code == 1


def test_demo_outputs(built):
    args = [*SMALL, "--demo-epochs", "1", "--demo-depths", "1,2", "--demo-channels", "2,2,2", "--demo-head-hidden", "4",
            "--demo-collapse-max", "5"]
    run(["demo", *args])
    depth = (built / "run/depth.csv").read_text().splitlines()
    assert depth[0] == "depth,model,val_mae" and len(depth) == 5
    assert [line.split(",")[:2] for line in depth[1:]] == [["1", "ode"], ["2", "ode"], ["1", "gcn"], ["2", "gcn"]]
    collapse = [line.split(",") for line in (built / "run/collapse.csv").read_text().splitlines()]
    assert collapse[0] == ["graph", "n", "node_variance", "smoothing_residual"]
    toy = {int(r[1]): float(r[2]) for r in collapse[1:] if r[0] == "toy"}
    assert toy[0] > 0 and toy[1] == 0.0
    first = (built / "run/depth.csv").read_bytes()
    run(["demo", *args])
    assert (built / "run/depth.csv").read_bytes() == first


def test_help_lists_config_flags():
    out = run(["train", "--help"]).output
    assert "--epsilon-semantic" in out and "--use-semantic / --no-use-semantic" in out
