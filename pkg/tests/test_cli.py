from __future__ import annotations

import csv
import json
import subprocess
import sys

import pydot
import pytest

from contrastive_abstraction.cli import (
    EXIT_CONFIG,
    EXIT_INPUT,
    EXIT_MODEL,
    EXIT_SELECTION,
    main,
)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "walks.csv"
    assert main(["generate", "--kind", "changepoint", "--k", "12", "--T", "30", "--i-star", "7",
                 "--seed", "3", "--output", str(data)]) == 0
    out = root / "run1"
    assert main(["abstract", "-i", str(data), "-o", str(out), "--threshold-count", "9",
                 "--dim-names", "x", "y", "--epsilon", "2"]) == 0
    return root, data, out


class TestGenerate:
    def test_dataset_and_sidecar(self, tmp_path):
        path = tmp_path / "d.csv"
        assert main(["generate", "--k", "100", "--T", "100", "--output", str(path)]) == 0
        rows = read_csv(path)
        assert rows[0] == ["chain", "s_1", "s_2", "sp_1", "sp_2", "terminal"]
        assert len(rows) - 1 == 100 * 99
        meta = json.loads((tmp_path / "d.meta.json").read_text())
        assert meta["generator"] == "rotating" and meta["transitions"] == 9900

    def test_changepoint_records_i_star(self, workspace):
        root, _, _ = workspace
        assert json.loads((root / "walks.meta.json").read_text())["i_star"] == 7

    def test_changepoint_needs_i_star(self, tmp_path):
        assert main(["generate", "--kind", "changepoint", "--output", str(tmp_path / "d.csv")]) == EXIT_CONFIG
        assert main(["generate", "--kind", "changepoint", "--k", "5", "--i-star", "9",
                     "--output", str(tmp_path / "d.csv")]) == EXIT_CONFIG


class TestAbstract:
    def test_outputs(self, workspace):
        _, _, out = workspace
        names = {p.name for p in out.iterdir()}
        assert {"model.json", "tree.txt", "semantic_key.txt", "visitation.csv"} <= names
        model = json.loads((out / "model.json").read_text())
        n, m = model["n"], model["m"]
        assert model["dim_names"] == ["x", "y"]
        assert "input" not in model["config"] and len(model["config"]["input_sha256"]) == 64
        assert model["window_trace"][0]["cut"] == 7
        assert {f"graph_w{w}.dot" for w in range(1, n + 1)} <= names
        assert {f"outbound_x{x}.csv" for x in range(1, m + 1)} <= names
        vis = read_csv(out / "visitation.csv")
        assert len(vis) == n + 1
        assert "if x < " in (out / "tree.txt").read_text() or "if y < " in (out / "tree.txt").read_text()

    def test_dot_files_parse(self, workspace):
        _, _, out = workspace
        for path in sorted(out.glob("graph_w*.dot")):
            graphs = pydot.graph_from_dot_data(path.read_text())
            assert graphs and graphs[0].get_name() == path.stem.replace("graph_w", "window_")
            for edge in graphs[0].get_edges():
                assert float(edge.get("probability").strip('"')) >= 0.01

    def test_deterministic_across_runs(self, workspace):
        root, data, out = workspace
        out2 = root / "run2"
        assert main(["abstract", "-i", str(data), "-o", str(out2), "--threshold-count", "9",
                     "--dim-names", "x", "y", "--epsilon", "2"]) == 0
        first = {p.name: p.read_bytes() for p in out.iterdir()}
        second = {p.name: p.read_bytes() for p in out2.iterdir()}
        assert first == second

    def test_empty_input_writes_nothing(self, tmp_path):
        data = tmp_path / "empty.csv"
        data.write_text("chain,s_1,sp_1,terminal\n")
        out = tmp_path / "out"
        assert main(["abstract", "-i", str(data), "-o", str(out)]) == EXIT_INPUT
        assert not out.exists()

    def test_config_file_and_flag_override(self, workspace, tmp_path):
        _, data, _ = workspace
        cfg = tmp_path / "run.toml"
        cfg.write_text(f'input = "{data}"\n[abstract]\nalpha = 10.0\nbeta = 10.0\nthreshold-count = 5\n')
        out = tmp_path / "cfg"
        assert main(["abstract", "--config", str(cfg), "-o", str(out)]) == 0
        model = json.loads((out / "model.json").read_text())
        assert model["m"] == 1 and model["n"] == 1 and model["config"]["threshold_count"] == 5
        out2 = tmp_path / "cfg2"
        assert main(["abstract", "--config", str(cfg), "-o", str(out2), "--alpha", "0", "--beta", "0",
                     "--max-states", "3", "--max-windows", "2"]) == 0
        model = json.loads((out2 / "model.json").read_text())
        assert model["m"] == 3 and model["n"] == 2 and model["config"]["alpha"] == 0

    def test_unknown_config_key(self, workspace, tmp_path):
        _, data, _ = workspace
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[abstract]\ngamma = 1\n")
        assert main(["abstract", "--config", str(cfg), "-i", str(data), "-o", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_invalid_hyperparameter(self, workspace, tmp_path):
        _, data, _ = workspace
        assert main(["abstract", "-i", str(data), "-o", str(tmp_path / "o"), "--alpha", "-1"]) == EXIT_CONFIG


class TestAnalyze:
    def test_default_prototypes(self, workspace, tmp_path):
        _, data, out = workspace
        res = tmp_path / "an"
        assert main(["analyze", "-m", str(out / "model.json"), "-i", str(data), "-o", str(res)]) == 0
        n = json.loads((out / "model.json").read_text())["n"]
        assert sorted(p.name for p in res.iterdir()) == sorted(f"prototype_w{w}.csv" for w in range(1, n + 1))
        rows = read_csv(res / "prototype_w1.csv")
        assert rows[0] == ["t", "chain", "abstract_state", "x", "y"]
        assert len(rows) == 1 + 30 and 1 <= int(rows[1][1]) < 7

    def test_posterior_and_counterfactual(self, workspace, tmp_path):
        _, data, out = workspace
        res = tmp_path / "an"
        assert main(["analyze", "-m", str(out / "model.json"), "-i", str(data), "-o", str(res),
                     "--episode", "2", "--t", "0"]) == 0
        post = read_csv(res / "posterior_ep2.csv")
        assert post[0] == ["t", "window", "log_posterior", "baseline_subtracted", "posterior"]
        n = json.loads((out / "model.json").read_text())["n"]
        assert len(post) == 1 + 30 * n
        at0 = [r for r in post[1:] if r[0] == "0"]
        assert sum(float(r[4]) for r in at0) == pytest.approx(1.0, abs=1e-9)
        cf = read_csv(res / "counterfactual_ep2_t0.csv")
        assert cf[0][:4] == ["rank", "successor", "factual", "tv_distance"]
        factual = [r for r in cf[1:] if r[2] == "1"]
        assert len(factual) == 1 and float(factual[0][3]) == 0.0

    def test_selection_errors(self, workspace, tmp_path):
        _, data, out = workspace
        base = ["analyze", "-m", str(out / "model.json"), "-i", str(data), "-o", str(tmp_path / "x")]
        assert main(base + ["--episode", "1", "--t", "29"]) == EXIT_SELECTION
        assert main(base + ["--episode", "13"]) == EXIT_SELECTION
        assert main(base + ["--window", "99"]) == EXIT_SELECTION
        assert main(base + ["--t", "0"]) == EXIT_SELECTION
        assert not (tmp_path / "x").exists()

    def test_bad_model(self, workspace, tmp_path):
        _, data, _ = workspace
        bad = tmp_path / "model.json"
        bad.write_text("{not json")
        assert main(["analyze", "-m", str(bad), "-i", str(data), "-o", str(tmp_path / "x")]) == EXIT_MODEL


class TestScaling:
    def test_csv_layout(self, tmp_path):
        assert main(["scaling", "--k", "10", "--T", "15", "--v", "0.05", "--sigma", "0.01", "--max-m", "3",
                     "--max-n", "2", "--seeds", "2", "--thresholds-per-dim", "5", "--n-states", "2",
                     "-o", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "scaling_m_v0.05_sigma0.01.csv")
        assert rows[0] == ["size", "strategy", "seed", "jsd"] and len(rows) == 1 + 2 * 2 * 3
        assert len(read_csv(tmp_path / "scaling_n_v0.05_sigma0.01.csv")) == 1 + 2 * 2 * 2
        summary = read_csv(tmp_path / "scaling_summary.csv")
        assert summary[0] == ["axis", "v", "sigma", "size", "strategy", "mean_jsd", "std_jsd"]


def test_module_entry_point_usage_error():
    proc = subprocess.run([sys.executable, "-m", "contrastive_abstraction", "abstract", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
