import csv
import json

import pytest

from causalkinetix.cli import main


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


def test_simulate_byte_identical(tmp_path):
    for run in ("a", "b"):
        assert main(["simulate", "--dataset", "maillard", "--L", "11", "--seed", "7", "--out", str(tmp_path / run)]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    assert {"data.json", "truth.json", "config.json", "manifest.json"} <= set(a)


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--dataset", "sigmoid", "--L", "10", "--seed", "3", "--out", str(out)]) == 0
    return out / "data.json"


def test_rank_variables_schema(tmp_path, sim):
    out = tmp_path / "rv"
    code = main(["rank-variables", "--input", str(sim), "--class", "exhaustive", "--p", "2", "--keep", "8",
                 "--K", "auto", "--out", str(out), "--workers", "1"])
    assert code == 0
    rows = list(csv.DictReader(open(out / "variable_ranking.csv")))
    assert len(rows) == 13
    assert set(rows[0]) == {"variable", "score", "p_value", "rank"}
    assert all(0 <= float(r["score"]) <= 1 and 0 <= float(r["p_value"]) <= 1 for r in rows)


def test_workers_invariance(tmp_path, sim):
    outs = []
    for w in ("1", "2"):
        out = tmp_path / f"w{w}"
        assert main(["score-models", "--input", str(sim), "--class", "exhaustive", "--p", "1",
                     "--out", str(out), "--workers", w]) == 0
        outs.append(_files(out))
    assert outs[0] == outs[1]


def test_config_rerun(tmp_path, sim):
    first = tmp_path / "first"
    assert main(["screen", "--input", str(sim), "--keep", "5", "--out", str(first)]) == 0
    second = tmp_path / "second"
    assert main(["screen", "--config", str(first / "config.json"), "--out", str(second)]) == 0
    assert _files(first) == _files(second)


def test_evaluate_summary(tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--study", "maillard", "--B", "2", "--seed", "1", "--out", str(out), "--workers", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert 0 <= summary["aggregates"]["median_auroc"] <= 1


def test_emit_json(tmp_path, sim, capsys):
    assert main(["validate", "--input", str(sim), "--out", str(tmp_path / "v"), "--emit", "json"]) == 0
    obj = json.loads(capsys.readouterr().out)
    assert obj["command"] == "validate"


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--bogus"]) == 1
    assert main(["rank-variables", "--input", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2
    short = {
        "variables": ["Y", "X"], "target": "Y",
        "experiments": [
            {"id": str(k), "repetitions": [{"times": [0, 1, 2], "values": [[0, 1, 2 + k], [1, 1, 1]]}]}
            for k in range(2)
        ],
    }
    path = tmp_path / "short.json"
    path.write_text(json.dumps(short))
    assert main(["score-models", "--input", str(path), "--p", "1", "--out", str(tmp_path / "y"), "--workers", "1"]) == 3
    err = capsys.readouterr().err
    assert '"numerical"' in err or "numerical" in err
