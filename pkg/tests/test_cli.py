import json

import numpy as np
import pytest

from fredholm_games.cli import main, read_field_csv, read_table_csv

KER = {"name": "constant", "params": {"value": 0.5, "volterra": True}}


def _graph_config(**extra):
    cfg = {"grid": {"T": 1.0, "n_t": 8, "n_u": 8}, "seed": 3, "paths": 6,
           "game": {"w": [[0.0, 0.5, 0.2], [0.5, 0.0, 0.1], [0.2, 0.1, 0.0]], "lam": 1.0,
                    "A_tilde": KER, "B_tilde": KER, "noise": {"drift": 1.0, "idiosyncratic": 0.5}}}
    cfg.update(extra)
    return cfg


def _graphon_config():
    return {"grid": {"T": 1.0, "n_t": 8, "n_u": 16}, "seed": 1, "paths": 20,
            "graphon": {"W": {"name": "product"}, "A_tilde": KER, "B_tilde": KER, "lam": 1.0,
                        "noise": {"affine_drift": [1.0, 1.0], "affine_loadings": [[0.5, 0.0], [0.0, 0.5]]}},
            "convergence": {"mode": "given", "N_values": [2, 4, 8]}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--config", _write(tmp_path, _graph_config())]) == 0
    assert main(["validate", "--config", _write(tmp_path, _graph_config(bogus=1))]) == 2
    bad = _graph_config()
    bad["game"]["lam"] = 0.0
    assert main(["validate", "--config", _write(tmp_path, bad)]) == 2
    assert main(["validate", "--config", _write(tmp_path, {"grid": {"n_t": "x"}})]) == 2
    capsys.readouterr()
    # systemic example past its critical horizon fails the check and reports the horizon
    sysc = {"grid": {"T": 50.0, "n_t": 16}, "example": {"family": "systemic", "params": {"kappa": 0.5}}}
    assert main(["validate", "--config", _write(tmp_path, sysc)]) == 3
    assert "critical T" in capsys.readouterr().out


def test_coercivity_failure_is_an_assumption_error(tmp_path):
    cfg = _graph_config()
    cfg["game"]["B_tilde"] = {"name": "constant", "params": {"value": -40.0, "volterra": True}}
    cfg["game"]["w"] = [[0.0, 1.0], [1.0, 0.0]]
    cfg["game"]["lam"] = 0.05
    assert main(["solve-finite", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 3


def test_solve_finite_outputs_round_trip(tmp_path):
    out = tmp_path / "run"
    assert main(["solve-finite", "--config", _write(tmp_path, _graph_config()), "--out", str(out),
                 "--nash-probes", "2"]) == 0
    pids, times, alpha = read_field_csv(out / "equilibrium.csv")
    assert alpha.shape == (6, 3, 8)
    np.testing.assert_allclose(times, np.arange(8) / 8)
    res = read_table_csv(out / "foc_residual.csv")
    assert all(r <= t for r, t in zip(res["residual"], res["tolerance"]))
    summary = json.loads((out / "summary.json").read_text())
    assert "nash_gap" in summary
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3 and len(man["config_sha256"]) == 64
    # rerun from the manifest
    out2 = tmp_path / "rerun"
    assert main(["solve-finite", "--config", str(out / "manifest.json"), "--out", str(out2)]) == 0
    assert (out2 / "equilibrium.csv").read_text() == (out / "equilibrium.csv").read_text()


def test_solve_graphon_and_sample(tmp_path):
    cfg = _graphon_config()
    cfg.pop("convergence")
    assert main(["solve-graphon", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "g")]) == 0
    _, _, field = read_field_csv(tmp_path / "g" / "field.csv")
    assert field.shape == (20, 16, 8)
    cfg["sampling"] = {"kind": "S3", "N": 8, "kappa": 0.5}
    assert main(["sample", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "s")]) == 0
    graph = json.loads((tmp_path / "s" / "graph.json").read_text())
    assert graph["kind"] == "S3"


def test_converge_is_deterministic_across_threads(tmp_path, monkeypatch):
    cfg = _write(tmp_path, _graphon_config())
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    monkeypatch.setenv("FREDHOLM_GAMES_THREADS", "3")
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["threads"] == 3
    assert (tmp_path / "a" / "errors.csv").read_text() == (tmp_path / "b" / "errors.csv").read_text()
    rows = read_table_csv(tmp_path / "a" / "errors.csv")
    assert rows["N"] == [2, 4, 8]
    monkeypatch.setenv("FREDHOLM_GAMES_THREADS", "zero")
    assert main(["converge", "--config", cfg, "--out", str(tmp_path / "c")]) == 2


def test_example_then_solve(tmp_path):
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"N": 3, "edges": [[0, 1], [1, 2]], "xi": [1.0, 0.0, -1.0]}))
    base = _write(tmp_path, {"grid": {"T": 1.0, "n_t": 8}, "paths": 5})
    game = tmp_path / "ex" / "game.json"
    assert main(["example", "simple-graph", "--params", str(params), "--config", base, "--out", str(game)]) == 0
    assert main(["solve-finite", "--config", str(game), "--out", str(tmp_path / "sol")]) == 0
    bad = tmp_path / "q.json"
    bad.write_text(json.dumps({"unknown": 1}))
    assert main(["example", "simple-graph", "--params", str(bad), "--config", base, "--out", str(game)]) == 2


def test_missing_output_location(tmp_path):
    assert main(["solve-finite", "--config", _write(tmp_path, _graph_config())]) == 2
    with pytest.raises(SystemExit):
        main(["no-such-command"])
