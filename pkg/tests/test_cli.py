import csv
import io as _io
import json

import pytest

from ope_lab.cli import main
from ope_lab.io import problem_to_dict
from ope_lab.scenarios import counterexample_mdp


def run(tmp_path, capsys, command, cfg=None, *extra):
    argv = [command]
    if cfg is not None:
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        argv += ["--config", str(path)]
    code = main(argv + list(extra))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_evaluate_example1(tmp_path, capsys):
    code, out, _ = run(tmp_path, capsys, "evaluate", {"problem": {"scenario": "example1"}}, "--workers", "1")
    assert code == 0
    doc = json.loads(out)
    assert doc["v_pi"] == pytest.approx(1.4)
    var = {e["estimator"]: e["variance"] for e in doc["estimators"]}
    assert all(e["mean"] == pytest.approx(1.4, abs=1e-12) for e in doc["estimators"])
    assert var["IS"] < var["SIS"] < var["PDIS"]


def test_evaluate_outputs(tmp_path, capsys):
    cfg = {"problem": {"scenario": "example2"}, "method": "monte_carlo",
           "monte_carlo": {"seed": 3, "num_trajectories": 50},
           "outputs": {"occupancy_csv": str(tmp_path / "occ.csv"), "batch_csv": str(tmp_path / "b.csv"),
                       "distribution_csv": str(tmp_path / "d_{estimator}.csv")}}
    code, out, _ = run(tmp_path, capsys, "evaluate", cfg, "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(_io.StringIO(out)))
    assert [r["estimator"] for r in rows] == ["IS", "PDIS", "SIS"]
    assert all(r["method"] == "monte_carlo" for r in rows)
    for name in ("occ.csv", "b.csv", "d_IS.csv", "d_PDIS.csv", "d_SIS.csv"):
        assert (tmp_path / name).exists()
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 1 + 50 * 2


def test_evaluate_inline_problem_and_seed_override(tmp_path, capsys):
    cfg = {"problem": {"inline": problem_to_dict(counterexample_mdp(3))}, "method": "monte_carlo",
           "monte_carlo": {"seed": 1, "num_trajectories": 100}}
    _, a, _ = run(tmp_path, capsys, "evaluate", cfg, "--seed", "9")
    cfg["monte_carlo"]["seed"] = 9
    _, b, _ = run(tmp_path, capsys, "evaluate", cfg)
    assert a == b and json.loads(a)["estimators"][0]["seed"] == 9


def test_validate_reports_violations(tmp_path, capsys):
    doc = problem_to_dict(counterexample_mdp(1))
    assert run(tmp_path, capsys, "validate", {"problem": {"inline": doc}})[0] == 0
    doc["target"][0] = [0.5, 0.6]
    code, out, _ = run(tmp_path, capsys, "validate", {"problem": {"inline": doc}})
    assert code == 1 and json.loads(out)["valid"] is False
    assert run(tmp_path, capsys, "evaluate", {"problem": {"inline": doc}})[0] == 2


def test_support_failure_is_runtime(tmp_path, capsys):
    doc = problem_to_dict(counterexample_mdp(1))
    doc["behavior"][0] = [1.0, 0.0]
    doc["target"][0] = [0.5, 0.5]
    assert run(tmp_path, capsys, "evaluate", {"problem": {"inline": doc}})[0] == 3


@pytest.mark.parametrize("cfg", [
    {"problem": {"scenario": "nope"}},
    {"problem": {"scenario": "two_lane"}},
    {"problem": {"scenario": "two_lane", "params": {"horizon": "8"}}},
    {"problem": {"scenario": "example1"}, "bogus": 1},
    {"problem": {"scenario": "example1"}, "horizons": []},
])
def test_bad_configs_exit_2(tmp_path, capsys, cfg):
    assert run(tmp_path, capsys, "sweep", cfg)[0] == 2


def test_missing_config_and_bad_flags(tmp_path, capsys):
    assert main(["evaluate", "--config", str(tmp_path / "none.json")]) == 2
    assert main(["evaluate", "--workers", "0"]) == 2
    assert main(["nope"]) == 2
    assert main(["evaluate"]) == 2
    assert main(["sweep", "--config", str(tmp_path / "none.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["evaluate", "--config", str(bad)]) == 2


def test_sweep_rows_and_fit(tmp_path, capsys):
    cfg = {"problem": {"scenario": "random_ergodic",
                       "params": {"seed": 3, "num_states": 4, "num_actions": 2, "horizon": 5, "policy_gap": 0.0}},
           "horizons": list(range(1, 20)), "pdis_regime": True,
           "outputs": {"fit_json": str(tmp_path / "fit.json")}}
    code, out, err = run(tmp_path, capsys, "sweep", cfg, "--workers", "2")
    assert code == 0
    rows = list(csv.DictReader(_io.StringIO(out)))
    assert len(rows) == 3 * 19
    for T in range(1, 20):
        v = {r["estimator"]: float(r["variance"]) for r in rows if int(r["horizon"]) == T}
        assert v["IS"] == pytest.approx(v["SIS"], rel=1e-9) == pytest.approx(v["PDIS"], rel=1e-9)
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert {f["estimator"] for f in fit["fits"]} == {"IS", "PDIS", "SIS"} and "pdis_regime" in fit
    assert "fit IS" in err


def test_sweep_gamma_grid(tmp_path, capsys):
    cfg = {"problem": {"scenario": "example1"}, "horizons": [2], "gammas": [0.5, 1.0], "kinds": ["PDIS"]}
    code, out, err = run(tmp_path, capsys, "sweep", cfg)
    assert code == 0 and [r["gamma"] for r in csv.DictReader(_io.StringIO(out))] == ["0.5", "1.0"]
    assert "fit skipped" in err


def test_counterexamples_table(tmp_path, capsys):
    code, out, _ = run(tmp_path, capsys, "counterexamples", None, "--format", "table")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("example 1: Var(IS)=0.12 < Var(SIS)=0.2 < Var(PDIS)=0.2448")
    assert all(line.endswith("[ok]") for line in lines)


def test_counterexamples_atoms(tmp_path, capsys):
    cfg = {"outputs": {"atoms_csv": str(tmp_path / "atoms.csv")}}
    code, out, _ = run(tmp_path, capsys, "counterexamples", cfg)
    assert code == 0 and json.loads(out)["cross_check"] == "ok"
    assert (tmp_path / "atoms.csv").read_text().startswith("example,estimator,path,value,probability")


def test_two_lane_command(tmp_path, capsys):
    code, out, _ = run(tmp_path, capsys, "two-lane", {"horizons": [8]})
    assert code == 0
    doc = json.loads(out)["two_lane"][0]
    assert doc["variance"]["SIS"] == pytest.approx(64) and doc["sis_atoms"] == [[0.0, 0.5], [16.0, 0.5]]
    assert run(tmp_path, capsys, "two-lane", {"horizons": [3]})[0] == 2


def test_conditions_command(tmp_path, capsys):
    code, out, _ = run(tmp_path, capsys, "conditions", {"problem": {"scenario": "example1"}})
    doc = json.loads(out)
    assert code == 0 and doc["theorem1"]["holds"] is False
    code, out, _ = run(tmp_path, capsys, "conditions", {"conditions": {"n": 20, "seed": 4}})
    assert code == 0
    assert [s["which"] for s in json.loads(out)["summaries"]] == ["thm1", "thm2"]


def test_rate_check_command(tmp_path, capsys):
    cfg = {"problem": {"scenario": "random_ergodic",
                       "params": {"seed": 7, "num_states": 5, "num_actions": 2, "horizon": 5}},
           "rate": {"horizon": 500}, "monte_carlo": {"seed": 1, "num_trajectories": 50}}
    code, out, _ = run(tmp_path, capsys, "rate-check", cfg, "--out", str(tmp_path / "r.json"))
    assert code == 0 and out == ""
    assert json.loads((tmp_path / "r.json").read_text())["within_3_stderr"] is True
