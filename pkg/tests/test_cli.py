import csv

import numpy as np
import pytest

from pishape.cli import main, write_summary
from pishape.config import ConfigError, builtin_configs, load_config, parse_config, tomllib


def read_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def test_builtin_configs():
    assert {"lti3", "cartpole"} <= set(builtin_configs())
    for name in ("lti3", "cartpole"):
        cfg = load_config(name)
        assert cfg.resolved["system"]["name"] == name


def minimal():
    return {"system": {"name": "lti3"}, "cost": {"R": [[1.0]]},
            "nominal": {"x0": [-5.0, 0.0, 0.0]}, "domain": {"half_widths": [5, 7, 5]},
            "objective": {"threshold": 2.0},
            "tuning": {"initial_conditions": [[-5.0, 0.0, 0.0]]}}


def test_defaults_filled():
    cfg = parse_config(minimal())
    assert cfg["tuning"]["step"] == "backtracking"
    assert cfg["objective"]["beta"] == 10.0
    assert cfg["nominal"]["method"] == "care"
    assert cfg["cost"]["Q"] == np.eye(3).tolist()


def test_missing_R_named():
    raw = minimal()
    del raw["cost"]["R"]
    with pytest.raises(ConfigError, match="cost.R"):
        parse_config(raw)


@pytest.mark.parametrize("table,field,value,needle", [
    ("objective", "beta", -1.0, "objective.beta"),
    ("tuning", "step", "newton", "tuning.step"),
    ("basis", "m_degree", 3, "basis.m_degree"),
    ("nominal", "x0", [1.0, 2.0], "nominal.x0"),
    ("tuning", "bogus", 1, "tuning"),
])
def test_field_errors(table, field, value, needle):
    raw = minimal()
    raw.setdefault(table, {})[field] = value
    with pytest.raises(ConfigError, match=needle):
        parse_config(raw)


def test_seed_override():
    cfg = parse_config(minimal()).with_seed(123)
    assert cfg.seed == 123
    with pytest.raises(ConfigError):
        cfg.with_seed(-1)


def test_summary_roundtrip(tmp_path):
    data = {"a": {"x": 1.5, "flag": True, "v": [1, 2.5], "name": "q\"t",
                  "nested": {"k": float("inf")}, "none": None, "c": complex(1, -2)},
            "b": {"gain_eps_0.05": 3}}
    write_summary(tmp_path / "s.toml", data)
    back = read_toml(tmp_path / "s.toml")
    assert back["a"]["x"] == 1.5 and back["a"]["flag"] is True
    assert back["a"]["nested"]["k"] == float("inf")
    assert back["a"]["name"] == "q\"t"
    assert back["a"]["c"] == [1.0, -2.0]
    assert "none" not in back["a"]
    assert back["b"]["gain_eps_0.05"] == 3


def test_nominal_lti3(tmp_path):
    assert main(["nominal", "--config", "lti3", "--out", str(tmp_path), "--quiet"]) == 0
    s = read_toml(tmp_path / "nominal" / "summary.toml")
    assert s["nominal"]["care_residual"] < 1e-8
    assert s["config"]["tuning"]["step"] == "backtracking"
    rows = list(csv.reader(open(tmp_path / "nominal" / "rollout.csv")))
    assert rows[0] == ["t", "x1", "x2", "x3", "u1"]
    assert len(rows) == 1 + 1501


def test_nominal_cartpole(tmp_path):
    assert main(["nominal", "--config", "cartpole", "--out", str(tmp_path), "--quiet"]) == 0
    s = read_toml(tmp_path / "nominal" / "summary.toml")["nominal"]
    assert s["converged"] and s["validation_max_hjb_residual"] > 0
    assert s["rollout"]["terminal_norm"] < 0.05


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[system]\nname = "lti3"\n[cost]\nQ = "identity"\n')
    assert main(["nominal", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "cost.R" in capsys.readouterr().err


def test_toml_syntax_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system\nname = 1\n")
    assert main(["nominal", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["nominal", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_verify_missing_theta(tmp_path):
    assert main(["verify", "--config", "lti3", "--out", str(tmp_path), "--quiet"]) == 1


def test_verify_zero_theta(tmp_path):
    th = tmp_path / "theta0.txt"
    np.savetxt(th, np.zeros(21))
    rc = main(["verify", "--config", "lti3", "--out", str(tmp_path), "--theta", str(th),
               "--quiet", "--strict"])
    assert rc == 0
    s = read_toml(tmp_path / "verify" / "summary.toml")
    assert set(s["verdicts"]) == {"lyapunov", "gain_eps_0.05", "gain_eps_0.5", "gain_eps_2", "iss"}
    lyap = read_toml(tmp_path / "verify" / "lyapunov.toml")["report"]
    nominal = read_toml(tmp_path / "nominal" / "summary.toml")["nominal"]["rollout"]
    assert lyap["terminal_norm"] == pytest.approx(nominal["terminal_norm"], rel=1e-9)
    rows = list(csv.reader(open(tmp_path / "verify" / "iss.csv")))
    assert rows[0] == ["t", "x1", "x2", "x3", "u1"]


@pytest.fixture(scope="module")
def tuned_runs(tmp_path_factory):
    roots = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    codes = [main(["tune", "--config", "lti3", "--out", str(r), "--seed", "5", "--quiet"])
             for r in roots]
    return codes, roots


def test_tune_outputs(tuned_runs):
    codes, (root, _) = tuned_runs
    assert codes == [0, 0]
    rows = list(csv.reader(open(root / "tuning" / "history.csv")))
    assert rows[0] == ["iter", "L", "grad_norm", "step"]
    assert len(rows) > 2
    assert float(rows[-1][1]) < float(rows[1][1])
    ics = list(csv.reader(open(root / "tuning" / "initial_conditions.csv")))
    assert ics == [["x1", "x2", "x3"], ["-5", "0", "0"]]
    for name in ("theta.txt", "c.txt", "rollout_nominal.csv", "rollout_shaped.csv"):
        assert (root / "tuning" / name).exists()
    assert (root / "shaping" / "M.txt").exists()
    s = read_toml(root / "tuning" / "summary.toml")
    assert s["config"]["seed"] == 5
    assert s["comparison"]["shaped"]["peak"] < s["comparison"]["nominal"]["peak"]


def test_tune_deterministic(tuned_runs):
    _, (a, b) = tuned_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_verify_after_tune(tuned_runs):
    _, (root, _) = tuned_runs
    assert main(["verify", "--config", "lti3", "--out", str(root), "--seed", "5", "--quiet",
                 "--strict"]) == 0
    s = read_toml(root / "verify" / "summary.toml")
    assert all(s["verdicts"].values())
