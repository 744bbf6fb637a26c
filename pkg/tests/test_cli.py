import json
import os

import pytest

from adlab import cli

BASE = """
b = 2 + tanh(y - x)
theta = 1
K = 6
sigma = 0.05
T_slow = 0.01
replicates = 2
n_obs = 9
seed = 3
n_particles = 20
fv_horizon = 2.0
dual_t = 0.02
dual_reps = 200
"""


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(BASE, encoding="utf-8")
    return str(p)


def _json(out_dir, name):
    with open(os.path.join(str(out_dir), name), encoding="utf-8") as fh:
        return json.load(fh)


def test_simulate_writes_replicates_and_summary(config_path, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["simulate", "--config", config_path, "--out", str(out)])
    assert rc == 0
    for rep in range(2):
        assert (out / f"sim_K6_rep{rep:03d}.csv").exists()
    summary = _json(out, "sim_summary.json")
    assert summary["replicates"] == 2
    assert summary["K"] == 6
    assert not summary["budget_exceeded"]
    assert (out / "sim_slow.png").stat().st_size > 1000


def test_simulate_is_reproducible(config_path, tmp_path):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["simulate", "--config", config_path, "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", config_path, "--out", str(out2)]) == 0
    a = (out1 / "sim_K6_rep000.csv").read_bytes()
    b = (out2 / "sim_K6_rep000.csv").read_bytes()
    assert a == b


def test_seed_override_changes_output(config_path, tmp_path):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    cli.main(["simulate", "--config", config_path, "--out", str(out1)])
    cli.main(["simulate", "--config", config_path, "--out", str(out2),
              "--seed", "99"])
    assert ((out1 / "sim_K6_rep000.csv").read_bytes()
            != (out2 / "sim_K6_rep000.csv").read_bytes())


def test_output_dir_env_var(config_path, tmp_path, monkeypatch):
    out = tmp_path / "envout"
    monkeypatch.setenv(cli.ENV_OUT, str(out))
    assert cli.main(["simulate", "--config", config_path]) == 0
    assert (out / "sim_summary.json").exists()


def test_cead_compare(config_path, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["cead-compare", "--config", config_path, "--out", str(out)])
    assert rc == 0
    summary = _json(out, "cead_summary.json")
    assert "cead_sup_error_mean" in summary
    assert len(summary["cead_sup_error"]) == 2
    assert (out / "cead_slow.png").exists()


def test_fast_equilibrium(config_path, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["fast-equilibrium", "--config", config_path,
                   "--out", str(out)])
    assert rc == 0
    summary = _json(out, "fast_summary.json")
    assert summary["n_particles"] == 20
    assert summary["lambda"] == pytest.approx(6.0)
    header = (out / "fast_moments.csv").read_text(
        encoding="utf-8").splitlines()[0]
    assert header == "t_fv,M1,M2,M3,M4,M5,M6"
    assert (out / "fast_m2.png").exists()


def test_generator_check(config_path, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["generator-check", "--config", config_path,
                   "--out", str(out)])
    assert rc == 0
    summary = _json(out, "generator_summary.json")
    assert summary["slow"]["slope"] < -0.5
    assert summary["fast"]["kind"] == "fast"
    assert (out / "residuals.csv").exists()
    assert (out / "residuals.png").exists()


def test_dual_check(config_path, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["dual-check", "--config", config_path, "--out", str(out)])
    assert rc == 0
    summary = _json(out, "dual_summary.json")
    assert summary["reps"] == 200
    assert abs(summary["diff_mean"]) <= 6.0 * summary["diff_se"]


def test_sweep(tmp_path):
    p = tmp_path / "sweep.cfg"
    p.write_text(BASE.replace("K = 6", "K_list = 4, 6"), encoding="utf-8")
    out = tmp_path / "out"
    rc = cli.main(["sweep", "--config", str(p), "--out", str(out)])
    assert rc == 0
    summary = _json(out, "sweep_summary.json")
    assert set(summary["runs"]) == {"4", "6"}
    assert summary["runs"]["4"]["replicates"] == 2


def test_bad_expression_exits_2(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(BASE.replace("b = 2 + tanh(y - x)", "b = -1"),
                 encoding="utf-8")
    assert cli.main(["simulate", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2


def test_bad_key_exits_2(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(BASE + "widget = 1\n", encoding="utf-8")
    assert cli.main(["simulate", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2


def test_missing_config_exits_2(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "o")]) == 2


def test_budget_truncation_exits_3(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(BASE + "budget = 10\n", encoding="utf-8")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(p), "--out", str(out)]) == 3
    summary = _json(out, "sim_summary.json")
    assert summary["budget_exceeded"]
