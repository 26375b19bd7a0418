"""Tests for the command-line layer: config loading, trace files, and the
four subcommands with their exit codes."""

import hashlib
import json

import numpy as np
import pytest
from conftest import CONFIGS

from rclqr.cli import (
    EXIT_CONFIG,
    EXIT_INSTABILITY,
    EXIT_OK,
    ConfigError,
    load_config,
    main,
    read_trace,
    write_trace,
)

SCALAR = CONFIGS / "scalar1x1.json"


def scalar_tree():
    return json.loads(SCALAR.read_text())


def write_cfg(tmp_path, tree, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(tree))
    return path


# ---- config loading ----


def test_load_config_benchmark_round_trip():
    cfg = load_config(CONFIGS / "benchmark4x2.json")
    assert cfg.sys.n == 4 and cfg.sys.m == 2
    assert cfg.cost.iota == 106.0
    assert cfg.schedule.b0 == 0.12
    assert cfg.run.steps == 2_000_000 and cfg.run.seed == 42
    assert cfg.trace_path == "trace.csv"
    raw = (CONFIGS / "benchmark4x2.json").read_bytes()
    assert cfg.sha256 == hashlib.sha256(raw).hexdigest()


def test_load_config_fills_run_defaults(tmp_path):
    tree = scalar_tree()
    del tree["run"]
    cfg = load_config(write_cfg(tmp_path, tree))
    assert cfg.run.steps == 1_000_000 and cfg.run.seed == 0
    assert cfg.run.record_every == 100


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda t: t.pop("system"), "missing required section"),
        (lambda t: t["system"].pop("A"), "missing required key"),
        (lambda t: t["cost"].pop("iota"), "iota"),
        (lambda t: t["cost"].update(Q=[[1.0, 0.0], [0.0, 1.0]]), "state dimension"),
        (lambda t: t["cost"].update(R=[[1.0, 0.0], [0.0, 1.0]]), "input dimension"),
        (lambda t: t["cost"].update(R=[[-1.0]]), "positive definite"),
        (lambda t: t["noise"].update(channels=[[{"type": "bogus"}]]), "unknown noise"),
        (
            lambda t: t["noise"].update(
                channels=[
                    [{"type": "gaussian", "mean": 0.0, "var": 1.0}],
                    [{"type": "gaussian", "mean": 0.0, "var": 1.0}],
                ]
            ),
            "does not match",
        ),
        (lambda t: t["policy0"].update(K0=[[0.1, 0.2]]), "policy0"),
        (lambda t: t["policy0"].update(K0=[[-3.0]]), "not stabilizing"),
        (lambda t: t.update(schedules={"ea": 0.9}), "exponents"),
        (lambda t: t["run"].update(steps=-5), "steps"),
    ],
)
def test_load_config_rejects_defects(tmp_path, mutate, fragment):
    tree = scalar_tree()
    mutate(tree)
    with pytest.raises(ConfigError, match=fragment):
        load_config(write_cfg(tmp_path, tree))


def test_load_config_reports_json_syntax_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"system": }')
    with pytest.raises(ConfigError, match="line 1 column 12"):
        load_config(path)


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/cfg.json")


# ---- trace files ----


def test_trace_round_trip_preserves_floats(tmp_path):
    path = tmp_path / "trace.csv"
    t = np.array([100, 200])
    vals = [np.array([np.pi, -1.0 / 3.0]), np.array([1e-17, 2.0**0.5])]
    write_trace(
        path,
        {"config_sha256": "abc", "seed": 7},
        t,
        vals[0],
        vals[1],
        np.array([0.0, 0.25]),
        None,
        np.array([0.9, 0.8]),
        np.array([1.0, 2.0]),
    )
    meta, col = read_trace(path)
    assert meta["config_sha256"] == "abc" and meta["seed"] == "7"
    assert np.array_equal(col["t"], t.astype(float))
    assert np.array_equal(col["L_hat"], vals[0])  # 17 digits round-trip exactly
    assert np.array_equal(col["Jc_hat"], vals[1])
    assert np.isnan(col["err_X"]).all()  # no reference: blank column


# ---- subcommands on the scalar config ----


def test_main_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    assert main(["train", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_train_writes_trace_and_results(tmp_path):
    out = tmp_path / "run"
    code = main(["train", "--config", str(SCALAR), "--out", str(out), "--steps", "3000"])
    assert code == EXIT_OK
    meta, col = read_trace(out / "trace.csv")
    assert meta["seed"] == "0"
    assert len(col["t"]) == 30 and col["t"][-1] == 3000
    assert np.all(col["rho_cl"] < 1.0)
    res = json.loads((out / "results.json").read_text())
    assert res["status"] == 0 and res["steps_done"] == 3000
    assert set(res["policy"]) == {"K", "b", "sigma"}
    assert res["config_sha256"] == meta["config_sha256"]


def test_train_repeat_is_bit_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(SCALAR), "--out", str(out), "--steps", "2000"]) == EXIT_OK
        outs.append((out / "trace.csv").read_bytes())
    assert outs[0] == outs[1]


def test_train_seed_override_changes_the_trace(tmp_path):
    traces = []
    for seed in ("0", "1"):
        out = tmp_path / f"s{seed}"
        code = main(
            ["train", "--config", str(SCALAR), "--out", str(out), "--steps", "2000", "--seed", seed]
        )
        assert code == EXIT_OK
        meta, col = read_trace(out / "trace.csv")
        assert meta["seed"] == seed
        traces.append(col["L_hat"])
    assert not np.array_equal(traces[0], traces[1])


def test_train_zero_steps_writes_an_empty_trace(tmp_path):
    out = tmp_path / "empty"
    assert main(["train", "--config", str(SCALAR), "--out", str(out), "--steps", "0"]) == EXIT_OK
    meta, col = read_trace(out / "trace.csv")
    assert len(col["t"]) == 0
    assert "config_sha256" in meta


def test_train_seed_fanout(tmp_path):
    out = tmp_path / "fan"
    code = main(
        ["train", "--config", str(SCALAR), "--out", str(out), "--steps", "1000", "--seeds", "3..4"]
    )
    assert code == EXIT_OK
    for seed in (3, 4):
        meta, _ = read_trace(out / f"trace_seed{seed}.csv")
        assert meta["seed"] == str(seed)
        assert (out / f"results_seed{seed}.json").exists()


def test_train_rejects_malformed_seed_ranges(tmp_path, capsys):
    out = tmp_path / "fan"
    code = main(
        ["train", "--config", str(SCALAR), "--out", str(out), "--steps", "100", "--seeds", "5..2"]
    )
    assert code == EXIT_CONFIG
    assert "--seeds" in capsys.readouterr().err


def test_oracle_writes_reference_and_matches_riccati(tmp_path, capsys):
    import scipy.linalg

    out = tmp_path / "oracle"
    assert main(["oracle", "--config", str(SCALAR), "--out", str(out)]) == EXIT_OK
    assert "K* =" in capsys.readouterr().out
    obj = json.loads((out / "oracle.json").read_text())
    assert obj["certificate"]["converged"] is True
    assert obj["mu"] == 0.0  # the scalar budget is slack
    cfg = load_config(SCALAR)
    P = scipy.linalg.solve_discrete_are(cfg.sys.A, cfg.sys.B, cfg.cost.Q, cfg.cost.R)
    Kd = np.linalg.solve(cfg.cost.R + cfg.sys.B.T @ P @ cfg.sys.B, cfg.sys.B.T @ P @ cfg.sys.A)
    assert np.abs(np.asarray(obj["policy"]["K"]) - Kd).max() < 1e-6


def test_train_consumes_a_matching_reference(tmp_path):
    out = tmp_path / "with_ref"
    assert main(["oracle", "--config", str(SCALAR), "--out", str(out)]) == EXIT_OK
    assert main(["train", "--config", str(SCALAR), "--out", str(out), "--steps", "20000"]) == EXIT_OK
    _, col = read_trace(out / "trace.csv")
    err = col["err_X"]
    assert np.isfinite(err).all()
    # 20k steps are enough to close at least half the initial policy gap.
    assert err[-1] < 0.5 * err[0]


def test_evaluate_reports_the_closed_forms(tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["oracle", "--config", str(SCALAR), "--out", str(out)]) == EXIT_OK
    capsys.readouterr()
    code = main(["evaluate", "--config", str(SCALAR), str(out / "oracle.json")])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert "J(X)   oracle" in text and "simulated" in text
    assert "constraint satisfied" in text


def test_evaluate_skips_unstable_policies(tmp_path, capsys):
    policy = tmp_path / "bad_policy.json"
    policy.write_text(json.dumps({"K": [[-3.0]], "b": [0.0], "sigma": 0.0}))
    code = main(["evaluate", "--config", str(SCALAR), str(policy)])
    assert code == EXIT_INSTABILITY
    assert "not stabilizing" in capsys.readouterr().out


def test_evaluate_rejects_a_missing_policy_file(tmp_path, capsys):
    code = main(["evaluate", "--config", str(SCALAR), str(tmp_path / "nope.json")])
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_moments_prints_the_constraint_level(capsys):
    assert main(["moments", "--config", str(SCALAR)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "m4 =" in text and "constraint level" in text


def test_plots_flag_emits_a_standalone_script(tmp_path):
    out = tmp_path / "plots"
    code = main(
        ["train", "--config", str(SCALAR), "--out", str(out), "--steps", "1000", "--plots"]
    )
    assert code == EXIT_OK
    script = (out / "plots.py").read_text()
    compile(script, "plots.py", "exec")  # must at least be valid Python
    assert "trace.csv" in script and "matplotlib" in script


def test_log_level_env_is_honored(tmp_path, monkeypatch):
    monkeypatch.setenv("RCLQR_LOG", "debug")
    out = tmp_path / "dbg"
    assert main(["train", "--config", str(SCALAR), "--out", str(out), "--steps", "500"]) == EXIT_OK
