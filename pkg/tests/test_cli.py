"""Tests for cli.py: commands, output files, exit codes."""

import json
import os

import numpy as np
import pytest

FAST = dict(steps=4, horizon=3)


def _run(*argv):
    from cli import main
    return main(list(argv))


def _read(path):
    with open(path, encoding='utf-8') as f:
        return f.read()


def _read_trajectory(path, ts, v_t_max):
    """Parse trajectory.csv back into an EpisodeResult (objective not recomputed)."""
    import csv

    from harness import EpisodeResult
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    inputs = [r for r in rows if r['i_a'] != '']
    return EpisodeResult(
        ts=ts,
        v_t_max=v_t_max,
        z=np.array([float(r['z']) for r in rows]),
        u1=np.array([float(r['u1_v']) for r in rows]),
        current=np.array([float(r['i_a']) for r in inputs]),
        vt=np.array([float(r['vt_v']) for r in inputs]),
        vt_limit=np.array([float(r['vt_limit_v']) for r in inputs]),
    )


# ── simulate ─────────────────────────────────────────────────────

def test_simulate_writes_outputs(write_config, tmp_path):
    out = tmp_path / "sim"
    assert _run("simulate", "--config", write_config(**FAST), "--out", str(out)) == 0
    lines = _read(out / "trajectory.csv").splitlines()
    assert lines[0] == "k,t_s,i_a,z,u1_v,vt_v,vt_limit_v"
    assert len(lines) == 1 + FAST['steps'] + 1
    last = lines[-1].split(",")
    assert last[2] == "" and last[5:] == ["", ""]
    summary = json.loads(_read(out / "summary.json"))
    assert summary['steps'] == FAST['steps']
    assert summary['g'] <= 0.0
    assert json.loads(_read(out / "run_config.json"))['horizon'] == FAST['horizon']


def test_simulate_refuses_overwrite(write_config, tmp_path):
    cfg = write_config(**FAST)
    out = str(tmp_path / "sim")
    assert _run("simulate", "--config", cfg, "--out", out) == 0
    assert _run("simulate", "--config", cfg, "--out", out) == 2
    assert _run("simulate", "--config", cfg, "--out", out, "--force") == 0


def test_simulate_leaves_no_temp_files(write_config, tmp_path):
    out = tmp_path / "sim"
    _run("simulate", "--config", write_config(**FAST), "--out", str(out))
    assert not [n for n in os.listdir(out) if n.startswith(".tmp-")]


def test_trajectory_round_trip(write_config, tmp_path):
    """trajectory.csv parses back to the in-memory episode."""
    from cli import Setup, trajectory_csv
    from run_config import load_run_config
    setup = Setup(load_run_config(write_config(**FAST)))
    result = setup.episode()
    path = tmp_path / "trajectory.csv"
    path.write_text(trajectory_csv(result))
    back = _read_trajectory(str(path), result.ts, result.v_t_max)
    for name in ('z', 'u1', 'current', 'vt', 'vt_limit'):
        assert np.array_equal(getattr(back, name), getattr(result, name)), name


# ── Exit codes ───────────────────────────────────────────────────

def test_zero_horizon_is_config_error(write_config, tmp_path, capsys):
    code = _run("simulate", "--config", write_config(horizon=0), "--out", str(tmp_path / "x"))
    assert code == 2
    assert "horizon" in capsys.readouterr().err


def test_unknown_key_is_config_error(write_config, tmp_path):
    assert _run("simulate", "--config", write_config(horizn=3), "--out", str(tmp_path / "x")) == 2


def test_bad_cell_table_is_config_error(write_config, write_table, tmp_path, capsys):
    table = write_table([(0.0, 3.0, 0.04, 0.03, 1000.0), (1.0, 4.1, 0.03, 0.0, 3000.0)])
    code = _run("simulate", "--config", write_config(cell_table=table), "--out", str(tmp_path / "x"))
    assert code == 2
    assert "row 3" in capsys.readouterr().err


def test_undecodable_cell_table_is_config_error(write_config, tmp_path, capsys):
    table = tmp_path / "latin1.csv"
    table.write_bytes(b"soc,ocv_v,r0_ohm,r1_ohm,c1_f\n# R0 in m\xb5Ohm\n0.0,3.0,0.04,0.03,1000\n1.0,4.1,0.03,0.02,3000\n")
    code = _run("simulate", "--config", write_config(cell_table=str(table), **FAST), "--out", str(tmp_path / "x"))
    assert code == 2
    assert "UTF-8" in capsys.readouterr().err


def test_undecodable_config_is_config_error(tmp_path, capsys):
    import config
    path = tmp_path / "run.toml"
    path.write_bytes(f'cell_table = "{config.CELL_TABLE}"\n'.encode("utf-8") + b"# \xe9t\xe9\n")
    assert _run("simulate", "--config", str(path), "--out", str(tmp_path / "x")) == 2
    assert "error:" in capsys.readouterr().err


def test_non_finite_initial_state_is_config_error(write_config, tmp_path, capsys):
    code = _run("simulate", "--config", write_config(z0=float("nan"), **FAST), "--out", str(tmp_path / "x"))
    assert code == 2
    assert "z0" in capsys.readouterr().err
    assert _run("simulate", "--config", write_config(u1_0=float("inf"), **FAST), "--out", str(tmp_path / "y")) == 2


def test_unknown_command_is_usage_error(write_config):
    assert _run("calibrate", "--config", write_config()) == 2


def test_tune_nominal_is_config_error(write_config, tmp_path):
    assert _run("tune", "--config", write_config(case="nominal", **FAST), "--out", str(tmp_path / "t")) == 2


def test_eval_needs_theta(write_config, tmp_path):
    assert _run("eval", "--config", write_config(case="backoff", **FAST), "--out", str(tmp_path / "e")) == 2


def test_eval_rejects_malformed_theta(write_config, tmp_path):
    theta = tmp_path / "theta.json"
    theta.write_text("[0.1, \"high\"]")
    cfg = write_config(case="backoff", **FAST)
    assert _run("eval", "--config", cfg, "--theta", str(theta), "--out", str(tmp_path / "e")) == 2
    theta.write_text("{not json")
    assert _run("eval", "--config", cfg, "--theta", str(theta), "--out", str(tmp_path / "e")) == 2


def test_eval_rejects_wrong_dimension(write_config, tmp_path):
    theta = tmp_path / "theta.json"
    theta.write_text(json.dumps([0.1] * 5))
    cfg = write_config(case="backoff", **FAST)
    assert _run("eval", "--config", cfg, "--theta", str(theta), "--out", str(tmp_path / "e")) == 2


def test_existing_summary_or_config_blocks_overwrite(write_config, tmp_path):
    """Every output file is guarded by --force, not only the trajectories."""
    cfg = write_config(case="backoff", bo_budget=1, bo_n_init=1, **FAST)
    for command, name in (("simulate", "run_config.json"), ("tune", "tune_summary.json"), ("tune", "run_config.json")):
        out = tmp_path / f"{command}-{name}"
        out.mkdir()
        (out / name).write_text("keep me")
        assert _run(command, "--config", cfg, "--out", str(out)) == 2
        assert _read(out / name) == "keep me"
        assert _run(command, "--config", cfg, "--out", str(out), "--force") == 0


def test_runtime_failure_exit_code(write_config, tmp_path, monkeypatch):
    import cli

    def explode(self, theta=None):
        raise RuntimeError("plant exploded")

    monkeypatch.setattr(cli.Setup, "episode", explode)
    assert _run("simulate", "--config", write_config(**FAST), "--out", str(tmp_path / "x")) == 3


# ── eval / tune ──────────────────────────────────────────────────

def test_eval_zero_backoff_matches_simulate(write_config, tmp_path, capsys):
    cfg = write_config(case="backoff", **FAST)
    theta = tmp_path / "zeros.json"
    theta.write_text(json.dumps([0.0] * 7))
    assert _run("simulate", "--config", cfg, "--out", str(tmp_path / "sim")) == 0
    capsys.readouterr()
    assert _run("eval", "--config", cfg, "--theta", str(theta), "--out", str(tmp_path / "ev")) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    for name in ("trajectory.csv", "summary.json"):
        assert _read(tmp_path / "sim" / name) == _read(tmp_path / "ev" / name)
    assert printed['g'] == json.loads(_read(tmp_path / "sim" / "summary.json"))['g']
    assert set(printed) == {'g', 'max_violation_v', 'time_to_soc_095_s'}


def test_tune_writes_trace_and_best(write_config, tmp_path, capsys):
    cfg = write_config(case="backoff", bo_budget=1, bo_n_init=2, **FAST)
    out = tmp_path / "tune"
    assert _run("tune", "--config", cfg, "--out", str(out)) == 0
    trace = [json.loads(line) for line in _read(out / "bo_trace.jsonl").splitlines()]
    assert len(trace) == 3
    assert [r['n'] for r in trace] == [0, 1, 2]
    assert trace[0]['theta'] == [0.0] * 7
    assert all(set(r) == {'n', 'theta', 'g', 'best_g'} for r in trace)

    best = json.loads(_read(out / "best_theta.json"))
    assert best['g'] == max(r['g'] for r in trace)
    assert len(best['theta']) == 7
    assert (out / "trajectory_best.csv").exists()
    safety = json.loads(_read(out / "tune_summary.json"))['safety']
    assert safety['trials'] == 3

    capsys.readouterr()
    assert _run("eval", "--config", cfg, "--theta", str(out / "best_theta.json"), "--out", str(tmp_path / "ev")) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed['g'] == pytest.approx(best['g'], abs=1e-9)


def test_tune_is_reproducible(write_config, tmp_path):
    cfg = write_config(case="model", bo_budget=1, bo_n_init=2, **FAST)
    assert _run("tune", "--config", cfg, "--out", str(tmp_path / "a")) == 0
    assert _run("tune", "--config", cfg, "--out", str(tmp_path / "b")) == 0
    assert _read(tmp_path / "a" / "bo_trace.jsonl") == _read(tmp_path / "b" / "bo_trace.jsonl")


def test_seed_flag_overrides_bo_seed(write_config, tmp_path):
    cfg = write_config(case="backoff", bo_budget=1, bo_n_init=2, bo_seed=0, **FAST)
    assert _run("tune", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "4") == 0
    assert json.loads(_read(tmp_path / "a" / "run_config.json"))['bo_seed'] == 4


def test_bo_trace_number_format():
    from bo import BoRecord, BoTrace
    from cli import bo_trace_jsonl
    trace = BoTrace(seed=0, records=[BoRecord(0, np.array([0.1, 1 / 3]), -0.5, -0.5)])
    line = bo_trace_jsonl(trace).strip()
    assert json.loads(line)['theta'][1] == 1 / 3
    assert "0.33333333333333331" in line
