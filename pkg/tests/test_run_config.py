"""Tests for run_config.py: TOML loading, defaults, validation, path resolution."""

import json
import os

import pytest


def test_defaults_fill_missing_keys(write_config):
    import config
    from run_config import load_run_config
    cfg = load_run_config(write_config(case="backoff"))
    assert cfg.case == "backoff"
    assert cfg.horizon == config.HORIZON
    assert cfg.steps == config.EPISODE_STEPS
    assert cfg.mismatch_params == ['r0', 'r1', 'c1']
    assert cfg.bo_budget == 50 and cfg.bo_n_init == 5
    assert cfg.u1_feedback == "estimated"


def test_default_out_dir_next_to_config(write_config, tmp_path):
    from run_config import load_run_config
    cfg = load_run_config(write_config(case="model"))
    assert cfg.out_dir == os.path.join(str(tmp_path), 'runs', 'model')


def test_relative_paths_resolved_against_config_dir(tmp_path):
    import config
    from run_config import load_run_config
    data = tmp_path / "data"
    data.mkdir()
    (data / "cell.csv").write_text(open(config.CELL_TABLE).read())
    sub = tmp_path / "configs"
    sub.mkdir()
    path = sub / "run.toml"
    path.write_text('cell_table = "../data/cell.csv"\nout_dir = "../out"\n')
    cfg = load_run_config(str(path))
    assert cfg.cell_table == str(data / "cell.csv")
    assert cfg.out_dir == str(tmp_path / "out")


def test_overrides_win(write_config):
    from run_config import load_run_config
    cfg = load_run_config(write_config(bo_seed=1), {'bo_seed': 9})
    assert cfg.bo_seed == 9


def test_int_accepted_for_float_field(write_config):
    from run_config import load_run_config
    cfg = load_run_config(write_config(ts_s=5))
    assert cfg.ts_s == 5.0
    assert isinstance(cfg.ts_s, float)


def test_lists_and_bools(write_config):
    from run_config import load_run_config
    cfg = load_run_config(write_config(mismatch_params=['r1'], mismatch_per_knot=True))
    assert cfg.mismatch_params == ['r1']
    assert cfg.mismatch_per_knot is True


def test_shipped_configs_load():
    from run_config import load_run_config
    root = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')
    for case in ('nominal', 'backoff', 'model'):
        cfg = load_run_config(os.path.join(root, f'{case}.toml'))
        assert cfg.case == case
        assert os.path.isfile(cfg.cell_table)


def test_dump_is_json(write_config):
    from run_config import dump_run_config, load_run_config
    cfg = load_run_config(write_config(case="backoff"))
    data = json.loads(dump_run_config(cfg))
    assert data['case'] == 'backoff'
    assert data['horizon'] == cfg.horizon


# ── Validation ───────────────────────────────────────────────────

@pytest.mark.parametrize("key,value,field", [
    ("horizon", 0, "horizon"),
    ("steps", -3, "steps"),
    ("ts_s", 0.0, "ts_s"),
    ("case", "turbo", "case"),
    ("mismatch_delta", 1.5, "mismatch_delta"),
    ("mismatch_params", ["ocv"], "mismatch_params"),
    ("tuned_curve", "r7", "tuned_curve"),
    ("horizon", "ten", "horizon"),
    ("horizon", 2.5, "horizon"),
    ("mismatch_per_knot", 1, "mismatch_per_knot"),
    ("z0", float("nan"), "z0"),
    ("z0", 1.5, "z0"),
    ("u1_0", float("inf"), "u1_0"),
    ("c1", float("nan"), "c1"),
    ("u1_feedback", "observer", "u1_feedback"),
])
def test_invalid_values_name_the_field(write_config, key, value, field):
    from run_config import ConfigError, load_run_config
    with pytest.raises(ConfigError) as exc:
        load_run_config(write_config(**{key: value}))
    assert exc.value.field == field
    assert str(exc.value).startswith(f"{field}:")


def test_unknown_key(write_config):
    from run_config import ConfigError, load_run_config
    with pytest.raises(ConfigError, match="unknown key") as exc:
        load_run_config(write_config(horizn=5))
    assert exc.value.field == "horizn"


def test_missing_cell_table(write_config):
    from run_config import ConfigError, load_run_config
    with pytest.raises(ConfigError, match="file not found"):
        load_run_config(write_config(cell_table="/nonexistent/table.csv"))


def test_bad_toml(tmp_path):
    from run_config import ConfigError, load_run_config
    path = tmp_path / "broken.toml"
    path.write_text("horizon = = 3\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_run_config(str(path))


def test_config_not_utf8(tmp_path):
    from run_config import ConfigError, load_run_config
    path = tmp_path / "run.toml"
    path.write_bytes(b"horizon = 3\n# caf\xe9\n")
    with pytest.raises(ConfigError, match="UTF-8") as exc:
        load_run_config(str(path))
    assert exc.value.field == "config"


def test_missing_config_file():
    from run_config import ConfigError, load_run_config
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config("/nonexistent/run.toml")
