"""
run_config.py: RunConfig: one flat TOML file fully determines a run.

Keys not given fall back to the defaults in config.py. Relative paths are
resolved against the config file's directory. Every problem is reported as a
ConfigError naming the offending field.

Example:

    case = "backoff"
    cell_table = "../data/cell_nmc_synthetic.csv"
    out_dir = "../runs/backoff"
    horizon = 10
    mismatch_seed = 3
    mismatch_delta = 0.5
    bo_budget = 50
"""

import json
import math
import os
import tomllib
from dataclasses import asdict, dataclass, field, fields

import config
from ecm import CURVES
from harness import CASES, FEEDBACKS


class ConfigError(ValueError):
    """Invalid run configuration; `field` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    case: str = 'nominal'
    cell_table: str = config.CELL_TABLE
    out_dir: str = 'runs'
    ts_s: float = config.TS_S
    steps: int = config.EPISODE_STEPS
    horizon: int = config.HORIZON
    c1: float = config.C1_WEIGHT
    soft_weight: float = config.SOFT_WEIGHT
    input_reg: float = config.INPUT_REG
    z0: float = config.INITIAL_SOC
    u1_0: float = 0.0
    u1_feedback: str = config.U1_FEEDBACK
    mismatch_seed: int = config.MISMATCH_SEED
    mismatch_delta: float = config.MISMATCH_DELTA
    mismatch_params: list = field(default_factory=lambda: list(CURVES))
    mismatch_per_knot: bool = False
    tuned_curve: str = 'r1'
    bo_budget: int = config.BO_BUDGET
    bo_n_init: int = config.BO_INIT
    bo_seed: int = config.BO_SEED

    def as_dict(self):
        return asdict(self)


_POSITIVE = ('ts_s', 'c1', 'soft_weight')
_AT_LEAST_ONE = ('steps', 'horizon', 'bo_budget', 'bo_n_init')


def _coerce(name, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(name, f"expected a list of strings, got {value!r}")
    return list(value)


def validate(cfg):
    """Check field ranges; raises ConfigError."""
    if cfg.case not in CASES:
        raise ConfigError('case', f"must be one of {CASES}, got {cfg.case!r}")
    for f in fields(cfg):
        if f.type is float and not math.isfinite(getattr(cfg, f.name)):
            raise ConfigError(f.name, f"must be finite, got {getattr(cfg, f.name)}")
    if not 0.0 <= cfg.z0 <= 1.0:
        raise ConfigError('z0', f"must be in [0, 1], got {cfg.z0}")
    if cfg.u1_feedback not in FEEDBACKS:
        raise ConfigError('u1_feedback', f"must be one of {FEEDBACKS}, got {cfg.u1_feedback!r}")
    for name in _POSITIVE:
        if not getattr(cfg, name) > 0:
            raise ConfigError(name, f"must be positive, got {getattr(cfg, name)}")
    for name in _AT_LEAST_ONE:
        if getattr(cfg, name) < 1:
            raise ConfigError(name, f"must be >= 1, got {getattr(cfg, name)}")
    if cfg.input_reg < 0:
        raise ConfigError('input_reg', f"must be >= 0, got {cfg.input_reg}")
    if not 0.0 <= cfg.mismatch_delta < 1.0:
        raise ConfigError('mismatch_delta', f"must be in [0, 1), got {cfg.mismatch_delta}")
    if cfg.mismatch_seed < 0 or cfg.bo_seed < 0:
        raise ConfigError('mismatch_seed' if cfg.mismatch_seed < 0 else 'bo_seed', "seeds must be >= 0")
    unknown = set(cfg.mismatch_params) - set(CURVES)
    if unknown:
        raise ConfigError('mismatch_params', f"unknown curves {sorted(unknown)}; choose from {CURVES}")
    if cfg.tuned_curve not in CURVES:
        raise ConfigError('tuned_curve', f"must be one of {CURVES}, got {cfg.tuned_curve!r}")
    if not os.path.isfile(cfg.cell_table):
        raise ConfigError('cell_table', f"file not found: {cfg.cell_table}")
    return cfg


def load_run_config(path, overrides=None):
    """Parse a flat TOML run file into a validated RunConfig."""
    try:
        with open(path, 'rb') as f:
            raw = tomllib.load(f)
    except OSError as e:
        raise ConfigError('config', f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError('config', f"invalid TOML in {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise ConfigError('config', f"{path} is not UTF-8 text: {e}") from e

    raw.update(overrides or {})
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for key, value in raw.items():
        if key not in kinds:
            raise ConfigError(key, "unknown key")
        kind = kinds[key] if kinds[key] in (int, float, str, bool) else list
        values[key] = _coerce(key, value, kind)

    base = os.path.dirname(os.path.abspath(path))
    for key in ('cell_table', 'out_dir'):
        if key in values and not os.path.isabs(values[key]):
            values[key] = os.path.normpath(os.path.join(base, values[key]))
    if 'out_dir' not in values:
        values['out_dir'] = os.path.join(base, 'runs', values.get('case', 'nominal'))
    return validate(RunConfig(**values))


def dump_run_config(cfg):
    return json.dumps(cfg.as_dict(), indent=2, sort_keys=True)
