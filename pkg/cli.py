#!/usr/bin/env python3
"""
bompc: tune charging MPC parameters with Bayesian optimization.

Usage:
    python cli.py simulate --config configs/nominal.toml [--out runs/x] [--force]
    python cli.py tune     --config configs/backoff.toml [--seed 7]
    python cli.py eval     --config configs/backoff.toml --theta runs/backoff/best_theta.json

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.
Log verbosity: BOMPC_LOG=DEBUG|INFO|WARNING (logs go to stderr).
"""

import argparse
import csv
import io
import json
import os
import sys
import tempfile

import numpy as np

from bo import run_bo
from config import log
from ecm import CellTableError, EcmError, EcmState, load_parameter_table
from harness import (
    CASE_NOMINAL,
    EpisodeObjective,
    MismatchConfig,
    base_controller,
    case_domain,
    controller_for,
    default_theta,
    run_episode,
    trial_safety,
)
from ocp import OcpError
from run_config import ConfigError, dump_run_config, load_run_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

TRAJECTORY_HEADER = ('k', 't_s', 'i_a', 'z', 'u1_v', 'vt_v', 'vt_limit_v')


class UsageError(ValueError):
    """Bad command-line input outside the config file (theta file, output directory)."""


# ── File output ──────────────────────────────────────────────────

def atomic_write(path, text):
    """Write via a temp file in the same directory and rename, so the file is whole or absent."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info(f"Wrote {path}")


def _num(x):
    return format(float(x), '.17g')


def trajectory_csv(result):
    """trajectory.csv text: M+1 rows; the last row has no input, voltage or limit."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(TRAJECTORY_HEADER)
    for k in range(result.z.size):
        has_input = k < result.steps
        writer.writerow([
            k,
            _num(k * result.ts),
            _num(result.current[k]) if has_input else '',
            _num(result.z[k]),
            _num(result.u1[k]),
            _num(result.vt[k]) if has_input else '',
            _num(result.vt_limit[k]) if has_input else '',
        ])
    return buf.getvalue()


def bo_trace_jsonl(trace):
    """One JSON object per iteration; floats with 17 significant digits."""
    lines = []
    for rec in trace.to_records():
        theta = ', '.join(_num(v) for v in rec['theta'])
        lines.append(f'{{"n": {rec["n"]}, "theta": [{theta}], "g": {_num(rec["g"])}, "best_g": {_num(rec["best_g"])}}}')
    return '\n'.join(lines) + '\n'


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + '\n'


def prepare_out_dir(out_dir, names, force):
    os.makedirs(out_dir, exist_ok=True)
    existing = [n for n in names if os.path.exists(os.path.join(out_dir, n))]
    if existing and not force:
        raise UsageError(f"{out_dir} already holds {', '.join(existing)}; use --force to overwrite")


def load_theta(path):
    """θ from a JSON list, or an object with a "theta" list (best_theta.json)."""
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read theta file {path}: {e}") from e
    if isinstance(data, dict):
        data = data.get('theta')
    if not isinstance(data, list) or not data:
        raise UsageError(f"theta file {path} must hold a non-empty list of numbers")
    try:
        theta = np.array([float(v) for v in data])
    except (TypeError, ValueError) as e:
        raise UsageError(f"theta file {path}: {e}") from e
    if not np.all(np.isfinite(theta)):
        raise UsageError(f"theta file {path} contains non-finite values")
    return theta


# ── Run setup ────────────────────────────────────────────────────

class Setup:
    """Plant, base controller and initial state resolved from a RunConfig."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.plant = load_parameter_table(cfg.cell_table)
        mismatch = MismatchConfig(cfg.mismatch_seed, cfg.mismatch_delta,
                                tuple(cfg.mismatch_params), cfg.mismatch_per_knot)
        self.base = base_controller(self.plant, mismatch, horizon=cfg.horizon, soft_weight=cfg.soft_weight,
                                    input_reg=cfg.input_reg, ts=cfg.ts_s)
        self.x_init = EcmState(cfg.z0, cfg.u1_0)

    def objective(self):
        return EpisodeObjective(self.cfg.case, self.plant, self.base, self.x_init,
                                self.cfg.steps, self.cfg.c1, self.cfg.tuned_curve, self.cfg.u1_feedback)

    def episode(self, theta=None):
        controller = controller_for(self.cfg.case, theta, self.base, self.plant, self.cfg.tuned_curve)
        return run_episode(self.plant, controller, self.x_init, self.cfg.steps, self.cfg.c1, self.cfg.u1_feedback)

    def write_episode(self, result, out_dir, prefix='trajectory'):
        atomic_write(os.path.join(out_dir, f'{prefix}.csv'), trajectory_csv(result))

    def write_config(self, out_dir):
        atomic_write(os.path.join(out_dir, 'run_config.json'), dump_run_config(self.cfg) + '\n')


# ── Commands ─────────────────────────────────────────────────────

def cmd_simulate(setup, out_dir, force=False):
    """One episode at the case's default controller."""
    prepare_out_dir(out_dir, ('trajectory.csv', 'summary.json', 'run_config.json'), force)
    result = setup.episode()
    setup.write_config(out_dir)
    setup.write_episode(result, out_dir)
    atomic_write(os.path.join(out_dir, 'summary.json'), _json(result.summary()))
    return EXIT_RUNTIME if result.failed else EXIT_OK


def cmd_tune(setup, out_dir, force=False):
    """Bayesian optimization over the case's θ-domain."""
    cfg = setup.cfg
    if cfg.case == CASE_NOMINAL:
        raise ConfigError('case', "tune needs case = 'backoff' or 'model'")
    prepare_out_dir(out_dir, ('bo_trace.jsonl', 'best_theta.json', 'trajectory_best.csv',
                              'tune_summary.json', 'run_config.json'), force)
    objective = setup.objective()
    domain = case_domain(cfg.case, setup.plant, cfg.tuned_curve)
    theta0 = default_theta(cfg.case, setup.base, setup.plant, cfg.tuned_curve)

    trace = run_bo(objective, domain, cfg.bo_budget, cfg.bo_n_init, cfg.bo_seed, theta0=theta0)
    setup.write_config(out_dir)
    atomic_write(os.path.join(out_dir, 'bo_trace.jsonl'), bo_trace_jsonl(trace))

    best = trace.best()
    final = setup.episode(best.theta)
    atomic_write(os.path.join(out_dir, 'best_theta.json'), _json({
        'case': cfg.case,
        'curve': cfg.tuned_curve if cfg.case == 'model' else None,
        'n': best.n,
        'theta': [float(v) for v in best.theta],
        'g': best.g,
    }))
    setup.write_episode(final, out_dir, 'trajectory_best')
    atomic_write(os.path.join(out_dir, 'tune_summary.json'), _json({
        'best': final.summary(),
        'initial': objective.results[0].summary() if objective.results else None,
        'safety': trial_safety(objective.results),
    }))
    return EXIT_RUNTIME if final.failed else EXIT_OK


def cmd_eval(setup, theta_path, out_dir, force=False):
    """Single episode at a given θ; prints a one-line JSON summary."""
    cfg = setup.cfg
    if cfg.case == CASE_NOMINAL:
        raise ConfigError('case', "eval needs case = 'backoff' or 'model'")
    theta = load_theta(theta_path)
    domain = case_domain(cfg.case, setup.plant, cfg.tuned_curve)
    if theta.size != domain.dim:
        raise UsageError(f"theta has {theta.size} entries, case '{cfg.case}' needs {domain.dim}")
    prepare_out_dir(out_dir, ('trajectory.csv', 'summary.json', 'run_config.json'), force)
    result = setup.episode(theta)
    setup.write_config(out_dir)
    setup.write_episode(result, out_dir)
    atomic_write(os.path.join(out_dir, 'summary.json'), _json(result.summary()))
    print(json.dumps({
        'g': result.g,
        'max_violation_v': result.max_violation,
        'time_to_soc_095_s': result.time_to_soc(0.95),
    }))
    return EXIT_RUNTIME if result.failed else EXIT_OK


# ── Main ─────────────────────────────────────────────────────────

def build_parser():
    parser = argparse.ArgumentParser(prog='bompc', description="Bayesian-optimization tuning of charging MPC")
    parser.add_argument('command', choices=('simulate', 'tune', 'eval'))
    parser.add_argument('--config', required=True, help="Run configuration (flat TOML)")
    parser.add_argument('--theta', default=None, help="Theta file for eval (JSON list or best_theta.json)")
    parser.add_argument('--out', default=None, help="Output directory (default: out_dir from the config)")
    parser.add_argument('--seed', type=int, default=None, help="Override bo_seed")
    parser.add_argument('--force', action='store_true', help="Overwrite existing outputs")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    try:
        overrides = {} if args.seed is None else {'bo_seed': args.seed}
        cfg = load_run_config(args.config, overrides)
        out_dir = os.path.abspath(args.out) if args.out else cfg.out_dir
        setup = Setup(cfg)
        if args.command == 'simulate':
            return cmd_simulate(setup, out_dir, args.force)
        if args.command == 'tune':
            return cmd_tune(setup, out_dir, args.force)
        if args.theta is None:
            raise UsageError("eval needs --theta")
        return cmd_eval(setup, args.theta, out_dir, args.force)
    except (ConfigError, CellTableError, UsageError, OcpError, EcmError) as e:
        log.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        log.exception(f"Run failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
