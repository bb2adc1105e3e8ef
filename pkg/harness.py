"""
harness.py: Closed-loop charging episodes and the two tuning cases.

An episode runs the MPC (prediction model + backoff) against the plant cell
and scores it with the closed-loop objective

    G = Σ_{k=0..M} -c1 (1 - z_k)² - max(0, V_T,k - v_t_max)²

where V_T,M (no input at step M) repeats the last step voltage.

Tuning cases map θ ∈ R^7 onto a controller:
  backoff: b(z) spline over 7 uniform SOC knots tightening the upper bound.
  model:   prediction-model curve (r1 by default) over the same knots.

The model case only changes the first applied current when the controller
estimates u1 with its own model (feedback='estimated'): a raised r1 then
raises the predicted voltage in proportion to the current.
"""

from dataclasses import dataclass, field, replace

import numpy as np

import config
from bo import ParamDomain
from config import log
from ecm import CURVES, EcmError, EcmState, step, validate_cell
from ocp import MpcController, OcpConfig
from spline import build_spline, uniform_knots

CASE_NOMINAL = 'nominal'
CASE_BACKOFF = 'backoff'
CASE_MODEL = 'model'
CASES = (CASE_NOMINAL, CASE_BACKOFF, CASE_MODEL)

# What the controller sees of u1: the plant value, or its own model-propagated estimate.
FEEDBACK_MEASURED = 'measured'
FEEDBACK_ESTIMATED = 'estimated'
FEEDBACKS = (FEEDBACK_MEASURED, FEEDBACK_ESTIMATED)

TUNING_KNOTS = uniform_knots(config.SPLINE_KNOTS)


class EpisodeError(RuntimeError):
    """A closed-loop episode could not be completed."""


# ── Episodes ─────────────────────────────────────────────────────

@dataclass
class EpisodeResult:
    """Closed-loop record: M+1 states, M inputs / step voltages / active upper limits."""

    ts: float
    v_t_max: float
    z: np.ndarray
    u1: np.ndarray
    current: np.ndarray
    vt: np.ndarray
    vt_limit: np.ndarray
    g: float = 0.0
    failed: bool = False
    message: str = ''

    @property
    def steps(self):
        return int(self.current.size)

    @property
    def max_violation(self):
        if self.vt.size == 0:
            return 0.0
        return float(max(0.0, np.max(self.vt - self.v_t_max)))

    @property
    def vt_held(self):
        """Step voltages extended to M+1 entries by holding the last one."""
        if self.vt.size == 0:
            return self.vt
        return np.append(self.vt, self.vt[-1])

    def time_to_soc(self, level):
        """Seconds until z first reaches `level`, or None if it never does."""
        hit = np.nonzero(self.z >= level)[0]
        return float(hit[0] * self.ts) if hit.size else None

    def time_to_soc_table(self, levels=config.SOC_MILESTONES):
        return {level: self.time_to_soc(level) for level in levels}

    def summary(self):
        return {
            'g': self.g,
            'max_violation_v': self.max_violation,
            'steps': self.steps,
            'failed': self.failed,
            'message': self.message,
            'final_soc': float(self.z[-1]),
            'time_to_soc_s': {f'{k:g}': v for k, v in self.time_to_soc_table().items()},
        }


def closed_loop_objective(result, c1=config.C1_WEIGHT, v_t_max=None):
    """Closed-loop score G (≤ 0); 0 only for z ≡ 1 with no upper-voltage violation."""
    v_t_max = result.v_t_max if v_t_max is None else v_t_max
    soc_term = c1 * np.sum((1.0 - result.z) ** 2)
    violation = np.maximum(0.0, result.vt_held - v_t_max)
    return float(-soc_term - np.sum(violation ** 2))


def run_episode(plant, controller, x_init, steps=config.EPISODE_STEPS, c1=config.C1_WEIGHT,
                feedback=FEEDBACK_MEASURED):
    """Run `steps` MPC steps on the plant. Solver/step failures give a failed, partial result.

    With feedback='estimated' the controller measures z but not u1: it carries
    its own u1, started at x_init.u1 and advanced by its prediction model with
    the applied current.
    """
    if steps < 1:
        raise ValueError(f"episode needs at least 1 step, got {steps}")
    if feedback not in FEEDBACKS:
        raise ValueError(f"feedback must be one of {FEEDBACKS}, got {feedback!r}")
    mpc = MpcController(controller)
    ts = controller.ts
    z, u1 = [x_init.z], [x_init.u1]
    current, vt, limit = [], [], []
    failed, message = False, ''
    state = x_init
    u1_hat = x_init.u1

    for k in range(steps):
        try:
            seen = state if feedback == FEEDBACK_MEASURED else EcmState(state.z, u1_hat)
            i_k = mpc.mpc_policy(seen)
            lim = float(controller.upper_limit(state.z))
            if feedback == FEEDBACK_ESTIMATED:
                u1_hat = step(controller.model, seen, i_k, ts)[0].u1
            state, v_k = step(plant, state, i_k, ts)
        except Exception as e:
            failed, message = True, f"step {k}: {e}"
            log.warning(f"Episode failed at {message}")
            break
        current.append(i_k)
        vt.append(v_k)
        limit.append(lim)
        z.append(state.z)
        u1.append(state.u1)

    result = EpisodeResult(
        ts=ts,
        v_t_max=plant.v_t_max,
        z=np.array(z),
        u1=np.array(u1),
        current=np.array(current),
        vt=np.array(vt),
        vt_limit=np.array(limit),
        failed=failed,
        message=message,
    )
    result.g = closed_loop_objective(result, c1, plant.v_t_max)
    log.info(f"Episode: G={result.g:.6g} max_violation={result.max_violation * 1e3:.2f} mV "
             f"final z={result.z[-1]:.4f}{' FAILED' if failed else ''}")
    return result


# ── Model-plant mismatch ─────────────────────────────────────────

@dataclass(frozen=True)
class MismatchConfig:
    seed: int = config.MISMATCH_SEED
    delta: float = config.MISMATCH_DELTA
    params: tuple = CURVES
    per_knot: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"mismatch delta must be in [0, 1), got {self.delta}")
        unknown = set(self.params) - set(CURVES)
        if unknown:
            raise ValueError(f"cannot disturb {sorted(unknown)}; choose from {CURVES}")
        object.__setattr__(self, 'params', tuple(self.params))


def draw_factors(cell, mismatch):
    """Multiplicative factors ~ U[1-δ, 1+δ] per disturbed curve (one per knot when per_knot).

    Draws happen for every curve in a fixed order, so a curve's factor does not
    depend on which other curves are disturbed.
    """
    rng = np.random.default_rng(mismatch.seed)
    factors = {}
    for name in CURVES:
        n = cell.curve(name).values.size if mismatch.per_knot else 1
        draw = rng.uniform(1.0 - mismatch.delta, 1.0 + mismatch.delta, size=n)
        if name in mismatch.params:
            factors[name] = draw if mismatch.per_knot else float(draw[0])
    return factors


def make_mismatch(cell, mismatch):
    """Disturbed copy of `cell` for the prediction model. OCV is left exact."""
    factors = draw_factors(cell, mismatch)
    disturbed = replace(cell, **{name: cell.curve(name).scaled(f) for name, f in factors.items()})
    try:
        validate_cell(disturbed)
    except EcmError as e:
        raise EcmError(f"disturbed parameters invalid: {e}") from e
    log.debug(f"Mismatch seed={mismatch.seed} delta={mismatch.delta}: {factors}")
    return disturbed


# ── Tuning cases ─────────────────────────────────────────────────

def base_controller(plant, mismatch=None, **ocp_kwargs):
    """Zero-backoff controller on the plant model, disturbed by `mismatch` when given."""
    model = plant if mismatch is None or mismatch.delta == 0 else make_mismatch(plant, mismatch)
    return OcpConfig(model=model, **ocp_kwargs)


def _clip_theta(theta, domain, what):
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != domain.dim:
        raise ValueError(f"{what} needs {domain.dim} parameters, got {theta.size}")
    clipped = domain.clip(theta)
    if not np.array_equal(clipped, theta):
        log.warning(f"{what}: theta outside bounds, clipped {theta.tolist()} -> {clipped.tolist()}")
    return clipped


def backoff_domain():
    return ParamDomain(np.zeros(config.SPLINE_KNOTS), np.full(config.SPLINE_KNOTS, config.BACKOFF_MAX_V))


def case_backoff(theta, base_cfg):
    """Install b_θ (spline over the 7 SOC knots, volts) as the upper-bound backoff."""
    theta = _clip_theta(theta, backoff_domain(), 'backoff')
    return replace(base_cfg, backoff=build_spline(TUNING_KNOTS, theta, floor=0.0))


def model_domain(nominal, curve='r1'):
    """[0.25, 4] × the mean table value of `curve` on the nominal cell, per knot."""
    lo, hi = config.MODEL_SCALE_BOUNDS
    mean = float(np.mean(nominal.curve(curve).values))
    return ParamDomain(np.full(config.SPLINE_KNOTS, lo * mean), np.full(config.SPLINE_KNOTS, hi * mean))


def case_model(theta, base_cfg, nominal, curve='r1'):
    """Replace the prediction model's `curve` with a spline over the 7 SOC knots; backoff is zero.

    The other curves keep their (disturbed) values. Evaluations are floored at
    the lower bound so the curve stays positive between knots.
    """
    if curve not in CURVES:
        raise ValueError(f"cannot tune '{curve}'; choose from {CURVES}")
    domain = model_domain(nominal, curve)
    theta = _clip_theta(theta, domain, f'model[{curve}]')
    spline = build_spline(TUNING_KNOTS, theta, floor=float(domain.lower[0]))
    return replace(base_cfg, model=base_cfg.model.with_curve(curve, spline), backoff=None)


def case_domain(case, nominal, curve='r1'):
    if case == CASE_BACKOFF:
        return backoff_domain()
    if case == CASE_MODEL:
        return model_domain(nominal, curve)
    raise ValueError(f"case '{case}' has no tuning domain")


def default_theta(case, base_cfg, nominal, curve='r1'):
    """θ_0: zero backoff, or the (disturbed) prediction curve sampled at the knots."""
    if case == CASE_BACKOFF:
        return np.zeros(config.SPLINE_KNOTS)
    if case == CASE_MODEL:
        return case_domain(case, nominal, curve).clip(base_cfg.model.curve(curve).sample(TUNING_KNOTS))
    raise ValueError(f"case '{case}' has no tuning parameters")


def controller_for(case, theta, base_cfg, nominal, curve='r1'):
    if case == CASE_NOMINAL or theta is None:
        return base_cfg
    if case == CASE_BACKOFF:
        return case_backoff(theta, base_cfg)
    if case == CASE_MODEL:
        return case_model(theta, base_cfg, nominal, curve)
    raise ValueError(f"unknown case '{case}'")


@dataclass
class EpisodeObjective:
    """θ → G for one case; keeps every episode for the trial-safety summary."""

    case: str
    plant: object
    base_cfg: OcpConfig
    x_init: EcmState
    steps: int = config.EPISODE_STEPS
    c1: float = config.C1_WEIGHT
    curve: str = 'r1'
    feedback: str = FEEDBACK_MEASURED
    results: list = field(default_factory=list)

    def episode(self, theta):
        cfg = controller_for(self.case, theta, self.base_cfg, self.plant, self.curve)
        return run_episode(self.plant, cfg, self.x_init, self.steps, self.c1, self.feedback)

    def __call__(self, theta):
        result = self.episode(theta)
        self.results.append(result)
        if result.failed:
            raise EpisodeError(result.message)
        return result.g


def trial_safety(results, tolerance=0.0):
    """How many episodes exceeded v_t_max by more than `tolerance` volts."""
    violations = [r.max_violation for r in results]
    unsafe = sum(v > tolerance for v in violations)
    return {
        'trials': len(results),
        'unsafe_trials': int(unsafe),
        'unsafe_fraction': unsafe / len(results) if results else 0.0,
        'worst_violation_v': max(violations, default=0.0),
    }
