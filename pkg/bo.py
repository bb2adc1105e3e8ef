"""
bo.py: Bayesian-optimization loop over a box of tuning parameters.

Maximizes a black-box objective: seeded quasi-uniform initial design starting
at θ_0, then fit GP → maximize Expected Improvement → evaluate → append, one
evaluation per iteration. Everything is seeded; identical inputs give
identical traces.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

import config
from config import log
from gp import GpDataset, GpError, fit_gp, gp_posterior


@dataclass(frozen=True, eq=False)
class ParamDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.size < 1 or lo.shape != hi.shape:
            raise ValueError(f"domain bounds must be non-empty and equal length ({lo.size} vs {hi.size})")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(lo > hi):
            raise ValueError(f"domain bounds must be finite and ordered: {lo} / {hi}")
        object.__setattr__(self, 'lower', lo)
        object.__setattr__(self, 'upper', hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def clip(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def from_unit(self, u):
        return self.lower + np.asarray(u) * self.width


@dataclass
class BoRecord:
    n: int
    theta: np.ndarray
    g: float
    best_g: float
    hyper: dict | None = None
    failed: bool = False


@dataclass
class BoTrace:
    seed: int
    records: list = field(default_factory=list)

    def best(self):
        """Incumbent record (first one on ties)."""
        return max(self.records, key=lambda r: (r.g, -r.n))

    @property
    def thetas(self):
        return np.array([r.theta for r in self.records])

    @property
    def values(self):
        return np.array([r.g for r in self.records])

    def to_records(self):
        return [
            {'n': r.n, 'theta': [float(v) for v in r.theta], 'g': float(r.g), 'best_g': float(r.best_g)}
            for r in self.records
        ]


# ── Acquisition ──────────────────────────────────────────────────

def improvement_from_moments(mu, s, best, xi):
    """E[max(0, X - best - ξ)] for X ~ N(mu, s²); the deterministic surplus when s = 0."""
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    gain = mu - best - xi
    safe_s = np.where(s > 0, s, 1.0)
    t = gain / safe_s
    ei = np.where(s > 0, gain * norm.cdf(t) + s * norm.pdf(t), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def expected_improvement(model, query, best, margin=None):
    """EI for maximization with improvement margin ξ (default 0.01 target scale). Always >= 0."""
    xi = config.EI_MARGIN * model.y_scale if margin is None else margin
    mu, var = gp_posterior(model, query)
    return improvement_from_moments(mu, np.sqrt(var), best, xi)


def _coordinate_ascent(model, domain, x, best, iters):
    """Projected coordinate search on EI: best ±step move per iteration, halve the step on no progress."""
    value = float(expected_improvement(model, x[None, :], best)[0])
    step = 0.1 * domain.width
    dim = domain.dim
    for _ in range(iters):
        moves = np.repeat(x[None, :], 2 * dim, axis=0)
        moves[np.arange(dim), np.arange(dim)] += step
        moves[dim + np.arange(dim), np.arange(dim)] -= step
        moves = domain.clip(moves)
        scores = expected_improvement(model, moves, best)
        i = int(np.argmax(scores))
        if scores[i] > value:
            x, value = moves[i], float(scores[i])
        else:
            step = step / 2.0
    return x, value


def propose_next(model, domain, seed, best=None):
    """Approximate argmax of EI over the domain (Sobol candidates + top-k coordinate refinement)."""
    if best is None:
        best = float(np.max(model.dataset.targets)) if model.dataset.size else model.hyper.prior_mean
    sampler = qmc.Sobol(d=domain.dim, scramble=True, seed=seed)
    candidates = domain.from_unit(sampler.random(config.ACQ_SAMPLES))
    scores = expected_improvement(model, candidates, best)
    top = np.argsort(-scores, kind='stable')[:config.ACQ_TOP]

    best_x, best_val = candidates[top[0]], float(scores[top[0]])
    for i in top:
        x, val = _coordinate_ascent(model, domain, candidates[i], best, config.ACQ_REFINE_ITERS)
        if val > best_val:
            best_x, best_val = x, val
    return domain.clip(best_x)


# ── Tuning loop ──────────────────────────────────────────────────

def initial_design(domain, n_init, seed, theta0=None):
    """θ_0 (domain center when not given) followed by n_init - 1 scrambled Halton points."""
    first = domain.center if theta0 is None else domain.clip(theta0)
    points = [first]
    if n_init > 1:
        sampler = qmc.Halton(d=domain.dim, scramble=True, seed=seed)
        points.extend(domain.from_unit(sampler.random(n_init - 1)))
    return points


def _evaluate(objective, theta, values):
    """Objective value, or worst-so-far minus one target scale when the evaluation fails."""
    try:
        g = float(objective(theta))
        if not np.isfinite(g):
            raise ValueError(f"non-finite objective {g}")
        return g, False
    except Exception as e:
        scale = float(np.std(values)) if len(values) >= 2 else 0.0
        scale = scale if scale > 0 else 1.0
        g = (min(values) if values else 0.0) - scale
        log.warning(f"Objective failed at theta={np.round(theta, 4).tolist()}: {e}; recording {g:.6g}")
        return g, True


def run_bo(objective, domain, budget=config.BO_BUDGET, n_init=config.BO_INIT, seed=config.BO_SEED,
           theta0=None, on_record=None):
    """Maximize `objective` over `domain`.

    Evaluates the n_init-point initial design, then `budget` acquisition-driven
    proposals; the trace holds n_init + budget records. `on_record` is called
    with each BoRecord as it is appended.
    """
    if budget < 1 or n_init < 1:
        raise ValueError(f"budget and n_init must be >= 1 (got {budget}, {n_init})")
    trace = BoTrace(seed=seed)
    thetas, values = [], []
    rng = np.random.default_rng(seed)

    def append(theta, hyper):
        g, failed = _evaluate(objective, theta, values)
        thetas.append(np.asarray(theta, dtype=float))
        values.append(g)
        record = BoRecord(len(trace.records), thetas[-1], g, max(values), hyper, failed)
        trace.records.append(record)
        log.info(f"BO n={record.n:3d} g={g:.6g} best={record.best_g:.6g}")
        if on_record:
            on_record(record)

    for theta in initial_design(domain, n_init, seed, theta0):
        append(theta, None)

    for it in range(budget):
        if len(values) < 2:
            append(domain.from_unit(rng.random(domain.dim)), None)
            continue
        dataset = GpDataset(np.array(thetas), np.array(values))
        try:
            model = fit_gp(dataset, domain.lower, domain.upper, seed=seed + it)
            theta = propose_next(model, domain, seed=seed + 7919 * (it + 1), best=max(values))
            hyper = model.hyper.as_dict()
        except GpError as e:
            log.warning(f"GP fit failed ({e}); sampling a random point")
            theta, hyper = domain.from_unit(rng.random(domain.dim)), None
        append(theta, hyper)
    return trace
