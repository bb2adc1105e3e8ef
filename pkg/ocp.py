"""
ocp.py: Charging OCP and the MPC policy built on it.

Horizon-N set-point problem toward z = 1 with the terminal-voltage bounds as
one-sided quadratic penalties. Direct single shooting over the N currents;
the input box [i_min, i_max] is a hard constraint handled by the bounded
quasi-Newton solver (L-BFGS-B) with batched forward-difference gradients.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

import config
from config import log
from ecm import CellParams, EcmState, step_arrays
from spline import Spline

STATUS_CONVERGED = 'converged'
STATUS_MAX_ITER = 'max-iterations'
STATUS_DEGENERATE = 'degenerate'


class OcpError(ValueError):
    """Invalid OCP configuration or solver input."""


@dataclass(frozen=True, eq=False)
class OcpConfig:
    model: CellParams
    horizon: int = config.HORIZON
    backoff: Spline | None = None
    soft_weight: float = config.SOFT_WEIGHT
    input_reg: float = config.INPUT_REG
    ts: float = config.TS_S
    i_min: float = 0.0
    i_max: float | None = None

    def __post_init__(self):
        if self.i_max is None:
            object.__setattr__(self, 'i_max', float(self.model.i_max))
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise OcpError(f"horizon must be an integer >= 1, got {self.horizon}")
        if self.soft_weight <= 0:
            raise OcpError(f"soft_weight must be positive, got {self.soft_weight}")
        if self.input_reg < 0:
            raise OcpError(f"input_reg must be >= 0, got {self.input_reg}")
        if self.ts <= 0:
            raise OcpError(f"ts must be positive, got {self.ts}")
        if not self.i_min <= self.i_max:
            raise OcpError(f"input bounds out of order: [{self.i_min}, {self.i_max}]")

    def backoff_at(self, z):
        """b(z) in volts, floored at zero (a spline through non-negative knots can dip below)."""
        if self.backoff is None:
            return np.zeros_like(np.asarray(z, dtype=float))
        return np.maximum(self.backoff(z), 0.0)

    def upper_limit(self, z):
        return self.model.v_t_max - self.backoff_at(z)


@dataclass
class OcpSolution:
    inputs: np.ndarray
    states: list
    voltages: np.ndarray
    cost: float
    status: str
    iterations: int = 0

    @property
    def converged(self):
        return self.status == STATUS_CONVERGED


# ── Cost ─────────────────────────────────────────────────────────

def rollout(cfg, x0, inputs):
    """Predicted SOC (B, N+1), polarization (B, N+1) and voltages (B, N) for a batch of sequences."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    batch, n = inputs.shape
    zs = np.empty((batch, n + 1))
    u1s = np.empty((batch, n + 1))
    vts = np.empty((batch, n))
    zs[:, 0] = x0.z
    u1s[:, 0] = x0.u1
    for i in range(n):
        zs[:, i + 1], u1s[:, i + 1], vts[:, i] = step_arrays(cfg.model, zs[:, i], u1s[:, i], inputs[:, i], cfg.ts)
    return zs, u1s, vts


def cost_batch(cfg, x0, inputs):
    """ocp_cost for every row of `inputs` (shape (B, N))."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    zs, _, vts = rollout(cfg, x0, inputs)
    tracking = np.sum((1.0 - zs) ** 2, axis=1)
    over = np.maximum(0.0, vts - cfg.upper_limit(zs[:, :-1]))
    under = np.maximum(0.0, cfg.model.v_t_min - vts)
    penalty = cfg.soft_weight * np.sum(over ** 2 + under ** 2, axis=1)
    reg = cfg.input_reg * np.sum(inputs ** 2, axis=1)
    return tracking + penalty + reg


def ocp_cost(cfg, x0, inputs):
    """Σ_{i=0..N} (1 - ẑ_i)² + λ Σ_{i<N} soft voltage violations² + ε Σ û_i²."""
    inputs = np.asarray(inputs, dtype=float).ravel()
    if inputs.size != cfg.horizon:
        raise OcpError(f"expected {cfg.horizon} inputs, got {inputs.size}")
    return float(cost_batch(cfg, x0, inputs[None, :])[0])


def _cost_and_gradient(cfg, x0, u):
    """Cost and forward-difference gradient from one batched rollout (steps flip backward at i_max)."""
    n = u.size
    h = config.FD_REL_STEP * np.maximum(1.0, np.abs(u))
    h = np.where(u + h > cfg.i_max, -h, h)
    batch = np.repeat(u[None, :], n + 1, axis=0)
    batch[np.arange(1, n + 1), np.arange(n)] += h
    costs = cost_batch(cfg, x0, batch)
    return float(costs[0]), (costs[1:] - costs[0]) / h


# ── Solver ───────────────────────────────────────────────────────

def solve_ocp(cfg, x0, warm_start=None):
    """Minimize ocp_cost over the input box. Never raises on non-convergence."""
    if not x0.is_finite():
        raise OcpError(f"non-finite initial state {x0}")
    n = cfg.horizon
    bounds = [(cfg.i_min, cfg.i_max)] * n

    if warm_start is not None:
        warm = np.asarray(warm_start, dtype=float).ravel()
        if warm.size != n:
            raise OcpError(f"warm start has {warm.size} entries, horizon is {n}")
        starts = [np.clip(warm, cfg.i_min, cfg.i_max)]
    else:
        starts = [np.full(n, cfg.i_max), np.full(n, cfg.i_min)]

    best = None
    for u0 in starts:
        res = minimize(
            lambda u: _cost_and_gradient(cfg, x0, u),
            u0,
            jac=True,
            method='L-BFGS-B',
            bounds=bounds,
            options={'maxiter': config.SOLVER_MAX_ITER, 'gtol': config.SOLVER_GTOL, 'ftol': config.SOLVER_FTOL},
        )
        u = np.clip(res.x, cfg.i_min, cfg.i_max)
        cost = ocp_cost(cfg, x0, u)
        if best is None or cost < best[1]:
            best = (u, cost, res)

    u, cost, res = best
    if res.status == 0:
        status = STATUS_CONVERGED
    elif res.status == 1:
        status = STATUS_MAX_ITER
        log.warning(f"OCP hit the iteration budget at z={x0.z:.4f} (cost {cost:.6g})")
    else:
        status = STATUS_DEGENERATE
        log.debug(f"OCP solver stopped early at z={x0.z:.4f}: {res.message}")

    zs, u1s, vts = rollout(cfg, x0, u[None, :])
    states = [EcmState(float(z), float(v)) for z, v in zip(zs[0], u1s[0])]
    return OcpSolution(u, states, vts[0], cost, status, int(res.nit))


@dataclass
class MpcController:
    """Receding-horizon policy with shifted warm-start memory. Single owner, not thread-safe."""

    cfg: OcpConfig
    _warm: np.ndarray | None = field(default=None, repr=False)
    last_solution: OcpSolution | None = field(default=None, repr=False)

    def reset(self):
        self._warm = None
        self.last_solution = None

    def mpc_policy(self, x_k):
        """First element of the OCP solution at x_k."""
        sol = solve_ocp(self.cfg, x_k, self._warm)
        self.last_solution = sol
        self._warm = np.append(sol.inputs[1:], sol.inputs[-1])
        return float(np.clip(sol.inputs[0], self.cfg.i_min, self.cfg.i_max))


def mpc_policy(cfg, x_k):
    """One-shot (cold-started) policy evaluation."""
    return MpcController(cfg).mpc_policy(x_k)
