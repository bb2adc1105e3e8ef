"""
spline.py: Natural cubic splines over SOC grids.

Used for the cell parameter curves, the voltage backoff b(z) and the tuned
prediction-model curves. Evaluation clamps to the knot range, so the value
outside [first knot, last knot] is the boundary value. An optional floor
bounds evaluations from below (tuned resistance curves must stay positive
between knots).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


class SplineError(ValueError):
    """Raised for invalid spline data or evaluation points."""


@dataclass(frozen=True, eq=False)
class Spline:
    knots: np.ndarray
    values: np.ndarray
    _pp: CubicSpline = field(repr=False)
    floor: float | None = None

    @property
    def coefficients(self):
        """Per-segment cubic coefficients, shape (4, n_knots - 1), highest power first."""
        return self._pp.c

    @property
    def lower(self):
        return float(self.knots[0])

    @property
    def upper(self):
        return float(self.knots[-1])

    def __call__(self, x):
        return eval_spline(self, x)

    def derivative(self, x, order=1):
        """Derivative of the piecewise cubic at x (clamped like eval, floor ignored)."""
        x = _check_finite(x)
        return self._pp(np.clip(x, self.lower, self.upper), order)

    def scaled(self, factors):
        """New spline through values * factors (scalar or one factor per knot)."""
        return build_spline(self.knots, self.values * np.asarray(factors, dtype=float), floor=self.floor)

    def sample(self, points):
        """Evaluate at each point and return a float array."""
        return np.asarray(eval_spline(self, np.asarray(points, dtype=float)), dtype=float)


def build_spline(knots, values, floor=None):
    """Build a natural cubic spline through (knots, values)."""
    knots = np.array(knots, dtype=float).ravel()
    values = np.array(values, dtype=float).ravel()
    if knots.shape != values.shape:
        raise SplineError(f"length mismatch: {knots.size} knots vs {values.size} values")
    if knots.size < 2:
        raise SplineError("need at least 2 knots")
    if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
        raise SplineError("knots and values must be finite")
    if np.any(np.diff(knots) <= 0):
        bad = int(np.argmax(np.diff(knots) <= 0)) + 1
        raise SplineError(f"knots must be strictly increasing (knot {bad}: {knots[bad]!r})")
    knots.setflags(write=False)
    values.setflags(write=False)
    return Spline(knots, values, CubicSpline(knots, values, bc_type='natural'),
                  None if floor is None else float(floor))


def constant_spline(value, lower=0.0, upper=1.0):
    return build_spline([lower, upper], [value, value])


def uniform_knots(count, lower=0.0, upper=1.0):
    """`count` equally spaced knots on [lower, upper]."""
    return np.linspace(lower, upper, count)


def eval_spline(s, x):
    """Evaluate s at x (scalar or array). Outside the knot range the boundary value is returned."""
    x = _check_finite(x)
    y = s._pp(np.clip(x, s.lower, s.upper))
    if s.floor is not None:
        y = np.maximum(y, s.floor)
    if np.ndim(y) == 0:
        return float(y)
    return y


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise SplineError(f"cannot evaluate spline at non-finite point {x!r}")
    return arr
