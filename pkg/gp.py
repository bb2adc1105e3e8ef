"""
gp.py: Gaussian-process surrogate for the tuning loop.

Squared-exponential kernel with one length scale per input dimension and a
constant prior mean. fit_gp works on inputs mapped to the unit box over the
tuning domain and on standardized targets; the model keeps that affine map
so gp_posterior answers in the caller's units.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import qmc

import config
from config import log

LENGTH_BOUNDS = (1e-2, 1e1)      # × input range (unit box after normalization)
SIGNAL_BOUNDS = (1e-4, 1e2)      # × target variance
NOISE_BOUNDS = (1e-8, 1e-2)      # × target variance
_LOG_2PI = math.log(2.0 * math.pi)


class GpError(ValueError):
    """Bad GP inputs, or a covariance that stays indefinite after jitter."""


@dataclass(frozen=True, eq=False)
class GpDataset:
    inputs: np.ndarray
    targets: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)  # a flat list is n one-dimensional points
        y = np.asarray(self.targets, dtype=float).ravel()
        if x.shape[0] != y.size:
            raise GpError(f"{x.shape[0]} inputs but {y.size} targets")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise GpError("inputs and targets must be finite")
        if self.noise_var < 0:
            raise GpError(f"noise variance must be >= 0, got {self.noise_var}")
        object.__setattr__(self, 'inputs', x)
        object.__setattr__(self, 'targets', y)

    @property
    def size(self):
        return self.targets.size

    @property
    def dim(self):
        return self.inputs.shape[1]


@dataclass(frozen=True)
class GpHyperparameters:
    signal_var: float
    length_scales: tuple
    prior_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'length_scales', tuple(float(v) for v in np.ravel(self.length_scales)))
        if self.signal_var <= 0:
            raise GpError(f"signal variance must be positive, got {self.signal_var}")
        if any(v <= 0 for v in self.length_scales):
            raise GpError(f"length scales must be positive, got {self.length_scales}")

    def as_dict(self):
        return {
            'signal_var': self.signal_var,
            'length_scales': list(self.length_scales),
            'prior_mean': self.prior_mean,
        }


@dataclass(frozen=True, eq=False)
class GpModel:
    """Posterior-ready GP. `hyper` and the dataset noise live in the normalized frame."""

    dataset: GpDataset
    hyper: GpHyperparameters
    x_offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    y_offset: float = 0.0
    y_scale: float = 1.0
    _xn: np.ndarray = field(default=None, repr=False)
    _chol: tuple | None = field(default=None, repr=False)
    _alpha: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self):
        return len(self.hyper.length_scales)

    @property
    def noise_var(self):
        """Noise variance in the normalized frame."""
        return self.dataset.noise_var / self.y_scale ** 2

    def to_normalized(self, x):
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.x_offset) / self.x_scale

    def log_likelihood(self):
        return log_marginal_likelihood(normalized_dataset(self), self.hyper)


# ── Kernel ───────────────────────────────────────────────────────

def sq_exp_kernel(a, b, hyper):
    """k(a, b) = s² exp(-½ Σ_d ((a_d - b_d) / ℓ_d)²)."""
    ls = np.asarray(hyper.length_scales)
    return hyper.signal_var * np.exp(-0.5 * cdist(a / ls, b / ls, 'sqeuclidean'))


def _factorize(x, noise_var, hyper):
    n = x.shape[0]
    k = sq_exp_kernel(x, x, hyper)
    k[np.diag_indices(n)] += noise_var + config.GP_JITTER * hyper.signal_var
    try:
        return linalg.cho_factor(k, lower=True, check_finite=False)
    except linalg.LinAlgError as e:
        raise GpError(f"covariance not positive definite after jitter: {e}") from e


def make_model(dataset, hyper, x_offset=None, x_scale=None, y_offset=0.0, y_scale=1.0):
    """Build a GpModel and cache the Cholesky factor of k_γ."""
    d = len(hyper.length_scales)
    if dataset.size and dataset.dim != d:
        raise GpError(f"dataset dimension {dataset.dim} != kernel dimension {d}")
    x_offset = np.zeros(d) if x_offset is None else np.asarray(x_offset, dtype=float)
    x_scale = np.ones(d) if x_scale is None else np.asarray(x_scale, dtype=float)
    xn = (dataset.inputs - x_offset) / x_scale if dataset.size else np.zeros((0, d))
    chol = alpha = None
    if dataset.size:
        yn = (dataset.targets - y_offset) / y_scale
        chol = _factorize(xn, dataset.noise_var / y_scale ** 2, hyper)
        alpha = linalg.cho_solve(chol, yn - hyper.prior_mean, check_finite=False)
    return GpModel(dataset, hyper, x_offset, x_scale, float(y_offset), float(y_scale), xn, chol, alpha)


def normalized_dataset(model):
    return GpDataset(
        model._xn,
        (model.dataset.targets - model.y_offset) / model.y_scale,
        model.noise_var,
    )


# ── Inference ────────────────────────────────────────────────────

def gp_posterior(model, query):
    """Posterior mean and variance at `query` (one point, or rows of points).

    Returns floats for a single point, arrays otherwise. Variance is clamped at 0.
    """
    q = np.asarray(query, dtype=float)
    single = q.ndim <= 1
    q = q.reshape(1, -1) if single else q
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise GpError(f"query dimension {q.shape[-1]} != model dimension {model.dim}")
    qn = model.to_normalized(q)

    if model.dataset.size == 0:
        mean = np.full(qn.shape[0], model.hyper.prior_mean)
        var = np.full(qn.shape[0], model.hyper.signal_var)
    else:
        ks = sq_exp_kernel(qn, model._xn, model.hyper)
        mean = model.hyper.prior_mean + ks @ model._alpha
        v = linalg.cho_solve(model._chol, ks.T, check_finite=False)
        var = model.hyper.signal_var - np.sum(ks * v.T, axis=1)
    var = np.maximum(var, 0.0)

    mean = model.y_offset + model.y_scale * mean
    var = model.y_scale ** 2 * var
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(dataset, hyper):
    """-½ rᵀ k_γ⁻¹ r - ½ log|k_γ| - (n/2) log 2π with r = γ - m."""
    if dataset.size == 0:
        raise GpError("log marginal likelihood needs at least one data point")
    chol = _factorize(dataset.inputs, dataset.noise_var, hyper)
    r = dataset.targets - hyper.prior_mean
    alpha = linalg.cho_solve(chol, r, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(chol[0])))
    return float(-0.5 * r @ alpha - 0.5 * log_det - 0.5 * dataset.size * _LOG_2PI)


# ── Hyperparameter fitting ───────────────────────────────────────

def _log_bounds(dim):
    return np.array(
        [np.log(LENGTH_BOUNDS)] * dim + [np.log(SIGNAL_BOUNDS), np.log(NOISE_BOUNDS)]
    )


def _unpack(p, dim):
    p = np.asarray(p)
    hyper = GpHyperparameters(float(np.exp(p[dim])), tuple(np.exp(p[:dim])), 0.0)
    return hyper, float(np.exp(p[dim + 1]))


def mid_range_hyperparameters(dim):
    """Log-midpoints of the fitting bounds: (hyperparameters, noise variance) in the normalized frame."""
    return _unpack(_log_bounds(dim).mean(axis=1), dim)


def _search_starts(dim, seed, restarts):
    bounds = _log_bounds(dim)
    starts = [bounds.mean(axis=1)]
    if restarts > 1:
        sampler = qmc.Halton(d=dim + 2, scramble=True, seed=seed)
        starts.extend(qmc.scale(sampler.random(restarts - 1), bounds[:, 0], bounds[:, 1]))
    return starts


def start_hyperparameters(dim, seed=0, restarts=config.GP_RESTARTS):
    """The (hyperparameters, noise variance) pairs fit_gp starts its local searches from."""
    return [_unpack(p, dim) for p in _search_starts(dim, seed, restarts)]


def fit_gp(dataset, lower=None, upper=None, seed=0, restarts=config.GP_RESTARTS):
    """Fit kernel hyperparameters and noise by multi-start maximization of the LML.

    Inputs are mapped to the unit box over [lower, upper] (data range when not
    given), targets are standardized. All-identical targets skip the search and
    get floor hyperparameters.
    """
    if dataset.size < 2:
        raise GpError(f"fit_gp needs at least 2 data points, got {dataset.size}")
    dim = dataset.dim
    lo = dataset.inputs.min(axis=0) if lower is None else np.asarray(lower, dtype=float)
    hi = dataset.inputs.max(axis=0) if upper is None else np.asarray(upper, dtype=float)
    x_scale = np.where(hi - lo > 0, hi - lo, 1.0)
    xn = (dataset.inputs - lo) / x_scale

    y_mean = float(np.mean(dataset.targets))
    y_std = float(np.std(dataset.targets))
    if not y_std > 1e-12 * max(1.0, abs(y_mean)):
        hyper = GpHyperparameters(SIGNAL_BOUNDS[0], (LENGTH_BOUNDS[0],) * dim, 0.0)
        log.debug("fit_gp: constant targets, using floor hyperparameters")
        return make_model(GpDataset(dataset.inputs, dataset.targets, NOISE_BOUNDS[0]),
                          hyper, lo, x_scale, y_mean, 1.0)

    yn = (dataset.targets - y_mean) / y_std
    bounds = _log_bounds(dim)

    def neg_lml(p):
        hyper, noise = _unpack(p, dim)
        try:
            return -log_marginal_likelihood(GpDataset(xn, yn, noise), hyper)
        except GpError:
            return 1e12

    best_p, best_val = None, np.inf
    for p0 in _search_starts(dim, seed, restarts):
        val0 = neg_lml(p0)
        if val0 < best_val:
            best_p, best_val = np.array(p0), val0
        res = minimize(neg_lml, p0, method='Powell', bounds=bounds,
                       options={'xtol': 1e-4, 'ftol': 1e-9, 'maxfev': 150 * (dim + 2)})
        p = np.clip(res.x, bounds[:, 0], bounds[:, 1])
        val = neg_lml(p)
        if val < best_val:
            best_p, best_val = p, val

    hyper, noise = _unpack(best_p, dim)
    log.debug(f"fit_gp: n={dataset.size} lml={-best_val:.4f} signal={hyper.signal_var:.3g} noise={noise:.3g}")
    return make_model(GpDataset(dataset.inputs, dataset.targets, noise * y_std ** 2),
                      hyper, lo, x_scale, y_mean, y_std)
