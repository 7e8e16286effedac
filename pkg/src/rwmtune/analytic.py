"""Reference acceptance-rate curves for random walk Metropolis on a normal target.

For a N(0, sigma^2) target and a N(x, s^2) proposal the long-run acceptance
rate is (2/pi) * arctan(2 sigma / s).  ``integral_acceptance`` evaluates the
same quantity from its one-dimensional integral representation, so the two
routes check each other.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.special import expit, ndtr

from .model import StructureError

SQRT_2PI = math.sqrt(2.0 * math.pi)

# logit p_1(s) is fitted against log s on s = e^k, k = -2, -1.5, ..., 4.
LINEARIZATION_GRID = np.exp(np.arange(-2.0, 4.0 + 1e-9, 0.5))

# Grid used for the alternative-target slope experiments.
EMPIRICAL_SLOPE_GRID = 2.0 ** np.arange(-3.0, 4.0)


def logit(p):
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def logit_inverse(z):
    out = expit(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def arctan_acceptance(s, sigma=1.0):
    """Long-run acceptance rate of a scale-``s`` Gaussian random walk on N(0, sigma^2)."""
    s = np.asarray(s, dtype=float)
    out = (2.0 / np.pi) * np.arctan(2.0 * sigma / s)
    return float(out) if out.ndim == 0 else out


def integral_acceptance(s: float) -> float:
    """Acceptance rate for N(0, 1) computed by adaptive quadrature of

        4 * int_0^inf {Phi(x / (1+s)) - Phi(-x (2+s) / (2+s+s^2))} phi(x) dx

    truncated at x = 12, where phi(x) < 1e-31.
    """
    if not s > 0:
        raise ValueError("step size must be positive")
    c1 = 1.0 / (1.0 + s)
    c2 = (2.0 + s) / (2.0 + s + s * s)

    def integrand(x):
        return (ndtr(x * c1) - ndtr(-x * c2)) * math.exp(-0.5 * x * x) / SQRT_2PI

    val, _ = integrate.quad(integrand, 0.0, 12.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 4.0 * val


def closed_form_step(sigma: float, p: float) -> float:
    """Step size giving acceptance ``p`` on a N(0, sigma^2) target."""
    if not 0 < p < 1 or not sigma > 0:
        raise ValueError("need 0 < p < 1 and sigma > 0")
    return 2.0 * sigma / math.tan(0.5 * math.pi * p)


def logit_linearization(s_grid, sigma: float = 1.0) -> tuple[float, float]:
    """Least-squares line through (log s, logit p_sigma(s)); returns (intercept, slope)."""
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if np.unique(s).size < 2:
        raise StructureError("linearization needs at least two distinct step sizes")
    if np.any(s <= 0):
        raise ValueError("step sizes must be positive")
    slope, intercept = np.polyfit(np.log(s), logit(arctan_acceptance(s, sigma)), 1)
    return float(intercept), float(slope)


def _target_log_density(family: str):
    if family == "normal":
        return lambda v: -0.5 * v["x"][0] ** 2
    if family == "exponential":
        return lambda v: -v["x"][0] if v["x"][0] > 0 else -math.inf
    if family == "t2":
        return lambda v: -1.5 * math.log1p(0.5 * v["x"][0] ** 2)
    raise ValueError(f"unknown target family {family!r}")


_START = {"normal": 0.0, "exponential": 1.0, "t2": 0.0}


def empirical_acceptance(family: str, s_grid, attempts: int, src, burn_in: int = 1000):
    """Run a linear-scale random walk on ``family`` at each step size.

    Returns (attempts per size, acceptances per size).
    """
    from .model import TargetModel, linear
    from .sampler import ParameterUpdate

    model = TargetModel(_target_log_density(family), {"x": 1})
    s_grid = np.asarray(s_grid, dtype=float)
    n = np.full(s_grid.size, attempts, dtype=np.int64)
    x = np.zeros(s_grid.size, dtype=np.int64)
    for i, s in enumerate(s_grid):
        param = linear("x", [_START[family]], s)
        upd = ParameterUpdate(param)
        stream = src.substream(f"{family}:{i}")
        values = {"x": param.values}
        for _ in range(burn_in):
            upd.update(model, values, stream)
        upd.reset_counts()
        for _ in range(attempts):
            upd.update(model, values, stream)
        x[i] = upd.acceptances[0]
    return n, x


def empirical_slope(family: str, s_grid=EMPIRICAL_SLOPE_GRID, attempts: int = 20000, src=None) -> float:
    """Free-slope logistic fit of sampler acceptance rates against log step size."""
    from .model import RandomSource
    from .tuner import AcceptanceRecord, fit_full

    src = src if src is not None else RandomSource(0)
    n, x = empirical_acceptance(family, s_grid, attempts, src)
    fit = fit_full(AcceptanceRecord(np.asarray(s_grid, dtype=float), n, x))
    return fit.slope
