"""Joint generalized extreme value block of the k largest order statistics.

The k largest order statistics of a sample from a population with a
generalized Pareto upper tail are, after affine normalization, jointly
distributed as the vector X with

    {(1 + xi * X_j) ** (-1/xi)}_{j=1..k}  ~  {E_1 + ... + E_j}_{j=1..k}

where the E_l are i.i.d. unit exponentials (the xi = 0 forms are the
exponential limits).  This module provides exact sampling, the log density
of the affine family Y = eta * (X + kappa * e), and closed-form moments of
the X_j via the gamma representation Gamma_j ~ Gamma(j, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, polygamma, psi

from .errors import InvalidArgument, MomentUndefined

# |xi| below this routes to the exact Gumbel (xi = 0) branch; the generic
# power forms lose precision near zero shape.
XI_ZERO_TOL = 1e-6

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TailParams:
    """Location ``kappa``, scale ``eta`` > 0 and shape ``xi`` of one tail."""

    kappa: float
    eta: float
    xi: float

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0.0):
            raise InvalidArgument(f"tail scale must be positive and finite, got {self.eta!r}")
        if not (math.isfinite(self.kappa) and math.isfinite(self.xi)):
            raise InvalidArgument("tail location and shape must be finite")

    def astuple(self) -> tuple[float, float, float]:
        return (self.kappa, self.eta, self.xi)


def _gamma_to_x(g: np.ndarray, xi: float) -> np.ndarray:
    """Map partial exponential sums to GEV order-statistic coordinates."""
    if abs(xi) < XI_ZERO_TOL:
        return -np.log(g)
    return np.expm1(-xi * np.log(g)) / xi


def sample_joint_tail(k: int, xi: float, rng: np.random.Generator, size: int | None = None):
    """Draw the k-vector X (weakly decreasing) of the joint GEV block.

    With ``size`` given, returns a ``(size, k)`` array of independent draws.
    Consumes ``rng.standard_exponential`` once with the full output shape.
    """
    if k < 1:
        raise InvalidArgument("tail block size k must be at least 1")
    shape = (k,) if size is None else (int(size), k)
    gamma = np.cumsum(rng.standard_exponential(shape), axis=-1)
    return _gamma_to_x(gamma, xi)


def order_stat_moment(j: int, xi: float, order: int) -> float:
    """Exact E[X_j ** order] via Gamma_j ~ Gamma(j, 1), for order in {1, 2}."""
    if j < 1 or int(j) != j:
        raise InvalidArgument("order statistic index j must be a positive integer")
    if order not in (1, 2):
        raise InvalidArgument("only first and second moments are supported")
    if order * xi >= j:
        raise MomentUndefined(f"E[X_{j}^{order}] does not exist for xi={xi}")
    if abs(xi) < XI_ZERO_TOL:
        if order == 1:
            return float(-psi(j))
        return float(polygamma(1, j) + psi(j) ** 2)
    g1 = math.exp(gammaln(j - xi) - gammaln(j))
    if order == 1:
        return (g1 - 1.0) / xi
    g2 = math.exp(gammaln(j - 2.0 * xi) - gammaln(j))
    return (g2 - 2.0 * g1 + 1.0) / xi ** 2


def order_stat_moment_vectors(n: int, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of X_1..X_n as arrays (vectorized)."""
    if n < 1:
        raise InvalidArgument("need at least one order statistic")
    if 2.0 * xi >= 1.0:
        raise MomentUndefined(f"E[X_1^2] does not exist for xi={xi}")
    idx = np.arange(1, n + 1, dtype=float)
    if abs(xi) < XI_ZERO_TOL:
        m1 = -psi(idx)
        m2 = polygamma(1, idx) + psi(idx) ** 2
        return m1, m2
    lg = gammaln(idx)
    g1 = np.exp(gammaln(idx - xi) - lg)
    g2 = np.exp(gammaln(idx - 2.0 * xi) - lg)
    return (g1 - 1.0) / xi, (g2 - 2.0 * g1 + 1.0) / xi ** 2


def log_tail_density(y, theta: TailParams):
    """Log density of Y = eta * (X + kappa e); -inf outside the support.

    Accepts a single k-vector or an ``(..., k)`` batch.  Inputs that are not
    weakly decreasing are outside the support and return -inf.
    """
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 1
    ya = y[None, :] if scalar else y
    k = ya.shape[-1]
    x = ya / theta.eta - theta.kappa
    ordered = np.all(x[..., :-1] >= x[..., 1:], axis=-1)
    out = np.full(ya.shape[:-1], -np.inf)
    xi = theta.xi
    if abs(xi) < XI_ZERO_TOL:
        with np.errstate(over="ignore"):
            val = -k * math.log(theta.eta) - np.exp(-x[..., -1]) - x.sum(axis=-1)
        ok = ordered
    else:
        t = 1.0 + xi * x
        ok = ordered & (t[..., 0] > 0.0) & (t[..., -1] > 0.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            logt = np.log(np.where(t > 0.0, t, 1.0))
            val = (
                -k * math.log(theta.eta)
                - np.exp(-logt[..., -1] / xi)
                - (1.0 + 1.0 / xi) * logt.sum(axis=-1)
            )
    out[ok] = val[ok]
    return float(out[0]) if scalar else out


def tail_density(y, theta: TailParams):
    """Density of the affine GEV block; 0 outside the support."""
    return np.exp(log_tail_density(y, theta))


def log_tail_density_multi(y: np.ndarray, kappa: np.ndarray, eta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Log tail density of each row of ``y`` (m, k) under each parameter triple.

    Returns an (m, a) array for parameter vectors of length a.  Rows are
    assumed weakly decreasing (the caller's sampling guarantees it).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    kappa = np.asarray(kappa, dtype=float)
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    k = y.shape[-1]
    x = y[:, None, :] / eta[None, :, None] - kappa[None, :, None]  # (m, a, k)
    xib = xi[None, :, None]
    near0 = np.abs(xi) < XI_ZERO_TOL
    t = 1.0 + xib * x
    ok = (t[..., 0] > 0.0) & (t[..., -1] > 0.0) | near0[None, :]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        logt = np.log(np.where(t > 0.0, t, 1.0))
        safe_xi = np.where(near0, 1.0, xi)[None, :]
        gen = -np.exp(-logt[..., -1] / safe_xi) - (1.0 + 1.0 / safe_xi) * logt.sum(axis=-1)
        gmb = -np.exp(-x[..., -1]) - x.sum(axis=-1)
    val = np.where(near0[None, :], gmb, gen) - k * np.log(eta)[None, :]
    return np.where(ok, val, -np.inf)
