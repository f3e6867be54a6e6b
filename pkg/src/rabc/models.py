"""Data-generating processes and their probability-limit oracles.

Each model has a batch simulator ``simulate(theta, gen, n=...)`` that maps an
``(m, d)`` parameter matrix to an ``(m, n)`` array of datasets. The samplers
only ever talk to this batch form; the single-dataset helpers below wrap it so
both paths consume randomness identically.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, signal, special, stats
from scipy.stats import qmc

from . import distributions as dist
from .distributions import JointPrior, as_generator
from .errors import ConfigurationError, DomainError, EstimationError

# --------------------------------------------------------------------------
# parameter containers


@dataclass(frozen=True)
class GkParams:
    a: float
    b: float
    g: float
    k: float

    def __post_init__(self):
        if not self.b > 0:
            raise ConfigurationError("g-and-k scale b must be positive", "b")
        if not self.k > -0.5:
            raise ConfigurationError("g-and-k kurtosis k must exceed -0.5", "k")

    def as_array(self):
        return np.array([self.a, self.b, self.g, self.k])


@dataclass(frozen=True)
class MixtureParams:
    w: float
    mu1: float
    mu2: float
    var1: float
    var2: float

    def __post_init__(self):
        if not 0 <= self.w <= 1:
            raise ConfigurationError("mixture weight must lie in [0, 1]", "w")
        if not (self.var1 > 0 and self.var2 > 0):
            raise ConfigurationError("mixture variances must be positive", "var")


@dataclass(frozen=True)
class SvParams:
    omega: float
    rho: float
    sigma_v: float

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigurationError("SV persistence rho must lie in (0, 1)", "rho")
        if not 0 < self.sigma_v < 1:
            raise ConfigurationError("SV sigma_v must lie in (0, 1)", "sigma_v")


@dataclass(frozen=True)
class StableSvParams:
    theta2: float
    theta3: float
    theta4: float

    def __post_init__(self):
        if not 0 < self.theta2 < 1:
            raise ConfigurationError("persistence theta2 must lie in (0, 1)", "theta2")
        if not self.theta3 > 0:
            raise ConfigurationError("volatility of volatility theta3 must be positive", "theta3")
        if not 1 < self.theta4 <= 2:
            raise ConfigurationError("tail index theta4 must lie in (1, 2]", "theta4")

    def as_array(self):
        return np.array([self.theta2, self.theta3, self.theta4])


# --------------------------------------------------------------------------
# batch simulators: theta (m, d) -> data (m, n)


def simulate_normal_location_batch(theta, gen, n, sigma=1.0):
    theta = np.asarray(theta, dtype=float).reshape(-1, 1)
    return theta + sigma * gen.standard_normal((len(theta), n))


def gk_transform(z, a, b, g, k):
    """g-and-k quantile expressed through standard normal quantiles ``z``."""
    return a + b * (1.0 + 0.8 * np.tanh(0.5 * g * z)) * (1.0 + z * z) ** k * z


def simulate_gk_batch(theta, gen, n):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    z = special.ndtri(gen.random((len(theta), n)))
    a, b, g, k = (theta[:, j:j + 1] for j in range(4))
    return gk_transform(z, a, b, g, k)


def ma2_invertible(theta) -> np.ndarray:
    theta = np.atleast_2d(theta)
    t1, t2 = theta[:, 0], theta[:, 1]
    return (t1 > -2) & (t1 < 2) & (t1 + t2 > -1) & (t1 - t2 < 1)


def simulate_ma2_batch(theta, gen, n):
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    e = gen.standard_normal((len(theta), n + 2))
    return e[:, 2:] + theta[:, :1] * e[:, 1:-1] + theta[:, 1:2] * e[:, :-2]


def _stable_from_uniforms(alpha, v, w):
    # symmetric CMS transform; alpha may broadcast against v and w
    return np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha) * (
        np.cos((1.0 - alpha) * v) / w
    ) ** ((1.0 - alpha) / alpha)


def simulate_stable_sv_batch(theta, gen, n):
    """Alpha-stable SV with theta columns (persistence, vol-of-vol, tail index)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    m = len(theta)
    rho, sig, alpha = theta[:, 0], theta[:, 1], theta[:, 2:3]
    nu = gen.standard_normal((m, n))
    h = np.empty((m, n))
    h[:, 0] = nu[:, 0] * sig / np.sqrt(1.0 - rho * rho)
    shock = sig[:, None] * nu
    for t in range(1, n):
        h[:, t] = rho * h[:, t - 1] + shock[:, t]
    v = np.pi * (gen.random((m, n)) - 0.5)
    w = gen.standard_exponential((m, n))
    return np.exp(0.5 * h) * _stable_from_uniforms(alpha, v, w)


# --------------------------------------------------------------------------
# single-dataset operations


def simulate_normal_location(theta: float, sigma: float, n: int, rng) -> np.ndarray:
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive", "sigma")
    if n < 1:
        raise ConfigurationError("n must be at least 1", "n")
    return simulate_normal_location_batch([theta], as_generator(rng), n, sigma)[0]


def simulate_gaussian_mixture(p: MixtureParams, n: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    first = gen.random(n) < p.w
    z = gen.standard_normal(n)
    return np.where(first, p.mu1 + math.sqrt(p.var1) * z, p.mu2 + math.sqrt(p.var2) * z)


def gk_quantile(q, p: GkParams):
    q_arr = np.asarray(q, dtype=float)
    if np.any(~((q_arr > 0) & (q_arr < 1))):
        raise DomainError("gk_quantile needs 0 < q < 1")
    out = gk_transform(special.ndtri(q_arr), p.a, p.b, p.g, p.k)
    return float(out) if out.ndim == 0 else out


def simulate_gk(p: GkParams, n: int, rng) -> np.ndarray:
    return simulate_gk_batch(p.as_array()[None, :], as_generator(rng), n)[0]


def simulate_ma2(theta1: float, theta2: float, n: int, rng) -> np.ndarray:
    if not ma2_invertible(np.array([[theta1, theta2]]))[0]:
        raise ConfigurationError("MA(2) parameters outside the invertibility triangle", "theta")
    return simulate_ma2_batch([[theta1, theta2]], as_generator(rng), n)[0]


def simulate_sv(p: SvParams, n: int, rng) -> np.ndarray:
    gen = as_generator(rng)
    mean = p.omega / (1.0 - p.rho)
    sd = p.sigma_v / math.sqrt(1.0 - p.rho**2)
    h1 = mean + sd * gen.standard_normal()
    drive = p.omega + p.sigma_v * gen.standard_normal(n - 1)
    rest = signal.lfilter([1.0], [1.0, -p.rho], drive, zi=[p.rho * h1])[0]
    h = np.concatenate([[h1], rest])
    return np.exp(0.5 * h) * gen.standard_normal(n)


def simulate_stable_sv(p: StableSvParams, n: int, rng) -> np.ndarray:
    return simulate_stable_sv_batch(p.as_array()[None, :], as_generator(rng), n)[0]


def ma2_limit_summaries(theta1: float, theta2: float) -> np.ndarray:
    return np.array([1.0 + theta1**2 + theta2**2, theta1 * (1.0 + theta2), theta2])


def sv_limit_summary(p: SvParams) -> np.ndarray:
    level = math.exp(p.omega / (1.0 - p.rho) + 0.5 * p.sigma_v**2 / (1.0 - p.rho**2))
    return np.array([level, 0.0, 0.0])


# --------------------------------------------------------------------------
# g-and-k pseudo-true value under a Gaussian-mixture truth

GK_QUANTILE_LEVELS = (0.25, 0.5, 0.75, 0.125, 0.375, 0.625, 0.875)


def robust_summaries_from_quantiles(quantile: Callable[[float], float]) -> np.ndarray:
    """The four robust g-and-k summaries computed from a quantile function."""
    l1, l2, l3, e1, e3, e5, e7 = (quantile(q) for q in GK_QUANTILE_LEVELS)
    s2 = l3 - l1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.array([l2, s2, (l3 + l1 - 2 * l2) / s2, (e7 - e5 + e3 - e1) / s2])


def mixture_cdf(x, mix: MixtureParams):
    return mix.w * stats.norm.cdf(x, mix.mu1, math.sqrt(mix.var1)) + (1 - mix.w) * stats.norm.cdf(
        x, mix.mu2, math.sqrt(mix.var2)
    )


def mixture_quantile(q: float, mix: MixtureParams, tol: float = 1e-10) -> float:
    """Invert the mixture CDF by bisection on a bracket that always contains it."""
    spread = 10.0 * math.sqrt(max(mix.var1, mix.var2))
    lo = min(mix.mu1, mix.mu2) - spread
    hi = max(mix.mu1, mix.mu2) + spread
    return optimize.bisect(lambda x: mixture_cdf(x, mix) - q, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def gk_limit_summaries(theta) -> np.ndarray:
    a, b, g, k = theta
    return robust_summaries_from_quantiles(lambda q: gk_transform(special.ndtri(q), a, b, g, k))


GK_BOX = (0.0, 10.0)


def gk_pseudo_true_objective(theta, b0) -> float:
    return float(np.linalg.norm(gk_limit_summaries(theta) - b0))


def gk_pseudo_true(
    mix: MixtureParams, restarts: int = 20, tol: float = 1e-8, starts=None, return_details=False
):
    """Box-constrained minimiser of ``||b(theta) - b0||`` over [0, 10]^4.

    Nelder-Mead from a fixed Latin-hypercube design of ``restarts`` starting
    points; the best converged run wins.
    """
    b0 = robust_summaries_from_quantiles(lambda q: mixture_quantile(q, mix))
    lo, hi = GK_BOX
    if starts is None:
        design = qmc.LatinHypercube(d=4, seed=20240601).random(restarts)
        starts = lo + (hi - lo) * design
    bounds = [(lo, hi)] * 4
    best = None
    for x0 in np.asarray(starts, dtype=float):
        res = optimize.minimize(
            gk_pseudo_true_objective,
            x0,
            args=(b0,),
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": tol, "fatol": tol, "maxiter": 20000, "maxfev": 40000},
        )
        if not res.success:
            continue
        # rounding keeps the winner independent of start order on near-ties
        if best is None or round(res.fun, 12) < round(best.fun, 12) or (
            round(res.fun, 12) == round(best.fun, 12) and tuple(res.x.round(6)) < tuple(best.x.round(6))
        ):
            best = res
    if best is None:
        raise EstimationError("pseudo-true search failed from every start", best=None)
    theta = np.clip(best.x, lo, hi)
    out = GkParams(*theta)
    if return_details:
        return out, {"b0": b0, "residual": best.fun, "b_theta": gk_limit_summaries(theta)}
    return out


# --------------------------------------------------------------------------
# model registry used by the samplers


@dataclass(frozen=True)
class Model:
    """A parametric simulator together with its prior."""

    name: str
    prior: JointPrior
    simulate: Callable

    @property
    def param_names(self):
        return self.prior.names

    def simulator(self, n: int, **fixed) -> Callable:
        return functools.partial(self.simulate, n=n, **fixed)


def normal_location_model(prior_variance: float = 25.0) -> Model:
    prior = JointPrior((dist.gaussian(0.0, prior_variance),), names=("theta",))
    return Model("normal", prior, simulate_normal_location_batch)


def gk_model() -> Model:
    prior = JointPrior(tuple(dist.uniform(*GK_BOX) for _ in range(4)), names=("a", "b", "g", "k"))
    return Model("gk", prior, simulate_gk_batch)


def ma2_model() -> Model:
    prior = JointPrior(
        (dist.uniform(-2.0, 2.0), dist.uniform(-1.0, 1.0)),
        names=("theta1", "theta2"),
        constraint=ma2_invertible,
    )
    return Model("ma2", prior, simulate_ma2_batch)


def stable_sv_model() -> Model:
    prior = JointPrior(
        (dist.uniform(0.7, 1.0), dist.uniform(0.01, 1.0), dist.uniform(1.0, 2.0)),
        names=("theta2", "theta3", "theta4"),
    )
    return Model("stable-sv", prior, simulate_stable_sv_batch)


MODELS = {
    "normal": normal_location_model,
    "gk": gk_model,
    "ma2": ma2_model,
    "stable-sv": stable_sv_model,
}
