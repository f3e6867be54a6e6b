"""Random streams and the univariate distributions used throughout the package.

Every stochastic routine takes its randomness explicitly. A :class:`RandomStream`
is identified by a seed and a derivation path; children are derived with
:meth:`RandomStream.child` so that replication ``r``, iteration ``t`` and so on
get reproducible, non-overlapping substreams regardless of execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError

__all__ = [
    "RandomStream",
    "as_generator",
    "as_stream",
    "PriorSpec",
    "JointPrior",
    "uniform",
    "gaussian",
    "laplace",
    "exponential",
    "spike_slab",
    "sample",
    "log_density",
    "sample_alpha_stable",
    "sample_standardized_t",
    "normal_quantile",
]


@dataclass(frozen=True)
class RandomStream:
    """Seedable, splittable source of randomness backed by a Philox generator.

    Two streams with the same ``(seed, path)`` produce bit-identical draws.
    """

    seed: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer", "seed")
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *index: int) -> "RandomStream":
        return RandomStream(self.seed, self.path + tuple(int(i) for i in index))

    @cached_property
    def gen(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomStream, a numpy Generator or an integer seed."""
    if isinstance(rng, RandomStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng)).gen
    raise TypeError(f"cannot derive a random generator from {type(rng).__name__}")


def as_stream(rng) -> RandomStream:
    """Accept a RandomStream, an integer seed or a Generator (seeded from its next draw)."""
    if isinstance(rng, RandomStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng))
    if isinstance(rng, np.random.Generator):
        return RandomStream(int(rng.integers(0, 2**63)))
    raise TypeError(f"cannot derive a random stream from {type(rng).__name__}")


_KINDS = ("uniform", "gaussian", "laplace", "exponential", "spike_slab")


@dataclass(frozen=True)
class PriorSpec:
    """One-dimensional prior.

    Parameters are stored by name in ``params``; use the constructor helpers
    (:func:`uniform`, :func:`laplace`, ...) rather than building this directly.
    ``spike_slab`` is a mixed measure: an atom of mass ``p`` at exactly 0.0 and
    mass ``1 - p`` spread as Laplace(0, scale).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}", "prior")
        p = dict(self.params)
        finite = all(np.isfinite(v) for v in p.values())
        if not finite:
            raise ConfigurationError("prior hyperparameters must be finite", "prior")
        if self.kind == "uniform" and not p["lo"] < p["hi"]:
            raise ConfigurationError("uniform prior needs lo < hi", "prior")
        if self.kind == "gaussian" and not p["variance"] > 0:
            raise ConfigurationError("gaussian prior needs variance > 0", "prior")
        if self.kind in ("laplace", "exponential", "spike_slab") and not p["scale"] > 0:
            raise ConfigurationError(f"{self.kind} prior needs scale > 0", "prior")
        if self.kind == "spike_slab" and not 0 < p["p"] < 1:
            raise ConfigurationError("spike_slab prior needs 0 < p < 1", "prior")

    def __getattr__(self, name):
        for key, value in object.__getattribute__(self, "params"):
            if key == name:
                return value
        raise AttributeError(name)

    def expectation(self) -> float:
        k = self.kind
        if k == "uniform":
            return 0.5 * (self.lo + self.hi)
        if k == "gaussian":
            return self.mean
        if k == "laplace":
            return self.location
        if k == "exponential":
            return self.scale
        return 0.0

    def sample(self, rng, size=None):
        g = as_generator(rng)
        k = self.kind
        if k == "uniform":
            return g.uniform(self.lo, self.hi, size)
        if k == "gaussian":
            return g.normal(self.mean, math.sqrt(self.variance), size)
        if k == "laplace":
            return g.laplace(self.location, self.scale, size)
        if k == "exponential":
            return g.exponential(self.scale, size)
        slab = g.laplace(0.0, self.scale, size)
        spike = g.random(size) < self.p
        return np.where(spike, 0.0, slab) if size is not None else (0.0 if spike else float(slab))

    def logpdf(self, x):
        """Vectorised log-density (log atom mass at 0 for ``spike_slab``)."""
        x = np.asarray(x, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore", invalid="ignore"):
            if k == "uniform":
                inside = (x >= self.lo) & (x <= self.hi)
                return np.where(inside, -math.log(self.hi - self.lo), -np.inf)
            if k == "gaussian":
                v = self.variance
                return -0.5 * math.log(2 * math.pi * v) - 0.5 * (x - self.mean) ** 2 / v
            if k == "laplace":
                return -math.log(2 * self.scale) - np.abs(x - self.location) / self.scale
            if k == "exponential":
                return np.where(x >= 0, -math.log(self.scale) - x / self.scale, -np.inf)
            slab = math.log1p(-self.p) - math.log(2 * self.scale) - np.abs(x) / self.scale
            return np.where(x == 0.0, math.log(self.p), slab)


def uniform(lo: float, hi: float) -> PriorSpec:
    return PriorSpec("uniform", (("lo", float(lo)), ("hi", float(hi))))


def gaussian(mean: float, variance: float) -> PriorSpec:
    return PriorSpec("gaussian", (("mean", float(mean)), ("variance", float(variance))))


def laplace(location: float, scale: float) -> PriorSpec:
    return PriorSpec("laplace", (("location", float(location)), ("scale", float(scale))))


def exponential(scale: Optional[float] = None, rate: Optional[float] = None) -> PriorSpec:
    """Exponential prior parameterised by its mean (``scale``) or by ``rate``."""
    if (scale is None) == (rate is None):
        raise ConfigurationError("give exactly one of scale or rate", "prior")
    if rate is not None:
        if not rate > 0:
            raise ConfigurationError("exponential prior needs rate > 0", "prior")
        scale = 1.0 / rate
    return PriorSpec("exponential", (("scale", float(scale)),))


def spike_slab(p: float, scale: float) -> PriorSpec:
    return PriorSpec("spike_slab", (("p", float(p)), ("scale", float(scale))))


def sample(prior: PriorSpec, rng) -> float:
    """Draw one value from ``prior``."""
    return float(prior.sample(rng))


def log_density(prior: PriorSpec, x: float) -> tuple[float, bool]:
    """Return ``(log density, is_atom)``; outside the support the value is -inf."""
    is_atom = prior.kind == "spike_slab" and x == 0.0
    return float(prior.logpdf(x)), is_atom


@dataclass(frozen=True)
class JointPrior:
    """Factorised prior over a parameter vector.

    ``constraint`` optionally restricts the support (e.g. the MA(2)
    invertibility triangle). It must be a module-level callable mapping an
    ``(m, d)`` array to a boolean mask so that priors stay picklable. Inside the
    constrained region the density is the product of the component densities
    (unnormalised; only ratios are ever used).
    """

    components: tuple
    names: tuple = ()
    constraint: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        names = tuple(self.names) or tuple(f"theta{i + 1}" for i in range(len(self.components)))
        if len(names) != len(self.components):
            raise ConfigurationError("one name per prior component", "prior")
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return len(self.components)

    def sample(self, n: int, rng) -> np.ndarray:
        g = as_generator(rng)
        out = np.empty((n, self.dim))
        filled = 0
        for _ in range(1000):
            need = n - filled
            if need == 0:
                break
            batch = np.column_stack([c.sample(g, need) for c in self.components])
            if self.constraint is not None:
                batch = batch[self.constraint(batch)]
            out[filled:filled + len(batch)] = batch
            filled += len(batch)
        else:
            raise ConfigurationError("prior constraint rejects almost every draw", "prior")
        return out

    def log_density(self, theta) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        lp = np.zeros(len(theta))
        for j, c in enumerate(self.components):
            lp += c.logpdf(theta[:, j])
        if self.constraint is not None:
            lp = np.where(self.constraint(theta), lp, -np.inf)
        return lp


def sample_alpha_stable(alpha: float, beta: float, rng, size=None):
    """Chambers-Mallows-Stuck draw from S(alpha, beta, 0, 1).

    Uses the S1 parameterisation, under which S(2, .) is N(0, 2).
    """
    if not 1.0 < alpha <= 2.0:
        raise ConfigurationError("alpha must lie in (1, 2]", "alpha")
    if not -1.0 <= beta <= 1.0:
        raise ConfigurationError("beta must lie in [-1, 1]", "beta")
    g = as_generator(rng)
    v = np.pi * (g.random(size) - 0.5)
    w = g.standard_exponential(size)
    t = beta * math.tan(math.pi * alpha / 2)
    b = math.atan(t) / alpha
    s = (1.0 + t * t) ** (1.0 / (2 * alpha))
    x = (
        s
        * np.sin(alpha * (v + b))
        / np.cos(v) ** (1.0 / alpha)
        * (np.cos(v - alpha * (v + b)) / w) ** ((1.0 - alpha) / alpha)
    )
    return x if size is not None else float(x)


def sample_standardized_t(nu: float, rng, size=None):
    """Student-t draw rescaled to unit variance."""
    if not nu > 2:
        raise ConfigurationError("standardised t needs nu > 2", "nu")
    g = as_generator(rng)
    x = g.standard_t(nu, size) * math.sqrt((nu - 2.0) / nu)
    return x if size is not None else float(x)


def normal_quantile(q):
    """Standard normal quantile function."""
    arr = np.asarray(q, dtype=float)
    if np.any(~((arr > 0) & (arr < 1))):
        raise DomainError("normal_quantile needs 0 < q < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out
