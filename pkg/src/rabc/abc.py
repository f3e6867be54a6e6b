"""Rejection ABC, Euclidean distances, kernel weights and regression adjustment.

A simulator is any callable ``simulator(theta, gen)`` mapping an ``(m, d)``
parameter matrix and a numpy Generator to an ``(m, n)`` array of datasets;
summary maps turn that into ``(m, d_eta)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .distributions import as_generator
from .errors import AdjustmentError, ConfigurationError, RunError

log = logging.getLogger(__name__)

# Rows per simulator call; fixed so results never depend on how work is split.
SIM_CHUNK = 2000
MAX_FAILURE_FRACTION = 0.10
RIDGE = 1e-10


@dataclass(frozen=True)
class Particle:
    theta: np.ndarray
    d2: float
    gamma: Optional[np.ndarray] = None
    d1: Optional[float] = None
    summary: Optional[np.ndarray] = None


@dataclass
class ParticleSet:
    """Population of particles stored column-wise.

    ``d2`` is the primary selection distance, ``d1`` the step-one distance on
    the psi summaries when present. ``summaries`` caches the full simulated
    summary vector of every particle.
    """

    theta: np.ndarray
    d2: np.ndarray
    epsilon: float
    gamma: Optional[np.ndarray] = None
    d1: Optional[np.ndarray] = None
    summaries: Optional[np.ndarray] = None
    sorted: bool = False
    trace: list = field(default_factory=list)
    warning: Optional[str] = None

    def __len__(self):
        return len(self.theta)

    def __getitem__(self, i) -> Particle:
        return Particle(
            theta=self.theta[i],
            d2=float(self.d2[i]),
            gamma=None if self.gamma is None else self.gamma[i],
            d1=None if self.d1 is None else float(self.d1[i]),
            summary=None if self.summaries is None else self.summaries[i],
        )

    def take(self, idx) -> "ParticleSet":
        """Subset (or resample) the rows listed in ``idx``."""
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return replace(
            self,
            theta=self.theta[idx],
            d2=self.d2[idx],
            gamma=pick(self.gamma),
            d1=pick(self.d1),
            summaries=pick(self.summaries),
            sorted=False,
            trace=list(self.trace),
        )


def distance(a, b, weights=None) -> float:
    """Weighted Euclidean distance ``sqrt(sum w_i (a_i - b_i)^2)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"summary lengths differ: {a.shape} vs {b.shape}", "summary")
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != a.shape:
        raise ConfigurationError("weights must match the summary length", "weights")
    return float(np.sqrt(np.sum(w * (a - b) ** 2)))


def distances(z, y, weights=None) -> np.ndarray:
    """Row-wise version of :func:`distance` for a ``(m, d)`` summary matrix."""
    diff = np.atleast_2d(z) - np.asarray(y, dtype=float)
    sq = diff * diff if weights is None else np.asarray(weights, dtype=float) * diff * diff
    return np.sqrt(sq.sum(axis=1))


def simulate_summaries(theta, simulator, summary_map, gen) -> np.ndarray:
    """Simulate one dataset per row of ``theta`` and summarise it, in fixed chunks."""
    theta = np.atleast_2d(theta)
    out = []
    for start in range(0, len(theta), SIM_CHUNK):
        data = simulator(theta[start:start + SIM_CHUNK], gen)
        with np.errstate(all="ignore"):
            out.append(np.atleast_2d(summary_map(data)))
    if not out:
        return np.empty((0, summary_map.dim if hasattr(summary_map, "dim") else 0))
    return np.concatenate(out, axis=0)


def rejection_abc(
    prior,
    simulator,
    summary_map,
    y_summary,
    N: int,
    retain_fraction: float,
    rng,
    coords: Optional[Sequence[int]] = None,
    weights=None,
    epsilon: Optional[float] = None,
) -> ParticleSet:
    """Reference-table rejection ABC.

    Draws ``N`` parameters from the prior, simulates once per draw and keeps
    the ``floor(retain_fraction * N)`` closest (ties go to the earlier draw).
    ``coords`` restricts the distance to a subset of the summaries. Passing
    ``epsilon`` switches to fixed-tolerance acceptance instead.
    """
    if N < 100:
        raise ConfigurationError("rejection ABC needs N >= 100", "N")
    if not 0 < retain_fraction <= 1:
        raise ConfigurationError("retain_fraction must lie in (0, 1]", "retain_fraction")
    gen = as_generator(rng)
    y = np.asarray(y_summary, dtype=float)
    idx = list(range(len(y))) if coords is None else list(coords)

    theta = prior.sample(N, gen)
    eta = simulate_summaries(theta, simulator, summary_map, gen)
    d = distances(eta[:, idx], y[idx], weights)
    ok = np.isfinite(d)
    failed = int(N - ok.sum())
    if failed:
        log.warning("rejection ABC: %d of %d simulations gave undefined summaries", failed, N)
    if failed > MAX_FAILURE_FRACTION * N:
        raise RunError(f"{failed} of {N} simulations failed (more than 10%)")
    good = np.flatnonzero(ok)

    if epsilon is not None:
        keep = good[d[good] <= epsilon]
        keep = keep[np.argsort(d[keep], kind="stable")]
        eps = float(epsilon)
    else:
        k = int(np.floor(retain_fraction * N))
        k = max(1, min(k, len(good)))
        order = good[np.argsort(d[good], kind="stable")]
        keep = order[:k]
        eps = float(d[keep[-1]])
    if len(keep) == 0:
        raise RunError("no draw fell within the fixed tolerance")
    return ParticleSet(
        theta=theta[keep],
        d2=d[keep],
        epsilon=eps,
        summaries=eta[keep],
        sorted=True,
    )


def epanechnikov_weight(t, epsilon: float):
    """Unnormalised Epanechnikov kernel ``(1 - (t/eps)^2) / eps`` on ``[0, eps]``."""
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive", "epsilon")
    t = np.asarray(t, dtype=float)
    w = np.where(t <= epsilon, (1.0 - (t / epsilon) ** 2) / epsilon, 0.0)
    return float(w) if w.ndim == 0 else w


def regression_adjust(particles: ParticleSet, y_summary, coords: Optional[Sequence[int]] = None) -> ParticleSet:
    """Local-linear regression adjustment of the particle parameters.

    Fits ``theta = b0 + b1' eta(z)`` by weighted least squares with
    Epanechnikov weights on ``d2`` and replaces each theta by
    ``b1' eta(y) + theta - b1' eta(z)``.
    """
    if particles.summaries is None:
        raise AdjustmentError("particles carry no cached summaries")
    y = np.asarray(y_summary, dtype=float)
    eta = particles.summaries
    if coords is not None:
        eta, y = eta[:, list(coords)], y[list(coords)]
    w = epanechnikov_weight(particles.d2, particles.epsilon)
    w = np.atleast_1d(w)
    p = eta.shape[1] + 1
    if np.count_nonzero(w) < p + 1:
        raise AdjustmentError(f"need at least {p + 1} particles with positive kernel weight")
    if np.all(eta == y):
        # the residual shift is zero whatever the slope, so nothing to fit
        return particles.take(np.arange(len(particles)))
    # centring the regressors at eta(y) makes the adjustment a pure residual shift
    X = np.column_stack([np.ones(len(eta)), eta - y])
    Xw = X * w[:, None]
    gram = X.T @ Xw
    sw = np.sqrt(w)[:, None] * X
    if np.linalg.matrix_rank(sw) < p:
        raise AdjustmentError("weighted design matrix is rank deficient")
    coef = np.linalg.solve(gram + RIDGE * np.eye(p), Xw.T @ particles.theta)
    adjusted = particles.theta - (eta - y) @ coef[1:]
    out = particles.take(np.arange(len(particles)))
    out.theta = adjusted
    out.sorted = particles.sorted
    return out
