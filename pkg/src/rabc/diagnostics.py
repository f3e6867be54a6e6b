"""Misspecification diagnostics and Monte Carlo benchmark metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .abc import simulate_summaries
from .distributions import as_generator, as_stream
from .errors import ConfigurationError, DomainError

PERM_CHUNK = 200


def randomization_location_test(
    posterior_draws,
    prior_sampler: Callable,
    n_prior: int | None = None,
    n_perm: int = 999,
    rng=0,
) -> float:
    """Two-sample permutation test of equal means, posterior vs prior.

    ``prior_sampler(n, gen)`` returns ``n`` prior draws. The statistic is the
    absolute difference of group means and the p-value carries the add-one
    correction, so it is never exactly zero.
    """
    post = np.asarray(posterior_draws, dtype=float).ravel()
    if post.size == 0:
        raise DomainError("posterior sample is empty")
    if n_perm < 999:
        raise ConfigurationError("use at least 999 permutations", "n_perm")
    n_prior = post.size if n_prior is None else int(n_prior)
    if n_prior < 1:
        raise DomainError("prior sample is empty")
    stream = as_stream(rng)
    prior = np.asarray(prior_sampler(n_prior, stream.child(0).gen), dtype=float).ravel()
    return permutation_pvalue(post, prior, n_perm, stream.child(1).gen)


def permutation_pvalue(a, b, n_perm: int, gen) -> float:
    """Add-one p-value of ``|mean(a) - mean(b)|`` under random relabelling."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    pooled = np.concatenate([a, b])
    na = a.size
    obs = abs(a.mean() - b.mean())
    total = pooled.sum()
    hits = 0
    gen = as_generator(gen)
    for start in range(0, n_perm, PERM_CHUNK):
        k = min(PERM_CHUNK, n_perm - start)
        perm = gen.permuted(np.broadcast_to(pooled, (k, pooled.size)), axis=1)
        sa = perm[:, :na].sum(axis=1)
        stat = np.abs(sa / na - (total - sa) / b.size)
        # relative slack absorbs summation-order rounding for tied statistics
        hits += int(np.count_nonzero(stat >= obs - 1e-12 * max(1.0, abs(obs))))
    return (1 + hits) / (n_perm + 1)


@dataclass
class PredictiveCheck:
    summaries: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    inside: np.ndarray
    band: tuple


def posterior_predictive_summaries(
    theta_draws,
    simulator,
    summary_map,
    n_draws_used: int,
    rng,
    y_summary=None,
    band: Sequence[float] = (0.005, 0.995),
) -> PredictiveCheck:
    """Summaries of one fresh dataset per randomly chosen posterior draw.

    ``inside[j]`` says whether observed summary j lies in the predictive
    ``band`` (NaN-free rows only; all True when ``y_summary`` is omitted).
    """
    theta = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    if len(theta) == 0:
        raise DomainError("no posterior draws supplied")
    gen = as_generator(rng)
    rows = gen.integers(0, len(theta), n_draws_used)
    eta = simulate_summaries(theta[rows], simulator, summary_map, gen)
    finite = eta[np.all(np.isfinite(eta), axis=1)]
    lo, hi = np.quantile(finite, list(band), axis=0)
    if y_summary is None:
        inside = np.ones(eta.shape[1], dtype=bool)
    else:
        y = np.asarray(y_summary, dtype=float)
        inside = (y >= lo) & (y <= hi)
    return PredictiveCheck(eta, lo, hi, inside, tuple(band))


@dataclass
class ProbeTable:
    theta: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    labels: tuple = ()


def partition_probe(prior, simulator, summary_map, n_param_draws: int, n_reps: int, rng) -> ProbeTable:
    """Per prior draw, the mean and std of each summary over ``n_reps`` datasets."""
    if n_reps < 2:
        raise ConfigurationError("need at least two replicate datasets per draw", "n_reps")
    gen = as_generator(rng)
    theta = prior.sample(n_param_draws, gen)
    eta = simulate_summaries(np.repeat(theta, n_reps, axis=0), simulator, summary_map, gen)
    eta = eta.reshape(n_param_draws, n_reps, -1)
    return ProbeTable(
        theta=theta,
        mean=eta.mean(axis=1),
        std=eta.std(axis=1, ddof=1),
        labels=tuple(getattr(summary_map, "labels", ())),
    )


@dataclass
class McMetrics:
    coverage: float
    bias: float
    avg_posterior_std: float
    intervals: np.ndarray


def mc_metrics(replication_posteriors: Sequence, theta_star, level: float = 0.95) -> list:
    """Coverage (%), bias and average posterior std for every parameter."""
    if len(replication_posteriors) < 2:
        raise ConfigurationError("need at least two replications", "replications")
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)", "level")
    star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    tail = (1.0 - level) / 2
    out = []
    for j, ts in enumerate(star):
        cols = [np.atleast_2d(np.asarray(p, dtype=float).reshape(len(p), -1))[:, j] for p in replication_posteriors]
        iv = np.array([np.quantile(c, [tail, 1.0 - tail]) for c in cols])
        hit = (iv[:, 0] <= ts) & (ts <= iv[:, 1])
        out.append(
            McMetrics(
                coverage=100.0 * float(hit.mean()),
                bias=float(np.mean([c.mean() - ts for c in cols])),
                avg_posterior_std=float(np.mean([c.std() for c in cols])),
                intervals=iv,
            )
        )
    return out
