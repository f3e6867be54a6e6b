"""Gaussian synthetic likelihood and its robust mean/variance adjusted variants.

The sampler is a random-walk Metropolis-Hastings chain on (theta, Gamma). The
likelihood is re-estimated from ``m`` fresh simulations at every proposal, so
the chain targets the usual noisy synthetic-likelihood posterior.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abc import simulate_summaries
from .distributions import JointPrior, as_stream, exponential, laplace
from .errors import ConfigurationError

log = logging.getLogger(__name__)

VARIANTS = ("plain", "mean_adjust", "variance_adjust")
JITTER = 1e-8
PILOT_DRAWS = 200


@dataclass(frozen=True)
class SyntheticMoments:
    mean: np.ndarray
    cov: np.ndarray
    m: int


def moments_from_summaries(eta) -> SyntheticMoments:
    """Sample mean and 1/m covariance of an ``(m, d)`` summary matrix."""
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    m = len(eta)
    mean = eta.mean(axis=0)
    c = eta - mean
    cov = c.T @ c / m
    cov = 0.5 * (cov + cov.T)
    return SyntheticMoments(mean, cov, m)


def estimate_moments(theta, simulator, summary_map, m: int, rng) -> SyntheticMoments:
    """Simulate ``m`` datasets at ``theta`` and return their summary moments."""
    theta = np.asarray(theta, dtype=float).ravel()
    gen = as_stream(rng).gen if not isinstance(rng, np.random.Generator) else rng
    eta = simulate_summaries(np.tile(theta, (m, 1)), simulator, summary_map, gen)
    if m < eta.shape[1] + 2:
        raise ConfigurationError(f"need m >= d_eta + 2 = {eta.shape[1] + 2}", "m")
    return moments_from_summaries(eta)


def _gauss_logpdf(y, mean, cov) -> float:
    d = len(y)
    scale = np.trace(cov) / d if np.all(np.isfinite(cov)) else np.nan
    if not scale > 0:
        return -np.inf
    for jitter in (0.0, JITTER * scale):
        try:
            L = np.linalg.cholesky(cov + jitter * np.eye(d))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        return -np.inf
    r = np.linalg.solve(L, y - mean)
    return float(-0.5 * d * math.log(2 * math.pi) - np.log(np.diag(L)).sum() - 0.5 * r @ r)


def rbsl_loglik(y_summary, moments: SyntheticMoments, gamma=None, variant: str = "plain") -> float:
    """Synthetic log-likelihood of the observed summaries.

    ``mean_adjust`` shifts the mean by ``sd * gamma``; ``variance_adjust``
    adds ``D diag(gamma) D`` to the covariance, where ``D`` holds the
    componentwise standard deviations, i.e. inflates variance j by a factor
    ``1 + gamma_j``.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}", "variant")
    y = np.asarray(y_summary, dtype=float)
    if not np.all(np.isfinite(moments.mean)):
        return -np.inf
    mean, cov = moments.mean, moments.cov
    if variant != "plain":
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != y.shape:
            raise ConfigurationError("gamma must have one entry per summary", "gamma")
        sd = np.sqrt(np.diag(cov))
        if variant == "mean_adjust":
            mean = mean + sd * gamma
        else:
            if np.any(gamma < 0):
                raise ConfigurationError("variance adjustment needs gamma >= 0", "gamma")
            cov = cov + np.diag(gamma * sd**2)
    return _gauss_logpdf(y, mean, cov)


def default_gamma_prior(variant: str, d: int) -> Optional[JointPrior]:
    """Laplace(0, 0.5) for the mean variant, exponential with scale 0.5 for the variance variant."""
    if variant == "mean_adjust":
        return JointPrior(tuple(laplace(0.0, 0.5) for _ in range(d)))
    if variant == "variance_adjust":
        return JointPrior(tuple(exponential(scale=0.5) for _ in range(d)))
    return None


_PILOT_GRID = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


def _pilot_start(variant, theta_prior, gamma_prior, simulator, summary_map, y, m, stream, u0, to_gamma):
    """Best (theta, Gamma) among prior draws, profiling Gamma on a coarse grid.

    Each candidate theta gets one moment estimate; Gamma is then chosen by two
    rounds of coordinate ascent over prior-scaled grid values. The chain
    starts from the candidate with the highest estimated log posterior.
    """
    cands = theta_prior.sample(PILOT_DRAWS, stream.gen)
    lp_theta = theta_prior.log_density(cands)
    best, best_score, best_u = cands[0], -np.inf, u0
    d = len(y)
    if variant == "plain":
        grids = []
    else:
        scales = np.array([c.scale for c in gamma_prior.components])
        grid = np.array(_PILOT_GRID)
        if variant == "mean_adjust":
            grid = np.concatenate([-grid[:0:-1], grid])
        grids = [grid * s for s in scales]
    for k, th in enumerate(cands):
        if not np.isfinite(lp_theta[k]):
            continue
        mom = estimate_moments(th, simulator, summary_map, m, stream.child(k).gen)
        g = np.zeros(d) if variant == "mean_adjust" else np.array(to_gamma(u0), dtype=float)

        def score(gv):
            extra = 0.0 if variant == "plain" else float(gamma_prior.log_density(gv[None, :])[0])
            return rbsl_loglik(y, mom, gv if variant != "plain" else None, variant) + extra

        cur = score(g)
        for _ in range(2 if grids else 0):
            for j in range(d):
                for val in grids[j]:
                    trial = g.copy()
                    trial[j] = val
                    sc = score(trial)
                    if sc > cur:
                        g, cur = trial, sc
        total = cur + lp_theta[k]
        if total > best_score:
            best, best_score = th, total
            if variant == "variance_adjust":
                best_u = np.log(np.maximum(g, 1e-3 * np.array([c.scale for c in gamma_prior.components])))
            elif variant == "mean_adjust":
                best_u = g
    return best, best_u


@dataclass
class BslResult:
    draws: np.ndarray
    n_theta: int
    acceptance_rate: float
    burnin_acceptance_rate: float
    warning: Optional[str] = None

    @property
    def theta(self):
        return self.draws[:, : self.n_theta]

    @property
    def gamma(self):
        return self.draws[:, self.n_theta:]


def rbsl_mh(
    variant: str,
    theta_prior,
    gamma_prior,
    simulator,
    summary_map,
    y_summary,
    m: int,
    iters: int,
    burnin: int,
    thin: int,
    init_theta,
    rng,
    adapt_every: int = 100,
) -> BslResult:
    """Random-walk MH on the (robust) synthetic-likelihood posterior.

    ``init_theta`` may be a vector, ``None`` (one prior draw) or ``"pilot"``
    (the best of 200 prior draws by estimated log posterior, with Gamma
    profiled on a grid; the chain then also starts from that Gamma).
    Gamma moves on its natural scale for ``mean_adjust`` and on the log scale
    (with the Jacobian) for ``variance_adjust``. The joint proposal covariance
    is re-estimated from the chain history every ``adapt_every`` burn-in
    iterations and frozen afterwards.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}", "variant")
    if not iters > burnin >= 0:
        raise ConfigurationError("need iters > burnin >= 0", "iters")
    if thin < 1:
        raise ConfigurationError("thin must be at least 1", "thin")
    stream = as_stream(rng)
    y = np.asarray(y_summary, dtype=float)
    d_eta = len(y)
    d_theta = theta_prior.dim
    if variant == "plain":
        gamma_prior = None
        d_gamma = 0
    else:
        gamma_prior = gamma_prior or default_gamma_prior(variant, d_eta)
        d_gamma = d_eta
        if gamma_prior.dim != d_eta:
            raise ConfigurationError("one Gamma prior component per summary", "gamma_prior")
    log_scale = variant == "variance_adjust"
    gen = stream.gen

    def to_gamma(u):
        return np.exp(u) if log_scale else u

    def log_target_extra(u):
        # prior of Gamma plus the Jacobian of the log transform
        if d_gamma == 0:
            return 0.0
        g = to_gamma(u)
        lp = float(gamma_prior.log_density(g[None, :])[0])
        return lp + (float(u.sum()) if log_scale else 0.0)

    def loglik(theta, u, it):
        mom = estimate_moments(theta, simulator, summary_map, m, stream.child(1, it).gen)
        return rbsl_loglik(y, mom, to_gamma(u) if d_gamma else None, variant)

    # initial state
    if d_gamma:
        g0 = np.zeros(d_gamma) if variant == "mean_adjust" else np.array([c.expectation() for c in gamma_prior.components])
        u = np.log(g0) if log_scale else g0
    else:
        u = np.zeros(0)
    if isinstance(init_theta, str):
        if init_theta != "pilot":
            raise ConfigurationError("init_theta must be a vector, None or 'pilot'", "init_theta")
        init_theta, u = _pilot_start(
            variant, theta_prior, gamma_prior, simulator, summary_map, y, m, stream.child(4), u, to_gamma
        )
    theta = None if init_theta is None else np.asarray(init_theta, dtype=float).ravel()
    ll = -np.inf
    for attempt in range(100):
        if theta is None or attempt > 0:
            theta = theta_prior.sample(1, stream.child(2, attempt).gen)[0]
        lp = float(theta_prior.log_density(theta[None, :])[0])
        if np.isfinite(lp):
            ll = loglik(theta, u, iters + attempt)
            if np.isfinite(ll):
                break
    if not np.isfinite(ll):
        raise ConfigurationError("could not find a starting point with finite synthetic likelihood", "init_theta")
    state = np.concatenate([theta, u])
    cur = ll + lp + log_target_extra(u)

    prior_sd = theta_prior.sample(2000, stream.child(3).gen).std(axis=0)
    init_sd = np.concatenate([0.1 * prior_sd, np.full(d_gamma, 0.5 if log_scale else 0.1)])
    chol = np.diag(init_sd)
    dim = len(state)
    chain = np.empty((iters, dim))
    accepted = 0
    burn_acc = 0
    for it in range(iters):
        prop = state + chol @ gen.standard_normal(dim)
        th, uu = prop[:d_theta], prop[d_theta:]
        lp = float(theta_prior.log_density(th[None, :])[0])
        extra = log_target_extra(uu) if np.isfinite(lp) else -np.inf
        if np.isfinite(lp) and np.isfinite(extra):
            new = loglik(th, uu, it) + lp + extra
            if math.log(gen.random()) < new - cur:
                state, cur = prop, new
                accepted += 1
                if it < burnin:
                    burn_acc += 1
        chain[it] = state
        if it < burnin and (it + 1) % adapt_every == 0 and burn_acc >= 10:
            cov = np.cov(chain[: it + 1], rowvar=False).reshape(dim, dim)
            cov = (2.38**2 / dim) * cov + JITTER * np.eye(dim)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass
    kept = chain[burnin::thin].copy()
    if d_gamma and log_scale:
        kept[:, d_theta:] = np.exp(kept[:, d_theta:])
    burn_rate = burn_acc / burnin if burnin else float("nan")
    warning = None
    if burnin and burn_rate < 0.001:
        warning = f"burn-in acceptance rate {burn_rate:.4f} below 0.1%"
        log.warning(warning)
    return BslResult(kept, d_theta, accepted / iters, burn_rate, warning)
