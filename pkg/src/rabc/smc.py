"""ABC-SMC replenishment and the two robust step-two samplers.

All three samplers share one loop: sort by distance, drop the worst
``floor(alpha * N)`` particles, set the next tolerance to the largest
surviving distance, refill the dropped slots by resampling survivors and
move each refilled particle ``R`` times with an MCMC-ABC kernel. Moves are
vectorised across the refilled particles; iteration ``t`` draws from
substream ``t`` of the run's stream.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .abc import ParticleSet, distances, simulate_summaries
from .distributions import JointPrior, as_stream, spike_slab
from .errors import ConfigurationError, RunError, TuningError
from .summaries import Partition

log = logging.getLogger(__name__)

JITTER = 1e-8
R_CAP = 100


@dataclass(frozen=True)
class SmcConfig:
    """Replenishment settings.

    ``N`` is the particle count; ``None`` means "as many as step one kept"
    for the robust samplers. ``proposal_scale`` multiplies the tuned random
    walk covariance (1 keeps the raw particle covariance).
    """

    N: Optional[int] = 1000
    alpha: float = 0.5
    p_acc_min: float = 0.01
    R_init: int = 5
    c_moves: float = 0.01
    proposal_scale: float = 1.0
    max_iterations: int = 1000

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)", "alpha")
        if not 0 < self.p_acc_min < 1:
            raise ConfigurationError("p_acc_min must lie in (0, 1)", "p_acc_min")
        if not 0 < self.c_moves < 1:
            raise ConfigurationError("c_moves must lie in (0, 1)", "c_moves")
        if self.R_init < 1:
            raise ConfigurationError("R_init must be at least 1", "R_init")
        if not self.proposal_scale > 0:
            raise ConfigurationError("proposal_scale must be positive", "proposal_scale")
        if self.N is not None and self.N < 4:
            raise ConfigurationError("need at least 4 particles", "N")


def adapt_moves(p_acc_prev: float, c: float = 0.01, r_init: int = 5) -> int:
    """Number of MCMC moves so a particle moves at least once with prob. 1 - c."""
    if not 0 < p_acc_prev <= 1:
        raise ConfigurationError("p_acc_prev must lie in (0, 1]", "p_acc")
    if p_acc_prev == 1:
        return r_init
    # the tolerance stops rounding noise from bumping exact integers up
    r = math.ceil(math.log(c) / math.log1p(-p_acc_prev) - 1e-9)
    return int(min(max(r, 1), R_CAP))


def tune_joint_proposal(particles: ParticleSet, include_gamma: bool = True) -> np.ndarray:
    """Empirical covariance of the stacked (theta, Gamma) particles plus jitter."""
    x = particles.theta
    if include_gamma and particles.gamma is not None:
        x = np.column_stack([x, particles.gamma])
    n, dim = x.shape
    if n < dim + 2:
        raise TuningError(f"need at least {dim + 2} particles to tune a {dim}-d proposal, have {n}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return cov + JITTER * np.eye(dim)


def _safe_cholesky(cov, x):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        log.warning("proposal covariance not positive definite; using per-coordinate variances")
        return np.diag(np.sqrt(x.var(axis=0) + JITTER))


# --------------------------------------------------------------------------
# distance evaluation


class _Evaluator:
    """Simulates at given parameters and returns (d1, d2, summaries).

    ``d1`` is the psi distance (NaN when there is no psi block). ``d2`` is
    the distance between phi(z) + Gamma and phi(y).
    """

    def __init__(self, simulator, summary_map, y_summary, phi, psi=None):
        self.simulator = simulator
        self.summary_map = summary_map
        self.y = np.asarray(y_summary, dtype=float)
        self.phi = list(phi)
        self.psi = None if psi is None else list(psi)

    def distances(self, eta, gamma):
        adj = eta[:, self.phi]
        if gamma is not None and gamma.shape[1]:
            adj = adj + gamma
        d2 = distances(adj, self.y[self.phi]) if self.phi else np.zeros(len(eta))
        d1 = distances(eta[:, self.psi], self.y[self.psi]) if self.psi is not None else np.full(len(eta), np.nan)
        d2[~np.isfinite(d2)] = np.inf
        if self.psi is not None:
            d1[~np.isfinite(d1)] = np.inf
        return d1, d2

    def __call__(self, theta, gamma, gen):
        eta = simulate_summaries(theta, self.simulator, self.summary_map, gen)
        d1, d2 = self.distances(eta, gamma)
        return d1, d2, eta


# --------------------------------------------------------------------------
# MCMC-ABC kernels


class RandomWalkKernel:
    """Joint Gaussian random walk on (theta, Gamma) with a prior-ratio MH step."""

    def __init__(self, theta_prior, gamma_prior, evaluator, scale=1.0, eps1=None):
        self.theta_prior = theta_prior
        self.gamma_prior = gamma_prior
        self.evaluator = evaluator
        self.scale = scale
        self.eps1 = eps1
        self.chol = None

    def tune(self, survivors: ParticleSet):
        x = survivors.theta if survivors.gamma is None else np.column_stack([survivors.theta, survivors.gamma])
        try:
            cov = tune_joint_proposal(survivors)
            self.chol = _safe_cholesky(self.scale * cov, x)
        except TuningError:
            log.warning("too few survivors to tune; using per-coordinate variances")
            self.chol = np.diag(np.sqrt(self.scale * x.var(axis=0) + JITTER))

    def log_prior(self, theta, gamma):
        lp = self.theta_prior.log_density(theta)
        if self.gamma_prior is not None and gamma is not None and gamma.shape[1]:
            lp = lp + self.gamma_prior.log_density(gamma)
        return lp

    def propose(self, theta, gamma, gen):
        dt = theta.shape[1]
        x = theta if gamma is None else np.column_stack([theta, gamma])
        step = gen.standard_normal(x.shape) @ self.chol.T
        new = x + step
        th, ga = new[:, :dt], (None if gamma is None else new[:, dt:])
        with np.errstate(invalid="ignore"):
            log_ratio = self.log_prior(th, ga) - self.log_prior(theta, gamma)
        return th, ga, log_ratio

    def move(self, ps: ParticleSet, rows, eps: float, gen) -> int:
        """One MH-ABC step for ``rows`` of ``ps`` (updated in place)."""
        theta = ps.theta[rows]
        gamma = None if ps.gamma is None else ps.gamma[rows]
        th, ga, log_ratio = self.propose(theta, gamma, gen)
        u = gen.random(len(rows))
        # u < min(1, ratio * indicators) factorises, so proposals failing the
        # prior ratio are rejected before paying for a simulation
        live = np.flatnonzero(np.log(u) < log_ratio)
        if len(live) == 0:
            return 0
        d1, d2, eta = self.evaluator(th[live], None if ga is None else ga[live], gen)
        ok = d2 <= eps
        if self.eps1 is not None:
            ok &= d1 <= self.eps1
        acc = live[ok]
        tgt = np.asarray(rows)[acc]
        ps.theta[tgt] = th[acc]
        if ga is not None:
            ps.gamma[tgt] = ga[acc]
        ps.d2[tgt] = d2[ok]
        if ps.d1 is not None:
            ps.d1[tgt] = d1[ok]
        if ps.summaries is not None:
            ps.summaries[tgt] = eta[ok]
        return int(len(acc))


@dataclass
class GammaProposalState:
    """Adaptive spike-and-slab proposal: per-coordinate zero probability and slab std."""

    zero_prob: np.ndarray
    slab_std: np.ndarray

    def __post_init__(self):
        self.zero_prob = np.clip(np.asarray(self.zero_prob, dtype=float), 0.05, 0.95)
        self.slab_std = np.asarray(self.slab_std, dtype=float)
        if np.any(~(self.slab_std > 0)):
            raise ConfigurationError("slab_std must be positive", "slab_std")

    @classmethod
    def from_particles(cls, gamma, fallback_std: float) -> "GammaProposalState":
        gamma = np.atleast_2d(gamma)
        zeros = gamma == 0.0
        std = np.empty(gamma.shape[1])
        for j in range(gamma.shape[1]):
            nz = gamma[~zeros[:, j], j]
            s = nz.std(ddof=1) if len(nz) >= 2 else 0.0
            std[j] = s if s > 0 and np.isfinite(s) else fallback_std
        return cls(zeros.mean(axis=0), std)

    def propose(self, gamma, gen):
        """Draw Gamma** given Gamma; returns it with log q(Gamma|Gamma**) - log q(Gamma**|Gamma)."""
        gamma = np.atleast_2d(gamma)
        zero = gen.random(gamma.shape) < self.zero_prob
        # the Gaussian is centred at the current value, which is 0 when gamma is 0
        new = np.where(zero, 0.0, gamma + self.slab_std * gen.standard_normal(gamma.shape))
        return new, (self.log_q(gamma, new) - self.log_q(new, gamma)).sum(axis=1)

    def log_q(self, to, frm):
        """Log mixed-measure proposal density of moving from ``frm`` to ``to``."""
        atom = np.log(self.zero_prob) + np.zeros_like(to)
        slab = np.log1p(-self.zero_prob) + stats.norm.logpdf(to, loc=frm, scale=self.slab_std)
        return np.where(to == 0.0, atom, slab)


class SpikeSlabKernel(RandomWalkKernel):
    """Gaussian random walk on theta and the adaptive mixed proposal on Gamma."""

    def __init__(self, theta_prior, p, lam, n_gamma, evaluator, scale=1.0, eps1=None):
        gamma_prior = JointPrior(tuple(spike_slab(p, lam) for _ in range(n_gamma)))
        super().__init__(theta_prior, gamma_prior, evaluator, scale, eps1)
        self.lam = lam
        self.state = GammaProposalState(np.full(n_gamma, p), np.full(n_gamma, lam))

    def tune(self, survivors: ParticleSet):
        try:
            cov = tune_joint_proposal(survivors, include_gamma=False)
            self.chol = _safe_cholesky(self.scale * cov, survivors.theta)
        except TuningError:
            self.chol = np.diag(np.sqrt(self.scale * survivors.theta.var(axis=0) + JITTER))
        self.state = GammaProposalState.from_particles(survivors.gamma, self.lam)

    def propose(self, theta, gamma, gen):
        th = theta + gen.standard_normal(theta.shape) @ self.chol.T
        ga, log_q_ratio = self.state.propose(gamma, gen)
        with np.errstate(invalid="ignore"):
            log_prior_ratio = self.theta_prior.log_density(th) - self.theta_prior.log_density(theta)
            log_prior_ratio = log_prior_ratio + (
                self.gamma_prior.log_density(ga) - self.gamma_prior.log_density(gamma)
            )
        return th, ga, log_prior_ratio + log_q_ratio


# --------------------------------------------------------------------------
# replenishment loop


def _replenish(ps: ParticleSet, kernel, cfg: SmcConfig, stream) -> ParticleSet:
    n = len(ps)
    n_drop = int(math.floor(cfg.alpha * n))
    n_keep = n - n_drop
    if n_drop < 1 or n_keep < 2:
        raise ConfigurationError(f"alpha={cfg.alpha} with N={n} leaves nothing to drop or keep", "alpha")
    order = np.argsort(ps.d2, kind="stable")
    ps = ps.take(order)
    ps.trace.append({"iteration": 0, "epsilon": float(ps.d2[-1]), "p_acc": 1.0, "R": 0})
    ps.epsilon = float(ps.d2[-1])
    R = cfg.R_init
    p_acc = 1.0
    it = 0
    rows = np.arange(n_keep, n)
    while p_acc > cfg.p_acc_min:
        if it >= cfg.max_iterations:
            ps.warning = f"stopped after {it} iterations with acceptance {p_acc:.3g}"
            break
        it += 1
        gen = stream.child(it).gen
        eps_next = float(ps.d2[n_keep - 1])
        src = gen.integers(0, n_keep, n_drop)
        ps.theta[rows] = ps.theta[src]
        ps.d2[rows] = ps.d2[src]
        for arr in (ps.gamma, ps.d1, ps.summaries):
            if arr is not None:
                arr[rows] = arr[src]
        kernel.tune(ps.take(np.arange(n_keep)))
        acc = 0
        for _ in range(R):
            acc += kernel.move(ps, rows, eps_next, gen)
        p_acc = acc / (R * n_drop)
        ps.epsilon = eps_next
        ps.trace.append({"iteration": it, "epsilon": eps_next, "p_acc": p_acc, "R": R})
        if acc == 0:
            ps.warning = f"no moves accepted at iteration {it} (R={R})"
            log.warning(ps.warning)
        order = np.argsort(ps.d2, kind="stable")
        ps = ps.take(order)
        if p_acc > 0:
            R = adapt_moves(min(p_acc, 1.0), cfg.c_moves, cfg.R_init)
    ps.sorted = True
    return ps


def smc_abc(prior, simulator, summary_map, y_summary, cfg: SmcConfig, rng) -> ParticleSet:
    """Standard ABC-SMC replenishment on the full summary vector."""
    stream = as_stream(rng)
    N = cfg.N or 1000
    y = np.asarray(y_summary, dtype=float)
    ev = _Evaluator(simulator, summary_map, y, phi=range(len(y)))
    gen = stream.child(0).gen
    theta = prior.sample(N, gen)
    _, d2, eta = ev(theta, None, gen)
    failed = int(np.sum(~np.isfinite(d2)))
    if failed > 0.1 * N:
        raise RunError(f"{failed} of {N} initial simulations failed")
    ps = ParticleSet(theta=theta, d2=d2, epsilon=float(np.max(d2)), summaries=eta)
    kernel = RandomWalkKernel(prior, None, ev, cfg.proposal_scale)
    return _replenish(ps, kernel, cfg, stream)


def _init_step_two(step1: ParticleSet, eps1, partition: Partition, y, gamma_prior, cfg, gen):
    if step1.summaries is None:
        raise ConfigurationError("step-one particles must carry their simulated summaries", "step1")
    N = cfg.N or len(step1)
    if N == len(step1):
        base = step1.take(np.arange(N))
    else:
        base = step1.take(gen.integers(0, len(step1), N))
    # The step-one draws already satisfy d1 <= eps1 with their own simulation,
    # so pairing each with a prior Gamma is an exact draw from the joint target
    # at eps0 = infinity and no re-simulation is needed.
    gamma = gamma_prior.sample(N, gen)
    psi, phi = list(partition.psi), list(partition.phi)
    d1 = distances(base.summaries[:, psi], y[psi])
    adj = base.summaries[:, phi] + gamma
    d2 = distances(adj, y[phi])
    if np.any(d1 > eps1 * (1 + 1e-12)):
        raise ConfigurationError("step-one particles violate eps1", "eps1")
    return ParticleSet(
        theta=base.theta.copy(), d2=d2, epsilon=float(d2.max()), gamma=gamma, d1=d1,
        summaries=base.summaries.copy(),
    )


def rabc_smc_laplace(
    step1: ParticleSet,
    eps1: float,
    gamma_prior: JointPrior,
    simulator,
    summary_map,
    partition: Partition,
    y_summary,
    cfg: SmcConfig,
    rng,
    *,
    prior,
) -> ParticleSet:
    """Robust step two with a continuous (Laplace) prior on Gamma.

    ``prior`` is the parameter prior, needed for the MH prior ratio.
    """
    stream = as_stream(rng)
    y = np.asarray(y_summary, dtype=float)
    if gamma_prior.dim != len(partition.phi):
        raise ConfigurationError("one Gamma prior component per phi summary", "gamma_prior")
    ps = _init_step_two(step1, eps1, partition, y, gamma_prior, cfg, stream.child(0).gen)
    ev = _Evaluator(simulator, summary_map, y, partition.phi, partition.psi)
    kernel = RandomWalkKernel(prior, gamma_prior, ev, cfg.proposal_scale, eps1=eps1)
    return _replenish(ps, kernel, cfg, stream)


def rabc_smc_spike_slab(
    step1: ParticleSet,
    eps1: float,
    p: float,
    lam: float,
    simulator,
    summary_map,
    partition: Partition,
    y_summary,
    cfg: SmcConfig,
    rng,
    *,
    prior,
) -> ParticleSet:
    """Robust step two with spike-and-slab priors (atom ``p`` at 0, Laplace(0, lam) slab)."""
    stream = as_stream(rng)
    y = np.asarray(y_summary, dtype=float)
    k = len(partition.phi)
    gamma_prior = JointPrior(tuple(spike_slab(p, lam) for _ in range(k)))
    ps = _init_step_two(step1, eps1, partition, y, gamma_prior, cfg, stream.child(0).gen)
    ev = _Evaluator(simulator, summary_map, y, partition.phi, partition.psi)
    kernel = SpikeSlabKernel(prior, p, lam, k, ev, cfg.proposal_scale, eps1=eps1)
    return _replenish(ps, kernel, cfg, stream)
