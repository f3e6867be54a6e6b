"""Two-step Robust ABC.

Step one runs rejection ABC on the matchable summaries psi only and freezes
the tolerance eps1. Step two runs a replenishment SMC on the adjusted
summaries phi(z) + Gamma while keeping every particle inside eps1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .abc import ParticleSet, rejection_abc
from .distributions import JointPrior, as_stream, laplace
from .errors import ConfigurationError
from .smc import SmcConfig, rabc_smc_laplace, rabc_smc_spike_slab
from .summaries import Partition

GAMMA_PRIORS = ("laplace", "spike_slab")


@dataclass
class RabcResult:
    theta_draws: np.ndarray
    gamma_draws: np.ndarray
    eps1: float
    eps2_final: float
    partition: Partition
    trace: list = field(default_factory=list)
    d1: Optional[np.ndarray] = None
    d2: Optional[np.ndarray] = None
    warning: Optional[str] = None

    @property
    def eps2_initial(self) -> float:
        return self.trace[0]["epsilon"] if self.trace else self.eps2_final


def run_step_one(prior, simulator, summary_map, partition: Partition, y_summary, N1: int, retain_fraction: float, rng):
    """Rejection ABC on the psi summaries; returns the particles and eps1."""
    if N1 < 1000:
        raise ConfigurationError("step one needs N1 >= 1000", "N1")
    y = np.asarray(y_summary, dtype=float)
    partition.validate(len(y))
    ps = rejection_abc(prior, simulator, summary_map, y, N1, retain_fraction, rng, coords=partition.psi)
    ps.d1 = ps.d2.copy()
    return ps, ps.epsilon


def run_rabc(
    prior,
    simulator,
    summary_map,
    partition: Partition,
    y_summary,
    rng,
    *,
    gamma_prior: str = "spike_slab",
    N1: int = 25000,
    retain_fraction: float = 0.05,
    lam: float = 0.125,
    p: float = 0.5,
    smc: Optional[SmcConfig] = None,
) -> RabcResult:
    """Full Robust ABC run (step one, then the chosen step-two sampler)."""
    if gamma_prior not in GAMMA_PRIORS:
        raise ConfigurationError(f"gamma prior must be one of {GAMMA_PRIORS}", "gamma_prior")
    if not lam > 0:
        raise ConfigurationError("lambda must be positive", "lambda")
    stream = as_stream(rng)
    cfg = smc or SmcConfig(N=None)
    step1, eps1 = run_step_one(prior, simulator, summary_map, partition, y_summary, N1, retain_fraction, stream.child(0))
    if not partition.phi:
        return RabcResult(
            theta_draws=step1.theta,
            gamma_draws=np.empty((len(step1), 0)),
            eps1=eps1,
            eps2_final=0.0,
            partition=partition,
            d1=step1.d1,
            d2=np.zeros(len(step1)),
        )
    args = (simulator, summary_map, partition, y_summary, cfg, stream.child(1))
    if gamma_prior == "laplace":
        gp = JointPrior(tuple(laplace(0.0, lam) for _ in partition.phi))
        ps = rabc_smc_laplace(step1, eps1, gp, *args, prior=prior)
    else:
        ps = rabc_smc_spike_slab(step1, eps1, p, lam, *args, prior=prior)
    return _result(ps, eps1, partition)


def _result(ps: ParticleSet, eps1, partition) -> RabcResult:
    return RabcResult(
        theta_draws=ps.theta,
        gamma_draws=ps.gamma,
        eps1=float(eps1),
        eps2_final=float(ps.epsilon),
        partition=partition,
        trace=ps.trace,
        d1=ps.d1,
        d2=ps.d2,
        warning=ps.warning,
    )
