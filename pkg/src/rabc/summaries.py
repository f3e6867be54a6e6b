"""Summary statistic maps, the auxiliary GARCH(1,1)-t model and summary partitions.

Summary maps work on a batch of datasets ``(m, n)`` and return ``(m, d)``.
Rows whose summaries are undefined come back as NaN so a sampler can discard
them; the single-dataset functions raise instead.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, signal, special

from .errors import (
    ConfigurationError,
    DegenerateSummaryError,
    DomainError,
    EstimationError,
    ScoreError,
)

# --------------------------------------------------------------------------
# summary map container


@dataclass(frozen=True)
class SummaryMap:
    """Named batch summary function with one label per output entry."""

    name: str
    labels: tuple
    fn: Callable

    @property
    def dim(self) -> int:
        return len(self.labels)

    def __call__(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            return self.fn(data[None, :])[0]
        return self.fn(data)


# --------------------------------------------------------------------------
# moment and autocovariance summaries


def _mean_variance_batch(z):
    return np.column_stack([z.mean(axis=1), z.var(axis=1, ddof=1)])


def mean_variance_summary(z) -> np.ndarray:
    """Sample mean and unbiased sample variance."""
    z = np.asarray(z, dtype=float)
    if z.size < 2:
        raise DomainError("mean/variance summary needs at least two observations")
    return _mean_variance_batch(z[None, :])[0]


def _autocovariance_batch(z):
    n = z.shape[1]
    return np.column_stack(
        [
            np.einsum("ij,ij->i", z, z) / n,
            np.einsum("ij,ij->i", z[:, 1:], z[:, :-1]) / n,
            np.einsum("ij,ij->i", z[:, 2:], z[:, :-2]) / n,
        ]
    )


def autocovariance_summary(z) -> np.ndarray:
    """Uncentred lag-0/1/2 autocovariances with a 1/T factor."""
    z = np.asarray(z, dtype=float)
    if z.size < 3:
        raise DomainError("autocovariance summary needs at least three observations")
    return _autocovariance_batch(z[None, :])[0]


# --------------------------------------------------------------------------
# robust g-and-k summaries

_ROBUST_LEVELS = np.array([0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875])


def _robust_gk_batch(z):
    e1, l1, e3, l2, e5, l3, e7 = np.quantile(z, _ROBUST_LEVELS, axis=1)
    s2 = l3 - l1
    with np.errstate(divide="ignore", invalid="ignore"):
        s3 = (l3 + l1 - 2 * l2) / s2
        s4 = (e7 - e5 + e3 - e1) / s2
    out = np.column_stack([l2, s2, s3, s4])
    out[s2 == 0] = np.nan
    return out


def robust_gk_summary(z) -> np.ndarray:
    """Quantile-based location, scale, skewness and kurtosis (S1..S4)."""
    z = np.asarray(z, dtype=float)
    if z.size < 8:
        raise DomainError("robust summaries need at least eight observations")
    out = _robust_gk_batch(z[None, :])[0]
    if not np.all(np.isfinite(out)):
        raise DegenerateSummaryError("interquartile range is zero")
    return out


# --------------------------------------------------------------------------
# auxiliary GARCH(1,1) model with standardised Student-t errors


@dataclass(frozen=True)
class AuxGarchParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float

    def __post_init__(self):
        if not self.beta1 > 0:
            raise ConfigurationError("beta1 must be positive", "beta1")
        if not (self.beta2 >= 0 and self.beta3 >= 0 and self.beta2 + self.beta3 < 1):
            raise ConfigurationError("need beta2, beta3 >= 0 and beta2 + beta3 < 1", "beta")
        if not self.beta4 > 2:
            raise ConfigurationError("degrees of freedom beta4 must exceed 2", "beta4")

    def as_array(self):
        return np.array([self.beta1, self.beta2, self.beta3, self.beta4])


def _std_t_logpdf(e, nu):
    c = special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2))
    return c - 0.5 * (nu + 1) * np.log1p(e * e / (nu - 2))


def garch_scales(beta, r):
    """Conditional scales x_t for each row of ``r``.

    Because eps_{t-1} = r_{t-1} / x_{t-1}, the recursion's middle term is
    beta2 * |r_{t-1}|, which makes it linear in x and lets lfilter run it.
    """
    b1, b2, b3 = float(beta[0]), float(beta[1]), float(beta[2])
    absr = np.abs(r)
    x1 = absr.mean(axis=1)
    drive = b1 + b2 * absr[:, :-1]
    rest = signal.lfilter([1.0], [1.0, -b3], drive, axis=1, zi=(b3 * x1)[:, None])[0]
    return np.concatenate([x1[:, None], rest], axis=1)


def garch_loglik_batch(beta, r) -> np.ndarray:
    """Auxiliary log-likelihood of each row of ``r``; -inf where undefined."""
    beta = np.asarray(beta, dtype=float)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    nu = beta[3]
    if not (nu > 2 and np.all(np.isfinite(beta))):
        return np.full(len(r), -np.inf)
    with np.errstate(all="ignore"):
        x = garch_scales(beta, r)
        ll = (_std_t_logpdf(r / x, nu) - np.log(x)).sum(axis=1)
        bad = ~np.all(x > 0, axis=1) | ~np.isfinite(ll)
    ll[bad] = -np.inf
    return ll


def garch_loglik(beta, y) -> float:
    b = beta.as_array() if isinstance(beta, AuxGarchParams) else np.asarray(beta, dtype=float)
    return float(garch_loglik_batch(b, np.asarray(y, dtype=float)[None, :])[0])


def _to_beta(u):
    e2, e3 = math.exp(u[1]), math.exp(u[2])
    s = 1.0 + e2 + e3
    return np.array([math.exp(u[0]), e2 / s, e3 / s, 2.0 + math.exp(u[3])])


def _from_beta(beta):
    b1, b2, b3, b4 = beta
    rest = 1.0 - b2 - b3
    return np.array([math.log(b1), math.log(b2 / rest), math.log(b3 / rest), math.log(b4 - 2.0)])


_GARCH_STARTS = ((0.10, 0.80, 8.0), (0.05, 0.90, 5.0), (0.20, 0.60, 12.0), (0.10, 0.50, 4.0), (0.30, 0.30, 20.0))

FD_RELATIVE_STEP = 1e-4
OPTIMIZER_TOL = 1e-8


def _fd_steps(beta, rel=FD_RELATIVE_STEP):
    return rel * np.maximum(1.0, np.abs(beta))


def _score_batch(beta, r, rel=FD_RELATIVE_STEP):
    beta = np.asarray(beta, dtype=float)
    r = np.atleast_2d(r)
    h = _fd_steps(beta, rel)
    out = np.empty((len(r), 4))
    for i in range(4):
        up, dn = beta.copy(), beta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        out[:, i] = (garch_loglik_batch(up, r) - garch_loglik_batch(dn, r)) / (2 * h[i])
    with np.errstate(invalid="ignore"):
        out /= r.shape[1]
    out[~np.all(np.isfinite(out), axis=1)] = np.nan
    return out


def _newton_polish(beta, y, max_iter=30, target=1e-10):
    """Drive the finite-difference score of the fit to zero."""
    r = y[None, :]
    beta = beta.copy()
    for _ in range(max_iter):
        g = _score_batch(beta, r)[0]
        if not np.all(np.isfinite(g)) or np.linalg.norm(g) < target:
            break
        h = _fd_steps(beta)
        hess = np.empty((4, 4))
        for i in range(4):
            up, dn = beta.copy(), beta.copy()
            up[i] += h[i]
            dn[i] -= h[i]
            hess[:, i] = (_score_batch(up, r)[0] - _score_batch(dn, r)[0]) / (2 * h[i])
        hess = 0.5 * (hess + hess.T)
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        base = np.linalg.norm(g)
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            if cand[0] > 0 and cand[1] >= 0 and cand[2] >= 0 and cand[1] + cand[2] < 1 and cand[3] > 2:
                gc = _score_batch(cand, r)[0]
                if np.all(np.isfinite(gc)) and np.linalg.norm(gc) < base:
                    break
            t *= 0.5
        else:
            break
        beta = cand
    return beta


def fit_garch_aux(y, starts=None) -> AuxGarchParams:
    """Maximum-likelihood fit of the auxiliary GARCH(1,1)-t model.

    Nelder-Mead on log/logit coordinates from five fixed starts, then a
    Newton polish on the finite-difference score so the score summary of the
    observed data is numerically zero.
    """
    y = np.asarray(y, dtype=float)
    if y.size < 50:
        raise DomainError("the auxiliary GARCH fit needs at least 50 observations")
    n = y.size
    level = float(np.mean(np.abs(y)))
    if starts is None:
        starts = [(level * (1 - 0.8 * b2 - b3), b2, b3, nu) for b2, b3, nu in _GARCH_STARTS]

    def objective(u):
        ll = garch_loglik_batch(_to_beta(u), y[None, :])[0]
        return -ll / n if np.isfinite(ll) else 1e10

    best, best_val = None, np.inf
    for start in starts:
        res = optimize.minimize(
            objective,
            _from_beta(np.asarray(start, dtype=float)),
            method="Nelder-Mead",
            options={"xatol": OPTIMIZER_TOL, "fatol": OPTIMIZER_TOL, "maxiter": 8000, "maxfev": 16000},
        )
        if res.fun < best_val - 1e-12:
            best, best_val = res, res.fun
    if best is None or not np.isfinite(best_val) or best_val >= 1e10:
        raise EstimationError("auxiliary GARCH fit failed from every start", best=None)
    beta = _newton_polish(_to_beta(best.x), y)
    try:
        return AuxGarchParams(*beta)
    except ConfigurationError as exc:
        raise EstimationError(f"auxiliary GARCH fit left the parameter box: {exc}", best=beta) from exc


def garch_score_summary(z, beta_hat, rel_step: float = FD_RELATIVE_STEP) -> np.ndarray:
    """Average auxiliary score of ``z`` at ``beta_hat`` by central differences."""
    b = beta_hat.as_array() if isinstance(beta_hat, AuxGarchParams) else np.asarray(beta_hat, dtype=float)
    out = _score_batch(b, np.asarray(z, dtype=float)[None, :], rel_step)[0]
    if not np.all(np.isfinite(out)):
        raise ScoreError("auxiliary log-likelihood not finite on the difference stencil")
    return out


def _garch_score_rows(z, beta):
    return _score_batch(beta, z)


# --------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    """Split of summary indices (0-based) into matchable psi and adjustable phi."""

    psi: tuple
    phi: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "psi", tuple(int(i) for i in self.psi))
        object.__setattr__(self, "phi", tuple(int(i) for i in self.phi))
        if not self.psi:
            raise ConfigurationError("psi must contain at least one summary", "partition")
        if set(self.psi) & set(self.phi):
            raise ConfigurationError("psi and phi overlap", "partition")

    def validate(self, dim: int) -> "Partition":
        idx = sorted(self.psi + self.phi)
        if idx != list(range(dim)):
            raise ConfigurationError(
                f"psi and phi must cover summaries 0..{dim - 1} exactly once", "partition"
            )
        return self

    @classmethod
    def from_labels(cls, labels: Sequence[str], psi: Sequence, phi: Sequence = ()) -> "Partition":
        def index(v):
            if isinstance(v, str):
                if v not in labels:
                    raise ConfigurationError(f"unknown summary {v!r}; have {list(labels)}", "partition")
                return labels.index(v)
            if not 0 <= int(v) < len(labels):
                raise ConfigurationError(f"summary index {v} out of range", "partition")
            return int(v)

        return cls(tuple(index(v) for v in psi), tuple(index(v) for v in phi)).validate(len(labels))


def apply_partition(eta, part: Partition):
    """Return ``(psi, phi)`` sub-vectors (works on the last axis of a batch too)."""
    eta = np.asarray(eta, dtype=float)
    d = eta.shape[-1]
    if max(part.psi + part.phi) >= d:
        raise ConfigurationError("partition indexes a nonexistent summary", "partition")
    return eta[..., list(part.psi)], eta[..., list(part.phi)]


def merge_partition(psi, phi, part: Partition):
    """Inverse of :func:`apply_partition`."""
    psi = np.asarray(psi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.empty(psi.shape[:-1] + (len(part.psi) + len(part.phi),))
    out[..., list(part.psi)] = psi
    if part.phi:
        out[..., list(part.phi)] = phi
    return out


# --------------------------------------------------------------------------
# registry

MEAN_VAR = SummaryMap("mean-var", ("mean", "variance"), _mean_variance_batch)
AUTOCOV = SummaryMap("autocov", ("eta0", "eta1", "eta2"), _autocovariance_batch)
ROBUST_GK = SummaryMap("robust-gk", ("S1", "S2", "S3", "S4"), _robust_gk_batch)


def garch_score_map(beta_hat) -> SummaryMap:
    b = beta_hat.as_array() if isinstance(beta_hat, AuxGarchParams) else np.asarray(beta_hat, dtype=float)
    return SummaryMap("garch-score", ("S1", "S2", "S3", "S4"), functools.partial(_garch_score_rows, beta=b))


def build_summary_map(name: str, observed=None) -> SummaryMap:
    """Look up a summary map; data-dependent maps are fitted to ``observed``."""
    fixed = {"mean-var": MEAN_VAR, "autocov": AUTOCOV, "robust-gk": ROBUST_GK}
    if name in fixed:
        return fixed[name]
    if name == "garch-score":
        if observed is None:
            raise ConfigurationError("garch-score needs the observed data to fit the auxiliary model", "summary")
        return garch_score_map(fit_garch_aux(observed))
    raise ConfigurationError(f"unknown summary map {name!r}", "summary")


SUMMARY_LABELS = {
    "mean-var": MEAN_VAR.labels,
    "autocov": AUTOCOV.labels,
    "robust-gk": ROBUST_GK.labels,
    "garch-score": ("S1", "S2", "S3", "S4"),
}
