"""Random-walk Metropolis-Hastings and importance sampling baselines.

Both target the original posterior ``pi * L`` of an :class:`EffectiveModel`
and count one likelihood call per model evaluation, the same accounting as
the nested sampler.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .model import EffectiveModel, PriorSpec, log_likelihood, log_prior, prior_transform

__all__ = ["MHConfig", "MHResult", "ISConfig", "ISResult", "mh_run", "is_run"]


@dataclass(frozen=True)
class MHConfig:
    """Settings for :func:`mh_run`.

    ``n_samples`` counts every chain state including the initial one, so a
    run costs exactly ``n_samples`` likelihood calls.  ``burn_in=None``
    discards the first 10% of the chain.
    """

    proposal_std: object
    n_samples: int = 1100
    burn_in: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        std = np.atleast_1d(np.asarray(self.proposal_std, dtype=float))
        if np.any(~np.isfinite(std)) or np.any(std <= 0):
            raise ValueError("proposal_std must be positive")
        burn = self.n_samples // 10 if self.burn_in is None else int(self.burn_in)
        if burn < 0 or burn >= self.n_samples:
            raise ValueError("need 0 <= burn_in < n_samples")
        object.__setattr__(self, "burn_in", burn)


@dataclass
class MHResult:
    chain: np.ndarray
    log_post: np.ndarray
    acceptance: float
    n_like: int

    def mean(self):
        return self.chain.mean(axis=0)


def mh_run(model: EffectiveModel, config: MHConfig, init=None) -> MHResult:
    """Symmetric Gaussian random walk on ``log pi + log L``.

    ``init`` defaults to the prior mean (the box centre for uniform priors).
    Proposals outside the support are rejected but still counted.
    """
    d = model.dim
    prior, lik = model.prior, model.likelihood
    std = np.broadcast_to(np.asarray(config.proposal_std, dtype=float), (d,))
    if init is None:
        init = prior.mean if prior.kind == "gaussian" else 0.5 * (prior.lo + prior.hi)
    x = np.array(init, dtype=float).reshape(d)
    lp = float(log_prior(prior, x))
    if not np.isfinite(lp):
        raise ValueError("init lies outside the prior support")
    rng = np.random.default_rng(config.seed)

    n = config.n_samples
    chain = np.empty((n, d))
    logp = np.empty(n)
    cur = lp + float(log_likelihood(lik, x))
    chain[0], logp[0] = x, cur
    calls, acc = 1, 0
    for i in range(1, n):
        y = x + std * rng.standard_normal(d)
        lpy = float(log_prior(prior, y))
        new = lpy + float(log_likelihood(lik, y)) if np.isfinite(lpy) else -np.inf
        calls += 1
        if np.log(rng.random()) < new - cur:
            x, cur = y, new
            acc += 1
        chain[i], logp[i] = x, cur
    b = config.burn_in
    return MHResult(chain[b:], logp[b:], acc / max(n - 1, 1), calls)


@dataclass(frozen=True)
class ISConfig:
    """Settings for :func:`is_run`; ``proposal=None`` means the prior."""

    n_samples: int = 1100
    proposal: Optional[PriorSpec] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")


@dataclass
class ISResult:
    theta: np.ndarray
    weights: np.ndarray
    log_z: float
    n_like: int

    def mean(self):
        return self.weights @ self.theta

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def is_run(model: EffectiveModel, config: ISConfig) -> ISResult:
    """Self-normalized importance sampling of ``pi * L`` with proposal ``q``.

    The evidence estimate is the log of the mean unnormalized weight
    ``pi L / q``.
    """
    prior, lik = model.prior, model.likelihood
    q = prior if config.proposal is None else config.proposal
    if q.dim != prior.dim:
        raise ValueError("proposal dimension differs from the prior")
    if np.any(q.lo > prior.lo) or np.any(q.hi < prior.hi):
        raise ValueError("proposal support must contain the prior support")
    rng = np.random.default_rng(config.seed)
    n = config.n_samples
    theta = prior_transform(q, rng.random((n, q.dim)))
    lw = log_prior(prior, theta) + log_likelihood(lik, theta) - log_prior(q, theta)
    if not np.any(np.isfinite(lw)):
        raise ValueError("all importance weights vanish; proposal misses the posterior")
    norm = logsumexp(lw)
    w = np.exp(lw - norm)
    return ISResult(theta, w, float(norm - np.log(n)), n)
