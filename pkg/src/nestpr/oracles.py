"""Ground-truth posteriors and evidences used to score the samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import LikelihoodSpec, PriorSpec, log_ndtr_diff

__all__ = [
    "ConjugateResult",
    "QuadratureError",
    "conjugate_posterior",
    "quadrature_posterior",
    "quadrature_evidence",
    "trapezoid_log_integral",
]


@dataclass(frozen=True)
class ConjugateResult:
    mean: np.ndarray
    std: np.ndarray
    log_evidence: float


class QuadratureError(RuntimeError):
    """Refinement cap reached before convergence; ``estimate`` holds the last value."""

    def __init__(self, msg, estimate):
        super().__init__(msg)
        self.estimate = estimate


def conjugate_posterior(prior: PriorSpec, lik: LikelihoodSpec) -> ConjugateResult:
    """Exact posterior of a diagonal Gaussian prior and Gaussian-product likelihood.

    Mean and std are those of the untruncated conjugate posterior; the
    evidence accounts for the truncation of the prior to its box, i.e. it is
    the integral of ``L * pi`` over the support.
    """
    if prior.kind != "gaussian" or lik.kind != "gaussian":
        raise ValueError("conjugate posterior needs a gaussian prior and likelihood")
    if prior.dim != lik.dim:
        raise ValueError("prior and likelihood dimensions differ")
    n = lik.n_obs
    mu0, s0 = prior.mean, prior.std
    sx = lik.noise_scale
    tau = 1.0 / s0 ** 2 + n / sx ** 2
    xsum = lik.data.sum(axis=0)
    mean = (mu0 / s0 ** 2 + xsum / sx ** 2) / tau
    std = 1.0 / np.sqrt(tau)

    x2 = (lik.data ** 2).sum(axis=0)
    log_z = (
        -0.5 * n * np.log(2.0 * np.pi * sx ** 2)
        - 0.5 * np.log(s0 ** 2 * tau)
        - 0.5 * (x2 / sx ** 2 + mu0 ** 2 / s0 ** 2 - mean ** 2 * tau)
    )
    # truncation: posterior mass inside the box over prior mass inside the box
    post_mass = log_ndtr_diff((prior.lo - mean) / std, (prior.hi - mean) / std)
    log_z = log_z + post_mass - prior.log_norm
    return ConjugateResult(mean, std, float(np.sum(log_z)))


def trapezoid_log_integral(log_f, lo, hi, breaks=(), rtol=1e-6, start=256,
                           max_level=22):
    """``log`` of the integral of ``exp(log_f)`` over ``[lo, hi]``.

    Composite trapezoid rule with interval halving until successive log
    estimates differ by less than ``rtol``.  ``breaks`` are points where the
    integrand has a kink; they are always grid nodes.  Also returns the first
    and second moments of the normalized integrand.
    """
    nodes = np.unique(np.concatenate([[lo, hi],
                                      [b for b in breaks if lo < b < hi]]))
    prev = None
    # intervals per segment; kinks split the range, keep the total near ``start``
    n = max(2, start // (len(nodes) - 1))
    level = 0
    while True:
        xs = np.concatenate([np.linspace(a, b, n + 1)[:-1]
                             for a, b in zip(nodes[:-1], nodes[1:])] + [[hi]])
        h = np.diff(xs)
        lf = log_f(xs)
        # trapezoid weights for a non-uniform grid
        wts = np.zeros_like(xs)
        wts[:-1] += 0.5 * h
        wts[1:] += 0.5 * h
        with np.errstate(divide="ignore"):
            lw = lf + np.log(wts)
        est = float(logsumexp(lw))
        if prev is not None and abs(est - prev) < rtol:
            p = np.exp(lw - est)
            m1 = float(p @ xs)
            m2 = float(p @ (xs - m1) ** 2)
            return est, m1, m2
        if level >= max_level:
            raise QuadratureError(
                f"trapezoid did not converge after {level} refinements", est)
        prev = est
        n *= 2
        level += 1


def _factor_log_density(prior, lik, d):
    mu, s, lo, hi = prior.mean[d], prior.std[d], prior.lo[d], prior.hi[d]
    ln = prior.log_norm[d]
    x = lik.data[:, d]
    b = lik.noise_scale[d]
    n = lik.n_obs

    def log_f(t):
        if prior.kind == "gaussian":
            lp = -0.5 * ((t - mu) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi) - ln
        else:
            lp = np.full_like(t, -ln)
        if lik.kind == "constant" or n == 0:
            return lp
        r = t[:, None] - x[None, :]
        if lik.kind == "gaussian":
            ll = (-0.5 * n * math.log(2 * math.pi * b * b) - (r * r).sum(axis=1) / (2 * b * b))
        else:
            ll = -n * math.log(2 * b) - np.abs(r).sum(axis=1) / b
        return lp + ll

    return log_f, lo, hi, tuple(x) if lik.kind == "laplace" else ()


def quadrature_posterior(prior: PriorSpec, lik: LikelihoodSpec, rtol=1e-6,
                         max_level=22) -> ConjugateResult:
    """Posterior moments and evidence by one-dimensional quadrature.

    Both prior and likelihood factorize over dimensions, so the evidence is
    the product of per-dimension integrals and the posterior moments are
    per-dimension moments.
    """
    if prior.dim != lik.dim:
        raise ValueError("prior and likelihood dimensions differ")
    total = 0.0
    means, stds = [], []
    for d in range(prior.dim):
        log_f, lo, hi, breaks = _factor_log_density(prior, lik, d)
        est, m1, m2 = trapezoid_log_integral(log_f, lo, hi, breaks, rtol=rtol,
                                             max_level=max_level)
        total += est
        means.append(m1)
        stds.append(math.sqrt(max(m2, 0.0)))
    if lik.kind == "constant":
        total += lik.log_c
    return ConjugateResult(np.array(means), np.array(stds), float(total))


def quadrature_evidence(prior: PriorSpec, lik: LikelihoodSpec, resolution: int = 22) -> float:
    """``log Z`` by adaptive trapezoid refinement (``resolution`` halvings max)."""
    return quadrature_posterior(prior, lik, max_level=resolution).log_evidence
