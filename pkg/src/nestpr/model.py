"""Priors, likelihoods and the posterior repartitioning transform.

Every sampler in the package evaluates densities through this module.  All
densities are factorized over dimensions and live on a finite box support.
Functions accept a single point of shape ``(D,)`` or a batch of shape
``(n, D)``; batched calls return an array of length ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

__all__ = [
    "PriorSpec",
    "LikelihoodSpec",
    "RepartitionScheme",
    "EffectiveModel",
    "log_prior",
    "log_likelihood",
    "log_zpi",
    "effective_log_pair",
    "prior_transform",
    "prior_cdf",
    "log_ndtr_diff",
]

LOG_2PI = math.log(2.0 * math.pi)


def _vec(x, name, length=None):
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if length is not None:
        if a.size == 1 and length > 1:
            a = np.full(length, a[0])
        elif a.size != length:
            raise ValueError(f"{name} has length {a.size}, expected {length}")
    return a


def log_ndtr_diff(a, b):
    """Stable ``log(Phi(b) - Phi(a))`` for ``a < b`` (elementwise)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # Work in whichever tail keeps both CDF values small.
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    mid = (lo < 0) & (hi > 0)
    lb = log_ndtr(hi)
    la = log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        tails = np.log1p(-np.exp(la - lb)) + lb
        central = np.log1p(-(ndtr(lo) + ndtr(-hi)))
    return np.where(mid, central, tails)


# -----------------------------------------------------------------------------
# Priors

@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Factorized prior on a finite box.

    ``kind`` is ``"gaussian"`` (diagonal, truncated to the box and
    renormalized) or ``"uniform"``.  ``std`` is ignored for uniform priors.
    """

    kind: str
    mean: np.ndarray
    std: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    log_norm: np.ndarray = field(init=False, repr=False)
    _tq: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        d = max(np.size(v) for v in (self.lo, self.hi, self.mean, self.std))
        lo = _vec(self.lo, "lo", d)
        hi = _vec(self.hi, "hi", d)
        mean = _vec(self.mean, "mean", d)
        std = _vec(self.std, "std", d)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("prior support must be finite")
        if np.any(lo >= hi):
            raise ValueError("prior support needs lo < hi in every dimension")
        if self.kind == "gaussian":
            if np.any(std <= 0) or not np.all(np.isfinite(std)):
                raise ValueError("gaussian prior needs positive finite std")
            # log of the probability mass the untruncated normal puts on the box
            log_norm = log_ndtr_diff((lo - mean) / std, (hi - mean) / std)
        else:
            log_norm = np.log(hi - lo)
        for name, val in (("lo", lo), ("hi", hi), ("mean", mean), ("std", std),
                          ("log_norm", log_norm)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        if self.kind == "gaussian":
            a = (lo - mean) / std
            b = (hi - mean) / std
            # Dimensions lying entirely above the mean are mirrored so the
            # quantile always works with small CDF values.
            flip = a > 0
            a_m = np.where(flip, -b, a)
            b_m = np.where(flip, -a, b)
            tq = (flip, ndtr(a_m), ndtr(-b_m), np.exp(log_norm))
        else:
            tq = ()
        object.__setattr__(self, "_tq", tq)

    @classmethod
    def gaussian(cls, mean, std, lo, hi):
        return cls("gaussian", mean, std, lo, hi)

    @classmethod
    def uniform(cls, lo, hi):
        d = max(np.size(lo), np.size(hi))
        lo = _vec(lo, "lo", d)
        hi = _vec(hi, "hi", d)
        return cls("uniform", 0.5 * (lo + hi), hi - lo, lo, hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def log_volume(self) -> float:
        return float(np.sum(np.log(self.hi - self.lo)))

    def inside(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta >= self.lo) & (theta <= self.hi), axis=-1)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
        }


def _check_points(theta, dim):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (dim,) or theta.ndim > 2:
        raise ValueError(f"expected points of dimension {dim}, got shape {theta.shape}")
    return theta


def log_prior(prior: PriorSpec, theta):
    """Log density of ``prior``; ``-inf`` outside the support."""
    theta = _check_points(theta, prior.dim)
    if prior.kind == "gaussian":
        z = (theta - prior.mean) / prior.std
        per_dim = -0.5 * z * z - np.log(prior.std) - 0.5 * LOG_2PI - prior.log_norm
        out = np.sum(per_dim, axis=-1)
    else:
        out = np.full(theta.shape[:-1], -prior.log_volume)
    out = np.where(prior.inside(theta), out, -np.inf)
    return out[()] if out.ndim == 0 else out


def prior_cdf(prior: PriorSpec, theta):
    """Per-dimension CDF of the (truncated) prior, clipped to [0, 1]."""
    theta = _check_points(theta, prior.dim)
    if prior.kind == "uniform":
        u = (theta - prior.lo) / (prior.hi - prior.lo)
    else:
        a = (prior.lo - prior.mean) / prior.std
        z = (theta - prior.mean) / prior.std
        u = np.exp(log_ndtr_diff(a, np.maximum(z, a)) - prior.log_norm)
    return np.clip(u, 0.0, 1.0)


def prior_transform(prior: PriorSpec, u):
    """Map unit-cube coordinates to the prior by per-dimension inverse CDF.

    Gaussian quantiles are taken from the nearer tail so that points close to
    either cube face keep full relative precision; the largest reachable
    deviation is then set by the spacing of doubles next to 1.
    """
    u = _check_points(u, prior.dim)
    if np.any((u < 0.0) | (u > 1.0)) or np.any(np.isnan(u)):
        raise ValueError("unit-cube coordinates must lie in [0, 1]")
    return _transform(prior, u)


def _transform(prior: PriorSpec, u):
    # unchecked inverse CDF; the samplers call this on every candidate batch
    if prior.kind == "uniform":
        theta = prior.lo + u * (prior.hi - prior.lo)
        return np.minimum(np.maximum(theta, prior.lo), prior.hi)
    flip, cdf_a, sf_b, mass = prior._tq
    u_m = np.where(flip, 1.0 - u, u)
    v_m = np.where(flip, u, 1.0 - u)
    upper = u_m > 0.5
    p = np.where(upper, sf_b + v_m * mass, cdf_a + u_m * mass)
    z = ndtri(p)
    z = np.where(upper != flip, -z, z)
    theta = prior.mean + prior.std * z
    return np.minimum(np.maximum(theta, prior.lo), prior.hi)


# -----------------------------------------------------------------------------
# Likelihoods

@dataclass(frozen=True, eq=False)
class LikelihoodSpec:
    """Independent-observation likelihood ``x_n = theta + noise``.

    ``kind`` is ``"gaussian"`` (noise_scale is the standard deviation),
    ``"laplace"`` (noise_scale is the Laplace scale ``b``) or ``"constant"``
    (``log L = log_c`` everywhere; data is ignored).  An empty data matrix
    gives ``log L = 0``.
    """

    kind: str
    data: np.ndarray
    noise_scale: np.ndarray
    log_c: float = 0.0
    _xbar: np.ndarray = field(init=False, repr=False)
    _ss: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace", "constant"):
            raise ValueError(f"unknown likelihood kind {self.kind!r}")
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ValueError("data must be an N x D matrix")
        scale = _vec(self.noise_scale, "noise_scale", data.shape[1])
        if self.kind != "constant" and (np.any(scale <= 0) or not np.all(np.isfinite(scale))):
            raise ValueError("noise_scale must be positive")
        if not np.all(np.isfinite(data)):
            raise ValueError("data must be finite")
        n = data.shape[0]
        xbar = data.mean(axis=0) if n else np.zeros(data.shape[1])
        ss = ((data - xbar) ** 2).sum(axis=0)
        for name, val in (("data", data), ("noise_scale", scale), ("_xbar", xbar), ("_ss", ss)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "log_c", float(self.log_c))

    @classmethod
    def gaussian(cls, data, sigma):
        return cls("gaussian", data, sigma)

    @classmethod
    def laplace(cls, data, b):
        return cls("laplace", data, b)

    @classmethod
    def constant(cls, log_c, dim):
        return cls("constant", np.zeros((0, dim)), np.ones(dim), log_c)

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def log_likelihood(lik: LikelihoodSpec, theta):
    """Log likelihood summed over observations and dimensions."""
    theta = _check_points(theta, lik.dim)
    n = lik.n_obs
    if lik.kind == "constant":
        out = np.full(theta.shape[:-1], lik.log_c)
    elif n == 0:
        out = np.zeros(theta.shape[:-1])
    elif lik.kind == "gaussian":
        s2 = lik.noise_scale ** 2
        # sum_n (theta - x_n)^2 = n (theta - xbar)^2 + sum_n (x_n - xbar)^2
        quad = n * (theta - lik._xbar) ** 2 + lik._ss
        out = np.sum(-0.5 * n * np.log(2.0 * np.pi * s2) - quad / (2.0 * s2), axis=-1)
    else:
        b = lik.noise_scale
        resid = np.abs(theta[..., None, :] - lik.data)
        out = np.sum(-n * np.log(2.0 * b) - resid.sum(axis=-2) / b, axis=-1)
    return out[()] if np.ndim(out) == 0 else out


# -----------------------------------------------------------------------------
# Power repartitioning

def _support_arrays(prior: PriorSpec, support):
    if support is None:
        return prior.lo, prior.hi
    lo, hi = support
    lo = _vec(lo, "support lo", prior.dim)
    hi = _vec(hi, "support hi", prior.dim)
    if np.any(lo >= hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("support must be a finite box with lo < hi")
    if np.any(lo < prior.lo) or np.any(hi > prior.hi):
        raise ValueError("repartition support must lie inside the prior support")
    return lo, hi


def log_zpi(prior: PriorSpec, beta: float, support=None) -> float:
    """``log`` of the integral of ``prior**beta`` over ``support``.

    ``support`` defaults to the prior's own box.  At ``beta == 0`` the
    result is the log volume of the box.
    """
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    lo, hi = _support_arrays(prior, support)
    log_vol = np.log(hi - lo)
    if beta == 0.0:
        return float(np.sum(log_vol))
    if prior.kind == "uniform":
        # (1/V)^beta integrated over the box
        return float(np.sum(log_vol - beta * prior.log_norm))
    s = prior.std / math.sqrt(beta)
    mass = log_ndtr_diff((lo - prior.mean) / s, (hi - prior.mean) / s)
    per_dim = (
        -beta * prior.log_norm
        + 0.5 * (1.0 - beta) * LOG_2PI
        + (1.0 - beta) * np.log(prior.std)
        - 0.5 * math.log(beta)
        + mass
    )
    return float(np.sum(per_dim))


@dataclass(frozen=True, eq=False)
class RepartitionScheme:
    """Power repartitioning ``pi~ = pi**beta / Z_pi(beta)``.

    ``support`` optionally restricts the modified prior to a sub-box of the
    prior support.  With ``normalized=False`` the modified prior is taken as
    the bare ``pi**beta``; the sampler then reports the modified evidence and
    ``log_zpi`` must be added back (see ``EffectiveModel.log_prior_volume``).
    """

    beta: float
    log_zpi: float
    support: Optional[tuple] = None
    normalized: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not math.isfinite(self.log_zpi):
            raise ValueError("log_zpi must be finite")

    @classmethod
    def power(cls, prior: PriorSpec, beta: float, support=None, normalized=True):
        if support is not None:
            lo, hi = _support_arrays(prior, support)
            support = (lo, hi)
        return cls(float(beta), log_zpi(prior, beta, support), support, normalized)


class EffectiveModel:
    """A prior/likelihood pair together with its repartitioned counterpart.

    Parameters
    ----------
    prior, likelihood : PriorSpec, LikelihoodSpec
        The original model.
    scheme : RepartitionScheme, optional
        Power repartitioning.  Absent means the identity repartition.
    modified_prior : PriorSpec, optional
        General repartitioning with an arbitrary tractable modified prior.
        The effective likelihood becomes ``L * pi / pi~``.  The modified
        prior must be positive wherever the posterior has mass.

    Only one of ``scheme`` and ``modified_prior`` may be given.
    """

    def __init__(self, prior: PriorSpec, likelihood: LikelihoodSpec,
                 scheme: Optional[RepartitionScheme] = None,
                 modified_prior: Optional[PriorSpec] = None):
        if prior.dim != likelihood.dim:
            raise ValueError("prior and likelihood dimensions differ")
        if scheme is not None and modified_prior is not None:
            raise ValueError("give either a power scheme or a modified prior, not both")
        if modified_prior is not None and modified_prior.dim != prior.dim:
            raise ValueError("modified prior dimension differs")
        self.prior = prior
        self.likelihood = likelihood
        self.scheme = scheme
        self.modified_prior = modified_prior
        self.sampling_prior = self._build_sampling_prior()

    def _build_sampling_prior(self) -> PriorSpec:
        if self.modified_prior is not None:
            return self.modified_prior
        if self.scheme is None:
            return self.prior
        p = self.prior
        lo, hi = self.scheme.support if self.scheme.support is not None else (p.lo, p.hi)
        beta = self.scheme.beta
        if beta == 0.0 or p.kind == "uniform":
            return PriorSpec.uniform(lo, hi)
        return PriorSpec.gaussian(p.mean, p.std / math.sqrt(beta), lo, hi)

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def log_prior_volume(self) -> float:
        """log of the integral of the modified prior (0 when normalized)."""
        if self.scheme is not None and not self.scheme.normalized:
            return self.scheme.log_zpi
        return 0.0

    def prior_transform(self, u):
        return prior_transform(self.sampling_prior, u)

    def _transform(self, u):
        return _transform(self.sampling_prior, u)

    def log_pair(self, theta):
        """``(log pi~, log L~)`` at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        lp = log_prior(self.prior, theta)
        ll = log_likelihood(self.likelihood, theta)
        if self.scheme is None and self.modified_prior is None:
            return lp, ll
        if self.modified_prior is not None:
            lpt = log_prior(self.modified_prior, theta)
            with np.errstate(invalid="ignore"):
                llt = ll + lp - lpt
            return lpt, llt
        s = self.scheme
        shift = s.log_zpi if s.normalized else 0.0
        inside = np.isfinite(lp)
        lp0 = np.where(inside, lp, 0.0)
        lpt = np.where(inside, s.beta * lp0 - shift, -np.inf)
        llt = np.where(inside, ll + (1.0 - s.beta) * lp0 + shift, -np.inf)
        if s.support is not None:
            lo, hi = s.support
            ok = np.all((theta >= lo) & (theta <= hi), axis=-1)
            lpt = np.where(ok, lpt, -np.inf)
            llt = np.where(ok, llt, -np.inf)
        if np.ndim(lpt) == 0:
            lpt, llt = lpt[()], llt[()]
        return lpt, llt

    def log_l_tilde(self, theta):
        return self.log_pair(theta)[1]

    def log_posterior(self, theta):
        """Unnormalized log posterior ``log pi + log L`` of the original model."""
        return log_prior(self.prior, theta) + log_likelihood(self.likelihood, theta)


def effective_log_pair(model: EffectiveModel, theta):
    """Return ``(log pi~(theta), log L~(theta))`` for ``model``."""
    return model.log_pair(theta)
