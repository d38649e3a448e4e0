"""Nested sampling over an :class:`~nestpr.model.EffectiveModel`.

The run follows the classic scheme: deterministic prior volumes
``X_i = exp(-i / n_live)``, trapezoid weights ``w_i = (X_{i-1} - X_{i+1}) / 2``,
termination once ``max(L~) X_i < exp(tol) Z``, and a final increment from the
surviving live points.  Everything is accumulated in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from .model import EffectiveModel

__all__ = [
    "NSConfig",
    "LivePoint",
    "DeadPoint",
    "NSResult",
    "Ellipsoid",
    "EllipsoidSampler",
    "PriorSampler",
    "Stalled",
    "make_sampler",
    "draw_replacement",
    "run",
    "weighted_moments",
    "correct_evidence",
]

SAMPLERS = ("ellipsoid", "prior")
DEGENERATE_WIDTH = 1e-9


@dataclass(frozen=True)
class NSConfig:
    n_live: int = 500
    efr: float = 0.8
    tol: float = 0.5
    max_iter: int = 1_000_000
    sampler: str = "ellipsoid"
    max_draw_attempts: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if int(self.n_live) < 2:
            raise ValueError("n_live must be at least 2")
        if not 0.0 < self.efr <= 1.0:
            raise ValueError("efr must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1 or int(self.max_draw_attempts) < 1:
            raise ValueError("max_iter and max_draw_attempts must be positive")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class LivePoint:
    u: np.ndarray
    theta: np.ndarray
    log_l: float


@dataclass(frozen=True)
class DeadPoint:
    theta: np.ndarray
    log_l: float
    log_x: float
    log_w: float
    p: float


@dataclass
class NSResult:
    """Outcome of a nested sampling run.

    The ledger arrays are ordered by removal; the final live points are
    appended in increasing ``log_l`` order with ``log_x = -(I + k) / n_live``.
    ``weights`` are the normalized posterior weights.
    """

    theta: np.ndarray
    log_l: np.ndarray
    log_x: np.ndarray
    log_w: np.ndarray
    weights: np.ndarray
    log_z: float
    log_z_err: float
    information: float
    n_like: int
    n_iter: int
    n_live: int
    terminated_by: str
    # per-iteration likelihood-call counts, kept for diagnostics
    calls: np.ndarray = field(repr=False, default=None)

    @property
    def dead(self) -> List[DeadPoint]:
        return [DeadPoint(t, float(l), float(x), float(w), float(p))
                for t, l, x, w, p in zip(self.theta, self.log_l, self.log_x,
                                         self.log_w, self.weights)]

    @property
    def stalled(self) -> bool:
        return self.terminated_by == "stalled"

    def summary(self) -> str:
        return ("niter: {:d}\nncall: {:d}\nlogz: {:.4f} +/- {:.4f}\nh: {:.3f}\n"
                "stop: {}".format(self.n_iter, self.n_like, self.log_z,
                                  self.log_z_err, self.information, self.terminated_by))


class Stalled(Exception):
    """No strictly better point was found within the attempt budget."""

    def __init__(self, attempts, calls):
        super().__init__(f"no replacement after {attempts} attempts")
        self.attempts = attempts
        self.calls = calls


# -----------------------------------------------------------------------------
# Bounds

class Ellipsoid:
    """Ellipsoid ``{x : (x - ctr)^T A (x - ctr) <= 1}`` stored via its axes.

    ``axes`` maps the unit ball onto the ellipsoid: ``x = ctr + axes @ z``.
    """

    def __init__(self, ctr, axes):
        self.ctr = np.asarray(ctr, dtype=float)
        self.axes = np.atleast_2d(np.asarray(axes, dtype=float))
        self.n = self.ctr.size

    @classmethod
    def bounding(cls, points, enlarge=1.0):
        """Mean/covariance ellipsoid scaled so the farthest point is on the
        boundary, then with every axis multiplied by ``enlarge``."""
        points = np.asarray(points, dtype=float)
        npts, ndim = points.shape
        ctr = points.mean(axis=0)
        delta = points - ctr
        if ndim == 1:
            r = np.abs(delta).max()
            if r == 0.0:
                r = 0.5 * DEGENERATE_WIDTH
            return cls(ctr, [[r * enlarge]])
        if not np.any(delta):
            return cls(ctr, np.eye(ndim) * (0.5 * DEGENERATE_WIDTH * enlarge))
        cov = delta.T @ delta / max(npts - 1, 1)
        w, v = np.linalg.eigh(cov)
        # Flat directions (collinear points) get a tiny but finite extent.
        floor = max(w.max() * 1e-20, (0.5 * DEGENERATE_WIDTH) ** 2)
        w = np.maximum(w, floor)
        proj = delta @ v
        fmax = np.max(np.sum(proj * proj / w, axis=1))
        scale = np.sqrt(w * fmax) * enlarge
        return cls(ctr, v * scale)

    def contains(self, x) -> np.ndarray:
        z = np.linalg.solve(self.axes, (np.asarray(x) - self.ctr).T).T
        return np.sum(z * z, axis=-1) <= 1.0 + 1e-12

    def sample(self, n, rng) -> np.ndarray:
        """``n`` points uniformly distributed inside the ellipsoid."""
        if self.n == 1:
            return self.ctr + self.axes[0, 0] * (2.0 * rng.random((n, 1)) - 1.0)
        z = rng.standard_normal((n, self.n))
        z /= np.sqrt(np.sum(z * z, axis=1))[:, None]
        z *= rng.random(n)[:, None] ** (1.0 / self.n)
        return self.ctr + z @ self.axes.T


# -----------------------------------------------------------------------------
# Constrained samplers (pure-Python reference backend)

class _Sampler:
    """One-candidate-at-a-time rejection sampler.

    Every candidate counts as an attempt; candidates inside the unit cube
    additionally cost one likelihood call.  The compiled backend consumes
    the random stream in exactly the same order.
    """

    def prepare(self, live_u):
        raise NotImplementedError

    def propose(self, bound, rng):
        raise NotImplementedError

    def draw(self, live_u, log_l_min, model, rng, max_attempts):
        """Return ``(u, theta, log_l, attempts, calls)`` or raise Stalled."""
        bound = self.prepare(live_u)
        calls = 0
        for attempt in range(1, max_attempts + 1):
            u = self.propose(bound, rng)
            if not np.all((u >= 0.0) & (u < 1.0)):
                continue
            theta = model._transform(u)
            log_l = float(model.log_l_tilde(theta))
            calls += 1
            if log_l > log_l_min:
                return u, theta, log_l, attempt, calls
        raise Stalled(max_attempts, calls)


class EllipsoidSampler(_Sampler):
    """Uniform draws from the enlarged bounding ellipsoid of the live points.

    Axes are enlarged by ``(1/efr)**(1/D)`` so the bound volume grows by
    ``1/efr``.
    """

    kind = 0

    def __init__(self, efr=1.0):
        self.efr = efr

    def enlarge(self, ndim):
        return (1.0 / self.efr) ** (1.0 / ndim)

    def prepare(self, live_u):
        return Ellipsoid.bounding(live_u, self.enlarge(live_u.shape[1]))

    def propose(self, bound, rng):
        return bound.sample(1, rng)[0]


class PriorSampler(_Sampler):
    """Uniform draws from the whole unit cube."""

    kind = 1

    def enlarge(self, ndim):
        return 1.0

    def prepare(self, live_u):
        return live_u.shape[1]

    def propose(self, ndim, rng):
        return rng.random((1, ndim))[0]


def make_sampler(config: NSConfig) -> _Sampler:
    if config.sampler == "ellipsoid":
        return EllipsoidSampler(config.efr)
    return PriorSampler()


def draw_replacement(sampler, live_u, log_l_min, model, rng, max_attempts=100_000):
    """Draw one point with ``log L~ > log_l_min``.

    Returns ``(LivePoint, attempts, calls)``; raises :class:`Stalled` when
    ``max_attempts`` candidates are exhausted.
    """
    u, theta, log_l, attempts, calls = sampler.draw(
        np.asarray(live_u, dtype=float), log_l_min, model, rng, max_attempts)
    return LivePoint(u, theta, log_l), attempts, calls


# -----------------------------------------------------------------------------
# Main loop

def _logaddexp(a, b):
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


def _loop_python(model, config, rng, callback):
    n_live = int(config.n_live)
    ndim = model.dim
    sampler = make_sampler(config)

    live_u = rng.random((n_live, ndim))
    live_theta = np.array([model._transform(u) for u in live_u])
    live_logl = np.array([float(model.log_l_tilde(t)) for t in live_theta])
    n_like = n_live

    log_w_shape = math.log(0.5) + math.log1p(-math.exp(-2.0 / n_live))
    dead_theta, dead_logl, calls_log = [], [], []
    log_z = -math.inf
    status = 0
    it = 0
    for i in range(1, int(config.max_iter) + 1):
        k = int(np.argmin(live_logl))
        log_li = float(live_logl[k])
        log_wi = log_w_shape - (i - 1) / n_live
        try:
            u, theta, log_l, _, calls = sampler.draw(
                live_u, log_li, model, rng, int(config.max_draw_attempts))
        except Stalled as exc:
            # iteration i never completes; the live set stays as it was
            n_like += exc.calls
            status = 2
            break
        n_like += calls
        it = i
        dead_theta.append(live_theta[k].copy())
        dead_logl.append(log_li)
        calls_log.append(calls)
        log_z = _logaddexp(log_z, log_li + log_wi)
        live_u[k] = u
        live_theta[k] = theta
        live_logl[k] = log_l
        if callback is not None:
            callback(i, live_theta, log_li)
        if float(live_logl.max()) - i / n_live < float(config.tol) + log_z:
            status = 1
            break
    return (np.asarray(dead_theta).reshape(it, ndim), np.asarray(dead_logl),
            np.asarray(calls_log, dtype=np.int64), live_u, live_theta, live_logl,
            n_like, it, status, log_z)


def _loop_compiled(model, config, rng):
    from . import _kernels

    sp, mdl = _kernels.pack_model(model)
    sampler = make_sampler(config)
    return _kernels.ns_loop(rng, int(config.n_live), model.dim, sampler.kind,
                            sampler.enlarge(model.dim), float(config.tol),
                            int(config.max_iter), int(config.max_draw_attempts), sp, mdl)


_STATUS = ("max_iter", "tolerance", "stalled")


def run(model: EffectiveModel, config: NSConfig, callback=None,
        backend: str = "compiled") -> NSResult:
    """Nested sampling run.

    Parameters
    ----------
    model : EffectiveModel
        Samples are drawn from its modified prior and ranked by the
        effective likelihood.
    config : NSConfig
    callback : callable, optional
        Called as ``callback(i, live_theta, log_l_min)`` after every
        replacement.  Forces the Python backend.
    backend : {"compiled", "python"}
        Both consume the random stream identically.

    Returns
    -------
    NSResult
        ``log_z`` is the evidence of the effective pair, i.e. the modified
        evidence when the modified prior is not normalized.
    """
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    rng = np.random.default_rng(int(config.seed))
    if callback is not None or backend == "python":
        out = _loop_python(model, config, rng, callback)
    else:
        out = _loop_compiled(model, config, rng)
    (dead_theta, dead_logl, calls_log, live_u, live_theta, live_logl,
     n_like, it, status, log_z) = out
    if np.any(np.isnan(live_logl)):
        raise ValueError("effective likelihood returned NaN")

    n_live = int(config.n_live)
    ndim = model.dim
    log_w_shape = math.log(0.5) + math.log1p(-math.exp(-2.0 / n_live))
    dead_logw = log_w_shape - np.arange(it) / n_live

    # Final increment: every survivor carries X_I / n_live.
    order = np.argsort(live_logl, kind="stable")
    log_w_live = -it / n_live - math.log(n_live)
    log_z = _logaddexp(float(log_z), float(logsumexp(live_logl)) + log_w_live)

    theta_all = np.concatenate([dead_theta.reshape(it, ndim), live_theta[order]])
    logl_all = np.concatenate([dead_logl, live_logl[order]])
    logw_all = np.concatenate([dead_logw, np.full(n_live, log_w_live)])
    logx_all = -np.arange(1, it + n_live + 1) / n_live

    weights = np.exp(logl_all + logw_all - log_z)
    weights /= weights.sum()
    pos = weights > 0
    info = float(np.sum(weights[pos] * (logl_all[pos] - log_z)))
    info = max(info, 0.0)

    return NSResult(
        theta=theta_all,
        log_l=logl_all,
        log_x=logx_all,
        log_w=logw_all,
        weights=weights,
        log_z=float(log_z),
        log_z_err=math.sqrt(info / n_live),
        information=info,
        n_like=int(n_like),
        n_iter=int(it),
        n_live=n_live,
        terminated_by=_STATUS[int(status)],
        calls=np.asarray(calls_log, dtype=np.int64),
    )


def weighted_moments(result):
    """Posterior-weighted mean and standard deviation per dimension.

    Accepts an :class:`NSResult` or a ``(theta, weights)`` pair.
    """
    if isinstance(result, NSResult):
        theta, w = result.theta, result.weights
    else:
        theta, w = result
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    if theta.size == 0 or w.size == 0:
        raise ValueError("cannot take moments of an empty sample")
    if theta.ndim == 1:
        theta = theta[:, None]
    w = w / w.sum()
    mean = w @ theta
    var = w @ (theta - mean) ** 2
    return mean, np.sqrt(np.maximum(var, 0.0))


def correct_evidence(log_z_prime: float, log_volume: float) -> float:
    """Recover ``log Z`` from the evidence of an unnormalized modified prior."""
    return float(log_z_prime) + float(log_volume)
