"""Compiled nested-sampling loop.

Mirrors the pure-Python backend in :mod:`nestpr.engine` draw for draw: the
same ``numpy.random.Generator`` is consumed in the same order, so the two
backends agree up to floating-point rounding in the quantile function.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .model import EffectiveModel, PriorSpec

_NEG_INF = -np.inf
DEGENERATE_WIDTH = 1e-9

# Wichura (1988) AS241 PPND16 coefficients, highest order last.
_A = np.array([3.3871328727963666080e0, 1.3314166789178437745e+2,
               1.9715909503065514427e+3, 1.3731693765509461125e+4,
               4.5921953931549871457e+4, 6.7265770927008700853e+4,
               3.3430575583588128105e+4, 2.5090809287301226727e+3])
_B = np.array([1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2,
               5.3941960214247511077e+3, 2.1213794301586595867e+4,
               3.9307895800092710610e+4, 2.8729085735721942674e+4,
               5.2264952788528545610e+3])
_C = np.array([1.42343711074968357734e0, 4.63033784615654529590e0,
               5.76949722146069140550e0, 3.64784832476320460504e0,
               1.27045825245236838258e0, 2.41780725177450611770e-1,
               2.27238449892691845833e-2, 7.74545014278341407640e-4])
_D = np.array([1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
               6.89767334985100004550e-1, 1.48103976427480074590e-1,
               1.51986665636164571966e-2, 5.47593808499534494600e-4,
               1.05075007164441684324e-9])
_E = np.array([6.65790464350110377720e0, 5.46378491116411436990e0,
               1.78482653991729133580e0, 2.96560571828504891230e-1,
               2.65321895265761230930e-2, 1.24266094738807843860e-3,
               2.71155556874348757815e-5, 2.01033439929228813265e-7])
_F = np.array([1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
               1.48753612908506148525e-2, 7.86869131145613259100e-4,
               1.84631831751005468180e-5, 1.42151175831644588870e-7,
               2.04426310338993978564e-15])


@numba.njit(cache=True)
def _poly(c, x):
    acc = c[7]
    for k in range(6, -1, -1):
        acc = acc * x + c[k]
    return acc


@numba.njit(cache=True)
def ndtri(p):
    """Standard normal quantile (AS241, ~1e-16 relative)."""
    if p <= 0.0:
        return _NEG_INF
    if p >= 1.0:
        return np.inf
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        x = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        x = _poly(_E, r) / _poly(_F, r)
    return -x if q < 0.0 else x


# -----------------------------------------------------------------------------
# Model evaluation.  Priors are packed as
#   (kind, mean, std, lo, hi, log_norm, flip, cdf_a, sf_b, mass)
# with kind 0 = gaussian, 1 = uniform.

def pack_prior(p: PriorSpec):
    kind = 0 if p.kind == "gaussian" else 1
    if kind == 0:
        flip, cdf_a, sf_b, mass = p._tq
    else:
        flip = np.zeros(p.dim, dtype=bool)
        cdf_a = sf_b = mass = np.zeros(p.dim)
    return (kind, np.ascontiguousarray(p.mean), np.ascontiguousarray(p.std),
            np.ascontiguousarray(p.lo), np.ascontiguousarray(p.hi),
            np.ascontiguousarray(p.log_norm, dtype=float),
            np.ascontiguousarray(flip, dtype=np.bool_),
            np.ascontiguousarray(cdf_a, dtype=float),
            np.ascontiguousarray(sf_b, dtype=float),
            np.ascontiguousarray(mass, dtype=float))


_LOG_2PI = math.log(2.0 * math.pi)
_LIK_KIND = {"gaussian": 0, "laplace": 1, "constant": 2}


@numba.njit(cache=True)
def _transform(pr, u, out):
    kind, mean, std, lo, hi, log_norm, flip, cdf_a, sf_b, mass = pr
    for d in range(u.size):
        if kind == 1:
            t = lo[d] + u[d] * (hi[d] - lo[d])
        else:
            if flip[d]:
                um = 1.0 - u[d]
                vm = u[d]
            else:
                um = u[d]
                vm = 1.0 - u[d]
            upper = um > 0.5
            if upper:
                z = ndtri(sf_b[d] + vm * mass[d])
            else:
                z = ndtri(cdf_a[d] + um * mass[d])
            if upper != flip[d]:
                z = -z
            t = mean[d] + std[d] * z
        out[d] = min(max(t, lo[d]), hi[d])


@numba.njit(cache=True)
def _log_prior(pr, theta):
    kind, mean, std, lo, hi, log_norm, flip, cdf_a, sf_b, mass = pr
    acc = 0.0
    for d in range(theta.size):
        if theta[d] < lo[d] or theta[d] > hi[d]:
            return _NEG_INF
        if kind == 0:
            z = (theta[d] - mean[d]) / std[d]
            acc += -0.5 * z * z - math.log(std[d]) - 0.5 * _LOG_2PI - log_norm[d]
        else:
            acc -= math.log(hi[d] - lo[d])
    return acc


@numba.njit(cache=True)
def _log_lik(lk, theta):
    kind, data, scale, xbar, ss, log_c = lk
    n = data.shape[0]
    if kind == 2:
        return log_c
    if n == 0:
        return 0.0
    acc = 0.0
    for d in range(theta.size):
        if kind == 0:
            s2 = scale[d] * scale[d]
            diff = theta[d] - xbar[d]
            acc += -0.5 * n * math.log(2.0 * math.pi * s2) - (n * diff * diff + ss[d]) / (2.0 * s2)
        else:
            b = scale[d]
            resid = 0.0
            for k in range(n):
                resid += abs(theta[d] - data[k, d])
            acc += -n * math.log(2.0 * b) - resid / b
    return acc


@numba.njit(cache=True)
def _log_l_tilde(mdl, theta):
    mode, base, lk, beta, shift, rs_lo, rs_hi, modp = mdl
    ll = _log_lik(lk, theta)
    if mode == 0:
        return ll
    lp = _log_prior(base, theta)
    if lp == _NEG_INF:
        return _NEG_INF
    if mode == 2:
        lpt = _log_prior(modp, theta)
        if lpt == _NEG_INF:
            return _NEG_INF
        return ll + lp - lpt
    for d in range(theta.size):
        if theta[d] < rs_lo[d] or theta[d] > rs_hi[d]:
            return _NEG_INF
    return ll + (1.0 - beta) * lp + shift


def pack_model(model: EffectiveModel):
    """Flatten an EffectiveModel into the tuple consumed by the kernels."""
    base = pack_prior(model.prior)
    lik = model.likelihood
    lk = (_LIK_KIND[lik.kind], np.ascontiguousarray(lik.data),
          np.ascontiguousarray(lik.noise_scale), np.ascontiguousarray(lik._xbar),
          np.ascontiguousarray(lik._ss), float(lik.log_c))
    modp = base
    beta, shift = 1.0, 0.0
    rs_lo, rs_hi = model.prior.lo, model.prior.hi
    if model.modified_prior is not None:
        mode = 2
        modp = pack_prior(model.modified_prior)
    elif model.scheme is not None:
        mode = 1
        s = model.scheme
        beta = float(s.beta)
        shift = float(s.log_zpi) if s.normalized else 0.0
        if s.support is not None:
            rs_lo, rs_hi = s.support
    else:
        mode = 0
    mdl = (mode, base, lk, beta, shift, np.ascontiguousarray(rs_lo, dtype=float),
           np.ascontiguousarray(rs_hi, dtype=float), modp)
    return pack_prior(model.sampling_prior), mdl


# -----------------------------------------------------------------------------
# Bound and sampler

@numba.njit(cache=True)
def _bound(live_u, enlarge, ctr, axes):
    n, ndim = live_u.shape
    for d in range(ndim):
        s = 0.0
        for i in range(n):
            s += live_u[i, d]
        ctr[d] = s / n
    if ndim == 1:
        r = 0.0
        for i in range(n):
            r = max(r, abs(live_u[i, 0] - ctr[0]))
        if r == 0.0:
            r = 0.5 * DEGENERATE_WIDTH
        axes[0, 0] = r * enlarge
        return
    delta = np.empty((n, ndim))
    spread = 0.0
    for i in range(n):
        for d in range(ndim):
            delta[i, d] = live_u[i, d] - ctr[d]
            spread = max(spread, abs(delta[i, d]))
    if spread == 0.0:
        axes[:, :] = 0.0
        for d in range(ndim):
            axes[d, d] = 0.5 * DEGENERATE_WIDTH * enlarge
        return
    cov = (delta.T @ delta) / max(n - 1, 1)
    w, v = np.linalg.eigh(cov)
    floor = max(w.max() * 1e-20, (0.5 * DEGENERATE_WIDTH) ** 2)
    for d in range(ndim):
        w[d] = max(w[d], floor)
    proj = delta @ v
    fmax = 0.0
    for i in range(n):
        f = 0.0
        for d in range(ndim):
            f += proj[i, d] * proj[i, d] / w[d]
        fmax = max(fmax, f)
    for d in range(ndim):
        sc = math.sqrt(w[d] * fmax) * enlarge
        for k in range(ndim):
            axes[k, d] = v[k, d] * sc


@numba.njit(cache=True)
def _propose(rng, kind, ctr, axes, cand, z):
    ndim = cand.size
    if kind == 1:
        for d in range(ndim):
            cand[d] = rng.random()
        return
    if ndim == 1:
        cand[0] = ctr[0] + axes[0, 0] * (2.0 * rng.random() - 1.0)
        return
    nrm = 0.0
    for d in range(ndim):
        z[d] = rng.standard_normal()
        nrm += z[d] * z[d]
    nrm = math.sqrt(nrm)
    rad = rng.random() ** (1.0 / ndim)
    for d in range(ndim):
        z[d] = z[d] / nrm * rad
    for k in range(ndim):
        acc = 0.0
        for d in range(ndim):
            acc += axes[k, d] * z[d]
        cand[k] = ctr[k] + acc


@numba.njit(cache=True)
def _draw(rng, kind, live_u, log_l_min, enlarge, max_attempts, sp, mdl,
          out_u, out_theta):
    """Returns (log_l, attempts, calls); attempts == -1 signals a stall."""
    ndim = live_u.shape[1]
    ctr = np.empty(ndim)
    axes = np.zeros((ndim, ndim))
    if kind == 0:
        _bound(live_u, enlarge, ctr, axes)
    z = np.empty(ndim)
    calls = 0
    for attempt in range(1, max_attempts + 1):
        _propose(rng, kind, ctr, axes, out_u, z)
        ok = True
        for d in range(ndim):
            if not (out_u[d] >= 0.0 and out_u[d] < 1.0):
                ok = False
        if not ok:
            continue
        _transform(sp, out_u, out_theta)
        ll = _log_l_tilde(mdl, out_theta)
        calls += 1
        if ll > log_l_min:
            return ll, attempt, calls
    return _NEG_INF, -1, calls


@numba.njit(cache=True)
def _logaddexp(a, b):
    if a < b:
        a, b = b, a
    if b == _NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


@numba.njit(cache=True)
def ns_loop(rng, n_live, ndim, kind, enlarge, tol, max_iter, max_attempts, sp, mdl):
    live_u = np.empty((n_live, ndim))
    live_theta = np.empty((n_live, ndim))
    live_logl = np.empty(n_live)
    for i in range(n_live):
        for d in range(ndim):
            live_u[i, d] = rng.random()
    for i in range(n_live):
        _transform(sp, live_u[i], live_theta[i])
        live_logl[i] = _log_l_tilde(mdl, live_theta[i])
    n_like = n_live

    cap = 4 * n_live
    dead_theta = np.empty((cap, ndim))
    dead_logl = np.empty(cap)
    calls_log = np.empty(cap, dtype=np.int64)
    log_z = _NEG_INF
    status = 0  # 0 max_iter, 1 tolerance, 2 stalled
    it = 0
    new_u = np.empty(ndim)
    new_theta = np.empty(ndim)
    for i in range(1, max_iter + 1):
        k = np.argmin(live_logl)
        log_li = live_logl[k]
        log_wi = math.log(0.5) + math.log1p(-math.exp(-2.0 / n_live)) - (i - 1) / n_live
        ll, attempts, calls = _draw(rng, kind, live_u, log_li, enlarge, max_attempts,
                                    sp, mdl, new_u, new_theta)
        n_like += calls
        if attempts < 0:
            status = 2
            break
        it = i
        if it > cap:
            cap *= 2
            t2 = np.empty((cap, ndim))
            t2[: it - 1] = dead_theta[: it - 1]
            dead_theta = t2
            l2 = np.empty(cap)
            l2[: it - 1] = dead_logl[: it - 1]
            dead_logl = l2
            c2 = np.empty(cap, dtype=np.int64)
            c2[: it - 1] = calls_log[: it - 1]
            calls_log = c2
        dead_theta[it - 1] = live_theta[k]
        dead_logl[it - 1] = log_li
        calls_log[it - 1] = calls
        log_z = _logaddexp(log_z, log_li + log_wi)
        live_u[k] = new_u
        live_theta[k] = new_theta
        live_logl[k] = ll
        if live_logl.max() - i / n_live < tol + log_z:
            status = 1
            break
    return (dead_theta[:it].copy(), dead_logl[:it].copy(), calls_log[:it].copy(),
            live_u, live_theta, live_logl, n_like, it, status, log_z)


@numba.njit(cache=True)
def draw_one(rng, kind, live_u, log_l_min, enlarge, max_attempts, sp, mdl):
    ndim = live_u.shape[1]
    u = np.empty(ndim)
    theta = np.empty(ndim)
    ll, attempts, calls = _draw(rng, kind, live_u, log_l_min, enlarge, max_attempts,
                                sp, mdl, u, theta)
    return u, theta, ll, attempts, calls


@numba.njit(cache=True)
def transform_batch(sp, u):
    out = np.empty_like(u)
    for i in range(u.shape[0]):
        _transform(sp, u[i], out[i])
    return out


@numba.njit(cache=True)
def log_l_tilde_batch(mdl, theta):
    out = np.empty(theta.shape[0])
    for i in range(theta.shape[0]):
        out[i] = _log_l_tilde(mdl, theta[i])
    return out
