"""Run diagnostics: on-the-fly cost checks against a knowledge base of
trusted runs, and after-run divergence scores between prior and posterior.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import PriorSpec, prior_transform

__all__ = [
    "KBRecord",
    "KnowledgeBase",
    "DiagnosticVerdict",
    "runtime_check",
    "convergence_check",
    "after_run_check",
    "kl_score",
    "js_score",
    "gaussian_kl",
    "prior_posterior_kl",
]

KB_FIELDS = ["n_like", "n_iter", "kl_score", "label", "fingerprint"]


@dataclass(frozen=True)
class KBRecord:
    n_like: int
    n_iter: int
    kl_score: float
    label: str
    fingerprint: str = ""


@dataclass
class KnowledgeBase:
    """Statistics of "gold standard" runs with flagging thresholds.

    A run is flagged when its statistic exceeds ``ratio`` times the mean over
    the matching records.  Records carry an optional config fingerprint so
    checks only compare runs made with the same sampler settings.
    """

    records: List[KBRecord] = field(default_factory=list)
    n_like_ratio: float = 2.0
    kl_ratio: float = 2.0

    def __post_init__(self):
        if self.n_like_ratio <= 1 or self.kl_ratio <= 1:
            raise ValueError("thresholds must exceed 1")

    def append(self, rec: KBRecord):
        self.records.append(rec)

    def select(self, fingerprint: Optional[str] = None) -> List[KBRecord]:
        recs = self.records
        if fingerprint:
            recs = [r for r in recs if r.fingerprint == fingerprint]
        if not recs:
            raise ValueError("knowledge base has no matching records")
        return recs

    def mean(self, attr: str, fingerprint: Optional[str] = None) -> float:
        return float(np.mean([getattr(r, attr) for r in self.select(fingerprint)]))

    @classmethod
    def load(cls, path, **thresholds) -> "KnowledgeBase":
        """Read a CSV file with header ``n_like,n_iter,kl_score,label[,fingerprint]``."""
        recs = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(KB_FIELDS[:4]) - set(reader.fieldnames or [])
            if missing:
                raise ValueError(f"knowledge base header lacks {sorted(missing)}")
            for row in reader:
                recs.append(KBRecord(int(row["n_like"]), int(row["n_iter"]),
                                     float(row["kl_score"]), row["label"],
                                     row.get("fingerprint") or ""))
        return cls(recs, **thresholds)

    def save(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(KB_FIELDS)
            for r in self.records:
                w.writerow(_kb_row(r))

    @staticmethod
    def append_to(path, rec: KBRecord):
        """Append one record to ``path``, writing the header if the file is new."""
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(KB_FIELDS)
            w.writerow(_kb_row(rec))


def _kb_row(r: KBRecord):
    return [r.n_like, r.n_iter, format(r.kl_score, ".17g"), r.label, r.fingerprint]


@dataclass(frozen=True)
class DiagnosticVerdict:
    stage: str  # "on-the-fly" or "after-run"
    check: str
    flagged: bool
    score: float
    reference: float
    threshold: float

    @property
    def ratio(self) -> float:
        return self.score / self.reference if self.reference else np.inf


def _verdict(stage, check, score, reference, threshold):
    return DiagnosticVerdict(stage, check, bool(score > threshold * reference),
                             float(score), float(reference), float(threshold))


def runtime_check(run, kb: KnowledgeBase, fingerprint=None) -> DiagnosticVerdict:
    """Flag a run whose likelihood-call count is far above the reference."""
    ref = kb.mean("n_like", fingerprint)
    return _verdict("on-the-fly", "runtime", run.n_like, ref, kb.n_like_ratio)


def convergence_check(run, kb: KnowledgeBase, fingerprint=None) -> DiagnosticVerdict:
    """Same as :func:`runtime_check` on the iteration count."""
    ref = kb.mean("n_iter", fingerprint)
    return _verdict("on-the-fly", "convergence", run.n_iter, ref, kb.n_like_ratio)


def after_run_check(score: float, kb: KnowledgeBase, fingerprint=None) -> DiagnosticVerdict:
    """Flag a prior-to-posterior divergence far above the reference."""
    ref = kb.mean("kl_score", fingerprint)
    return _verdict("after-run", "kl", score, ref, kb.kl_ratio)


# -----------------------------------------------------------------------------
# Divergences

def _as_weighted(s):
    if isinstance(s, tuple):
        x, w = s
        w = np.asarray(w, dtype=float)
    else:
        x, w = s, None
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    if w is None:
        w = np.full(x.shape[0], 1.0 / x.shape[0])
    else:
        if w.shape != (x.shape[0],) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per sample")
        w = w / w.sum()
    return x, w


def _histograms(samples_p, samples_q, grid):
    xp, wp = _as_weighted(samples_p)
    xq, wq = _as_weighted(samples_q)
    d = xp.shape[1]
    if xq.shape[1] != d:
        raise ValueError("sample sets differ in dimension")
    if d > 3:
        raise ValueError("histogram estimator supports D <= 3; use gaussian_kl")
    if grid < 1:
        raise ValueError("grid must be positive")
    lo = np.minimum(xp.min(axis=0), xq.min(axis=0))
    hi = np.maximum(xp.max(axis=0), xq.max(axis=0))
    hi = np.where(hi > lo, hi, lo + 1.0)
    edges = [np.linspace(a, b, grid + 1) for a, b in zip(lo, hi)]
    hp = np.histogramdd(xp, bins=edges, weights=wp)[0].ravel()
    hq = np.histogramdd(xq, bins=edges, weights=wq)[0].ravel()
    ess_p = 1.0 / np.sum(wp ** 2)
    ess_q = 1.0 / np.sum(wq ** 2)
    return hp, ess_p, hq, ess_q


def _kl(p, q):
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_score(samples_p, samples_q, grid: int = 64) -> float:
    """Histogram estimate of KL(p || q) in nats for ``D <= 3``.

    Parameters
    ----------
    samples_p, samples_q : array or (array, weights)
        ``(n, D)`` samples, optionally with nonnegative weights.
    grid : int
        Bins per dimension over the common bounding box.

    Each bin gets one pseudo-count on top of the counts, where weighted
    counts are scaled to the Kish effective sample size.
    """
    hp, ep, hq, eq = _histograms(samples_p, samples_q, grid)
    k = hp.size
    p = (hp * ep + 1.0) / (ep + k)
    q = (hq * eq + 1.0) / (eq + k)
    return max(_kl(p, q), 0.0)


def js_score(samples_p, samples_q, grid: int = 64) -> float:
    """Jensen-Shannon divergence of the two histograms, in ``[0, log 2]``.

    No smoothing is needed since the mixture is positive wherever either
    histogram is; the result is exactly symmetric in its arguments.
    """
    hp, _, hq, _ = _histograms(samples_p, samples_q, grid)
    m = 0.5 * (hp + hq)
    js = 0.5 * _kl(hp, m) + 0.5 * _kl(hq, m)
    return min(max(js, 0.0), np.log(2.0))


def gaussian_kl(samples_p, samples_q) -> float:
    """KL between Gaussians moment-matched to each sample set, any ``D``."""
    xp, wp = _as_weighted(samples_p)
    xq, wq = _as_weighted(samples_q)
    d = xp.shape[1]
    if xq.shape[1] != d:
        raise ValueError("sample sets differ in dimension")
    mp, mq = wp @ xp, wq @ xq
    cp = np.atleast_2d(np.cov(xp, rowvar=False, aweights=wp))
    cq = np.atleast_2d(np.cov(xq, rowvar=False, aweights=wq))
    icq = np.linalg.inv(cq)
    dm = mq - mp
    _, ldp = np.linalg.slogdet(cp)
    _, ldq = np.linalg.slogdet(cq)
    kl = 0.5 * (np.trace(icq @ cp) + dm @ icq @ dm - d + ldq - ldp)
    return max(float(kl), 0.0)


def prior_posterior_kl(result, prior: PriorSpec, grid: int = 64, n_prior: int = 10000,
                       seed=0) -> float:
    """KL(posterior || prior) from a nested-sampling result.

    Prior samples are drawn fresh from ``prior``; the posterior side uses the
    weighted dead points.  Falls back to :func:`gaussian_kl` above 3 dimensions.
    """
    rng = np.random.default_rng(seed)
    xq = prior_transform(prior, rng.random((n_prior, prior.dim)))
    post = (result.theta, result.weights)
    if prior.dim > 3:
        return gaussian_kl(post, xq)
    return kl_score(post, xq, grid)
