"""Nested sampling with power posterior repartitioning.

The library splits into model definitions (:mod:`nestpr.model`), the
sampler (:mod:`nestpr.engine`), MCMC and importance-sampling baselines,
analytic and quadrature oracles, run diagnostics, and a benchmark harness
with a command-line front end (:mod:`nestpr.bench`).
"""

from .baselines import ISConfig, MHConfig, is_run, mh_run
from .diagnostics import (DiagnosticVerdict, KnowledgeBase, js_score, kl_score,
                          runtime_check)
from .engine import NSConfig, NSResult, correct_evidence, run, weighted_moments
from .model import (EffectiveModel, LikelihoodSpec, PriorSpec, RepartitionScheme,
                    effective_log_pair, log_likelihood, log_prior, log_zpi, prior_transform)
from .oracles import conjugate_posterior, quadrature_evidence, quadrature_posterior

__version__ = "0.1.0"

__all__ = [
    "PriorSpec", "LikelihoodSpec", "RepartitionScheme", "EffectiveModel",
    "log_prior", "log_likelihood", "log_zpi", "effective_log_pair", "prior_transform",
    "NSConfig", "NSResult", "run", "weighted_moments", "correct_evidence",
    "MHConfig", "ISConfig", "mh_run", "is_run",
    "KnowledgeBase", "DiagnosticVerdict", "runtime_check", "kl_score", "js_score",
    "conjugate_posterior", "quadrature_evidence", "quadrature_posterior",
]
