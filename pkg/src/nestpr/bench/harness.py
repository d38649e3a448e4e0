"""Sweep execution: data synthesis, per-cell runs, aggregation and output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..baselines import ISConfig, MHConfig, is_run, mh_run
from ..engine import NSConfig, correct_evidence, run, weighted_moments
from ..model import EffectiveModel, LikelihoodSpec, PriorSpec, RepartitionScheme
from ..oracles import conjugate_posterior, quadrature_posterior
from .config import ExperimentConfig

__all__ = [
    "Cell",
    "RunRecord",
    "AggregateRow",
    "ConvergeResult",
    "synthesize_data",
    "synthesize_dataset",
    "build_prior",
    "build_model",
    "oracle_for",
    "cells",
    "run_cell",
    "run_sweep",
    "aggregate",
    "converge_beta",
    "write_table",
    "AGG_COLUMNS",
    "RUN_COLUMNS",
]

log = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Data and models

def _data_rng(cfg: ExperimentConfig, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.master_seed, rep]))


def synthesize_data(cfg: ExperimentConfig, rep: int, case: str, dim: int) -> np.ndarray:
    """``N x D`` observations ``x_n = theta* + noise`` for one repetition.

    The noise depends only on ``(master_seed, rep)`` so every case, beta and
    method in a repetition sees the same noise realisation.
    """
    m = cfg.model
    truth = m.cases[case]
    rng = _data_rng(cfg, rep)
    if m.likelihood == "laplace":
        noise = rng.laplace(0.0, 1.0, size=(m.n_obs, dim))
    else:
        noise = rng.standard_normal((m.n_obs, dim))
    return truth + m.noise_scale * noise


def synthesize_dataset(cfg: ExperimentConfig, rep: int, case: str, dim: int) -> LikelihoodSpec:
    data = synthesize_data(cfg, rep, case, dim)
    if cfg.model.likelihood == "laplace":
        return LikelihoodSpec.laplace(data, cfg.model.noise_scale)
    return LikelihoodSpec.gaussian(data, cfg.model.noise_scale)


def build_prior(cfg: ExperimentConfig, dim: int) -> PriorSpec:
    m = cfg.model
    lo, hi = m.support
    if m.prior == "uniform":
        return PriorSpec.uniform([lo] * dim, [hi] * dim)
    return PriorSpec.gaussian([m.prior_mean] * dim, m.prior_std, lo, hi)


def build_model(cfg: ExperimentConfig, prior: PriorSpec, lik: LikelihoodSpec,
                beta: float) -> EffectiveModel:
    if beta == 1.0:
        return EffectiveModel(prior, lik)
    support = None
    if beta == 0.0 and cfg.model.beta0_support is not None:
        a, b = cfg.model.beta0_support
        support = ([a] * prior.dim, [b] * prior.dim)
    scheme = RepartitionScheme.power(prior, beta, support=support,
                                     normalized=cfg.sweep.normalize)
    return EffectiveModel(prior, lik, scheme)


def oracle_for(prior: PriorSpec, lik: LikelihoodSpec):
    if prior.kind == "gaussian" and lik.kind == "gaussian":
        return conjugate_posterior(prior, lik)
    return quadrature_posterior(prior, lik)


# -----------------------------------------------------------------------------
# Cells

@dataclass(frozen=True, order=True)
class Cell:
    case: str
    method: str
    dim: int
    n_live: int
    beta: float
    rep: int

    def key(self) -> str:
        return f"{self.case}|{self.method}|{self.dim}|{self.n_live}|{self.beta!r}|{self.rep}"


@dataclass
class RunRecord:
    case: str
    method: str
    beta: float
    n_live: int
    dim: int
    rep: int
    seed: int
    estimate: List[float]
    posterior_std: List[float]
    oracle_mean: List[float]
    rmse: float
    log_z: float
    log_z_err: float
    oracle_log_z: float
    n_like: int
    n_iter: int
    terminated_by: str


def cells(cfg: ExperimentConfig) -> List[Cell]:
    out = []
    s, b = cfg.sweep, cfg.baselines
    for case in cfg.model.cases:
        for dim in s.dims:
            for rep in range(s.repetitions):
                for n_live in s.n_live:
                    for beta in s.betas:
                        out.append(Cell(case, "ns", dim, n_live, float(beta), rep))
                if b.mh:
                    out.append(Cell(case, "mh", dim, 0, 1.0, rep))
                if b.importance:
                    out.append(Cell(case, "is", dim, 0, 1.0, rep))
    return out


def cell_seed(cfg: ExperimentConfig, cell: Cell) -> int:
    ss = np.random.SeedSequence([cfg.master_seed, cell.rep, zlib.crc32(cell.key().encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_cell(cfg: ExperimentConfig, cell: Cell) -> RunRecord:
    """Execute one (case, method, D, N_live, beta, rep) cell."""
    prior = build_prior(cfg, cell.dim)
    lik = synthesize_dataset(cfg, cell.rep, cell.case, cell.dim)
    orc = oracle_for(prior, lik)
    seed = cell_seed(cfg, cell)
    log_z_err, n_iter, status = float("nan"), 0, "ok"
    if cell.method == "ns":
        model = build_model(cfg, prior, lik, cell.beta)
        ns = NSConfig(**{**asdict(cfg.sampler), "n_live": cell.n_live, "seed": seed})
        res = run(model, ns)
        mean, std = weighted_moments(res)
        log_z = correct_evidence(res.log_z, model.log_prior_volume)
        log_z_err, n_like, n_iter, status = res.log_z_err, res.n_like, res.n_iter, res.terminated_by
    elif cell.method == "mh":
        model = EffectiveModel(prior, lik)
        b = cfg.baselines
        mh = MHConfig(b.proposal_scale * cfg.model.noise_scale, b.n_samples, b.burn_in, seed)
        res = mh_run(model, mh)
        mean, std = res.chain.mean(axis=0), res.chain.std(axis=0)
        log_z, n_like = float("nan"), res.n_like
    elif cell.method == "is":
        model = EffectiveModel(prior, lik)
        res = is_run(model, ISConfig(cfg.baselines.n_samples, None, seed))
        mean, std = weighted_moments((res.theta, res.weights))
        log_z, n_like = res.log_z, res.n_like
    else:
        raise ValueError(f"unknown method {cell.method!r}")
    err = float(np.sqrt(np.mean((mean - orc.mean) ** 2)))
    return RunRecord(cell.case, cell.method, cell.beta, cell.n_live, cell.dim, cell.rep,
                     seed, [float(v) for v in mean], [float(v) for v in std],
                     [float(v) for v in orc.mean], err, float(log_z), float(log_z_err),
                     float(orc.log_evidence), int(n_like), int(n_iter), status)


def _run_cell_args(args):
    return run_cell(*args)


def run_cells(cfg: ExperimentConfig, todo: Sequence[Cell], jobs: int = 1) -> List[RunRecord]:
    if jobs <= 1 or len(todo) <= 1:
        return [run_cell(cfg, c) for c in todo]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell_args, [(cfg, c) for c in todo],
                             chunksize=max(1, len(todo) // (4 * jobs))))


# -----------------------------------------------------------------------------
# Aggregation

@dataclass
class AggregateRow:
    case: str
    method: str
    beta: float
    n_live: int
    dim: int
    n_reps: int
    mean_estimate: float
    mean_oracle: float
    rmse: float
    rmse_rep_mean: float
    rmse_rep_std: float
    mean_n_like: float
    mean_log_z: float
    std_log_z: float
    mean_log_z_err: float
    mean_oracle_log_z: float
    n_stalled: int
    n_max_iter: int
    fingerprint: str
    master_seed: int


AGG_COLUMNS = list(AggregateRow.__dataclass_fields__)
RUN_COLUMNS = list(RunRecord.__dataclass_fields__) + ["fingerprint", "master_seed"]


def _group_key(r):
    return (r.case, r.method, r.dim, r.n_live, -r.beta)


def aggregate(records: Sequence[RunRecord], fingerprint: str, master_seed: int) -> List[AggregateRow]:
    """Collapse repetitions into one row per (case, method, beta, N_live, D).

    ``rmse`` pools squared errors over repetitions and dimensions;
    ``rmse_rep_mean`` / ``rmse_rep_std`` summarise the per-repetition values.
    """
    groups: Dict[tuple, List[RunRecord]] = {}
    for r in records:
        groups.setdefault(_group_key(r), []).append(r)
    rows = []
    for key in sorted(groups):
        g = groups[key]
        est = np.array([r.estimate for r in g])
        orc = np.array([r.oracle_mean for r in g])
        per = np.array([r.rmse for r in g])
        lz = np.array([r.log_z for r in g])
        rows.append(AggregateRow(
            case=g[0].case, method=g[0].method, beta=g[0].beta, n_live=g[0].n_live,
            dim=g[0].dim, n_reps=len(g),
            mean_estimate=float(est.mean()), mean_oracle=float(orc.mean()),
            rmse=float(np.sqrt(np.mean((est - orc) ** 2))),
            rmse_rep_mean=float(per.mean()), rmse_rep_std=float(per.std()),
            mean_n_like=float(np.mean([r.n_like for r in g])),
            mean_log_z=float(lz.mean()), std_log_z=float(lz.std()),
            mean_log_z_err=float(np.mean([r.log_z_err for r in g])),
            mean_oracle_log_z=float(np.mean([r.oracle_log_z for r in g])),
            n_stalled=sum(r.terminated_by == "stalled" for r in g),
            n_max_iter=sum(r.terminated_by == "max_iter" for r in g),
            fingerprint=fingerprint, master_seed=master_seed))
    return rows


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Tuple[List[AggregateRow], List[RunRecord]]:
    """Run every cell of the sweep and aggregate across repetitions.

    Stalled runs are kept and counted in ``n_stalled``; the sweep continues.
    """
    todo = cells(cfg)
    log.info("%s: %d runs", cfg.name, len(todo))
    records = run_cells(cfg, todo, jobs)
    records.sort(key=lambda r: (_group_key(r), r.rep))
    return aggregate(records, cfg.fingerprint(), cfg.master_seed), records


# -----------------------------------------------------------------------------
# Annealing

@dataclass
class ConvergeResult:
    beta: float
    converged: bool
    trace: List[RunRecord] = field(default_factory=list)


def converge_beta(cfg: ExperimentConfig, schedule: Optional[Sequence[float]] = None,
                  epsilon: float = 3.0, case: Optional[str] = None, rep: int = 0,
                  n_live: Optional[int] = None, dim: Optional[int] = None) -> ConvergeResult:
    """Run a decreasing beta schedule until successive runs agree.

    Two successive runs agree when their corrected log-evidences differ by
    at most ``epsilon`` combined ``log_z_err`` and their means by at most
    ``epsilon`` combined posterior std in every dimension.  Stalled runs
    never agree.  Returns the later beta of the first agreeing pair, or the
    last beta with ``converged=False``.
    """
    schedule = [float(b) for b in (cfg.sweep.betas if schedule is None else schedule)]
    if len(schedule) < 2 or schedule[0] != 1.0 or any(
            schedule[i + 1] >= schedule[i] for i in range(len(schedule) - 1)):
        raise ValueError("schedule must start at 1 and decrease strictly")
    case = case if case is not None else next(iter(cfg.model.cases))
    n_live = n_live if n_live is not None else cfg.sweep.n_live[0]
    dim = dim if dim is not None else cfg.sweep.dims[0]
    trace: List[RunRecord] = []
    for beta in schedule:
        rec = run_cell(cfg, Cell(case, "ns", dim, n_live, beta, rep))
        trace.append(rec)
        if len(trace) < 2:
            continue
        a, b = trace[-2], trace[-1]
        if "stalled" in (a.terminated_by, b.terminated_by):
            continue
        z_tol = epsilon * math.hypot(a.log_z_err, b.log_z_err)
        m_tol = epsilon * np.hypot(a.posterior_std, b.posterior_std)
        dz = abs(a.log_z - b.log_z)
        dm = np.abs(np.subtract(a.estimate, b.estimate))
        if math.isinf(epsilon) or (dz <= z_tol and np.all(dm <= m_tol)):
            return ConvergeResult(beta, True, trace)
    log.warning("no convergence over schedule %s", schedule)
    return ConvergeResult(schedule[-1], False, trace)


# -----------------------------------------------------------------------------
# Output

def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(float(x)) for x in v)
    return str(v)


def _row_dict(obj, extra=None):
    d = asdict(obj)
    if extra:
        d.update(extra)
    return d


def render(rows: Sequence[dict], columns: Sequence[str], fmt: str = "csv") -> str:
    if fmt == "json":
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v
        return json.dumps([{c: clean(r[c]) if not isinstance(r[c], list) else
                            [clean(x) for x in r[c]] for c in columns} for r in rows],
                          indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def write_table(path, rows: Sequence[dict], columns: Sequence[str], fmt: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(rows, columns, fmt), encoding="utf-8")
    return path


def write_sweep(cfg: ExperimentConfig, rows, records, out_dir=None, fmt=None) -> List[Path]:
    out_dir = Path(out_dir or cfg.output.dir)
    fmt = fmt or cfg.output.format
    ext = "json" if fmt == "json" else "csv"
    paths = [write_table(out_dir / f"{cfg.name}_aggregate.{ext}",
                         [_row_dict(r) for r in rows], AGG_COLUMNS, fmt)]
    if cfg.output.per_run:
        extra = {"fingerprint": cfg.fingerprint(), "master_seed": cfg.master_seed}
        paths.append(write_table(out_dir / f"{cfg.name}_runs.{ext}",
                                 [_row_dict(r, extra) for r in records], RUN_COLUMNS, fmt))
    return paths
