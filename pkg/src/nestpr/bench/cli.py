"""Command-line entry point ``nestpr``.

Subcommands::

    nestpr run <config>         one cell (first sweep values unless overridden)
    nestpr sweep <config>       every cell, aggregated over repetitions
    nestpr converge <config>    anneal beta down the sweep schedule
    nestpr diagnose <config> --kb <path>

``<config>`` is a TOML path or the name of a shipped config.  Exit status is
0 on success, 2 if any run stalled and 1 on a configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from ..diagnostics import (KBRecord, KnowledgeBase, after_run_check, convergence_check,
                           prior_posterior_kl, runtime_check)
from ..engine import NSConfig, run
from .config import ConfigError, load_config, shipped_configs, validate
from .harness import (RUN_COLUMNS, Cell, build_model, build_prior, cell_seed, converge_beta,
                      render, run_cell, run_sweep, synthesize_dataset, write_sweep,
                      write_table)

EXIT_OK, EXIT_CONFIG, EXIT_STALLED = 0, 1, 2

log = logging.getLogger("nestpr")


def _parser():
    p = argparse.ArgumentParser(prog="nestpr", description="Nested sampling benchmarks "
                                "with power posterior repartitioning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("config", help="TOML file or shipped name: " + ", ".join(shipped_configs()))
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--out-dir", help="output directory (default from config)")
        sp.add_argument("--format", choices=("csv", "json"), help="output format")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--reps", type=int, help="override the repetition count")

    def cell_opts(sp):
        sp.add_argument("--case", help="case id (default: first)")
        sp.add_argument("--n-live", type=int)
        sp.add_argument("--dim", type=int)
        sp.add_argument("--rep", type=int, default=0)

    sp = sub.add_parser("run", help="run a single cell and print its record")
    common(sp)
    cell_opts(sp)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--method", choices=("ns", "mh", "is"), default="ns")

    sp = sub.add_parser("sweep", help="run the full sweep and write tables")
    common(sp)

    sp = sub.add_parser("converge", help="decrease beta until successive runs agree")
    common(sp)
    cell_opts(sp)
    sp.add_argument("--epsilon", type=float, default=3.0)

    sp = sub.add_parser("diagnose", help="check runs against a knowledge base")
    common(sp)
    sp.add_argument("--kb", required=True, help="knowledge base CSV")
    sp.add_argument("--record", metavar="LABEL",
                    help="append the runs to the knowledge base instead of checking")
    sp.add_argument("--threshold", type=float, default=2.0)
    sp.add_argument("--grid", type=int, default=64)
    sp.add_argument("--case", action="append", help="restrict to these cases (repeatable)")
    return p


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.reps is not None:
        cfg = cfg.with_sweep(repetitions=args.reps)
    if args.format:
        cfg = cfg.with_output(format=args.format)
    if args.out_dir:
        cfg = cfg.with_output(dir=args.out_dir)
    validate(cfg)
    return cfg


def _pick(cfg, args):
    case = args.case if args.case is not None else next(iter(cfg.model.cases))
    if case not in cfg.model.cases:
        raise ConfigError(f"unknown case {case!r}")
    n_live = args.n_live if args.n_live is not None else cfg.sweep.n_live[0]
    dim = args.dim if args.dim is not None else cfg.sweep.dims[0]
    return case, n_live, dim


def _emit(cfg, name, rows, columns, args):
    text = render(rows, columns, cfg.output.format)
    if args.out_dir:
        ext = cfg.output.format
        path = write_table(Path(args.out_dir) / f"{cfg.name}_{name}.{ext}", rows, columns,
                           cfg.output.format)
        log.info("wrote %s", path)
    sys.stdout.write(text)


def _run_rows(cfg, records):
    extra = {"fingerprint": cfg.fingerprint(), "master_seed": cfg.master_seed}
    return [{**asdict(r), **extra} for r in records]


def cmd_run(cfg, args):
    case, n_live, dim = _pick(cfg, args)
    beta = args.beta if args.beta is not None else cfg.sweep.betas[0]
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("beta must lie in [0, 1]")
    method = args.method
    cell = Cell(case, method, dim, n_live if method == "ns" else 0,
                float(beta) if method == "ns" else 1.0, args.rep)
    rec = run_cell(cfg, cell)
    _emit(cfg, "run", _run_rows(cfg, [rec]), RUN_COLUMNS, args)
    return EXIT_STALLED if rec.terminated_by == "stalled" else EXIT_OK


def cmd_sweep(cfg, args):
    rows, records = run_sweep(cfg, jobs=args.jobs)
    for p in write_sweep(cfg, rows, records):
        log.info("wrote %s", p)
    n_stalled = sum(r.n_stalled for r in rows)
    for r in rows:
        log.info("case %s %s beta=%g n_live=%d D=%d rmse=%.4g n_like=%.0f stalled=%d",
                 r.case, r.method, r.beta, r.n_live, r.dim, r.rmse, r.mean_n_like, r.n_stalled)
    return EXIT_STALLED if n_stalled else EXIT_OK


def cmd_converge(cfg, args):
    case, n_live, dim = _pick(cfg, args)
    res = converge_beta(cfg, epsilon=args.epsilon, case=case, rep=args.rep,
                        n_live=n_live, dim=dim)
    rows = _run_rows(cfg, res.trace)
    _emit(cfg, f"converge_{case}", rows, RUN_COLUMNS, args)
    state = "converged" if res.converged else "not converged"
    print(f"# chosen beta {res.beta:g} ({state})", file=sys.stderr)
    return EXIT_STALLED if any(r.terminated_by == "stalled" for r in res.trace) else EXIT_OK


def sampler_fingerprint(ns: NSConfig, dim: int, beta: float) -> str:
    """Hash of the sampler settings a knowledge-base comparison must share."""
    key = f"{ns.sampler}|{ns.n_live}|{ns.efr!r}|{ns.tol!r}|{dim}|{beta!r}"
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def cmd_diagnose(cfg, args):
    beta = cfg.sweep.betas[0]
    n_live, dim = cfg.sweep.n_live[0], cfg.sweep.dims[0]
    kb = None
    if not args.record:
        try:
            kb = KnowledgeBase.load(args.kb, n_like_ratio=args.threshold,
                                    kl_ratio=args.threshold)
        except FileNotFoundError:
            raise ConfigError(f"knowledge base {args.kb} not found") from None
    cases = args.case or list(cfg.model.cases)
    unknown = set(cases) - set(cfg.model.cases)
    if unknown:
        raise ConfigError(f"unknown cases {sorted(unknown)}")
    rows, stalled = [], False
    for case in cases:
        for rep in range(cfg.sweep.repetitions):
            cell = Cell(case, "ns", dim, n_live, float(beta), rep)
            prior = build_prior(cfg, dim)
            lik = synthesize_dataset(cfg, rep, case, dim)
            ns = NSConfig(**{**asdict(cfg.sampler), "n_live": n_live,
                             "seed": cell_seed(cfg, cell)})
            res = run(build_model(cfg, prior, lik, beta), ns)
            stalled |= res.stalled
            kl = prior_posterior_kl(res, prior, grid=args.grid, seed=rep)
            fp = sampler_fingerprint(ns, dim, beta)
            if args.record:
                KnowledgeBase.append_to(args.kb, KBRecord(res.n_like, res.n_iter, kl,
                                                          args.record, fp))
                rows.append({"case": case, "rep": rep, "check": "recorded", "flagged": False,
                             "score": float(res.n_like), "reference": float("nan"),
                             "threshold": float("nan")})
                continue
            try:
                verdicts = [runtime_check(res, kb, fp), convergence_check(res, kb, fp),
                            after_run_check(kl, kb, fp)]
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            for v in verdicts:
                rows.append({"case": case, "rep": rep, "check": v.check, "flagged": v.flagged,
                             "score": v.score, "reference": v.reference,
                             "threshold": v.threshold})
    cols = ["case", "rep", "check", "flagged", "score", "reference", "threshold"]
    _emit(cfg, "diagnose", rows, cols, args)
    return EXIT_STALLED if stalled else EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "converge": cmd_converge,
            "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.cmd](cfg, args)
    except ConfigError as exc:
        print(f"nestpr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
