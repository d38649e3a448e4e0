import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from nestpr.bench import cli
from nestpr.bench.config import ConfigError, from_dict, load_config, shipped_configs
from nestpr.bench.harness import (AGG_COLUMNS, RUN_COLUMNS, Cell, cells, converge_beta,
                                  run_cell, run_sweep, synthesize_data, synthesize_dataset)

DATA = Path(__file__).parent / "data"
MINI = DATA / "mini.toml"


def raw_config(**over):
    raw = {
        "name": "t",
        "master_seed": 3,
        "model": {"prior": "gaussian", "prior_std": 4.0, "support": [-50.0, 50.0],
                  "noise_scale": 1.0, "n_obs": 20, "cases": {"1": 5.0}},
        "sweep": {"betas": [1.0], "n_live": [100], "dims": [1], "repetitions": 1},
    }
    for k, v in over.items():
        block, _, key = k.partition("__")
        if key:
            raw[block][key] = v
        else:
            raw[block] = v
    return raw


# -- configs -----------------------------------------------------------------

def test_shipped_configs_load():
    names = shipped_configs()
    assert set(names) >= {"univariate", "univariate_beta", "bivariate", "bivariate_laplace", "high_dim", "laplace_nlive"}
    for n in names:
        cfg = load_config(n)
        assert cfg.name == n
        assert len(cfg.fingerprint()) == 12


@pytest.mark.parametrize("over", [
    {"sweep__repetitions": 0},
    {"sweep__betas": [1.2]},
    {"sweep__n_live": [1]},
    {"model__cases": {"1": 80.0}},
    {"model__prior": "cauchy"},
    {"model__support": [1.0, -1.0]},
    {"model__bogus": 1},
    {"sampler": {"efr": 2.0}},
    {"sampler": {"seed": 3}},
    {"master_seed": -1},
])
def test_config_errors(over):
    with pytest.raises(ConfigError):
        from_dict(raw_config(**over))


def test_fingerprint_tracks_results_not_output():
    a = from_dict(raw_config())
    assert a.fingerprint() == a.with_output(dir="elsewhere").fingerprint()
    assert a.fingerprint() != a.with_seed(4).fingerprint()
    assert a.fingerprint() != a.with_sweep(betas=[0.5]).fingerprint()


def test_unknown_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("name = [\n")
    with pytest.raises(ConfigError):
        load_config(bad)


# -- data synthesis ----------------------------------------------------------

def test_zero_noise_gives_truth():
    cfg = from_dict(raw_config(model__noise_scale=0.0))
    x = synthesize_data(cfg, 0, "1", 1)
    assert np.all(x == 5.0)


def test_case1_sample_mean_within_standard_error():
    cfg = from_dict(raw_config())
    for rep in range(20):
        x = synthesize_data(cfg, rep, "1", 1)
        assert x.shape == (20, 1)
        assert abs(x.mean() - 5.0) < 3 / math.sqrt(20)


def test_bivariate_single_observation():
    cfg = load_config("bivariate")
    lik = synthesize_dataset(cfg, 0, "2", 2)
    assert lik.data.shape == (1, 2)
    assert np.all(np.abs(lik.data - 1.5) < 0.5)


def test_dataset_seed_depends_on_rep_only():
    cfg = from_dict(raw_config())
    a = synthesize_data(cfg, 1, "1", 1)
    assert np.array_equal(a, synthesize_data(cfg, 1, "1", 1))
    assert not np.array_equal(a, synthesize_data(cfg, 2, "1", 1))
    assert not np.array_equal(a, synthesize_data(cfg.with_seed(9), 1, "1", 1))


def test_laplace_dataset():
    cfg = load_config("bivariate_laplace")
    lik = synthesize_dataset(cfg, 0, "3", 2)
    assert lik.kind == "laplace" and lik.noise_scale[0] == 0.1


# -- sweeps ------------------------------------------------------------------

def test_cells_cover_grid():
    cfg = load_config(MINI)
    cs = cells(cfg)
    # 2 cases x 2 reps x (2 betas + mh + is)
    assert len(cs) == 16
    assert len({c.key() for c in cs}) == 16


def test_golden_aggregate(tmp_path):
    cfg = load_config(MINI).with_output(dir=str(tmp_path))
    assert cli.main(["sweep", str(MINI), "--out-dir", str(tmp_path)]) == 0
    got = list(csv.reader(open(tmp_path / "mini_aggregate.csv")))
    want = list(csv.reader(open(DATA / "golden_mini_aggregate.csv")))
    assert got[0] == AGG_COLUMNS == want[0]
    assert len(got) == len(want)
    for g, w in zip(got[1:], want[1:]):
        for a, b, col in zip(g, w, AGG_COLUMNS):
            try:
                fa, fb = float(a), float(b)
            except ValueError:
                assert a == b, col
                continue
            assert fa == pytest.approx(fb, rel=1e-9, abs=1e-12, nan_ok=True), col
    runs = list(csv.reader(open(tmp_path / "mini_runs.csv")))
    assert runs[0] == RUN_COLUMNS
    assert all(r[-2] == cfg.fingerprint() and r[-1] == "7" for r in runs[1:])


def test_sweep_bytewise_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", str(MINI), "--out-dir", str(a)]) == 0
    assert cli.main(["sweep", str(MINI), "--out-dir", str(b), "--jobs", "2"]) == 0
    for name in ("mini_aggregate.csv", "mini_runs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_sweep_rows_unique_and_sorted():
    rows, records = run_sweep(load_config(MINI))
    keys = [(r.case, r.method, r.beta, r.n_live, r.dim) for r in rows]
    assert len(set(keys)) == len(keys)
    assert all(r.rmse >= 0 for r in rows)
    assert len(records) == 16


def test_oracle_wiring_gaussian_cases():
    cfg = load_config("bivariate").with_sweep(betas=[0.05], repetitions=10)
    cfg = replace(cfg, baselines=replace(cfg.baselines, mh=False, importance=False))
    _, records = run_sweep(cfg)
    ok = [abs(r.log_z - r.oracle_log_z) < 3 * r.log_z_err for r in records]
    assert np.mean(ok) >= 0.9


def test_run_cell_replay_matches_sweep():
    cfg = load_config(MINI)
    _, records = run_sweep(cfg)
    r0 = records[5]
    again = run_cell(cfg, Cell(r0.case, r0.method, r0.dim, r0.n_live, r0.beta, r0.rep))
    assert again == r0


# -- annealing ---------------------------------------------------------------

def test_converge_infinite_epsilon_returns_second_beta():
    cfg = load_config(MINI).with_sweep(betas=[1.0, 0.5, 0.2])
    res = converge_beta(cfg, epsilon=math.inf)
    assert res.beta == 0.5 and res.converged and len(res.trace) == 2


def test_converge_case1_first_comparison():
    cfg = load_config("univariate_beta")
    res = converge_beta(cfg, case="1")
    assert res.converged and res.beta == 0.8


def test_converge_schedule_validation():
    cfg = load_config(MINI)
    with pytest.raises(ValueError):
        converge_beta(cfg, schedule=[0.5, 0.2])
    with pytest.raises(ValueError):
        converge_beta(cfg, schedule=[1.0, 0.5, 0.5])


def test_converge_no_convergence_flag():
    cfg = load_config(MINI)
    res = converge_beta(cfg, schedule=[1.0, 0.9], epsilon=0.0)
    assert not res.converged and res.beta == 0.9


# -- CLI ---------------------------------------------------------------------

def test_cli_run_json(capsys):
    assert cli.main(["run", str(MINI), "--format", "json", "--beta", "0.05"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out[0]["beta"] == 0.05 and out[0]["method"] == "ns"


def test_cli_config_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "x"\n[model]\ncases = {}\n')
    assert cli.main(["sweep", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", str(MINI), "--case", "9"]) == 1


def test_cli_stall_exit(tmp_path):
    code = cli.main(["run", "univariate_beta", "--case", "3", "--beta", "1", "--n-live", "200",
                     "--out-dir", str(tmp_path)])
    assert code == 2
    rows = list(csv.DictReader(open(tmp_path / "univariate_beta_run.csv")))
    assert rows[0]["terminated_by"] == "stalled"


def test_cli_converge(capsys):
    assert cli.main(["converge", str(MINI), "--epsilon", "inf"]) == 0
    assert "chosen beta 0.05" in capsys.readouterr().err


def test_cli_diagnose_record_then_check(tmp_path, capsys):
    kb = tmp_path / "kb.csv"
    assert cli.main(["diagnose", "bivariate", "--kb", str(kb), "--record", "gold",
                     "--case", "1", "--reps", "3"]) == 0
    assert len(kb.read_text().splitlines()) == 4
    capsys.readouterr()
    assert cli.main(["diagnose", "bivariate", "--kb", str(kb), "--case", "3", "--reps", "2",
                     "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    runtime = [r for r in rows if r["check"] == "runtime"]
    assert runtime and all(r["flagged"] for r in runtime)


def test_cli_diagnose_missing_kb(tmp_path):
    assert cli.main(["diagnose", str(MINI), "--kb", str(tmp_path / "none.csv")]) == 1
