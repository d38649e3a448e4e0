"""Experiment configuration: TOML loading, validation and fingerprinting."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..engine import NSConfig

__all__ = [
    "ConfigError",
    "ModelBlock",
    "SweepBlock",
    "BaselineBlock",
    "OutputBlock",
    "ExperimentConfig",
    "load_config",
    "shipped_configs",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelBlock:
    """Prior, likelihood and data-generation settings.

    ``cases`` maps a case id to the true parameter value, repeated in every
    dimension.  ``beta0_support`` optionally narrows the uniform modified
    prior used at ``beta == 0``.
    """

    cases: Dict[str, float]
    prior: str = "gaussian"
    prior_mean: float = 0.0
    prior_std: float = 1.0
    support: Tuple[float, float] = (-50.0, 50.0)
    beta0_support: Optional[Tuple[float, float]] = None
    likelihood: str = "gaussian"
    noise_scale: float = 1.0
    n_obs: int = 20


@dataclass(frozen=True)
class SweepBlock:
    betas: List[float] = field(default_factory=lambda: [1.0])
    n_live: List[int] = field(default_factory=lambda: [500])
    dims: List[int] = field(default_factory=lambda: [1])
    repetitions: int = 1
    normalize: bool = False


@dataclass(frozen=True)
class BaselineBlock:
    mh: bool = False
    importance: bool = False
    n_samples: int = 1100
    proposal_scale: float = 1.5
    burn_in: Optional[int] = None


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "results"
    format: str = "csv"
    per_run: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    master_seed: int
    model: ModelBlock
    sweep: SweepBlock
    sampler: NSConfig
    baselines: BaselineBlock
    output: OutputBlock

    def fingerprint(self) -> str:
        """Short hash of everything that affects results (not the output block)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "master_seed": self.master_seed,
            "model": asdict(self.model),
            "sweep": asdict(self.sweep),
            "sampler": asdict(self.sampler),
            "baselines": asdict(self.baselines),
            "output": asdict(self.output),
        }
        d["sampler"].pop("seed")
        return d

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(seed))

    def with_output(self, **kw) -> "ExperimentConfig":
        return replace(self, output=replace(self.output, **kw))

    def with_sweep(self, **kw) -> "ExperimentConfig":
        return replace(self, sweep=replace(self.sweep, **kw))


def _block(cls, raw, name):
    raw = dict(raw or {})
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def _pair(x, name):
    if x is None:
        return None
    if len(x) != 2 or not x[0] < x[1]:
        raise ConfigError(f"{name} must be [lo, hi] with lo < hi")
    return (float(x[0]), float(x[1]))


def from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    extra = set(raw) - {"name", "master_seed", "model", "sweep", "sampler",
                        "baselines", "output"}
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    mraw = dict(raw.get("model") or {})
    if "cases" not in mraw or not mraw["cases"]:
        raise ConfigError("[model] needs a non-empty cases table")
    mraw["cases"] = {str(k): float(v) for k, v in mraw["cases"].items()}
    mraw["support"] = _pair(mraw.get("support", (-50.0, 50.0)), "support")
    mraw["beta0_support"] = _pair(mraw.get("beta0_support"), "beta0_support")
    model = _block(ModelBlock, mraw, "model")
    sweep = _block(SweepBlock, raw.get("sweep"), "sweep")
    sraw = dict(raw.get("sampler") or {})
    if "seed" in sraw:
        raise ConfigError("[sampler] seed is derived from master_seed")
    sampler = _block(NSConfig, sraw, "sampler")
    baselines = _block(BaselineBlock, raw.get("baselines"), "baselines")
    output = _block(OutputBlock, raw.get("output"), "output")
    try:
        seed = int(raw.get("master_seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("master_seed must be an integer") from None
    cfg = ExperimentConfig(str(raw.get("name", "experiment")), seed, model, sweep,
                           sampler, baselines, output)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    m, s = cfg.model, cfg.sweep
    if not 0 <= cfg.master_seed < 2 ** 64:
        raise ConfigError("master_seed must be a 64-bit unsigned integer")
    if m.prior not in ("gaussian", "uniform"):
        raise ConfigError(f"unknown prior {m.prior!r}")
    if m.likelihood not in ("gaussian", "laplace"):
        raise ConfigError(f"unknown likelihood {m.likelihood!r}")
    if m.prior == "gaussian" and m.prior_std <= 0:
        raise ConfigError("prior_std must be positive")
    if m.noise_scale < 0:
        raise ConfigError("noise_scale must be nonnegative")
    if m.n_obs < 1:
        raise ConfigError("n_obs must be at least 1")
    lo, hi = m.support
    for cid, t in m.cases.items():
        if not lo <= t <= hi:
            raise ConfigError(f"case {cid}: truth {t} outside the prior support")
    if m.beta0_support is not None:
        a, b = m.beta0_support
        if a < lo or b > hi:
            raise ConfigError("beta0_support must lie inside the prior support")
    if s.repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    if not s.betas or any(not 0.0 <= b <= 1.0 for b in s.betas):
        raise ConfigError("betas must be a non-empty list in [0, 1]")
    if not s.n_live or any(n < 2 for n in s.n_live):
        raise ConfigError("n_live values must be at least 2")
    if not s.dims or any(d < 1 for d in s.dims):
        raise ConfigError("dims must be positive")
    if cfg.baselines.n_samples < 1 or cfg.baselines.proposal_scale <= 0:
        raise ConfigError("baseline n_samples and proposal_scale must be positive")
    if cfg.output.format not in ("csv", "json"):
        raise ConfigError("output format must be csv or json")


def load_config(path) -> ExperimentConfig:
    """Load a TOML experiment file; a bare name selects a shipped config."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in shipped_configs():
        text = resources.files(__package__).joinpath("configs", f"{path}.toml").read_text()
    else:
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def shipped_configs() -> List[str]:
    root = resources.files(__package__).joinpath("configs")
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".toml"))
