"""Experiment configuration: TOML files with a fixed set of sections.

Example::

    name = "gaussian_triad"
    samplers = ["euler"]
    n_samples = 2000
    seed_base = 42

    [schedule]
    kind = "linear_beta"
    T = 16

    [triad]
    base = "gaussian: mean=[0,0] cov=I"
    adapted = "gaussian: mean=[1,0] cov=I"
    target = "gaussian: mean=[-2,3] cov=I"
    oracle = "gaussian: mean=[-1,3] cov=I"
    oracle_sampling = "exact"

    [guidance]
    kind = "constant"
    lambda_max = 1.0

    [sweep]
    start = 0.0
    stop = 2.0
    step = 0.2

Extra residual sources go in ``[[sources]]`` tables with ``base``,
``adapted``, optional ``lambda`` (constant shorthand), ``condition``
(the adapted model's condition) and an optional ``[sources.guidance]``.
A sweep value multiplies every source's schedule.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from ..schedule import GuidanceSchedule, VarianceSchedule, build_schedule
from .modelspec import ConfigError, is_analytic_spec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ScheduleConfig",
    "SourceConfig",
    "SweepConfig",
    "TrainingConfig",
    "TriadConfig",
    "dump_config",
    "load_config",
    "parse_config",
]

SAMPLERS = ("ddpm", "ddim", "euler", "heun")


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "linear_beta"
    T: int = 16
    beta_start: Optional[float] = None
    beta_end: Optional[float] = None

    def build(self) -> VarianceSchedule:
        try:
            return build_schedule(self.kind, self.T, self.beta_start, self.beta_end)
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None


@dataclass(frozen=True)
class SourceConfig:
    base: str
    adapted: str
    guidance: GuidanceSchedule = field(default_factory=lambda: GuidanceSchedule.constant(1.0))
    base_condition: Optional[str] = None
    adapted_condition: Optional[str] = None


@dataclass(frozen=True)
class TriadConfig:
    target: str
    oracle: Optional[str] = None
    base: Optional[str] = None
    adapted: Optional[str] = None
    oracle_sampling: str = "exact"
    target_condition: Optional[str] = None
    base_condition: Optional[str] = None
    adapted_condition: Optional[str] = None


@dataclass(frozen=True)
class SweepConfig:
    start: float = 0.0
    stop: float = 2.0
    step: float = 0.2

    def values(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return [round(self.start + k * self.step, 10) for k in range(n + 1)]


@dataclass(frozen=True)
class TrainingConfig:
    dataset: str = "two_moons"
    n_points: int = 4000
    data_seed: int = 1
    shift: tuple = (1.5, 0.0)
    base_hidden: tuple = (64, 64)
    target_hidden: tuple = (96, 96, 96)
    steps: int = 5000
    fine_tune_steps: int = 5000
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    model_dir: str = "models"


@dataclass(frozen=True)
class ExperimentConfig:
    triad: TriadConfig
    name: str = "experiment"
    schedule: ScheduleConfig = ScheduleConfig()
    guidance: GuidanceSchedule = field(default_factory=lambda: GuidanceSchedule.constant(1.0))
    sources: tuple = ()
    samplers: tuple = ("euler",)
    eta: float = 0.0
    sweep: SweepConfig = SweepConfig()
    n_samples: int = 1000
    seed_base: int = 42
    output_dir: str = "runs"
    training: Optional[TrainingConfig] = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        validate(self)

    @property
    def all_sources(self) -> tuple:
        """The triad's own source (when it names base and adapted) followed by ``sources``."""
        own = ()
        if self.triad.base is not None and self.triad.adapted is not None:
            own = (
                SourceConfig(
                    self.triad.base,
                    self.triad.adapted,
                    self.guidance,
                    self.triad.base_condition,
                    self.triad.adapted_condition,
                ),
            )
        return own + tuple(self.sources)

    def resolved_output_dir(self) -> Path:
        env = os.environ.get("DS_OUTPUT_DIR")
        out = Path(env) if env else Path(self.output_dir)
        return out if out.is_absolute() else self.base_dir / out

    def override(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)


def validate(cfg: ExperimentConfig) -> None:
    if not cfg.samplers:
        raise ConfigError("at least one sampler is required")
    for s in cfg.samplers:
        if s not in SAMPLERS:
            raise ConfigError(f"unknown sampler {s!r}; choose from {SAMPLERS}")
    if not 0.0 <= cfg.eta <= 1.0:
        raise ConfigError("eta must lie in [0, 1]")
    if cfg.sweep.step <= 0 or cfg.sweep.start > cfg.sweep.stop or cfg.sweep.start < 0:
        raise ConfigError("sweep needs 0 <= start <= stop and step > 0")
    if cfg.n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    if (cfg.triad.base is None) != (cfg.triad.adapted is None):
        raise ConfigError("triad.base and triad.adapted must be given together")
    if cfg.triad.oracle_sampling not in ("exact", "sampler"):
        raise ConfigError("triad.oracle_sampling must be 'exact' or 'sampler'")
    if cfg.triad.oracle is not None and cfg.triad.oracle_sampling == "exact" and not is_analytic_spec(cfg.triad.oracle):
        raise ConfigError("exact oracle sampling needs an analytic oracle model")
    if cfg.schedule.T < 2:
        raise ConfigError("schedule.T must be at least 2")


# -- TOML mapping -----------------------------------------------------------------


def _guidance_from(table: dict, where: str) -> GuidanceSchedule:
    try:
        return GuidanceSchedule(
            kind=table.get("kind", "constant"),
            lambda_max=float(table.get("lambda_max", 1.0)),
            lambda_min=float(table.get("lambda_min", 0.0)),
            decay_rate=float(table.get("k", 1.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _guidance_table(g: GuidanceSchedule) -> dict:
    return {"kind": g.kind, "lambda_max": g.lambda_max, "lambda_min": g.lambda_min, "k": g.decay_rate}


def _take(table: dict, cls, where: str, convert=None):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = dict(table)
    for k, fn in (convert or {}).items():
        if k in kwargs:
            kwargs[k] = fn(kwargs[k])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _source_from(table: dict, i: int) -> SourceConfig:
    where = f"sources[{i}]"
    table = dict(table)
    if "lambda" in table and "guidance" in table:
        raise ConfigError(f"{where}: give either lambda or a guidance table, not both")
    if "lambda" in table:
        guidance = GuidanceSchedule.constant(float(table.pop("lambda")))
    else:
        guidance = _guidance_from(table.pop("guidance", {}), where)
    if "condition" in table:
        table["adapted_condition"] = table.pop("condition")
    table["guidance"] = guidance
    return _take(table, SourceConfig, where)


_TOP_KEYS = {
    "name", "schedule", "triad", "guidance", "sources", "samplers", "eta",
    "sweep", "n_samples", "seed_base", "output_dir", "training",
}


def parse_config(doc: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if "triad" not in doc or "target" not in doc["triad"]:
        raise ConfigError("config needs a [triad] section with a target model")
    training = None
    if "training" in doc:
        training = _take(
            doc["training"],
            TrainingConfig,
            "training",
            {"shift": lambda v: tuple(float(x) for x in v), "base_hidden": tuple, "target_hidden": tuple},
        )
    try:
        return ExperimentConfig(
            name=str(doc.get("name", "experiment")),
            schedule=_take(doc.get("schedule", {}), ScheduleConfig, "schedule"),
            triad=_take(doc["triad"], TriadConfig, "triad"),
            guidance=_guidance_from(doc.get("guidance", {}), "guidance"),
            sources=tuple(_source_from(s, i) for i, s in enumerate(doc.get("sources", []))),
            samplers=tuple(doc.get("samplers", ("euler",))),
            eta=float(doc.get("eta", 0.0)),
            sweep=_take(doc.get("sweep", {}), SweepConfig, "sweep"),
            n_samples=int(doc.get("n_samples", 1000)),
            seed_base=int(doc.get("seed_base", 42)),
            output_dir=str(doc.get("output_dir", "runs")),
            training=training,
            base_dir=Path(base_dir),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "name": cfg.name,
        "samplers": list(cfg.samplers),
        "eta": cfg.eta,
        "n_samples": cfg.n_samples,
        "seed_base": cfg.seed_base,
        "output_dir": cfg.output_dir,
        "schedule": _drop_none(vars(cfg.schedule).copy()),
        "triad": _drop_none(vars(cfg.triad).copy()),
        "guidance": _guidance_table(cfg.guidance),
        "sweep": vars(cfg.sweep).copy(),
    }
    if cfg.sources:
        doc["sources"] = [
            _drop_none(
                {
                    "base": s.base,
                    "adapted": s.adapted,
                    "base_condition": s.base_condition,
                    "condition": s.adapted_condition,
                    "guidance": _guidance_table(s.guidance),
                }
            )
            for s in cfg.sources
        ]
    if cfg.training is not None:
        t = vars(cfg.training).copy()
        for k in ("shift", "base_hidden", "target_hidden"):
            t[k] = list(t[k])
        doc["training"] = t
    return doc


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, path.parent)
