"""Lambda sweeps and the toy training pipeline."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets import make_dataset
from ..denoiser import TrainConfig, fine_tune, save_mlp, train_denoiser
from ..guidance import DeltaSource, GuidedPredictor, as_noise_predictor
from ..metrics import SampleBatch, diversity, transfer_error
from ..samplers import SamplerAbort, SamplerKind, sample_batch
from .config import ExperimentConfig
from .modelspec import ConfigError, load_predictor, parse_analytic_spec
from .output import emit_csv, emit_svg_scatter, sweep_plot_batches

__all__ = [
    "ExperimentResult",
    "SweepRow",
    "build_guided",
    "oracle_batch",
    "run_sweep",
    "run_training_pipeline",
    "sweep_lambda",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRow:
    lam: float
    sampler: str
    transfer_error: float
    diversity: float
    n_samples: int
    seed_base: int
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)  # (sampler, lam) -> SampleBatch
    oracles: dict = field(default_factory=dict)  # sampler -> SampleBatch
    artifacts: list = field(default_factory=list)


def build_guided(cfg: ExperimentConfig, sched=None) -> GuidedPredictor:
    """Target predictor with every configured source at its configured schedule."""
    sched = cfg.schedule.build() if sched is None else sched
    target = load_predictor(cfg.triad.target, sched, cfg.base_dir)
    sources = []
    for s in cfg.all_sources:
        base = load_predictor(s.base, sched, cfg.base_dir)
        adapted = load_predictor(s.adapted, sched, cfg.base_dir)
        sources.append(DeltaSource(base, adapted, s.guidance, s.base_condition, s.adapted_condition))
    try:
        return GuidedPredictor(target, tuple(sources), cfg.triad.target_condition)
    except ValueError as exc:
        raise ConfigError(f"triad models disagree: {exc}") from None


def _ds_seeds(cfg: ExperimentConfig) -> range:
    return range(cfg.seed_base, cfg.seed_base + cfg.n_samples)


def oracle_batch(cfg: ExperimentConfig, sampler: SamplerKind, sched=None) -> SampleBatch:
    """Reference samples for the transfer error.

    ``exact`` draws directly from the analytic oracle distribution;
    ``sampler`` runs the oracle model through the same sampler. Both use a
    seed range disjoint from the guided runs.
    """
    if cfg.triad.oracle is None:
        raise ConfigError("triad.oracle is required to compute transfer error")
    n = cfg.n_samples
    seed0 = cfg.seed_base + n
    if cfg.triad.oracle_sampling == "exact":
        model = parse_analytic_spec(cfg.triad.oracle, cfg.base_dir)
        pts = model.sample(n, np.random.default_rng(seed0))
        prov = {"oracle": cfg.triad.oracle, "mode": "exact", "seed": seed0}
    else:
        sched = cfg.schedule.build() if sched is None else sched
        pred = load_predictor(cfg.triad.oracle, sched, cfg.base_dir)
        pts = sample_batch(sampler, sched, pred, range(seed0, seed0 + n), condition=cfg.triad.target_condition).samples
        prov = {"oracle": cfg.triad.oracle, "mode": "sampler", "sampler": str(sampler), "seeds": (seed0, seed0 + n - 1)}
    return SampleBatch(pts, prov)


def sweep_lambda(cfg: ExperimentConfig, keep_batches: bool = True) -> ExperimentResult:
    """Sample every (sampler, lambda) grid point and score it against the oracle."""
    sched = cfg.schedule.build()
    guided = build_guided(cfg, sched)
    lambdas = cfg.sweep.values()
    result = ExperimentResult()
    exact_oracle = None
    for name in cfg.samplers:
        kind = SamplerKind(name, cfg.eta if name == "ddim" else 0.0)
        if cfg.triad.oracle_sampling == "exact":
            if exact_oracle is None:
                exact_oracle = oracle_batch(cfg, kind, sched)
            oracle = exact_oracle
        else:
            oracle = oracle_batch(cfg, kind, sched)
        result.oracles[name] = oracle
        for lam in lambdas:
            predictor = as_noise_predictor(guided.scaled(lam))
            try:
                run = sample_batch(kind, sched, predictor, _ds_seeds(cfg))
            except SamplerAbort as exc:
                raise SamplerAbort(f"{exc} (sampler={name}, lambda={lam})", exc.step) from exc
            batch = SampleBatch(
                run.samples,
                {"seeds": (cfg.seed_base, cfg.seed_base + cfg.n_samples - 1), "sampler": str(kind), "lambda": lam},
            )
            row = SweepRow(
                lam, name, transfer_error(batch, oracle), diversity(batch), cfg.n_samples, cfg.seed_base, run.wall_time
            )
            log.info("%s lambda=%g transfer_error=%.5f diversity=%.5f", name, lam, row.transfer_error, row.diversity)
            result.rows.append(row)
            if keep_batches:
                result.batches[(name, lam)] = batch
    result.rows.sort(key=lambda r: (r.sampler, r.lam))
    return result


def run_sweep(cfg: ExperimentConfig, out_dir: Path | None = None) -> ExperimentResult:
    """Sweep and write ``<name>.csv`` plus one ``<name>_<sampler>.svg`` per sampler."""
    out = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    result = sweep_lambda(cfg)
    csv_path = out / f"{cfg.name}.csv"
    emit_csv(result, csv_path)
    result.artifacts.append(csv_path)
    for name in cfg.samplers:
        batches, labels = sweep_plot_batches(result, name)
        svg_path = out / f"{cfg.name}_{name}.svg"
        emit_svg_scatter(batches, svg_path, {"labels": labels, "title": f"{cfg.name} ({name})"})
        result.artifacts.append(svg_path)
    return result


def run_training_pipeline(cfg: ExperimentConfig, out_dir: Path | None = None) -> dict[str, Path]:
    """Train base, adapted, target and oracle MLPs and save them as ``.dsmlp`` files.

    base:    ``base_hidden`` trained on the dataset
    adapted: base fine-tuned on the shifted dataset
    target:  ``target_hidden`` trained on the dataset
    oracle:  target fine-tuned directly on the shifted dataset
    """
    tc = cfg.training
    if tc is None:
        raise ConfigError("config has no [training] section")
    sched = cfg.schedule.build()
    out = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir() / tc.model_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        data = make_dataset(tc.dataset, tc.n_points, tc.data_seed)
        shifted = make_dataset(tc.dataset, tc.n_points, tc.data_seed + 1, shift=tc.shift)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    def tcfg(steps, offset):
        return TrainConfig(steps=steps, batch_size=tc.batch_size, learning_rate=tc.learning_rate, seed=tc.seed + offset)

    started = time.perf_counter()
    base = train_denoiser(data, sched, tcfg(tc.steps, 0), tc.base_hidden)
    adapted = fine_tune(base, shifted, sched, tcfg(tc.fine_tune_steps, 1))
    target = train_denoiser(data, sched, tcfg(tc.steps, 2), tc.target_hidden)
    oracle = fine_tune(target, shifted, sched, tcfg(tc.fine_tune_steps, 3))
    log.info("trained four denoisers in %.1fs", time.perf_counter() - started)
    paths = {}
    for role, model in (("base", base), ("adapted", adapted), ("target", target), ("oracle", oracle)):
        paths[role] = out / f"{role}.dsmlp"
        save_mlp(model, paths[role])
    return paths
