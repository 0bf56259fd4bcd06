"""``ds`` command line: sample, sweep, train, metrics, plot.

Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a run
aborts (non-finite sampler state, diverged training).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..denoiser import TrainingDiverged
from ..guidance import as_noise_predictor
from ..metrics import MetricError, SampleBatch, diversity, energy_distance
from ..samplers import SamplerAbort, SamplerKind, sample_batch
from .config import ExperimentConfig, SweepConfig, load_config
from .experiment import build_guided, run_sweep, run_training_pipeline
from .modelspec import ConfigError
from .output import emit_svg_scatter, read_samples_csv, write_samples_csv, write_trajectory_csv

log = logging.getLogger("deltasampling")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "steps", None) is not None:
        changes["schedule"] = replace(cfg.schedule, T=args.steps)
    if getattr(args, "seed", None) is not None:
        changes["seed_base"] = args.seed
    if getattr(args, "n", None) is not None:
        changes["n_samples"] = args.n
    if getattr(args, "eta", None) is not None:
        changes["eta"] = args.eta
    if getattr(args, "sampler", None):
        changes["samplers"] = tuple(args.sampler)
    if getattr(args, "lambdas", None):
        start, stop, step = args.lambdas
        changes["sweep"] = SweepConfig(start, stop, step)
    if getattr(args, "out_dir", None):
        changes["output_dir"] = str(Path(args.out_dir).resolve())
    return cfg.override(**changes) if changes else cfg


def cmd_sample(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    sched = cfg.schedule.build()
    guided = build_guided(cfg, sched)
    if args.lam is not None:
        guided = guided.scaled(args.lam)
    name = cfg.samplers[0]
    kind = SamplerKind(name, cfg.eta if name == "ddim" else 0.0)
    seeds = range(cfg.seed_base, cfg.seed_base + cfg.n_samples)
    res = sample_batch(kind, sched, as_noise_predictor(guided), seeds, args.record_trajectory)
    out = cfg.resolved_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = write_samples_csv(res.samples, res.seeds, out / f"{cfg.name}_samples.csv")
    print(path)
    if args.record_trajectory:
        tpath = write_trajectory_csv(res.trajectory[:, 0, :], sched.num_steps, out / f"{cfg.name}_trajectory.csv")
        print(tpath)
    return 0


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_sweep(cfg)
    for path in result.artifacts:
        print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    paths = run_training_pipeline(cfg)
    for role, path in paths.items():
        print(f"{role}\t{path}")
    return 0


def cmd_metrics(args) -> int:
    a = SampleBatch(read_samples_csv(args.samples))
    print(f"diversity\t{diversity(a):.9g}")
    if args.reference:
        b = SampleBatch(read_samples_csv(args.reference))
        print(f"transfer_error\t{energy_distance(a, b):.9g}")
    return 0


def cmd_plot(args) -> int:
    batches = [SampleBatch(read_samples_csv(p)) for p in args.inputs]
    labels = [Path(p).stem for p in args.inputs]
    emit_svg_scatter(batches, args.out, {"labels": labels})
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ds", description="Delta sampling experiments on toy diffusion models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, sampler_multi: bool):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--steps", type=int, help="override schedule.T")
        sp.add_argument("--seed", type=int, help="override seed_base")
        sp.add_argument("--n", type=int, help="override n_samples")
        sp.add_argument("--eta", type=float, help="DDIM eta")
        sp.add_argument(
            "--sampler",
            choices=("ddpm", "ddim", "euler", "heun"),
            action="append" if sampler_multi else None,
            type=str if sampler_multi else None,
        )
        sp.add_argument("--out-dir", help="override output_dir")

    sp = sub.add_parser("sample", help="draw guided samples")
    common(sp, sampler_multi=False)
    sp.add_argument("--lambda", dest="lam", type=float, help="scale every source's guidance schedule")
    sp.add_argument("--record-trajectory", action="store_true", help="also export the first seed's trajectory")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("sweep", help="lambda sweep with CSV and SVG output")
    common(sp, sampler_multi=True)
    sp.add_argument("--lambdas", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("train", help="train base/adapted/target/oracle toy denoisers")
    common(sp, sampler_multi=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("metrics", help="diversity of a samples CSV and energy distance to a reference")
    sp.add_argument("samples", type=Path)
    sp.add_argument("reference", type=Path, nargs="?")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("plot", help="scatter plot of samples CSV files")
    sp.add_argument("inputs", type=Path, nargs="+")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "sampler", None) and isinstance(args.sampler, str):
        args.sampler = [args.sampler]
    try:
        return args.func(args)
    except (ConfigError, MetricError) as exc:
        print(f"ds: config error: {exc}", file=sys.stderr)
        return 1
    except (SamplerAbort, TrainingDiverged) as exc:
        print(f"ds: run aborted: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"ds: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
