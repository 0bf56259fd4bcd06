import math
import xml.etree.ElementTree as ET
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from deltasampling.analytic import GaussianModel, GmmModel, GridPredictor, save_grid
from deltasampling.harness.cli import main
from deltasampling.harness.config import (
    ExperimentConfig,
    ScheduleConfig,
    SourceConfig,
    SweepConfig,
    TrainingConfig,
    TriadConfig,
    dump_config,
    load_config,
    parse_config,
)
from deltasampling.harness.experiment import ExperimentResult, SweepRow, build_guided, run_sweep, run_training_pipeline, sweep_lambda
from deltasampling.harness.modelspec import (
    ConfigError,
    format_model_spec,
    load_analytic_model,
    load_predictor,
    parse_analytic_spec,
    save_analytic_model,
)
from deltasampling.harness.output import emit_csv, emit_svg_scatter, read_samples_csv, write_samples_csv
from deltasampling.metrics import SampleBatch
from deltasampling.schedule import GuidanceSchedule, build_schedule

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

GAUSS_TRIAD = TriadConfig(
    target="gaussian: mean=[-2,3] cov=I",
    oracle="gaussian: mean=[-1,3] cov=I",
    base="gaussian: mean=[0.5,-1] cov=I",
    adapted="gaussian: mean=[1.5,-1] cov=I",
)


def gauss_cfg(**kw):
    base = dict(triad=GAUSS_TRIAD, name="g", schedule=ScheduleConfig(T=64), n_samples=400)
    base.update(kw)
    return ExperimentConfig(**base)


# -- model specs ---------------------------------------------------------------------


def test_parse_inline_specs():
    g = parse_analytic_spec("gaussian: mean=[0,0] cov=I")
    assert g == GaussianModel([0.0, 0.0], 1.0)
    g = parse_analytic_spec("gaussian: mean=[1, 2] cov=[[1,0.2],[0.2,1]]")
    np.testing.assert_array_equal(g.cov, [[1, 0.2], [0.2, 1]])
    m = parse_analytic_spec("gmm: weights=[0.25,0.75] means=[[-2,0],[2,0]] cov=0.5")
    assert isinstance(m, GmmModel) and [w for w, _ in m.components] == [0.25, 0.75]
    m = parse_analytic_spec("gmm: means=[[-2,0],[2,0]] cov=[0.5,2]")
    assert [g.cov for _, g in m.components] == [0.5, 2.0]


@pytest.mark.parametrize(
    "spec",
    ["gaussian: cov=I", "gmm: weights=[1] means=[[0,0],[1,1]]", "gaussian: mean=[0,0] cov=-1", "gaussian: mean=[0,x]"],
)
def test_bad_specs(spec):
    with pytest.raises(ConfigError):
        parse_analytic_spec(spec)


def test_format_round_trip():
    models = [
        GaussianModel([0.5, -1.0]),
        GaussianModel([1.0, 2.0], [[1.0, 0.3], [0.3, 0.5]]),
        GmmModel(((0.4, GaussianModel([-2.0, 0.5], 0.3)), (0.6, GaussianModel([2.0, -0.5], 0.25)))),
    ]
    for m in models:
        back = parse_analytic_spec(format_model_spec(m))
        assert (back == m) if isinstance(m, GaussianModel) else back.components == m.components


def test_analytic_model_file(tmp_path):
    m = GmmModel(
        ((0.5, GaussianModel([0.0, 0.0])), (0.5, GaussianModel([1.0, 1.0], [[1.0, 0.1], [0.1, 1.0]]))),
        {"style": ((1.0, GaussianModel([3.0, 3.0], 0.5)),)},
    )
    path = tmp_path / "m.toml"
    save_analytic_model(m, path)
    assert load_analytic_model(path) == m
    path.write_text('format = "OTHER"\n')
    with pytest.raises(ConfigError):
        load_analytic_model(path)


def test_load_predictor_checks_T(tmp_path):
    gp = GridPredictor.from_function(lambda x, t: x * 0, [-1, -1], [1, 1], 3, 8)
    save_grid(gp, tmp_path / "g.dsgrid")
    assert load_predictor("g.dsgrid", build_schedule("linear_beta", 8), tmp_path).num_steps == 8
    with pytest.raises(ConfigError):
        load_predictor("grid: g.dsgrid", build_schedule("linear_beta", 16), tmp_path)
    with pytest.raises(ConfigError):
        load_predictor("mlp: missing.dsmlp", build_schedule("linear_beta", 16), tmp_path)


# -- config --------------------------------------------------------------------------


def full_cfg():
    return ExperimentConfig(
        triad=replace(GAUSS_TRIAD, target_condition="c", oracle_sampling="exact"),
        name="full",
        schedule=ScheduleConfig("cosine_alpha_bar", 32),
        guidance=GuidanceSchedule("exponential", 2.0, 0.25, 3.0),
        sources=(
            SourceConfig("gaussian: mean=[0,0] cov=I", "gaussian: mean=[0,-1] cov=I", GuidanceSchedule.constant(0.5)),
            SourceConfig("a.toml", "b.toml", GuidanceSchedule("cosine", 1.5, 0.5), "c0", "c1"),
        ),
        samplers=("euler", "ddim", "heun"),
        eta=0.25,
        sweep=SweepConfig(0.0, 1.0, 0.25),
        n_samples=123,
        seed_base=7,
        output_dir="out",
        training=TrainingConfig(steps=10, base_hidden=(8,), target_hidden=(4, 4, 4)),
    )


def test_config_round_trip():
    cfg = full_cfg()
    text = dump_config(cfg)
    assert parse_config(tomllib.loads(text)) == cfg
    assert dump_config(parse_config(tomllib.loads(text))) == text


def test_config_defaults_follow_protocol():
    cfg = parse_config({"triad": {"target": "gaussian: mean=[0,0] cov=I"}})
    assert cfg.schedule.T == 16 and cfg.samplers == ("euler",) and cfg.seed_base == 42
    assert cfg.sweep.values() == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]


def test_source_lambda_shorthand():
    doc = {"triad": {"target": "gaussian: mean=[0,0] cov=I"}, "sources": [{"base": "x.toml", "adapted": "y.toml", "lambda": 0.7, "condition": "s"}]}
    src = parse_config(doc).sources[0]
    assert src.guidance == GuidanceSchedule.constant(0.7) and src.adapted_condition == "s"


@pytest.mark.parametrize(
    "doc",
    [
        {},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "bogus": 1},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "sweep": {"start": 2.0, "stop": 1.0}},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "sweep": {"step": 0.0}},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "n_samples": 1},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "samplers": ["plms"]},
        {"triad": {"target": "gaussian: mean=[0] cov=I", "base": "gaussian: mean=[0] cov=I"}},
        {"triad": {"target": "gaussian: mean=[0] cov=I", "oracle": "m.dsmlp"}},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "schedule": {"T": 1}},
        {"triad": {"target": "gaussian: mean=[0] cov=I"}, "guidance": {"kind": "linear", "lambda_max": 1, "lambda_min": 2}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_dimension_disagreement_is_config_error():
    cfg = gauss_cfg(triad=replace(GAUSS_TRIAD, target="gaussian: mean=[0,0,0] cov=I"))
    with pytest.raises(ConfigError):
        build_guided(cfg)


def test_output_dir_env(monkeypatch, tmp_path):
    cfg = gauss_cfg(output_dir="rel")
    monkeypatch.delenv("DS_OUTPUT_DIR", raising=False)
    assert cfg.resolved_output_dir() == Path(".") / "rel"
    monkeypatch.setenv("DS_OUTPUT_DIR", str(tmp_path))
    assert cfg.resolved_output_dir() == tmp_path


# -- CSV and SVG -----------------------------------------------------------------------


GOLDEN = (
    "# transfer_error: energy distance to the oracle batch, lower is better (similarity analogue)\n"
    "lambda,sampler,transfer_error,diversity,n_samples,seed_base\n"
    "0,euler,0.123456789,1.77245385,1000,42\n"
    "0.2,euler,1e-05,2,1000,42\n"
)


def test_emit_csv_golden(tmp_path):
    res = ExperimentResult(
        rows=[
            SweepRow(0.2, "euler", 1e-5, 2.0, 1000, 42, wall_time=3.0),
            SweepRow(0.0, "euler", 0.1234567891234, math.sqrt(math.pi), 1000, 42, wall_time=1.0),
        ]
    )
    p = emit_csv(res, tmp_path / "a.csv")
    assert p.read_bytes() == GOLDEN.encode()
    assert emit_csv(res, tmp_path / "b.csv").read_bytes() == p.read_bytes()


def test_emit_csv_empty(tmp_path):
    text = emit_csv(ExperimentResult(), tmp_path / "e.csv").read_text()
    assert text.splitlines() == GOLDEN.splitlines()[:2]


def test_samples_csv_round_trip(tmp_path, rng):
    pts = rng.normal(size=(20, 3))
    write_samples_csv(pts, range(20), tmp_path / "s.csv")
    np.testing.assert_array_equal(read_samples_csv(tmp_path / "s.csv"), pts)


def svg_tree(path):
    return ET.parse(path).getroot()


NS = "{http://www.w3.org/2000/svg}"


def test_svg_single_point(tmp_path):
    p = emit_svg_scatter([SampleBatch([[0.0, 0.0]])], tmp_path / "one.svg")
    root = svg_tree(p)
    assert len(root.findall(f".//{NS}circle")) == 1


def test_svg_two_batches_two_colours(tmp_path, rng):
    p = emit_svg_scatter([SampleBatch(rng.normal(size=(30, 2))), SampleBatch(rng.normal(size=(12, 2)))], tmp_path / "two.svg")
    root = svg_tree(p)
    groups = root.findall(f"{NS}g")
    assert [len(g.findall(f"{NS}circle")) for g in groups] == [30, 12]
    assert len({g.get("fill") for g in groups}) == 2


def test_svg_viewbox_margin(tmp_path):
    p = emit_svg_scatter([SampleBatch([[0.0, 0.0], [10.0, 20.0]])], tmp_path / "v.svg")
    x, y, w, h = map(float, svg_tree(p).get("viewBox").split())
    assert (x, w) == pytest.approx((-0.5, 11.0))
    assert (y, h) == pytest.approx((-21.0, 22.0))


def test_svg_deterministic_and_2d_only(tmp_path, rng):
    b = [SampleBatch(rng.normal(size=(50, 2)))]
    a1 = emit_svg_scatter(b, tmp_path / "a.svg").read_bytes()
    a2 = emit_svg_scatter(b, tmp_path / "b.svg").read_bytes()
    assert a1 == a2
    with pytest.raises(ValueError):
        emit_svg_scatter([SampleBatch(rng.normal(size=(5, 3)))], tmp_path / "c.svg")


# -- sweeps --------------------------------------------------------------------------


def test_single_point_sweep_equals_unguided():
    guided = sweep_lambda(gauss_cfg(sweep=SweepConfig(0.0, 0.0, 0.1)))
    plain = sweep_lambda(gauss_cfg(triad=replace(GAUSS_TRIAD, base=None, adapted=None), sweep=SweepConfig(0.0, 0.0, 0.1)))
    assert guided.rows == plain.rows
    assert len(guided.rows) == 1


def test_lambda_zero_row_equals_sourceless_sweep():
    cfg = gauss_cfg(samplers=("euler", "ddpm"), sweep=SweepConfig(0.0, 1.0, 0.5))
    full = sweep_lambda(cfg)
    plain = sweep_lambda(replace(cfg, triad=replace(GAUSS_TRIAD, base=None, adapted=None)))
    zero_rows = [r for r in full.rows if r.lam == 0.0]
    assert zero_rows == [r for r in plain.rows if r.lam == 0.0]
    assert [(r.sampler, r.lam) for r in full.rows] == sorted((s, l) for s in ("euler", "ddpm") for l in (0.0, 0.5, 1.0))


def test_gaussian_sweep_minimised_at_one():
    res = sweep_lambda(gauss_cfg(n_samples=4000), keep_batches=False)
    best = min(res.rows, key=lambda r: r.transfer_error)
    assert best.lam == 1.0
    # a pure mean shift leaves the spread alone
    divs = [r.diversity for r in res.rows]
    assert max(divs) - min(divs) < 1e-9 * max(divs)


def test_two_source_composition_config():
    cfg = ExperimentConfig(
        triad=TriadConfig(target="gaussian: mean=[-2,3] cov=I", base="gaussian: mean=[0,0] cov=I", adapted="gaussian: mean=[1,0] cov=I"),
        sources=(SourceConfig("gaussian: mean=[4,4] cov=I", "gaussian: mean=[4,3] cov=I"),),
        schedule=ScheduleConfig(T=64),
        samplers=("ddim",),
    )
    from deltasampling.guidance import as_noise_predictor
    from deltasampling.samplers import sample_batch

    sched = cfg.schedule.build()
    n = 4000
    x0 = sample_batch("ddim", sched, as_noise_predictor(build_guided(cfg, sched)), range(42, 42 + n)).samples
    bound = 3 * x0.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(x0.mean(axis=0) - np.array([-1.0, 2.0])) < bound)


def test_run_sweep_writes_artifacts(tmp_path):
    cfg = gauss_cfg(samplers=("euler", "heun"), sweep=SweepConfig(0.0, 1.0, 0.5), n_samples=50)
    res = run_sweep(cfg, tmp_path)
    names = sorted(p.name for p in res.artifacts)
    assert names == ["g.csv", "g_euler.svg", "g_heun.svg"]
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert len(lines) == 2 + 6
    # oracle plus first, middle and last lambda
    assert len(svg_tree(tmp_path / "g_euler.svg").findall(f"{NS}g")) == 4


def test_sampler_oracle_mode():
    cfg = gauss_cfg(triad=replace(GAUSS_TRIAD, oracle_sampling="sampler"), sweep=SweepConfig(0.0, 1.0, 1.0), n_samples=300)
    res = sweep_lambda(cfg)
    prov = res.oracles["euler"].provenance
    assert prov["mode"] == "sampler" and prov["seeds"] == (342, 641)
    assert res.rows[1].transfer_error < res.rows[0].transfer_error


# -- training pipeline ------------------------------------------------------------------


TINY_TRAIN = TrainingConfig(n_points=300, base_hidden=(8,), target_hidden=(6, 6, 6), steps=60, fine_tune_steps=30, batch_size=32)


def test_training_pipeline_deterministic(tmp_path):
    cfg = gauss_cfg(schedule=ScheduleConfig(T=16), training=TINY_TRAIN)
    a = run_training_pipeline(cfg, tmp_path / "a")
    b = run_training_pipeline(cfg, tmp_path / "b")
    assert sorted(a) == ["adapted", "base", "oracle", "target"]
    for role in a:
        assert a[role].read_bytes() == b[role].read_bytes()


def test_training_needs_section():
    with pytest.raises(ConfigError):
        run_training_pipeline(gauss_cfg())


# -- CLI ---------------------------------------------------------------------------------


def write_cfg(tmp_path, cfg, name="exp.toml"):
    path = tmp_path / name
    path.write_text(dump_config(cfg))
    return path


def test_cli_sweep_and_env(tmp_path, monkeypatch, capsys):
    out = tmp_path / "env_out"
    monkeypatch.setenv("DS_OUTPUT_DIR", str(out))
    cfg = write_cfg(tmp_path, gauss_cfg(n_samples=40, sweep=SweepConfig(0.0, 1.0, 0.5)))
    assert main(["sweep", "--config", str(cfg), "--sampler", "ddim", "--sampler", "ddpm", "--steps", "16"]) == 0
    assert (out / "g.csv").exists() and (out / "g_ddim.svg").exists() and (out / "g_ddpm.svg").exists()
    rows = (out / "g.csv").read_text().splitlines()[2:]
    assert len(rows) == 6


def test_cli_sample_metrics_plot(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("DS_OUTPUT_DIR", raising=False)
    cfg = write_cfg(tmp_path, gauss_cfg(n_samples=30))
    out = tmp_path / "o"
    assert main(["sample", "--config", str(cfg), "--out-dir", str(out), "--lambda", "1", "--record-trajectory", "--sampler", "heun"]) == 0
    samples, traj = out / "g_samples.csv", out / "g_trajectory.csv"
    assert read_samples_csv(samples).shape == (30, 2)
    lines = traj.read_text().splitlines()
    assert lines[0] == "t,x0,x1" and lines[1].startswith("64,") and lines[-1].startswith("0,") and len(lines) == 66
    capsys.readouterr()
    assert main(["metrics", str(samples), str(samples)]) == 0
    text = capsys.readouterr().out
    assert "transfer_error\t0\n" in text and "diversity\t" in text
    assert main(["plot", str(samples), "--out", str(out / "p.svg")]) == 0
    assert len(svg_tree(out / "p.svg").findall(f".//{NS}circle")) == 30


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path, capsys):
    assert main(["sweep", "--config", str(tmp_path / "missing.toml")]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text("n_samples = 1\n[triad]\ntarget = 'gaussian: mean=[0] cov=I'\n")
    assert main(["sweep", "--config", str(bad)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["sweep"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    # a tabulated model full of infinities makes the sampler abort
    save_grid(GridPredictor([-1.0], [1.0], np.full((16, 2, 1), np.inf)), tmp_path / "inf.dsgrid")
    cfg = write_cfg(
        tmp_path,
        ExperimentConfig(triad=TriadConfig(target="grid: inf.dsgrid", oracle="gaussian: mean=[0] cov=I"), n_samples=4, output_dir="o"),
        "abort.toml",
    )
    assert main(["sweep", "--config", str(cfg)]) == 2
    assert "aborted" in capsys.readouterr().err


def test_cli_train_then_sweep_mlp(tmp_path, monkeypatch):
    monkeypatch.delenv("DS_OUTPUT_DIR", raising=False)
    cfg = ExperimentConfig(
        triad=TriadConfig(
            target="mlp: out/models/target.dsmlp",
            oracle="mlp: out/models/oracle.dsmlp",
            base="mlp: out/models/base.dsmlp",
            adapted="mlp: out/models/adapted.dsmlp",
            oracle_sampling="sampler",
        ),
        name="moons",
        schedule=ScheduleConfig(T=16),
        sweep=SweepConfig(0.0, 1.0, 1.0),
        n_samples=50,
        output_dir="out",
        training=TINY_TRAIN,
    )
    path = write_cfg(tmp_path, cfg)
    assert main(["train", "--config", str(path)]) == 0
    assert (tmp_path / "out" / "models" / "oracle.dsmlp").exists()
    assert main(["sweep", "--config", str(path)]) == 0
    assert len((tmp_path / "out" / "moons.csv").read_text().splitlines()) == 4
    assert main(["sweep", "--config", str(path), "--steps", "8"]) == 1  # models were trained for T=16
