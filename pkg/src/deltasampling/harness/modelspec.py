"""Model references used in experiment configs.

A reference is either an inline analytic spec::

    gaussian: mean=[0,0] cov=I
    gaussian: mean=[1,0] cov=0.5
    gaussian: mean=[0,0] cov=[[1,0.2],[0.2,1]]
    gmm: weights=[0.5,0.5] means=[[-2,0],[2,0]] cov=0.25

or a file, ``mlp: path``, ``grid: path`` or ``analytic: path``, where the
analytic file is TOML with ``format = "DSGMM1"``. A bare path is resolved
by its extension (.dsmlp, .dsgrid, .toml).
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from ..analytic import AnalyticPredictor, GaussianModel, GmmModel, load_grid
from ..denoiser import load_mlp
from ..schedule import VarianceSchedule

__all__ = [
    "ConfigError",
    "format_model_spec",
    "is_analytic_spec",
    "load_analytic_model",
    "load_predictor",
    "parse_analytic_spec",
    "save_analytic_model",
]

ANALYTIC_MAGIC = "DSGMM1"


class ConfigError(ValueError):
    pass


_KV = re.compile(r"(\w+)\s*=\s*(\[.*?\](?=\s+\w+\s*=|\s*$)|\S+)")


def _parse_kv(body: str) -> dict:
    out = {}
    for key, raw in _KV.findall(body.strip()):
        if raw == "I":
            out[key] = 1.0
            continue
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"cannot parse value {raw!r} for {key!r}") from None
    return out


def _cov(value):
    return float(value) if np.ndim(value) == 0 else np.asarray(value, dtype=np.float64)


def _split(spec: str) -> tuple[str, str]:
    if ":" not in spec:
        return "", spec.strip()
    kind, body = spec.split(":", 1)
    return kind.strip().lower(), body.strip()


def is_analytic_spec(spec: str) -> bool:
    kind, body = _split(spec)
    if kind in ("gaussian", "gmm", "analytic"):
        return True
    return kind == "" and body.endswith(".toml")


def parse_analytic_spec(spec: str, base_dir: Path | str = ".") -> GaussianModel | GmmModel:
    kind, body = _split(spec)
    try:
        if kind == "gaussian":
            kv = _parse_kv(body)
            return GaussianModel(kv["mean"], _cov(kv.get("cov", 1.0)))
        if kind == "gmm":
            kv = _parse_kv(body)
            means = kv["means"]
            weights = kv.get("weights", [1.0 / len(means)] * len(means))
            cov = kv.get("cov", 1.0)
            # one scalar/matrix for all components, or one per component
            per_comp = np.ndim(cov) == 1 or (np.ndim(cov) == 3)
            covs = [_cov(c) for c in cov] if per_comp else [_cov(cov)] * len(means)
            if not (len(weights) == len(means) == len(covs)):
                raise ConfigError(f"gmm spec has mismatched lengths: {spec!r}")
            return GmmModel(tuple((w, GaussianModel(m, c)) for w, m, c in zip(weights, means, covs)))
        if kind == "analytic" or (kind == "" and body.endswith(".toml")):
            return load_analytic_model(Path(base_dir) / body)
    except KeyError as exc:
        raise ConfigError(f"model spec {spec!r} is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model spec {spec!r}: {exc}") from None
    raise ConfigError(f"not an analytic model spec: {spec!r}")


def _num(v: float):
    return int(v) if float(v).is_integer() else float(v)


def _json(arr) -> str:
    return json.dumps(np.asarray(arr, dtype=np.float64).tolist())


def format_model_spec(model: GaussianModel | GmmModel) -> str:
    """Inline spec string for an analytic model (conditions are not representable)."""

    def cov_text(g: GaussianModel):
        return json.dumps(_num(g.cov)) if g.isotropic else _json(g.cov)

    if isinstance(model, GaussianModel):
        return f"gaussian: mean={_json(model.mean)} cov={cov_text(model)}"
    if model.conditions:
        raise ValueError("models with per-condition parameters need a model file")
    weights = json.dumps([w for w, _ in model.components])
    means = json.dumps([g.mean.tolist() for _, g in model.components])
    covs = "[" + ",".join(cov_text(g) for _, g in model.components) + "]"
    return f"gmm: weights={weights} means={means} cov={covs}"


def _component_table(components) -> list[dict]:
    out = []
    for w, g in components:
        cov = g.cov if g.isotropic else g.cov.tolist()
        out.append({"weight": w, "mean": g.mean.tolist(), "cov": cov})
    return out


def save_analytic_model(model: GaussianModel | GmmModel, path) -> None:
    gmm = GmmModel.single(model) if isinstance(model, GaussianModel) else model
    doc = {"format": ANALYTIC_MAGIC, "components": _component_table(gmm.components)}
    if gmm.conditions:
        doc["conditions"] = {k: _component_table(v) for k, v in sorted(gmm.conditions.items())}
    Path(path).write_text(tomli_w.dumps(doc))


def load_analytic_model(path) -> GmmModel:
    try:
        doc = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read analytic model {path}: {exc}") from None
    if doc.get("format") != ANALYTIC_MAGIC:
        raise ConfigError(f"{path}: expected format = {ANALYTIC_MAGIC!r}")

    def comps(rows):
        return tuple((float(r["weight"]), GaussianModel(r["mean"], _cov(r.get("cov", 1.0)))) for r in rows)

    try:
        conditions = {k: comps(v) for k, v in doc.get("conditions", {}).items()}
        return GmmModel(comps(doc["components"]), conditions)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid analytic model ({exc})") from None


def load_predictor(spec: str, sched: VarianceSchedule, base_dir: Path | str = "."):
    """Resolve a model reference into a predictor bound to ``sched``."""
    if is_analytic_spec(spec):
        return AnalyticPredictor(parse_analytic_spec(spec, base_dir), sched)
    kind, body = _split(spec)
    path = Path(base_dir) / body
    if kind == "":
        kind = {".dsmlp": "mlp", ".dsgrid": "grid"}.get(path.suffix, "")
    try:
        if kind == "mlp":
            pred = load_mlp(path)
        elif kind == "grid":
            pred = load_grid(path)
        else:
            raise ConfigError(f"cannot tell what kind of model {spec!r} is")
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if pred.num_steps != sched.num_steps:
        raise ConfigError(f"{path} was built for T={pred.num_steps}, the experiment uses T={sched.num_steps}")
    return pred
