"""Small tanh MLP noise predictor with hand-written backpropagation.

Input is ``[x, emb(t)]`` where ``emb`` holds ``sin(2 pi f t / T)`` and
``cos(2 pi f t / T)`` for ``f`` in (1, 2, 4, 8). Hidden layers use tanh,
the output layer is linear. Weights are stored ``(out, in)``.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import PointCloudDataset
from .predictors import Condition, as_points
from .schedule import VarianceSchedule, forward_diffuse

__all__ = [
    "MlpDenoiser",
    "TrainConfig",
    "TrainingDiverged",
    "fine_tune",
    "fit",
    "init_mlp",
    "load_mlp",
    "mlp_forward",
    "mlp_gradient",
    "save_mlp",
    "time_embedding",
    "train_denoiser",
]

FREQUENCIES = (1.0, 2.0, 4.0, 8.0)
EMBED_WIDTH = 2 * len(FREQUENCIES)
MLP_MAGIC = "DSMLP1"


class TrainingDiverged(RuntimeError):
    pass


def time_embedding(t, num_steps: int) -> np.ndarray:
    """Sinusoidal features, shape ``(8,)`` for scalar ``t`` or ``(n, 8)`` for an array."""
    phase = 2.0 * math.pi * np.multiply.outer(np.asarray(t, dtype=np.float64) / num_steps, FREQUENCIES)
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


@dataclass(frozen=True, eq=False)
class MlpDenoiser:
    weights: tuple
    biases: tuple
    num_steps: int

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if not ws or len(ws) != len(bs):
            raise ValueError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i} expects {w.shape[1]} inputs, previous layer gives {ws[i - 1].shape[0]}")
        if ws[0].shape[1] != ws[-1].shape[0] + EMBED_WIDTH:
            raise ValueError("input width must be data dimension plus the time-embedding width")
        for arr in ws + bs:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def hidden(self) -> list[int]:
        return self.widths[1:-1]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_params(self, params: Sequence[np.ndarray]) -> MlpDenoiser:
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def predict(self, x, t: int, cond: Condition = None) -> np.ndarray:
        return mlp_forward(self, x, t)

    def same_weights(self, other: MlpDenoiser) -> bool:
        return self.num_steps == other.num_steps and all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.params(), other.params())
        )


def init_mlp(dim: int, hidden: Sequence[int], num_steps: int, rng: np.random.Generator) -> MlpDenoiser:
    """Uniform ``+-1/sqrt(fan_in)`` initialization for weights and biases."""
    widths = [dim + EMBED_WIDTH, *hidden, dim]
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpDenoiser(tuple(ws), tuple(bs), num_steps)


def _inputs(m: MlpDenoiser, x: np.ndarray, t) -> np.ndarray:
    emb = time_embedding(t, m.num_steps)
    if emb.ndim == 1:
        emb = np.broadcast_to(emb, (x.shape[0], EMBED_WIDTH))
    return np.concatenate([x, emb], axis=1)


def _forward(m: MlpDenoiser, x: np.ndarray, t) -> list[np.ndarray]:
    acts = [_inputs(m, x, t)]
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def mlp_forward(m: MlpDenoiser, x, t) -> np.ndarray:
    pts, single = as_points(x)
    if pts.shape[1] != m.dim:
        raise ValueError(f"model dimension {m.dim} does not match input shape {np.shape(x)}")
    out = _forward(m, pts, t)[-1]
    return out[0] if single else out


def _backward(m: MlpDenoiser, acts: list[np.ndarray], target: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``mean_n 0.5 * ||out_n - target_n||^2``, ordered like ``params()``."""
    n = target.shape[0]
    delta = (acts[-1] - target) / n
    grads = []
    for i in range(len(m.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(delta.T @ acts[i])
        if i:
            delta = (delta @ m.weights[i]) * (1.0 - acts[i] ** 2)
    return grads[::-1]


def mlp_gradient(m: MlpDenoiser, x, t, target) -> list[np.ndarray]:
    """Exact gradients of ``0.5 * ||m(x, t) - target||^2``.

    For a batch the loss is averaged over rows. The result is a list
    ``[dW0, db0, dW1, db1, ...]`` with the shapes of ``m.params()``.
    """
    pts, _ = as_points(x)
    tgt, _ = as_points(target)
    if pts.shape[1] != m.dim or tgt.shape != pts.shape:
        raise ValueError(f"shape mismatch: x {np.shape(x)}, target {np.shape(target)}, model dim {m.dim}")
    return _backward(m, _forward(m, pts, t), tgt)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch size must be >= 1 and steps >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def fit(
    model: MlpDenoiser,
    data: PointCloudDataset,
    sched: VarianceSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[MlpDenoiser, np.ndarray]:
    """Minimise the noise-prediction objective; returns the new model and per-step losses.

    Each step draws a minibatch, ``t`` uniform over ``1..T`` and standard
    normal noise, forms ``x_t`` in closed form and takes one optimizer step.
    The input model is left untouched.
    """
    if data.dim != model.dim:
        raise ValueError(f"dataset dimension {data.dim} does not match model dimension {model.dim}")
    if sched.num_steps != model.num_steps:
        raise ValueError("model and schedule disagree on the number of steps")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = [p.copy() for p in model.params()]
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    losses = np.empty(cfg.steps)
    pts = data.points
    T = sched.num_steps
    current = _unsafe_with_params(model, params)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(pts), size=cfg.batch_size)
        t = rng.integers(1, T + 1, size=cfg.batch_size)
        noise = rng.standard_normal((cfg.batch_size, data.dim))
        x_t = forward_diffuse(pts[idx], t, sched, noise)
        acts = _forward(current, x_t, t)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean(np.sum((acts[-1] - noise) ** 2, axis=1)))
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
        losses[step] = loss
        grads = _backward(current, acts, noise)
        if cfg.optimizer == "sgd":
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        else:
            k = step + 1
            c1 = 1.0 - cfg.beta1**k
            c2 = 1.0 - cfg.beta2**k
            for p, g, a, b in zip(params, grads, m1, m2):
                a *= cfg.beta1
                a += (1.0 - cfg.beta1) * g
                b *= cfg.beta2
                b += (1.0 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (a / c1) / (np.sqrt(b / c2) + cfg.eps)
    return model.with_params([p.copy() for p in params]), losses


def _unsafe_with_params(model: MlpDenoiser, params: list[np.ndarray]) -> MlpDenoiser:
    # shares the arrays without validation or freezing; training loop only
    m = object.__new__(MlpDenoiser)
    object.__setattr__(m, "weights", tuple(params[0::2]))
    object.__setattr__(m, "biases", tuple(params[1::2]))
    object.__setattr__(m, "num_steps", model.num_steps)
    return m


def train_denoiser(
    data: PointCloudDataset,
    sched: VarianceSchedule,
    cfg: TrainConfig,
    hidden: Sequence[int] = (64, 64),
    return_losses: bool = False,
):
    rng = np.random.default_rng(cfg.seed)
    model = init_mlp(data.dim, hidden, sched.num_steps, rng)
    trained, losses = fit(model, data, sched, cfg, rng)
    return (trained, losses) if return_losses else trained


def fine_tune(
    model: MlpDenoiser,
    data: PointCloudDataset,
    sched: VarianceSchedule,
    cfg: TrainConfig,
    return_losses: bool = False,
):
    """Continue training every parameter of ``model`` on ``data``."""
    tuned, losses = fit(model, data, sched, cfg)
    return (tuned, losses) if return_losses else tuned


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_mlp(m: MlpDenoiser, path) -> None:
    """``DSMLP1`` text file: header, widths, then base64 float64 blocks per layer."""
    lines = [
        MLP_MAGIC,
        f"num_steps {m.num_steps}",
        "frequencies " + " ".join(repr(f) for f in FREQUENCIES),
        "widths " + " ".join(str(w) for w in m.widths),
    ]
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        lines.append(f"layer {i} W {_encode(w)}")
        lines.append(f"layer {i} b {_encode(b)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mlp(path) -> MlpDenoiser:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MLP_MAGIC:
        raise ValueError(f"{path}: missing {MLP_MAGIC} header")
    try:
        num_steps = int(lines[1].split()[1])
        freqs = tuple(float(f) for f in lines[2].split()[1:])
        widths = [int(w) for w in lines[3].split()[1:]]
    except (IndexError, ValueError):
        raise ValueError(f"{path}: malformed header") from None
    if freqs != FREQUENCIES:
        raise ValueError(f"{path}: unsupported embedding frequencies {freqs}")
    ws, bs = [], []
    body = lines[4:]
    if len(body) != 2 * (len(widths) - 1):
        raise ValueError(f"{path}: expected {2 * (len(widths) - 1)} layer blocks, found {len(body)}")
    for i in range(len(widths) - 1):
        w_line, b_line = body[2 * i].split(), body[2 * i + 1].split()
        if w_line[:3] != ["layer", str(i), "W"] or b_line[:3] != ["layer", str(i), "b"]:
            raise ValueError(f"{path}: layer {i} blocks out of order")
        ws.append(_decode(w_line[3], (widths[i + 1], widths[i])))
        bs.append(_decode(b_line[3], (widths[i + 1],)))
    return MlpDenoiser(tuple(ws), tuple(bs), num_steps)
