"""Discrete variance schedules and guidance-strength schedules.

Timesteps are 1-based: ``t = 1..T``. Arrays are stored 0-based, so the
value for step ``t`` lives at index ``t - 1``. ``alpha_bar(0)`` is defined
as 1 (clean data) and is not stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

__all__ = [
    "GuidanceSchedule",
    "ScheduleError",
    "VarianceSchedule",
    "build_schedule",
    "default_schedule",
    "forward_diffuse",
    "guidance_strength",
    "normalized_time",
    "reverse_progress",
]

BETA_MAX_CLIP = 0.999


class ScheduleError(ValueError):
    """Raised for schedules whose parameters leave the valid range."""


@dataclass(frozen=True, eq=False)
class VarianceSchedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    sigmas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size < 2:
            raise ScheduleError("a schedule needs at least two steps")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ScheduleError("every beta must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        # sequential product so alpha_bars[t] == alpha_bars[t-1] * alphas[t] holds exactly
        alpha_bars = np.empty_like(alphas)
        acc = 1.0
        for i, a in enumerate(alphas):
            acc = acc * a
            alpha_bars[i] = acc
        if not np.all(np.diff(alpha_bars) < 0.0):
            raise ScheduleError("alpha_bars must be strictly decreasing")
        sigmas = np.sqrt(betas)
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars), ("sigmas", sigmas)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    @property
    def T(self) -> int:
        return self.num_steps

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.num_steps:
            raise IndexError(f"timestep {t} outside 1..{self.num_steps}")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal retention; ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check(t)])

    def sigma(self, t: int) -> float:
        """Ancestral noise scale, ``sigma_t ** 2 == beta_t``."""
        return float(self.sigmas[self._check(t)])

    def ve_sigma(self, t: int) -> float:
        """Noise level of ``x_t / sqrt(alpha_bar_t)``: ``sqrt((1 - ab) / ab)``, zero at t = 0."""
        if t == 0:
            return 0.0
        ab = self.alpha_bar(t)
        return math.sqrt((1.0 - ab) / ab)

    def __eq__(self, other):
        if not isinstance(other, VarianceSchedule):
            return NotImplemented
        return np.array_equal(self.betas, other.betas)

    def __hash__(self):
        return hash(self.betas.tobytes())

    def __repr__(self):
        return f"VarianceSchedule(T={self.num_steps}, beta=[{self.betas[0]:.4g}..{self.betas[-1]:.4g}])"


def default_beta_range(T: int) -> tuple[float, float]:
    """DDPM's [1e-4, 0.02] range rescaled to ``T`` steps, end clipped below 1."""
    scale = 1000.0 / T
    return 1e-4 * scale, min(0.02 * scale, BETA_MAX_CLIP)


def build_schedule(
    kind: Literal["linear_beta", "cosine_alpha_bar"] = "linear_beta",
    T: int = 1000,
    beta_start: float | None = None,
    beta_end: float | None = None,
) -> VarianceSchedule:
    """Build a variance schedule.

    ``linear_beta`` interpolates betas over ``T`` points including both ends;
    when either end is omitted the DDPM range scaled by ``1000 / T`` is used.
    ``cosine_alpha_bar`` follows the squared-cosine cumulative product with
    offset 0.008 and betas clipped at 0.999; the beta arguments are ignored.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if kind == "linear_beta":
        lo, hi = default_beta_range(T)
        beta_start = lo if beta_start is None else float(beta_start)
        beta_end = hi if beta_end is None else float(beta_end)
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "cosine_alpha_bar":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        ab = f / f[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, BETA_MAX_CLIP)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return VarianceSchedule(betas)


def default_schedule(T: int = 16) -> VarianceSchedule:
    return build_schedule("linear_beta", T)


def forward_diffuse(x0, t: int, sched: VarianceSchedule, noise) -> np.ndarray:
    """Sample ``q(x_t | x_0)`` given the noise: ``sqrt(ab) * x0 + sqrt(1 - ab) * noise``."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape[-1] != noise.shape[-1]:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs noise {noise.shape}")
    ab = sched.alpha_bars[np.asarray(t) - 1]
    if np.ndim(ab):
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def normalized_time(t: int, T: int) -> float:
    """``(t - 1) / (T - 1)``: 0 at t = 1 and 1 at t = T."""
    if T < 2 or not 1 <= t <= T:
        raise ValueError(f"need 1 <= t <= T and T >= 2, got t={t}, T={T}")
    return (t - 1) / (T - 1)


def reverse_progress(t: int, T: int) -> float:
    """Fraction of completed reverse steps when the sampler is at step ``t``.

    0 at the first reverse step (t = T), 1 at the last (t = 1). This is the
    progress variable the guidance decay is evaluated against.
    """
    if T < 2 or not 1 <= t <= T:
        raise ValueError(f"need 1 <= t <= T and T >= 2, got t={t}, T={T}")
    return (T - t) / (T - 1)


GuidanceKind = Literal["constant", "linear", "exponential", "cosine"]


@dataclass(frozen=True)
class GuidanceSchedule:
    """Guidance strength as a function of sampling progress ``s`` in [0, 1].

    ``constant`` uses ``lambda_max`` only. ``decay_rate`` is the exponential
    rate ``k`` and is ignored by the other kinds.
    """

    kind: GuidanceKind = "constant"
    lambda_max: float = 1.0
    lambda_min: float = 0.0
    decay_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "exponential", "cosine"):
            raise ValueError(f"unknown guidance kind {self.kind!r}")
        if self.lambda_max < 0 or self.lambda_min < 0:
            raise ValueError("guidance strengths must be non-negative")
        if self.kind != "constant" and self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        if self.kind == "exponential" and not self.decay_rate > 0:
            raise ValueError("exponential decay needs decay_rate > 0")

    @classmethod
    def constant(cls, lam: float) -> GuidanceSchedule:
        return cls("constant", float(lam), 0.0)

    @property
    def is_zero(self) -> bool:
        """True when the strength is 0 at every progress value."""
        if self.kind == "constant":
            return self.lambda_max == 0.0
        return self.lambda_max == 0.0 and self.lambda_min == 0.0

    def scaled(self, factor: float) -> GuidanceSchedule:
        return GuidanceSchedule(self.kind, self.lambda_max * factor, self.lambda_min * factor, self.decay_rate)

    def __call__(self, s: float) -> float:
        return guidance_strength(self, s)


def guidance_strength(gs: GuidanceSchedule, s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {s}")
    hi, lo = gs.lambda_max, gs.lambda_min
    if gs.kind == "constant":
        return hi
    if gs.kind == "linear":
        # hi - (hi - lo) can round away from lo
        return lo if s == 1.0 else hi - (hi - lo) * s
    if s == 0.0:
        return hi
    if gs.kind == "exponential":
        value = lo + (hi - lo) * math.exp(-gs.decay_rate * s)
    else:
        value = lo + 0.5 * (hi - lo) * (1.0 + math.cos(math.pi * s))
    # lo + (hi - lo) * f can overshoot hi by an ulp near s = 0
    return min(hi, value)
