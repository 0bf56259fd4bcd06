"""Residual extraction and delta-guided noise prediction.

A :class:`DeltaSource` pairs a base predictor with its adapted variant. At
every reverse step the residual ``adapted(x, t | c') - base(x, t | c)`` is
scaled by the source's scheduled strength and added to the target model's
prediction. Several sources compose by summation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .predictors import Condition, NoisePredictor, StateVector
from .schedule import GuidanceSchedule, reverse_progress

__all__ = [
    "DeltaSource",
    "GuidedNoisePredictor",
    "GuidedPredictor",
    "as_noise_predictor",
    "compute_delta",
    "guided_epsilon",
]


@dataclass(frozen=True, eq=False)
class DeltaSource:
    base: NoisePredictor
    adapted: NoisePredictor
    guidance: GuidanceSchedule = field(default_factory=lambda: GuidanceSchedule.constant(1.0))
    base_condition: Condition = None
    adapted_condition: Condition = None

    def __post_init__(self):
        if self.base.dim != self.adapted.dim:
            raise ValueError(f"base dimension {self.base.dim} != adapted dimension {self.adapted.dim}")
        if self.base.num_steps != self.adapted.num_steps:
            raise ValueError("base and adapted predictors are bound to different step counts")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def num_steps(self) -> int:
        return self.base.num_steps

    def with_guidance(self, guidance: GuidanceSchedule) -> DeltaSource:
        return DeltaSource(self.base, self.adapted, guidance, self.base_condition, self.adapted_condition)


def compute_delta(src: DeltaSource, x: StateVector) -> np.ndarray:
    """Residual between the adapted and base predictions at the same state."""
    if not 1 <= x.t <= src.num_steps:
        raise IndexError(f"timestep {x.t} outside 1..{src.num_steps}")
    adapted = src.adapted.predict(x.values, x.t, src.adapted_condition)
    base = src.base.predict(x.values, x.t, src.base_condition)
    if adapted.shape != base.shape:
        raise ValueError(f"predictor outputs disagree in shape: {adapted.shape} vs {base.shape}")
    return adapted - base


@dataclass(frozen=True, eq=False)
class GuidedPredictor:
    target: NoisePredictor
    sources: tuple = ()
    target_condition: Condition = None

    def __post_init__(self):
        sources = tuple(self.sources)
        for i, src in enumerate(sources):
            if src.dim != self.target.dim:
                raise ValueError(f"source {i} has dimension {src.dim}, target has {self.target.dim}")
            if src.num_steps != self.target.num_steps:
                raise ValueError(f"source {i} is bound to T={src.num_steps}, target to T={self.target.num_steps}")
        object.__setattr__(self, "sources", sources)

    @property
    def dim(self) -> int:
        return self.target.dim

    @property
    def num_steps(self) -> int:
        return self.target.num_steps

    def with_sources(self, sources: Sequence[DeltaSource]) -> GuidedPredictor:
        return GuidedPredictor(self.target, tuple(sources), self.target_condition)

    def scaled(self, factor: float) -> GuidedPredictor:
        """Every source's schedule multiplied by ``factor``."""
        return self.with_sources([s.with_guidance(s.guidance.scaled(factor)) for s in self.sources])


def guided_epsilon(gp: GuidedPredictor, x: StateVector, progress: float) -> np.ndarray:
    """Target prediction plus every source's residual at its scheduled strength.

    Sources whose strength is exactly zero are skipped, so zero guidance
    reproduces the target prediction bit for bit.
    """
    if not 1 <= x.t <= gp.num_steps:
        raise IndexError(f"timestep {x.t} outside 1..{gp.num_steps}")
    eps = gp.target.predict(x.values, x.t, gp.target_condition)
    for src in gp.sources:
        lam = src.guidance(progress)
        if lam == 0.0:
            continue
        eps = eps + lam * compute_delta(src, x)
    return eps


ProgressRule = Callable[[int], float]


@dataclass(frozen=True, eq=False)
class GuidedNoisePredictor:
    """Adapter exposing a guided predictor through the plain predictor interface.

    The condition passed to :meth:`predict` is ignored; conditions are fixed
    on the guided predictor and its sources.
    """

    guided: GuidedPredictor
    progress_rule: ProgressRule

    @property
    def dim(self) -> int:
        return self.guided.dim

    @property
    def num_steps(self) -> int:
        return self.guided.num_steps

    def predict(self, x, t: int, cond: Condition = None) -> np.ndarray:
        return guided_epsilon(self.guided, StateVector(np.asarray(x, dtype=np.float64), t), self.progress_rule(t))


def as_noise_predictor(gp: GuidedPredictor, progress_rule: ProgressRule | None = None) -> GuidedNoisePredictor:
    """Wrap ``gp`` for the samplers.

    By default progress is the fraction of completed reverse steps, so decay
    schedules start at full strength on the first reverse step.
    """
    if progress_rule is None:
        T = gp.num_steps
        progress_rule = lambda t: reverse_progress(t, T)  # noqa: E731
    return GuidedNoisePredictor(gp, progress_rule)
