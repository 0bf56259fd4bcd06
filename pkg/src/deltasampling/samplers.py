"""Reverse-process samplers: DDPM ancestral, DDIM, Euler and Heun.

All four consume a :class:`NoisePredictor`, so guided and unguided
predictors plug in identically. Every run starts from ``x_T ~ N(0, I)``
drawn from the run's :class:`NoiseSource`; the stochastic rules then take
one draw per step from ``t = T`` down to ``t = 2`` (the last step adds no
noise). The number and order of draws depend only on the sampler kind and
``T``.

Euler and Heun integrate the probability-flow ODE in the scaled variable
``y = x / sqrt(ab_t)`` whose noise level is ``s_t = sqrt((1 - ab_t) / ab_t)``.
In that variable ``dy/ds`` equals the predicted noise, so

    Euler:  y' = y + (s_{t-1} - s_t) * eps(x_t, t)
    Heun:   average the slopes at ``x_t`` and at the Euler proposal
            (the corrector is skipped on the final step, where s = 0).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .predictors import Condition, NoisePredictor, StateVector
from .schedule import VarianceSchedule

__all__ = [
    "BatchResult",
    "NoiseSource",
    "RunSpec",
    "SamplerAbort",
    "SamplerKind",
    "Trajectory",
    "ddim_step",
    "ddpm_step",
    "euler_step",
    "heun_step",
    "run_sampler",
    "sample_batch",
]

SamplerName = Literal["ddpm", "ddim", "euler", "heun"]


class SamplerAbort(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SamplerKind:
    name: SamplerName = "euler"
    eta: float = 0.0

    def __post_init__(self):
        if self.name not in ("ddpm", "ddim", "euler", "heun"):
            raise ValueError(f"unknown sampler {self.name!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")

    @classmethod
    def parse(cls, kind) -> SamplerKind:
        if isinstance(kind, SamplerKind):
            return kind
        return cls(str(kind))

    @property
    def stochastic(self) -> bool:
        return self.name == "ddpm" or (self.name == "ddim" and self.eta > 0.0)

    def num_draws(self, T: int) -> int:
        """Standard-normal vectors consumed by one run (including ``x_T``)."""
        return T if self.stochastic else 1

    def __str__(self):
        return f"ddim(eta={self.eta:g})" if self.name == "ddim" and self.eta else self.name


class NoiseSource:
    """Seeded stream of standard-normal vectors (PCG64 under the hood)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))
        self.position = 0

    def normal(self, d: int) -> np.ndarray:
        self.position += 1
        return self._rng.standard_normal(d)

    def block(self, count: int, d: int) -> np.ndarray:
        """``count`` consecutive draws at once; identical to calling :meth:`normal` ``count`` times."""
        self.position += count
        return self._rng.standard_normal((count, d))


def _noise_blocks(seeds: Sequence[int], count: int, d: int) -> np.ndarray:
    """Shape ``(count, n, d)``: draw ``k`` for every seed."""
    out = np.empty((count, len(seeds), d))
    for j, seed in enumerate(seeds):
        out[:, j, :] = NoiseSource(seed).block(count, d)
    return out


# -- single-step rules --------------------------------------------------------------


def ddpm_step(x: StateVector, eps_hat, sched: VarianceSchedule, z) -> StateVector:
    """``x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) * eps) / sqrt(1 - beta_t) + sigma_t z``."""
    t = x.t
    beta, ab = sched.beta(t), sched.alpha_bar(t)
    mean = (x.values - (beta / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(1.0 - beta)
    return StateVector(mean + sched.sigma(t) * z, t - 1)


def ddim_step(x: StateVector, eps_hat, sched: VarianceSchedule, eta: float, z) -> StateVector:
    t = x.t
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t - 1)
    x0_hat = (x.values - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)
    sig = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab)) * math.sqrt(1.0 - ab / ab_prev)
    rad = 1.0 - ab_prev - sig * sig
    if rad < 0.0:
        if rad < -1e-12:
            raise ValueError(f"negative DDIM direction variance {rad:.3g} at t={t}")
        rad = 0.0
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(rad) * eps_hat
    if sig:
        out = out + sig * z
    return StateVector(out, t - 1)


def _ve(sched: VarianceSchedule, t: int) -> tuple[float, float]:
    return sched.ve_sigma(t), math.sqrt(sched.alpha_bar(t))


def euler_step(x: StateVector, predictor: NoisePredictor, sched: VarianceSchedule, cond: Condition = None) -> StateVector:
    eps = predictor.predict(x.values, x.t, cond)
    return _euler_from(x, eps, sched)


def _euler_from(x: StateVector, eps, sched: VarianceSchedule) -> StateVector:
    t = x.t
    s, r = _ve(sched, t)
    s_prev, r_prev = _ve(sched, t - 1)
    y = x.values / r + (s_prev - s) * eps
    return StateVector(r_prev * y, t - 1)


def heun_step(x: StateVector, predictor: NoisePredictor, sched: VarianceSchedule, cond: Condition = None) -> StateVector:
    eps = predictor.predict(x.values, x.t, cond)
    return _heun_from(x, eps, predictor, sched, cond)


def _heun_from(x: StateVector, eps, predictor: NoisePredictor, sched: VarianceSchedule, cond: Condition) -> StateVector:
    t = x.t
    proposal = _euler_from(x, eps, sched)
    if t == 1:
        return proposal
    eps_next = predictor.predict(proposal.values, t - 1, cond)
    s, r = _ve(sched, t)
    s_prev, r_prev = _ve(sched, t - 1)
    y = x.values / r + (s_prev - s) * ((eps + eps_next) / 2.0)
    return StateVector(r_prev * y, t - 1)


# -- full runs ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunSpec:
    sampler: SamplerKind
    schedule: VarianceSchedule
    predictor: NoisePredictor
    seed: int = 42
    record_trajectory: bool = False
    condition: Condition = None

    def __post_init__(self):
        object.__setattr__(self, "sampler", SamplerKind.parse(self.sampler))
        if self.predictor.num_steps != self.schedule.num_steps:
            raise ValueError(
                f"predictor is bound to T={self.predictor.num_steps} but the schedule has T={self.schedule.num_steps}"
            )

    @property
    def dimension(self) -> int:
        return self.predictor.dim


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: list
    seed: int
    sampler: SamplerKind

    @property
    def final(self) -> np.ndarray:
        return self.states[-1].values

    def as_array(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Terminal samples of a batched run, one row per seed."""

    samples: np.ndarray
    seeds: tuple
    sampler: SamplerKind
    trajectory: np.ndarray | None = None  # (T + 1, n, d) from x_T down to x_0
    wall_time: float = 0.0


def sample_batch(
    sampler,
    schedule: VarianceSchedule,
    predictor: NoisePredictor,
    seeds: Iterable[int],
    record_trajectory: bool = False,
    condition: Condition = None,
) -> BatchResult:
    """Run the sampler for many seeds at once.

    Row ``j`` uses only the noise stream of ``seeds[j]``, so each row is the
    run a single-seed call would produce (up to floating-point differences
    that batched linear algebra may introduce).
    """
    kind = SamplerKind.parse(sampler)
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    T, d = schedule.num_steps, predictor.dim
    if predictor.num_steps != T:
        raise ValueError(f"predictor is bound to T={predictor.num_steps} but the schedule has T={T}")
    started = time.perf_counter()
    noise = _noise_blocks(seeds, kind.num_draws(T), d)
    x = StateVector(noise[0].copy(), T)
    frames = [x.values] if record_trajectory else None
    for t in range(T, 0, -1):
        # draw index for step t is T - t + 1; no draw is used on the final step
        z = noise[T - t + 1] if kind.stochastic and t > 1 else None
        eps = predictor.predict(x.values, t, condition)
        if kind.name == "ddpm":
            x = ddpm_step(x, eps, schedule, 0.0 if z is None else z)
        elif kind.name == "ddim":
            x = ddim_step(x, eps, schedule, kind.eta, 0.0 if z is None else z)
        elif kind.name == "euler":
            x = _euler_from(x, eps, schedule)
        else:
            x = _heun_from(x, eps, predictor, schedule, condition)
        if not np.all(np.isfinite(x.values)):
            raise SamplerAbort(f"non-finite state produced by the step at t={t}", step=t)
        if frames is not None:
            frames.append(x.values)
    traj = np.stack(frames) if frames is not None else None
    return BatchResult(x.values, seeds, kind, traj, time.perf_counter() - started)


def run_sampler(spec: RunSpec) -> Trajectory:
    """One seeded run; the trajectory holds ``x_T .. x_0`` when recorded, else only ``x_0``."""
    res = sample_batch(spec.sampler, spec.schedule, spec.predictor, [spec.seed], spec.record_trajectory, spec.condition)
    T = spec.schedule.num_steps
    if res.trajectory is not None:
        states = [StateVector(frame[0], T - k) for k, frame in enumerate(res.trajectory)]
    else:
        states = [StateVector(res.samples[0], 0)]
    return Trajectory(states, spec.seed, spec.sampler)
