"""Common predictor interface shared by analytic, tabulated and MLP models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

import numpy as np

# Conditions are opaque tokens; predictors that don't know a token ignore it.
Condition = Optional[str]


@runtime_checkable
class NoisePredictor(Protocol):
    """Maps a noisy state ``x_t`` at step ``t`` to a noise estimate.

    ``x`` has shape ``(d,)`` or ``(n, d)``; the output has the same shape.
    Implementations must be deterministic and must not mutate ``x``.
    """

    @property
    def dim(self) -> int: ...

    @property
    def num_steps(self) -> int: ...

    def predict(self, x: np.ndarray, t: int, cond: Condition = None) -> np.ndarray: ...


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    t: int


def as_points(x) -> tuple[np.ndarray, bool]:
    """Return ``x`` as a float64 ``(n, d)`` array and whether it was a single vector."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ValueError(f"expected a vector or an (n, d) array, got shape {arr.shape}")
    return arr, False


def check_dim(pred: NoisePredictor, x: np.ndarray) -> None:
    if x.shape[-1] != pred.dim:
        raise ValueError(f"predictor expects dimension {pred.dim}, got input of shape {x.shape}")
