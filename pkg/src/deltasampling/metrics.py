"""Similarity and diversity statistics over sample batches.

Energy distance uses the V-statistic (all ordered pairs, self-pairs
included), which is non-negative up to rounding and exactly zero for
identical batches. Pairwise sums are accumulated in fixed-size row blocks
in a fixed order, so results do not depend on anything but the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

__all__ = [
    "MAX_SAMPLES",
    "MetricError",
    "SampleBatch",
    "diversity",
    "energy_distance",
    "mean_cross_distance",
    "transfer_error",
]

MAX_SAMPLES = 20000
NEGATIVE_TOLERANCE = 1e-9
_BLOCK = 1024


class MetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SampleBatch:
    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise MetricError("a sample batch needs a non-empty (n, d) array")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def _points(batch) -> np.ndarray:
    return batch.samples if isinstance(batch, SampleBatch) else SampleBatch(batch).samples


def mean_cross_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance over all ``len(a) * len(b)`` ordered pairs."""
    total = 0.0
    for start in range(0, a.shape[0], _BLOCK):
        block = cdist(a[start : start + _BLOCK], b)
        total += float(np.sum(block, dtype=np.float64))
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a, b) -> float:
    """``2 E|A - B| - E|A - A'| - E|B - B'|`` over the two empirical distributions."""
    pa, pb = _points(a), _points(b)
    if pa.shape[1] != pb.shape[1]:
        raise MetricError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    if pa.shape[0] < 2 or pb.shape[0] < 2:
        raise MetricError("each batch needs at least two samples")
    if max(pa.shape[0], pb.shape[0]) > MAX_SAMPLES:
        raise MetricError(f"batches are capped at {MAX_SAMPLES} samples")
    # canonical argument order makes the statistic exactly symmetric
    if (pb.shape, pb.tobytes()) < (pa.shape, pa.tobytes()):
        pa, pb = pb, pa
    cross = mean_cross_distance(pa, pb)
    within_a = mean_cross_distance(pa, pa)
    within_b = mean_cross_distance(pb, pb)
    e = 2.0 * cross - within_a - within_b
    if e < 0.0:
        if e < -NEGATIVE_TOLERANCE:
            raise MetricError(f"energy statistic is negative beyond rounding: {e!r}")
        e = 0.0
    return e


def diversity(batch) -> float:
    """Mean Euclidean distance over unordered pairs ``i < j``."""
    pts = _points(batch)
    if pts.shape[0] < 2:
        raise MetricError("diversity needs at least two samples")
    n = pts.shape[0]
    if n <= 4 * _BLOCK:
        return float(np.sum(pdist(pts))) / (n * (n - 1) / 2)
    total = 0.0
    for start in range(0, n, _BLOCK):
        rows = pts[start : start + _BLOCK]
        block = cdist(rows, pts[start:])
        # keep only the strict upper triangle of this block row
        block = np.triu(block, k=1)
        total += float(np.sum(block, dtype=np.float64))
    return total / (n * (n - 1) / 2)


def transfer_error(ds_batch, oracle_batch) -> float:
    """Energy distance from guided samples to the oracle batch; lower is better."""
    return energy_distance(ds_batch, oracle_batch)
