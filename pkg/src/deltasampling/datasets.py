"""2-D point clouds used to train the toy denoisers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PointCloudDataset", "make_dataset", "ring", "single_point", "two_moons"]


@dataclass(frozen=True, eq=False)
class PointCloudDataset:
    points: np.ndarray
    name: str = "points"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a dataset needs a non-empty (n, d) array of points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def shifted(self, delta) -> PointCloudDataset:
        delta = np.asarray(delta, dtype=np.float64)
        return PointCloudDataset(self.points + delta, f"{self.name}+shift{delta.tolist()}")


# centre of the unshifted two-moons layout
_MOONS_CENTER = np.array([0.5, 0.25])


def two_moons(n: int = 4000, noise: float = 0.05, seed: int = 0, shift=(0.0, 0.0)) -> PointCloudDataset:
    """Two interleaved half circles, centred near the origin."""
    rng = np.random.default_rng(seed)
    n_upper = n // 2
    theta = rng.uniform(0.0, np.pi, size=n)
    upper = np.stack([np.cos(theta[:n_upper]), np.sin(theta[:n_upper])], axis=1)
    lower = np.stack([1.0 - np.cos(theta[n_upper:]), 0.5 - np.sin(theta[n_upper:])], axis=1)
    pts = np.concatenate([upper, lower]) - _MOONS_CENTER
    pts += noise * rng.standard_normal(pts.shape) + np.asarray(shift, dtype=np.float64)
    name = "two_moons" if not np.any(shift) else f"two_moons_shifted{list(map(float, shift))}"
    return PointCloudDataset(pts, name)


def ring(n: int = 4000, radius: float = 1.0, noise: float = 0.05, seed: int = 0, shift=(0.0, 0.0)) -> PointCloudDataset:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    pts = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts += noise * rng.standard_normal(pts.shape) + np.asarray(shift, dtype=np.float64)
    return PointCloudDataset(pts, "ring")


def single_point(point, n: int = 1) -> PointCloudDataset:
    return PointCloudDataset(np.tile(np.asarray(point, dtype=np.float64), (n, 1)), "single_point")


_GENERATORS = {"two_moons": two_moons, "ring": ring}


def make_dataset(name: str, n: int = 4000, seed: int = 0, shift=(0.0, 0.0), **kwargs) -> PointCloudDataset:
    try:
        gen = _GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(_GENERATORS)}") from None
    return gen(n=n, seed=seed, shift=shift, **kwargs)
