"""Closed-form noise predictors for Gaussian and Gaussian-mixture data.

For data ``x0 ~ N(mu, Sigma)`` the forward marginal is
``x_t ~ N(sqrt(ab) mu, S)`` with ``S = ab Sigma + (1 - ab) I``, and the
Bayes-optimal noise prediction is

    eps*(x_t) = sqrt(1 - ab) S^-1 (x_t - sqrt(ab) mu),

which is the same as ``(x_t - sqrt(ab) E[x0 | x_t]) / sqrt(1 - ab)`` but
avoids the cancellation in that form. Mixtures weight the component
predictions by their posterior responsibilities under the noisy marginals.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .predictors import Condition, as_points
from .schedule import VarianceSchedule

__all__ = [
    "AnalyticPredictor",
    "GaussianModel",
    "GmmModel",
    "GridFormatError",
    "GridPredictor",
    "gaussian_epsilon",
    "gaussian_posterior_mean",
    "gmm_epsilon",
    "gmm_responsibilities",
    "grid_predict",
    "load_grid",
    "save_grid",
]

MIN_NOISE_VARIANCE = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """``N(mean, cov)`` where ``cov`` is a scalar (isotropic) or a full SPD matrix."""

    mean: np.ndarray
    cov: Union[float, np.ndarray] = 1.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(-1)
        if mean.size < 1:
            raise ValueError("mean must have at least one entry")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        if np.ndim(self.cov) == 0:
            v = float(self.cov)
            if not v > 0:
                raise ValueError(f"isotropic variance must be positive, got {v}")
            object.__setattr__(self, "cov", v)
        else:
            cov = np.array(self.cov, dtype=np.float64)
            d = mean.size
            if cov.shape != (d, d):
                raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise ValueError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance must be positive definite") from None
            cov.setflags(write=False)
            object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def isotropic(self) -> bool:
        return isinstance(self.cov, float)

    def cov_matrix(self) -> np.ndarray:
        if self.isotropic:
            return self.cov * np.eye(self.dim)
        return np.array(self.cov)

    def shifted(self, delta) -> GaussianModel:
        return GaussianModel(self.mean + np.asarray(delta, dtype=np.float64), self.cov)

    def with_cov_scaled(self, factor: float) -> GaussianModel:
        return GaussianModel(self.mean, self.cov * factor)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        if self.isotropic:
            return self.mean + math.sqrt(self.cov) * z
        return self.mean + z @ np.linalg.cholesky(self.cov).T

    # -- noisy-marginal helpers -------------------------------------------------

    def _noisy_solver(self, ab: float):
        """Return ``(solve, logdet)`` for ``S = ab Sigma + (1 - ab) I``."""
        if self.isotropic:
            s = ab * self.cov + (1.0 - ab)
            return (lambda r: r / s), self.dim * math.log(s)
        S = ab * self.cov + (1.0 - ab) * np.eye(self.dim)
        c = cho_factor(S, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
        return (lambda r: cho_solve(c, r.T).T), logdet

    def noisy_logpdf(self, x: np.ndarray, ab: float) -> np.ndarray:
        """Log density of the forward marginal at ``x`` (shape ``(n, d)``)."""
        solve, logdet = self._noisy_solver(ab)
        r = x - math.sqrt(ab) * self.mean
        maha = np.einsum("nd,nd->n", r, solve(r))
        return -0.5 * (maha + logdet + self.dim * math.log(2.0 * math.pi))

    def epsilon_at(self, x: np.ndarray, ab: float) -> np.ndarray:
        _guard(ab)
        solve, _ = self._noisy_solver(ab)
        return math.sqrt(1.0 - ab) * solve(x - math.sqrt(ab) * self.mean)

    def posterior_mean_at(self, x: np.ndarray, ab: float) -> np.ndarray:
        solve, _ = self._noisy_solver(ab)
        r = solve(x - math.sqrt(ab) * self.mean)
        if self.isotropic:
            return self.mean + math.sqrt(ab) * self.cov * r
        return self.mean + math.sqrt(ab) * r @ self.cov.T

    def __eq__(self, other):
        if not isinstance(other, GaussianModel):
            return NotImplemented
        return (
            np.array_equal(self.mean, other.mean)
            and self.isotropic == other.isotropic
            and np.array_equal(np.asarray(self.cov), np.asarray(other.cov))
        )

    def __repr__(self):
        cov = self.cov if self.isotropic else self.cov.tolist()
        return f"GaussianModel(mean={self.mean.tolist()}, cov={cov})"


def _guard(ab: float) -> None:
    if 1.0 - ab < MIN_NOISE_VARIANCE:
        raise ZeroDivisionError(f"1 - alpha_bar = {1.0 - ab:.3g} is too small to divide by")


def _ab(sched: VarianceSchedule, t: int) -> float:
    if t < 1:
        raise IndexError("noise prediction is undefined at t = 0")
    return sched.alpha_bar(t)


def gaussian_posterior_mean(model: GaussianModel, x_t, t: int, sched: VarianceSchedule) -> np.ndarray:
    """``E[x0 | x_t]`` under ``x0 ~ model``."""
    x, single = as_points(x_t)
    _check(model.dim, x)
    out = model.posterior_mean_at(x, _ab(sched, t))
    return out[0] if single else out


def gaussian_epsilon(model: GaussianModel, x_t, t: int, sched: VarianceSchedule) -> np.ndarray:
    """Bayes-optimal noise prediction for Gaussian data."""
    x, single = as_points(x_t)
    _check(model.dim, x)
    out = model.epsilon_at(x, _ab(sched, t))
    return out[0] if single else out


Components = tuple  # tuple of (weight, GaussianModel)


def _normalize_components(components) -> Components:
    comps = tuple((float(w), g if isinstance(g, GaussianModel) else GaussianModel(*g)) for w, g in components)
    if not comps:
        raise ValueError("a mixture needs at least one component")
    weights = np.array([w for w, _ in comps])
    if np.any(weights <= 0):
        raise ValueError("mixture weights must be positive")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")
    dims = {g.dim for _, g in comps}
    if len(dims) != 1:
        raise ValueError(f"components disagree on dimension: {sorted(dims)}")
    return comps


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Gaussian mixture with optional per-condition parameter sets.

    Unknown or absent condition tokens select the default ``components``.
    """

    components: Components
    conditions: Mapping[str, Components] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", _normalize_components(self.components))
        conds = {str(k): _normalize_components(v) for k, v in dict(self.conditions).items()}
        for k, v in conds.items():
            if v[0][1].dim != self.dim:
                raise ValueError(f"condition {k!r} has the wrong dimension")
        object.__setattr__(self, "conditions", conds)

    @classmethod
    def single(cls, gaussian: GaussianModel) -> GmmModel:
        return cls(((1.0, gaussian),))

    @property
    def dim(self) -> int:
        return self.components[0][1].dim

    def components_for(self, cond: Condition = None) -> Components:
        if cond is not None and cond in self.conditions:
            return self.conditions[cond]
        return self.components

    def map_components(self, fn) -> GmmModel:
        """Apply ``fn(index, gaussian) -> gaussian`` to every default component."""
        comps = tuple((w, fn(k, g)) for k, (w, g) in enumerate(self.components))
        return GmmModel(comps, self.conditions)

    def shift_component(self, index: int, delta) -> GmmModel:
        return self.map_components(lambda k, g: g.shifted(delta) if k == index else g)

    def scale_covariances(self, factor: float) -> GmmModel:
        return self.map_components(lambda k, g: g.with_cov_scaled(factor))

    def mean(self, cond: Condition = None) -> np.ndarray:
        return sum(w * g.mean for w, g in self.components_for(cond))

    def sample(self, n: int, rng: np.random.Generator, cond: Condition = None) -> np.ndarray:
        comps = self.components_for(cond)
        weights = np.array([w for w, _ in comps])
        labels = rng.choice(len(comps), size=n, p=weights / weights.sum())
        out = np.empty((n, self.dim))
        for k, (_, g) in enumerate(comps):
            idx = np.flatnonzero(labels == k)
            out[idx] = g.sample(idx.size, rng)
        return out

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return self.components == other.components and self.conditions == other.conditions

    def __repr__(self):
        return f"GmmModel({len(self.components)} components, dim={self.dim})"


def gmm_responsibilities(model: GmmModel, x: np.ndarray, ab: float, cond: Condition = None) -> np.ndarray:
    """Posterior component probabilities under the noisy marginals, shape ``(n, K)``."""
    comps = model.components_for(cond)
    logp = np.stack([math.log(w) + g.noisy_logpdf(x, ab) for w, g in comps], axis=1)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def gmm_epsilon(model: GmmModel, x_t, t: int, sched: VarianceSchedule, cond: Condition = None) -> np.ndarray:
    x, single = as_points(x_t)
    _check(model.dim, x)
    ab = _ab(sched, t)
    _guard(ab)
    comps = model.components_for(cond)
    if len(comps) == 1:
        out = comps[0][1].epsilon_at(x, ab)
    else:
        resp = gmm_responsibilities(model, x, ab, cond)
        out = np.zeros_like(x)
        for k, (_, g) in enumerate(comps):
            out += resp[:, k : k + 1] * g.epsilon_at(x, ab)
    return out[0] if single else out


AnalyticModel = Union[GaussianModel, GmmModel]


@dataclass(frozen=True, eq=False)
class AnalyticPredictor:
    """An analytic data model bound to a variance schedule."""

    model: AnalyticModel
    schedule: VarianceSchedule

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def num_steps(self) -> int:
        return self.schedule.num_steps

    def predict(self, x, t: int, cond: Condition = None) -> np.ndarray:
        if isinstance(self.model, GaussianModel):
            return gaussian_epsilon(self.model, x, t, self.schedule)
        return gmm_epsilon(self.model, x, t, self.schedule, cond)

    def __repr__(self):
        return f"AnalyticPredictor({self.model!r}, T={self.num_steps})"


def _check(d: int, x: np.ndarray) -> None:
    if x.shape[-1] != d:
        raise ValueError(f"model dimension {d} does not match input shape {x.shape}")


# -- tabulated predictor ----------------------------------------------------------

GRID_MAGIC = "DSGRID1"


class GridFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GridPredictor:
    """Multilinear interpolation of noise predictions stored on a regular grid.

    ``table`` has shape ``(T, *resolution, d)``. Queries outside the box
    ``[lo, hi]`` are clamped to its boundary.
    """

    lo: np.ndarray
    hi: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        table = np.array(self.table, dtype=np.float64)
        d = lo.size
        if hi.size != d or not np.all(hi > lo):
            raise GridFormatError("domain needs lo < hi in every dimension")
        if table.ndim != d + 2 or table.shape[-1] != d:
            raise GridFormatError(f"table shape {table.shape} does not fit a {d}-D grid")
        if any(r < 2 for r in table.shape[1:-1]):
            raise GridFormatError("need at least two grid points per dimension")
        for arr in (lo, hi, table):
            arr.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "table", table)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def num_steps(self) -> int:
        return self.table.shape[0]

    @property
    def resolution(self) -> tuple[int, ...]:
        return tuple(self.table.shape[1:-1])

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, r) for l, h, r in zip(self.lo, self.hi, self.resolution)]

    @classmethod
    def from_function(cls, fn, lo, hi, resolution, num_steps: int) -> GridPredictor:
        """Tabulate ``fn(points, t)`` for ``t = 1..num_steps`` on a regular grid."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        res = tuple(int(r) for r in np.broadcast_to(resolution, lo.shape))
        axes = [np.linspace(l, h, r) for l, h, r in zip(lo, hi, res)]
        nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
        table = np.stack([np.asarray(fn(nodes, t)).reshape(*res, lo.size) for t in range(1, num_steps + 1)])
        return cls(lo, hi, table)

    @classmethod
    def from_predictor(cls, pred, lo, hi, resolution, cond: Condition = None) -> GridPredictor:
        return cls.from_function(lambda x, t: pred.predict(x, t, cond), lo, hi, resolution, pred.num_steps)

    def predict(self, x, t: int, cond: Condition = None) -> np.ndarray:
        return grid_predict(self, x, t)


def grid_predict(gp: GridPredictor, x, t: int) -> np.ndarray:
    if not 1 <= t <= gp.num_steps:
        raise IndexError(f"timestep {t} outside the table range 1..{gp.num_steps}")
    pts, single = as_points(x)
    _check(gp.dim, pts)
    res = np.array(gp.resolution)
    pos = (np.clip(pts, gp.lo, gp.hi) - gp.lo) / (gp.hi - gp.lo) * (res - 1)
    idx = np.minimum(np.floor(pos).astype(np.intp), res - 2)
    frac = pos - idx
    values = gp.table[t - 1]
    out = np.zeros((pts.shape[0], gp.dim))
    for corner in itertools.product((0, 1), repeat=gp.dim):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        out += w[:, None] * values[tuple((idx + c).T)]
    return out[0] if single else out


def save_grid(gp: GridPredictor, path) -> None:
    """Write the ``DSGRID1`` text format (values in shortest round-trip form)."""
    lines = [
        GRID_MAGIC,
        f"dims {gp.dim}",
        "resolution " + " ".join(str(r) for r in gp.resolution),
        f"T {gp.num_steps}",
        "lo " + " ".join(repr(float(v)) for v in gp.lo),
        "hi " + " ".join(repr(float(v)) for v in gp.hi),
    ]
    rows_per_step = gp.resolution[0]
    for t in range(gp.num_steps):
        lines.append("")
        block = gp.table[t].reshape(rows_per_step, -1)
        lines.extend(" ".join(repr(float(v)) for v in row) for row in block)
    Path(path).write_text("\n".join(lines) + "\n")


_HEADER_KEYS = ("dims", "resolution", "T", "lo", "hi")


def load_grid(path) -> GridPredictor:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != GRID_MAGIC:
        raise GridFormatError(f"{path}: missing {GRID_MAGIC} header")
    header = {}
    for line, key in zip(lines[1:6], _HEADER_KEYS):
        parts = line.split()
        if not parts or parts[0] != key:
            raise GridFormatError(f"{path}: expected header key {key!r}, got {line!r}")
        header[key] = parts[1:]
    try:
        d = int(header["dims"][0])
        res = tuple(int(r) for r in header["resolution"])
        T = int(header["T"][0])
        lo = [float(v) for v in header["lo"]]
        hi = [float(v) for v in header["hi"]]
        values = np.array([float(v) for v in re.split(r"\s+", "\n".join(lines[6:]).strip()) if v])
    except (IndexError, ValueError) as exc:
        raise GridFormatError(f"{path}: malformed grid file ({exc})") from None
    if len(res) != d or len(lo) != d or len(hi) != d:
        raise GridFormatError(f"{path}: header entries disagree with dims={d}")
    expected = T * int(np.prod(res)) * d
    if values.size != expected:
        raise GridFormatError(f"{path}: expected {expected} node values, found {values.size}")
    return GridPredictor(lo, hi, values.reshape(T, *res, d))
