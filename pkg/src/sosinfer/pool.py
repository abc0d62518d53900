"""Sample and scenario pools, synthetic data generation and CSV ingestion."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Sequence

import numpy as np


class PoolError(ValueError):
    """Malformed pool input (dimension mismatch, parse failure, empty file)."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _as_points(points, dim: int | None = None) -> np.ndarray:
    arr = np.array(points, dtype=np.float64, order="C")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim in (None, 1) else arr.reshape(-1, dim)
    if arr.ndim != 2:
        raise PoolError("points must form a 2-D array")
    if dim is not None and arr.shape[1] != dim:
        raise PoolError(f"expected dimension {dim}, got {arr.shape[1]}")
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class SamplePool:
    points: np.ndarray

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[0] < 1:
            raise PoolError("empty pool")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclasses.dataclass(frozen=True)
class ScenarioPool:
    points: np.ndarray
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(np.reshape(self.points, (-1, self.dim)), self.dim))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls, dim: int) -> "ScenarioPool":
        return cls(np.zeros((0, dim)), dim)


@dataclasses.dataclass(frozen=True)
class MergedPool:
    """Samples followed by scenarios; ``merged[k]`` is ``Z_k``."""

    samples: SamplePool
    scenarios: ScenarioPool
    kappa: float
    merged: np.ndarray

    @property
    def n(self) -> int:
        return self.samples.n

    @property
    def m(self) -> int:
        return self.scenarios.m

    @property
    def dim(self) -> int:
        return self.samples.dim

    @property
    def X(self) -> np.ndarray:
        return self.samples.points

    @property
    def Z(self) -> np.ndarray:
        return self.merged


def merge_pools(samples: SamplePool, scenarios: ScenarioPool | None = None, kappa: float | None = None) -> MergedPool:
    """Merge samples and scenarios.

    With ``kappa`` given the scenario count must be ``floor(kappa * n)``; with
    ``kappa=None`` any scenario pool is accepted and kappa is recorded as m/n.
    """
    if scenarios is None:
        scenarios = ScenarioPool.empty(samples.dim)
    if scenarios.dim != samples.dim:
        raise PoolError(f"scenario dimension {scenarios.dim} differs from sample dimension {samples.dim}")
    if kappa is None:
        kappa = scenarios.m / samples.n
    else:
        if kappa < 0 or not math.isfinite(kappa):
            raise PoolError("kappa must be a nonnegative real")
        expected = math.floor(kappa * samples.n + 1e-9)
        if scenarios.m != expected:
            raise PoolError(f"kappa={kappa} with n={samples.n} requires {expected} scenarios, got {scenarios.m}")
    merged = np.vstack([samples.points, scenarios.points])
    merged.setflags(write=False)
    return MergedPool(samples, scenarios, float(kappa), merged)


def pool_from_points(x, y=None) -> MergedPool:
    """Convenience constructor used throughout the tests and the CLI."""
    sp_ = SamplePool(x)
    sc = ScenarioPool.empty(sp_.dim) if y is None else ScenarioPool(y, sp_.dim)
    return merge_pools(sp_, sc)


# -- synthetic distributions ------------------------------------------------

FAMILIES = ("gaussian", "laplace-product", "custom-mixture")


@dataclasses.dataclass(frozen=True)
class DistributionSpec:
    """Data-generating law for synthetic experiments.

    ``gaussian`` uses ``loc`` and ``cov`` (default identity); ``laplace-product``
    has independent Laplace(loc_k, scale_k) coordinates; ``custom-mixture``
    draws from ``components`` with probabilities ``weights``.
    """

    family: str
    dim: int
    loc: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None
    components: tuple["DistributionSpec", ...] = ()
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PoolError(f"unknown distribution family {self.family!r}")
        if self.dim < 1:
            raise PoolError("dimension must be positive")
        if self.scale is not None and (len(self.scale) != self.dim or min(self.scale) <= 0):
            raise PoolError("scales must be strictly positive, one per coordinate")
        if self.loc is not None and len(self.loc) != self.dim:
            raise PoolError("location has the wrong dimension")
        if self.cov is not None:
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (self.dim, self.dim) or np.linalg.eigvalsh((c + c.T) / 2).min() <= 0:
                raise PoolError("covariance must be symmetric positive definite")
        if self.family == "custom-mixture":
            if not self.components or len(self.components) != len(self.weights):
                raise PoolError("mixture needs matching components and weights")
            if any(c.dim != self.dim for c in self.components) or min(self.weights) < 0:
                raise PoolError("mixture components must share the dimension and have nonnegative weights")

    @property
    def mean(self) -> np.ndarray:
        if self.family == "custom-mixture":
            w = np.asarray(self.weights) / sum(self.weights)
            return sum(wi * c.mean for wi, c in zip(w, self.components))
        return np.zeros(self.dim) if self.loc is None else np.asarray(self.loc, dtype=float)

    @property
    def covariance(self) -> np.ndarray:
        if self.family == "gaussian":
            return np.eye(self.dim) if self.cov is None else np.asarray(self.cov, dtype=float)
        if self.family == "laplace-product":
            s = np.ones(self.dim) if self.scale is None else np.asarray(self.scale, dtype=float)
            return np.diag(2.0 * s * s)
        w = np.asarray(self.weights) / sum(self.weights)
        mu = self.mean
        out = np.zeros((self.dim, self.dim))
        for wi, c in zip(w, self.components):
            dm = c.mean - mu
            out += wi * (c.covariance + np.outer(dm, dm))
        return out

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "gaussian":
            z = rng.standard_normal((n, self.dim))
            if self.cov is not None:
                z = z @ np.linalg.cholesky(np.asarray(self.cov, dtype=float)).T
            return z + self.mean
        if self.family == "laplace-product":
            s = np.ones(self.dim) if self.scale is None else np.asarray(self.scale, dtype=float)
            return rng.laplace(0.0, 1.0, (n, self.dim)) * s + self.mean
        w = np.asarray(self.weights, dtype=float)
        labels = rng.choice(len(self.components), size=n, p=w / w.sum())
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.draw(rng, idx.size)
        return out


def sample_synthetic(spec: DistributionSpec, n: int, seed: int, stream: Sequence[int] = ()) -> SamplePool:
    if n < 1:
        raise PoolError("n must be at least 1")
    return SamplePool(spec.draw(make_rng(seed, *stream), n))


# -- CSV ---------------------------------------------------------------------

def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_pool_csv(path: str | Path, dimension: int | None = None) -> SamplePool:
    """Read one point per row; a non-numeric first row is treated as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(f.strip() for f in r)]
    if rows and not all(_is_number(f.strip()) for f in rows[0]):
        rows = rows[1:]
        start = 2
    else:
        start = 1
    if not rows:
        raise PoolError("empty pool")
    dim = dimension if dimension is not None else len(rows[0])
    data = []
    for k, row in enumerate(rows):
        lineno = start + k
        if len(row) != dim:
            raise PoolError(f"row {lineno}: expected {dim} fields, got {len(row)}")
        try:
            data.append([float(f) for f in row])
        except ValueError:
            raise PoolError(f"row {lineno}: non-numeric field") from None
    return SamplePool(np.array(data))
