"""Density models for the limit-law constants: analytic families and Gaussian KDE."""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Union

import numpy as np

from .pool import DistributionSpec, SamplePool, make_rng

KINDS = ("gaussian", "laplace-product", "kde", "uniform")


@dataclasses.dataclass(frozen=True)
class DensityModel:
    """``kind`` selects the parameters used:

    gaussian: ``mean``, ``cov``; laplace-product: ``mean`` (location) and
    ``scale``; kde: ``points`` and per-coordinate ``scale`` (bandwidths);
    uniform: the box ``[low, high]``.
    """

    kind: str
    dim: int
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    scale: np.ndarray | None = None
    points: np.ndarray | None = None
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.scale is not None and np.any(np.asarray(self.scale) <= 0):
            raise ValueError("scales must be positive")

    @classmethod
    def gaussian(cls, mean, cov) -> "DensityModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls("gaussian", mean.size, mean=mean, cov=cov)

    @classmethod
    def laplace_product(cls, loc, scale) -> "DensityModel":
        loc = np.atleast_1d(np.asarray(loc, dtype=float))
        return cls("laplace-product", loc.size, mean=loc, scale=np.broadcast_to(np.asarray(scale, dtype=float), loc.shape).copy())

    @classmethod
    def uniform(cls, low, high) -> "DensityModel":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        return cls("uniform", low.size, low=low, high=np.atleast_1d(np.asarray(high, dtype=float)))

    @classmethod
    def from_distribution(cls, spec: DistributionSpec) -> "DensityModel":
        if spec.family == "gaussian":
            return cls.gaussian(spec.mean, spec.covariance)
        if spec.family == "laplace-product":
            return cls.laplace_product(spec.mean, np.ones(spec.dim) if spec.scale is None else spec.scale)
        raise ValueError(f"no analytic density for family {spec.family!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.multivariate_normal(self.mean, self.cov, size=n, method="cholesky")
        if self.kind == "laplace-product":
            return self.mean + self.scale * rng.laplace(0.0, 1.0, (n, self.dim))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, (n, self.dim))
        idx = rng.integers(0, self.points.shape[0], n)
        return self.points[idx] + self.scale * rng.standard_normal((n, self.dim))


def pdf(model: DensityModel, x) -> np.ndarray | float:
    """Density at a point ``(dim,)`` or at each row of ``(N, dim)``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (model.dim > 1 or x.ndim == 0)
    X = x.reshape(-1, model.dim)
    if model.kind == "gaussian":
        L = np.linalg.cholesky(model.cov)
        z = np.linalg.solve(L, (X - model.mean).T)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        out = np.exp(-0.5 * (z * z).sum(axis=0) - 0.5 * logdet - 0.5 * model.dim * math.log(2 * math.pi))
    elif model.kind == "laplace-product":
        u = np.abs(X - model.mean) / model.scale
        out = np.exp(-u.sum(axis=1)) / np.prod(2.0 * model.scale)
    elif model.kind == "uniform":
        inside = np.all((X >= model.low) & (X <= model.high), axis=1)
        out = inside / np.prod(model.high - model.low)
    else:
        out = np.zeros(X.shape[0])
        norm = (2 * math.pi) ** (-model.dim / 2) / np.prod(model.scale)
        for start in range(0, X.shape[0], 2048):
            blk = X[start : start + 2048]
            u = (blk[:, None, :] - model.points[None, :, :]) / model.scale
            out[start : start + 2048] = np.exp(-0.5 * np.einsum("ikd,ikd->ik", u, u)).mean(axis=1) * norm
    return float(out[0]) if single else out


def bandwidths(points: np.ndarray, rule: Union[str, float] = "silverman") -> np.ndarray:
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if n < 2:
        raise ValueError("KDE needs at least two points")
    sd = points.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise ValueError("zero-variance coordinate: bandwidth undefined")
    if isinstance(rule, (int, float)):
        return np.full(d, float(rule))
    if rule == "silverman":
        factor = 1.06 * n ** (-0.2) if d == 1 else (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
    elif rule == "scott":
        factor = n ** (-1.0 / (d + 4))
    else:
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    return factor * sd


def fit_kde(samples: SamplePool | np.ndarray, bandwidth_rule: Union[str, float] = "silverman") -> DensityModel:
    """Product Gaussian kernel estimate with per-coordinate bandwidths."""
    pts = samples.points if isinstance(samples, SamplePool) else np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    bw = bandwidths(pts, bandwidth_rule)
    return DensityModel("kde", pts.shape[1], scale=bw, points=np.array(pts))


Sampler = Union[DistributionSpec, DensityModel, Callable[[np.random.Generator, int], np.ndarray]]


def _draw(p_sampler: Sampler, rng: np.random.Generator, N: int) -> np.ndarray:
    if isinstance(p_sampler, DistributionSpec):
        return p_sampler.draw(rng, N)
    if isinstance(p_sampler, DensityModel):
        return p_sampler.sample(rng, N)
    return np.asarray(p_sampler(rng, N), dtype=float)


def self_overlap(model: DensityModel) -> float | None:
    """Closed form of ``E f(X)`` for ``X ~ f`` where one is known, else ``None``."""
    if model.kind == "gaussian":
        return float((4 * math.pi) ** (-model.dim / 2) / math.sqrt(np.linalg.det(model.cov)))
    if model.kind == "laplace-product":
        return float(np.prod(1.0 / (4.0 * model.scale)))
    if model.kind == "uniform":
        return float(1.0 / np.prod(model.high - model.low))
    return None


def expected_density_se(p_sampler: Sampler, q_model: DensityModel, N: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean of ``q_model.pdf`` over ``N`` draws, with its standard error."""
    if N < 1:
        raise ValueError("N must be positive")
    vals = np.asarray(pdf(q_model, _draw(p_sampler, make_rng(seed, 0xD5), N).reshape(N, -1)), dtype=float)
    se = float(vals.std(ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return float(vals.mean()), se


def expected_density(p_sampler: Sampler, q_model: DensityModel, N: int, seed: int, analytic: bool = False) -> float:
    """``E q(X)`` for ``X`` drawn from ``p_sampler``.

    ``analytic=True`` uses the closed form when the sampler is the same model
    as ``q_model`` (Gaussian, Laplace-product or uniform).
    """
    if analytic:
        same = p_sampler
        if isinstance(same, DistributionSpec):
            same = DensityModel.from_distribution(same)
        if isinstance(same, DensityModel) and _same_model(same, q_model):
            val = self_overlap(q_model)
            if val is not None:
                return val
        raise ValueError("no analytic path for this sampler/model pair")
    return expected_density_se(p_sampler, q_model, N, seed)[0]


def _same_model(a: DensityModel, b: DensityModel) -> bool:
    if a.kind != b.kind or a.dim != b.dim:
        return False
    for f in ("mean", "cov", "scale", "low", "high"):
        u, v = getattr(a, f), getattr(b, f)
        if (u is None) != (v is None):
            return False
        if u is not None and not np.allclose(u, v, rtol=0, atol=0):
            return False
    return True
