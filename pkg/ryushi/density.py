"""Evaluable and sampleable univariate densities used as leaf targets.

Four constructions are available: a moment-matched normal, a weighted Gaussian KDE, a
piecewise-constant grid density (step function over uniform bins, filled from a KDE) and a
two-component mixture of grids, which gives a filter estimate and a smoother estimate
exactly the same support. `DiscreteDensity` covers finite state spaces.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Protocol, TypeAlias, runtime_checkable

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, ndtr

FloatArray = NDArray[np.float64]

VAR_FLOOR = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
# upper bound on the size of a (query x data) block when evaluating a KDE
_KDE_BLOCK = 2_000_000


class DensityKind(str, enum.Enum):
    NORMAL = "normal"
    KDE = "kde"
    GRID = "grid"


@runtime_checkable
class Density(Protocol):
    def log_density(self, x: ArrayLike) -> FloatArray: ...

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray: ...

    def cdf(self, x: ArrayLike) -> FloatArray: ...

    def bounds(self) -> tuple[float, float]: ...


def _prepare(samples: ArrayLike, weights: ArrayLike | None) -> tuple[FloatArray, FloatArray]:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples to estimate from")
    if weights is None:
        return x, np.full(x.size, 1.0 / x.size)
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != x.shape:
        raise ValueError(f"{x.size} samples but {w.size} weights")
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be non-negative with positive total")
    return x, w / w.sum()


def weighted_mean_var(samples: ArrayLike, weights: ArrayLike | None = None) -> tuple[float, float]:
    """Self-normalized weighted mean and population variance."""
    x, w = _prepare(samples, weights)
    mean = float(np.dot(w, x))
    return mean, float(np.dot(w, (x - mean) ** 2))


def weighted_quantile(samples: ArrayLike, weights: ArrayLike | None, q: ArrayLike) -> FloatArray:
    x, w = _prepare(samples, weights)
    order = np.argsort(x)
    x, w = x[order], w[order]
    midpoints = np.cumsum(w) - w / 2
    return np.interp(q, midpoints, x)


@dataclass(frozen=True)
class NormalFit:
    mean: float
    var: float

    def __post_init__(self) -> None:
        if not self.var > 0:
            raise ValueError(f"variance must be positive, got {self.var}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def log_density(self, x: ArrayLike) -> FloatArray:
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - _LOG_SQRT_2PI

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        return rng.normal(self.mean, self.std, size)

    def cdf(self, x: ArrayLike) -> FloatArray:
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)

    def bounds(self) -> tuple[float, float]:
        return self.mean - 12 * self.std, self.mean + 12 * self.std


@dataclass(frozen=True, eq=False)
class WeightedKDE:
    """Weighted Gaussian KDE with one shared bandwidth.

    Evaluated in log space, `_KDE_BLOCK` kernel terms at a time, so that a leaf density
    built from 10⁴ particles and queried at 10⁴ points stays within memory and does not
    underflow far out in the tails.
    """

    points: FloatArray
    weights: FloatArray
    bandwidth: float

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    def _blocks(self, x: FloatArray):
        rows = max(1, _KDE_BLOCK // self.points.size)
        for start in range(0, x.size, rows):
            yield start, x[start : start + rows]

    def log_density(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        flat = xs.ravel()
        out = np.empty(flat.size)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        for start, block in self._blocks(flat):
            z = (block[:, None] - self.points[None, :]) / self.bandwidth
            out[start : start + block.size] = logsumexp(-0.5 * z * z + log_w, axis=1)
        out -= math.log(self.bandwidth) + _LOG_SQRT_2PI
        return out.reshape(xs.shape)

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), cum.size - 1)
        return self.points[idx] + self.bandwidth * rng.standard_normal(size)

    def cdf(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        flat = xs.ravel()
        out = np.empty(flat.size)
        for start, block in self._blocks(flat):
            z = (block[:, None] - self.points[None, :]) / self.bandwidth
            out[start : start + block.size] = ndtr(z) @ self.weights
        return out.reshape(xs.shape)

    def bounds(self) -> tuple[float, float]:
        pad = 12 * self.bandwidth
        return float(self.points.min() - pad), float(self.points.max() + pad)


@dataclass(eq=False)
class GridDensity:
    """Step function d_i on the bins [x_i - Δ/2, x_i + Δ/2) with x_i = x1 + iΔ.

    `d` is renormalized on construction so that Δ·Σd = 1; the factor that was divided out
    is kept in `norm_factor`.
    """

    x1: float
    delta: float
    d: FloatArray
    norm_factor: float = field(init=False)

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        if not self.delta > 0:
            raise ValueError(f"grid spacing must be positive, got {self.delta}")
        if d.ndim != 1 or d.size == 0 or (d < 0).any() or not np.isfinite(d).all():
            raise ValueError("grid densities must be a non-empty vector of finite values >= 0")
        total = self.delta * d.sum()
        if total <= 0:
            raise ValueError("grid carries no mass")
        self.norm_factor = float(total)
        self.d = d / total

    @property
    def n(self) -> int:
        return self.d.size

    @property
    def centers(self) -> FloatArray:
        return self.x1 + self.delta * np.arange(self.n)

    @property
    def edges(self) -> FloatArray:
        return self.x1 - self.delta / 2 + self.delta * np.arange(self.n + 1)

    @property
    def masses(self) -> FloatArray:
        return self.d * self.delta

    def log_density(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        idx = np.floor((xs - (self.x1 - self.delta / 2)) / self.delta)
        inside = (idx >= 0) & (idx < self.n)
        out = np.full(xs.shape, -np.inf)
        with np.errstate(divide="ignore"):
            out[inside] = np.log(self.d[idx[inside].astype(np.intp)])
        return out

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        cum = np.cumsum(self.masses)
        cum /= cum[-1]
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), self.n - 1)
        return self.x1 - self.delta / 2 + (idx + rng.random(size)) * self.delta

    def cdf(self, x: ArrayLike) -> FloatArray:
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(np.asarray(x, dtype=float), self.edges, cum / cum[-1])

    def bounds(self) -> tuple[float, float]:
        edges = self.edges
        return float(edges[0]), float(edges[-1])


@dataclass(frozen=True, eq=False)
class MixtureDensity:
    """alpha · comp_a + (1 - alpha) · comp_b."""

    alpha: float
    comp_a: Density
    comp_b: Density

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"mixture weight must lie in (0, 1), got {self.alpha}")

    def log_density(self, x: ArrayLike) -> FloatArray:
        return np.logaddexp(
            math.log(self.alpha) + self.comp_a.log_density(x),
            math.log1p(-self.alpha) + self.comp_b.log_density(x),
        )

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        pick_a = rng.random(size) < self.alpha
        out = np.empty(size)
        n_a = int(pick_a.sum())
        out[pick_a] = self.comp_a.sample(rng, n_a)
        out[~pick_a] = self.comp_b.sample(rng, size - n_a)
        return out

    def cdf(self, x: ArrayLike) -> FloatArray:
        return self.alpha * self.comp_a.cdf(x) + (1 - self.alpha) * self.comp_b.cdf(x)

    def bounds(self) -> tuple[float, float]:
        (a_lo, a_hi), (b_lo, b_hi) = self.comp_a.bounds(), self.comp_b.bounds()
        return min(a_lo, b_lo), max(a_hi, b_hi)


@dataclass(frozen=True, eq=False)
class DiscreteDensity:
    """A pmf over finitely many points (density w.r.t. counting measure)."""

    points: FloatArray
    pmf: FloatArray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        pmf = np.asarray(self.pmf, dtype=float)
        if points.shape != pmf.shape or (pmf < 0).any() or pmf.sum() <= 0:
            raise ValueError("points and pmf must match in shape, pmf non-negative with mass")
        order = np.argsort(points)
        object.__setattr__(self, "points", points[order])
        object.__setattr__(self, "pmf", pmf[order] / pmf.sum())

    def log_density(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        idx = np.minimum(np.searchsorted(self.points, xs), self.points.size - 1)
        hit = self.points[idx] == xs
        out = np.full(xs.shape, -np.inf)
        with np.errstate(divide="ignore"):
            out[hit] = np.log(self.pmf[idx[hit]])
        return out

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        cum = np.cumsum(self.pmf)
        cum[-1] = 1.0
        idx = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), cum.size - 1)
        return self.points[idx]

    def cdf(self, x: ArrayLike) -> FloatArray:
        cum = np.concatenate([[0.0], np.cumsum(self.pmf)])
        return cum[np.searchsorted(self.points, np.asarray(x, dtype=float), side="right")]

    def bounds(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])


DensityEstimate: TypeAlias = NormalFit | WeightedKDE | GridDensity | MixtureDensity | DiscreteDensity


def fit_normal_weighted(samples: ArrayLike, weights: ArrayLike | None = None) -> NormalFit:
    mean, var = weighted_mean_var(samples, weights)
    if var < VAR_FLOOR:
        logger.warning(f"degenerate samples around {mean:.6g}: variance {var:.3g} floored at {VAR_FLOOR}")
        var = VAR_FLOOR
    return NormalFit(mean, var)


def silverman_bandwidth(samples: ArrayLike, weights: ArrayLike | None = None) -> float:
    """0.9 · min(σ̂, IQR/1.34) · n_eff^(-1/5) with weighted moments and n_eff = 1/Σw²."""
    x, w = _prepare(samples, weights)
    _, var = weighted_mean_var(x, w)
    q25, q75 = weighted_quantile(x, w, [0.25, 0.75])
    spread = math.sqrt(var)
    if q75 > q25:
        spread = min(spread, (q75 - q25) / 1.34)
    if not spread > 0:
        raise ValueError("bandwidth is undefined for samples without spread")
    n_eff = 1.0 / float(np.sum(w * w))
    return 0.9 * spread * n_eff ** (-0.2)


def kde_fit(
    samples: ArrayLike, weights: ArrayLike | None = None, bandwidth: float | None = None
) -> WeightedKDE:
    x, w = _prepare(samples, weights)
    h = silverman_bandwidth(x, w) if bandwidth is None else bandwidth
    return WeightedKDE(x, w, h)


def grid_from_samples(
    samples: ArrayLike,
    weights: ArrayLike | None = None,
    n_bins: int = 512,
    bandwidth: float | None = None,
) -> GridDensity:
    """Fill a uniform grid over [min - 3h, max + 3h] with KDE values at the bin centres."""
    if n_bins < 8:
        raise ValueError(f"a grid needs at least 8 bins, got {n_bins}")
    kde = kde_fit(samples, weights, bandwidth)
    h = kde.bandwidth
    centers = np.linspace(kde.points.min() - 3 * h, kde.points.max() + 3 * h, n_bins)
    return GridDensity(float(centers[0]), float(centers[1] - centers[0]), np.exp(kde.log_density(centers)))


def mixture_filter_estimate(grid_f: Density, grid_s: Density, alpha_f: float) -> MixtureDensity:
    return MixtureDensity(alpha_f, grid_f, grid_s)


def mixture_smoother_estimate(grid_s: Density, grid_f: Density, alpha_s: float) -> MixtureDensity:
    return MixtureDensity(alpha_s, grid_s, grid_f)


def estimate_marginal(
    kind: DensityKind | str,
    samples: ArrayLike,
    weights: ArrayLike | None = None,
    grid_bins: int = 512,
    bandwidth: float | None = None,
) -> NormalFit | WeightedKDE | GridDensity:
    kind = DensityKind(kind)
    if kind is DensityKind.NORMAL:
        return fit_normal_weighted(samples, weights)
    if kind is DensityKind.KDE:
        return kde_fit(samples, weights, bandwidth)
    return grid_from_samples(samples, weights, grid_bins, bandwidth)


def dump_grid(estimate: Density) -> str:
    """TSV of (center, density) for a grid or a mixture of grids."""
    if isinstance(estimate, GridDensity):
        centers, values = estimate.centers, estimate.d
    elif isinstance(estimate, MixtureDensity) and all(
        isinstance(c, GridDensity) for c in (estimate.comp_a, estimate.comp_b)
    ):
        centers = np.sort(np.concatenate([estimate.comp_a.centers, estimate.comp_b.centers]))  # type: ignore[union-attr]
        values = np.exp(estimate.log_density(centers))
    else:
        raise TypeError(f"{type(estimate).__name__} is not a grid density")
    lines = ["center\tdensity", *(f"{c:.10g}\t{v:.10g}" for c, v in zip(centers, values))]
    return "\n".join(lines) + "\n"
