from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr

from .baselines import MarginalParticles
from .density import weighted_mean_var
from .exceptions import InvalidProposalError
from .oracle import OracleSolution
from .tps import WeightedPath

FloatArray = NDArray[np.float64]
Marginal = tuple[FloatArray, FloatArray]

CSV_HEADER = "replication,algorithm,N,n,nprime,msem,msev,ks_sum,runtime_ms,seed"


def _paired(est: ArrayLike, truth: ArrayLike) -> tuple[FloatArray, FloatArray]:
    a, b = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"estimate of shape {a.shape} cannot be compared with truth of shape {b.shape}")
    return a, b


def msem(est_means: ArrayLike, truth_means: ArrayLike) -> float:
    a, b = _paired(est_means, truth_means)
    return float(np.mean((a - b) ** 2))


def msev(est_vars: ArrayLike, truth_vars: ArrayLike) -> float:
    a, b = _paired(est_vars, truth_vars)
    return float(np.mean((a - b) ** 2))


def weighted_moments(samples: ArrayLike, weights: ArrayLike | None = None) -> tuple[float, float]:
    return weighted_mean_var(samples, weights)


def marginal_samples(result: WeightedPath | MarginalParticles) -> list[Marginal]:
    """(samples, weights) of every index of a smoother's output."""
    if isinstance(result, MarginalParticles):
        return [result.marginal(t) for t in range(result.T + 1)]
    weights = result.weights
    j, l = result.span
    return [(result.marginal(t), weights) for t in range(j, l + 1)]


def ks_statistic(
    samples: ArrayLike, weights: ArrayLike | None, truth_cdf: Callable[[FloatArray], ArrayLike]
) -> float:
    """sup_x |F_N(x) - F(x)| for the weighted empirical CDF F_N.

    The supremum of a step function against a monotone CDF is attained at a jump, so both
    one-sided limits are compared at every distinct sample point.
    """
    x = np.asarray(samples, dtype=float).ravel()
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, dtype=float).ravel()
    w = w / w.sum()
    points, inverse = np.unique(x, return_inverse=True)
    mass = np.bincount(inverse, weights=w, minlength=points.size)
    right = np.minimum(np.cumsum(mass), 1.0)
    left = right - mass
    truth_right = np.asarray(truth_cdf(points), dtype=float)
    truth_left = np.asarray(truth_cdf(np.nextafter(points, -np.inf)), dtype=float)
    return float(max(np.abs(right - truth_right).max(), np.abs(left - truth_left).max()))


def ks_sum(marginals: Sequence[Marginal], oracle: OracleSolution) -> float:
    if len(marginals) != oracle.T + 1:
        raise ValueError(f"{len(marginals)} marginals for an oracle over {oracle.T + 1} steps")
    return sum(ks_statistic(x, w, oracle.smoothing_cdf(t)) for t, (x, w) in enumerate(marginals))


def gaussian_ks_sum(marginals: Sequence[Marginal], means: ArrayLike, variances: ArrayLike) -> float:
    total = 0.0
    for (x, w), m, v in zip(marginals, np.asarray(means), np.asarray(variances), strict=True):
        s = math.sqrt(v)
        total += ks_statistic(x, w, lambda z, m=m, s=s: ndtr((z - m) / s))
    return total


def kl_product_gap(joint: ArrayLike, prod_a: ArrayLike, prod_b: ArrayLike) -> float:
    """KL(joint ‖ a⊗b) - KL(joint ‖ marg_a⊗marg_b), never negative for valid proposals."""
    J = np.asarray(joint, dtype=float)
    a, b = np.asarray(prod_a, dtype=float), np.asarray(prod_b, dtype=float)
    if J.shape != (a.size, b.size):
        raise ValueError(f"joint of shape {J.shape} does not match proposals of sizes {a.size} and {b.size}")
    for name, pmf in (("joint", J), ("prod_a", a), ("prod_b", b)):
        if (pmf < 0).any() or abs(pmf.sum() - 1) > 1e-9:
            raise ValueError(f"{name} is not a normalized pmf")
    rows, cols = np.nonzero(J > 0)
    if (a[rows] <= 0).any() or (b[cols] <= 0).any():
        raise InvalidProposalError("proposal vanishes where the joint has mass")
    marg_a, marg_b = J.sum(axis=1), J.sum(axis=0)
    weights = J[rows, cols]
    return float(
        np.sum(weights * (np.log(marg_a[rows] * marg_b[cols]) - np.log(a[rows] * b[cols])))
    )


def _cell(value: float | int | None, fmt: str = ".10g") -> str:
    if value is None:
        return "NA"
    if isinstance(value, int):
        return str(value)
    return format(value, fmt)


@dataclass(frozen=True)
class MetricsRow:
    replication: int
    algorithm: str
    N: int
    n: int | None
    nprime: int | None
    msem: float
    msev: float
    ks_sum: float
    runtime_ms: float
    seed: int

    def to_csv(self) -> str:
        return ",".join(
            [
                str(self.replication),
                self.algorithm,
                str(self.N),
                _cell(self.n),
                _cell(self.nprime),
                _cell(self.msem),
                _cell(self.msev),
                _cell(self.ks_sum),
                _cell(self.runtime_ms, ".3f"),
                str(self.seed),
            ]
        )


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        ordered = sorted(self.rows, key=lambda row: row.replication)
        return "\n".join([CSV_HEADER, *(row.to_csv() for row in ordered)]) + "\n"

    def summary(self) -> dict[str, dict[str, tuple[float, float]]]:
        """Mean and standard error of each metric, per algorithm."""
        out: dict[str, dict[str, tuple[float, float]]] = {}
        for algorithm in dict.fromkeys(row.algorithm for row in self.rows):
            picked = [row for row in self.rows if row.algorithm == algorithm]
            stats = {}
            for metric in ("msem", "msev", "ks_sum", "runtime_ms"):
                values = np.array([getattr(row, metric) for row in picked], dtype=float)
                stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
                stats[metric] = (float(values.mean()), stderr)
            out[algorithm] = stats
        return out

    def format_summary(self) -> str:
        lines = []
        for algorithm, stats in self.summary().items():
            cells = ", ".join(f"{name}={mean:.6g}±{err:.2g}" for name, (mean, err) in stats.items())
            lines.append(f"{algorithm} (M={sum(r.algorithm == algorithm for r in self.rows)}): {cells}")
        return "\n".join(lines)
