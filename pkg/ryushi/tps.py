"""Divide-and-conquer particle smoothing over the auxiliary binary tree.

Every node [j, l] carries N weighted paths x_{j:l}. Leaves are sampled from a per-index
target, internal nodes concatenate their children's paths index by index, reweight the
joined paths and resample. The family of intermediate targets decides both the leaf
distributions and the weight increment applied at each cut:

- ``tps-l``: leaves follow the local factors p(y_j|x_j) (times p(x_0) at j = 0).
- ``tps-ef``: leaves follow estimates of the filtering marginals p(x_j|y_{0:j}).
- ``tps-es``: leaves follow estimates of the smoothing marginals p(x_j|y_{0:T}).

The root always targets the exact joint smoothing distribution p(x_{0:T}|y_{0:T}).
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.special import logsumexp

from .density import (
    Density,
    DensityKind,
    DiscreteDensity,
    GridDensity,
    estimate_marginal,
    mixture_filter_estimate,
    mixture_smoother_estimate,
)
from .exceptions import DegenerateMergeError, DegenerateWeightsError, IntegrationError
from .model import ModelSpec, ObservationSeq, check_observations
from .resampling import Scheme, ess, normalize, resample, should_resample
from .tree import Tree, TreeNode, build_tree

if TYPE_CHECKING:
    from .baselines import FilterOutput

FloatArray = NDArray[np.float64]

_COARSE_POINTS = 8001
_FINE_POINTS = 1024
_KEEP_WITHIN = 40.0
_BOUNDARY_TOLERANCE = 1e-3
_ESS_ALARM = 0.01


class Variant(str, enum.Enum):
    TPSL = "tps-l"
    TPSEF = "tps-ef"
    TPSES = "tps-es"


@dataclass(frozen=True, eq=False)
class WeightedPath:
    """N weighted paths over the index span [j, l]; column c holds X_{j+c}."""

    span: tuple[int, int]
    particles: FloatArray
    log_weights: FloatArray
    log_normalizer: float = 0.0
    """Running estimate of the log normalizing constant of the span's target."""

    def __post_init__(self) -> None:
        j, l = self.span
        if self.particles.ndim != 2 or self.particles.shape[1] != l - j + 1:
            raise ValueError(f"particles of shape {self.particles.shape} do not cover span [{j}, {l}]")
        if self.log_weights.shape != (self.particles.shape[0],):
            raise ValueError("one log-weight per particle is required")

    @property
    def N(self) -> int:
        return self.particles.shape[0]

    @property
    def weights(self) -> FloatArray:
        return normalize(self.log_weights)[0]

    def marginal(self, t: int) -> FloatArray:
        j, l = self.span
        if not j <= t <= l:
            raise IndexError(f"index {t} outside span [{j}, {l}]")
        return self.particles[:, t - j]

    def means(self) -> FloatArray:
        return self.weights @ self.particles

    def variances(self) -> FloatArray:
        w = self.weights
        mean = w @ self.particles
        return w @ (self.particles - mean) ** 2


@dataclass(frozen=True, eq=False)
class TargetFamily:
    variant: Variant
    filter_estimates: tuple[Density, ...] = ()
    smoother_estimates: tuple[Density, ...] = ()

    def __post_init__(self) -> None:
        if self.variant is not Variant.TPSL and not self.filter_estimates:
            raise ValueError(f"{self.variant.value} needs a filter estimate for every index")
        if self.variant is Variant.TPSES and len(self.smoother_estimates) != len(self.filter_estimates):
            raise ValueError(
                f"tps-es needs as many smoother estimates as filter estimates, "
                f"got {len(self.smoother_estimates)} and {len(self.filter_estimates)}"
            )

    def check_length(self, T: int) -> None:
        if self.variant is not Variant.TPSL and len(self.filter_estimates) != T + 1:
            raise ValueError(f"expected {T + 1} leaf estimates, got {len(self.filter_estimates)}")

    def leaf_density(self, j: int) -> Density:
        if self.variant is Variant.TPSEF:
            return self.filter_estimates[j]
        if self.variant is Variant.TPSES:
            return self.smoother_estimates[j]
        raise ValueError("tps-l leaves are built from the model, not from estimates")

    def leaf_log_density(self, model: ModelSpec, obs: ObservationSeq, j: int, x: FloatArray) -> FloatArray:
        """Log leaf density at index j; unnormalized local factor for tps-l."""
        if self.variant is Variant.TPSL:
            return local_log_factor(model, obs, j, x)
        return self.leaf_density(j).log_density(x)


@dataclass(frozen=True, eq=False)
class NodeDiagnostics:
    node_j: int
    node_l: int
    ess_before_resample: float
    killed_count: int
    marginal_means: FloatArray = field(repr=False)


@dataclass(frozen=True, eq=False)
class TPSResult:
    path: WeightedPath
    diagnostics: list[NodeDiagnostics]
    log_evidence: float
    tree: Tree

    def means(self) -> FloatArray:
        return self.path.means()

    def variances(self) -> FloatArray:
        return self.path.variances()


def _sanitize(log_values: FloatArray) -> FloatArray:
    return np.where(np.isnan(log_values) | (log_values == np.inf), -np.inf, log_values)


def local_log_factor(model: ModelSpec, obs: ObservationSeq, j: int, x: FloatArray) -> FloatArray:
    with np.errstate(divide="ignore"):
        log_f = model.log_emit(j, x, obs[j])
        if j == 0:
            log_f = log_f + model.log_prior(x)
    return np.asarray(log_f, dtype=float)


def local_leaf_density(model: ModelSpec, obs: ObservationSeq, j: int) -> tuple[Density, float]:
    """The normalized local factor at index j and the log of its normalizing constant.

    Finite models are enumerated. Otherwise the unnormalized density is searched on a
    coarse grid over `model.search_range`, the region within 40 nats of the peak is
    resolved on a fine grid, and the result is a piecewise-constant density.
    """
    if model.support is not None:
        log_f = local_log_factor(model, obs, j, model.support)
        if not np.isfinite(log_f).any():
            raise IntegrationError(f"local factor at index {j} vanishes on the whole support")
        log_z = float(logsumexp(log_f))
        return DiscreteDensity(model.support, np.exp(log_f - log_z)), log_z

    lo, hi = model.search_range
    coarse = np.linspace(lo, hi, _COARSE_POINTS)
    log_f = local_log_factor(model, obs, j, coarse)
    peak = float(log_f.max())
    if not np.isfinite(peak):
        raise IntegrationError(f"local factor at index {j} vanishes on [{lo}, {hi}]")
    keep = np.flatnonzero(log_f >= peak - _KEEP_WITHIN)
    step = coarse[1] - coarse[0]
    a, b = max(lo, coarse[keep[0]] - step), min(hi, coarse[keep[-1]] + step)

    fine = np.linspace(a, b, _FINE_POINTS)
    log_fine = local_log_factor(model, obs, j, fine)
    peak = max(peak, float(log_fine.max()))
    values = np.exp(log_fine - peak)
    edge = (values[0] + values[-1]) / values.sum()
    if edge > _BOUNDARY_TOLERANCE:
        raise IntegrationError(
            f"local factor at index {j} keeps {edge:.3g} of its mass at the edge of [{a:.6g}, {b:.6g}]; "
            f"widen the model's search range"
        )
    grid = GridDensity(float(fine[0]), float(fine[1] - fine[0]), values)
    return grid, peak + math.log(grid.norm_factor)


def leaf_sample(
    family: TargetFamily,
    j: int,
    model: ModelSpec,
    obs: ObservationSeq,
    N: int,
    rng: np.random.Generator,
) -> WeightedPath:
    log_z = 0.0
    if family.variant is Variant.TPSL:
        density, log_z = local_leaf_density(model, obs, j)
    else:
        density = family.leaf_density(j)
    x = np.asarray(density.sample(rng, N), dtype=float)
    return WeightedPath((j, j), x[:, None], np.full(N, -math.log(N)), log_z)


def merge_log_weight(
    family: TargetFamily,
    model: ModelSpec,
    obs: ObservationSeq,
    k: int,
    x_left_last: FloatArray,
    x_right_first: FloatArray,
) -> FloatArray:
    """Log weight increment for joining at cut k, x̃_{k-1} = `x_left_last`, x̃_k = `x_right_first`.

    A particle whose increment is undefined (zero estimate in a denominator) gets -inf.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        incr = np.asarray(model.log_trans(k, x_left_last, x_right_first), dtype=float)
        if family.variant is Variant.TPSL:
            return _sanitize(incr)
        incr = (
            incr
            + model.log_emit(k, x_right_first, obs[k])
            - family.filter_estimates[k].log_density(x_right_first)
        )
        if family.variant is Variant.TPSES:
            incr = (
                incr
                + family.filter_estimates[k - 1].log_density(x_left_last)
                - family.smoother_estimates[k - 1].log_density(x_left_last)
            )
    return _sanitize(incr)


def root_log_correction(
    family: TargetFamily,
    model: ModelSpec,
    obs: ObservationSeq,
    x_first: FloatArray,
    x_last: FloatArray,
) -> FloatArray:
    """Extra log weight at the root turning the composed target into p(x_{0:T}|y_{0:T})."""
    if family.variant is Variant.TPSL:
        return np.zeros(np.shape(x_first))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = (
            model.log_prior(x_first)
            + model.log_emit(0, x_first, obs[0])
            - family.filter_estimates[0].log_density(x_first)
        )
        if family.variant is Variant.TPSES:
            T = model.T
            corr = (
                corr
                + family.filter_estimates[T].log_density(x_last)
                - family.smoother_estimates[T].log_density(x_last)
            )
    return _sanitize(np.asarray(corr, dtype=float))


def _reweight(
    node: TreeNode,
    family: TargetFamily,
    particles: FloatArray,
    log_w: FloatArray,
    incr: FloatArray,
    log_z: float,
    N: int,
    scheme: Scheme,
    rng: np.random.Generator,
    ess_threshold: float | None,
) -> tuple[WeightedPath, NodeDiagnostics]:
    killed = int(np.count_nonzero(np.isneginf(incr) & np.isfinite(log_w)))
    updated = log_w + incr
    try:
        weights, _ = normalize(updated)
    except DegenerateWeightsError as e:
        raise DegenerateMergeError(node.j, node.l) from e
    log_z += float(logsumexp(updated) - logsumexp(log_w))

    value = ess(weights)
    if value < _ESS_ALARM * N:
        logger.warning(f"ESS collapsed to {value:.1f} of {N} at node [{node.j}, {node.l}]")
    if killed and family.variant is Variant.TPSES:
        logger.warning(f"{killed} of {N} particles killed at node [{node.j}, {node.l}]")
    logger.debug(f"node [{node.j}, {node.l}]: ess={value:.1f}, killed={killed}")
    diag = NodeDiagnostics(node.j, node.l, value, killed, weights @ particles)

    if should_resample(weights, ess_threshold):
        particles = particles[resample(weights, N, scheme, rng)]
        new_log_w = np.full(N, -math.log(N))
    else:
        with np.errstate(divide="ignore"):
            new_log_w = np.log(weights)
    return WeightedPath(node.span, particles, new_log_w, log_z), diag


def ts(
    node: TreeNode,
    family: TargetFamily,
    model: ModelSpec,
    obs: ObservationSeq,
    N: int,
    scheme: Scheme | str,
    rng: np.random.Generator,
    left: WeightedPath | None = None,
    right: WeightedPath | None = None,
    *,
    is_root: bool = False,
    ess_threshold: float | None = None,
) -> tuple[WeightedPath, NodeDiagnostics | None]:
    """Evaluate one node given its children's results (nothing for a leaf).

    Returns the node's paths and, when the node reweighted, its diagnostics.
    """
    scheme = Scheme(scheme)
    if node.is_leaf:
        path = leaf_sample(family, node.j, model, obs, N, rng)
        if not is_root or family.variant is Variant.TPSL:
            return path, None
        x = path.particles[:, 0]
        incr = root_log_correction(family, model, obs, x, x)
        return _reweight(
            node, family, path.particles, path.log_weights, incr, path.log_normalizer, N, scheme, rng, ess_threshold
        )

    if left is None or right is None:
        raise ValueError(f"node [{node.j}, {node.l}] needs both children evaluated first")
    assert node.cut is not None
    particles = np.hstack([left.particles, right.particles])
    log_w = left.log_weights + right.log_weights
    incr = merge_log_weight(family, model, obs, node.cut, left.particles[:, -1], right.particles[:, 0])
    if is_root:
        incr = incr + root_log_correction(family, model, obs, particles[:, 0], particles[:, -1])
    log_z = left.log_normalizer + right.log_normalizer
    return _reweight(node, family, particles, log_w, incr, log_z, N, scheme, rng, ess_threshold)


def tps_run(
    model: ModelSpec,
    obs: ObservationSeq,
    family: TargetFamily,
    N: int,
    scheme: Scheme | str = Scheme.SYSTEMATIC,
    rng: np.random.Generator | None = None,
    *,
    threads: int = 1,
    ess_threshold: float | None = None,
    tree: Tree | None = None,
) -> TPSResult:
    """Run the tree smoother from the leaves up to the root.

    Args:
        model (ModelSpec): the hidden Markov model.
        obs (ObservationSeq): y_{0:T}.
        family (TargetFamily): intermediate targets, see `local_family`, `filter_family`
            and `smoother_family`.
        N (int): particles per node.
        scheme (Scheme | str): resampling scheme used at every merge.
        rng (np.random.Generator | None): only used to draw the seed of the per-node streams.
        threads (int): worker threads; sibling subtrees of one tree level run concurrently.
        ess_threshold (float | None): resample a merge only when its ESS falls below this
            fraction of N. `None` resamples every merge.
        tree (Tree | None): a prebuilt tree over 0..T.

    Returns:
        TPSResult: root paths, per-merge diagnostics and the log evidence estimate.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    check_observations(model, obs)
    family.check_length(model.T)
    scheme = Scheme(scheme)
    tree = tree or build_tree(model.T)
    if tree.T != model.T:
        raise ValueError(f"tree covers 0..{tree.T} but the model has T={model.T}")
    base = int((rng or np.random.default_rng()).integers(2**63 - 1))

    results: dict[int, WeightedPath] = {}
    diagnostics: dict[int, NodeDiagnostics] = {}

    def evaluate(node_id: int) -> tuple[int, WeightedPath, NodeDiagnostics | None]:
        node = tree.nodes[node_id]
        node_rng = np.random.default_rng([base, node.j, node.l])
        left = results[node.left] if node.left is not None else None
        right = results[node.right] if node.right is not None else None
        path, diag = ts(
            node,
            family,
            model,
            obs,
            N,
            scheme,
            node_rng,
            left,
            right,
            is_root=node_id == tree.root,
            ess_threshold=ess_threshold,
        )
        return node_id, path, diag

    def collect(outputs: Iterable[tuple[int, WeightedPath, NodeDiagnostics | None]], level: Sequence[int]) -> None:
        for node_id, path, diag in outputs:
            results[node_id] = path
            if diag is not None:
                diagnostics[node_id] = diag
        for node_id in level:
            node = tree.nodes[node_id]
            if not node.is_leaf:
                del results[node.left], results[node.right]  # type: ignore[arg-type]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for level in tree.levels:
                collect(list(pool.map(evaluate, level)), level)
    else:
        for level in tree.levels:
            collect([evaluate(node_id) for node_id in level], level)

    root = results[tree.root]
    ordered = [diagnostics[i] for i in tree.schedule if i in diagnostics]
    logger.debug(f"{family.variant.value} finished, log evidence {root.log_normalizer:.6g}")
    return TPSResult(root, ordered, root.log_normalizer, tree)


def local_family() -> TargetFamily:
    return TargetFamily(Variant.TPSL)


def filter_family(
    filter_out: FilterOutput,
    kind: DensityKind | str = DensityKind.GRID,
    grid_bins: int = 512,
    bandwidth: float | None = None,
) -> TargetFamily:
    """Leaf targets estimated from the weighted particles of a particle filter."""
    estimates = tuple(
        estimate_marginal(kind, filter_out.particles[t], filter_out.weights[t], grid_bins, bandwidth)
        for t in range(filter_out.T + 1)
    )
    return TargetFamily(Variant.TPSEF, filter_estimates=estimates)


def smoother_family(
    filter_out: FilterOutput,
    smoother_path: WeightedPath,
    kind: DensityKind | str = DensityKind.GRID,
    alpha_f: float = 0.95,
    alpha_s: float = 0.95,
    grid_bins: int = 512,
    bandwidth: float | None = None,
) -> TargetFamily:
    """Filter and smoother leaf targets that share their support.

    Each index mixes the filter estimate g_f and the smoother estimate g_s (built from the
    paths of a previous smoother run) as alpha_f·g_f + (1-alpha_f)·g_s for filtering and
    alpha_s·g_s + (1-alpha_s)·g_f for smoothing.
    """
    if smoother_path.span != (0, filter_out.T):
        raise ValueError(f"smoother paths cover {smoother_path.span}, expected (0, {filter_out.T})")
    smoother_weights = smoother_path.weights
    filters, smoothers = [], []
    for t in range(filter_out.T + 1):
        g_f = estimate_marginal(kind, filter_out.particles[t], filter_out.weights[t], grid_bins, bandwidth)
        g_s = estimate_marginal(kind, smoother_path.marginal(t), smoother_weights, grid_bins, bandwidth)
        filters.append(mixture_filter_estimate(g_f, g_s, alpha_f))
        smoothers.append(mixture_smoother_estimate(g_s, g_f, alpha_s))
    return TargetFamily(Variant.TPSES, tuple(filters), tuple(smoothers))
