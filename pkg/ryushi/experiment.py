"""Benchmark runs: one observation sequence, one truth, M seeded replications of a smoother."""

from __future__ import annotations

import enum
import time
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger

from .baselines import MarginalParticles, bootstrap_pf, ffbsi, ffbsm, rts_smoother
from .density import DensityKind, dump_grid
from .exceptions import (
    DegenerateRunError,
    DegenerateWeightsError,
    IntegrationError,
    UnsupportedModelError,
)
from .format import format_with_model
from .metrics import (
    MetricsReport,
    MetricsRow,
    gaussian_ks_sum,
    ks_sum,
    marginal_samples,
    msem,
    msev,
)
from .model import ModelSpec, ObservationSeq, linear_gaussian_model, nonlinear_benchmark_model, simulate
from .oracle import OracleSolution, discretize, forward_backward
from .resampling import Scheme
from .tps import (
    NodeDiagnostics,
    TargetFamily,
    TPSResult,
    WeightedPath,
    filter_family,
    local_family,
    local_log_factor,
    smoother_family,
    tps_run,
)
from .tree import build_tree
from .utils import default_threads, from_dict, write_atomic


class ModelKind(str, enum.Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class Algorithm(str, enum.Enum):
    BPF = "bpf"
    FFBSM = "ffbsm"
    FFBSI = "ffbsi"
    RTS = "rts"
    TPSL = "tps-l"
    TPSEF = "tps-ef"
    TPSES = "tps-es"

    @property
    def is_tree(self) -> bool:
        return self in (Algorithm.TPSL, Algorithm.TPSEF, Algorithm.TPSES)

    @property
    def uses_filter(self) -> bool:
        return self in (Algorithm.FFBSM, Algorithm.FFBSI, Algorithm.TPSEF, Algorithm.TPSES)


LINEAR_ORACLE_RANGE = (-15.0, 15.0)
NONLINEAR_ORACLE_RANGE = (-30.0, 30.0)

ALIASES = {"particles": "N", "filter_particles": "n", "pilot_particles": "nprime"}


@dataclass
class ExperimentConfig:
    model: ModelKind = ModelKind.LINEAR
    """State-space model: `linear` (X_t = 0.8 X_{t-1} + V_t, Y_t = X_t + W_t) or `nonlinear`."""

    T: int = 127
    """Index of the last time step; the sequence has T + 1 observations."""

    tau: float = 1.0
    """Transition noise standard deviation of the nonlinear model."""

    sigma: float = 1.0
    """Observation noise standard deviation of the nonlinear model."""

    algorithm: Algorithm = Algorithm.TPSEF
    """One of bpf, ffbsm, ffbsi, rts, tps-l, tps-ef, tps-es."""

    N: int = 10000
    """Particles of the smoother (backward draws for ffbsi). Also accepted as `particles`."""

    n: int | None = None
    """Particles of the filter whose output feeds ffbsm, ffbsi or the tree smoother's estimates.
    Defaults to N. Also accepted as `filter_particles`."""

    nprime: int | None = None
    """Particles of the tps-ef pilot run feeding the smoother estimates of tps-es.
    Also accepted as `pilot_particles`."""

    alpha_f: float = 0.95
    """Weight of the filter grid in the filter mixture of tps-es."""

    alpha_s: float = 0.95
    """Weight of the smoother grid in the smoother mixture of tps-es."""

    resampling: Scheme = Scheme.SYSTEMATIC
    """multinomial, residual or systematic."""

    ess_threshold: float | None = None
    """Resample only when ESS < ess_threshold · N. `none` resamples at every step."""

    density: DensityKind = DensityKind.GRID
    """Leaf estimates of tps-ef and tps-es: normal, kde or grid."""

    grid_bins: int = 512
    bandwidth: float | None = None
    """KDE bandwidth; `none` picks Silverman's rule on the weighted samples."""

    oracle_bins: int = 2000
    oracle_range: tuple[float, float] | None = None
    """Initial range of the oracle grid, widened automatically when mass leaks out."""

    replications: int = 20
    seed: int = 0
    """Master seed; replication r runs on a stream derived from (seed, r)."""

    obs_seed: int = 1234
    """Seed of the simulated observation sequence, shared by every replication."""

    threads: int | None = None
    """Worker threads. `none` reads RYUSHI_THREADS and falls back to 1."""

    @property
    def filter_size(self) -> int:
        return self.n if self.n is not None else self.N

    @property
    def worker_count(self) -> int:
        return self.threads if self.threads is not None else default_threads()

    def validate(self) -> None:
        errors: list[Exception] = []
        for name in ("N", "replications"):
            if getattr(self, name) < 1:
                errors.append(ValueError(f"{name} must be >= 1, got {getattr(self, name)}"))
        for name in ("n", "nprime", "threads"):
            value = getattr(self, name)
            if value is not None and value < 1:
                errors.append(ValueError(f"{name} must be >= 1, got {value}"))
        if self.T < 0:
            errors.append(ValueError(f"T must be >= 0, got {self.T}"))
        if self.tau <= 0 or self.sigma <= 0:
            errors.append(ValueError(f"tau and sigma must be positive, got {self.tau} and {self.sigma}"))
        for name in ("alpha_f", "alpha_s"):
            if not 0 < getattr(self, name) < 1:
                errors.append(ValueError(f"{name} must lie in (0, 1), got {getattr(self, name)}"))
        if self.ess_threshold is not None and not 0 < self.ess_threshold <= 1:
            errors.append(ValueError(f"ess_threshold must lie in (0, 1], got {self.ess_threshold}"))
        if self.bandwidth is not None and self.bandwidth <= 0:
            errors.append(ValueError(f"bandwidth must be positive, got {self.bandwidth}"))
        if self.grid_bins < 8:
            errors.append(ValueError(f"grid_bins must be >= 8, got {self.grid_bins}"))
        if self.oracle_bins < 16:
            errors.append(ValueError(f"oracle_bins must be >= 16, got {self.oracle_bins}"))
        if self.oracle_range is not None and not self.oracle_range[0] < self.oracle_range[1]:
            errors.append(ValueError(f"oracle_range must be increasing, got {self.oracle_range}"))
        if (self.algorithm is Algorithm.TPSES) != (self.nprime is not None):
            errors.append(ValueError("nprime is required for tps-es and only for tps-es"))
        if self.algorithm is Algorithm.RTS and self.model is not ModelKind.LINEAR:
            errors.append(UnsupportedModelError("rts needs the linear model"))
        if (self.algorithm is Algorithm.BPF and self.N < 2) or (self.algorithm.uses_filter and self.filter_size < 2):
            errors.append(ValueError("the particle filter needs at least 2 particles"))
        if errors:
            raise ExceptionGroup(f"{len(errors)} errors occurred validating the experiment config", errors)


def _table_presets() -> dict[str, dict[str, Any]]:
    presets: dict[str, dict[str, Any]] = {}
    linear = {"model": "linear", "T": 127}
    presets["table1-bpf"] = {**linear, "algorithm": "bpf", "N": 44000}
    presets["table1-ffbsm"] = {**linear, "algorithm": "ffbsm", "N": 410, "n": 410}
    presets["table1-ffbsi"] = {**linear, "algorithm": "ffbsi", "N": 450, "n": 450}
    presets["table1-tpsn"] = {**linear, "algorithm": "tps-ef", "density": "normal", "N": 10000, "n": 10000}
    presets["table1-tpsl"] = {**linear, "algorithm": "tps-l", "N": 13000}
    for tau, sigma in ((1, 1), (1, 5), (5, 1)):
        nonlinear = {"model": "nonlinear", "T": 511, "tau": float(tau), "sigma": float(sigma)}
        suffix = f"{tau}{sigma}"
        presets[f"table2-bpf-{suffix}"] = {**nonlinear, "algorithm": "bpf", "N": 40000}
        presets[f"table2-ffbsm-{suffix}"] = {**nonlinear, "algorithm": "ffbsm", "N": 315, "n": 315}
        presets[f"table2-ffbsi-{suffix}"] = {**nonlinear, "algorithm": "ffbsi", "N": 320, "n": 320}
        presets[f"table2-efp-{suffix}"] = {
            **nonlinear,
            "algorithm": "tps-ef",
            "density": "grid",
            "N": 10000,
            "n": 10000,
        }
        presets[f"table2-tpsl-{suffix}"] = {**nonlinear, "algorithm": "tps-l", "N": 13000}

        table3 = "" if suffix == "11" else f"-{suffix}"
        grid = {**nonlinear, "density": "grid"}
        presets[f"table3-efp{table3}"] = {**grid, "algorithm": "tps-ef", "N": 50000, "n": 50000}
        presets[f"table3-esp-equalN{table3}"] = {
            **grid,
            "algorithm": "tps-es",
            "N": 50000,
            "n": 50000,
            "nprime": 50000,
        }
        presets[f"table3-esp-matched{table3}"] = {
            **grid,
            "algorithm": "tps-es",
            "N": 18000,
            "n": 50000,
            "nprime": 25000,
        }
    return presets


PRESETS: dict[str, dict[str, Any]] = _table_presets()
PRESET_ALIASES = {"table2-efp-55-1": "table2-efp-51"}


def get_preset(name: str) -> dict[str, Any]:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}, see `ryushi presets`")
    return dict(PRESETS[name])


def list_presets() -> str:
    lines = []
    for name in sorted(PRESETS):
        settings = ", ".join(f"{k}={v}" for k, v in PRESETS[name].items())
        lines.append(f"{name}: {settings}")
    for alias, target in PRESET_ALIASES.items():
        lines.append(f"{alias}: alias of {target}")
    return "\n".join(lines)


def resolve_config(*layers: Mapping[str, Any]) -> ExperimentConfig:
    """Merge raw key/value layers (later layers win) onto the defaults and validate."""
    merged: dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            merged[ALIASES.get(key, key)] = value
    config = from_dict(ExperimentConfig, merged)
    config.validate()
    return config


@dataclass
class RunArtifacts:
    metrics_csv: Path | None = None
    resolved_config: Path | None = None
    diagnostics_csv: Path | None = None
    tree_txt: Path | None = None
    cdf_tsv: Path | None = None
    grid_tsv: Path | None = None
    oracle_tsv: Path | None = None


@dataclass(frozen=True, eq=False)
class Truth:
    means: np.ndarray
    variances: np.ndarray
    oracle: OracleSolution | None = None

    def ks_sum(self, marginals) -> float:
        if self.oracle is not None:
            return ks_sum(marginals, self.oracle)
        return gaussian_ks_sum(marginals, self.means, self.variances)


@dataclass
class _Replication:
    row: MetricsRow
    diagnostics: list[NodeDiagnostics] = field(default_factory=list)
    family: TargetFamily | None = None


def build_model(config: ExperimentConfig) -> ModelSpec:
    if config.model is ModelKind.LINEAR:
        return linear_gaussian_model(config.T)
    return nonlinear_benchmark_model(config.T, config.tau, config.sigma)


def observe(config: ExperimentConfig, model: ModelSpec) -> ObservationSeq:
    _, obs = simulate(model, np.random.default_rng(config.obs_seed))
    return obs


def compute_oracle(config: ExperimentConfig, model: ModelSpec, obs: ObservationSeq) -> OracleSolution:
    default = LINEAR_ORACLE_RANGE if config.model is ModelKind.LINEAR else NONLINEAR_ORACLE_RANGE
    dhmm = discretize(model, obs, config.oracle_bins, config.oracle_range or default)
    return forward_backward(dhmm)


def compute_truth(config: ExperimentConfig, model: ModelSpec, obs: ObservationSeq) -> Truth:
    if config.model is ModelKind.LINEAR:
        belief = rts_smoother(model, obs)
        return Truth(belief.mean, belief.var)
    oracle = compute_oracle(config, model, obs)
    return Truth(oracle.means(), oracle.variances(), oracle)


def replication_seed(config: ExperimentConfig, r: int) -> int:
    return int(np.random.SeedSequence([config.seed, r]).generate_state(1, np.uint64)[0])


def run_smoother(
    config: ExperimentConfig,
    model: ModelSpec,
    obs: ObservationSeq,
    rng: np.random.Generator,
    threads: int = 1,
) -> tuple[WeightedPath | MarginalParticles, TPSResult | None, TargetFamily | None]:
    """One run of the configured algorithm; also returns the tree run and family when there is one."""
    algorithm = config.algorithm
    if algorithm is Algorithm.BPF:
        filter_out = bootstrap_pf(model, obs, config.N, True, config.resampling, rng, config.ess_threshold)
        return filter_out.smoothing_path(), None, None
    if algorithm is Algorithm.TPSL:
        family = local_family()
    else:
        filter_out = bootstrap_pf(model, obs, config.filter_size, False, config.resampling, rng, config.ess_threshold)
        if algorithm is Algorithm.FFBSM:
            return ffbsm(filter_out, model), None, None
        if algorithm is Algorithm.FFBSI:
            return ffbsi(filter_out, model, config.N, rng), None, None
        family = filter_family(filter_out, config.density, config.grid_bins, config.bandwidth)
        if algorithm is Algorithm.TPSES:
            assert config.nprime is not None
            pilot = tps_run(
                model, obs, family, config.nprime, config.resampling, rng,
                threads=threads, ess_threshold=config.ess_threshold,
            )
            family = smoother_family(
                filter_out, pilot.path, config.density, config.alpha_f, config.alpha_s,
                config.grid_bins, config.bandwidth,
            )
    result = tps_run(
        model, obs, family, config.N, config.resampling, rng,
        threads=threads, ess_threshold=config.ess_threshold,
    )
    return result.path, result, family


def _replicate(
    config: ExperimentConfig,
    model: ModelSpec,
    obs: ObservationSeq,
    truth: Truth,
    r: int,
    threads: int,
) -> _Replication:
    seed = replication_seed(config, r)
    start = time.perf_counter()
    try:
        if config.algorithm is Algorithm.RTS:
            belief = rts_smoother(model, obs)
            means, variances, ks, diagnostics, family = belief.mean, belief.var, 0.0, [], None
        else:
            output, tree_run, family = run_smoother(config, model, obs, np.random.default_rng(seed), threads)
            means, variances = output.means(), output.variances()
            ks = truth.ks_sum(marginal_samples(output))
            diagnostics = tree_run.diagnostics if tree_run is not None else []
    except (DegenerateWeightsError, IntegrationError) as e:
        raise DegenerateRunError(r, e) from e
    runtime_ms = (time.perf_counter() - start) * 1000
    row = MetricsRow(
        replication=r,
        algorithm=config.algorithm.value,
        N=config.N,
        n=config.filter_size if config.algorithm.uses_filter else None,
        nprime=config.nprime,
        msem=msem(means, truth.means),
        msev=msev(variances, truth.variances),
        ks_sum=ks,
        runtime_ms=runtime_ms,
        seed=seed,
    )
    logger.info(f"replication {r}: msem={row.msem:.6g}, msev={row.msev:.6g}, ks_sum={row.ks_sum:.6g}")
    return _Replication(row, diagnostics, family)


def diagnostics_csv(diagnostics: list[NodeDiagnostics]) -> str:
    lines = ["node_j,node_l,ess_before_resample,killed_count"]
    lines.extend(f"{d.node_j},{d.node_l},{d.ess_before_resample:.10g},{d.killed_count}" for d in diagnostics)
    return "\n".join(lines) + "\n"


def cdf_comparison(model: ModelSpec, obs: ObservationSeq, oracle: OracleSolution, t: int) -> str:
    """Oracle smoothing and filtering CDFs against the tps-l leaf distribution at index t."""
    if not 0 <= t <= model.T:
        raise IndexError(f"index {t} outside 0..{model.T}")
    if oracle.edges is None:
        raise UnsupportedModelError("CDF comparison needs a discretized continuous model")
    x = oracle.edges[1:]
    log_f = local_log_factor(model, obs, t, oracle.grid)
    pmf = np.exp(log_f - log_f.max())
    initial = np.cumsum(pmf) / pmf.sum()
    smoothing = oracle.smoothing_cdf(t)(x)
    filtering = oracle.filtering_cdf(t)(x)
    lines = ["x\tcdf_smoothing_oracle\tcdf_filtering_oracle\tcdf_initial_sampling"]
    lines.extend(f"{a:.10g}\t{b:.10g}\t{c:.10g}\t{d:.10g}" for a, b, c, d in zip(x, smoothing, filtering, initial))
    return "\n".join(lines) + "\n"


def dump_cdf_comparison(config: ExperimentConfig, t: int) -> str:
    if config.model is not ModelKind.NONLINEAR:
        raise UnsupportedModelError("the CDF comparison is only defined for the nonlinear model")
    if not 0 <= t <= config.T:
        raise IndexError(f"index {t} outside 0..{config.T}")
    model = build_model(config)
    obs = observe(config, model)
    return cdf_comparison(model, obs, compute_oracle(config, model, obs), t)


def run_experiment(
    config: ExperimentConfig,
    out_dir: Path | None = None,
    *,
    dump_tree: bool = False,
    dump_cdf: int | None = None,
    dump_grid_at: int | None = None,
    dump_oracle: bool = False,
) -> tuple[MetricsReport, RunArtifacts]:
    """Simulate the observations, compute the truth and run every replication.

    Artifacts are only written when `out_dir` is given.

    Raises:
        DegenerateRunError: a replication lost all of its particle weight.
        UnsupportedModelError: a dump was requested that the configuration cannot provide.
    """
    config.validate()
    if dump_cdf is not None and config.model is not ModelKind.NONLINEAR:
        raise UnsupportedModelError("the CDF comparison is only defined for the nonlinear model")
    for name, t in (("dump_cdf", dump_cdf), ("dump_grid_at", dump_grid_at)):
        if t is not None and not 0 <= t <= config.T:
            raise IndexError(f"{name} index {t} outside 0..{config.T}")
    if dump_grid_at is not None and (
        config.algorithm not in (Algorithm.TPSEF, Algorithm.TPSES) or config.density is not DensityKind.GRID
    ):
        raise UnsupportedModelError("grid dumps need tps-ef or tps-es with density = grid")

    model = build_model(config)
    obs = observe(config, model)
    truth = compute_truth(config, model, obs)
    logger.info(f"truth computed for the {config.model.value} model with T={config.T}")

    threads = config.worker_count
    inner = 1 if config.replications > 1 else threads
    runs = range(config.replications)
    if threads > 1 and config.replications > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            replications = list(pool.map(lambda r: _replicate(config, model, obs, truth, r, inner), runs))
    else:
        replications = [_replicate(config, model, obs, truth, r, inner) for r in runs]
    report = MetricsReport([rep.row for rep in replications])
    logger.info(f"finished {len(report)} replications\n{report.format_summary()}")

    artifacts = RunArtifacts()
    if out_dir is None:
        return report, artifacts
    artifacts.metrics_csv = write_atomic(out_dir / "metrics.csv", report.to_csv())
    artifacts.resolved_config = write_atomic(
        out_dir / "config.resolved", format_with_model(config, header="resolved experiment configuration")
    )
    if config.algorithm.is_tree:
        artifacts.diagnostics_csv = write_atomic(out_dir / "diagnostics.csv", diagnostics_csv(replications[0].diagnostics))
    if dump_tree:
        artifacts.tree_txt = write_atomic(out_dir / "tree.txt", build_tree(config.T).dump() + "\n")
    if dump_cdf is not None:
        oracle = truth.oracle or compute_oracle(config, model, obs)
        artifacts.cdf_tsv = write_atomic(out_dir / f"cdf_t{dump_cdf}.tsv", cdf_comparison(model, obs, oracle, dump_cdf))
    if dump_grid_at is not None:
        family = replications[0].family
        assert family is not None
        artifacts.grid_tsv = write_atomic(
            out_dir / f"grid_t{dump_grid_at}.tsv", dump_grid(family.leaf_density(dump_grid_at))
        )
    if dump_oracle:
        oracle = truth.oracle or compute_oracle(config, model, obs)
        artifacts.oracle_tsv = write_atomic(out_dir / "oracle.tsv", oracle.dump())
    return report, artifacts

