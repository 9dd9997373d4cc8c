from pathlib import Path

import numpy as np
import pytest
from helper import slow

from ryushi import experiment
from ryushi.config import loads
from ryushi.exceptions import DegenerateRunError, DegenerateWeightsError, UnsupportedModelError
from ryushi.experiment import (
    PRESETS,
    Algorithm,
    ExperimentConfig,
    ModelKind,
    dump_cdf_comparison,
    get_preset,
    list_presets,
    replication_seed,
    resolve_config,
    run_experiment,
)
from ryushi.metrics import CSV_HEADER
from ryushi.tree import build_tree

SMALL = {"T": 7, "N": 200, "replications": 2, "oracle_bins": 400}


def small(**overrides) -> ExperimentConfig:
    return resolve_config(SMALL, overrides)


def test_aliases_and_precedence():
    config = resolve_config(get_preset("table1-bpf"), {"particles": 50}, {"seed": 3})
    assert (config.algorithm, config.N, config.seed) == (Algorithm.BPF, 50, 3)
    config = resolve_config({"filter_particles": 30, "pilot_particles": 40, "algorithm": "tps-es"})
    assert (config.n, config.nprime, config.filter_size) == (30, 40, 30)
    assert resolve_config({}).filter_size == 10000


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name: str):
    config = resolve_config(get_preset(name))
    assert config.model in (ModelKind.LINEAR, ModelKind.NONLINEAR)


def test_preset_lookup():
    assert get_preset("table2-efp-55-1") == PRESETS["table2-efp-51"]
    with pytest.raises(KeyError):
        get_preset("table9")
    listing = list_presets()
    assert "table3-esp-matched-15: " in listing
    assert "table2-efp-55-1: alias of table2-efp-51" in listing


def test_validation_collects_every_error():
    with pytest.raises(ExceptionGroup) as info:
        resolve_config({"N": 0, "alpha_f": 1.5, "algorithm": "tps-es"})
    messages = [str(e) for e in info.value.exceptions]
    assert any("N must be" in m for m in messages)
    assert any("alpha_f" in m for m in messages)
    assert any("nprime" in m for m in messages)
    with pytest.raises(ExceptionGroup) as info:
        resolve_config({"model": "nonlinear", "algorithm": "rts"})
    assert any(isinstance(e, UnsupportedModelError) for e in info.value.exceptions)


def test_replication_seeds():
    config = ExperimentConfig()
    seeds = {replication_seed(config, r) for r in range(50)}
    assert len(seeds) == 50
    assert replication_seed(config, 4) == replication_seed(ExperimentConfig(), 4)
    assert replication_seed(config, 4) != replication_seed(ExperimentConfig(seed=1), 4)


def test_bpf_run(tmp_path: Path):
    report, artifacts = run_experiment(small(algorithm="bpf"), tmp_path)
    assert len(report) == 2
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert [line.split(",")[:5] for line in lines[1:]] == [["0", "bpf", "200", "NA", "NA"], ["1", "bpf", "200", "NA", "NA"]]
    assert all(row.msem < 0.5 for row in report.rows)
    assert artifacts.diagnostics_csv is None
    assert resolve_config(loads((tmp_path / "config.resolved").read_text())) == small(algorithm="bpf")


def test_rts_is_the_truth():
    report, _ = run_experiment(small(algorithm="rts"))
    assert all(row.msem == 0 and row.msev == 0 and row.ks_sum == 0 for row in report.rows)


@pytest.mark.parametrize("algorithm", ["ffbsm", "ffbsi", "tps-l", "tps-ef"])
def test_linear_smoothers(algorithm: str):
    report, _ = run_experiment(small(algorithm=algorithm, replications=1))
    (row,) = report.rows
    assert row.msem < 0.1
    assert row.msev < 0.1
    assert 0 < row.ks_sum < 8
    assert row.n == (200 if Algorithm(algorithm).uses_filter else None)


def test_tree_artifacts(tmp_path: Path):
    config = small(algorithm="tps-ef", density="grid", grid_bins=64)
    _, artifacts = run_experiment(config, tmp_path, dump_tree=True, dump_grid_at=3, dump_oracle=True)
    diagnostics = artifacts.diagnostics_csv.read_text().splitlines()
    assert diagnostics[0] == "node_j,node_l,ess_before_resample,killed_count"
    assert len(diagnostics) == 1 + 7
    assert diagnostics[-1].startswith("0,7,")
    assert artifacts.tree_txt.read_text() == build_tree(7).dump() + "\n"
    grid = artifacts.grid_tsv.read_text().splitlines()
    assert grid[0] == "center\tdensity"
    assert len(grid) == 65
    oracle = artifacts.oracle_tsv.read_text().splitlines()
    assert oracle[0] == "t\tmean\tvar"
    assert len(oracle) == 9


def test_nonlinear_runs(tmp_path: Path):
    config = small(model="nonlinear", algorithm="tps-es", N=300, n=300, nprime=300, replications=1)
    report, artifacts = run_experiment(config, tmp_path, dump_cdf=2)
    (row,) = report.rows
    assert row.nprime == 300
    assert np.isfinite([row.msem, row.msev, row.ks_sum]).all()
    cdf = artifacts.cdf_tsv.read_text().splitlines()
    assert cdf[0] == "x\tcdf_smoothing_oracle\tcdf_filtering_oracle\tcdf_initial_sampling"
    assert len(cdf) == 1 + 400
    last = [float(v) for v in cdf[-1].split("\t")[1:]]
    assert last == pytest.approx([1.0, 1.0, 1.0])


def test_dump_cdf_comparison(tmp_path: Path):
    config = small(model="nonlinear", algorithm="bpf", replications=1)
    table = dump_cdf_comparison(config, 3)
    lines = table.splitlines()
    assert lines[0] == "x\tcdf_smoothing_oracle\tcdf_filtering_oracle\tcdf_initial_sampling"
    assert len(lines) == 1 + 400
    columns = np.array([[float(v) for v in line.split("\t")] for line in lines[1:]])
    assert (np.diff(columns, axis=0) >= 0).all()
    assert columns[-1, 1:] == pytest.approx([1.0, 1.0, 1.0])
    _, artifacts = run_experiment(config, tmp_path, dump_cdf=3)
    assert artifacts.cdf_tsv.read_text() == table
    with pytest.raises(UnsupportedModelError):
        dump_cdf_comparison(small(), 3)
    with pytest.raises(IndexError):
        dump_cdf_comparison(config, 8)


def test_runs_are_reproducible():
    config = small(algorithm="tps-l")
    first, _ = run_experiment(config)
    second, _ = run_experiment(resolve_config(SMALL, {"algorithm": "tps-l", "threads": 2}))
    for a, b in zip(first.rows, second.rows, strict=True):
        assert (a.msem, a.msev, a.ks_sum, a.seed) == (b.msem, b.msev, b.ks_sum, b.seed)
    assert first.rows[0].seed != first.rows[1].seed


def test_dump_guards():
    with pytest.raises(UnsupportedModelError):
        run_experiment(small(algorithm="bpf"), dump_cdf=1)
    with pytest.raises(IndexError):
        run_experiment(small(model="nonlinear", algorithm="bpf"), dump_cdf=8)
    with pytest.raises(UnsupportedModelError):
        run_experiment(small(algorithm="bpf"), dump_grid_at=1)
    with pytest.raises(UnsupportedModelError):
        run_experiment(small(algorithm="tps-ef", density="normal"), dump_grid_at=1)


def test_degenerate_replication(monkeypatch: pytest.MonkeyPatch):
    def collapse(*args, **kwargs):
        raise DegenerateWeightsError("all gone")

    monkeypatch.setattr(experiment, "run_smoother", collapse)
    with pytest.raises(DegenerateRunError) as info:
        run_experiment(small(algorithm="bpf", replications=1))
    assert info.value.replication == 0


@slow
def test_linear_table():
    report, _ = run_experiment(resolve_config(get_preset("table1-tpsn"), {"replications": 20}))
    summary = report.summary()["tps-ef"]
    assert len(report.rows) == 20
    assert summary["msem"][0] <= 0.003
    assert summary["msev"][0] <= 0.004


@slow
def test_nonlinear_table():
    report, _ = run_experiment(resolve_config(get_preset("table2-efp-11"), {"replications": 2}))
    assert all(row.ks_sum < 512 * 0.1 for row in report.rows)


def mean_of(name: str, metric: str, **overrides) -> float:
    report, _ = run_experiment(resolve_config(get_preset(name), overrides))
    return report.summary()[get_preset(name)["algorithm"]][metric][0]


@slow
def test_nonlinear_ordering():
    for metric in ("msem", "ks_sum"):
        assert mean_of("table2-efp-51", metric) < mean_of("table2-bpf-51", metric)


@slow
def test_local_targets_are_fragile():
    assert mean_of("table2-tpsl-15", "msem") > 10 * mean_of("table2-efp-15", "msem")


@slow
def test_smoother_targets_improve_ks():
    assert mean_of("table3-esp-equalN", "ks_sum") < mean_of("table3-efp", "ks_sum")
