"""Tests for scenario configuration, the experiments and the metrics CSV."""

import json

import pytest
from pydantic import ValidationError

from src.luce_sim.config import settings
from src.luce_sim.errors import InvalidConfig
from src.luce_sim.harness import (
    METRICS_COLUMNS,
    Experiment,
    MetricsRow,
    ScenarioConfig,
    average_rows,
    derive_seed,
    experiment_many_datasets,
    experiment_same_dataset,
    experiment_submit_only,
    experiment_threads,
    metrics_csv,
    run_point,
    run_scenario,
    write_metrics,
)
from src.luce_sim.performance_monitor import PerformanceMonitor

from .conftest import SCENARIO_DIR

ADD_REQUESTER_GAS = 105842
REGISTER_GAS = 45000
SUBMIT_ONLY_GAS_PER_REQUEST = REGISTER_GAS + 22384 + ADD_REQUESTER_GAS + 24780
BASELINE_GAS_PER_REQUEST = REGISTER_GAS + 41000


def _row(**values):
    base = dict(experiment="SameDataset", param_value=5, total_simulated_seconds=1.0, total_submission_ops=5,
                total_gas=10, tokens_issued=5, tokens_revoked=0, chain_length=11)
    base.update(values)
    return MetricsRow(**base)


class TestScenarioConfig:

    def test_default_points(self):
        assert ScenarioConfig(experiment=Experiment.SAME_DATASET).points() == list(range(5, 101, 5))
        assert ScenarioConfig(experiment=Experiment.SUBMIT_ONLY).points() == [100, 500, 1000, 2000, 5000]
        assert ScenarioConfig(experiment=Experiment.THREAD_SWEEP).points() == [1, 2, 4, 8, 16, 32]
        assert ScenarioConfig(experiment=Experiment.DEMO, requesters=3).points() == [3]

    def test_rejects_missing_provider(self):
        with pytest.raises(ValidationError):
            ScenarioConfig(experiment=Experiment.SAME_DATASET, providers=0)

    def test_rejects_scripted_event_on_missing_dataset(self):
        with pytest.raises(ValidationError):
            ScenarioConfig(datasets=1, events=[{"at_s": 10, "action": "erase", "dataset": 3}])

    def test_rejects_unknown_action(self):
        with pytest.raises(ValidationError):
            ScenarioConfig(events=[{"at_s": 10, "action": "forget"}])

    def test_rejects_zero_threads(self):
        with pytest.raises(ValidationError):
            ScenarioConfig(experiment=Experiment.THREAD_SWEEP, sweep=[0, 1])

    def test_from_json_wraps_errors(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"experiment": "Tournament"}))
        with pytest.raises(InvalidConfig):
            ScenarioConfig.from_json(path)
        with pytest.raises(InvalidConfig):
            ScenarioConfig.from_json(tmp_path / "missing.json")

    def test_shipped_scenarios_load(self):
        for path in sorted(SCENARIO_DIR.glob("*.json")):
            assert ScenarioConfig.from_json(path).points()

    def test_default_horizon_is_three_periods(self):
        assert ScenarioConfig(token_period_s=100.0).horizon == 300.0


def test_derive_seed():
    assert derive_seed(42, 0) == 42
    assert derive_seed(42, 1) != 42
    assert derive_seed(42, 1) == derive_seed(42, 1)
    assert derive_seed(42, 1) != derive_seed(42, 2)


def test_average_rows():
    averaged = average_rows([_row(total_simulated_seconds=1.0, total_gas=10),
                             _row(total_simulated_seconds=3.0, total_gas=20)])
    assert averaged.total_simulated_seconds == 2.0
    assert averaged.total_gas == 15
    assert averaged.baseline_gas is None


class TestExperiments:

    def test_same_dataset_point(self):
        config = ScenarioConfig(experiment=Experiment.SAME_DATASET, seed=3, subjects=3)
        row, artifacts, _ = run_point(config, 5, 3)
        assert artifacts == {}
        assert row.tokens_issued == 5
        assert row.tokens_revoked == 0
        assert row.total_submission_ops == 5
        assert row.baseline_submission_ops == 5
        assert row.chain_length == 11
        assert row.baseline_gas == 5 * BASELINE_GAS_PER_REQUEST
        assert row.baseline_simulated_seconds < row.total_simulated_seconds
        assert row.total_simulated_seconds <= 1.1 * row.baseline_simulated_seconds

    def test_overhead_grows_with_requesters(self):
        config = ScenarioConfig(experiment=Experiment.SAME_DATASET, seed=9, subjects=2, sweep=[5, 20],
                                replications=1)
        small, large = run_scenario(config, parallel=False).rows
        assert (large.total_simulated_seconds - large.baseline_simulated_seconds
                > small.total_simulated_seconds - small.baseline_simulated_seconds)

    def test_many_datasets_spreads_requests(self):
        config = ScenarioConfig(experiment=Experiment.MANY_DATASETS, seed=4, datasets=2, subjects=2)
        row, _, _ = run_point(config, 4, 4)
        assert row.tokens_issued == 4
        assert row.chain_length == 1 + 1 + 2 * 3 + 1 + 4

    def test_submit_only_point(self):
        config = ScenarioConfig(experiment=Experiment.SUBMIT_ONLY, seed=5, subjects=2)
        row, _, _ = run_point(config, 10, 5)
        assert row.total_submission_ops == 50
        assert row.baseline_submission_ops == 20
        assert row.total_simulated_seconds == pytest.approx(10 * SUBMIT_ONLY_GAS_PER_REQUEST * 1e-6)
        assert row.baseline_simulated_seconds == pytest.approx(10 * BASELINE_GAS_PER_REQUEST * 1e-6)
        assert row.baseline_gas == 10 * BASELINE_GAS_PER_REQUEST
        assert row.tokens_issued == 10
        assert row.chain_length == 6

    def test_thread_sweep_shape(self):
        config = ScenarioConfig(experiment=Experiment.THREAD_SWEEP, seed=8, subjects=2,
                                thread_sweep_requesters=4, replications=1)
        seconds = [row.total_simulated_seconds for row in run_scenario(config, parallel=False).rows]
        assert all(a > b for a, b in zip(seconds[:5], seconds[1:5]))
        assert seconds[5] > seconds[4]

    def test_runs_are_reproducible(self):
        config = ScenarioConfig(experiment=Experiment.SAME_DATASET, seed=17, subjects=2, sweep=[3, 6],
                                replications=2)
        first = metrics_csv(run_scenario(config, parallel=False).rows)
        second = metrics_csv(run_scenario(config, parallel=False).rows)
        assert first == second

    def test_different_seeds_differ(self):
        rows = [run_point(ScenarioConfig(experiment=Experiment.SAME_DATASET, subjects=2), 3, seed)[0]
                for seed in (1, 2)]
        assert rows[0].total_simulated_seconds != rows[1].total_simulated_seconds

    def test_demo_scenario(self):
        config = ScenarioConfig.from_json(SCENARIO_DIR / "demo.json")
        row, artifacts, ops = run_point(config, config.requesters, config.seed, collect_artifacts=True)
        assert row.tokens_issued == 3
        assert row.tokens_revoked == 1
        assert row.total_simulated_seconds >= config.horizon
        assert ops > 0
        assert sorted(artifacts) == ["catalog.json", "chain.jsonl", "complaints.json", "events.jsonl"]
        complaints = json.loads(artifacts["complaints.json"])
        assert [c["outcome"] for c in complaints] == ["Compliant", "Compliant"]
        assert len(json.loads(artifacts["catalog.json"])) == 2
        events = [json.loads(line) for line in artifacts["events.jsonl"].splitlines()]
        assert sum(e["kind"] == "TokenRevoked" for e in events) == 1

    def test_submit_only_with_no_requests(self):
        row, _, _ = run_point(ScenarioConfig(experiment=Experiment.SUBMIT_ONLY, seed=5, subjects=2), 0, 5)
        assert row.total_submission_ops == 0
        assert row.total_simulated_seconds == 0
        assert row.tokens_issued == 0
        assert row.baseline_gas == 0

    def test_parallel_matches_sequential(self):
        config = ScenarioConfig(experiment=Experiment.SAME_DATASET, seed=21, subjects=2, sweep=[2, 4],
                                replications=2)
        sequential = run_scenario(config, parallel=False).rows
        parallel = run_scenario(config, parallel=True, max_workers=2).rows
        assert metrics_csv(parallel) == metrics_csv(sequential)


class TestExperimentHelpers:

    @pytest.fixture(autouse=True)
    def sequential(self, monkeypatch):
        monkeypatch.setattr(settings, "parallel_processing", False)

    def test_same_dataset_sweep(self):
        rows = experiment_same_dataset([1, 3], subjects=2, replications=1, seed=2)
        assert [r.param_value for r in rows] == [1, 3]
        assert [r.tokens_issued for r in rows] == [1, 3]

    def test_submit_only_sweep(self):
        (row,) = experiment_submit_only([4], subjects=2, replications=1, seed=2)
        assert row.experiment == "SubmitOnly"
        assert row.total_submission_ops == 20

    def test_thread_sweep_reports_thread_counts(self):
        rows = experiment_threads(n=3, threads=[1, 16], subjects=2, replications=1, seed=2)
        assert [r.param_value for r in rows] == [1, 16]
        assert rows[0].total_simulated_seconds > rows[1].total_simulated_seconds

    def test_many_datasets_sweep(self):
        rows = experiment_many_datasets([2, 4], datasets=2, subjects=2, replications=1, seed=2)
        assert [r.experiment for r in rows] == ["ManyDatasets", "ManyDatasets"]
        assert [r.tokens_issued for r in rows] == [2, 4]
        assert [r.total_submission_ops for r in rows] == [2, 4]
        assert all(r.baseline_simulated_seconds > 0 for r in rows)


@pytest.mark.parametrize("n", [100, 1000, pytest.param(5000, marks=pytest.mark.slow)])
def test_submit_only_luce_slower_than_baseline(n, monkeypatch):
    monkeypatch.setattr(settings, "parallel_processing", False)
    (row,) = experiment_submit_only([n], subjects=2, replications=1, seed=3)
    assert row.total_submission_ops == 5 * n
    assert row.baseline_submission_ops == 2 * n
    assert row.total_simulated_seconds > row.baseline_simulated_seconds > 0


class TestMetricsCsv:

    def test_header_and_integer_rendering(self):
        text = metrics_csv([_row()])
        header, line = text.rstrip("\n").split("\n")
        assert header.split(",") == METRICS_COLUMNS
        assert line == "SameDataset,5,1.000000,5,10,5,0,11,,,"

    def test_fractional_means_keep_decimals(self):
        text = metrics_csv([_row(total_gas=10.5)])
        assert ",10.500000," in text

    def test_write_metrics(self, tmp_path):
        path = write_metrics([_row(), _row(param_value=10)], tmp_path / "out" / "metrics.csv")
        assert len(path.read_text().splitlines()) == 3


def test_monitor_records_every_replication(tmp_path):
    monitor = PerformanceMonitor()
    config = ScenarioConfig(experiment=Experiment.SAME_DATASET, seed=6, subjects=2, sweep=[2, 3], replications=2)
    run_scenario(config, parallel=False, monitor=monitor)
    monitor.stop_monitoring()

    assert [(p["param_value"], p["replication"]) for p in monitor.points] == [(2, 0), (2, 1), (3, 0), (3, 1)]
    report = json.loads(monitor.save_report(tmp_path / "perf.json").read_text())
    stats = report["experiments"]["SameDataset"]
    assert stats["replications_run"] == 4
    assert stats["slowest_param_value"] in (2, 3)
    assert report["peak_process_rss_mb"] > 0
