#!/usr/bin/env python3
"""Desk-scale timing of the submission-only experiment (up to 5000 requesters)."""

import sys
import time
from pathlib import Path

from loguru import logger

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.luce_sim.harness import Experiment, ScenarioConfig, run_scenario  # noqa: E402
from src.luce_sim.performance_monitor import PerformanceMonitor  # noqa: E402

WALL_CLOCK_LIMIT_S = 60.0


def run_performance_test(sizes=(100, 1000, 5000)) -> dict:
    """Run each size once, sequentially, and time it."""
    results = {}
    monitor = PerformanceMonitor()
    for n in sizes:
        config = ScenarioConfig(experiment=Experiment.SUBMIT_ONLY, sweep=[n], replications=1)
        start = time.perf_counter()
        result = run_scenario(config, parallel=False, monitor=monitor)
        elapsed = time.perf_counter() - start
        row = result.rows[0]
        results[n] = {
            'wall_clock_s': elapsed,
            'luce_ops': row.total_submission_ops,
            'baseline_ops': row.baseline_submission_ops,
            'within_limit': elapsed < WALL_CLOCK_LIMIT_S,
        }
        logger.info(f"n={n}: {elapsed:.2f}s wall clock, {row.total_submission_ops:.0f} LUCE ops "
                    f"vs {row.baseline_submission_ops:.0f} baseline ops")
    monitor.stop_monitoring()
    monitor.print_summary()
    return results


if __name__ == "__main__":
    outcome = run_performance_test()
    sys.exit(0 if all(r['within_limit'] for r in outcome.values()) else 1)
