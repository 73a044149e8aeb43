"""Wall-clock and memory monitoring for experiment runs."""

import json
import time
from collections import defaultdict
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil
from loguru import logger


class PerformanceMonitor:
    """Collects host-side timings of simulated sweep points.

    Wall-clock figures live here and in the JSON report only; the metrics CSV
    stays free of them so it is reproducible byte for byte.
    """

    def __init__(self):
        self.started_at = time.time()
        self.stopped_at: Optional[float] = None
        self.points: List[Dict[str, Any]] = []
        self.memory_samples: List[Dict[str, float]] = []
        self._process = psutil.Process()
        logger.debug("Performance monitor attached to pid {}", self._process.pid)

    def stop_monitoring(self):
        self.stopped_at = time.time()
        self.sample_memory()

    def record_point(self, experiment: str, param: int, replication: int, wall_clock_s: float,
                     ops: int = 0, simulated_s: float = 0.0):
        """Record one replication of one sweep point.

        Args:
            experiment: Experiment name
            param: Parameter value of the sweep point
            replication: Replication index
            wall_clock_s: Host seconds spent simulating it
            ops: Ledger operations performed
            simulated_s: Simulated seconds the point covered
        """
        self.points.append({
            'experiment': experiment,
            'param_value': param,
            'replication': replication,
            'wall_clock_s': wall_clock_s,
            'ops': ops,
            'ops_per_wall_s': ops / wall_clock_s if wall_clock_s > 0 else 0.0,
            'simulated_per_wall_s': simulated_s / wall_clock_s if wall_clock_s > 0 else 0.0,
        })

    def sample_memory(self):
        self.memory_samples.append({
            'timestamp': time.time(),
            'process_rss_mb': self._process.memory_info().rss / 1024 / 1024,
            'system_memory_percent': psutil.virtual_memory().percent,
        })

    def experiments(self) -> Dict[str, Dict[str, Any]]:
        """Per-experiment totals, slowest point first within each."""
        grouped: Dict[str, List[Dict[str, Any]]] = defaultdict(list)
        for point in self.points:
            grouped[point['experiment']].append(point)
        summary = {}
        for name, points in grouped.items():
            slowest = max(points, key=lambda p: p['wall_clock_s'])
            summary[name] = {
                'replications_run': len(points),
                'total_wall_clock_s': sum(p['wall_clock_s'] for p in points),
                'total_ops': sum(p['ops'] for p in points),
                'slowest_param_value': slowest['param_value'],
                'slowest_wall_clock_s': slowest['wall_clock_s'],
            }
        return summary

    def generate_performance_report(self) -> Dict[str, Any]:
        end = self.stopped_at or time.time()
        peak_rss = max((s['process_rss_mb'] for s in self.memory_samples), default=None)
        return {
            'generated_at': datetime.now().isoformat(),
            'total_execution_time': end - self.started_at,
            'peak_process_rss_mb': peak_rss,
            'experiments': self.experiments(),
            'points': self.points,
        }

    def save_report(self, output_path: Path) -> Path:
        output_path = Path(output_path)
        with open(output_path, 'w') as f:
            json.dump(self.generate_performance_report(), f, indent=2, default=str)
        logger.info(f"Performance report saved to: {output_path}")
        return output_path

    def print_summary(self):
        """Print per-experiment timings to the console."""
        report = self.generate_performance_report()
        print("\n" + "=" * 60)
        print("PERFORMANCE SUMMARY")
        print("=" * 60)
        for name, stats in report['experiments'].items():
            print(f"{name}: {stats['replications_run']} replications, "
                  f"{stats['total_wall_clock_s']:.3f}s wall clock, {stats['total_ops']} ops "
                  f"(slowest: param {stats['slowest_param_value']} at {stats['slowest_wall_clock_s']:.3f}s)")
        if report['peak_process_rss_mb'] is not None:
            print(f"Peak Process Memory: {report['peak_process_rss_mb']:.1f} MB")
        print("=" * 60)
