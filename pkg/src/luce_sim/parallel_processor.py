"""Parallel execution of independent scenario replications."""

import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional

from loguru import logger


class ParallelProcessor:
    """Runs replication tasks, each on its own ledger, in a process pool."""

    def __init__(self, max_workers: Optional[int] = None):
        """Initialize parallel processor.

        Args:
            max_workers: Maximum number of worker processes.
                        If None, uses CPU count - 1.
        """
        self.max_workers = max_workers or max(1, mp.cpu_count() - 1)
        logger.debug(f"Initialized parallel processor with {self.max_workers} workers")

    def process_tasks_parallel(self, tasks: List[Dict[str, Any]], process_func: Callable) -> List[Dict[str, Any]]:
        """Process tasks in parallel.

        Results come back in task order, whatever order the workers finish in.

        Args:
            tasks: List of replication tasks
            process_func: Top-level function run on each task

        Returns:
            List of results, one per task
        """
        results: Dict[int, Dict[str, Any]] = {}
        start_time = time.time()

        with ProcessPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_index = {executor.submit(process_func, task): i for i, task in enumerate(tasks)}
            for future in as_completed(future_to_index):
                index = future_to_index[future]
                task = tasks[index]
                try:
                    results[index] = future.result()
                except Exception as e:
                    logger.error(f"Exception in replication {task.get('label', index)}: {e}")
                    results[index] = {'label': task.get('label'), 'success': False, 'error': str(e)}

        elapsed_time = time.time() - start_time
        successful = sum(1 for r in results.values() if r.get('success', False))
        logger.info(f"Parallel run of {len(tasks)} replications finished in {elapsed_time:.2f}s "
                    f"({successful}/{len(tasks)} succeeded)")
        return [results[i] for i in range(len(tasks))]


def create_replication_task(
    config_json: str, param: int, seed: int, replication: int, collect_artifacts: bool = False
) -> Dict[str, Any]:
    """Create a replication task for parallel execution.

    Args:
        config_json: Scenario configuration serialized as JSON
        param: Parameter value of the sweep point
        seed: Seed derived for this replication
        replication: Replication index
        collect_artifacts: Return chain/catalog exports as well

    Returns:
        Task dictionary
    """
    return {
        'config': config_json,
        'param': param,
        'seed': seed,
        'replication': replication,
        'collect_artifacts': collect_artifacts,
        'label': f"param={param} rep={replication}",
    }


def run_replication_worker(task: Dict[str, Any]) -> Dict[str, Any]:
    """Worker function for one replication.

    This function runs in a separate process and needs to be importable.
    """
    from .harness import ScenarioConfig, run_point

    started = time.perf_counter()
    config = ScenarioConfig.model_validate_json(task['config'])
    row, artifacts, ops = run_point(config, task['param'], task['seed'], task['collect_artifacts'])
    return {
        'label': task['label'],
        'success': True,
        'row': row.model_dump(),
        'artifacts': artifacts,
        'ops': ops,
        'wall_clock_s': time.perf_counter() - started,
    }
