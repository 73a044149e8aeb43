"""Scenario runner: the evaluation experiments, replications and metrics CSV."""

import json
import random
from enum import Enum
from pathlib import Path
from statistics import fmean
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, ValidationError, model_validator
from tqdm import tqdm

from .catalog import Descriptor
from .config import settings
from .contracts import REGISTRY_ADDRESS, EventKind, License, Role, events_to_jsonl
from .costmodel import FiatRates, GasSchedule, cost_report, render_csv, render_table
from .datastore import RecordSet
from .encoding import Address, digest
from .errors import HarnessError, InvalidConfig
from .ledger import Ledger, MiningConfig
from .parallel_processor import ParallelProcessor, create_replication_task, run_replication_worker
from .performance_monitor import PerformanceMonitor
from .protocol import LuceProtocol, RequesterBehavior

DEFAULT_PURPOSE = "research"
DEFAULT_LICENSE = License("CC-BY-NC", "Non-commercial research use only.", frozenset({DEFAULT_PURPOSE}))


class Experiment(str, Enum):
    SAME_DATASET = "SameDataset"
    MANY_DATASETS = "ManyDatasets"
    SUBMIT_ONLY = "SubmitOnly"
    THREAD_SWEEP = "ThreadSweep"
    DEMO = "Demo"


DEFAULT_SWEEPS: Dict[Experiment, List[int]] = {
    Experiment.SAME_DATASET: list(range(5, 101, 5)),
    Experiment.MANY_DATASETS: list(range(5, 101, 5)),
    Experiment.SUBMIT_ONLY: [100, 500, 1000, 2000, 5000],
    Experiment.THREAD_SWEEP: [1, 2, 4, 8, 16, 32],
}


class ScriptedEvent(BaseModel):
    """A data subject right exercised at a given simulated time (Demo only)."""

    at_s: float = Field(ge=0)
    action: str = Field(pattern="^(erase|rectify)$")
    subject: int = Field(default=0, ge=0)
    dataset: int = Field(default=0, ge=0)
    fields: Dict[str, str] = Field(default_factory=dict)


class ScenarioConfig(BaseModel):
    experiment: Experiment = Experiment.DEMO
    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0, lt=2**64)
    providers: int = Field(default=1, ge=0)
    requesters: int = Field(default=5, ge=0)
    subjects: int = Field(default=3, ge=0)
    datasets: int = Field(default=1, ge=0)
    sweep: Optional[List[int]] = None
    thread_sweep_requesters: int = Field(default=100, ge=1)
    mining: MiningConfig = Field(default_factory=MiningConfig.from_settings)
    token_period_s: float = Field(default_factory=lambda: settings.token_period_s, gt=0)
    replications: int = Field(default_factory=lambda: settings.replications, ge=1)
    horizon_s: Optional[float] = Field(default=None, gt=0)
    behaviors: List[RequesterBehavior] = Field(default_factory=list)
    events: List[ScriptedEvent] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_counts(self) -> "ScenarioConfig":
        if self.providers < 1 or self.datasets < 1:
            raise ValueError(f"{self.experiment.value} needs at least one provider and one dataset")
        if self.experiment == Experiment.DEMO:
            if self.requesters < 1 or self.subjects < 1:
                raise ValueError("Demo needs at least one requester and one subject")
            for event in self.events:
                if event.subject >= self.subjects or event.dataset >= self.datasets:
                    raise ValueError(f"scripted event at {event.at_s}s refers to a missing subject or dataset")
        if self.sweep is not None and any(n < 0 for n in self.sweep):
            raise ValueError("sweep values must be non-negative")
        if self.experiment == Experiment.THREAD_SWEEP and self.sweep is not None and min(self.sweep, default=1) < 1:
            raise ValueError("thread counts must be positive")
        return self

    @classmethod
    def from_json(cls, path: Path) -> "ScenarioConfig":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValidationError) as e:
            raise InvalidConfig(f"invalid scenario {path}: {e}") from e

    def points(self) -> List[int]:
        if self.sweep is not None:
            return list(self.sweep)
        if self.experiment == Experiment.DEMO:
            return [self.requesters]
        return list(DEFAULT_SWEEPS[self.experiment])

    @property
    def horizon(self) -> float:
        return self.horizon_s or 3 * self.token_period_s


class MetricsRow(BaseModel):
    """One CSV row; field order is the column order."""

    experiment: str
    param_value: int
    total_simulated_seconds: float
    total_submission_ops: float
    total_gas: float
    tokens_issued: float
    tokens_revoked: float
    chain_length: float
    baseline_simulated_seconds: Optional[float] = None
    baseline_submission_ops: Optional[float] = None
    baseline_gas: Optional[float] = None


METRICS_COLUMNS = list(MetricsRow.model_fields)
INTEGER_COLUMNS = [
    "total_submission_ops", "total_gas", "tokens_issued", "tokens_revoked", "chain_length",
    "baseline_submission_ops", "baseline_gas",
]


class RunResult(BaseModel):
    rows: List[MetricsRow]
    artifacts: Dict[str, str] = Field(default_factory=dict)


def derive_seed(seed: int, replication: int) -> int:
    """Seed of replication ``replication``; replication 0 keeps the base seed."""
    if replication == 0:
        return seed
    return int(digest({"seed": seed, "replication": replication})[:16], 16)


def synthetic_records(rng: random.Random, subjects: int, dataset_index: int) -> Tuple[RecordSet, Dict[str, str]]:
    """A small de-identified dataset plus the provider's identity -> anonId mapping."""
    records, mapping = {}, {}
    for s in range(subjects):
        anon_id = f"a{dataset_index:02d}-{rng.randrange(16**6):06x}-{s:03d}"
        records[anon_id] = {
            "age": str(rng.randint(18, 90)),
            "diagnosis": rng.choice(["C50", "C34", "E11", "I10", "J45"]),
            "site": rng.choice(["AMS", "RTM", "UTR"]),
        }
        mapping[f"subject-{s}"] = anon_id
    return RecordSet(records), mapping


def _descriptor(index: int) -> Descriptor:
    return Descriptor(
        title=f"Cohort {index}",
        description="De-identified clinical cohort for secondary research use",
        keywords=["clinical", "cohort", f"set{index}"],
    )


def _mining(config: ScenarioConfig, seed: int, threads: Optional[int] = None) -> MiningConfig:
    update = {"seed": seed}
    if threads is not None:
        update["threads"] = threads
    return MiningConfig(**{**config.mining.model_dump(), **update})


def _share_world(config: ScenarioConfig, mining: MiningConfig, datasets: int) -> Tuple[LuceProtocol, List[Address]]:
    """Provider registered and ``datasets`` datasets shared; returns contract addresses."""
    proto = LuceProtocol(mining=mining, token_period_s=config.token_period_s)
    provider = proto.register(Role.DATA_PROVIDER, "provider-0")
    rng = random.Random(mining.seed)
    contracts = []
    for d in range(datasets):
        records, mapping = synthetic_records(rng, max(config.subjects, 1), d)
        contract, _ = proto.share_dataset(provider, records, _descriptor(d), DEFAULT_LICENSE, subjects=mapping)
        contracts.append(contract)
    return proto, contracts


def _counts(proto: LuceProtocol) -> Tuple[int, int]:
    issued = revoked = 0
    for contract in proto.runtime.datasets.values():
        for event in contract.event_log:
            issued += event.kind == EventKind.REQUESTER_ADDED
            revoked += event.kind == EventKind.TOKEN_REVOKED
    return issued, revoked


def _row(experiment: Experiment, param: int, ledger: Ledger, seconds: float, ops: int, proto: LuceProtocol) -> MetricsRow:
    issued, revoked = _counts(proto)
    return MetricsRow(
        experiment=experiment.value,
        param_value=param,
        total_simulated_seconds=seconds,
        total_submission_ops=ops,
        total_gas=ledger.total_gas(),
        tokens_issued=issued,
        tokens_revoked=revoked,
        chain_length=len(ledger.chain),
    )


def _ops(ledger: Ledger) -> int:
    return ledger.submission_ops + ledger.view_ops


# one replication of one sweep point

def _waited_requests(config: ScenarioConfig, experiment: Experiment, n: int, seed: int,
                     datasets: int, threads: Optional[int] = None) -> Tuple[MetricsRow, LuceProtocol]:
    """n requesters each submit one access request and wait for its receipt.

    The LUCE path requests a token (addDataRequester); the baseline path sets a
    value. Both ledgers restart the same latency stream before the timed phase.
    """
    mining = _mining(config, seed, threads)
    proto, contracts = _share_world(config, mining, datasets)
    requesters = proto.register_many([(Role.DATA_REQUESTER, f"requester-{i}", RequesterBehavior.COMPLIANT)
                                      for i in range(n)]) if n else []
    proto.ledger.reseed(seed)
    start, ops = proto.ledger.clock, _ops(proto.ledger)
    for i, requester in enumerate(requesters):
        proto.client(requester).transact(
            contracts[i % len(contracts)], "addDataRequester", purpose=DEFAULT_PURPOSE, license_accepted=True
        )
    row = _row(experiment, threads or n, proto.ledger, proto.ledger.clock - start, _ops(proto.ledger) - ops, proto)

    base = LuceProtocol(mining=mining, token_period_s=config.token_period_s)
    setters = base.register_many([(Role.DATA_REQUESTER, f"requester-{i}", RequesterBehavior.COMPLIANT)
                                  for i in range(n)]) if n else []
    base.ledger.reseed(seed)
    start, ops = base.ledger.clock, _ops(base.ledger)
    for i, setter in enumerate(setters):
        base.baseline_set(setter, setter, i)
    row.baseline_simulated_seconds = base.ledger.clock - start
    row.baseline_submission_ops = _ops(base.ledger) - ops
    row.baseline_gas = base.ledger.total_gas()
    return row, proto


def _submit_only(config: ScenarioConfig, n: int, seed: int) -> Tuple[MetricsRow, LuceProtocol]:
    """Submit every request without waiting, then mine; latency excluded from the time reported."""
    mining = _mining(config, seed)
    proto, (contract,) = _share_world(config, mining, 1)
    ledger = proto.ledger
    ledger.reseed(seed)
    first_block, ops = len(ledger.chain), _ops(ledger)
    accounts = [ledger.create_account(f"requester-{i}") for i in range(n)]
    for account in accounts:
        ledger.submit(account, REGISTRY_ADDRESS, "register", {"role": Role.DATA_REQUESTER.value,
                                                              "identity_ref": f"requester-{account.hex[2:10]}"})
        ledger.submit(account, contract, "getLicense")
        ledger.submit(account, contract, "addDataRequester", {"purpose": DEFAULT_PURPOSE, "license_accepted": True})
        ledger.submit(account, contract, "getLink")
    ledger.mine_until_empty()
    for account in accounts:
        ledger.call(account, contract, "requester", {"address": account.hex})
    seconds = sum(block.execution_time for block in ledger.chain.blocks[first_block:])
    row = _row(Experiment.SUBMIT_ONLY, n, ledger, seconds, _ops(ledger) - ops, proto)

    base = LuceProtocol(mining=mining, token_period_s=config.token_period_s)
    bledger = base.ledger
    bledger.reseed(seed)
    first_block, ops = len(bledger.chain), _ops(bledger)
    accounts = [bledger.create_account(f"requester-{i}") for i in range(n)]
    for i, account in enumerate(accounts):
        bledger.submit(account, REGISTRY_ADDRESS, "register", {"role": Role.DATA_REQUESTER.value,
                                                               "identity_ref": f"requester-{account.hex[2:10]}"})
        bledger.submit(account, base.runtime.baseline.address, "baseline.set", {"key": account.hex, "value": i})
    bledger.mine_until_empty()
    row.baseline_simulated_seconds = sum(block.execution_time for block in bledger.chain.blocks[first_block:])
    row.baseline_submission_ops = _ops(bledger) - ops
    row.baseline_gas = bledger.total_gas()
    return row, proto


def run_demo(config: ScenarioConfig, seed: int) -> Tuple[MetricsRow, LuceProtocol]:
    """Share, acquire, maintain, exercise subject rights and audit."""
    mining = _mining(config, seed)
    proto = LuceProtocol(mining=mining, token_period_s=config.token_period_s)
    rng = random.Random(seed)
    providers = proto.register_many([(Role.DATA_PROVIDER, f"provider-{p}", RequesterBehavior.COMPLIANT)
                                     for p in range(config.providers)])
    subjects = proto.register_many([(Role.DATA_SUBJECT, f"subject-{s}", RequesterBehavior.COMPLIANT)
                                    for s in range(config.subjects)])
    behaviors = list(config.behaviors) + [RequesterBehavior.COMPLIANT] * config.requesters
    requesters = proto.register_many([(Role.DATA_REQUESTER, f"requester-{r}", behaviors[r])
                                      for r in range(config.requesters)])
    (authority,) = proto.register_many([(Role.SUPERVISORY_AUTHORITY, "authority-0", RequesterBehavior.COMPLIANT)])

    dataset_ids, owners = [], []
    for d in range(config.datasets):
        owner = providers[d % len(providers)]
        records, mapping = synthetic_records(rng, config.subjects, d)
        _, dataset_id = proto.share_dataset(owner, records, _descriptor(d), DEFAULT_LICENSE, subjects=mapping)
        dataset_ids.append(dataset_id)
        owners.append(owner)

    for r, requester in enumerate(requesters):
        proto.acquire(requester, dataset_ids[r % len(dataset_ids)], DEFAULT_PURPOSE)
    for requester in requesters:
        proto.start_maintenance(requester, config.horizon)

    script = config.events or [ScriptedEvent(at_s=proto.ledger.clock + config.token_period_s / 2, action="erase")]
    for event in sorted(script, key=lambda e: e.at_s):
        proto.run_until(event.at_s)
        subject, dataset_id = subjects[event.subject], dataset_ids[event.dataset]
        if event.action == "erase":
            proto.request_erasure(subject, owners[event.dataset], dataset_id)
        else:
            proto.request_rectification(subject, owners[event.dataset], dataset_id, event.fields)
    proto.run_until(config.horizon)
    for dataset_id in dataset_ids:
        proto.file_and_audit(subjects[0], authority, dataset_id)
    row = _row(Experiment.DEMO, config.requesters, proto.ledger, proto.ledger.clock, _ops(proto.ledger), proto)
    return row, proto


def _artifacts(proto: LuceProtocol) -> Dict[str, str]:
    catalog = [e.model_dump(mode="json") for e in proto.catalog.entries()]
    complaints = [c.model_dump(mode="json") for c in proto.complaints]
    return {
        "chain.jsonl": proto.ledger.chain.to_jsonl(),
        "events.jsonl": "".join(events_to_jsonl(c.event_log) for c in proto.runtime.datasets.values()),
        "catalog.json": json.dumps(catalog, indent=2, sort_keys=True) + "\n",
        "complaints.json": json.dumps(complaints, indent=2, sort_keys=True) + "\n",
    }


def run_point(config: ScenarioConfig, param: int, seed: int,
              collect_artifacts: bool = False) -> Tuple[MetricsRow, Dict[str, str], int]:
    """One replication of one sweep point."""
    experiment = config.experiment
    if experiment == Experiment.SAME_DATASET:
        row, proto = _waited_requests(config, experiment, param, seed, datasets=1)
    elif experiment == Experiment.MANY_DATASETS:
        row, proto = _waited_requests(config, experiment, param, seed, datasets=config.datasets)
    elif experiment == Experiment.THREAD_SWEEP:
        row, proto = _waited_requests(config, experiment, config.thread_sweep_requesters, seed,
                                      datasets=1, threads=param)
    elif experiment == Experiment.SUBMIT_ONLY:
        row, proto = _submit_only(config, param, seed)
    else:
        row, proto = run_demo(config, seed)
    if not proto.ledger.verify_chain():
        raise HarnessError(f"chain failed verification at {experiment.value} point {param}")
    return row, _artifacts(proto) if collect_artifacts else {}, _ops(proto.ledger)


def average_rows(rows: Sequence[MetricsRow]) -> MetricsRow:
    """Mean over the replications of a single sweep point."""
    first = rows[0]
    values = first.model_dump()
    for name in METRICS_COLUMNS[2:]:
        column = [getattr(r, name) for r in rows]
        values[name] = None if any(v is None for v in column) else fmean(column)
    return MetricsRow(**values)


def run_scenario(
    config: ScenarioConfig,
    parallel: Optional[bool] = None,
    max_workers: Optional[int] = None,
    collect_artifacts: bool = False,
    monitor: Optional[PerformanceMonitor] = None,
    progress: bool = False,
) -> RunResult:
    """Every sweep point, ``config.replications`` times each, averaged per point.

    Replication ``r`` of every point uses ``derive_seed(config.seed, r)``.
    Artifacts are taken from replication 0 of the last point.
    """
    points = config.points()
    parallel = settings.parallel_processing if parallel is None else parallel
    tasks = []
    config_json = config.model_dump_json()
    for p_index, param in enumerate(points):
        for r in range(config.replications):
            want = collect_artifacts and r == 0 and p_index == len(points) - 1
            tasks.append(create_replication_task(config_json, param, derive_seed(config.seed, r), r, want))
    logger.info(f"Running {config.experiment.value}: {len(points)} points x {config.replications} replications")

    if parallel and len(tasks) > 1:
        results = ParallelProcessor(max_workers or settings.max_workers).process_tasks_parallel(
            tasks, run_replication_worker)
    else:
        results = [run_replication_worker(t) for t in tqdm(tasks, desc=config.experiment.value, disable=not progress)]

    rows, artifacts = [], {}
    for p_index, param in enumerate(points):
        chunk = results[p_index * config.replications:(p_index + 1) * config.replications]
        failed = [r for r in chunk if not r.get("success")]
        if failed:
            raise HarnessError(f"{failed[0]['label']} failed: {failed[0].get('error')}")
        for r_index, result in enumerate(chunk):
            if monitor is not None:
                monitor.record_point(config.experiment.value, param, r_index, result["wall_clock_s"],
                                     result["ops"], result["row"]["total_simulated_seconds"])
            artifacts.update(result.get("artifacts") or {})
        rows.append(average_rows([MetricsRow(**r["row"]) for r in chunk]))
    if monitor is not None:
        monitor.sample_memory()
    return RunResult(rows=rows, artifacts=artifacts)


def run(config: ScenarioConfig) -> List[MetricsRow]:
    return run_scenario(config).rows


def _sweep_config(experiment: Experiment, sweep: Sequence[int], **overrides) -> ScenarioConfig:
    return ScenarioConfig(experiment=experiment, sweep=list(sweep), **overrides)


def experiment_same_dataset(n_range: Sequence[int] = DEFAULT_SWEEPS[Experiment.SAME_DATASET],
                            **overrides) -> List[MetricsRow]:
    return run(_sweep_config(Experiment.SAME_DATASET, n_range, **overrides))


def experiment_many_datasets(n_range: Sequence[int] = DEFAULT_SWEEPS[Experiment.MANY_DATASETS],
                             datasets: int = 5, **overrides) -> List[MetricsRow]:
    return run(_sweep_config(Experiment.MANY_DATASETS, n_range, datasets=datasets, **overrides))


def experiment_submit_only(n_range: Sequence[int] = DEFAULT_SWEEPS[Experiment.SUBMIT_ONLY],
                           **overrides) -> List[MetricsRow]:
    return run(_sweep_config(Experiment.SUBMIT_ONLY, n_range, **overrides))


def experiment_threads(n: int = 100, threads: Sequence[int] = DEFAULT_SWEEPS[Experiment.THREAD_SWEEP],
                       **overrides) -> List[MetricsRow]:
    return run(_sweep_config(Experiment.THREAD_SWEEP, threads, thread_sweep_requesters=n, **overrides))


def cost_table(rates: Optional[FiatRates] = None, fmt: str = "table",
               schedule: Optional[GasSchedule] = None) -> str:
    rates = rates or FiatRates.from_settings()
    rows = cost_report(schedule or GasSchedule.default(), rates)
    return render_csv(rows) if fmt == "csv" else render_table(rows, rates)


def metrics_frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    df = pd.DataFrame([r.model_dump() for r in rows], columns=METRICS_COLUMNS)
    for name in INTEGER_COLUMNS:
        column = pd.to_numeric(df[name])
        if all(float(v).is_integer() for v in column.dropna()):
            df[name] = column.round().astype("Int64")
    return df


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    return metrics_frame(rows).to_csv(index=False, float_format="%.6f", lineterminator="\n")


def write_metrics(rows: Sequence[MetricsRow], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv(rows), encoding="utf-8")
    logger.info(f"Metrics written to {path} ({len(rows)} rows)")
    return path
