"""Simulated append-only blockchain with a seeded mining latency model.

Transactions queue in a FIFO mempool and are executed by a pluggable runtime
when a block is mined. All timing is simulated seconds on the ledger clock.
"""

import json
import random
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Deque, Dict, Iterable, Iterator, List, Mapping, Optional, Protocol, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import settings
from .encoding import ZERO_DIGEST, Address, canonical_bytes, digest, to_json_line
from .errors import EmptyMempool, ExecutionFailed, LuceError, MalformedAction, UnknownSender, UnknownTx, error_from_code


class TxStatus(str, Enum):
    PENDING = "Pending"
    MINED = "Mined"
    REJECTED = "Rejected"


class MiningConfig(BaseModel):
    """Mining latency and batching model."""

    model_config = ConfigDict(frozen=True)

    threads: int = Field(default=1, gt=0)
    latency_low_s: float = Field(default=10.0, gt=0)
    latency_high_s: float = Field(default=20.0, gt=0)
    contention_cap: int = Field(default=16, gt=0)
    contention_penalty: float = Field(default=0.05, ge=0)
    seed: int = Field(default=42, ge=0, lt=2**64)
    block_capacity: int = Field(default=200, gt=0)
    execution_seconds_per_gas: float = Field(default=1e-6, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "MiningConfig":
        if self.latency_low_s > self.latency_high_s:
            raise ValueError("latency_low_s must not exceed latency_high_s")
        if self.speedup() <= 0:
            raise ValueError(f"{self.threads} threads leave no effective mining speedup")
        return self

    @classmethod
    def from_settings(cls, **overrides) -> "MiningConfig":
        values = {
            "threads": settings.mining_threads,
            "seed": settings.default_seed,
            "block_capacity": settings.block_capacity,
        }
        values.update(overrides)
        return cls(**values)

    def speedup(self, threads: Optional[int] = None) -> float:
        """Linear speedup up to the contention cap, linear penalty beyond it."""
        c = self.threads if threads is None else threads
        effective = min(c, self.contention_cap)
        return effective - self.contention_penalty * max(0, c - self.contention_cap) * effective


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    sender: Address
    target: Address
    action: str
    payload: bytes
    nonce: int
    submitted_at: float
    args: Mapping[str, Any] = field(default_factory=dict, compare=False)
    gas_used: int = 0
    status: TxStatus = TxStatus.PENDING

    @staticmethod
    def compute_id(sender: Address, target: Address, action: str, payload: bytes, nonce: int) -> str:
        return digest({
            "action": action,
            "nonce": nonce,
            "payload": payload.decode("utf-8", errors="replace"),
            "sender": sender.hex,
            "target": target.hex,
        })

    def id_matches(self) -> bool:
        return self.tx_id == self.compute_id(self.sender, self.target, self.action, self.payload, self.nonce)

    def to_record(self) -> Dict[str, Any]:
        return {
            "tx_id": self.tx_id,
            "sender": self.sender.hex,
            "target": self.target.hex,
            "action": self.action,
            "payload": self.payload.decode("utf-8", errors="replace"),
            "nonce": self.nonce,
            "submitted_at": self.submitted_at,
            "gas_used": self.gas_used,
            "status": self.status.value,
            "args": dict(self.args),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Transaction":
        return cls(
            tx_id=record["tx_id"],
            sender=Address.from_hex(record["sender"]),
            target=Address.from_hex(record["target"]),
            action=record["action"],
            payload=record["payload"].encode("utf-8"),
            nonce=int(record["nonce"]),
            submitted_at=float(record["submitted_at"]),
            args=dict(record.get("args", {})),
            gas_used=int(record["gas_used"]),
            status=TxStatus(record["status"]),
        )


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    txs: Tuple[Transaction, ...]
    mined_at: float
    mining_latency: float = 0.0
    execution_time: float = 0.0
    block_hash: str = ""

    def compute_hash(self) -> str:
        receipts = digest({
            f"tx.{i:06d}": f"{tx.tx_id}|{tx.status.value}|{tx.gas_used}|{tx.submitted_at!r}"
            for i, tx in enumerate(self.txs)
        })
        return digest({
            "execution_time": self.execution_time,
            "index": self.index,
            "mined_at": self.mined_at,
            "mining_latency": self.mining_latency,
            "prev_hash": self.prev_hash,
            "receipts": receipts,
            "tx_ids": ",".join(tx.tx_id for tx in self.txs),
        })

    def sealed(self) -> "Block":
        return replace(self, block_hash=self.compute_hash())

    @property
    def gas_used(self) -> int:
        return sum(tx.gas_used for tx in self.txs)

    def to_record(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "prev_hash": self.prev_hash,
            "mined_at": self.mined_at,
            "mining_latency": self.mining_latency,
            "execution_time": self.execution_time,
            "block_hash": self.block_hash,
            "txs": [tx.to_record() for tx in self.txs],
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "Block":
        return cls(
            index=int(record["index"]),
            prev_hash=record["prev_hash"],
            txs=tuple(Transaction.from_record(t) for t in record["txs"]),
            mined_at=float(record["mined_at"]),
            mining_latency=float(record.get("mining_latency", 0.0)),
            execution_time=float(record.get("execution_time", 0.0)),
            block_hash=record["block_hash"],
        )


def genesis_block() -> Block:
    return Block(index=0, prev_hash=ZERO_DIGEST, txs=(), mined_at=0.0).sealed()


class Chain:
    """Ordered, hash-linked block list. Only ``append`` mutates it."""

    def __init__(self, blocks: Optional[Sequence[Block]] = None):
        self.blocks: List[Block] = list(blocks) if blocks else [genesis_block()]

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    def __getitem__(self, index: int) -> Block:
        return self.blocks[index]

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    def append(self, block: Block) -> None:
        if block.prev_hash != self.head.block_hash or block.index != len(self.blocks):
            raise ValueError(f"block {block.index} does not extend the chain head")
        self.blocks.append(block)

    def verify(self) -> bool:
        """True iff every hash recomputes and every link holds."""
        for i, block in enumerate(self.blocks):
            if block.index != i:
                return False
            if i == 0 and block.prev_hash != ZERO_DIGEST:
                return False
            if i > 0:
                prev = self.blocks[i - 1]
                if block.prev_hash != prev.block_hash or block.mined_at <= prev.mined_at:
                    return False
            for tx in block.txs:
                if not tx.id_matches() or canonical_bytes(tx.args) != tx.payload:
                    return False
            if block.compute_hash() != block.block_hash:
                return False
        return True

    def transactions(self) -> Iterator[Transaction]:
        for block in self.blocks:
            yield from block.txs

    def to_jsonl(self) -> str:
        return "".join(to_json_line(block.to_record()) + "\n" for block in self.blocks)

    def export_jsonl(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        logger.info(f"Chain with {len(self.blocks)} blocks exported to: {path}")
        return path

    @classmethod
    def load_jsonl(cls, path: Path) -> "Chain":
        with open(path, "r", encoding="utf-8") as f:
            blocks = [Block.from_record(json.loads(line)) for line in f if line.strip()]
        return cls(blocks)


@dataclass
class Receipt:
    tx_id: str
    status: TxStatus
    block_index: Optional[int] = None
    gas_used: int = 0
    result: Any = None
    error_code: Optional[str] = None
    error_message: Optional[str] = None

    def raise_for_status(self) -> Any:
        if self.status == TxStatus.REJECTED:
            raise error_from_code(self.error_code or "LuceError", self.error_message)
        return self.result


@dataclass
class ExecutionResult:
    gas_used: int
    result: Any = None


class Runtime(Protocol):
    """What the ledger needs from the contract layer."""

    def validate(self, tx: Transaction) -> None: ...

    def execute(self, tx: Transaction, now: float) -> ExecutionResult: ...

    def call(self, sender: Address, target: Address, action: str, args: Mapping[str, Any], now: float) -> Any: ...

    def checkpoint(self, tx: Transaction) -> Callable[[], None]: ...


class Ledger:
    """Mempool, chain, clock and accounts of one simulated network."""

    def __init__(self, runtime: Runtime, mining: Optional[MiningConfig] = None):
        self.runtime = runtime
        self.mining = mining or MiningConfig.from_settings()
        self.chain = Chain()
        self.clock = 0.0
        self._rng = random.Random(self.mining.seed)
        self._lock = threading.RLock()
        self._accounts: Dict[Address, str] = {}
        self._nonces: Dict[Address, int] = {}
        self._mempool: Deque[Transaction] = deque()
        self._receipts: Dict[str, Receipt] = {}
        self.submission_ops = 0
        self.view_ops = 0

    # accounts

    def create_account(self, label: str = "") -> Address:
        address = Address.derive("account", len(self._accounts))
        self._accounts[address] = label
        self._nonces.setdefault(address, 0)
        logger.debug(f"Account {address} created ({label or 'unlabelled'})")
        return address

    def predict_contract_address(self, sender: Address) -> Address:
        """Address the next deploy submitted by ``sender`` will receive."""
        return Address.derive("contract", sender.hex, self._nonces.get(sender, 0))

    # submission

    def submit(self, sender: Address, target: Address, action: str, args: Optional[Mapping[str, Any]] = None) -> Receipt:
        """Queue a transaction; the clock does not move."""
        with self._lock:
            if sender not in self._accounts:
                raise UnknownSender(f"account {sender} was never created")
            if not isinstance(action, str) or not action:
                raise MalformedAction("action name must be a non-empty string")
            args = dict(args or {})
            try:
                payload = canonical_bytes(args)
            except (TypeError, ValueError) as e:
                raise MalformedAction(f"cannot encode arguments of {action}: {e}") from e
            nonce = self._nonces[sender]
            tx = Transaction(
                tx_id=Transaction.compute_id(sender, target, action, payload, nonce),
                sender=sender,
                target=target,
                action=action,
                payload=payload,
                nonce=nonce,
                submitted_at=self.clock,
                args=args,
            )
            self.runtime.validate(tx)
            self._nonces[sender] = nonce + 1
            self._mempool.append(tx)
            receipt = Receipt(tx_id=tx.tx_id, status=TxStatus.PENDING)
            self._receipts[tx.tx_id] = receipt
            self.submission_ops += 1
            logger.debug(f"Submitted {action} from {sender} as {tx.tx_id[:12]}")
            return replace(receipt)

    @property
    def mempool_size(self) -> int:
        return len(self._mempool)

    # mining

    def reseed(self, seed: int) -> None:
        """Restart the latency stream, so two ledgers can share one sample sequence."""
        self._rng.seed(seed)

    def sample_latency(self, cfg: MiningConfig) -> float:
        return self._rng.uniform(cfg.latency_low_s, cfg.latency_high_s) / cfg.speedup()

    def mine_next(self, cfg: Optional[MiningConfig] = None) -> Block:
        """Drain up to ``block_capacity`` pending transactions into one block."""
        cfg = cfg or self.mining
        with self._lock:
            if not self._mempool:
                raise EmptyMempool("nothing to mine")
            latency = self.sample_latency(cfg)
            mined_at = self.clock + latency
            index = len(self.chain)
            included: List[Transaction] = []
            settled: List[Receipt] = []
            for _ in range(min(cfg.block_capacity, len(self._mempool))):
                tx = self._mempool.popleft()
                outcome, error = self._apply(tx, mined_at)
                if error is not None:
                    settled.append(Receipt(
                        tx_id=tx.tx_id, status=TxStatus.REJECTED, error_code=error.code, error_message=error.message
                    ))
                    continue
                included.append(replace(tx, gas_used=outcome.gas_used, status=TxStatus.MINED))
                settled.append(Receipt(
                    tx_id=tx.tx_id, status=TxStatus.MINED, block_index=index,
                    gas_used=outcome.gas_used, result=outcome.result,
                ))
            gas = sum(tx.gas_used for tx in included)
            block = Block(
                index=index,
                prev_hash=self.chain.head.block_hash,
                txs=tuple(included),
                mined_at=mined_at,
                mining_latency=latency,
                execution_time=gas * cfg.execution_seconds_per_gas,
            ).sealed()
            self.chain.append(block)
            self.clock = mined_at + block.execution_time
            for receipt in settled:
                self._receipts[receipt.tx_id] = receipt
            logger.debug(f"Block {index} mined at {mined_at:.3f}s with {len(included)} txs, {gas} gas")
            return block

    def _apply(self, tx: Transaction, now: float) -> Tuple[Optional[ExecutionResult], Optional[LuceError]]:
        """Execute one transaction all or nothing."""
        undo: Callable[[], None] = lambda: None
        try:
            undo = self.runtime.checkpoint(tx)
            return self.runtime.execute(tx, now), None
        except LuceError as e:
            undo()
            logger.debug(f"Rejected {tx.action} {tx.tx_id[:12]}: {e.code}")
            return None, e
        except Exception as e:
            undo()
            logger.error(f"{tx.action} {tx.tx_id[:12]} crashed during execution and was rolled back: {e!r}")
            return None, ExecutionFailed(f"{type(e).__name__}: {e}")

    def mine_until_empty(self, cfg: Optional[MiningConfig] = None) -> List[Block]:
        blocks = []
        while self._mempool:
            blocks.append(self.mine_next(cfg))
        return blocks

    def advance_to(self, t: float) -> float:
        """Let simulated time pass without mining; never moves backwards."""
        with self._lock:
            if t > self.clock:
                self.clock = t
            return self.clock

    # reads

    def receipt_of(self, tx_id: str) -> Receipt:
        receipt = self._receipts.get(tx_id)
        if receipt is None:
            raise UnknownTx(f"transaction {tx_id} was never submitted")
        return replace(receipt)

    def call(self, sender: Address, target: Address, action: str, args: Optional[Mapping[str, Any]] = None) -> Any:
        """Read-only contract call at the current clock; no transaction, no gas."""
        self.view_ops += 1
        return self.runtime.call(sender, target, action, dict(args or {}), self.clock)

    def verify_chain(self) -> bool:
        return self.chain.verify()

    def total_gas(self) -> int:
        return sum(tx.gas_used for tx in self.chain.transactions())

    def export_jsonl(self, path: Path) -> Path:
        return self.chain.export_jsonl(path)


def replay_chain(chain: Chain, runtime: Runtime) -> List[str]:
    """Re-execute every mined transaction on a fresh runtime.

    Returns a list of divergences (empty when the recorded statuses and gas
    figures are reproduced exactly).
    """
    problems = []
    for block in chain.blocks[1:]:
        for tx in block.txs:
            try:
                outcome = runtime.execute(tx, block.mined_at)
            except LuceError as e:
                problems.append(f"block {block.index}: {tx.action} {tx.tx_id[:12]} rejected on replay ({e.code})")
                continue
            except Exception as e:
                problems.append(f"block {block.index}: {tx.action} {tx.tx_id[:12]} failed on replay ({e!r})")
                continue
            if outcome.gas_used != tx.gas_used:
                problems.append(
                    f"block {block.index}: {tx.action} {tx.tx_id[:12]} used {outcome.gas_used} gas on replay, "
                    f"recorded {tx.gas_used}"
                )
    return problems


class Client:
    """One actor's handle on the ledger: submit, then wait for receipts."""

    def __init__(self, ledger: Ledger, address: Address):
        self.ledger = ledger
        self.address = address

    def submit(self, target: Address, action: str, /, **args) -> str:
        return self.ledger.submit(self.address, target, action, args).tx_id

    def wait(self, tx_ids: Iterable[str]) -> List[Receipt]:
        tx_ids = list(tx_ids)
        while any(self.ledger.receipt_of(t).status == TxStatus.PENDING for t in tx_ids):
            self.ledger.mine_next()
        return [self.ledger.receipt_of(t) for t in tx_ids]

    def transact(self, target: Address, action: str, /, **args) -> Any:
        """Submit one transaction, mine until it resolves, return its result."""
        (receipt,) = self.wait([self.submit(target, action, **args)])
        return receipt.raise_for_status()

    def transact_many(self, calls: Sequence[Tuple[Address, str, Dict[str, Any]]]) -> List[Receipt]:
        """Submit a bundle back to back and wait for all of it."""
        return self.wait([self.submit(target, action, **args) for target, action, args in calls])

    def call(self, target: Address, action: str, /, **args) -> Any:
        return self.ledger.call(self.address, target, action, args)


def first_failure(receipts: Sequence[Receipt]) -> Optional[Receipt]:
    for receipt in receipts:
        if receipt.status == TxStatus.REJECTED:
            return receipt
    return None


