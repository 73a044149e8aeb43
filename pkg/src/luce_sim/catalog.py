"""Metadata repository (searchable dataset directory) and the event-synced state cache."""

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger
from pydantic import BaseModel, Field, ValidationError

from .contracts import DEPLOY, ContractEvent, EventKind, LuceRuntime, TokenState
from .encoding import Address
from .errors import DuplicateId, InvalidConfig, UnknownContract
from .ledger import Chain, Ledger, TxStatus


class Descriptor(BaseModel):
    title: str
    description: str = ""
    keywords: List[str] = Field(default_factory=list)

    def as_text(self) -> str:
        """Single-line form written into the contract's descriptor field."""
        return json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))


class CatalogEntry(BaseModel):
    dataset_id: str = Field(min_length=1)
    descriptor: Descriptor
    license_type: str
    contract_address: str

    @property
    def contract(self) -> Address:
        return Address.from_hex(self.contract_address)

    def matches(self, terms: List[str]) -> bool:
        fields = [self.descriptor.title.lower(), self.descriptor.description.lower()]
        fields.extend(k.lower() for k in self.descriptor.keywords)
        return all(any(term in f for f in fields) for term in terms)


class Catalog:
    """Off-ledger directory; the contract address it records is the ground truth."""

    def __init__(self, runtime: Optional[LuceRuntime] = None):
        self.runtime = runtime
        self._entries: Dict[str, CatalogEntry] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, dataset_id: str) -> bool:
        return dataset_id in self._entries

    def get(self, dataset_id: str) -> Optional[CatalogEntry]:
        return self._entries.get(dataset_id)

    def entries(self) -> List[CatalogEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def publish_entry(self, entry: CatalogEntry) -> bool:
        with self._lock:
            if entry.dataset_id in self._entries:
                raise DuplicateId(f"dataset id {entry.dataset_id!r} already in the catalog")
            if self.runtime is not None and not self.runtime.is_dataset(entry.contract):
                raise UnknownContract(f"no dataset contract deployed at {entry.contract_address}")
            self._entries[entry.dataset_id] = entry
            logger.info(f"Catalog entry {entry.dataset_id} -> {entry.contract_address}")
            return True

    def search(self, query: str = "") -> List[CatalogEntry]:
        """Conjunctive, case-insensitive substring match; sorted by dataset id."""
        terms = [t.lower() for t in query.split()]
        return [entry for entry in self.entries() if entry.matches(terms)]

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump([e.model_dump() for e in self.entries()], f, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path: Path, runtime: Optional[LuceRuntime] = None) -> "Catalog":
        catalog = cls(runtime)
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
            entries = [CatalogEntry.model_validate(item) for item in raw]
        except (OSError, ValueError, ValidationError) as e:
            raise InvalidConfig(f"cannot load catalog from {path}: {e}") from e
        for entry in entries:
            catalog.publish_entry(entry)
        return catalog


@dataclass
class CachedContract:
    version: int = 1
    requesters: Dict[str, dict] = field(default_factory=dict)

    def snapshot(self, at: float) -> dict:
        states = {}
        for addr, token in sorted(self.requesters.items()):
            state = token["state"]
            if state == TokenState.ACTIVE and at > token["expires_at"]:
                state = TokenState.EXPIRED
            states[addr] = state.value
        return {"version": self.version, "requester_count": len(self.requesters), "token_states": states}


def _fold(cached: CachedContract, event: ContractEvent) -> None:
    actor = event.actor.hex
    if event.kind == EventKind.UPDATE_REQUESTED:
        cached.version = event.payload["new_version"]
    elif event.kind == EventKind.REQUESTER_ADDED:
        cached.requesters[actor] = {"state": TokenState.ACTIVE, "expires_at": event.payload["expires_at"]}
    elif event.kind == EventKind.TOKEN_RENEWED:
        cached.requesters[actor]["expires_at"] = event.payload["expires_at"]
    elif event.kind == EventKind.TOKEN_REVOKED:
        cached.requesters[actor]["state"] = TokenState.REVOKED
    elif event.kind == EventKind.UNSUBSCRIBED:
        cached.requesters[actor]["state"] = TokenState.DELETED


class StateCache:
    """Mirror of dataset contract state rebuilt from events, refutable by resync."""

    def __init__(self):
        self.contracts: Dict[str, CachedContract] = {}
        self.last_synced_block = -1
        self.synced_at = 0.0
        self._lock = threading.RLock()

    def sync(self, ledger: Ledger) -> "StateCache":
        """Rebuild from the ledger's chain up to its head block."""
        return self.sync_chain(ledger.chain, ledger.runtime, ledger.clock)

    def sync_chain(self, chain: Chain, runtime: LuceRuntime, at: float) -> "StateCache":
        """Deployments from the chain, then each contract's events from mined transactions."""
        with self._lock:
            contracts: Dict[str, CachedContract] = {}
            mined_tx = set()
            for block in chain.blocks[1:]:
                for tx in block.txs:
                    mined_tx.add(tx.tx_id)
                    if tx.action == DEPLOY and tx.status == TxStatus.MINED:
                        address = Address.derive("contract", tx.sender.hex, tx.nonce)
                        contracts[address.hex] = CachedContract()
            for address, cached in contracts.items():
                contract = runtime.dataset(Address.from_hex(address))
                for event in contract.event_log:
                    if event.tx_ref in mined_tx:
                        _fold(cached, event)
            self.contracts = contracts
            self.last_synced_block = chain.head.index
            self.synced_at = at
            logger.debug(f"State cache synced to block {self.last_synced_block}, {len(contracts)} contracts")
            return self

    def snapshot(self, address: str) -> Optional[dict]:
        cached = self.contracts.get(address)
        return cached.snapshot(self.synced_at) if cached else None

    def check_coherence(self, runtime: LuceRuntime) -> List[str]:
        """Mismatches between cached fields and direct contract reads at sync time."""
        problems = []
        for address, contract in sorted((a.hex, c) for a, c in runtime.datasets.items()):
            cached = self.snapshot(address)
            direct = contract.snapshot(self.synced_at)
            if cached is None:
                problems.append(f"{address}: deployed but missing from the cache")
                continue
            for key in ("version", "requester_count", "token_states"):
                if cached[key] != direct[key]:
                    problems.append(f"{address}: cached {key}={cached[key]!r}, contract has {direct[key]!r}")
        return problems
