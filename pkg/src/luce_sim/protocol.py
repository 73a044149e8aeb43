"""Actor workflows: sharing, access with compliance maintenance, data subject rights."""

import heapq
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel, Field

from .catalog import Catalog, CatalogEntry, Descriptor
from .config import settings
from .contracts import (
    BASELINE_ADDRESS,
    CREATE_TARGET,
    DEPLOY,
    REGISTRY_ADDRESS,
    AccessToken,
    ContractEvent,
    EventKind,
    License,
    LuceRuntime,
    Role,
    TokenState,
    UpdateKind,
)
from .costmodel import GasSchedule
from .datastore import DataStore, RecordSet, SubjectMapping, apply_erase, apply_rectify
from .encoding import Address
from .errors import (
    DuplicateId,
    LuceError,
    NotAuthority,
    UnknownAnonId,
    UnknownDataset,
    UnknownSubject,
)
from .ledger import Client, Ledger, MiningConfig, TxStatus, first_failure


class RequesterBehavior(str, Enum):
    COMPLIANT = "compliant"
    IGNORE_UPDATES = "ignore_updates"
    NEVER_RENEW = "never_renew"


class RenewalOutcome(str, Enum):
    RENEWED = "Renewed"
    REVOKED = "Revoked"
    EXPIRED = "Expired"


class RecipientStatus(str, Enum):
    CONFIRMED = "Confirmed"
    REVOKED = "Revoked"
    EXPIRED = "Expired"
    UNSUBSCRIBED = "Unsubscribed"
    PENDING = "Pending"


RESOLVED = {RecipientStatus.CONFIRMED, RecipientStatus.REVOKED, RecipientStatus.EXPIRED, RecipientStatus.UNSUBSCRIBED}


class ComplaintOutcome(str, Enum):
    OPEN = "Open"
    COMPLIANT = "Compliant"
    NON_COMPLIANT = "NonCompliant"


class Scheduler:
    """Heap-ordered actions on the ledger's simulated clock."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self._queue: List[Tuple[float, int, str, Callable[[], None]]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._queue)

    def at(self, when: float, fn: Callable[[], None], label: str = "") -> None:
        heapq.heappush(self._queue, (when, next(self._seq), label, fn))

    def next_time(self) -> Optional[float]:
        return self._queue[0][0] if self._queue else None

    def step(self, until: float) -> bool:
        """Run the earliest action due at or before ``until``; False if there is none."""
        if not self._queue or self._queue[0][0] > until:
            return False
        when, _, label, fn = heapq.heappop(self._queue)
        self.ledger.advance_to(when)
        logger.debug(f"t={self.ledger.clock:.1f}s running {label or 'scheduled action'}")
        fn()
        return True

    def run_until(self, until: float) -> int:
        ran = 0
        while self.step(until):
            ran += 1
        self.ledger.advance_to(until)
        return ran


@dataclass
class Holding:
    dataset_id: str
    contract: Address
    purpose: str
    token: AccessToken
    link: str
    records: RecordSet
    version: int
    renewal_scheduled: bool = False


@dataclass
class RenewalRecord:
    at: float
    dataset_id: str
    token_id: int
    outcome: RenewalOutcome
    expires_at: float
    confirmed_version: Optional[int] = None


@dataclass
class RequesterAgent:
    address: Address
    behavior: RequesterBehavior = RequesterBehavior.COMPLIANT
    holdings: Dict[str, Holding] = field(default_factory=dict)
    log: List[RenewalRecord] = field(default_factory=list)
    maintain_until: float = 0.0


@dataclass
class ProviderAgent:
    address: Address
    mapping: SubjectMapping = field(default_factory=SubjectMapping)
    contracts: Dict[str, Address] = field(default_factory=dict)
    links: Dict[str, str] = field(default_factory=dict)


class ReportedRequester(BaseModel):
    address: str
    purpose: str
    token_state: str


class ReportEntry(BaseModel):
    dataset_id: str
    contract_address: str
    requesters: List[ReportedRequester] = Field(default_factory=list)


class _JsonExport(BaseModel):
    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


class SubjectReport(_JsonExport):
    subject_identity: str
    generated_at: float
    entries: List[ReportEntry] = Field(default_factory=list)


class Violation(BaseModel):
    address: str
    version: int
    deadline: float


class AuditResult(BaseModel):
    compliant: bool
    violations: List[Violation] = Field(default_factory=list)
    open_updates: int = 0  # updates whose deadline has not passed yet


class Complaint(_JsonExport):
    complaint_id: str
    subject_identity: str
    dataset_id: str
    filed_at: float
    outcome: ComplaintOutcome = ComplaintOutcome.OPEN
    violations: List[Violation] = Field(default_factory=list)


class UpdateConfirmation(_JsonExport):
    dataset_id: str
    kind: UpdateKind
    version: int
    requested_at: float
    deadline: float
    completed_at: float
    statuses: Dict[str, RecipientStatus]

    @property
    def resolved(self) -> bool:
        return all(s in RESOLVED for s in self.statuses.values())


# audit

def recipient_status(events: Sequence[ContractEvent], actor: str, update: ContractEvent, until: float) -> RecipientStatus:
    """How ``actor`` dealt with ``update``, judged from events at or before ``until``."""
    events = list(events)
    position = next(i for i, e in enumerate(events) if e is update)
    new_version = update.payload["new_version"]
    expires_at = None
    for event in events[:position]:
        if event.actor.hex == actor and event.kind in (EventKind.REQUESTER_ADDED, EventKind.TOKEN_RENEWED):
            expires_at = event.payload["expires_at"]
    for event in events[position + 1:]:
        if event.at > until:
            break
        if event.actor.hex != actor:
            continue
        if expires_at is not None and event.at > expires_at:
            return RecipientStatus.EXPIRED
        if event.kind == EventKind.UPDATE_CONFIRMED and event.payload["version"] >= new_version:
            return RecipientStatus.CONFIRMED
        if event.kind == EventKind.TOKEN_REVOKED:
            return RecipientStatus.REVOKED
        if event.kind == EventKind.UNSUBSCRIBED:
            return RecipientStatus.UNSUBSCRIBED
        if event.kind == EventKind.REQUESTER_ADDED:
            # lapsed and re-subscribed at the current version
            return RecipientStatus.EXPIRED
        if event.kind == EventKind.TOKEN_RENEWED:
            expires_at = event.payload["expires_at"]
    if expires_at is not None and until > expires_at:
        return RecipientStatus.EXPIRED
    return RecipientStatus.PENDING


def audit_contract(events: Sequence[ContractEvent], token_period_s: float, now: float) -> AuditResult:
    """Every UpdateRequested recipient must have confirmed or lost access within T.

    Updates whose deadline lies after ``now`` cannot be violated yet and are
    counted as open.
    """
    events = list(events)
    violations, open_updates = [], 0
    for update in events:
        if update.kind != EventKind.UPDATE_REQUESTED:
            continue
        deadline = update.at + token_period_s
        if deadline > now:
            open_updates += 1
            continue
        for actor in update.payload["recipients"]:
            if recipient_status(events, actor, update, deadline) == RecipientStatus.PENDING:
                violations.append(Violation(address=actor, version=update.payload["new_version"], deadline=deadline))
    return AuditResult(compliant=not violations, violations=violations, open_updates=open_updates)


class LuceProtocol:
    """One simulated LUCE deployment: ledger, contracts, catalog, storage and actors."""

    def __init__(
        self,
        mining: Optional[MiningConfig] = None,
        schedule: Optional[GasSchedule] = None,
        token_period_s: Optional[float] = None,
        renew_lead_time_s: Optional[float] = None,
    ):
        self.runtime = LuceRuntime(schedule, token_period_s)
        self.ledger = Ledger(self.runtime, mining)
        self.catalog = Catalog(self.runtime)
        self.store = DataStore()
        self.scheduler = Scheduler(self.ledger)
        self.renew_lead_time_s = settings.renew_lead_time_s if renew_lead_time_s is None else renew_lead_time_s
        self.providers: Dict[Address, ProviderAgent] = {}
        self.requesters: Dict[Address, RequesterAgent] = {}
        self.subjects: Dict[Address, str] = {}
        self.authorities: List[Address] = []
        self.complaints: List[Complaint] = []

    def client(self, address: Address) -> Client:
        return Client(self.ledger, address)

    # registration

    def register(
        self, role: Role, label: str = "", behavior: RequesterBehavior = RequesterBehavior.COMPLIANT
    ) -> Address:
        (address,) = self.register_many([(role, label, behavior)])
        return address

    def register_many(self, actors: Sequence[Tuple[Role, str, RequesterBehavior]]) -> List[Address]:
        """Register a batch of actors with one bundle of transactions."""
        addresses, tx_ids = [], []
        for role, label, behavior in actors:
            role = Role(role)
            address = self.ledger.create_account(label)
            identity = label or f"{role.value}-{address.hex[2:10]}"
            tx_ids.append(self.client(address).submit(REGISTRY_ADDRESS, "register", role=role.value, identity_ref=identity))
            addresses.append((address, role, identity, behavior))
        receipts = Client(self.ledger, addresses[0][0]).wait(tx_ids) if tx_ids else []
        failed = first_failure(receipts)
        if failed is not None:
            failed.raise_for_status()
        for address, role, identity, behavior in addresses:
            if role == Role.DATA_PROVIDER:
                self.providers[address] = ProviderAgent(address)
            elif role == Role.DATA_REQUESTER:
                self.requesters[address] = RequesterAgent(address, RequesterBehavior(behavior))
            elif role == Role.DATA_SUBJECT:
                self.subjects[address] = identity
            else:
                self.authorities.append(address)
        return [a for a, _, _, _ in addresses]

    def _provider(self, address: Address) -> ProviderAgent:
        agent = self.providers.get(address)
        if agent is None:
            raise UnknownDataset(f"{address} is not a known data provider")
        return agent

    def _entry(self, dataset_id: str) -> CatalogEntry:
        entry = self.catalog.get(dataset_id)
        if entry is None:
            raise UnknownDataset(f"dataset {dataset_id!r} is not in the catalog")
        return entry

    # sharing

    def share_dataset(
        self,
        provider: Address,
        records: RecordSet,
        descriptor: Descriptor,
        license: License,
        dataset_id: Optional[str] = None,
        subjects: Optional[Mapping[str, str]] = None,
        token_period_s: Optional[float] = None,
    ) -> Tuple[Address, str]:
        """store -> Deploy -> publishData -> setLicense -> catalog entry.

        On any failure the stored blob is dropped and no catalog entry is
        made; a contract that was already deployed stays unreachable.
        """
        agent = self._provider(provider)
        dataset_id = dataset_id or f"ds-{len(self.catalog) + 1:04d}"
        if dataset_id in self.catalog:
            raise DuplicateId(f"dataset id {dataset_id!r} already in the catalog")
        client = self.client(provider)
        predicted = self.ledger.predict_contract_address(provider)
        stored = RecordSet(records.copy().records, version=1)
        link, dataset_hash = self.store.store(provider, predicted, stored, allow_empty=True)
        try:
            period = float(token_period_s or self.runtime.default_token_period_s)
            contract = client.transact(CREATE_TARGET, DEPLOY, token_period_s=period)
            client.transact(contract, "publishData", descriptor=descriptor.as_text(), link=link, dataset_hash=dataset_hash)
            client.transact(contract, "setLicense", **license.to_args())
            self.catalog.publish_entry(CatalogEntry(
                dataset_id=dataset_id, descriptor=descriptor, license_type=license.license_type,
                contract_address=contract.hex,
            ))
        except LuceError as e:
            self.store.discard(link)
            logger.warning(f"Sharing {dataset_id} failed: {e.code}")
            raise
        agent.contracts[dataset_id] = contract
        agent.links[dataset_id] = link
        for subject, anon_id in (subjects or {}).items():
            agent.mapping.assign(dataset_id, subject, anon_id)
        logger.info(f"Dataset {dataset_id} shared by {provider} at {contract}")
        return contract, dataset_id

    # access

    def discover(self, dataset_id: str, query: str = "") -> CatalogEntry:
        """The hit of catalog search ``query`` that is ``dataset_id``."""
        for entry in self.catalog.search(query):
            if entry.dataset_id == dataset_id:
                return entry
        raise UnknownDataset(f"search {query!r} does not find dataset {dataset_id!r}")

    def acquire(
        self, requester: Address, dataset_id: str, purpose: str, query: str = ""
    ) -> Tuple[AccessToken, RecordSet]:
        """search -> getLicense -> addDataRequester(accepted) -> getLink -> token read -> fetch."""
        agent = self.requesters.setdefault(requester, RequesterAgent(requester))
        entry = self.discover(dataset_id, query)
        client = self.client(requester)
        client.transact(entry.contract, "getLicense")
        token = client.transact(entry.contract, "addDataRequester", purpose=purpose, license_accepted=True)
        link = client.transact(entry.contract, "getLink")
        token = client.call(entry.contract, "token", token_id=token.token_id)
        records = self.store.fetch(requester, link, token, self.runtime.dataset(entry.contract), self.ledger.clock)
        agent.holdings[dataset_id] = Holding(
            dataset_id=dataset_id, contract=entry.contract, purpose=purpose, token=token,
            link=link, records=records, version=records.version,
        )
        logger.info(f"{requester} acquired {dataset_id} with token #{token.token_id} for {purpose}")
        return token, records

    def fetch_with(self, requester: Address, dataset_id: str) -> RecordSet:
        """Fetch the current version with the requester's held token."""
        holding = self.requesters[requester].holdings[dataset_id]
        return self.store.fetch(
            requester, holding.link, holding.token, self.runtime.dataset(holding.contract), self.ledger.clock
        )

    # maintenance

    def start_maintenance(self, requester: Address, until_time: float) -> None:
        agent = self.requesters[requester]
        agent.maintain_until = max(agent.maintain_until, until_time)
        for holding in agent.holdings.values():
            self._schedule_renewal(agent, holding)

    def maintain(self, requester: Address, until_time: float) -> List[RenewalRecord]:
        """Renew ahead of every expiry up to ``until_time``; returns this requester's new log entries."""
        agent = self.requesters[requester]
        start = len(agent.log)
        self.start_maintenance(requester, until_time)
        self.scheduler.run_until(until_time)
        return agent.log[start:]

    def run_until(self, t: float) -> int:
        return self.scheduler.run_until(t)

    def _schedule_renewal(self, agent: RequesterAgent, holding: Holding) -> None:
        if holding.renewal_scheduled or holding.token.state != TokenState.ACTIVE:
            return
        when = max(self.ledger.clock, holding.token.expires_at - self.renew_lead_time_s)
        if when > agent.maintain_until:
            return
        holding.renewal_scheduled = True
        self.scheduler.at(when, lambda: self._renew(agent, holding), f"renew {holding.dataset_id} for {agent.address}")

    def _pending_version(self, agent: RequesterAgent, holding: Holding) -> Optional[int]:
        current = self.ledger.call(agent.address, holding.contract, "snapshot")["version"]
        return current if current > holding.version else None

    def _refresh(self, agent: RequesterAgent, holding: Holding, version: int) -> None:
        holding.version = version
        try:
            holding.records = self.fetch_with(agent.address, holding.dataset_id)
        except LuceError as e:
            logger.warning(f"{agent.address} could not re-fetch {holding.dataset_id}: {e.code}")

    def _renew(self, agent: RequesterAgent, holding: Holding) -> None:
        holding.renewal_scheduled = False
        if agent.behavior == RequesterBehavior.NEVER_RENEW:
            holding.token.state = TokenState.EXPIRED
            agent.log.append(RenewalRecord(
                at=holding.token.expires_at, dataset_id=holding.dataset_id, token_id=holding.token.token_id,
                outcome=RenewalOutcome.EXPIRED, expires_at=holding.token.expires_at,
            ))
            return
        client = self.client(agent.address)
        calls = []
        pending = None
        if agent.behavior == RequesterBehavior.COMPLIANT:
            pending = self._pending_version(agent, holding)
            if pending is not None:
                calls.append((holding.contract, "confirmUpdate", {"version": pending}))
        calls.append((holding.contract, "renewToken", {}))
        receipts = client.transact_many(calls)
        renewal = receipts[-1]
        if renewal.status == TxStatus.REJECTED:
            # only the clock outrunning the token can get here
            holding.token.state = TokenState.EXPIRED
            agent.log.append(RenewalRecord(
                at=self.ledger.clock, dataset_id=holding.dataset_id, token_id=holding.token.token_id,
                outcome=RenewalOutcome.EXPIRED, expires_at=holding.token.expires_at,
            ))
            logger.warning(f"Renewal of token #{holding.token.token_id} failed: {renewal.error_code}")
            return
        if pending is not None and receipts[0].status == TxStatus.MINED:
            self._refresh(agent, holding, pending)
        token: AccessToken = renewal.result
        holding.token = token
        outcome = RenewalOutcome.REVOKED if token.state == TokenState.REVOKED else RenewalOutcome.RENEWED
        agent.log.append(RenewalRecord(
            at=self.ledger.clock, dataset_id=holding.dataset_id, token_id=token.token_id, outcome=outcome,
            expires_at=token.expires_at, confirmed_version=holding.version,
        ))
        if outcome == RenewalOutcome.RENEWED:
            self._schedule_renewal(agent, holding)

    def _notify(self, recipients: Iterable[str], dataset_id: str, version: int) -> None:
        """Compliant recipients confirm an update as soon as it is announced."""
        for hex_address in recipients:
            agent = self.requesters.get(Address.from_hex(hex_address))
            if agent is None or agent.behavior != RequesterBehavior.COMPLIANT:
                continue
            holding = agent.holdings.get(dataset_id)
            if holding is None:
                continue
            self.scheduler.at(
                self.ledger.clock, lambda a=agent, h=holding: self._confirm(a, h, version), f"confirm v{version}"
            )

    def _confirm(self, agent: RequesterAgent, holding: Holding, version: int) -> None:
        if holding.version >= version or holding.token.state != TokenState.ACTIVE:
            return
        client = self.client(agent.address)
        receipts = client.wait([client.submit(holding.contract, "confirmUpdate", version=version)])
        if receipts[0].status == TxStatus.MINED:
            self._refresh(agent, holding, version)

    # data subject rights

    def subject_report(self, subject: Address, providers: Optional[Sequence[Address]] = None) -> SubjectReport:
        identity = self.subjects.get(subject)
        if identity is None:
            raise UnknownSubject(f"{subject} is not a registered data subject")
        entries = []
        for provider in providers if providers is not None else list(self.providers):
            agent = self._provider(provider)
            for dataset_id in agent.mapping.datasets_of(identity):
                contract = agent.contracts[dataset_id]
                rows = self.ledger.call(provider, contract, "requesters")
                entries.append(ReportEntry(
                    dataset_id=dataset_id,
                    contract_address=contract.hex,
                    requesters=[
                        ReportedRequester(address=r["address"], purpose=r["purpose"], token_state=r["token_state"])
                        for r in rows
                    ],
                ))
        entries.sort(key=lambda e: e.dataset_id)
        return SubjectReport(subject_identity=identity, generated_at=self.ledger.clock, entries=entries)

    def request_erasure(self, subject: Address, provider: Address, dataset_id: str) -> UpdateConfirmation:
        return self._request_update(subject, provider, dataset_id, UpdateKind.ERASE, None)

    def request_rectification(
        self, subject: Address, provider: Address, dataset_id: str, new_fields: Mapping[str, str]
    ) -> UpdateConfirmation:
        return self._request_update(subject, provider, dataset_id, UpdateKind.RECTIFY, dict(new_fields))

    def _request_update(
        self,
        subject: Address,
        provider: Address,
        dataset_id: str,
        kind: UpdateKind,
        new_fields: Optional[Dict[str, str]],
    ) -> UpdateConfirmation:
        identity = self.subjects.get(subject)
        if identity is None:
            raise UnknownSubject(f"{subject} is not a registered data subject")
        agent = self._provider(provider)
        if dataset_id not in agent.contracts:
            raise UnknownDataset(f"{provider} holds no dataset {dataset_id!r}")
        anon_id = agent.mapping.anon_id(dataset_id, identity)
        if anon_id is None:
            raise UnknownSubject(f"subject not present in {dataset_id}")
        contract, link = agent.contracts[dataset_id], agent.links[dataset_id]
        current = self.store.provider_copy(provider, link)
        try:
            if kind == UpdateKind.ERASE:
                updated, new_hash = apply_erase(current, anon_id)
            else:
                updated, new_hash = apply_rectify(current, anon_id, new_fields or {})
        except UnknownAnonId as e:
            raise UnknownSubject(f"subject not present in {dataset_id}") from e

        logger.info(f"{kind.value} requested for {dataset_id} by a data subject")
        updated.version = current.version + 1
        self.store.replace(provider, link, updated)
        try:
            version = self.client(provider).transact(
                contract, "updateData", new_hash=new_hash, kind=kind.value, anon_ids=[anon_id]
            )
        except LuceError:
            self.store.replace(provider, link, current)
            raise
        if kind == UpdateKind.ERASE:
            agent.mapping.forget(dataset_id, identity)

        dataset = self.runtime.dataset(contract)
        update = [e for e in dataset.event_log if e.kind == EventKind.UPDATE_REQUESTED][-1]
        deadline = update.at + dataset.token_period_s
        recipients = update.payload["recipients"]
        self._notify(recipients, dataset_id, version)

        # the subject waits at most one token period
        while True:
            statuses = self._statuses(dataset.event_log, recipients, update, min(self.ledger.clock, deadline))
            if all(s in RESOLVED for s in statuses.values()) or self.ledger.clock >= deadline:
                break
            if not self.scheduler.step(deadline):
                self.ledger.advance_to(deadline)
        statuses = self._statuses(dataset.event_log, recipients, update, min(self.ledger.clock, deadline))
        confirmation = UpdateConfirmation(
            dataset_id=dataset_id, kind=kind, version=version, requested_at=update.at,
            deadline=deadline, completed_at=self.ledger.clock, statuses=statuses,
        )
        logger.info(f"{kind.value} on {dataset_id} settled at t={self.ledger.clock:.1f}s: "
                    f"{sorted(s.value for s in statuses.values())}")
        return confirmation

    @staticmethod
    def _statuses(
        events: Sequence[ContractEvent], recipients: Sequence[str], update: ContractEvent, until: float
    ) -> Dict[str, RecipientStatus]:
        return {actor: recipient_status(events, actor, update, until) for actor in recipients}

    def file_and_audit(self, subject: Address, authority: Address, dataset_id: str) -> Complaint:
        identity = self.subjects.get(subject)
        if identity is None:
            raise UnknownSubject(f"{subject} is not a registered data subject")
        role = self.ledger.call(authority, REGISTRY_ADDRESS, "role_of", {"target": authority.hex})
        if role != Role.SUPERVISORY_AUTHORITY:
            raise NotAuthority(f"{authority} is not a supervisory authority")
        entry = self._entry(dataset_id)
        complaint = Complaint(
            complaint_id=f"C-{len(self.complaints) + 1:04d}",
            subject_identity=identity,
            dataset_id=dataset_id,
            filed_at=self.ledger.clock,
        )
        self.complaints.append(complaint)
        events = self.ledger.call(authority, entry.contract, "events")
        period = self.ledger.call(authority, entry.contract, "token_period")
        result = audit_contract(events, period, self.ledger.clock)
        complaint.violations = result.violations
        complaint.outcome = ComplaintOutcome.COMPLIANT if result.compliant else ComplaintOutcome.NON_COMPLIANT
        if result.compliant:
            logger.info(f"Complaint {complaint.complaint_id} on {dataset_id}: compliant")
        else:
            logger.warning(f"Complaint {complaint.complaint_id} on {dataset_id}: non-compliant, "
                           f"{[v.address for v in result.violations]}")
        return complaint

    # baseline

    def baseline_set(self, caller: Address, key: Address, value: int) -> bool:
        return self.client(caller).transact(BASELINE_ADDRESS, "baseline.set", key=key.hex, value=value)
