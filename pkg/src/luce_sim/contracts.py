"""On-ledger state machines: user registry, per-dataset LUCE contract, baseline.

Contract methods run only inside block execution (``@action``) or as free
read-only calls (``@view``). Every ``@action`` handler validates all of its
preconditions before touching state, so a raised ``ContractError`` leaves the
contract unchanged and the ledger marks the transaction Rejected. Anything else
that escapes a handler is undone from the checkpoint the runtime takes first.
"""

import inspect
import re
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Annotated, Any, Callable, ClassVar, Dict, FrozenSet, Iterable, List, Mapping, Optional, get_type_hints

from loguru import logger
from pydantic import AfterValidator, PositiveFloat, TypeAdapter, ValidationError

from .config import settings
from .costmodel import GasSchedule
from .encoding import ZERO_DIGEST, Address, to_json_line
from .errors import (
    AlreadyPublished,
    AlreadyRegistered,
    AlreadySubscribed,
    EmptyPurposes,
    LicenseNotAccepted,
    MalformedAction,
    NoEntry,
    NoLicense,
    NotAuthority,
    NotOwner,
    NotPublished,
    NotRegistered,
    NoToken,
    PurposeIncompatible,
    SameHash,
    StaleVersion,
    TokenExpired,
    TokenRevoked,
    UnknownAddress,
    UnknownContract,
    UnknownVersion,
    WrongRole,
    ZeroHash,
)
from .ledger import ExecutionResult, Transaction

DEPLOY = "Deploy"
CREATE_TARGET = Address.zero()
REGISTRY_ADDRESS = Address.derive("system", "user-registry")
BASELINE_ADDRESS = Address.derive("system", "baseline")

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")


def _hex_address(value: str) -> str:
    Address.from_hex(value)
    return value


# Address arguments travel as hex strings and must parse as one.
HexAddress = Annotated[str, AfterValidator(_hex_address)]
_DEPLOY_PERIOD = TypeAdapter(Optional[PositiveFloat])


@lru_cache(maxsize=None)
def _argument_adapters(fn: Callable) -> Dict[str, TypeAdapter]:
    hints = get_type_hints(fn, include_extras=True)
    return {name: TypeAdapter(hint) for name, hint in hints.items() if name not in ("ctx", "return")}


class Role(str, Enum):
    DATA_PROVIDER = "DataProvider"
    DATA_REQUESTER = "DataRequester"
    DATA_SUBJECT = "DataSubject"
    SUPERVISORY_AUTHORITY = "SupervisoryAuthority"


class TokenState(str, Enum):
    ACTIVE = "Active"
    EXPIRED = "Expired"
    REVOKED = "Revoked"
    DELETED = "Deleted"


class UpdateKind(str, Enum):
    RECTIFY = "Rectify"
    ERASE = "Erase"


class EventKind(str, Enum):
    PUBLISHED = "Published"
    LICENSE_SET = "LicenseSet"
    REQUESTER_ADDED = "RequesterAdded"
    LINK_SERVED = "LinkServed"
    UPDATE_REQUESTED = "UpdateRequested"
    UPDATE_CONFIRMED = "UpdateConfirmed"
    TOKEN_RENEWED = "TokenRenewed"
    TOKEN_REVOKED = "TokenRevoked"
    UNSUBSCRIBED = "Unsubscribed"


@dataclass(frozen=True)
class License:
    license_type: str
    terms_text: str
    permitted_purposes: FrozenSet[str]

    def to_args(self) -> Dict[str, Any]:
        return {
            "license_type": self.license_type,
            "terms_text": self.terms_text,
            "permitted_purposes": sorted(self.permitted_purposes),
        }

    @classmethod
    def from_args(cls, args: Mapping[str, Any]) -> "License":
        return cls(
            license_type=str(args["license_type"]),
            terms_text=str(args.get("terms_text", "")),
            permitted_purposes=frozenset(str(p) for p in args.get("permitted_purposes", ())),
        )


@dataclass
class AccessToken:
    """Non-transferable access token bound to one dataset contract."""

    token_id: int
    owner: Address
    contract: Address
    issued_at: float
    expires_at: float
    state: TokenState = TokenState.ACTIVE

    def state_at(self, now: float) -> TokenState:
        if self.state == TokenState.ACTIVE and now > self.expires_at:
            return TokenState.EXPIRED
        return self.state

    def is_live(self, now: float) -> bool:
        return self.state_at(now) == TokenState.ACTIVE

    def copy(self) -> "AccessToken":
        return replace(self)


@dataclass
class RequesterEntry:
    purpose: str
    token: AccessToken
    confirmed_version: int
    last_renewal_at: float

    def copy(self) -> "RequesterEntry":
        return replace(self, token=self.token.copy())


@dataclass(frozen=True)
class ContractEvent:
    kind: EventKind
    actor: Address
    payload: Dict[str, Any]
    tx_ref: str
    at: float
    contract: Address

    def to_record(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "actor": self.actor.hex,
            "payload": self.payload,
            "tx_ref": self.tx_ref,
            "at": self.at,
            "contract": self.contract.hex,
        }


@dataclass(frozen=True)
class CallContext:
    sender: Address
    now: float
    tx_id: Optional[str] = None
    nonce: int = 0


def action(name: str):
    """Mark a method as a state-changing, gas-metered contract action."""
    def decorator(fn):
        fn._luce_action = name
        return fn
    return decorator


def view(name: str):
    """Mark a method as a free read-only call."""
    def decorator(fn):
        fn._luce_view = name
        return fn
    return decorator


class Contract:
    """Dispatch of named actions and views to decorated handlers."""

    kind: ClassVar[str] = "contract"
    _actions: ClassVar[Dict[str, str]] = {}
    _views: ClassVar[Dict[str, str]] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls._actions, cls._views = {}, {}
        for attr, fn in vars(cls).items():
            if hasattr(fn, "_luce_action"):
                cls._actions[fn._luce_action] = attr
            if hasattr(fn, "_luce_view"):
                cls._views[fn._luce_view] = attr

    def __init__(self, address: Address):
        self.address = address

    def bind(self, name: str, args: Mapping[str, Any], views: bool = False):
        table = self._views if views else self._actions
        if name not in table:
            raise MalformedAction(f"{self.kind} has no {'view' if views else 'action'} {name!r}")
        method = getattr(self, table[name])
        try:
            inspect.signature(method).bind(None, **args)
        except TypeError as e:
            raise MalformedAction(f"bad arguments for {name}: {e}") from e
        adapters = _argument_adapters(getattr(type(self), table[name]))
        for arg, value in args.items():
            try:
                adapters[arg].validate_python(value, strict=True)
            except ValidationError as e:
                raise MalformedAction(f"bad argument {arg!r} for {name}: {e.errors()[0]['msg']}") from e
        return method

    def checkpoint(self, sender: Address, args: Mapping[str, Any]) -> Any:
        """State a transaction from ``sender`` with ``args`` may touch, for ``restore``."""
        raise NotImplementedError

    def restore(self, state: Any) -> None:
        raise NotImplementedError


class UserRegistry(Contract):
    """Which addresses may interact with dataset contracts, and in which role."""

    kind = "registry"

    def __init__(self, address: Address = REGISTRY_ADDRESS):
        super().__init__(address)
        self.users: Dict[Address, tuple] = {}

    def role_of(self, address: Address) -> Optional[Role]:
        entry = self.users.get(address)
        return entry[0] if entry else None

    def require(self, address: Address, role: Optional[Role] = None) -> Role:
        found = self.role_of(address)
        if found is None:
            raise NotRegistered(f"{address} is not registered")
        if role is not None and found != role:
            raise WrongRole(f"{address} is a {found.value}, not a {role.value}")
        return found

    def checkpoint(self, sender: Address, args: Mapping[str, Any]) -> Any:
        return sender, self.users.get(sender)

    def restore(self, state: Any) -> None:
        sender, entry = state
        if entry is None:
            self.users.pop(sender, None)
        else:
            self.users[sender] = entry

    @action("register")
    def register(self, ctx: CallContext, role: str, identity_ref: str) -> bool:
        if ctx.sender in self.users:
            raise AlreadyRegistered(f"{ctx.sender} is already registered")
        try:
            parsed = Role(role)
        except ValueError as e:
            raise MalformedAction(f"unknown role {role!r}") from e
        if not identity_ref:
            raise MalformedAction("identity reference must not be empty")
        self.users[ctx.sender] = (parsed, identity_ref)
        return True

    @view("resolve")
    def resolve(self, ctx: CallContext, target: HexAddress) -> tuple:
        if self.role_of(ctx.sender) != Role.SUPERVISORY_AUTHORITY:
            raise NotAuthority(f"{ctx.sender} may not resolve identities")
        entry = self.users.get(Address.from_hex(target))
        if entry is None:
            raise UnknownAddress(f"{target} is not registered")
        return entry

    @view("role_of")
    def role_view(self, ctx: CallContext, target: HexAddress) -> Optional[Role]:
        return self.role_of(Address.from_hex(target))


class BaselineContract(Contract):
    """Minimal comparison contract: set a value at a given address."""

    kind = "baseline"

    def __init__(self, registry: UserRegistry, address: Address = BASELINE_ADDRESS):
        super().__init__(address)
        self.registry = registry
        self.values: Dict[str, int] = {}

    def checkpoint(self, sender: Address, args: Mapping[str, Any]) -> Any:
        try:
            key = Address.from_hex(args["key"]).hex
        except (KeyError, TypeError, ValueError):
            return None
        return key, self.values.get(key)

    def restore(self, state: Any) -> None:
        if state is None:
            return
        key, value = state
        if value is None:
            self.values.pop(key, None)
        else:
            self.values[key] = value

    @action("baseline.set")
    def set(self, ctx: CallContext, key: HexAddress, value: int) -> bool:
        self.registry.require(ctx.sender)
        self.values[Address.from_hex(key).hex] = int(value)
        return True

    @view("baseline.get")
    def get(self, ctx: CallContext, key: HexAddress) -> Optional[int]:
        return self.values.get(Address.from_hex(key).hex)


class DatasetContract(Contract):
    """One contract per published dataset."""

    kind = "dataset"
    _SCALARS = ("dataset_hash", "descriptor", "link", "license", "version")

    def __init__(self, address: Address, provider: Address, registry: UserRegistry, token_period_s: float):
        super().__init__(address)
        self.provider = provider
        self.registry = registry
        self.dataset_hash = ZERO_DIGEST
        self.descriptor = ""
        self.link = ""
        self.license: Optional[License] = None
        self.version = 1
        self.token_period_s = token_period_s
        self.requesters: Dict[Address, RequesterEntry] = {}
        self.tokens: Dict[int, AccessToken] = {}
        self.event_log: List[ContractEvent] = []
        # Disabled only by tests that need a constructed compliance violation.
        self.revocation_enabled = True

    # helpers

    def _emit(self, ctx: CallContext, event_kind: EventKind, /, **payload) -> ContractEvent:
        event = ContractEvent(
            kind=event_kind, actor=ctx.sender, payload=payload, tx_ref=ctx.tx_id or "", at=ctx.now, contract=self.address
        )
        self.event_log.append(event)
        return event

    def _require_owner(self, ctx: CallContext) -> None:
        self.registry.require(ctx.sender)
        if ctx.sender != self.provider:
            raise NotOwner(f"{ctx.sender} does not own dataset contract {self.address}")

    def _live_entry(self, ctx: CallContext) -> RequesterEntry:
        """Entry whose token may be used now; raises the matching denial otherwise."""
        self.registry.require(ctx.sender)
        entry = self.requesters.get(ctx.sender)
        if entry is None or entry.token.state == TokenState.DELETED:
            raise NoToken(f"{ctx.sender} holds no token on {self.address}")
        if entry.token.state == TokenState.REVOKED:
            raise TokenRevoked(f"token #{entry.token.token_id} was revoked")
        if ctx.now > entry.token.expires_at:
            raise TokenExpired(f"token #{entry.token.token_id} expired at {entry.token.expires_at}")
        return entry

    @staticmethod
    def _check_digest(value: str) -> str:
        if not isinstance(value, str) or not _DIGEST_RE.match(value):
            raise MalformedAction("dataset hash must be 64 lowercase hex characters")
        if value == ZERO_DIGEST:
            raise ZeroHash("dataset hash must not be all zero")
        return value

    def active_requesters(self, now: float) -> List[Address]:
        return [addr for addr, entry in self.requesters.items() if entry.token.is_live(now)]

    def token_by_id(self, token_id: int) -> Optional[AccessToken]:
        token = self.tokens.get(token_id)
        return token.copy() if token else None

    def current_token_of(self, owner: Address) -> Optional[AccessToken]:
        entry = self.requesters.get(owner)
        return entry.token.copy() if entry else None

    def checkpoint(self, sender: Address, args: Mapping[str, Any]) -> Any:
        # An action only mutates the scalars, the sender's own entry and token, and appends.
        entry = self.requesters.get(sender)
        return {
            "scalars": {name: getattr(self, name) for name in self._SCALARS},
            "events": len(self.event_log),
            "tokens": len(self.tokens),
            "sender": sender,
            "entry": entry,
            "entry_fields": dict(vars(entry)) if entry else None,
            "token_fields": dict(vars(entry.token)) if entry else None,
        }

    def restore(self, state: Any) -> None:
        for name, value in state["scalars"].items():
            setattr(self, name, value)
        del self.event_log[state["events"]:]
        for token_id in [t for t in self.tokens if t > state["tokens"]]:
            del self.tokens[token_id]
        entry = state["entry"]
        if entry is None:
            self.requesters.pop(state["sender"], None)
            return
        vars(entry).update(state["entry_fields"])
        vars(entry.token).update(state["token_fields"])
        self.requesters[state["sender"]] = entry

    # actions

    @action("publishData")
    def publish_data(self, ctx: CallContext, descriptor: str, link: str, dataset_hash: str) -> bool:
        self._require_owner(ctx)
        self._check_digest(dataset_hash)
        if self.dataset_hash != ZERO_DIGEST:
            raise AlreadyPublished("dataset already published; use updateData")
        self.descriptor, self.link, self.dataset_hash = descriptor, link, dataset_hash
        self._emit(ctx, EventKind.PUBLISHED, dataset_hash=dataset_hash, link=link, descriptor=descriptor)
        return True

    @action("setLicense")
    def set_license(self, ctx: CallContext, license_type: str, terms_text: str, permitted_purposes: List[str]) -> bool:
        self._require_owner(ctx)
        if not permitted_purposes:
            raise EmptyPurposes("a license must permit at least one purpose")
        self.license = License(license_type, terms_text, frozenset(permitted_purposes))
        self._emit(ctx, EventKind.LICENSE_SET, license_type=license_type, purposes=sorted(self.license.permitted_purposes))
        return True

    @action("getLicense")
    def get_license(self, ctx: CallContext) -> License:
        self.registry.require(ctx.sender)
        if self.license is None:
            raise NoLicense(f"no license set on {self.address}")
        return self.license

    @action("addDataRequester")
    def add_data_requester(self, ctx: CallContext, purpose: str, license_accepted: bool) -> AccessToken:
        self.registry.require(ctx.sender, Role.DATA_REQUESTER)
        if self.license is None:
            raise NoLicense(f"no license set on {self.address}")
        if not license_accepted:
            raise LicenseNotAccepted("the licensing terms must be accepted")
        if purpose not in self.license.permitted_purposes:
            raise PurposeIncompatible(f"purpose {purpose!r} is not permitted by {self.license.license_type}")
        previous = self.requesters.get(ctx.sender)
        if previous is not None and previous.token.is_live(ctx.now):
            raise AlreadySubscribed(f"{ctx.sender} already holds token #{previous.token.token_id}")
        if previous is not None and previous.token.state_at(ctx.now) == TokenState.EXPIRED:
            previous.token.state = TokenState.EXPIRED
        token = AccessToken(
            token_id=len(self.tokens) + 1,
            owner=ctx.sender,
            contract=self.address,
            issued_at=ctx.now,
            expires_at=ctx.now + self.token_period_s,
        )
        self.tokens[token.token_id] = token
        self.requesters[ctx.sender] = RequesterEntry(
            purpose=purpose, token=token, confirmed_version=self.version, last_renewal_at=ctx.now
        )
        self._emit(ctx, EventKind.REQUESTER_ADDED, purpose=purpose, token_id=token.token_id, expires_at=token.expires_at)
        logger.debug(f"Token #{token.token_id} issued on {self.address} to {ctx.sender} for {purpose}")
        return token.copy()

    @action("getLink")
    def get_link(self, ctx: CallContext) -> str:
        entry = self._live_entry(ctx)
        if not self.link:
            raise NotPublished(f"nothing published on {self.address}")
        self._emit(ctx, EventKind.LINK_SERVED, token_id=entry.token.token_id)
        return self.link

    @action("renewToken")
    def renew_token(self, ctx: CallContext) -> AccessToken:
        """Periodic compliance checkpoint: renew if up to date, revoke otherwise."""
        entry = self._live_entry(ctx)
        token = entry.token
        if entry.confirmed_version == self.version or not self.revocation_enabled:
            token.issued_at = ctx.now
            token.expires_at = ctx.now + self.token_period_s
            entry.last_renewal_at = ctx.now
            self._emit(ctx, EventKind.TOKEN_RENEWED, token_id=token.token_id, expires_at=token.expires_at)
        else:
            token.state = TokenState.REVOKED
            self._emit(
                ctx,
                EventKind.TOKEN_REVOKED,
                token_id=token.token_id,
                version=self.version,
                confirmed_version=entry.confirmed_version,
            )
            logger.warning(f"Token #{token.token_id} on {self.address} revoked: version {entry.confirmed_version} "
                           f"confirmed, {self.version} current")
        return token.copy()

    @action("updateData")
    def update_data(self, ctx: CallContext, new_hash: str, kind: str, anon_ids: List[str]) -> int:
        self._require_owner(ctx)
        if self.dataset_hash == ZERO_DIGEST:
            raise NotPublished("publish the dataset before updating it")
        self._check_digest(new_hash)
        if new_hash == self.dataset_hash:
            raise SameHash("new dataset hash equals the current one")
        try:
            update_kind = UpdateKind(kind)
        except ValueError as e:
            raise MalformedAction(f"unknown update kind {kind!r}") from e
        recipients = [addr.hex for addr in self.active_requesters(ctx.now)]
        self.version += 1
        self.dataset_hash = new_hash
        self._emit(
            ctx,
            EventKind.UPDATE_REQUESTED,
            update_kind=update_kind.value,
            anon_ids=list(anon_ids),
            new_version=self.version,
            dataset_hash=new_hash,
            recipients=recipients,
        )
        logger.info(f"Dataset {self.address} moved to version {self.version} ({update_kind.value}), "
                    f"{len(recipients)} requesters notified")
        return self.version

    @action("confirmUpdate")
    def confirm_update(self, ctx: CallContext, version: int) -> bool:
        self.registry.require(ctx.sender)
        entry = self.requesters.get(ctx.sender)
        if entry is None or entry.token.state == TokenState.DELETED:
            raise NoEntry(f"{ctx.sender} has no subscription on {self.address}")
        if version < self.version:
            raise StaleVersion(f"version {version} confirmed, current is {self.version}")
        if version > self.version:
            raise UnknownVersion(f"version {version} does not exist yet, current is {self.version}")
        entry.confirmed_version = version
        self._emit(ctx, EventKind.UPDATE_CONFIRMED, version=version)
        return True

    @action("unsubscribe")
    def unsubscribe(self, ctx: CallContext) -> bool:
        self.registry.require(ctx.sender)
        entry = self.requesters.get(ctx.sender)
        if entry is None or entry.token.state != TokenState.ACTIVE:
            raise NoToken(f"{ctx.sender} holds no live token on {self.address}")
        entry.token.state = TokenState.DELETED
        self._emit(ctx, EventKind.UNSUBSCRIBED, token_id=entry.token.token_id)
        return True

    # views

    @view("events")
    def events(
        self,
        ctx: CallContext,
        kind: Optional[str] = None,
        actor: Optional[str] = None,
        since: Optional[float] = None,
        until: Optional[float] = None,
    ) -> List[ContractEvent]:
        self.registry.require(ctx.sender)
        return filter_events(self.event_log, kind=kind, actor=actor, since=since, until=until)

    @view("token")
    def token_view(self, ctx: CallContext, token_id: int) -> Optional[AccessToken]:
        return self.token_by_id(token_id)

    @view("requester")
    def requester_view(self, ctx: CallContext, address: HexAddress) -> Optional[RequesterEntry]:
        entry = self.requesters.get(Address.from_hex(address))
        return entry.copy() if entry else None

    @view("requesters")
    def requesters_view(self, ctx: CallContext) -> List[Dict[str, Any]]:
        """Every requester ever admitted, in admission order."""
        return [
            {
                "address": addr.hex,
                "purpose": entry.purpose,
                "token_id": entry.token.token_id,
                "token_state": entry.token.state_at(ctx.now).value,
            }
            for addr, entry in self.requesters.items()
        ]

    @view("token_period")
    def token_period_view(self, ctx: CallContext) -> float:
        return self.token_period_s

    @view("snapshot")
    def snapshot_view(self, ctx: CallContext) -> Dict[str, Any]:
        return self.snapshot(ctx.now)

    def snapshot(self, at: float) -> Dict[str, Any]:
        """Cached fields as of simulated time ``at``."""
        return {
            "version": self.version,
            "requester_count": len(self.requesters),
            "token_states": {
                addr.hex: entry.token.state_at(at).value for addr, entry in sorted(self.requesters.items())
            },
        }


def filter_events(
    events: Iterable[ContractEvent],
    kind: Optional[str] = None,
    actor: Optional[str] = None,
    since: Optional[float] = None,
    until: Optional[float] = None,
) -> List[ContractEvent]:
    selected = []
    for event in events:
        if kind is not None and event.kind.value != kind:
            continue
        if actor is not None and event.actor.hex != actor:
            continue
        if since is not None and event.at < since:
            continue
        if until is not None and event.at > until:
            continue
        selected.append(event)
    return selected


def events_to_jsonl(events: Iterable[ContractEvent]) -> str:
    return "".join(to_json_line(event.to_record()) + "\n" for event in events)


class LuceRuntime:
    """Executes ledger transactions against the registry, baseline and dataset contracts."""

    def __init__(self, schedule: Optional[GasSchedule] = None, token_period_s: Optional[float] = None):
        self.schedule = schedule or GasSchedule.default()
        self.default_token_period_s = token_period_s or settings.token_period_s
        self.registry = UserRegistry()
        self.baseline = BaselineContract(self.registry)
        self.datasets: Dict[Address, DatasetContract] = {}

    def contract(self, address: Address) -> Contract:
        if address == self.registry.address:
            return self.registry
        if address == self.baseline.address:
            return self.baseline
        found = self.datasets.get(address)
        if found is None:
            raise UnknownContract(f"no contract deployed at {address}")
        return found

    def dataset(self, address: Address) -> DatasetContract:
        found = self.datasets.get(address)
        if found is None:
            raise UnknownContract(f"no dataset contract deployed at {address}")
        return found

    def is_dataset(self, address: Address) -> bool:
        return address in self.datasets

    # ledger runtime protocol

    def validate(self, tx: Transaction) -> None:
        if tx.target == CREATE_TARGET:
            if tx.action != DEPLOY:
                raise MalformedAction("only Deploy may target the creation address")
            unknown = set(tx.args) - {"token_period_s"}
            if unknown:
                raise MalformedAction(f"unexpected Deploy arguments: {sorted(unknown)}")
            try:
                _DEPLOY_PERIOD.validate_python(tx.args.get("token_period_s"), strict=True)
            except ValidationError as e:
                raise MalformedAction(f"bad token period: {e.errors()[0]['msg']}") from e
            return
        try:
            target = self.contract(tx.target)
        except UnknownContract as e:
            raise MalformedAction(str(e)) from e
        target.bind(tx.action, tx.args)

    def execute(self, tx: Transaction, now: float) -> ExecutionResult:
        ctx = CallContext(sender=tx.sender, now=now, tx_id=tx.tx_id, nonce=tx.nonce)
        if tx.target == CREATE_TARGET and tx.action == DEPLOY:
            result: Any = self._deploy(ctx, **tx.args)
        else:
            try:
                target = self.contract(tx.target)
            except UnknownContract as e:
                raise MalformedAction(str(e)) from e
            result = target.bind(tx.action, tx.args)(ctx, **tx.args)
        gas, _ = self.schedule.gas_for(tx.action)
        return ExecutionResult(gas_used=gas, result=result)

    def call(self, sender: Address, target: Address, action: str, args: Mapping[str, Any], now: float) -> Any:
        contract = self.contract(target)
        return contract.bind(action, args, views=True)(CallContext(sender=sender, now=now), **args)

    def checkpoint(self, tx: Transaction) -> Callable[[], None]:
        """Undo for whatever executing ``tx`` may change."""
        if tx.target == CREATE_TARGET:
            deployed = len(self.datasets)

            def undo_deploy():
                for address in list(self.datasets)[deployed:]:
                    del self.datasets[address]
            return undo_deploy
        contract = self.contract(tx.target)
        state = contract.checkpoint(tx.sender, tx.args)
        return lambda: contract.restore(state)

    def _deploy(self, ctx: CallContext, token_period_s: Optional[float] = None) -> Address:
        self.registry.require(ctx.sender, Role.DATA_PROVIDER)
        address = Address.derive("contract", ctx.sender.hex, ctx.nonce)
        period = float(token_period_s) if token_period_s else self.default_token_period_s
        if period <= 0:
            raise MalformedAction("token period must be positive")
        self.datasets[address] = DatasetContract(address, ctx.sender, self.registry, period)
        logger.info(f"Dataset contract {address} deployed by {ctx.sender} (T={period:.0f}s)")
        return address

