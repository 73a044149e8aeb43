"""Off-ledger dataset storage with token-gated retrieval and provenance hashing."""

import io
import itertools
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import pandas as pd
from loguru import logger

from .contracts import AccessToken, DatasetContract, TokenState
from .encoding import Address, sha256_hex
from .errors import EmptyRecordSet, TokenInvalid, UnknownAnonId

LINK_SCHEME = "luce-store://"
CSV_COLUMNS = ["anon_id", "field", "value"]


@dataclass
class RecordSet:
    """De-identified records keyed by anonymized ID."""

    records: Dict[str, Dict[str, str]] = field(default_factory=dict)
    version: int = 1

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, anon_id: str) -> bool:
        return anon_id in self.records

    def copy(self) -> "RecordSet":
        return RecordSet({k: dict(v) for k, v in self.records.items()}, self.version)

    @classmethod
    def from_rows(cls, rows: Mapping[str, Mapping[str, str]], version: int = 1) -> "RecordSet":
        return cls({str(k): {str(f): str(v) for f, v in fields.items()} for k, fields in rows.items()}, version)


@dataclass
class SubjectMapping:
    """Provider-local subject identity -> anonymized ID, per dataset.

    Stays with the provider; nothing here is ever written to the ledger or
    the catalog.
    """

    entries: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def assign(self, dataset_id: str, subject: str, anon_id: str) -> None:
        self.entries.setdefault(dataset_id, {})[subject] = anon_id

    def anon_id(self, dataset_id: str, subject: str) -> Optional[str]:
        return self.entries.get(dataset_id, {}).get(subject)

    def datasets_of(self, subject: str):
        return sorted(ds for ds, mapping in self.entries.items() if subject in mapping)

    def forget(self, dataset_id: str, subject: str) -> None:
        self.entries.get(dataset_id, {}).pop(subject, None)


def canonical_text(record_set: RecordSet) -> str:
    """Hash pre-image: ``anonId.field=value`` lines, sorted, newline-joined."""
    lines = []
    for anon_id in sorted(record_set.records):
        fields = record_set.records[anon_id]
        for name in sorted(fields):
            lines.append(f"{anon_id}.{name}={fields[name]}")
    return "\n".join(lines)


def hash_records(record_set: RecordSet) -> str:
    return sha256_hex(canonical_text(record_set).encode("utf-8"))


def apply_rectify(record_set: RecordSet, anon_id: str, new_fields: Mapping[str, str]) -> Tuple[RecordSet, str]:
    if anon_id not in record_set.records:
        raise UnknownAnonId(f"no record for {anon_id}")
    updated = record_set.copy()
    updated.records[anon_id].update({str(k): str(v) for k, v in new_fields.items()})
    return updated, hash_records(updated)


def apply_erase(record_set: RecordSet, anon_id: str) -> Tuple[RecordSet, str]:
    if anon_id not in record_set.records:
        raise UnknownAnonId(f"no record for {anon_id}")
    updated = record_set.copy()
    del updated.records[anon_id]
    return updated, hash_records(updated)


def to_csv(record_set: RecordSet) -> str:
    rows = [
        {"anon_id": anon_id, "field": name, "value": value}
        for anon_id in sorted(record_set.records)
        for name, value in sorted(record_set.records[anon_id].items())
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS).to_csv(index=False, lineterminator="\n")


def from_csv(text: str, version: int = 1) -> RecordSet:
    df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"record CSV lacks columns {missing}")
    records: Dict[str, Dict[str, str]] = {}
    for row in df.itertuples(index=False):
        records.setdefault(row.anon_id, {})[row.field] = row.value
    return RecordSet(records, version)


@dataclass
class _Blob:
    provider: Address
    contract: Address
    records: RecordSet


class DataStore:
    """Secure storage: the only way out of it is ``fetch`` with a live token."""

    def __init__(self):
        self._blobs: Dict[str, _Blob] = {}
        self._keys = itertools.count(1)

    def store(
        self, provider: Address, contract: Address, record_set: RecordSet, allow_empty: bool = False
    ) -> Tuple[str, str]:
        """Persist at a fresh link; returns ``(link, hash)``."""
        if not record_set.records and not allow_empty:
            raise EmptyRecordSet("refusing to store an empty record set")
        link = f"{LINK_SCHEME}{contract.hex}/{next(self._keys)}"
        self._blobs[link] = _Blob(provider, contract, record_set.copy())
        digest = hash_records(record_set)
        logger.debug(f"Stored {len(record_set)} records at {link} ({digest[:12]})")
        return link, digest

    def replace(self, provider: Address, link: str, record_set: RecordSet) -> str:
        """New version at an existing link."""
        blob = self._blobs.get(link)
        if blob is None:
            raise TokenInvalid("unknown_link", f"nothing stored at {link}")
        if blob.provider != provider:
            raise TokenInvalid("not_owner", f"{provider} does not own {link}")
        blob.records = record_set.copy()
        return hash_records(record_set)

    def discard(self, link: str) -> None:
        self._blobs.pop(link, None)

    def provider_copy(self, provider: Address, link: str) -> RecordSet:
        """Provider reads its own data; no token involved."""
        blob = self._blobs.get(link)
        if blob is None or blob.provider != provider:
            raise TokenInvalid("unknown_link", f"{provider} has nothing stored at {link}")
        return blob.records.copy()

    def links(self):
        return sorted(self._blobs)

    def fetch(
        self, caller: Address, link: str, token: AccessToken, contract: DatasetContract, now: float
    ) -> RecordSet:
        """Return the current records iff ``contract`` would serve ``caller`` the link now."""
        blob = self._blobs.get(link)
        if blob is None:
            raise TokenInvalid("unknown_link", f"nothing stored at {link}")
        if token.contract != blob.contract or contract.address != blob.contract:
            raise TokenInvalid("wrong_contract", f"token #{token.token_id} is not bound to {blob.contract}")
        onchain = contract.token_by_id(token.token_id)
        if onchain is None:
            raise TokenInvalid("unknown_token", f"token #{token.token_id} was never issued")
        if onchain.owner != caller or token.owner != caller:
            raise TokenInvalid("not_owner", f"token #{token.token_id} does not belong to {caller}")
        current = contract.current_token_of(caller)
        if current is None or current.token_id != onchain.token_id:
            raise TokenInvalid("not_current", f"token #{token.token_id} was superseded")
        if onchain.state == TokenState.DELETED:
            raise TokenInvalid("deleted", f"token #{token.token_id} was given up")
        if onchain.state == TokenState.REVOKED:
            raise TokenInvalid("revoked", f"token #{token.token_id} was revoked")
        if contract.registry.role_of(caller) is None:
            raise TokenInvalid("not_owner", f"{caller} is not registered")
        if now > onchain.expires_at:
            raise TokenInvalid("expired", f"token #{token.token_id} expired at {onchain.expires_at}")
        return blob.records.copy()
