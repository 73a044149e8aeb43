"""Exception hierarchy for the LUCE simulator.

Every error carries a stable ``code`` equal to its class name so that a
rejected transaction receipt can be turned back into the same exception type.
"""

from typing import Dict, Optional, Type


class LuceError(Exception):
    """Base class for all simulator errors."""

    code = "LuceError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# Ledger

class LedgerError(LuceError):
    code = "LedgerError"


class UnknownSender(LedgerError):
    code = "UnknownSender"


class MalformedAction(LedgerError):
    code = "MalformedAction"


class EmptyMempool(LedgerError):
    code = "EmptyMempool"


class UnknownTx(LedgerError):
    code = "UnknownTx"


class ExecutionFailed(LedgerError):
    """A transaction crashed while executing; its effects were rolled back."""

    code = "ExecutionFailed"


# Cost model

class CostModelError(LuceError):
    code = "CostModelError"


class UnknownAction(CostModelError):
    code = "UnknownAction"


# Contracts

class ContractError(LuceError):
    code = "ContractError"


class AlreadyRegistered(ContractError):
    code = "AlreadyRegistered"


class NotRegistered(ContractError):
    code = "NotRegistered"


class NotAuthority(ContractError):
    code = "NotAuthority"


class UnknownAddress(ContractError):
    code = "UnknownAddress"


class WrongRole(ContractError):
    code = "WrongRole"


class NotOwner(ContractError):
    code = "NotOwner"


class ZeroHash(ContractError):
    code = "ZeroHash"


class EmptyPurposes(ContractError):
    code = "EmptyPurposes"


class NoLicense(ContractError):
    code = "NoLicense"


class LicenseNotAccepted(ContractError):
    code = "LicenseNotAccepted"


class PurposeIncompatible(ContractError):
    code = "PurposeIncompatible"


class AlreadySubscribed(ContractError):
    code = "AlreadySubscribed"


class NoToken(ContractError):
    code = "NoToken"


class TokenExpired(ContractError):
    code = "TokenExpired"


class TokenRevoked(ContractError):
    code = "TokenRevoked"


class SameHash(ContractError):
    code = "SameHash"


class StaleVersion(ContractError):
    code = "StaleVersion"


class UnknownVersion(ContractError):
    code = "UnknownVersion"


class NoEntry(ContractError):
    code = "NoEntry"


class UnknownContract(ContractError):
    code = "UnknownContract"


class AlreadyPublished(ContractError):
    code = "AlreadyPublished"


class NotPublished(ContractError):
    code = "NotPublished"


# Catalog

class CatalogError(LuceError):
    code = "CatalogError"


class DuplicateId(CatalogError):
    code = "DuplicateId"


# Datastore

class DatastoreError(LuceError):
    code = "DatastoreError"


class UnknownAnonId(DatastoreError):
    code = "UnknownAnonId"


class EmptyRecordSet(DatastoreError):
    code = "EmptyRecordSet"


class TokenInvalid(DatastoreError):
    """Fetch refused; ``reason`` names the failed precondition."""

    code = "TokenInvalid"

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or f"token invalid: {reason}")
        self.reason = reason


# Protocol

class ProtocolError(LuceError):
    code = "ProtocolError"


class UnknownSubject(ProtocolError):
    code = "UnknownSubject"


class UnknownDataset(ProtocolError):
    code = "UnknownDataset"


# Harness

class HarnessError(LuceError):
    code = "HarnessError"


class InvalidConfig(HarnessError):
    code = "InvalidConfig"


def _collect(base: Type[LuceError]) -> Dict[str, Type[LuceError]]:
    found = {base.code: base}
    for sub in base.__subclasses__():
        found.update(_collect(sub))
    return found


ERRORS_BY_CODE: Dict[str, Type[LuceError]] = _collect(LuceError)


def error_from_code(code: str, message: Optional[str] = None) -> LuceError:
    """Rebuild the exception recorded on a rejected receipt."""
    cls = ERRORS_BY_CODE.get(code, LuceError)
    if cls is TokenInvalid:
        return TokenInvalid(reason=message or "unknown")
    return cls(message or code)
