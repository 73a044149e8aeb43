"""Canonical byte encoding, hashing and addresses shared by every module."""

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping

ZERO_DIGEST = "0" * 64


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def render_value(value: Any) -> str:
    """Render one field value for the ``name=value`` encoding."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int, str)):
        text = str(value)
        return text.replace("\\", "\\\\").replace("\n", "\\n")
    if isinstance(value, Address):
        return value.hex
    if isinstance(value, (set, frozenset)):
        value = sorted(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"), default=str)


def canonical_bytes(fields: Mapping[str, Any]) -> bytes:
    """UTF-8 ``name=value`` lines, names sorted, joined by newlines."""
    lines = [f"{name}={render_value(fields[name])}" for name in sorted(fields)]
    return "\n".join(lines).encode("utf-8")


def digest(fields: Mapping[str, Any]) -> str:
    return sha256_hex(canonical_bytes(fields))


def to_json_line(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True, order=True)
class Address:
    """20-byte account or contract identifier."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, bytes) or len(self.value) != 20:
            raise ValueError("address must be exactly 20 bytes")

    @property
    def hex(self) -> str:
        return "0x" + self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        body = text[2:] if text.startswith("0x") else text
        try:
            raw = bytes.fromhex(body)
        except ValueError as e:
            raise ValueError(f"not a hex address: {text!r}") from e
        return cls(raw)

    @classmethod
    def derive(cls, *parts: Any) -> "Address":
        seed = ":".join(render_value(p) for p in parts)
        return cls(hashlib.sha256(seed.encode("utf-8")).digest()[:20])

    @classmethod
    def zero(cls) -> "Address":
        return cls(bytes(20))

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex})"
