"""Canonical serialization helpers.

Every document confab writes (fleet files, snapshots, packages, event logs)
goes through :func:`dumps` so that equal values always produce equal bytes:
keys sorted lexicographically, no insignificant whitespace, UTF-8, LF.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

DIGEST_ALGORITHM = "sha256"


def dumps(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def dump_bytes(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def pretty(value: Any) -> str:
    """Human-readable but still canonical (sorted keys, LF, trailing newline)."""
    return json.dumps(value, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def short_id(prefix: str, value: Any, length: int = 16) -> str:
    """Deterministic identifier derived from the canonical form of ``value``."""
    return f"{prefix}-{digest(dump_bytes(value))[:length]}"


def load_document_text(text: str, origin: str = "document") -> Any:
    from .errors import StructuralError

    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{origin} is not valid JSON: {exc}") from None


def load_document(path: str | Path) -> Any:
    return load_document_text(Path(path).read_text(encoding="utf-8"), str(path))


def write_document(path: str | Path, value: Any) -> None:
    Path(path).write_text(pretty(value), encoding="utf-8", newline="\n")
