"""Configuration packages and their canonical byte form.

Wire layout (UTF-8, LF)::

    CONFAB-PACKAGE 1 sha256
    package_id <n>
    <n bytes>
    commission_id <n>
    ...                      # device_id, artifact, metadata, pre_snapshot_ref
    checksum 64
    <hex sha256 over every byte above>
    mac 64
    <hex HMAC-SHA256(secret, checksum)>

Section payloads are canonical JSON; each is followed by one LF.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Any, Mapping

from . import canonical
from .errors import CorruptionError

MAGIC = "CONFAB-PACKAGE"
FORMAT_VERSION = "1"
HEADER = f"{MAGIC} {FORMAT_VERSION} {canonical.DIGEST_ALGORITHM}\n".encode()
SECTIONS = ("package_id", "commission_id", "device_id", "artifact", "metadata", "pre_snapshot_ref")
DEFAULT_SECRET = b"confab-local-cloud-secret"
CRITICALITIES = ("low", "normal", "critical")


@dataclass(frozen=True)
class Instruction:
    op: str  # set | exec | verify
    target: str
    value: Any = None

    def to_dict(self) -> dict:
        return {"op": self.op, "target": self.target, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Instruction":
        return cls(d["op"], d["target"], d.get("value"))

    def __str__(self):
        if self.op == "verify":
            return f"verify {self.target}={self.value}"
        return f"{self.op} {self.target}" + ("" if self.value is None else f" {self.value}")


@dataclass(frozen=True)
class ConfigurationArtifact:
    instructions: tuple[Instruction, ...]

    def verifies(self) -> list[Instruction]:
        return [i for i in self.instructions if i.op == "verify"]

    def to_list(self) -> list[dict]:
        return [i.to_dict() for i in self.instructions]


@dataclass(frozen=True)
class ShippingMetadata:
    required_charge_pct: float
    interrupt_allowed: bool
    criticality: str
    latest_shipping_time: int

    def to_dict(self) -> dict:
        return {
            "required_charge_pct": self.required_charge_pct,
            "interrupt_allowed": self.interrupt_allowed,
            "criticality": self.criticality,
            "latest_shipping_time": self.latest_shipping_time,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ShippingMetadata":
        return cls(d["required_charge_pct"], d["interrupt_allowed"], d["criticality"], d["latest_shipping_time"])


@dataclass(frozen=True)
class ConfigurationPackage:
    package_id: str
    commission_id: str
    device_id: str
    artifact: ConfigurationArtifact
    metadata: ShippingMetadata
    pre_snapshot_ref: str
    checksum: str = ""
    mac: str = ""

    def section_payloads(self) -> dict[str, Any]:
        return {
            "package_id": self.package_id,
            "commission_id": self.commission_id,
            "device_id": self.device_id,
            "artifact": self.artifact.to_list(),
            "metadata": self.metadata.to_dict(),
            "pre_snapshot_ref": self.pre_snapshot_ref,
        }

    def body_bytes(self) -> bytes:
        out = [HEADER]
        payloads = self.section_payloads()
        for name in SECTIONS:
            data = canonical.dump_bytes(payloads[name])
            out.append(f"{name} {len(data)}\n".encode())
            out.append(data + b"\n")
        return b"".join(out)

    def compute_checksum(self) -> str:
        return canonical.digest(self.body_bytes())

    def to_bytes(self) -> bytes:
        tail = f"checksum 64\n{self.checksum}\nmac 64\n{self.mac}\n".encode()
        return self.body_bytes() + tail

    def verify_checksum(self) -> bool:
        return hmac.compare_digest(self.checksum, self.compute_checksum())

    def verify_mac(self, secret: bytes = DEFAULT_SECRET) -> bool:
        return hmac.compare_digest(self.mac, compute_mac(self.checksum, secret))

    def summary(self) -> dict:
        return {
            "package_id": self.package_id,
            "commission_id": self.commission_id,
            "device_id": self.device_id,
            "instructions": [str(i) for i in self.artifact.instructions],
            "metadata": self.metadata.to_dict(),
            "pre_snapshot_ref": self.pre_snapshot_ref,
            "checksum": self.checksum,
        }


def compute_mac(checksum: str, secret: bytes = DEFAULT_SECRET) -> str:
    return hmac.new(secret, checksum.encode(), hashlib.sha256).hexdigest()


def seal(pkg: ConfigurationPackage, secret: bytes = DEFAULT_SECRET) -> ConfigurationPackage:
    """Fill in package id (content-derived), checksum and MAC."""
    from dataclasses import replace

    if not pkg.package_id:
        ident = {k: v for k, v in pkg.section_payloads().items() if k != "package_id"}
        pkg = replace(pkg, package_id=canonical.short_id("pkg", ident))
    checksum = pkg.compute_checksum()
    return replace(pkg, checksum=checksum, mac=compute_mac(checksum, secret))


def _read_section(data: bytes, pos: int, name: str) -> tuple[bytes, int]:
    nl = data.find(b"\n", pos)
    if nl < 0:
        raise CorruptionError(f"truncated package before section {name}")
    try:
        label, length = data[pos:nl].decode("utf-8").split(" ")
        n = int(length)
    except (UnicodeDecodeError, ValueError):
        raise CorruptionError(f"malformed header for section {name}") from None
    if label != name or n < 0:
        raise CorruptionError(f"expected section {name}, found {label!r}")
    start, end = nl + 1, nl + 1 + n
    if data[end:end + 1] != b"\n":
        raise CorruptionError(f"section {name} has wrong length")
    return data[start:end], end + 1


def from_bytes(data: bytes, verify: bool = True) -> ConfigurationPackage:
    """Parse the canonical form; raises CorruptionError on any damage."""
    import json

    if not data.startswith(HEADER):
        raise CorruptionError("bad package header")
    pos = len(HEADER)
    fields: dict[str, Any] = {}
    try:
        for name in SECTIONS:
            raw, pos = _read_section(data, pos, name)
            fields[name] = json.loads(raw.decode("utf-8"))
        raw_sum, pos = _read_section(data, pos, "checksum")
        raw_mac, pos = _read_section(data, pos, "mac")
        if pos != len(data):
            raise CorruptionError("trailing bytes after package")
        pkg = ConfigurationPackage(
            package_id=fields["package_id"],
            commission_id=fields["commission_id"],
            device_id=fields["device_id"],
            artifact=ConfigurationArtifact(tuple(Instruction.from_dict(i) for i in fields["artifact"])),
            metadata=ShippingMetadata.from_dict(fields["metadata"]),
            pre_snapshot_ref=fields["pre_snapshot_ref"],
            checksum=raw_sum.decode("ascii"),
            mac=raw_mac.decode("ascii"),
        )
    except CorruptionError:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"undecodable package: {exc}") from None
    if verify and not pkg.verify_checksum():
        raise CorruptionError(f"checksum mismatch for {pkg.package_id}")
    if verify and pkg.to_bytes() != data:
        raise CorruptionError(f"{pkg.package_id} is not in canonical form")
    return pkg
