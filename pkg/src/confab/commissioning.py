"""Requirements interface: commission intake, lifecycle tracking and reverts.

A commission states *what* should hold after configuration (post-conditions),
for *which* devices or scenarios, *when*, and *how important* it is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    CommissionRejected,
    LifecycleError,
    NotFoundError,
    RegistrationConflict,
    RevertImpossible,
    StructuralError,
    UnresolvedTargetError,
)
from .model import MAX_SERVICE_LEVEL
from .registry import DeviceRegistry

logger = logging.getLogger(__name__)

SYSTEM_SOURCE = "system"
DEFAULT_REVERT_WINDOW = 50

SUBMITTED = "submitted"
SCHEDULED = "scheduled"
BUILDING = "building"
SHIPPING = "shipping"
COMPLETED = "completed"
REJECTED = "rejected"
EXPIRED = "expired"
REVERTED = "reverted"

TERMINAL = frozenset({COMPLETED, REJECTED, EXPIRED, REVERTED})
_FORWARD = [SUBMITTED, SCHEDULED, BUILDING, SHIPPING, COMPLETED]
TRANSITIONS = {
    SUBMITTED: {SCHEDULED, REJECTED, EXPIRED},
    SCHEDULED: {BUILDING, REJECTED, EXPIRED},
    BUILDING: {SHIPPING, REJECTED, EXPIRED},
    SHIPPING: {COMPLETED, REJECTED, EXPIRED},
    COMPLETED: {REVERTED},
    REJECTED: set(),
    EXPIRED: set(),
    REVERTED: set(),
}


@dataclass(frozen=True)
class PostCondition:
    kind: str  # set-value | provide-service
    path: str | None = None
    value: Any = None
    service: str | None = None
    min_level: int = 0
    device: str | None = None  # restricts a set-value to one target device (used by reverts)

    @property
    def key(self) -> str:
        return self.path if self.kind == "set-value" else self.service

    def applies_to(self, device_id: str) -> bool:
        return self.device is None or self.device == device_id

    def to_dict(self) -> dict:
        if self.kind == "set-value":
            d = {"kind": self.kind, "path": self.path, "value": self.value}
            if self.device is not None:
                d["device"] = self.device
            return d
        return {"kind": self.kind, "service": self.service, "min_level": self.min_level}

    @classmethod
    def set_value(cls, path: str, value: Any, device: str | None = None) -> "PostCondition":
        return cls("set-value", path=path, value=value, device=device)

    @classmethod
    def provide_service(cls, service: str, min_level: int) -> "PostCondition":
        return cls("provide-service", service=service, min_level=min_level)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PostCondition":
        kind = d.get("kind")
        if kind == "set-value":
            if "path" not in d or "value" not in d:
                raise StructuralError("set-value needs path and value")
            return cls.set_value(d["path"], d["value"], d.get("device"))
        if kind == "provide-service":
            if "service" not in d:
                raise StructuralError("provide-service needs a service name")
            return cls.provide_service(d["service"], int(d.get("min_level", 1)))
        raise StructuralError(f"unknown post-condition kind {kind!r}")


@dataclass(frozen=True)
class Commission:
    commission_id: str
    source: str
    importance: int
    earliest: int
    latest: int
    targets: tuple[str, ...]
    required: tuple[PostCondition, ...]
    revert_at: int | None = None
    submitted_at: int | None = None
    reverts: str | None = None  # id of the commission a revert commission restores

    def __post_init__(self):
        if not isinstance(self.importance, int) or isinstance(self.importance, bool) or self.importance < 0:
            raise StructuralError(f"{self.commission_id}: importance must be a non-negative integer")
        if self.earliest > self.latest:
            raise StructuralError(f"{self.commission_id}: window [{self.earliest}, {self.latest}] is empty")
        if self.revert_at is not None and self.revert_at <= self.latest:
            raise StructuralError(f"{self.commission_id}: revert_at must come after the window closes")
        if not self.targets:
            raise StructuralError(f"{self.commission_id}: no targets")

    def to_dict(self) -> dict:
        d = {
            "commission_id": self.commission_id,
            "source": self.source,
            "importance": self.importance,
            "window": {"earliest": self.earliest, "latest": self.latest},
            "revert_at": self.revert_at,
            "targets": sorted(self.targets),
            "required": [p.to_dict() for p in self.required],
            "submitted_at": self.submitted_at,
        }
        if self.reverts is not None:
            d["reverts"] = self.reverts
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Commission":
        if not isinstance(d, Mapping):
            raise StructuralError(f"commission document must be an object, got {type(d).__name__}")
        try:
            window = d["window"]
            return cls(
                commission_id=d["commission_id"],
                source=d.get("source", "operator"),
                importance=d.get("importance", 0),
                earliest=int(window["earliest"]),
                latest=int(window["latest"]),
                targets=tuple(sorted(set(d["targets"]))),
                required=tuple(PostCondition.from_dict(p) for p in d.get("required", [])),
                revert_at=d.get("revert_at"),
                submitted_at=d.get("submitted_at"),
                reverts=d.get("reverts"),
            )
        except KeyError as exc:
            raise StructuralError(f"commission document lacks {exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            raise StructuralError(f"malformed commission document: {exc}") from None


@dataclass
class Transition:
    tick: int
    seq: int
    status: str
    note: str = ""

    def to_dict(self) -> dict:
        return {"tick": self.tick, "seq": self.seq, "status": self.status, "note": self.note}


@dataclass
class CommissionRecord:
    commission: Commission
    status: str = SUBMITTED
    log: list[Transition] = field(default_factory=list)
    devices: tuple[str, ...] = ()
    outcomes: dict[str, str] = field(default_factory=dict)  # device -> pending|dispatched|success|failed|expired
    packages: dict[str, str] = field(default_factory=dict)
    snapshots: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    revert_id: str | None = None
    paid: bool = False

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL

    def to_dict(self) -> dict:
        return {
            "commission": self.commission.to_dict(),
            "status": self.status,
            "log": [t.to_dict() for t in self.log],
            "devices": list(self.devices),
            "outcomes": dict(sorted(self.outcomes.items())),
            "packages": dict(sorted(self.packages.items())),
            "snapshots": dict(sorted(self.snapshots.items())),
            "notes": list(self.notes),
            "revert_id": self.revert_id,
        }


class RequirementsInterface:
    """Accepts commissions from internal and external sources and owns their lifecycle.

    ``on_accept`` is called with each accepted record (the scheduler enqueues it).
    """

    def __init__(self, registry: DeviceRegistry, on_accept: Callable[[CommissionRecord], None] | None = None,
                 revert_window: int = DEFAULT_REVERT_WINDOW):
        self.registry = registry
        self.on_accept = on_accept
        self.revert_window = revert_window
        self.records: dict[str, CommissionRecord] = {}
        self._seq = 0
        self.listeners: list[Callable[[CommissionRecord, Transition], None]] = []

    # -- intake ---------------------------------------------------------

    def submit(self, c: Commission, now: int) -> str:
        if c.commission_id in self.records:
            raise RegistrationConflict(f"commission {c.commission_id} already submitted")
        c = replace(c, submitted_at=now, required=tuple(self._normalise(p) for p in c.required))
        record = CommissionRecord(c)
        self.records[c.commission_id] = record
        self._log(record, SUBMITTED, now, f"source={c.source}")
        if c.latest < now:
            self._finish(record, EXPIRED, now, f"window closed at {c.latest}")
            raise CommissionRejected("expired", f"{c.commission_id}: window closed at {c.latest} before tick {now}")
        if not c.required:
            self._finish(record, REJECTED, now, "empty-required")
            raise CommissionRejected("empty-required", f"{c.commission_id}: no post-conditions")
        try:
            self._check_postconditions(c)
        except CommissionRejected as exc:
            self._finish(record, REJECTED, now, exc.reason)
            raise
        try:
            record.devices = tuple(sorted(self.resolve_targets(c)))
        except UnresolvedTargetError as exc:
            self._finish(record, REJECTED, now, f"unresolved-target {','.join(exc.offenders)}")
            raise CommissionRejected("unresolved-target", str(exc)) from exc
        record.outcomes = {d: "pending" for d in record.devices}
        if self.on_accept is not None:
            self.on_accept(record)
        return c.commission_id

    def resolve_targets(self, c: Commission) -> set[str]:
        devices: set[str] = set()
        offenders = []
        for name in c.targets:
            if name in self.registry:
                devices.add(name)
            elif name in self.registry.catalog:
                devices |= self.registry.catalog.get(name).member_devices
            else:
                offenders.append(name)
        if offenders:
            raise UnresolvedTargetError(offenders)
        return devices

    def _normalise(self, p: PostCondition) -> PostCondition:
        if p.kind != "set-value":
            return p
        try:
            return replace(p, path=self.registry.ofm.resolve_path(p.path))
        except StructuralError:
            return p

    def _check_postconditions(self, c: Commission) -> None:
        ofm = self.registry.ofm
        for p in c.required:
            if p.kind == "set-value":
                vp = ofm.variation_point(p.path)
                if vp is None or not vp.configurable:
                    what = "unknown" if vp is None else ("invariant" if vp.invariant_flag else vp.access)
                    raise CommissionRejected("not-configurable", f"{c.commission_id}: {p.path} is {what}")
            elif not 0 <= p.min_level <= MAX_SERVICE_LEVEL:
                raise CommissionRejected("bad-level", f"{c.commission_id}: level {p.min_level} outside 0..10")

    # -- lifecycle ------------------------------------------------------

    def get(self, commission_id: str) -> CommissionRecord:
        try:
            return self.records[commission_id]
        except KeyError:
            raise NotFoundError(f"unknown commission {commission_id}") from None

    def status(self, commission_id: str) -> str:
        return self.get(commission_id).status

    def advance_to(self, commission_id: str, status: str, now: int, note: str = "") -> bool:
        """Move forward along submitted→scheduled→building→shipping, skipping if already there."""
        record = self.get(commission_id)
        if record.terminal:
            return False
        if _FORWARD.index(status) <= _FORWARD.index(record.status):
            return False
        while record.status != status:
            nxt = _FORWARD[_FORWARD.index(record.status) + 1]
            self._log(record, nxt, now, note if nxt == status else "")
        return True

    def finish(self, commission_id: str, status: str, now: int, note: str = "") -> bool:
        record = self.get(commission_id)
        if record.status == status or (record.terminal and status != REVERTED):
            return False
        if status == COMPLETED:
            self.advance_to(commission_id, SHIPPING, now)
        self._finish(record, status, now, note)
        return True

    def _finish(self, record: CommissionRecord, status: str, now: int, note: str) -> None:
        if status not in TRANSITIONS[record.status]:
            raise LifecycleError(f"{record.commission.commission_id}: {record.status} -> {status} not allowed")
        self._log(record, status, now, note)

    def _log(self, record: CommissionRecord, status: str, now: int, note: str) -> None:
        if record.log:
            if status not in TRANSITIONS[record.status]:
                raise LifecycleError(f"{record.commission.commission_id}: {record.status} -> {status} not allowed")
            if now < record.log[-1].tick:
                raise LifecycleError(f"{record.commission.commission_id}: transition at {now} precedes log")
        self._seq += 1
        t = Transition(now, self._seq, status, note)
        record.log.append(t)
        record.status = status
        for listener in self.listeners:
            listener(record, t)

    def note(self, commission_id: str, text: str) -> None:
        self.get(commission_id).notes.append(text)

    def open_records(self) -> list[CommissionRecord]:
        return [self.records[k] for k in sorted(self.records) if not self.records[k].terminal]

    # -- reverts --------------------------------------------------------

    def emit_revert(self, c: Commission, now: int, snapshot_lookup: Callable[[str], Mapping[str, Any]]) -> Commission | None:
        """Build the restore-to-snapshot commission for a completed ``c``.

        ``snapshot_lookup(snapshot_id)`` returns the stored values or raises
        NotFoundError.  Returns None before ``revert_at`` or when no revert
        was requested.
        """
        record = self.get(c.commission_id)
        if c.revert_at is None or now < c.revert_at or record.revert_id is not None:
            return None
        if record.status != COMPLETED:
            raise LifecycleError(f"{c.commission_id} is {record.status}, only completed commissions revert")
        revert = self.revert_for(record, record.devices, now, snapshot_lookup)
        record.revert_id = revert.commission_id
        return revert

    def revert_for(self, record: CommissionRecord, devices: Iterable[str], now: int,
                   snapshot_lookup: Callable[[str], Mapping[str, Any]]) -> Commission:
        """Restore-to-snapshot commission covering ``devices`` of ``record``."""
        c = record.commission
        devices = tuple(sorted(devices))
        required = []
        for device in devices:
            snap_id = record.snapshots.get(device)
            try:
                if snap_id is None:
                    raise NotFoundError(f"no snapshot recorded for {device}")
                values = snapshot_lookup(snap_id)
            except NotFoundError as exc:
                msg = f"revert-impossible: {exc}"
                record.notes.append(msg)
                record.revert_id = ""
                raise RevertImpossible(msg) from exc
            required.extend(PostCondition.set_value(path, values[path], device) for path in sorted(values))
        revert = Commission(
            commission_id=f"{c.commission_id}~revert",
            source=SYSTEM_SOURCE,
            importance=c.importance,
            earliest=now,
            latest=now + self.revert_window,
            targets=devices,
            required=tuple(required),
            reverts=c.commission_id,
        )
        record.revert_id = revert.commission_id
        return revert


def load_commission(doc: Mapping[str, Any]) -> Commission:
    return Commission.from_dict(doc)


def targets_of(records: Iterable[CommissionRecord], device_id: str) -> list[str]:
    return [r.commission.commission_id for r in records if device_id in r.devices]
