"""Rollout of built packages: pull, push and peer-seeding strategies.

Time is discrete.  Within one call to :meth:`Rollout.advance` every transfer
is instantaneous, and a device that receives a package during a tick can only
seed from the next tick on, so seeding holders double per tick.

Under the seed strategy holders relay the rollout bundle, so a seeder can hand
any pending device its own package; one package is one transfer unit.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .commissioning import COMPLETED, EXPIRED, REJECTED, RequirementsInterface
from .errors import ConfigError, PlanError
from .package import ConfigurationPackage

logger = logging.getLogger(__name__)

ORIGIN = "origin"
STRATEGIES = ("pull", "push", "seed")
DEFAULT_RETRIES = 3

PENDING = "pending"
DEFERRED = "deferred"
IN_TRANSIT = "in-transit"
DELIVERED = "delivered"
EXECUTED = "executed"
FAILED = "failed"
EXPIRED_STATUS = "expired"
_WAITING = (PENDING, DEFERRED, IN_TRANSIT)
_CRIT_RANK = {"critical": 0, "normal": 1, "low": 2}


@dataclass(frozen=True)
class Strategy:
    kind: str = "push"
    poll_period: int = 5
    origin_fanout: int = 1
    seeder_fanout: int = 1
    min_seed_charge_pct: float = 50
    min_seed_cores: int = 2

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; choose from {', '.join(STRATEGIES)}")
        if self.origin_fanout < 1 or self.seeder_fanout < 1 or self.poll_period < 1:
            raise ConfigError("fanouts and poll period must be >= 1")


@dataclass(frozen=True)
class NodeInfo:
    """What the rollout engine needs to know about one device right now."""

    device_id: str
    online: bool = True
    charge_pct: float = 100
    supply: str = "mains"
    cores: int = 1
    agent: bool = True
    poll_phase: int | None = None


@dataclass(frozen=True)
class Transfer:
    tick: int
    sender: str
    receiver: str
    package_id: str
    size: int


@dataclass(frozen=True)
class DeliveryReceipt:
    device_id: str
    package_id: str
    delivered_at: int
    executed_at: int | None = None
    result: str = ""  # "" until executed, then success | failure
    detail: str = ""

    @property
    def success(self) -> bool:
        return self.result == "success"

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "package_id": self.package_id,
            "delivered_at": self.delivered_at,
            "executed_at": self.executed_at,
            "result": self.result,
            "detail": self.detail,
        }


def poll_phase(device_id: str, period: int) -> int:
    """Stable per-device poll offset in ``[0, period)``."""
    return int.from_bytes(hashlib.sha256(device_id.encode()).digest()[:8], "big") % period


def select_seeders(nodes: Mapping[str, NodeInfo], holders: Iterable[str], strategy: Strategy) -> set[str]:
    out = set()
    for d in holders:
        n = nodes.get(d)
        if n is None or not n.online or not n.agent:
            continue
        powered = n.supply == "mains" or n.charge_pct >= strategy.min_seed_charge_pct
        if powered and n.cores >= strategy.min_seed_cores:
            out.add(d)
    return out


@dataclass
class Rollout:
    rollout_id: str
    strategy: Strategy
    created_at: int
    packages: dict[str, ConfigurationPackage]  # device -> package
    status: dict[str, str]
    retry_budget: int = DEFAULT_RETRIES
    transfers: list[Transfer] = field(default_factory=list)
    receipts: list[DeliveryReceipt] = field(default_factory=list)
    retries: dict[str, int] = field(default_factory=dict)
    delivered_at: dict[str, int] = field(default_factory=dict)
    expired_now: list[str] = field(default_factory=list)

    @property
    def assignments(self) -> dict[str, str]:
        return {d: p.package_id for d, p in sorted(self.packages.items())}

    @property
    def holders(self) -> set[str]:
        return {d for d, s in self.status.items() if s in (DELIVERED, EXECUTED, FAILED)}

    def pending(self) -> list[str]:
        return sorted(d for d, s in self.status.items() if s in _WAITING)

    @property
    def finished(self) -> bool:
        return all(s in (EXECUTED, FAILED, EXPIRED_STATUS) for s in self.status.values())

    def origin_load(self) -> dict[int, int]:
        load: dict[int, int] = {}
        for t in self.transfers:
            if t.sender == ORIGIN:
                load[t.tick] = load.get(t.tick, 0) + 1
        return load

    def _order(self, devices: Iterable[str]) -> list[str]:
        def key(d):
            md = self.packages[d].metadata
            return (_CRIT_RANK.get(md.criticality, 1), md.latest_shipping_time, d)

        return sorted(devices, key=key)

    def _refresh(self, now: int, nodes: Mapping[str, NodeInfo]) -> list[str]:
        newly_expired = []
        for d in sorted(self.status):
            if self.status[d] not in _WAITING:
                continue
            md = self.packages[d].metadata
            if now > md.latest_shipping_time:
                self.status[d] = EXPIRED_STATUS
                newly_expired.append(d)
            elif nodes[d].charge_pct < md.required_charge_pct:
                self.status[d] = DEFERRED
            else:
                self.status[d] = PENDING
        return newly_expired

    def advance(self, now: int, nodes: Mapping[str, NodeInfo]) -> list[DeliveryReceipt]:
        """Run one tick of transfers; returns a receipt per delivery made."""
        self.expired_now = self._refresh(now, nodes)
        ready = [d for d in self._order(self.pending()) if self.status[d] == PENDING and nodes[d].online]
        kind = self.strategy.kind
        deliveries: list[tuple[str, str]] = []  # (sender, receiver)

        def polls(d):
            period = self.strategy.poll_period
            phase = nodes[d].poll_phase if nodes[d].poll_phase is not None else poll_phase(d, period)
            return (now - phase) % period == 0

        # pull, and agent-less devices under any strategy: device-initiated, origin serves all
        pulled = [d for d in ready if (kind == "pull" or not nodes[d].agent) and polls(d)]
        deliveries.extend((ORIGIN, d) for d in pulled)
        queue = [d for d in ready if kind != "pull" and nodes[d].agent]
        if kind == "push":
            deliveries.extend((ORIGIN, d) for d in queue[: self.strategy.origin_fanout])
        elif kind == "seed":
            senders = [(ORIGIN, self.strategy.origin_fanout)]
            senders += [(s, self.strategy.seeder_fanout) for s in sorted(select_seeders(nodes, self.holders, self.strategy))]
            it = iter(queue)
            for sender, fanout in senders:
                for _ in range(fanout):
                    receiver = next(it, None)
                    if receiver is None:
                        break
                    deliveries.append((sender, receiver))
        receipts = []
        for sender, receiver in deliveries:
            pkg = self.packages[receiver]
            self.transfers.append(Transfer(now, sender, receiver, pkg.package_id, len(pkg.to_bytes())))
            self.status[receiver] = DELIVERED
            self.delivered_at[receiver] = now
            r = DeliveryReceipt(receiver, pkg.package_id, now)
            self.receipts.append(r)
            receipts.append(r)
        return receipts

    def awaiting_execution(self, now: int) -> list[str]:
        """Delivered devices whose package arrived on an earlier tick."""
        return sorted(d for d, s in self.status.items() if s == DELIVERED and self.delivered_at[d] < now)

    def record_execution(self, device_id: str, now: int, ok: bool, detail: str = "") -> DeliveryReceipt | None:
        """Register an execution attempt; returns a final receipt, or None while retries remain."""
        if ok:
            self.status[device_id] = EXECUTED
        else:
            self.retries[device_id] = self.retries.get(device_id, 0) + 1
            if self.retries[device_id] < self.retry_budget:
                return None
            self.status[device_id] = FAILED
        r = DeliveryReceipt(device_id, self.packages[device_id].package_id, self.delivered_at[device_id], now,
                            "success" if ok else "failure", detail)
        self.receipts.append(r)
        return r

    def summary(self) -> dict:
        return {
            "rollout_id": self.rollout_id,
            "strategy": self.strategy.kind,
            "created_at": self.created_at,
            "assignments": self.assignments,
            "status": dict(sorted(self.status.items())),
            "transfers": len(self.transfers),
            "origin_transfers": sum(1 for t in self.transfers if t.sender == ORIGIN),
        }


def plan_rollout(packages: Iterable[ConfigurationPackage], strategy: Strategy, now: int,
                 nodes: Mapping[str, NodeInfo], rollout_id: str = "", retry_budget: int = DEFAULT_RETRIES) -> Rollout:
    by_device: dict[str, ConfigurationPackage] = {}
    for pkg in packages:
        if not pkg.verify_checksum():
            raise PlanError(f"package {pkg.package_id} fails its checksum")
        if pkg.device_id not in nodes:
            raise PlanError(f"package {pkg.package_id} targets unknown device {pkg.device_id}")
        if pkg.device_id in by_device:
            raise PlanError(f"two packages for {pkg.device_id} in one rollout")
        by_device[pkg.device_id] = pkg
    status = {}
    for d, pkg in by_device.items():
        md = pkg.metadata
        if now > md.latest_shipping_time:
            status[d] = EXPIRED_STATUS
        elif nodes[d].charge_pct < md.required_charge_pct:
            status[d] = DEFERRED
        else:
            status[d] = PENDING
    return Rollout(rollout_id or f"ro-{now}", strategy, now, by_device, status, retry_budget)


def settle(intake: RequirementsInterface, commission_id: str, now: int) -> str | None:
    """Close a commission once no target device is still open; returns the new status."""
    record = intake.get(commission_id)
    if record.terminal:
        return None
    outcomes = record.outcomes
    if any(o in ("pending", "dispatched") for o in outcomes.values()):
        return None
    values = set(outcomes.values())
    if values == {"success"}:
        status, note = COMPLETED, "all targets confirmed"
    elif "failed" in values:
        failed = sorted(d for d, o in outcomes.items() if o == "failed")
        status, note = REJECTED, f"failed on {','.join(failed)}"
    elif "success" in values:
        detail = ",".join(f"{d}={o}" for d, o in sorted(outcomes.items()))
        status, note = REJECTED, f"partial {detail}"
    else:
        status, note = EXPIRED, "no target reached in time"
    intake.finish(commission_id, status, now, note)
    return status


def complete(intake: RequirementsInterface, receipt: DeliveryReceipt, now: int,
             package_index: Mapping[str, str]) -> str | None:
    """Feed an execution receipt back to the requirements interface.

    ``package_index`` maps package ids to commission ids.  Unknown packages
    are logged and dropped; repeated receipts change nothing.
    """
    cid = package_index.get(receipt.package_id)
    if cid is None:
        logger.warning("receipt for unknown package %s dropped", receipt.package_id)
        return None
    record = intake.get(cid)
    if record.terminal or record.outcomes.get(receipt.device_id) in ("success", "failed"):
        return None
    record.outcomes[receipt.device_id] = "success" if receipt.success else "failed"
    return settle(intake, cid, now)
