"""Commission scheduling under static-priority, market or FIFO policy, plus the
business-scenario safety gate every dispatch must pass.

Static priority is run as the market policy with unlimited currency: one
selection path, balance checks switched off.  Under the market policy a
commission's ``importance`` is its bid; the winner pays at dispatch
(first-price, losers keep their currency) and a commission spanning several
devices pays once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .commissioning import SYSTEM_SOURCE, Commission, CommissionRecord
from .errors import ConfigError, EvaluationError, NotFoundError, ProjectionError
from .model import DeviceState, project_state
from .registry import DeviceRegistry

logger = logging.getLogger(__name__)

POLICIES = ("static", "market", "fifo")


@dataclass(frozen=True)
class Policy:
    kind: str = "static"
    renewal_period: int = 10
    renewal_amount: int = 10

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise ConfigError(f"unknown policy {self.kind!r}; choose from {', '.join(POLICIES)}")
        if self.kind == "market" and (self.renewal_period <= 0 or self.renewal_amount < 0):
            raise ConfigError("market policy needs renewal_period > 0 and renewal_amount >= 0")


@dataclass
class Participant:
    participant_id: str
    balance: int = 0
    gravity_weight: Fraction = Fraction(1)

    def __post_init__(self):
        self.gravity_weight = Fraction(self.gravity_weight)
        if self.gravity_weight <= 0:
            raise ConfigError(f"{self.participant_id}: gravity weight must be positive")
        if self.balance < 0:
            raise ConfigError(f"{self.participant_id}: negative balance")


@dataclass(frozen=True)
class QueueEntry:
    commission_id: str
    device_id: str
    source: str
    importance: int
    submitted_at: int
    earliest: int
    latest: int


@dataclass(frozen=True)
class GateDecision:
    allowed: bool
    reason: str = ""
    detail: str = ""
    projected: DeviceState | None = None

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = GateDecision(True)


def deny(reason: str, detail: str = "") -> GateDecision:
    return GateDecision(False, reason, detail)


@dataclass
class MarketLedger:
    initial: int = 0
    renewals: int = 0
    spent: int = 0
    history: list[tuple[int, str, int]] = field(default_factory=list)  # (tick, participant, +renewal / -bid)


def commission_changes(c: Commission, device_id: str) -> tuple[dict, dict]:
    """Value changes and service minima a commission requires of one device."""
    changes: dict = {}
    services: dict = {}
    for p in c.required:
        if not p.applies_to(device_id):
            continue
        if p.kind == "set-value":
            changes[p.path] = p.value
        else:
            services[p.service] = max(services.get(p.service, 0), p.min_level)
    return changes, services


class Scheduler:
    def __init__(self, policy: Policy, registry: DeviceRegistry, participants: Iterable[Participant] = ()):
        self.policy = policy
        self.registry = registry
        self.participants: dict[str, Participant] = {p.participant_id: p for p in participants}
        self.ledger = MarketLedger(initial=sum(p.balance for p in self.participants.values()))
        self._queues: dict[str, list[QueueEntry]] = {}
        self._paid: set[str] = set()
        self._busy: dict[str, str] = {}  # device -> commission id in building/shipping
        self._locked_scenarios: dict[str, str] = {}  # scenario -> device holding it

    # -- queue ----------------------------------------------------------

    def enqueue(self, record: CommissionRecord) -> None:
        c = record.commission
        for device in record.devices:
            queue = self._queues.setdefault(device, [])
            if any(e.commission_id == c.commission_id for e in queue):
                continue
            queue.append(QueueEntry(c.commission_id, device, c.source, c.importance,
                                    c.submitted_at or 0, c.earliest, c.latest))

    def pending(self, device_id: str | None = None) -> tuple[QueueEntry, ...]:
        if device_id is not None:
            return tuple(self._queues.get(device_id, ()))
        return tuple(e for d in sorted(self._queues) for e in self._queues[d])

    def remove(self, commission_id: str, device_id: str | None = None) -> None:
        for device, queue in self._queues.items():
            if device_id is None or device == device_id:
                queue[:] = [e for e in queue if e.commission_id != commission_id]

    def expire(self, now: int) -> list[QueueEntry]:
        """Drop and return entries whose window closed before ``now``."""
        gone = []
        for device in sorted(self._queues):
            queue = self._queues[device]
            gone.extend(e for e in queue if e.latest < now)
            queue[:] = [e for e in queue if e.latest >= now]
        return gone

    # -- selection ------------------------------------------------------

    def _pays(self, entry: QueueEntry) -> bool:
        return (self.policy.kind == "market" and entry.source != SYSTEM_SOURCE
                and entry.commission_id not in self._paid)

    def _affordable(self, entry: QueueEntry) -> bool:
        if not self._pays(entry):
            return True
        p = self.participants.get(entry.source)
        return entry.importance <= (p.balance if p is not None else 0)

    def sort_key(self, entry: QueueEntry) -> tuple:
        if self.policy.kind == "fifo":
            return (entry.submitted_at, entry.commission_id)
        return (-entry.importance, entry.submitted_at, entry.commission_id)

    def select_next(self, device_id: str, now: int, exclude: Iterable[str] = ()) -> str | None:
        excluded = set(exclude)
        eligible = [
            e for e in self._queues.get(device_id, ())
            if e.earliest <= now <= e.latest and e.commission_id not in excluded and self._affordable(e)
        ]
        if not eligible:
            return None
        return min(eligible, key=self.sort_key).commission_id

    def dispatch(self, commission_id: str, device_id: str, now: int) -> int:
        """Take the entry off the device queue and settle its bid; returns the amount charged."""
        queue = self._queues.get(device_id, [])
        entry = next((e for e in queue if e.commission_id == commission_id), None)
        if entry is None:
            raise NotFoundError(f"{commission_id} is not queued for {device_id}")
        charged = 0
        if self._pays(entry):
            p = self.participants.get(entry.source)
            if p is None or p.balance < entry.importance:
                raise ConfigError(f"{entry.source} cannot cover bid {entry.importance}")
            p.balance -= entry.importance
            charged = entry.importance
            self.ledger.spent += charged
            self.ledger.history.append((now, p.participant_id, -charged))
        if self.policy.kind == "market":
            self._paid.add(commission_id)
        queue.remove(entry)
        return charged

    # -- market ---------------------------------------------------------

    def renew_currency(self, now: int) -> dict[str, int]:
        if self.policy.kind != "market":
            logger.warning("currency renewal requested under %s policy; ignored", self.policy.kind)
            return {}
        if now % self.policy.renewal_period != 0:
            logger.warning("tick %d is not a renewal tick (period %d); ignored", now, self.policy.renewal_period)
            return {}
        delta = {}
        for pid in sorted(self.participants):
            p = self.participants[pid]
            amount = int(self.policy.renewal_amount * p.gravity_weight)  # floor; weights are positive
            p.balance += amount
            self.ledger.renewals += amount
            self.ledger.history.append((now, pid, amount))
            delta[pid] = amount
        return delta

    def balances(self) -> dict[str, int]:
        return {pid: self.participants[pid].balance for pid in sorted(self.participants)}

    def conservation_holds(self) -> bool:
        return sum(self.balances().values()) + self.ledger.spent == self.ledger.initial + self.ledger.renewals

    # -- serialization of in-flight work --------------------------------

    def can_dispatch(self, device_id: str) -> bool:
        if device_id in self._busy:
            return False
        return all(self._locked_scenarios.get(s.scenario_id) in (None, device_id)
                   for s in self.registry.scenarios_for(device_id))

    def lock(self, device_id: str, commission_id: str) -> None:
        self._busy[device_id] = commission_id
        for s in self.registry.scenarios_for(device_id):
            self._locked_scenarios[s.scenario_id] = device_id

    def release(self, device_id: str) -> None:
        self._busy.pop(device_id, None)
        for sid in [s for s, d in self._locked_scenarios.items() if d == device_id]:
            del self._locked_scenarios[sid]

    def busy(self) -> dict[str, str]:
        return dict(self._busy)

    # -- safety ---------------------------------------------------------

    def safety_gate(self, c: Commission, device_id: str, now: int) -> GateDecision:
        view = self.registry.get_state(device_id, now)
        if not view.fresh:
            return deny("stale-state", f"{device_id} last reported at {view.state.last_updated}")
        changes, services = commission_changes(c, device_id)
        try:
            projected = project_state(view.state, changes, self.registry.ofm, services)
        except ProjectionError as exc:
            return deny("model-error", str(exc))
        for scenario in self.registry.scenarios_for(device_id):
            states = self.registry.states(scenario.member_devices)
            states[device_id] = projected
            try:
                failed = scenario.violated(states)
            except EvaluationError as exc:
                return deny("model-error", f"{scenario.scenario_id}: {exc}")
            if failed:
                return deny("constraint", ",".join(failed))
        return GateDecision(True, projected=projected)


def participants_from_config(weights: Mapping[str, object], balances: Mapping[str, int] | None = None) -> list[Participant]:
    balances = balances or {}
    return [Participant(pid, int(balances.get(pid, 0)), Fraction(str(w))) for pid, w in sorted(weights.items())]
