"""Discrete-time fleet simulator and orchestration loop.

Each tick runs eight phases in a fixed order:

1. scheduled faults and battery drain
2. currency renewal (market policy)
3. commission intake, agent rules, queue expiry
4. select, safety gate, gather, check and build
5. rollout advance
6. agents execute delivered packages
7. state reports due this tick
8. revert emission

Every action appends one event.  After each tick every scenario constraint is
re-evaluated over registry states; a violation aborts the run.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from . import canonical
from .commissioning import (
    COMPLETED,
    REJECTED,
    SCHEDULED,
    BUILDING,
    SHIPPING,
    Commission,
    RequirementsInterface,
)
from .components import TransformationComponent, default_service_component, default_set_component
from .constraints import BusinessScenario, Constraint, evaluate
from .errors import (
    BuildFailed,
    CommissionRejected,
    ConfabError,
    ConfigError,
    CorruptionError,
    GatherFailed,
    RevertImpossible,
    SafetyViolation,
)
from .factory import SERVICE_TARGET_PREFIX, Factory, FactoryConfig
from .model import (
    DeviceDescription,
    DeviceState,
    OrganisationalFeatureModel,
    initial_state,
    project_state,
    same_value,
)
from .package import DEFAULT_SECRET, ConfigurationPackage, from_bytes
from .registry import DEFAULT_STALENESS, DeviceRegistry, ScenarioCatalog
from .scheduler import Participant, Policy, Scheduler
from .shipping import DEFAULT_RETRIES, NodeInfo, Rollout, Strategy, complete, plan_rollout, settle
from .stores import ArtifactStore, ConfigurationStore, open_backend

logger = logging.getLogger(__name__)

FAULT_KINDS = ("offline", "drop-message", "exec-fail", "busy", "tamper", "recharge")


@dataclass(frozen=True)
class Fault:
    device: str
    at: int
    kind: str
    duration: int = 1
    amount: float = 100
    probability: float = 1.0  # chance, drawn from the world's seeded RNG, of firing on each tick of the window

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}")
        if not 0 < self.probability <= 1:
            raise ConfigError(f"fault probability must be in (0, 1], got {self.probability}")

    def active(self, now: int) -> bool:
        return self.at <= now < self.at + self.duration

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Fault":
        return cls(d["device"], int(d["at"]), d["kind"], int(d.get("duration", 1)), d.get("amount", 100),
                   float(d.get("probability", 1.0)))


@dataclass(frozen=True)
class PowerModel:
    idle_drain_pct_per_tick: float = 0
    exec_drain_pct: float = 0
    transfer_drain_pct: float = 0


@dataclass(frozen=True)
class AgentRule:
    """Internal requirement source: submit ``commission`` when ``when`` starts to hold."""

    when: Constraint
    commission: Mapping[str, Any]
    window: int = 50


@dataclass
class SimDevice:
    description: DeviceDescription
    state: DeviceState  # ground truth on the device
    report_period: int = 5
    report_phase: int = 0
    power: PowerModel = field(default_factory=PowerModel)
    faults: list[Fault] = field(default_factory=list)
    agent: bool = True
    rules: list[AgentRule] = field(default_factory=list)
    rule_armed: list[bool] = field(default_factory=list)
    inbox: dict[str, bytes] = field(default_factory=dict)  # package id -> delivered bytes
    awaiting_report: int | None = None  # tick of an execution the registry has not seen yet
    rolled: tuple[int, frozenset] | None = None  # (tick, fault kinds that fired) set by the world

    def roll_faults(self, now: int, rng: random.Random) -> list[Fault]:
        fired = [f for f in self.faults if f.active(now) and (f.probability >= 1 or rng.random() < f.probability)]
        self.rolled = (now, frozenset(f.kind for f in fired))
        return fired

    @property
    def device_id(self) -> str:
        return self.description.device_id

    @property
    def supply(self) -> str:
        return self.description.get("capabilities/power/supply")

    @property
    def cores(self) -> int:
        return self.description.get("capabilities/computational/cores")

    def fault_active(self, kind: str, now: int) -> bool:
        if self.rolled is not None and self.rolled[0] == now:
            return kind in self.rolled[1]
        return any(f.kind == kind and f.active(now) for f in self.faults)

    def drain(self, pct: float) -> None:
        if self.supply == "mains" or pct <= 0:
            return
        self.state = replace(self.state, charge_pct=max(0, min(100, self.state.charge_pct - pct)))

    def node(self) -> NodeInfo:
        return NodeInfo(self.device_id, self.state.online, self.state.charge_pct, self.supply, self.cores, self.agent)


@dataclass
class SimClock:
    tick: int = 0
    seed: int = 0

    def __post_init__(self):
        self.rng = random.Random(self.seed)


def execute_package(device: SimDevice, data: bytes, ofm: OrganisationalFeatureModel, now: int,
                    secret: bytes = DEFAULT_SECRET) -> tuple[bool, str]:
    """Apply a delivered package on the device agent.  All-or-nothing."""
    try:
        pkg = from_bytes(data)
    except CorruptionError as exc:
        return False, f"integrity: {exc}"
    if not pkg.verify_mac(secret):
        return False, "integrity: bad mac"
    if pkg.device_id != device.device_id:
        return False, "integrity: package addressed to another device"
    if device.fault_active("exec-fail", now):
        device.drain(device.power.exec_drain_pct)
        return False, "injected"
    values = dict(device.state.current_values)
    services = dict(device.state.provided_services)
    changed: dict[str, Any] = {}
    for ins in pkg.artifact.instructions:
        if ins.op == "set":
            if ins.target not in values:
                return False, f"set on non-configurable {ins.target}"
            vp = ofm.variation_point(ins.target)
            if vp is not None and not vp.domain.contains(ins.value):
                return False, f"set {ins.target}={ins.value!r} outside {vp.domain.describe()}"
            values[ins.target] = ins.value
            changed[ins.target] = ins.value
        elif ins.op == "exec":
            parts = str(ins.target).split()
            if len(parts) == 4 and parts[:2] == ["service", "enable"]:
                services[parts[2]] = max(services.get(parts[2], 0), int(parts[3]))
            elif len(parts) == 3 and parts[:2] == ["service", "disable"]:
                services.pop(parts[2], None)
            else:
                return False, f"unsupported command {ins.target!r}"
    base = replace(device.state, provided_services=services)
    projected = project_state(base, changed, ofm)
    for ins in pkg.artifact.verifies():
        if ins.target.startswith(SERVICE_TARGET_PREFIX):
            ok = projected.service_level(ins.target[len(SERVICE_TARGET_PREFIX):]) >= ins.value
        else:
            ok = same_value(projected.current_values.get(ins.target), ins.value)
        if not ok:
            device.drain(device.power.exec_drain_pct)
            return False, f"verify failed: {ins}"
    device.state = projected
    device.drain(device.power.exec_drain_pct)
    return True, ""


@dataclass
class WorldConfig:
    staleness_threshold: int = DEFAULT_STALENESS
    retry_budget: int = DEFAULT_RETRIES
    revert_window: int = 50
    store_capacity: int = 256
    auto_revert_partial: bool = False
    audit: bool = True
    factory: FactoryConfig = field(default_factory=FactoryConfig)


class World:
    def __init__(self, ofm: OrganisationalFeatureModel, devices: Iterable[SimDevice],
                 scenarios: Iterable[BusinessScenario] = (), components: Iterable[TransformationComponent] = (),
                 policy: Policy | None = None, participants: Iterable[Participant] = (),
                 strategy: Strategy | None = None, config: WorldConfig | None = None, seed: int = 0,
                 store_dir: str | Path | None = None):
        self.config = config or WorldConfig()
        self.clock = SimClock(0, seed)
        self.ofm = ofm
        self.registry = DeviceRegistry(ofm, self.config.staleness_threshold, ScenarioCatalog())
        self.devices: dict[str, SimDevice] = {}
        for dev in sorted(devices, key=lambda d: d.device_id):
            self.registry.register_device(dev.description, dev.state, 0)
            dev.rule_armed = [True] * len(dev.rules)
            self.devices[dev.device_id] = dev
        for s in scenarios:
            self.registry.add_scenario(s)
        self.scheduler = Scheduler(policy or Policy(), self.registry, participants)
        self.intake = RequirementsInterface(self.registry, self.scheduler.enqueue, self.config.revert_window)
        backend_root = Path(store_dir) if store_dir is not None else None
        self.artifacts = ArtifactStore(open_backend(backend_root))
        for comp in components:
            self.artifacts.put_component(comp)
        self.configs = ConfigurationStore(self.artifacts.backend, self.config.store_capacity)
        self.factory = Factory(self.registry, self.intake, self.artifacts, self.configs, self.config.factory)
        self.strategy = strategy or Strategy()
        self.rollouts: list[Rollout] = []
        self.package_index: dict[str, str] = {}
        self.schedule: dict[int, list[Commission]] = {}
        self.events: list[dict] = []
        self._seq = 0
        self._phase = 0
        self.denials: dict[str, int] = {}
        self.intake.listeners.append(self._on_transition)

    # -- event log ------------------------------------------------------

    def emit(self, kind: str, /, **data) -> None:
        self._seq += 1
        self.events.append({"tick": self.clock.tick, "phase": self._phase, "seq": self._seq, "kind": kind,
                            "data": data})

    def _on_transition(self, record, t) -> None:
        self.emit("commission-status", commission=record.commission.commission_id, status=t.status, note=t.note)

    def event_lines(self) -> list[str]:
        return [canonical.dumps(e) for e in self.events]

    def write_log(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.event_lines()), encoding="utf-8", newline="\n")

    # -- inputs ---------------------------------------------------------

    def schedule_commission(self, at: int, c: Commission) -> None:
        self.schedule.setdefault(at, []).append(c)

    def submit(self, c: Commission, strict: bool = False) -> str | None:
        """Hand ``c`` to the requirements interface; ``strict`` re-raises rejections."""
        try:
            cid = self.intake.submit(c, self.clock.tick)
        except CommissionRejected as exc:
            self.emit("commission-rejected", commission=c.commission_id, reason=exc.reason)
            if strict:
                raise
            return None
        except ConfabError as exc:
            self.emit("commission-error", commission=c.commission_id, error=str(exc))
            if strict:
                raise
            return None
        self.emit("commission-accepted", commission=cid, devices=list(self.intake.get(cid).devices))
        return cid

    # -- main loop ------------------------------------------------------

    def run(self, ticks: int) -> list[dict]:
        for _ in range(ticks):
            self.step()
        return self.events

    def step(self) -> None:
        now = self.clock.tick
        self._phase = 1
        self._faults(now)
        self._phase = 2
        if self.scheduler.policy.kind == "market" and now % self.scheduler.policy.renewal_period == 0:
            delta = self.scheduler.renew_currency(now)
            if delta:
                self.emit("currency-renewed", delta=delta)
        self._phase = 3
        self._intake(now)
        self._phase = 4
        self._dispatch(now)
        self._phase = 5
        self._advance(now)
        self._phase = 6
        self._execute(now)
        self._phase = 7
        self._reports(now)
        self._phase = 8
        self._reverts(now)
        self._phase = 9
        if self.config.audit:
            self.audit(now)
        self.clock.tick += 1

    def _faults(self, now: int) -> None:
        for d in sorted(self.devices):
            dev = self.devices[d]
            dev.roll_faults(now, self.clock.rng)
            for f in dev.faults:
                if f.at == now:
                    self.emit("fault", device=d, kind=f.kind, duration=f.duration)
                    if f.kind == "recharge":
                        dev.state = replace(dev.state, charge_pct=min(100, dev.state.charge_pct + f.amount))
                elif f.at + f.duration == now and f.kind != "recharge":
                    self.emit("fault-cleared", device=d, kind=f.kind)
            online = not dev.fault_active("offline", now)
            if online != dev.state.online:
                dev.state = replace(dev.state, online=online)
            dev.drain(dev.power.idle_drain_pct_per_tick)

    def _intake(self, now: int) -> None:
        for c in self.schedule.pop(now, []):
            self.submit(c)
        for d in sorted(self.devices):
            dev = self.devices[d]
            for i, rule in enumerate(dev.rules):
                try:
                    holds = evaluate(rule.when.ast, {d: dev.state})
                except ConfabError:
                    holds = False
                if holds and dev.rule_armed[i]:
                    doc = dict(rule.commission)
                    doc.setdefault("commission_id", f"{d}-rule{i}-t{now}")
                    doc.setdefault("source", d)
                    doc.setdefault("targets", [d])
                    doc["window"] = {"earliest": now, "latest": now + rule.window}
                    self.emit("internal-requirement", device=d, rule=i)
                    self.submit(Commission.from_dict(doc))
                dev.rule_armed[i] = not holds
        for entry in self.scheduler.expire(now):
            record = self.intake.get(entry.commission_id)
            if record.outcomes.get(entry.device_id) == "pending":
                record.outcomes[entry.device_id] = "expired"
                self.emit("queue-expired", commission=entry.commission_id, device=entry.device_id)
                settle(self.intake, entry.commission_id, now)

    def _reject(self, cid: str, now: int, reason: str) -> None:
        self.scheduler.remove(cid)
        self.intake.finish(cid, REJECTED, now, reason)

    def _dispatch(self, now: int) -> None:
        built: list[ConfigurationPackage] = []
        for device in self.registry.device_ids():
            if not self.scheduler.can_dispatch(device):
                continue
            tried: set[str] = set()
            while True:
                cid = self.scheduler.select_next(device, now, tried)
                if cid is None:
                    break
                record = self.intake.get(cid)
                if record.terminal:
                    self.scheduler.remove(cid)
                    continue
                decision = self.scheduler.safety_gate(record.commission, device, now)
                if not decision:
                    tried.add(cid)
                    self.denials[cid] = self.denials.get(cid, 0) + 1
                    self.emit("gate-deny", commission=cid, device=device, reason=decision.reason,
                              detail=decision.detail)
                    continue
                try:
                    inputs = self.factory.gather_inputs(cid, device, now)
                except GatherFailed as exc:
                    self.emit("gather-failed", commission=cid, device=device, reason=exc.reason, detail=str(exc))
                    if exc.reason == "stale":
                        tried.add(cid)
                    else:
                        self._reject(cid, now, f"gather-failed({exc.reason})")
                    continue
                pre = self.factory.check_preconditions(inputs)
                if not pre:
                    self.emit("precondition-mismatch", commission=cid, device=device, reason=pre.reason,
                              details=list(pre.details))
                    if pre.reason == "offline":
                        tried.add(cid)
                    else:
                        self._reject(cid, now, f"mismatch({pre.reason})")
                    continue
                charged = self.scheduler.dispatch(cid, device, now)
                self.emit("dispatch", commission=cid, device=device, charged=charged, notes=list(pre.notes))
                self.intake.advance_to(cid, SCHEDULED, now)
                self.intake.advance_to(cid, BUILDING, now)
                try:
                    pkg = self.factory.build(inputs, now)
                    self.configs.store_package(pkg, now)
                except (BuildFailed, ConfabError) as exc:
                    self.emit("build-failed", commission=cid, device=device, error=str(exc))
                    self._reject(cid, now, f"build-failed({getattr(exc, 'reason', exc.category)})")
                    break
                record.packages[device] = pkg.package_id
                record.snapshots[device] = pkg.pre_snapshot_ref
                record.outcomes[device] = "dispatched"
                self.package_index[pkg.package_id] = cid
                self.scheduler.lock(device, cid)
                self.emit("built", commission=cid, device=device, package=pkg.package_id, checksum=pkg.checksum,
                          instructions=len(pkg.artifact.instructions))
                built.append(pkg)
                break
        if built:
            nodes = self.nodes()
            ro = plan_rollout(built, self.strategy, now, nodes, f"ro-{now:05d}", self.config.retry_budget)
            self.rollouts.append(ro)
            self.emit("rollout-planned", rollout=ro.rollout_id, strategy=self.strategy.kind,
                      assignments=ro.assignments, status=dict(sorted(ro.status.items())))
            for pkg in built:
                self.intake.advance_to(pkg.commission_id, SHIPPING, now)
            self._handle_expired(ro, [d for d, s in sorted(ro.status.items()) if s == "expired"], now)
        self.configs.evict(self._protected_packages())

    def _protected_packages(self) -> set[str]:
        out = set()
        for ro in self.rollouts:
            if not ro.finished:
                out.update(ro.assignments.values())
        return out

    def nodes(self) -> dict[str, NodeInfo]:
        return {d: dev.node() for d, dev in self.devices.items()}

    def _handle_expired(self, ro: Rollout, devices: list[str], now: int) -> None:
        for d in devices:
            cid = self.package_index[ro.packages[d].package_id]
            self.emit("shipping-expired", rollout=ro.rollout_id, device=d, commission=cid)
            self.scheduler.release(d)
            record = self.intake.get(cid)
            if record.outcomes.get(d) == "dispatched":
                record.outcomes[d] = "expired"
            self._after_settle(cid, settle(self.intake, cid, now), now)

    def _advance(self, now: int) -> None:
        nodes = self.nodes()
        for ro in self.rollouts:
            if ro.finished:
                continue
            receipts = ro.advance(now, nodes)
            self._handle_expired(ro, ro.expired_now, now)
            new = [t for t in ro.transfers if t.tick == now]
            for t in new:
                for party in (t.sender, t.receiver):
                    if party in self.devices:
                        self.devices[party].drain(self.devices[party].power.transfer_drain_pct)
                self.emit("transfer", rollout=ro.rollout_id, sender=t.sender, receiver=t.receiver,
                          package=t.package_id, bytes=t.size)
            for r in receipts:
                data = ro.packages[r.device_id].to_bytes()
                dev = self.devices[r.device_id]
                if dev.fault_active("tamper", now):
                    flip = len(data) // 2
                    data = data[:flip] + bytes([data[flip] ^ 0x01]) + data[flip + 1:]
                dev.inbox[r.package_id] = data

    def _execute(self, now: int) -> None:
        work = []
        for ro in self.rollouts:
            for d in ro.awaiting_execution(now):
                work.append((d, ro.packages[d].package_id, ro))
        for d, pid, ro in sorted(work, key=lambda w: (w[0], w[1])):
            dev = self.devices[d]
            if not dev.state.online:
                continue
            if dev.fault_active("busy", now) and not ro.packages[d].metadata.interrupt_allowed:
                self.emit("execution-deferred", device=d, package=pid, reason="busy")
                continue
            ok, detail = execute_package(dev, dev.inbox[pid], self.ofm, now, self.config.factory.secret)
            self.emit("executed", device=d, package=pid, ok=ok, detail=detail)
            receipt = ro.record_execution(d, now, ok, detail)
            if receipt is None:
                continue
            dev.inbox.pop(pid, None)
            cid = self.package_index[pid]
            self.emit("receipt", **receipt.to_dict())
            if ok:
                dev.awaiting_report = now
            else:
                self.scheduler.release(d)
            self._after_settle(cid, complete(self.intake, receipt, now, self.package_index), now)

    def _after_settle(self, cid: str, status: str | None, now: int) -> None:
        if status is None:
            return
        record = self.intake.get(cid)
        original = record.commission.reverts
        if status == COMPLETED and original is not None and self.intake.status(original) == COMPLETED:
            self.intake.finish(original, "reverted", now, f"restored by {cid}")
        if (status == REJECTED and self.config.auto_revert_partial and original is None
                and any(o == "success" for o in record.outcomes.values())):
            self._auto_revert(cid, now)

    def _auto_revert(self, cid: str, now: int) -> None:
        record = self.intake.get(cid)
        succeeded = tuple(sorted(d for d, o in record.outcomes.items() if o == "success"))
        try:
            revert = self.intake.revert_for(record, succeeded, now, self.configs.snapshot_values)
        except RevertImpossible as exc:
            self.emit("revert-impossible", commission=cid, error=str(exc))
            return
        self.emit("revert-emitted", commission=cid, revert=revert.commission_id, partial=True)
        self.submit(revert)

    def _reports(self, now: int) -> None:
        for d in sorted(self.devices):
            dev = self.devices[d]
            if not dev.state.online or (now - dev.report_phase) % dev.report_period != 0:
                continue
            if dev.fault_active("drop-message", now):
                self.emit("report-dropped", device=d)
                continue
            self.registry.update_state(d, replace(dev.state, last_updated=now))
            self.emit("state-report", device=d, charge_pct=dev.state.charge_pct)
            if dev.awaiting_report is not None and dev.awaiting_report <= now:
                dev.awaiting_report = None
                self.scheduler.release(d)

    def _reverts(self, now: int) -> None:
        for cid in sorted(self.intake.records):
            record = self.intake.records[cid]
            c = record.commission
            if record.status != COMPLETED or c.revert_at is None or now < c.revert_at or record.revert_id is not None:
                continue
            try:
                revert = self.intake.emit_revert(c, now, self.configs.snapshot_values)
            except RevertImpossible as exc:
                self.emit("revert-impossible", commission=cid, error=str(exc))
                continue
            if revert is not None:
                self.emit("revert-emitted", commission=cid, revert=revert.commission_id)
                self.submit(revert)

    def referenced_snapshots(self) -> set[str]:
        """Snapshots still needed: open commissions and completed ones awaiting revert."""
        out = set()
        for record in self.intake.records.values():
            waiting = record.status == COMPLETED and record.commission.revert_at is not None and record.revert_id is None
            if not record.terminal or waiting:
                out.update(record.snapshots.values())
        return out

    # -- audit ----------------------------------------------------------

    def audit(self, now: int) -> None:
        states = self.registry.states()
        for scenario in self.registry.catalog:
            failed = scenario.violated(states)
            if failed:
                self.emit("audit-violation", scenario=scenario.scenario_id, constraints=failed)
                raise SafetyViolation(f"tick {now}: scenario {scenario.scenario_id} violates {failed}",
                                      scenario=scenario.scenario_id, constraints=failed)

    # -- reporting ------------------------------------------------------

    def metrics_rows(self) -> list[tuple]:
        """``(tick, node, sent, bytes_sent, received, bytes_received)`` per tick and node."""
        acc: dict[tuple[int, str], list[int]] = {}
        for ro in self.rollouts:
            for t in ro.transfers:
                s = acc.setdefault((t.tick, t.sender), [0, 0, 0, 0])
                s[0] += 1
                s[1] += t.size
                r = acc.setdefault((t.tick, t.receiver), [0, 0, 0, 0])
                r[2] += 1
                r[3] += t.size
        return [(tick, node, *vals) for (tick, node), vals in sorted(acc.items())]

    def device_state(self, device_id: str) -> DeviceState:
        return self.devices[device_id].state


# --- building worlds from documents ---------------------------------------

def _resolve(base: Path | None, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() or base is None else base / p


def load_ofm(doc: Mapping[str, Any], base: Path | None = None) -> OrganisationalFeatureModel:
    if "ofm" in doc:
        return OrganisationalFeatureModel.from_dict(doc["ofm"])
    if "ofm_ref" in doc:
        return OrganisationalFeatureModel.from_dict(canonical.load_document(_resolve(base, doc["ofm_ref"])))
    raise ConfigError("fleet document needs ofm or ofm_ref")


def load_fleet(doc: Mapping[str, Any], base: Path | None = None):
    """Return ``(ofm, devices, scenarios)`` from a fleet bootstrap document."""
    ofm = load_ofm(doc, base)
    devices = []
    for entry in doc.get("devices", []):
        desc = DeviceDescription.from_dict(entry["description"])
        if "initial_state" in entry:
            state = DeviceState.from_dict({"device_id": desc.device_id, **entry["initial_state"]})
        else:
            state = initial_state(desc, ofm, entry.get("services", {}))
        sim = entry.get("sim", {})
        rules = [AgentRule(Constraint(r["when"]), r["commission"], int(r.get("window", 50)))
                 for r in sim.get("rules", [])]
        devices.append(SimDevice(
            description=desc,
            state=state,
            report_period=int(sim.get("report_period", 5)),
            report_phase=int(sim.get("report_phase", 0)),
            power=PowerModel(**sim.get("power", {})),
            agent=bool(sim.get("agent", True)),
            rules=rules,
        ))
    scenarios = [BusinessScenario.from_dict(s) for s in doc.get("scenarios", [])]
    return ofm, devices, scenarios


def default_components(ofm: OrganisationalFeatureModel, devices: Iterable[SimDevice],
                       services: Iterable[str] = ()) -> list[TransformationComponent]:
    """One generic set/exec component per (subject, platform, OS) present in the fleet.

    Services covered are ``services`` plus every service a device already
    provides or the OFM binds to a variation point.
    """
    devices = list(devices)
    services = set(services) | {b.service for b in ofm.service_bindings}
    for d in devices:
        services.update(d.state.provided_services)
    combos = sorted({
        (ofm.device_class(d.description.class_id).platform, d.description.get("capabilities/os/platform"))
        for d in devices
    })
    out = []
    for platform, os_platform in combos:
        for path in ofm.configurable_paths():
            out.append(default_set_component(path, platform, os_platform))
        for svc in sorted(set(services)):
            out.append(default_service_component(svc, platform, os_platform))
    return out


def build_world(doc: Mapping[str, Any], base: Path | None = None, store_dir: str | Path | None = None,
                overrides: Mapping[str, Any] | None = None) -> World:
    """Assemble a world from a scenario run document."""
    doc = dict(doc)
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    fleet_doc = doc["fleet"]
    if isinstance(fleet_doc, str):
        path = _resolve(base, fleet_doc)
        fleet_doc, fleet_base = canonical.load_document(path), path.parent
    else:
        fleet_base = base
    ofm, devices, scenarios = load_fleet(fleet_doc, fleet_base)
    comps: list[TransformationComponent] = []
    if "components_dir" in doc:
        for p in sorted(_resolve(base, doc["components_dir"]).glob("*.json")):
            comps.append(TransformationComponent.from_dict(canonical.load_document(p)))
    comps.extend(TransformationComponent.from_dict(c) for c in doc.get("components", []))
    if doc.get("default_components"):
        svc = doc["default_components"] if isinstance(doc["default_components"], list) else []
        covered = {c.key.family for c in comps}
        comps.extend(c for c in default_components(ofm, devices, svc) if c.key.family not in covered)
    for f in doc.get("faults", []):
        fault = Fault.from_dict(f)
        next(d for d in devices if d.device_id == fault.device).faults.append(fault)
    pol = doc.get("policy", {})
    if isinstance(pol, str):
        pol = {"kind": pol}
    policy = Policy(pol.get("kind", "static"), int(pol.get("renewal_period", 10)), int(pol.get("renewal_amount", 10)))
    from fractions import Fraction

    participants = [
        Participant(pid, int(p.get("balance", 0)), Fraction(str(p.get("weight", 1))))
        for pid, p in sorted(pol.get("participants", {}).items())
    ]
    strat = doc.get("strategy", {})
    if isinstance(strat, str):
        strat = {"kind": strat}
    strategy = Strategy(**strat)
    cfg = doc.get("config", {})
    fcfg = cfg.get("factory", {})
    config = WorldConfig(
        staleness_threshold=int(cfg.get("staleness_threshold", DEFAULT_STALENESS)),
        retry_budget=int(cfg.get("retry_budget", DEFAULT_RETRIES)),
        revert_window=int(cfg.get("revert_window", 50)),
        store_capacity=int(cfg.get("store_capacity", 256)),
        auto_revert_partial=bool(cfg.get("auto_revert_partial", False)),
        factory=FactoryConfig(
            required_charge_pct=fcfg.get("required_charge_pct", 20),
            shipping_budget=int(fcfg.get("shipping_budget", 50)),
            importance_scale=int(fcfg.get("importance_scale", 9)),
            interrupt_allowed=bool(fcfg.get("interrupt_allowed", True)),
        ),
    )
    world = World(ofm, devices, scenarios, comps, policy, participants, strategy, config,
                  int(doc.get("seed", 0)), store_dir)
    for entry in doc.get("commissions", []):
        world.schedule_commission(int(entry.get("at", 0)), Commission.from_dict(entry["commission"]))
    return world
