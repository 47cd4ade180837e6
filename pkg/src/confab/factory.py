"""The configuration factory.

Gathers the four factory inputs (commission, target device, business
scenarios, transformation components), checks pre-conditions and renders a
device-specific, checksummed :class:`ConfigurationPackage`.  ``build`` is a
pure function of its inputs apart from persisting the pre-build snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping

from .commissioning import Commission, PostCondition, RequirementsInterface
from .components import TransformationComponent
from .constraints import BusinessScenario
from .errors import BuildFailed, GatherFailed, NotFoundError, StoreUnavailable
from .model import (
    DeviceDescription,
    DeviceState,
    OrganisationalFeatureModel,
    same_value,
)
from .package import (
    DEFAULT_SECRET,
    ConfigurationArtifact,
    ConfigurationPackage,
    Instruction,
    ShippingMetadata,
    seal,
)
from .registry import DeviceRegistry
from .stores import ArtifactStore, ConfigurationStore, Snapshot

logger = logging.getLogger(__name__)

SERVICE_TARGET_PREFIX = "service:"


@dataclass(frozen=True)
class FactoryConfig:
    required_charge_pct: float = 20
    shipping_budget: int = 50
    importance_scale: int = 9
    interrupt_allowed: bool = True
    secret: bytes = DEFAULT_SECRET


@dataclass(frozen=True)
class TargetDevice:
    """What the device registry contributes: live state plus platform facts."""

    description: DeviceDescription
    state: DeviceState
    platform: str

    @property
    def os_platform(self) -> str:
        return self.description.get("capabilities/os/platform")

    @property
    def os_version(self) -> str:
        return self.description.get("capabilities/os/version")


@dataclass(frozen=True)
class FactoryInputs:
    commission: Commission
    device: TargetDevice
    scenarios: tuple[BusinessScenario, ...]
    components: tuple[TransformationComponent, ...]

    def postconditions(self) -> list[PostCondition]:
        return [p for p in self.commission.required if p.applies_to(self.device.state.device_id)]

    def to_dict(self) -> dict:
        return {
            "commission": self.commission.to_dict(),
            "device": {
                "description": self.device.description.to_dict(),
                "state": self.device.state.to_dict(),
                "platform": self.device.platform,
            },
            "scenarios": [s.to_dict() for s in self.scenarios],
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FactoryInputs":
        dev = d["device"]
        return cls(
            commission=Commission.from_dict(d["commission"]),
            device=TargetDevice(
                DeviceDescription.from_dict(dev["description"]),
                DeviceState.from_dict(dev["state"]),
                dev["platform"],
            ),
            scenarios=tuple(BusinessScenario.from_dict(s) for s in d["scenarios"]),
            components=tuple(TransformationComponent.from_dict(c) for c in d["components"]),
        )


@dataclass(frozen=True)
class PreconditionResult:
    ok: bool
    reason: str = ""
    details: tuple[str, ...] = ()
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return self.ok


def _key(p: PostCondition) -> tuple[str, str]:
    return (p.kind, p.path if p.kind == "set-value" else p.service)


def find_component(components, p: PostCondition, device: TargetDevice) -> TransformationComponent | None:
    kind, subject = _key(p)
    for comp in components:
        k = comp.key
        if k.family == (kind, subject, device.platform, device.os_platform) and k.contains(device.os_version):
            return comp
    return None


def criticality(importance: int, scale: int) -> str:
    """Tercile of ``[0, scale]``: lowest third low, middle normal, top critical."""
    if 3 * importance <= scale:
        return "low"
    if 3 * importance <= 2 * scale:
        return "normal"
    return "critical"


def check_preconditions(inputs: FactoryInputs, ofm: OrganisationalFeatureModel) -> PreconditionResult:
    state = inputs.device.state
    if not state.online:
        return PreconditionResult(False, "offline", (f"{state.device_id} is offline",))
    flat = inputs.device.description.flat()
    broken = [
        vp.path for vp in ofm.variation_points
        if vp.invariant_flag and vp.path in flat and not vp.domain.contains(flat[vp.path])
    ]
    if broken:
        return PreconditionResult(False, "invariant", tuple(f"{p} already violates its invariant" for p in broken))
    problems = []
    satisfied = True
    for p in inputs.postconditions():
        if p.kind == "set-value":
            vp = ofm.variation_point(p.path)
            if vp is None or not vp.configurable:
                return PreconditionResult(False, "path", (f"{p.path} is not a configurable variation point",))
            if not vp.domain.contains(p.value):
                problems.append(f"{p.path}={p.value!r} outside {vp.domain.describe()}")
            elif not same_value(state.current_values.get(p.path), p.value):
                satisfied = False
        elif state.service_level(p.service) < p.min_level:
            satisfied = False
    if problems:
        return PreconditionResult(False, "domain", tuple(problems))
    return PreconditionResult(True, notes=("no-op-candidate",) if satisfied else ())


class Factory:
    def __init__(self, registry: DeviceRegistry, intake: RequirementsInterface, artifacts: ArtifactStore,
                 configs: ConfigurationStore, config: FactoryConfig | None = None):
        self.registry = registry
        self.intake = intake
        self.artifacts = artifacts
        self.configs = configs
        self.config = config or FactoryConfig()

    def gather_inputs(self, commission_id: str, device_id: str, now: int) -> FactoryInputs:
        record = self.intake.get(commission_id)
        if device_id not in record.devices:
            raise GatherFailed("not-targeted", f"{commission_id} does not target {device_id}")
        view = self.registry.get_state(device_id, now)
        if not view.fresh:
            raise GatherFailed("stale", f"{device_id} state from tick {view.state.last_updated} is stale at {now}")
        desc = self.registry.description(device_id)
        device = TargetDevice(desc, view.state, self.registry.ofm.device_class(desc.class_id).platform)
        components = []
        for p in record.commission.required:
            if not p.applies_to(device_id):
                continue
            kind, subject = _key(p)
            try:
                comp = self.artifacts.resolve_component(kind, subject, device.platform, device.os_platform,
                                                        device.os_version)
            except NotFoundError:
                key = (kind, subject, device.platform, device.os_platform)
                raise GatherFailed("no-transform", f"no transformation component for {key}", key=key) from None
            if comp not in components:
                components.append(comp)
        return FactoryInputs(record.commission, device, tuple(self.registry.scenarios_for(device_id)),
                             tuple(components))

    def check_preconditions(self, inputs: FactoryInputs) -> PreconditionResult:
        return check_preconditions(inputs, self.registry.ofm)

    def build(self, inputs: FactoryInputs, now: int) -> ConfigurationPackage:
        return build(inputs, now, self.configs, self.config)


def render_instructions(inputs: FactoryInputs) -> list[Instruction]:
    device = inputs.device
    base = {
        "device_id": device.state.device_id,
        "platform": device.platform,
        "os_platform": device.os_platform,
        "os_version": device.os_version,
    }
    base.update({f"state.{k}": v for k, v in device.state.current_values.items()})
    out: list[Instruction] = []
    verifies: list[Instruction] = []
    for p in inputs.postconditions():
        comp = find_component(inputs.components, p, device)
        if comp is None:
            raise BuildFailed("template", f"no component among inputs for {_key(p)}")
        bindings = dict(base)
        if p.kind == "set-value":
            bindings.update(path=p.path, value=p.value)
            verifies.append(Instruction("verify", p.path, p.value))
        else:
            bindings.update(service=p.service, min_level=p.min_level)
            verifies.append(Instruction("verify", SERVICE_TARGET_PREFIX + p.service, p.min_level))
        out.extend(comp.render(bindings))
    return out + verifies


def build(inputs: FactoryInputs, now: int, store: ConfigurationStore | None,
          config: FactoryConfig | None = None) -> ConfigurationPackage:
    """Render, snapshot and seal one package.  Identical inputs give identical bytes."""
    config = config or FactoryConfig()
    c = inputs.commission
    state = inputs.device.state
    instructions = render_instructions(inputs)
    metadata = ShippingMetadata(
        required_charge_pct=config.required_charge_pct,
        interrupt_allowed=config.interrupt_allowed,
        criticality=criticality(c.importance, config.importance_scale),
        latest_shipping_time=min(c.latest, now + config.shipping_budget),
    )
    snap = Snapshot.capture(state.device_id, state.current_values, now)
    if store is not None:
        try:
            store.put_snapshot(snap)
        except StoreUnavailable as exc:
            raise BuildFailed("store", str(exc)) from exc
    pkg = ConfigurationPackage(
        package_id="",
        commission_id=c.commission_id,
        device_id=state.device_id,
        artifact=ConfigurationArtifact(tuple(instructions)),
        metadata=metadata,
        pre_snapshot_ref=snap.snapshot_id,
    )
    return seal(pkg, config.secret)
