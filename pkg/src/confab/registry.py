"""Device registry: the ledger of descriptions, live states and scenarios."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Iterable, Mapping

from .constraints import BusinessScenario
from .errors import NotFoundError, RegistrationConflict, StaleWriteError, StructuralError, ValidationError
from .model import (
    DeviceDescription,
    DeviceState,
    OrganisationalFeatureModel,
    describe_violations,
    validate_description,
    validate_state,
)

logger = logging.getLogger(__name__)

DEFAULT_STALENESS = 30


@dataclass(frozen=True)
class RegistryEntry:
    description: DeviceDescription
    state: DeviceState
    staleness_threshold: int


@dataclass(frozen=True)
class StateView:
    state: DeviceState
    fresh: bool


class ScenarioCatalog:
    """Business scenarios keyed by id; membership is fixed for a run."""

    def __init__(self, scenarios: Iterable[BusinessScenario] = ()):
        self.scenarios: dict[str, BusinessScenario] = {}
        for s in scenarios:
            self.add(s)

    def add(self, scenario: BusinessScenario) -> None:
        if scenario.scenario_id in self.scenarios:
            raise RegistrationConflict(f"scenario {scenario.scenario_id} already defined")
        self.scenarios[scenario.scenario_id] = scenario

    def get(self, scenario_id: str) -> BusinessScenario:
        try:
            return self.scenarios[scenario_id]
        except KeyError:
            raise NotFoundError(f"unknown scenario {scenario_id}") from None

    def containing(self, device_id: str) -> list[BusinessScenario]:
        return [self.scenarios[k] for k in sorted(self.scenarios) if device_id in self.scenarios[k].member_devices]

    def __contains__(self, scenario_id: str) -> bool:
        return scenario_id in self.scenarios

    def __iter__(self):
        return iter(self.scenarios[k] for k in sorted(self.scenarios))


class DeviceRegistry:
    """Last-writer-wins ledger keyed by tick.

    Writes are serialized by a lock; reads return immutable snapshots.
    Every write path validates against the OFM.
    """

    def __init__(self, ofm: OrganisationalFeatureModel, staleness_threshold: int = DEFAULT_STALENESS,
                 catalog: ScenarioCatalog | None = None):
        self.ofm = ofm
        self.staleness_threshold = staleness_threshold
        self.catalog = catalog or ScenarioCatalog()
        self._entries: dict[str, RegistryEntry] = {}
        self._lock = threading.Lock()

    # -- writes ---------------------------------------------------------

    def register_device(self, desc: DeviceDescription, initial: DeviceState, now: int = 0) -> str:
        try:
            report = validate_description(desc, self.ofm)
        except StructuralError as exc:
            raise ValidationError(str(exc), report=[]) from exc
        if report:
            raise ValidationError(f"{desc.device_id}: {describe_violations(report)}", report=report)
        if initial.device_id != desc.device_id:
            raise ValidationError(f"state belongs to {initial.device_id}, not {desc.device_id}")
        self._check_state(initial)
        with self._lock:
            if desc.device_id in self._entries:
                raise RegistrationConflict(f"device {desc.device_id} already registered")
            state = initial.with_updates(last_updated=now)
            self._entries[desc.device_id] = RegistryEntry(desc, state, self.staleness_threshold)
        logger.debug("registered %s at %d", desc.device_id, now)
        return desc.device_id

    def update_state(self, device_id: str, new_state: DeviceState) -> int:
        """Replace the stored state; the write's tick is ``new_state.last_updated``."""
        if new_state.device_id != device_id:
            raise ValidationError(f"state belongs to {new_state.device_id}, not {device_id}")
        self._check_state(new_state)
        with self._lock:
            entry = self._entry(device_id)
            if new_state.last_updated < entry.state.last_updated:
                raise StaleWriteError(
                    f"{device_id}: write at tick {new_state.last_updated} is older than stored "
                    f"tick {entry.state.last_updated}"
                )
            self._entries[device_id] = RegistryEntry(entry.description, new_state, entry.staleness_threshold)
        return new_state.last_updated

    def add_scenario(self, scenario: BusinessScenario) -> None:
        unknown = sorted(d for d in scenario.member_devices if d not in self._entries)
        if unknown:
            raise NotFoundError(f"scenario {scenario.scenario_id} references unregistered devices {unknown}")
        self.catalog.add(scenario)

    # -- reads ----------------------------------------------------------

    def get_state(self, device_id: str, now: int) -> StateView:
        entry = self._entry(device_id)
        return StateView(entry.state, now - entry.state.last_updated <= entry.staleness_threshold)

    def get_entry(self, device_id: str) -> RegistryEntry:
        return self._entry(device_id)

    def description(self, device_id: str) -> DeviceDescription:
        return self._entry(device_id).description

    def scenarios_for(self, device_id: str) -> list[BusinessScenario]:
        self._entry(device_id)
        return self.catalog.containing(device_id)

    def states(self, device_ids: Iterable[str] | None = None) -> dict[str, DeviceState]:
        entries = self._entries
        ids = sorted(entries) if device_ids is None else sorted(device_ids)
        return {d: self._entry(d).state for d in ids}

    def device_ids(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._entries

    def _entry(self, device_id: str) -> RegistryEntry:
        try:
            return self._entries[device_id]
        except KeyError:
            raise NotFoundError(f"unknown device {device_id}") from None

    def _check_state(self, state: DeviceState) -> None:
        report = validate_state(state, self.ofm)
        if report:
            raise ValidationError(f"{state.device_id}: {describe_violations(report)}", report=report)


def load_scenarios(docs: Iterable[Mapping]) -> list[BusinessScenario]:
    return [BusinessScenario.from_dict(d) for d in docs]
