"""Fixture builders: a lab OFM, device descriptions, fleets and worlds."""

from __future__ import annotations

import copy

from confab.model import OrganisationalFeatureModel
from confab.sim import build_world

GHZ = 1_000_000_000

ACCEPTANCE: list[str] = []  # one "criterion N: PASS|FAIL ..." line per acceptance check, printed at session end

LAB_OFM_DOC = {
    "id": "lab",
    "dfm_version": "1.0",
    "extensions": {
        "capabilities/sensing/polling_rate": "int",
        "capabilities/sensing/mode": "str",
        "capabilities/communication/telemetry": "bool",
    },
    "variation_points": [
        {"path": "capabilities/computational/cores", "domain": {"values": [1, 2, 4]}},
        {"path": "capabilities/computational/clock_hz", "domain": {"min": 0.7 * GHZ, "max": 1.5 * GHZ}},
        {"path": "capabilities/sensing/polling_rate", "domain": {"min": 1, "max": 120}},
        {"path": "capabilities/sensing/mode", "domain": {"values": ["eco", "perf"]}},
        {"path": "capabilities/communication/telemetry", "domain": {"values": [True, False]}},
        {"path": "capabilities/os/version", "domain": {"values": ["4.14", "4.19", "5.4"]}, "access": "read-only"},
        {"path": "capabilities/power/supply", "domain": {"values": ["mains", "battery"]}, "invariant": True},
    ],
    "device_classes": [
        {"class_id": "rpi3", "platform": "rpi3", "fixed": {"capabilities/os/platform": "linux"}},
        {"class_id": "esp32", "platform": "esp32", "fixed": {"capabilities/os/platform": "rtos"}},
    ],
    "service_bindings": [
        {"service": "telemetry", "path": "capabilities/communication/telemetry",
         "levels": [{"value": True, "level": 2}, {"value": False, "level": 0}]},
    ],
}


def lab_ofm() -> OrganisationalFeatureModel:
    return OrganisationalFeatureModel.from_dict(copy.deepcopy(LAB_OFM_DOC))


def rpi_ofm() -> OrganisationalFeatureModel:
    """Only the two computational variation points from the device listing."""
    return OrganisationalFeatureModel.from_dict({
        "id": "rpi-org",
        "dfm_version": "1.0",
        "variation_points": [
            {"path": "capabilities/computational/cores", "domain": {"values": [1, 2, 4]}},
            {"path": "capabilities/computational/clock_hz", "domain": {"min": 0.7 * GHZ, "max": 1.5 * GHZ}},
        ],
        "device_classes": [{"class_id": "rpi3", "platform": "rpi3"}],
    })


def make_desc(device_id: str, cls: str = "rpi3", supply: str = "mains", charge: float = 100, cores: int = 4,
              clock: float = 1.2 * GHZ, rate: int = 50, mode: str = "eco", telemetry: bool = True,
              os_version: str = "4.14", extended: bool = True) -> dict:
    os_platform = "linux" if cls == "rpi3" else "rtos"
    doc = {
        "device_id": device_id,
        "class_id": cls,
        "capabilities": {
            "computational": {"cores": cores, "clock_hz": clock},
            "memory": {"bytes": 1 << 30},
            "communication": {"protocols": ["mqtt"], "bandwidth_bps": 1_000_000},
            "power": {"supply": supply, "capacity_mwh": 5000 if supply == "battery" else 0, "charge_pct": charge},
            "sensing": {"capabilities": ["temperature"]},
            "acting": {"capabilities": []},
            "os": {"platform": os_platform, "version": os_version},
        },
    }
    if extended:
        doc["capabilities"]["sensing"].update(polling_rate=rate, mode=mode)
        doc["capabilities"]["communication"]["telemetry"] = telemetry
    return doc


def device_entry(device_id: str, services: dict | None = None, report_period: int = 1, report_phase: int = 0,
                 agent: bool = True, power: dict | None = None, rules: list | None = None, **desc) -> dict:
    sim = {"report_period": report_period, "report_phase": report_phase, "agent": agent}
    if power:
        sim["power"] = power
    if rules:
        sim["rules"] = rules
    return {"description": make_desc(device_id, **desc), "services": services or {}, "sim": sim}


def lab_fleet_doc(devices: list | None = None, scenarios: list | None = None) -> dict:
    if devices is None:
        devices = [device_entry(d) for d in ("d1", "d2", "d3")]
    if scenarios is None:
        scenarios = [{"scenario_id": "S1", "members": [e["description"]["device_id"] for e in devices],
                      "constraints": ["polling_rate <= 100"]}]
    return {"ofm": copy.deepcopy(LAB_OFM_DOC), "devices": devices, "scenarios": scenarios}


def commission_doc(cid: str, targets, required, importance: int = 5, earliest: int = 0, latest: int = 100,
                   source: str = "operator", revert_at: int | None = None) -> dict:
    doc = {"commission_id": cid, "source": source, "importance": importance,
           "window": {"earliest": earliest, "latest": latest},
           "targets": list(targets) if not isinstance(targets, str) else [targets], "required": required}
    if revert_at is not None:
        doc["revert_at"] = revert_at
    return doc


def set_value(path: str, value) -> dict:
    return {"kind": "set-value", "path": path, "value": value}


def provide(service: str, level: int = 1) -> dict:
    return {"kind": "provide-service", "service": service, "min_level": level}


def make_world(fleet: dict | None = None, commissions: list | None = None, faults: list | None = None,
               strategy="push", policy="static", config: dict | None = None, seed: int = 0,
               services: list | None = None, store_dir=None):
    doc = {
        "fleet": fleet or lab_fleet_doc(),
        "default_components": services or ["diagnostics", "temp-sensing"],
        "commissions": commissions or [],
        "faults": faults or [],
        "strategy": strategy,
        "policy": policy,
        "config": config or {},
        "seed": seed,
    }
    return build_world(doc, store_dir=store_dir)
