"""Device models: the feature metamodel, organisational feature models, device
descriptions and live device states.

The metamodel fixes seven feature groups under ``capabilities``::

    capabilities/computational  cores, clock_hz
    capabilities/memory         bytes
    capabilities/communication  protocols, bandwidth_bps
    capabilities/power          supply, capacity_mwh, charge_pct
    capabilities/sensing        capabilities
    capabilities/acting         capabilities
    capabilities/os             platform, version

An organisational model may extend any group with extra fields and declares
which fields are variation points.  Paths are lowercase and slash-separated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import ProjectionError, StructuralError

ROOT = "capabilities"
GROUPS = ("computational", "memory", "communication", "power", "sensing", "acting", "os")
SUPPLY_KINDS = ("mains", "battery", "harvesting")
MAX_SERVICE_LEVEL = 10
STATE_FIELDS = ("online", "charge_pct", "last_updated")

_VERSION_RE = re.compile(r"^\d+(\.\d+)*$")
_PATH_SEGMENT_RE = re.compile(r"^[a-z0-9_\-]+$")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_names(value: Any) -> bool:
    return isinstance(value, list) and all(isinstance(v, str) for v in value)


# field kind -> predicate
FIELD_KINDS = {
    "int": _is_int,
    "number": _is_number,
    "str": lambda v: isinstance(v, str),
    "bool": lambda v: isinstance(v, bool),
    "names": _is_names,
    "version": lambda v: isinstance(v, str) and bool(_VERSION_RE.match(v)),
}


def same_value(a: Any, b: Any) -> bool:
    """Equality that keeps booleans apart from numbers (``True != 1``)."""
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if _is_number(a) and _is_number(b):
        return a == b
    return type(a) is type(b) and a == b


def parse_version(text: str) -> tuple[int, ...]:
    if not isinstance(text, str) or not _VERSION_RE.match(text):
        raise ValueError(f"not a dotted version: {text!r}")
    return tuple(int(p) for p in text.split("."))


def join_path(*parts: str) -> str:
    return "/".join(parts)


def split_path(path: str) -> list[str]:
    return path.split("/")


def flatten(tree: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Map a nested key tree to ``{path: leaf}``."""
    out: dict[str, Any] = {}
    for key, value in tree.items():
        path = f"{prefix}/{key}" if prefix else key
        if isinstance(value, Mapping):
            out.update(flatten(value, path))
        else:
            out[path] = value
    return out


def unflatten(flat: Mapping[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for path, value in flat.items():
        node = tree
        parts = split_path(path)
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return tree


class DeviceFeatureMetamodel:
    """The seven-group template every device description must follow."""

    version = "1.0"
    fields: dict[str, dict[str, str]] = {
        "computational": {"cores": "int", "clock_hz": "number"},
        "memory": {"bytes": "int"},
        "communication": {"protocols": "names", "bandwidth_bps": "number"},
        "power": {"supply": "str", "capacity_mwh": "number", "charge_pct": "number"},
        "sensing": {"capabilities": "names"},
        "acting": {"capabilities": "names"},
        "os": {"platform": "str", "version": "version"},
    }

    def core_paths(self) -> dict[str, str]:
        return {
            join_path(ROOT, group, name): kind
            for group in GROUPS
            for name, kind in self.fields[group].items()
        }

    def check_values(self, flat: Mapping[str, Any]) -> list["Violation"]:
        """Range rules of the metamodel itself (independent of any OFM)."""
        out = []

        def get(group, name):
            return flat.get(join_path(ROOT, group, name))

        def bad(group, name, message):
            out.append(Violation("dfm", join_path(ROOT, group, name), message))

        cores = get("computational", "cores")
        if _is_int(cores) and cores < 1:
            bad("computational", "cores", "cores must be >= 1")
        clock = get("computational", "clock_hz")
        if _is_number(clock) and clock <= 0:
            bad("computational", "clock_hz", "clock_hz must be > 0")
        mem = get("memory", "bytes")
        if _is_int(mem) and mem < 0:
            bad("memory", "bytes", "bytes must be >= 0")
        bw = get("communication", "bandwidth_bps")
        if _is_number(bw) and bw < 0:
            bad("communication", "bandwidth_bps", "bandwidth_bps must be >= 0")
        supply = get("power", "supply")
        if isinstance(supply, str) and supply not in SUPPLY_KINDS:
            bad("power", "supply", f"supply must be one of {', '.join(SUPPLY_KINDS)}")
        cap = get("power", "capacity_mwh")
        if _is_number(cap):
            if cap < 0:
                bad("power", "capacity_mwh", "capacity_mwh must be >= 0")
            elif supply == "battery" and cap <= 0:
                bad("power", "capacity_mwh", "battery devices need capacity_mwh > 0")
        charge = get("power", "charge_pct")
        if _is_number(charge) and not 0 <= charge <= 100:
            bad("power", "charge_pct", "charge_pct must lie in [0, 100]")
        return out


DFM = DeviceFeatureMetamodel()


@dataclass(frozen=True)
class Violation:
    kind: str  # missing | extra | type | dfm | domain | fixed | structure
    path: str
    message: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class Domain:
    """Either an enumeration of allowed values or a closed numeric range."""

    values: tuple | None = None
    minimum: float | None = None
    maximum: float | None = None

    def __post_init__(self):
        if self.values is None and (self.minimum is None or self.maximum is None):
            raise StructuralError("domain needs either values or both minimum and maximum")
        if self.values is not None and (self.minimum is not None or self.maximum is not None):
            raise StructuralError("domain is either an enumeration or a range, not both")
        if self.values is None and self.minimum > self.maximum:
            raise StructuralError(f"empty range [{self.minimum}, {self.maximum}]")

    def contains(self, value: Any) -> bool:
        if self.values is not None:
            return any(same_value(value, v) for v in self.values)
        return _is_number(value) and self.minimum <= value <= self.maximum

    def describe(self) -> str:
        if self.values is not None:
            return "{" + ", ".join(repr(v) for v in self.values) + "}"
        return f"[{self.minimum}, {self.maximum}]"

    def to_dict(self) -> dict:
        if self.values is not None:
            return {"values": list(self.values)}
        return {"min": self.minimum, "max": self.maximum}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Domain":
        if "values" in d:
            return cls(values=tuple(d["values"]))
        return cls(minimum=d["min"], maximum=d["max"])


@dataclass(frozen=True)
class VariationPoint:
    path: str
    domain: Domain
    access: str = "configurable"  # configurable | read-only
    invariant_flag: bool = False

    @property
    def configurable(self) -> bool:
        return self.access == "configurable" and not self.invariant_flag

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "domain": self.domain.to_dict(),
            "access": self.access,
            "invariant": self.invariant_flag,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "VariationPoint":
        return cls(
            path=d["path"],
            domain=Domain.from_dict(d["domain"]),
            access=d.get("access", "configurable"),
            invariant_flag=bool(d.get("invariant", False)),
        )


@dataclass(frozen=True)
class DeviceClass:
    class_id: str
    platform: str
    fixed: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "platform": self.platform, "fixed": dict(self.fixed)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DeviceClass":
        return cls(d["class_id"], d.get("platform", d["class_id"]), dict(d.get("fixed", {})))


@dataclass(frozen=True)
class ServiceBinding:
    """Ties a service level to the value of one variation point.

    When the bound path takes a value listed in ``levels`` the device provides
    ``service`` at that level (level 0 means not provided).
    """

    service: str
    path: str
    levels: tuple  # of (value, level) pairs

    def level_for(self, value: Any) -> int | None:
        for v, level in self.levels:
            if same_value(v, value):
                return level
        return None

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "path": self.path,
            "levels": [{"value": v, "level": lvl} for v, lvl in self.levels],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ServiceBinding":
        return cls(d["service"], d["path"], tuple((e["value"], int(e["level"])) for e in d["levels"]))


@dataclass(frozen=True)
class OrganisationalFeatureModel:
    id: str
    dfm_version: str
    variation_points: tuple[VariationPoint, ...]
    device_classes: tuple[DeviceClass, ...]
    extensions: Mapping[str, str] = field(default_factory=dict)
    service_bindings: tuple[ServiceBinding, ...] = ()

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        """Raise StructuralError unless the model is self-consistent."""
        if self.dfm_version != DFM.version:
            raise StructuralError(f"OFM {self.id} targets DFM {self.dfm_version}, have {DFM.version}")
        for path, kind in self.extensions.items():
            parts = split_path(path)
            if len(parts) < 3 or parts[0] != ROOT or parts[1] not in GROUPS:
                raise StructuralError(f"extension {path} is not inside a feature group")
            if not all(_PATH_SEGMENT_RE.match(p) for p in parts):
                raise StructuralError(f"extension path {path} is not canonical")
            if kind not in FIELD_KINDS:
                raise StructuralError(f"extension {path} has unknown kind {kind}")
            if path in DFM.core_paths():
                raise StructuralError(f"extension {path} shadows a metamodel field")
        known = self.schema()
        seen = set()
        for vp in self.variation_points:
            if vp.path not in known:
                raise StructuralError(f"variation point {vp.path} does not exist in the feature structure")
            if vp.path in seen:
                raise StructuralError(f"duplicate variation point {vp.path}")
            if vp.access not in ("configurable", "read-only"):
                raise StructuralError(f"variation point {vp.path} has bad access {vp.access}")
            seen.add(vp.path)
        class_ids = [c.class_id for c in self.device_classes]
        if len(set(class_ids)) != len(class_ids):
            raise StructuralError("duplicate device class ids")
        for cls in self.device_classes:
            for path in cls.fixed:
                if path not in known:
                    raise StructuralError(f"class {cls.class_id} fixes unknown field {path}")
        for b in self.service_bindings:
            vp = self.variation_point(b.path)
            if vp is None:
                raise StructuralError(f"service binding {b.service} targets {b.path}, not a variation point")

    def schema(self) -> dict[str, str]:
        out = DFM.core_paths()
        out.update(self.extensions)
        return out

    def variation_point(self, path: str) -> VariationPoint | None:
        for vp in self.variation_points:
            if vp.path == path:
                return vp
        return None

    def configurable_paths(self) -> list[str]:
        return sorted(vp.path for vp in self.variation_points if vp.configurable)

    def device_class(self, class_id: str) -> DeviceClass:
        for cls in self.device_classes:
            if cls.class_id == class_id:
                return cls
        raise StructuralError(f"unknown device class {class_id!r}", class_id=class_id)

    def resolve_path(self, path: str) -> str:
        """Accept either a full path or a unique trailing suffix of one."""
        known = self.schema()
        if path in known:
            return path
        matches = [p for p in known if p.endswith("/" + path)]
        if len(matches) == 1:
            return matches[0]
        raise StructuralError(f"path {path!r} " + ("is ambiguous" if matches else "does not exist"))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dfm_version": self.dfm_version,
            "variation_points": [vp.to_dict() for vp in self.variation_points],
            "device_classes": [c.to_dict() for c in self.device_classes],
            "extensions": dict(self.extensions),
            "service_bindings": [b.to_dict() for b in self.service_bindings],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OrganisationalFeatureModel":
        try:
            return cls(
                id=d["id"],
                dfm_version=str(d.get("dfm_version", DFM.version)),
                variation_points=tuple(VariationPoint.from_dict(v) for v in d.get("variation_points", [])),
                device_classes=tuple(DeviceClass.from_dict(c) for c in d.get("device_classes", [])),
                extensions=dict(d.get("extensions", {})),
                service_bindings=tuple(ServiceBinding.from_dict(b) for b in d.get("service_bindings", [])),
            )
        except KeyError as exc:
            raise StructuralError(f"OFM document lacks field {exc.args[0]}") from None


@dataclass(frozen=True)
class DeviceDescription:
    device_id: str
    class_id: str
    values: Mapping[str, Any]  # nested key tree rooted at "capabilities"

    def flat(self) -> dict[str, Any]:
        return flatten(self.values)

    def get(self, path: str, default: Any = None) -> Any:
        node: Any = self.values
        for part in split_path(path):
            if not isinstance(node, Mapping) or part not in node:
                return default
            node = node[part]
        return node

    def to_dict(self) -> dict:
        return {"device_id": self.device_id, "class_id": self.class_id, **{k: v for k, v in self.values.items()}}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DeviceDescription":
        try:
            values = {k: v for k, v in d.items() if k not in ("device_id", "class_id")}
            return cls(d["device_id"], d["class_id"], values)
        except KeyError as exc:
            raise StructuralError(f"device description lacks {exc.args[0]}") from None


def validate_description(desc: DeviceDescription, ofm: OrganisationalFeatureModel) -> list[Violation]:
    """Every violation of ``desc`` against ``ofm``; an empty list means valid.

    Raises StructuralError if the description names a class the OFM lacks.
    """
    cls = ofm.device_class(desc.class_id)
    report: list[Violation] = []
    if set(desc.values) != {ROOT}:
        for key in sorted(set(desc.values) - {ROOT}):
            report.append(Violation("extra", key, f"unexpected top-level key {key}"))
        if ROOT not in desc.values:
            report.append(Violation("missing", ROOT, "no capabilities tree"))
            return report
    caps = desc.values[ROOT]
    if not isinstance(caps, Mapping):
        return report + [Violation("type", ROOT, "capabilities must be a key tree")]
    for group in GROUPS:
        if group not in caps:
            report.append(Violation("structure", join_path(ROOT, group), f"feature group {group} is missing"))
    schema = ofm.schema()
    flat = desc.flat()
    present_groups = {g for g in GROUPS if g in caps}
    for path, kind in sorted(schema.items()):
        group = split_path(path)[1]
        if group not in present_groups:
            continue
        if path not in flat:
            report.append(Violation("missing", path, f"field {path} is missing"))
        elif not FIELD_KINDS[kind](flat[path]):
            report.append(Violation("type", path, f"{path} must be of kind {kind}, got {flat[path]!r}"))
    for path in sorted(set(flat) - set(schema)):
        report.append(Violation("extra", path, f"field {path} is not part of the schema"))
    report.extend(DFM.check_values(flat))
    for vp in ofm.variation_points:
        if vp.path in flat and not vp.domain.contains(flat[vp.path]):
            report.append(Violation("domain", vp.path, f"{flat[vp.path]!r} not in {vp.domain.describe()}"))
    for path, value in sorted(cls.fixed.items()):
        if path in flat and flat[path] != value:
            report.append(Violation("fixed", path, f"class {cls.class_id} fixes {path} to {value!r}"))
    return report


@dataclass(frozen=True)
class DeviceState:
    device_id: str
    current_values: Mapping[str, Any]
    provided_services: Mapping[str, int] = field(default_factory=dict)
    charge_pct: float = 100
    online: bool = True
    last_updated: int = 0

    def lookup(self, path: str) -> Any:
        """Resolve a state field; raises KeyError when absent or ambiguous."""
        if path in self.current_values:
            return self.current_values[path]
        if path in STATE_FIELDS:
            return getattr(self, path)
        matches = [p for p in self.current_values if p.endswith("/" + path)]
        if len(matches) == 1:
            return self.current_values[matches[0]]
        raise KeyError(path)

    def service_level(self, name: str) -> int:
        return self.provided_services.get(name, 0)

    def with_updates(self, **kw) -> "DeviceState":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "current_values": dict(self.current_values),
            "provided_services": dict(self.provided_services),
            "charge_pct": self.charge_pct,
            "online": self.online,
            "last_updated": self.last_updated,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DeviceState":
        return cls(
            device_id=d["device_id"],
            current_values=dict(d.get("current_values", {})),
            provided_services={k: int(v) for k, v in d.get("provided_services", {}).items()},
            charge_pct=d.get("charge_pct", 100),
            online=bool(d.get("online", True)),
            last_updated=int(d.get("last_updated", 0)),
        )


def validate_state(state: DeviceState, ofm: OrganisationalFeatureModel) -> list[Violation]:
    report = []
    expected = set(ofm.configurable_paths())
    actual = set(state.current_values)
    for path in sorted(expected - actual):
        report.append(Violation("missing", path, f"state lacks configurable value {path}"))
    for path in sorted(actual - expected):
        report.append(Violation("extra", path, f"{path} is not a configurable variation point"))
    for path in sorted(expected & actual):
        vp = ofm.variation_point(path)
        if not vp.domain.contains(state.current_values[path]):
            report.append(Violation("domain", path, f"{state.current_values[path]!r} not in {vp.domain.describe()}"))
    for name, level in sorted(state.provided_services.items()):
        if not _is_int(level) or not 0 <= level <= MAX_SERVICE_LEVEL:
            report.append(Violation("domain", f"service:{name}", f"service level {level!r} outside 0..{MAX_SERVICE_LEVEL}"))
    if not _is_number(state.charge_pct) or not 0 <= state.charge_pct <= 100:
        report.append(Violation("domain", "charge_pct", "charge_pct must lie in [0, 100]"))
    return report


def initial_state(desc: DeviceDescription, ofm: OrganisationalFeatureModel, services: Mapping[str, int] | None = None,
                  tick: int = 0) -> DeviceState:
    """Derive a device state from its description (configurable values copied over)."""
    flat = desc.flat()
    values = {p: flat[p] for p in ofm.configurable_paths() if p in flat}
    svc = dict(services or {})
    for b in ofm.service_bindings:
        if b.path in values:
            level = b.level_for(values[b.path])
            if level is not None:
                svc[b.service] = level
    return DeviceState(
        device_id=desc.device_id,
        current_values=values,
        provided_services={k: v for k, v in svc.items() if v > 0},
        charge_pct=flat.get(join_path(ROOT, "power", "charge_pct"), 100),
        online=True,
        last_updated=tick,
    )


def project_state(
    s: DeviceState,
    changes: Mapping[str, Any],
    ofm: OrganisationalFeatureModel | None = None,
    services: Mapping[str, int] | None = None,
) -> DeviceState:
    """Return ``s`` with ``changes`` applied; ``s`` is left untouched.

    ``services`` maps service names to a minimum level the result must provide.
    With an OFM, service bindings follow changed values and read-only or
    invariant targets get a precise error.
    """
    values = dict(s.current_values)
    for path, value in changes.items():
        if path not in values:
            vp = ofm.variation_point(path) if ofm is not None else None
            if vp is not None and vp.invariant_flag:
                raise ProjectionError(f"{path} is invariant and may not be changed", path=path)
            if vp is not None:
                raise ProjectionError(f"{path} is {vp.access}", path=path)
            raise ProjectionError(f"{path} is not a configurable variation point", path=path)
        values[path] = value
    svc = dict(s.provided_services)
    if ofm is not None:
        for b in ofm.service_bindings:
            if b.path in changes:
                level = b.level_for(values[b.path])
                if level is not None:
                    svc[b.service] = level
    for name, level in (services or {}).items():
        svc[name] = max(svc.get(name, 0), level)
    svc = {k: v for k, v in svc.items() if v > 0}
    return replace(s, current_values=values, provided_services=svc)


def describe_violations(report: Iterable[Violation]) -> str:
    return "; ".join(f"{v.kind} {v.path}: {v.message}" for v in report)
