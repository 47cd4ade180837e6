"""Transformation components: templates that turn one abstract post-condition
into platform-specific configuration instructions.

A component is keyed by post-condition kind and subject (a variation-point
path or a service name), the hardware platform, and an OS platform with a
half-open version range ``[min_version, max_version)``.  Template strings may
contain ``{{name}}`` placeholders bound from the post-condition and the device
state; a string that is exactly one placeholder takes the bound value as-is,
so numbers stay numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import BuildFailed, StructuralError
from .model import parse_version

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][\w./:-]*)\s*\}\}")
INSTRUCTION_OPS = ("set", "exec", "verify")


@dataclass(frozen=True)
class ComponentKey:
    kind: str  # set-value | provide-service
    subject: str
    platform: str
    os_platform: str
    min_version: str = "0"
    max_version: str | None = None  # exclusive; None = unbounded

    def __post_init__(self):
        if self.kind not in ("set-value", "provide-service"):
            raise StructuralError(f"component kind {self.kind!r} unknown")
        try:
            lo = parse_version(self.min_version)
            if self.max_version is not None and parse_version(self.max_version) <= lo:
                raise StructuralError(f"empty version range [{self.min_version}, {self.max_version})")
        except ValueError as exc:
            raise StructuralError(str(exc)) from None

    @property
    def family(self) -> tuple[str, str, str, str]:
        return (self.kind, self.subject, self.platform, self.os_platform)

    def contains(self, version: str) -> bool:
        v = parse_version(version)
        if v < parse_version(self.min_version):
            return False
        return self.max_version is None or v < parse_version(self.max_version)

    def overlaps(self, other: "ComponentKey") -> bool:
        if self.family != other.family:
            return False
        a_lo, b_lo = parse_version(self.min_version), parse_version(other.min_version)
        a_hi = parse_version(self.max_version) if self.max_version else None
        b_hi = parse_version(other.max_version) if other.max_version else None
        return (b_hi is None or a_lo < b_hi) and (a_hi is None or b_lo < a_hi)

    def describe(self) -> str:
        hi = self.max_version or "*"
        return f"({self.kind} {self.subject}, {self.platform}, {self.os_platform} [{self.min_version},{hi}))"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "subject": self.subject,
            "platform": self.platform,
            "os": {"platform": self.os_platform, "min_version": self.min_version, "max_version": self.max_version},
        }


@dataclass(frozen=True)
class TransformationComponent:
    key: ComponentKey
    template: tuple[Mapping[str, Any], ...]

    def __post_init__(self):
        for step in self.template:
            if step.get("op") not in ("set", "exec"):
                raise StructuralError(f"{self.key.describe()}: template op must be set or exec, got {step.get('op')!r}")
            if "target" not in step:
                raise StructuralError(f"{self.key.describe()}: template step lacks target")

    @property
    def component_id(self) -> str:
        k = self.key
        return f"{k.kind}:{k.subject}@{k.platform}/{k.os_platform}-{k.min_version}"

    def render(self, bindings: Mapping[str, Any]) -> list["Instruction"]:
        from .package import Instruction

        out = []
        for step in self.template:
            out.append(Instruction(step["op"], _render(step["target"], bindings), _render(step.get("value"), bindings)))
        return out

    def to_dict(self) -> dict:
        return {**self.key.to_dict(), "template": [dict(s) for s in self.template]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TransformationComponent":
        try:
            os_ = d["os"]
            key = ComponentKey(
                kind=d["kind"],
                subject=d["subject"],
                platform=d["platform"],
                os_platform=os_["platform"],
                min_version=str(os_.get("min_version", "0")),
                max_version=None if os_.get("max_version") is None else str(os_["max_version"]),
            )
            return cls(key, tuple(dict(s) for s in d["template"]))
        except KeyError as exc:
            raise StructuralError(f"component document lacks {exc.args[0]}") from None


def _render(value: Any, bindings: Mapping[str, Any]) -> Any:
    if isinstance(value, list):
        return [_render(v, bindings) for v in value]
    if not isinstance(value, str):
        return value
    whole = _PLACEHOLDER.fullmatch(value.strip())
    if whole:
        return _bound(whole.group(1), bindings)
    return _PLACEHOLDER.sub(lambda m: _as_text(_bound(m.group(1), bindings)), value)


def _bound(name: str, bindings: Mapping[str, Any]) -> Any:
    if name not in bindings:
        raise BuildFailed("template", f"placeholder {{{{{name}}}}} has no binding")
    return bindings[name]


def _as_text(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def default_set_component(subject: str, platform: str, os_platform: str, min_version: str = "0",
                          max_version: str | None = None) -> TransformationComponent:
    return TransformationComponent(
        ComponentKey("set-value", subject, platform, os_platform, min_version, max_version),
        ({"op": "set", "target": "{{path}}", "value": "{{value}}"},),
    )


def default_service_component(service: str, platform: str, os_platform: str, min_version: str = "0",
                              max_version: str | None = None) -> TransformationComponent:
    return TransformationComponent(
        ComponentKey("provide-service", service, platform, os_platform, min_version, max_version),
        ({"op": "exec", "target": "service enable {{service}} {{min_level}}"},),
    )
