"""Artifact and configuration storage.

Two stores with separate namespaces share one storage engine:

* :class:`ArtifactStore` keeps transformation components (``components/``).
* :class:`ConfigurationStore` keeps built packages (``packages/``) and
  rollback snapshots (``snapshots/``), with golden pinning and LRU eviction.

On disk each namespace is a directory holding one file per object plus an
append-only ``log.jsonl``; the in-memory index is rebuilt by replaying the log.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import canonical
from .components import ComponentKey, TransformationComponent
from .errors import CorruptionError, NotFoundError, StoreConflict, StoreUnavailable
from .package import ConfigurationPackage, from_bytes

logger = logging.getLogger(__name__)

NAMESPACES = ("components", "packages", "snapshots")
DEFAULT_CAPACITY = 256


class MemoryBackend:
    def __init__(self):
        self.objects: dict[tuple[str, str], bytes] = {}
        self.logs: dict[str, list[dict]] = {ns: [] for ns in NAMESPACES}
        self.available = True

    def _check(self):
        if not self.available:
            raise StoreUnavailable("store backend is unavailable")

    def write(self, ns: str, name: str, data: bytes) -> None:
        self._check()
        self.objects[(ns, name)] = bytes(data)

    def read(self, ns: str, name: str) -> bytes:
        self._check()
        try:
            return self.objects[(ns, name)]
        except KeyError:
            raise NotFoundError(f"{ns}/{name} not found") from None

    def delete(self, ns: str, name: str) -> None:
        self._check()
        self.objects.pop((ns, name), None)

    def append(self, ns: str, record: dict) -> None:
        self._check()
        self.logs[ns].append(dict(record))

    def replay(self, ns: str) -> list[dict]:
        return list(self.logs[ns])


class DiskBackend:
    SUFFIX = {"components": ".json", "packages": ".pkg", "snapshots": ".json"}

    def __init__(self, root: str | Path):
        self.root = Path(root)
        for ns in NAMESPACES:
            (self.root / ns).mkdir(parents=True, exist_ok=True)
        self.available = True

    def _check(self):
        if not self.available:
            raise StoreUnavailable(f"store at {self.root} is unavailable")

    def path(self, ns: str, name: str) -> Path:
        return self.root / ns / f"{name}{self.SUFFIX[ns]}"

    def write(self, ns: str, name: str, data: bytes) -> None:
        self._check()
        tmp = self.path(ns, name).with_suffix(".tmp")
        tmp.write_bytes(data)
        tmp.replace(self.path(ns, name))

    def read(self, ns: str, name: str) -> bytes:
        self._check()
        try:
            return self.path(ns, name).read_bytes()
        except FileNotFoundError:
            raise NotFoundError(f"{ns}/{name} not found") from None

    def delete(self, ns: str, name: str) -> None:
        self._check()
        self.path(ns, name).unlink(missing_ok=True)

    def append(self, ns: str, record: dict) -> None:
        self._check()
        with open(self.root / ns / "log.jsonl", "a", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical.dumps(record) + "\n")

    def replay(self, ns: str) -> list[dict]:
        log = self.root / ns / "log.jsonl"
        if not log.exists():
            return []
        return [json.loads(line) for line in log.read_text(encoding="utf-8").splitlines() if line.strip()]


def open_backend(root: str | Path | None) -> MemoryBackend | DiskBackend:
    return MemoryBackend() if root is None else DiskBackend(root)


class ArtifactStore:
    """Transformation components, unique per key family and version range."""

    def __init__(self, backend: MemoryBackend | DiskBackend | None = None):
        self.backend = backend or MemoryBackend()
        self._lock = threading.Lock()
        self._components: dict[str, TransformationComponent] = {}
        for rec in self.backend.replay("components"):
            if rec["event"] == "put":
                doc = json.loads(self.backend.read("components", rec["id"]))
                self._components[rec["id"]] = TransformationComponent.from_dict(doc)

    def put_component(self, component: TransformationComponent) -> str:
        with self._lock:
            cid = canonical.short_id("tc", component.to_dict())
            if self._components.get(cid) == component:
                return cid
            for existing in self._components.values():
                if existing.key.overlaps(component.key):
                    raise StoreConflict(
                        f"{component.key.describe()} overlaps stored {existing.key.describe()}"
                    )
            self.backend.write("components", cid, canonical.dump_bytes(component.to_dict()))
            self.backend.append("components", {"event": "put", "id": cid})
            self._components[cid] = component
            return cid

    def resolve_component(self, kind: str, subject: str, platform: str, os_platform: str,
                          os_version: str) -> TransformationComponent:
        for comp in self._components.values():
            k = comp.key
            if k.family == (kind, subject, platform, os_platform) and k.contains(os_version):
                return comp
        near = sorted(c.key.describe() for c in self._components.values()
                      if c.key.kind == kind and c.key.subject == subject)
        hint = f"; nearest: {', '.join(near)}" if near else ""
        raise NotFoundError(
            f"no component for ({kind} {subject}, {platform}, {os_platform} {os_version}){hint}",
            key=(kind, subject, platform, os_platform, os_version),
            nearest=near,
        )

    def components(self) -> list[TransformationComponent]:
        return sorted(self._components.values(), key=lambda c: (c.key.family, c.key.min_version))

    def get_raw(self, component_id: str) -> bytes:
        return self.backend.read("components", component_id)

    def ids(self) -> list[str]:
        return sorted(self._components)


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    device_id: str
    values: Mapping[str, Any]
    taken_at: int

    def to_dict(self) -> dict:
        return {"snapshot_id": self.snapshot_id, "device_id": self.device_id,
                "values": dict(self.values), "taken_at": self.taken_at}

    @classmethod
    def capture(cls, device_id: str, values: Mapping[str, Any], taken_at: int) -> "Snapshot":
        ident = {"device_id": device_id, "values": dict(values), "taken_at": taken_at}
        return cls(canonical.short_id("snap", ident), device_id, dict(values), taken_at)


@dataclass(frozen=True)
class StoredPackage:
    package: ConfigurationPackage
    golden: bool
    stored_at: int


class ConfigurationStore:
    """Built packages (checksum-verified on every read), golden pins and snapshots."""

    def __init__(self, backend: MemoryBackend | DiskBackend | None = None, capacity: int = DEFAULT_CAPACITY):
        self.backend = backend or MemoryBackend()
        self.capacity = capacity
        self._lock = threading.Lock()
        self._packages: OrderedDict[str, dict] = OrderedDict()  # id -> {golden, stored_at}; LRU order
        self._snapshots: dict[str, int] = {}
        for rec in self.backend.replay("packages"):
            ev = rec["event"]
            if ev == "put":
                self._packages[rec["id"]] = {"golden": False, "stored_at": rec["tick"]}
            elif ev == "golden" and rec["id"] in self._packages:
                self._packages[rec["id"]]["golden"] = True
            elif ev == "evict":
                self._packages.pop(rec["id"], None)
        for rec in self.backend.replay("snapshots"):
            if rec["event"] == "put":
                self._snapshots[rec["id"]] = rec["tick"]
            elif rec["event"] == "delete":
                self._snapshots.pop(rec["id"], None)

    # -- packages -------------------------------------------------------

    def store_package(self, pkg: ConfigurationPackage, now: int) -> str:
        if not pkg.verify_checksum():
            raise CorruptionError(f"refusing to store {pkg.package_id}: checksum mismatch")
        with self._lock:
            if pkg.package_id in self._packages:
                existing = self.backend.read("packages", pkg.package_id)
                if existing != pkg.to_bytes():
                    raise StoreConflict(f"package id {pkg.package_id} already holds different content")
                self._packages.move_to_end(pkg.package_id)
                return pkg.package_id
            self.backend.write("packages", pkg.package_id, pkg.to_bytes())
            self.backend.append("packages", {"event": "put", "id": pkg.package_id, "tick": now})
            self._packages[pkg.package_id] = {"golden": False, "stored_at": now}
        return pkg.package_id

    def get_package(self, package_id: str) -> ConfigurationPackage:
        if package_id not in self._packages:
            raise NotFoundError(f"unknown package {package_id}")
        data = self.backend.read("packages", package_id)
        pkg = from_bytes(data)  # raises CorruptionError
        if pkg.package_id != package_id:
            raise CorruptionError(f"stored object {package_id} holds package {pkg.package_id}")
        with self._lock:
            self._packages.move_to_end(package_id)
        return pkg

    def get_stored(self, package_id: str) -> StoredPackage:
        pkg = self.get_package(package_id)
        meta = self._packages[package_id]
        return StoredPackage(pkg, meta["golden"], meta["stored_at"])

    def mark_golden(self, package_id: str) -> None:
        if package_id not in self._packages:
            raise NotFoundError(f"unknown package {package_id}")
        with self._lock:
            self._packages[package_id]["golden"] = True
            self.backend.append("packages", {"event": "golden", "id": package_id})

    def is_golden(self, package_id: str) -> bool:
        return self._packages[package_id]["golden"]

    def package_ids(self) -> list[str]:
        return sorted(self._packages)

    def evict(self, protected: Iterable[str] = ()) -> list[str]:
        """LRU-evict non-golden, unprotected packages until within capacity."""
        keep = set(protected)
        evicted = []
        with self._lock:
            for pid in list(self._packages):
                if len(self._packages) <= self.capacity:
                    break
                if self._packages[pid]["golden"] or pid in keep:
                    continue
                del self._packages[pid]
                self.backend.delete("packages", pid)
                self.backend.append("packages", {"event": "evict", "id": pid})
                evicted.append(pid)
        return evicted

    # -- snapshots ------------------------------------------------------

    def put_snapshot(self, snap: Snapshot) -> str:
        with self._lock:
            if snap.snapshot_id not in self._snapshots:
                self.backend.write("snapshots", snap.snapshot_id, canonical.dump_bytes(snap.to_dict()))
                self.backend.append("snapshots", {"event": "put", "id": snap.snapshot_id, "tick": snap.taken_at})
                self._snapshots[snap.snapshot_id] = snap.taken_at
        return snap.snapshot_id

    def snapshot_device(self, registry, device_id: str, now: int) -> str:
        from .errors import GatherFailed

        view = registry.get_state(device_id, now)
        if not view.fresh:
            raise GatherFailed("stale", f"refusing to snapshot {device_id}: state from tick {view.state.last_updated}")
        return self.put_snapshot(Snapshot.capture(device_id, view.state.current_values, now))

    def get_snapshot(self, snapshot_id: str) -> Snapshot:
        if snapshot_id not in self._snapshots:
            raise NotFoundError(f"unknown snapshot {snapshot_id}")
        d = json.loads(self.backend.read("snapshots", snapshot_id))
        return Snapshot(d["snapshot_id"], d["device_id"], d["values"], d["taken_at"])

    def snapshot_values(self, snapshot_id: str) -> dict[str, Any]:
        return dict(self.get_snapshot(snapshot_id).values)

    def delete_snapshot(self, snapshot_id: str) -> None:
        with self._lock:
            if self._snapshots.pop(snapshot_id, None) is not None:
                self.backend.delete("snapshots", snapshot_id)
                self.backend.append("snapshots", {"event": "delete", "id": snapshot_id})

    def gc_snapshots(self, referenced: Iterable[str], keep_latest: int = 0) -> list[str]:
        """Delete snapshots not in ``referenced``; the newest ``keep_latest`` survive regardless."""
        keep = set(referenced)
        newest = sorted(self._snapshots, key=lambda s: (self._snapshots[s], s))[-keep_latest:] if keep_latest else []
        keep.update(newest)
        doomed = sorted(s for s in self._snapshots if s not in keep)
        for sid in doomed:
            self.delete_snapshot(sid)
        return doomed

    def snapshot_ids(self) -> list[str]:
        return sorted(self._snapshots)
