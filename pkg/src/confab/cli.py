"""Command-line entry point: ``confab <command> ...``.

Operator state lives in the store directory:

* ``journal.jsonl``: one record per state-changing command (submit, run, gc)
* ``events.jsonl``: the orchestration event log, rewritten after each run
* ``store/``: components, packages and snapshots
* ``rollouts/``: one summary document per rollout

Every command rebuilds the world in memory by replaying the journal over the
fleet bootstrap file; ``store/`` is rewritten only by state-changing commands,
so ``status``, ``ls`` and ``show`` never change anything.
"""

from __future__ import annotations

import argparse
import csv
import logging
import queue
import shutil
import sys
import threading
import time
from pathlib import Path
from typing import Sequence, TextIO

from . import __version__, canonical
from .commissioning import Commission
from .config import CliConfig, load_config
from .errors import ConfabError, ConfigError, NotFoundError, SafetyViolation
from .shipping import STRATEGIES, Strategy
from .sim import World, build_world
from .stores import NAMESPACES, DiskBackend, MemoryBackend

logger = logging.getLogger("confab")

JOURNAL = "journal.jsonl"
EVENTS = "events.jsonl"
METRICS_HEADER = ("tick", "node", "transfers_sent", "bytes_sent", "transfers_received", "bytes_received")


class Service:
    """The operator's view of one local cloud, rebuilt from its journal."""

    def __init__(self, cfg: CliConfig):
        if cfg.fleet is None:
            raise ConfigError("no fleet configured; pass --fleet or set [confab] fleet")
        self.cfg = cfg
        self.root = Path(cfg.store)
        self.root.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.root / JOURNAL
        self.world = self._replay()

    def _document(self) -> dict:
        doc = {
            "fleet": str(self.cfg.fleet),
            "default_components": (list(self.cfg.default_services) or True) if self.cfg.default_components else False,
            "policy": self.cfg.policy_doc(),
            "strategy": self.cfg.strategy_doc(),
            "config": self.cfg.world_config(),
            "seed": self.cfg.seed,
        }
        if self.cfg.components is not None:
            doc["components_dir"] = str(self.cfg.components)
        return doc

    def journal(self) -> list[dict]:
        if not self.journal_path.exists():
            return []
        return [canonical.load_document_text(line) for line in
                self.journal_path.read_text(encoding="utf-8").splitlines() if line.strip()]

    def _replay(self) -> World:
        world = build_world(self._document())
        for op in self.journal():
            self._apply(world, op)
        return world

    def _apply(self, world: World, op: dict) -> object:
        kind = op["op"]
        if kind == "submit":
            return world.submit(Commission.from_dict(op["commission"]), strict=op.get("strict", False))
        if kind == "run":
            world.strategy = Strategy(**op["strategy"])
            for _ in range(op["ticks"]):
                world.step()
            return None
        if kind == "gc":
            return world.configs.gc_snapshots(world.referenced_snapshots())
        raise ConfigError(f"journal holds unknown op {kind!r}")

    def record(self, op: dict) -> object:
        """Apply ``op`` to the live world, then append it to the journal."""
        result = self._apply(self.world, op)
        with open(self.journal_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical.dumps(op) + "\n")
        self.save()
        return result

    def submit(self, doc: dict) -> str:
        c = Commission.from_dict(doc)
        self.world.submit(c, strict=True)  # raises before anything is journaled
        with open(self.journal_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(canonical.dumps({"op": "submit", "commission": doc, "tick": self.world.clock.tick}) + "\n")
        self.save()
        return c.commission_id

    def idle(self) -> bool:
        return not self.world.intake.open_records() and all(ro.finished for ro in self.world.rollouts)

    def run(self, strategy: Strategy, max_ticks: int, until_idle: bool = True) -> int:
        world = self.world
        world.strategy = strategy
        ticks = 0
        try:
            while ticks < max_ticks and not (until_idle and self.idle()):
                world.step()
                ticks += 1
        finally:
            if ticks:
                strat = {"kind": strategy.kind, "poll_period": strategy.poll_period,
                         "origin_fanout": strategy.origin_fanout, "seeder_fanout": strategy.seeder_fanout}
                with open(self.journal_path, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(canonical.dumps({"op": "run", "strategy": strat, "ticks": ticks}) + "\n")
            self.save()
        return ticks

    def save(self) -> None:
        self.world.write_log(self.root / EVENTS)
        export_store(self.world.artifacts.backend, self.root / "store")
        rdir = self.root / "rollouts"
        rdir.mkdir(exist_ok=True)
        for ro in self.world.rollouts:
            canonical.write_document(rdir / f"{ro.rollout_id}.json", rollout_document(ro))


def export_store(backend: MemoryBackend, root: Path) -> None:
    """Materialise an in-memory store as the documented directory layout."""
    if root.exists():
        shutil.rmtree(root)
    disk = DiskBackend(root)
    for (ns, name), data in sorted(backend.objects.items()):
        disk.write(ns, name, data)
    for ns in NAMESPACES:
        for rec in backend.replay(ns):
            disk.append(ns, rec)


def rollout_document(ro) -> dict:
    doc = ro.summary()
    doc["transfers_log"] = [
        {"tick": t.tick, "sender": t.sender, "receiver": t.receiver, "package": t.package_id, "bytes": t.size}
        for t in ro.transfers
    ]
    doc["receipts"] = [r.to_dict() for r in ro.receipts]
    return doc


def write_metrics(world: World, out: Path) -> int:
    rows = world.metrics_rows()
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(rows)
    return len(rows)


# --- commands ------------------------------------------------------------

def cmd_commission_submit(args, cfg, out):
    svc = Service(cfg)
    cid = svc.submit(canonical.load_document(args.file))
    print(cid, file=out)


def cmd_commission_status(args, cfg, out):
    svc = Service(cfg)
    record = svc.world.intake.get(args.id)
    if args.json:
        out.write(canonical.pretty(record.to_dict()))
        return
    print(f"{args.id} {record.status}", file=out)
    for t in record.log:
        print(f"  t={t.tick} #{t.seq} {t.status}" + (f"  {t.note}" if t.note else ""), file=out)
    for n in record.notes:
        print(f"  note: {n}", file=out)


def cmd_transform_list(args, cfg, out):
    svc = Service(cfg)
    rows = [("KIND", "SUBJECT", "PLATFORM", "OS", "VERSIONS", "ID")]
    for comp in svc.world.artifacts.components():
        k = comp.key
        rng = f"[{k.min_version}, {k.max_version or '*'})"
        rows.append((k.kind, k.subject, k.platform, k.os_platform, rng, comp.component_id))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip(), file=out)


def cmd_store_ls(args, cfg, out):
    svc = Service(cfg)
    configs = svc.world.configs
    for cid in svc.world.artifacts.ids():
        print(f"component {cid}", file=out)
    for pid in configs.package_ids():
        print(f"package {pid}" + (" golden" if configs.is_golden(pid) else ""), file=out)
    for sid in configs.snapshot_ids():
        print(f"snapshot {sid}", file=out)


def cmd_store_show(args, cfg, out):
    svc = Service(cfg)
    world = svc.world
    ident = args.id
    if ident.startswith("pkg-"):
        stored = world.configs.get_stored(ident)
        doc = {**stored.package.summary(), "golden": stored.golden, "stored_at": stored.stored_at}
    elif ident.startswith("snap-"):
        doc = world.configs.get_snapshot(ident).to_dict()
    elif ident in world.artifacts.ids():
        doc = canonical.load_document_text(world.artifacts.get_raw(ident).decode("utf-8"))
    else:
        raise NotFoundError(f"no stored object {ident}")
    out.write(canonical.pretty(doc))


def cmd_store_gc(args, cfg, out):
    svc = Service(cfg)
    deleted = svc.record({"op": "gc"})
    for sid in deleted:
        print(f"deleted {sid}", file=out)
    print(f"{len(deleted)} snapshot(s) removed", file=out)


def _strategy_from(args, cfg: CliConfig) -> Strategy:
    base = cfg.strategy
    return Strategy(
        args.strategy or base.kind,
        args.poll_period or base.poll_period,
        args.origin_fanout or base.origin_fanout,
        args.seeder_fanout or base.seeder_fanout,
    )


def cmd_rollout_run(args, cfg, out):
    svc = Service(cfg)
    before = {ro.rollout_id for ro in svc.world.rollouts}
    ticks = svc.run(_strategy_from(args, cfg), args.max_ticks)
    print(f"ran {ticks} tick(s); now at tick {svc.world.clock.tick}", file=out)
    for ro in svc.world.rollouts:
        if ro.rollout_id not in before:
            state = "finished" if ro.finished else "open"
            print(f"{ro.rollout_id} {ro.strategy.kind} {state} "
                  f"transfers={len(ro.transfers)} devices={','.join(sorted(ro.packages))}", file=out)
    for record in svc.world.intake.records.values():
        if record.log and record.log[-1].tick >= svc.world.clock.tick - ticks:
            print(f"{record.commission.commission_id} {record.status}", file=out)


def cmd_rollout_status(args, cfg, out):
    svc = Service(cfg)
    for ro in svc.world.rollouts:
        if ro.rollout_id == args.id:
            out.write(canonical.pretty(rollout_document(ro) if args.json else ro.summary()))
            return
    raise NotFoundError(f"unknown rollout {args.id}")


def _scenario_world(args, cfg_overrides: dict) -> World:
    path = Path(args.scenario)
    doc = canonical.load_document(path)
    return build_world(doc, base=path.parent, overrides=cfg_overrides)


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.policy is not None:
        ov["policy"] = args.policy
    return ov


def _sim_overrides(args, doc_policy) -> dict:
    ov = _overrides(args)
    if "policy" in ov and isinstance(doc_policy, dict):
        ov["policy"] = {**doc_policy, "kind": args.policy}
    return ov


def cmd_sim_run(args, cfg, out):
    path = Path(args.scenario)
    doc = canonical.load_document(path)
    world = build_world(doc, base=path.parent, overrides=_sim_overrides(args, doc.get("policy")))
    violation = None
    try:
        world.run(args.ticks)
    except SafetyViolation as exc:
        violation = exc
    if args.out:
        world.write_log(args.out)
    if args.metrics:
        write_metrics(world, Path(args.metrics))
    counts: dict[str, int] = {}
    for record in world.intake.records.values():
        counts[record.status] = counts.get(record.status, 0) + 1
    print(f"ticks={world.clock.tick} events={len(world.events)} "
          + " ".join(f"{k}={v}" for k, v in sorted(counts.items())), file=out)
    if violation is not None:
        raise violation


def cmd_metrics_export(args, cfg, out):
    if args.scenario:
        path = Path(args.scenario)
        doc = canonical.load_document(path)
        world = build_world(doc, base=path.parent, overrides=_sim_overrides(args, doc.get("policy")))
        world.run(args.ticks)
    else:
        world = Service(cfg).world
    n = write_metrics(world, Path(args.out))
    print(f"wrote {n} row(s) to {args.out}", file=out)


def _watch_inbox(inbox: Path, sink: queue.Queue, stop: threading.Event, interval: float) -> None:
    seen: set[str] = set()
    while not stop.is_set():
        for p in sorted(inbox.glob("*.json")):
            if p.name not in seen:
                seen.add(p.name)
                sink.put(p)
        stop.wait(interval)


def cmd_serve(args, cfg, out):
    svc = Service(cfg)
    inbox = Path(args.inbox) if args.inbox else svc.root / "inbox"
    for sub in ("", "accepted", "rejected"):
        (inbox / sub).mkdir(parents=True, exist_ok=True)
    arrivals: queue.Queue = queue.Queue()
    stop = threading.Event()
    reader = threading.Thread(target=_watch_inbox, args=(inbox, arrivals, stop, args.interval / 2 or 0.01),
                              daemon=True)
    reader.start()
    strategy = _strategy_from(args, cfg)
    ticks = 0
    try:
        while args.ticks is None or ticks < args.ticks:
            time.sleep(args.interval)
            while True:
                try:
                    p = arrivals.get_nowait()
                except queue.Empty:
                    break
                try:
                    cid = svc.submit(canonical.load_document(p))
                    print(f"accepted {cid}", file=out)
                    shutil.move(str(p), inbox / "accepted" / p.name)
                except ConfabError as exc:
                    print(f"rejected {p.name}: {exc.category}: {exc}", file=out)
                    shutil.move(str(p), inbox / "rejected" / p.name)
            svc.run(strategy, 1, until_idle=False)
            ticks += 1
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        reader.join(timeout=1)
    print(f"served {ticks} tick(s); now at tick {svc.world.clock.tick}", file=out)


# --- argument parsing ----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confab", description="Configuration orchestration for IoT local clouds.")
    parser.add_argument("--version", action="version", version=f"confab {__version__}")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--fleet", help="fleet bootstrap document (overrides config)")
    parser.add_argument("--store", help="state and store directory (overrides config)")
    parser.add_argument("--policy", choices=("static", "market", "fifo"), help="scheduling policy")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("commission", help="submit or inspect commissions")
    csub = p.add_subparsers(dest="action", required=True)
    s = csub.add_parser("submit", help="submit a commission document")
    s.add_argument("file")
    s.set_defaults(func=cmd_commission_submit)
    s = csub.add_parser("status", help="print status and transition log")
    s.add_argument("id")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_commission_status)

    p = sub.add_parser("transform", help="transformation components")
    tsub = p.add_subparsers(dest="action", required=True)
    tsub.add_parser("list", help="print the resolution table").set_defaults(func=cmd_transform_list)

    p = sub.add_parser("store", help="inspect the artifact and configuration stores")
    ssub = p.add_subparsers(dest="action", required=True)
    ssub.add_parser("ls").set_defaults(func=cmd_store_ls)
    s = ssub.add_parser("show")
    s.add_argument("id")
    s.set_defaults(func=cmd_store_show)
    ssub.add_parser("gc", help="delete unreferenced snapshots").set_defaults(func=cmd_store_gc)

    p = sub.add_parser("rollout", help="run or inspect rollouts")
    rsub = p.add_subparsers(dest="action", required=True)
    s = rsub.add_parser("run", help="run the orchestration loop until idle")
    _strategy_args(s)
    s.add_argument("--max-ticks", type=_positive, default=200)
    s.set_defaults(func=cmd_rollout_run)
    s = rsub.add_parser("status")
    s.add_argument("id")
    s.add_argument("--json", action="store_true", help="include transfers and receipts")
    s.set_defaults(func=cmd_rollout_status)

    p = sub.add_parser("sim", help="simulation")
    msub = p.add_subparsers(dest="action", required=True)
    s = msub.add_parser("run", help="run a scenario file")
    s.add_argument("--scenario", required=True)
    s.add_argument("--ticks", type=_positive, required=True)
    s.add_argument("--out", help="event log path")
    s.add_argument("--metrics", help="also write transfer metrics CSV here")
    s.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("metrics", help="transfer metrics")
    xsub = p.add_subparsers(dest="action", required=True)
    s = xsub.add_parser("export")
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", help="simulate this scenario instead of the service state")
    s.add_argument("--ticks", type=_positive, default=100)
    s.set_defaults(func=cmd_metrics_export)

    s = sub.add_parser("serve", help="run the loop, accepting commissions from an inbox directory")
    s.add_argument("--inbox")
    s.add_argument("--ticks", type=_positive, help="stop after this many ticks")
    s.add_argument("--interval", type=float, default=1.0, help="seconds per tick")
    _strategy_args(s)
    s.set_defaults(func=cmd_serve)
    return parser


def _positive(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if n <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return n


def _strategy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--origin-fanout", type=_positive)
    p.add_argument("--seeder-fanout", type=_positive)
    p.add_argument("--poll-period", type=_positive)


def _effective_config(args) -> CliConfig:
    cfg = load_config(args.config)
    if args.fleet:
        cfg.fleet = Path(args.fleet)
    if args.store:
        cfg.store = Path(args.store)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.policy is not None:
        cfg.policy = type(cfg.policy)(args.policy, cfg.policy.renewal_period, cfg.policy.renewal_amount)
    cfg.check()
    return cfg


def run_command(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=err)
    try:
        cfg = _effective_config(args)
        args.func(args, cfg, out)
    except ConfabError as exc:
        print(f"error: {exc.category}: {exc}", file=err)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: io: {exc}", file=err)
        return 1
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
