"""Operator configuration (INI) for the command-line service.

Example::

    [confab]
    fleet = fleet.json
    components = components/
    store = state/
    seed = 7
    staleness_threshold = 30
    shipping_budget = 50
    retry_budget = 3
    default_components = true
    default_services = diagnostics, security:tls

    [scheduler]
    policy = market

    [market]
    renewal_period = 10
    renewal_amount = 10

    [market.participants]
    ops = 1/2 100        # gravity weight, starting balance

    [strategy]
    kind = seed
    poll_period = 5
    origin_fanout = 1
    seeder_fanout = 1

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .scheduler import POLICIES, Participant, Policy
from .shipping import STRATEGIES, Strategy

DEFAULT_STORE = "confab-state"


@dataclass
class CliConfig:
    fleet: Path | None = None
    components: Path | None = None
    store: Path = Path(DEFAULT_STORE)
    default_components: bool = True
    default_services: tuple[str, ...] = ()
    policy: Policy = field(default_factory=Policy)
    participants: tuple[Participant, ...] = ()
    strategy: Strategy = field(default_factory=Strategy)
    staleness_threshold: int = 30
    shipping_budget: int = 50
    retry_budget: int = 3
    seed: int = 0

    def check(self) -> None:
        for name in ("fleet", "components"):
            p = getattr(self, name)
            if p is not None and not p.exists():
                raise ConfigError(f"{name} path {p} does not exist")
        for name in ("staleness_threshold", "shipping_budget", "retry_budget"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def world_config(self) -> dict:
        """The ``config`` block understood by :func:`confab.sim.build_world`."""
        return {
            "staleness_threshold": self.staleness_threshold,
            "retry_budget": self.retry_budget,
            "factory": {"shipping_budget": self.shipping_budget},
        }

    def policy_doc(self) -> dict:
        return {
            "kind": self.policy.kind,
            "renewal_period": self.policy.renewal_period,
            "renewal_amount": self.policy.renewal_amount,
            "participants": {
                p.participant_id: {"weight": str(p.gravity_weight), "balance": p.balance} for p in self.participants
            },
        }

    def strategy_doc(self) -> dict:
        s = self.strategy
        return {"kind": s.kind, "poll_period": s.poll_period, "origin_fanout": s.origin_fanout,
                "seeder_fanout": s.seeder_fanout}


def _int(section: configparser.SectionProxy, key: str, default: int) -> int:
    try:
        return section.getint(key, default)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be an integer") from None


def load_config(path: str | Path | None) -> CliConfig:
    cfg = CliConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(value: str | None) -> Path | None:
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    main = parser["confab"] if parser.has_section("confab") else parser[parser.default_section]
    cfg.fleet = resolve(main.get("fleet"))
    cfg.components = resolve(main.get("components"))
    cfg.store = resolve(main.get("store")) or base / DEFAULT_STORE
    try:
        cfg.default_components = main.getboolean("default_components", True)
    except ValueError:
        raise ConfigError("[confab] default_components must be a boolean") from None
    cfg.default_services = tuple(sorted(x.strip() for x in main.get("default_services", "").split(",") if x.strip()))
    cfg.seed = _int(main, "seed", 0)
    cfg.staleness_threshold = _int(main, "staleness_threshold", 30)
    cfg.shipping_budget = _int(main, "shipping_budget", 50)
    cfg.retry_budget = _int(main, "retry_budget", 3)

    kind = parser.get("scheduler", "policy", fallback="static")
    if kind not in POLICIES:
        raise ConfigError(f"unknown policy {kind!r}")
    if parser.has_section("market"):
        m = parser["market"]
        cfg.policy = Policy(kind, _int(m, "renewal_period", 10), _int(m, "renewal_amount", 10))
    else:
        cfg.policy = Policy(kind)
    if parser.has_section("market.participants"):
        people = []
        for pid, raw in parser["market.participants"].items():
            parts = raw.split()
            try:
                weight = Fraction(parts[0])
                balance = int(parts[1]) if len(parts) > 1 else 0
            except (ValueError, IndexError, ZeroDivisionError):
                raise ConfigError(f"[market.participants] {pid}: expected '<weight> [balance]'") from None
            people.append(Participant(pid, balance, weight))
        cfg.participants = tuple(sorted(people, key=lambda p: p.participant_id))
    if parser.has_section("strategy"):
        s = parser["strategy"]
        strat = s.get("kind", "push")
        if strat not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strat!r}")
        cfg.strategy = Strategy(strat, _int(s, "poll_period", 5), _int(s, "origin_fanout", 1),
                                _int(s, "seeder_fanout", 1))
    cfg.check()
    return cfg
