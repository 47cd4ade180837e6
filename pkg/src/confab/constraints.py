"""Boundary-constraint language for business scenarios.

A constraint is one line of infix text, for example::

    count(temp-sensing >= 1) >= 1 AND NOT(capabilities/sensing/polling_rate > 100)
    rpi-01::capabilities/power/charge_pct >= 20 OR online

Field references without a ``device::`` qualifier must hold for every member
state handed to the evaluator.  ``count(S >= L)`` counts members providing
service ``S`` at level ``L`` or better.  The full grammar lives in
``docs/constraint-grammar.ebnf``.

Missing devices or fields raise :class:`EvaluationError`; they never count
as false.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Mapping, Union

from .errors import ConstraintSyntaxError, EvaluationError, StructuralError
from .model import DeviceState, same_value

OPS = {
    "=": "=", "==": "=",
    "!=": "!=", "≠": "!=",
    "<": "<", "<=": "<=", "≤": "<=",
    ">": ">", ">=": ">=", "≥": ">=",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<op><=|>=|!=|==|≤|≥|≠|<|>|=)
  | (?P<string>"[^"]*"|'[^']*')
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?(?![\w/.:-]))
  | (?P<word>[A-Za-z0-9_][A-Za-z0-9_\-./:]*)
    """,
    re.VERBOSE,
)

KEYWORDS = {"and": "AND", "or": "OR", "not": "NOT", "count": "COUNT", "true": "TRUE", "false": "FALSE"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r} at {pos}")
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "word" and value.lower() in KEYWORDS:
                kind = KEYWORDS[value.lower()]
            tokens.append(Token(kind, value, pos))
        pos = m.end()
    tokens.append(Token("EOF", "", len(text)))
    return tokens


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class FieldRef:
    path: str
    device: str | None = None

    def __str__(self):
        return f"{self.device}::{self.path}" if self.device else self.path


@dataclass(frozen=True)
class Compare:
    ref: FieldRef
    op: str
    literal: Any

    def __str__(self):
        return f"{self.ref} {self.op} {_render_literal(self.literal)}"


@dataclass(frozen=True)
class Truth:
    ref: FieldRef

    def __str__(self):
        return str(self.ref)


@dataclass(frozen=True)
class ServiceCount:
    service: str
    min_level: int
    op: str
    threshold: int

    def __str__(self):
        return f"count({self.service} >= {self.min_level}) {self.op} {self.threshold}"


@dataclass(frozen=True)
class Not:
    operand: "Expr"

    def __str__(self):
        return f"NOT({self.operand})"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"

    def __str__(self):
        return f"({self.left} AND {self.right})"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"

    def __str__(self):
        return f"({self.left} OR {self.right})"


Expr = Union[Compare, Truth, ServiceCount, Not, And, Or]


def _render_literal(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    return repr(value)


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self, kind: str | None = None) -> Token:
        tok = self.tokens[self.i]
        if kind is not None and tok.kind != kind:
            expected = kind.lower()
            raise ConstraintSyntaxError(f"expected {expected} at {tok.pos}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def parse(self) -> Expr:
        expr = self.parse_or()
        self.take("EOF")
        return expr

    def parse_or(self) -> Expr:
        left = self.parse_and()
        while self.peek().kind == "OR":
            self.take()
            left = Or(left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_unary()
        while self.peek().kind == "AND":
            self.take()
            left = And(left, self.parse_unary())
        return left

    def parse_unary(self) -> Expr:
        if self.peek().kind == "NOT":
            self.take()
            return Not(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> Expr:
        tok = self.peek()
        if tok.kind == "lparen":
            self.take()
            inner = self.parse_or()
            self.take("rparen")
            return inner
        if tok.kind == "COUNT":
            return self.parse_count()
        if tok.kind == "word":
            ref = self.parse_ref()
            if self.peek().kind == "op":
                op = OPS[self.take().text]
                return Compare(ref, op, self.parse_literal())
            return Truth(ref)
        raise ConstraintSyntaxError(f"unexpected {tok.text or 'end of input'!r} at {tok.pos}")

    def parse_ref(self) -> FieldRef:
        word = self.take("word").text
        if "::" in word:
            device, _, path = word.partition("::")
            if not device or not path:
                raise ConstraintSyntaxError(f"malformed device reference {word!r}")
            return FieldRef(path, device)
        return FieldRef(word)

    def parse_literal(self) -> Any:
        tok = self.take()
        if tok.kind == "number":
            text = tok.text
            return float(text) if any(c in text for c in ".eE") else int(text)
        if tok.kind == "string":
            return tok.text[1:-1]
        if tok.kind == "TRUE":
            return True
        if tok.kind == "FALSE":
            return False
        if tok.kind == "word":
            return tok.text
        raise ConstraintSyntaxError(f"expected a literal at {tok.pos}, found {tok.text or 'end of input'!r}")

    def parse_count(self) -> ServiceCount:
        self.take("COUNT")
        self.take("lparen")
        service = self.take("word").text
        min_level = 1
        if self.peek().kind == "op":
            op = OPS[self.take().text]
            if op != ">=":
                raise ConstraintSyntaxError("service level filter must use >=")
            min_level = self._int()
        self.take("rparen")
        op_tok = self.take("op")
        return ServiceCount(service, min_level, OPS[op_tok.text], self._int())

    def _int(self) -> int:
        tok = self.take("number")
        try:
            return int(tok.text)
        except ValueError:
            raise ConstraintSyntaxError(f"expected an integer at {tok.pos}") from None


def parse(text: str) -> Expr:
    return _Parser(text).parse()


@dataclass(frozen=True)
class Constraint:
    expression: str
    constraint_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "_ast", parse(self.expression))

    @property
    def ast(self) -> Expr:
        return self._ast  # type: ignore[attr-defined]

    def devices(self) -> set[str]:
        return referenced_devices(self.ast)

    def to_dict(self) -> dict:
        return {"id": self.constraint_id, "expression": self.expression}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | str, default_id: str = "") -> "Constraint":
        if isinstance(d, str):
            return cls(d, default_id)
        return cls(d["expression"], d.get("id", default_id))


def referenced_devices(expr: Expr) -> set[str]:
    if isinstance(expr, (Compare, Truth)):
        return {expr.ref.device} if expr.ref.device else set()
    if isinstance(expr, Not):
        return referenced_devices(expr.operand)
    if isinstance(expr, (And, Or)):
        return referenced_devices(expr.left) | referenced_devices(expr.right)
    return set()


# --- evaluation ------------------------------------------------------------

def _compare(left: Any, op: str, right: Any) -> bool:
    if op == "=":
        return same_value(left, right)
    if op == "!=":
        return not same_value(left, right)
    numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (left, right))
    if not numeric and not (isinstance(left, str) and isinstance(right, str)):
        raise EvaluationError(f"cannot order {left!r} and {right!r}")
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def _targets(ref: FieldRef, states: Mapping[str, DeviceState]) -> list[DeviceState]:
    if ref.device is None:
        return [states[k] for k in sorted(states)]
    if ref.device not in states:
        raise EvaluationError(f"device {ref.device} missing from evaluated states", device=ref.device)
    return [states[ref.device]]


def _lookup(state: DeviceState, path: str) -> Any:
    try:
        return state.lookup(path)
    except KeyError:
        raise EvaluationError(f"device {state.device_id} has no field {path}", path=path) from None


def evaluate(expr: Expr, states: Mapping[str, DeviceState]) -> bool:
    if isinstance(expr, Compare):
        return all(_compare(_lookup(s, expr.ref.path), expr.op, expr.literal) for s in _targets(expr.ref, states))
    if isinstance(expr, Truth):
        result = True
        for s in _targets(expr.ref, states):
            value = _lookup(s, expr.ref.path)
            if not isinstance(value, bool):
                raise EvaluationError(f"{expr.ref} is not boolean on {s.device_id}")
            result = result and value
        return result
    if isinstance(expr, ServiceCount):
        n = sum(1 for s in states.values() if s.service_level(expr.service) >= expr.min_level)
        return _compare(n, expr.op, expr.threshold)
    if isinstance(expr, Not):
        return not evaluate(expr.operand, states)
    # evaluate both sides so that model errors surface regardless of short-circuiting
    if isinstance(expr, And):
        left, right = evaluate(expr.left, states), evaluate(expr.right, states)
        return left and right
    if isinstance(expr, Or):
        left, right = evaluate(expr.left, states), evaluate(expr.right, states)
        return left or right
    raise TypeError(f"not a constraint expression: {expr!r}")


def evaluate_constraint(c: Constraint | str, states: Mapping[str, DeviceState]) -> bool:
    """Evaluate a scenario boundary constraint over member states."""
    if isinstance(c, str):
        c = Constraint(c)
    return evaluate(c.ast, states)


@dataclass(frozen=True)
class BusinessScenario:
    scenario_id: str
    member_devices: frozenset[str]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        if not self.member_devices:
            raise StructuralError(f"scenario {self.scenario_id} has no members")
        stray = set().union(*(c.devices() for c in self.constraints)) - self.member_devices if self.constraints else set()
        if stray:
            raise StructuralError(f"scenario {self.scenario_id} constrains non-members {sorted(stray)}")

    def violated(self, states: Mapping[str, DeviceState]) -> list[str]:
        """Ids of constraints that evaluate false over the members' states."""
        member_states = {d: states[d] for d in self.member_devices if d in states}
        missing = self.member_devices - set(member_states)
        if missing:
            raise EvaluationError(f"scenario {self.scenario_id}: no state for {sorted(missing)}")
        return [c.constraint_id for c in self.constraints if not evaluate(c.ast, member_states)]

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "members": sorted(self.member_devices),
            "constraints": [c.to_dict() for c in self.constraints],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BusinessScenario":
        sid = d["scenario_id"]
        return cls(
            scenario_id=sid,
            member_devices=frozenset(d["members"]),
            constraints=tuple(Constraint.from_dict(c, f"{sid}/c{i}") for i, c in enumerate(d.get("constraints", []))),
        )
