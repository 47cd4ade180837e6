"""Exception hierarchy.

Each error carries a short machine-parsable ``category`` which the CLI prints
as ``error: <category>: <message>``.
"""

from __future__ import annotations


class ConfabError(Exception):
    category = "error"

    def __init__(self, message: str = "", **detail):
        super().__init__(message)
        self.detail = detail


class StructuralError(ConfabError):
    """Document does not have the shape a model requires (unknown class, bad OFM...)."""

    category = "structural"


class ValidationError(ConfabError):
    category = "validation"

    def __init__(self, message: str = "", report=None, **detail):
        super().__init__(message, **detail)
        self.report = list(report or [])


class EvaluationError(ConfabError):
    category = "evaluation"


class ConstraintSyntaxError(ConfabError):
    category = "constraint-syntax"


class ProjectionError(ConfabError):
    category = "projection"


class NotFoundError(ConfabError, KeyError):
    category = "not-found"

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class RegistrationConflict(ConfabError):
    category = "conflict"


class StaleWriteError(ConfabError):
    category = "stale-write"


class UnresolvedTargetError(ConfabError):
    category = "unresolved-target"

    def __init__(self, offenders, message: str = ""):
        self.offenders = sorted(offenders)
        super().__init__(message or f"unresolved targets: {', '.join(self.offenders)}")


class CommissionRejected(ConfabError):
    category = "rejected"

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(message or reason)


class LifecycleError(ConfabError):
    category = "lifecycle"


class GatherFailed(ConfabError):
    category = "gather-failed"

    def __init__(self, reason: str, message: str = "", key=None):
        self.reason = reason
        self.key = key
        super().__init__(message or reason)


class BuildFailed(ConfabError):
    category = "build-failed"

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(message or reason)


class CorruptionError(ConfabError):
    category = "corruption"


class StoreConflict(ConfabError):
    category = "store-conflict"


class StoreUnavailable(ConfabError):
    category = "store-unavailable"


class RevertImpossible(ConfabError):
    category = "revert-impossible"


class PlanError(ConfabError):
    category = "plan"


class SafetyViolation(ConfabError):
    """Raised by the global audit when a scenario constraint fails on registry states."""

    category = "safety-violation"


class ConfigError(ConfabError):
    category = "config"
