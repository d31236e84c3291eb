"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DualGraphError(Exception):
    """Base class for all domain errors raised by the package."""


class MalformedInput(DualGraphError):
    pass


class MissingImage(DualGraphError):
    def __init__(self, unit_id: str, path: str) -> None:
        super().__init__(f"unit {unit_id!r}: image {path!r} does not exist")
        self.unit_id = unit_id
        self.path = path


class VersionMismatch(DualGraphError):
    pass


class IoFailure(DualGraphError):
    pass


class DimensionMismatch(DualGraphError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"expected vector of dimension {expected}, got {got}")
        self.expected = expected
        self.got = got


class EmptyGraph(DualGraphError):
    pass


class ModelError(DualGraphError):
    """Raised by model clients."""


class TransientModelError(ModelError):
    """Timeouts, rate limits and server-side failures; retried by the client."""


class ModelUnavailable(ModelError):
    pass


class AuthFailure(ModelError):
    pass


class ScriptExhausted(ModelError):
    """The scripted client has no response left for a role."""


class ModelOutputUnparseable(DualGraphError):
    def __init__(self, role: str, detail: str, raw: str = "") -> None:
        super().__init__(f"{role}: {detail}")
        self.role = role
        self.raw = raw


class UnknownTemplate(DualGraphError):
    pass


class UnboundPlaceholder(DualGraphError):
    def __init__(self, placeholder: str) -> None:
        super().__init__(f"no binding for placeholder {placeholder}")
        self.placeholder = placeholder


class TagNotFound(DualGraphError):
    pass


class Unparseable(DualGraphError):
    pass


class InvalidDag(DualGraphError):
    def __init__(self, violations: list) -> None:
        super().__init__("invalid planning graph: " + "; ".join(str(v) for v in violations))
        self.violations = violations


class CycleDetected(DualGraphError):
    pass
