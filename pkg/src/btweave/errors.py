"""Exception types shared across btweave modules."""

from __future__ import annotations


class BtweaveError(Exception):
    """Base class for every error raised by btweave."""


class UnknownVariable(BtweaveError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown variable {self.name!r}"


class TypeMismatch(BtweaveError, TypeError):
    def __init__(self, variable: str, expected: str, actual: str):
        super().__init__(variable, expected, actual)
        self.variable = variable
        self.expected = expected
        self.actual = actual

    def __str__(self) -> str:
        return f"type mismatch on {self.variable!r}: expected {self.expected}, got {self.actual}"


class ConditionSyntaxError(BtweaveError, ValueError):
    """Malformed condition text; ``offset`` is the 1-based column of the bad token."""

    def __init__(self, offset: int, expected: str, text: str = ""):
        super().__init__(offset, expected)
        self.offset = offset
        self.expected = expected
        self.text = text

    def __str__(self) -> str:
        return f"condition syntax error at offset {self.offset}: expected {self.expected}"


class UnboundAction(BtweaveError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"no implementation registered for action {self.name!r}"


class StateSpaceTooLarge(BtweaveError):
    pass


class DuplicateSkill(BtweaveError):
    pass


class UnsatisfiablePost(BtweaveError):
    pass


class MissingParam(BtweaveError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"missing binding for in-parameter {self.name!r}"


class DepthExceeded(BtweaveError):
    pass


class AlphabetMismatch(BtweaveError):
    pass


class RoleReuse(BtweaveError):
    pass


class DecodeError(BtweaveError, ValueError):
    def __init__(self, offset: int, reason: str):
        super().__init__(offset, reason)
        self.offset = offset
        self.reason = reason

    def __str__(self) -> str:
        return f"cannot decode message at byte {self.offset}: {self.reason}"


class UnlinkedPort(BtweaveError):
    pass


class TransportFailure(BtweaveError):
    def __init__(self, link: str):
        super().__init__(link)
        self.link = link


class ProtocolViolation(BtweaveError):
    pass


class ControlCycleError(BtweaveError):
    pass


class DslSyntaxError(BtweaveError):
    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        super().__init__(line, col, expected)
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found

    def __str__(self) -> str:
        found = f", found {self.found!r}" if self.found else ""
        return f"{self.line}:{self.col}: syntax error: expected {self.expected}{found}"


class ResolutionError(BtweaveError):
    def __init__(self, diagnostics):
        super().__init__(diagnostics)
        self.diagnostics = list(diagnostics)

    def __str__(self) -> str:
        return "\n".join(str(d) for d in self.diagnostics)
