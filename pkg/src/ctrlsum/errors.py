"""Exception hierarchy."""
from __future__ import annotations


class CtrlSumError(Exception):
    """Base class for all package errors."""


# input validation

class EmptyUnit(CtrlSumError, ValueError):
    pass


class DimensionMismatch(CtrlSumError, ValueError):
    pass


class EmptySummary(CtrlSumError, ValueError):
    pass


class EmptySource(CtrlSumError, ValueError):
    pass


class EmptyTopics(CtrlSumError, ValueError):
    pass


class EmptyUtterances(CtrlSumError, ValueError):
    pass


class EmptyInput(CtrlSumError, ValueError):
    pass


class EmptyOutput(CtrlSumError, ValueError):
    pass


class KindMismatch(CtrlSumError, ValueError):
    pass


class LengthMismatch(CtrlSumError, ValueError):
    pass


class UnresolvedPlaceholder(CtrlSumError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


# remote services

class ServiceUnavailable(CtrlSumError):
    """A remote dependency failed; the run cannot continue."""


class ModelUnavailable(ServiceUnavailable):
    pass


class ProviderUnavailable(ServiceUnavailable):
    pass


class MalformedResponse(ModelUnavailable):
    pass


class ScriptExhausted(CtrlSumError):
    pass


# data files

class ParseError(CtrlSumError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class MissingField(ParseError):
    def __init__(self, field: str, line: int | None = None):
        super().__init__("missing required field", line=line, field=field)


class LabelMissing(CtrlSumError, ValueError):
    def __init__(self, kind: object, sample_id: str | None = None):
        self.kind = kind
        self.sample_id = sample_id
        msg = f"no label/context for {kind}"
        if sample_id is not None:
            msg += f" in sample {sample_id!r}"
        super().__init__(msg)


class SchemaError(CtrlSumError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmptyPopulation(CtrlSumError, ValueError):
    pass
