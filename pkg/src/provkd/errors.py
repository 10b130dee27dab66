"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto its documented codes (2 = data error, 3 = numerical failure).
"""

from __future__ import annotations


class ProvKDError(Exception):
    exit_code = 2
    stage: str | None = None

    def with_stage(self, stage: str) -> "ProvKDError":
        self.stage = stage
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class DataError(ProvKDError):
    exit_code = 2


class NumericalError(ProvKDError):
    exit_code = 3


class MalformedRecord(DataError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: malformed record{': ' + reason if reason else ''}")


class IllegalRelation(DataError):
    def __init__(self, line_no: int, relation: str, subject_kind: str, object_kind: str):
        self.line_no = line_no
        self.relation = relation
        super().__init__(
            f"line {line_no}: relation {relation!r} is not legal for "
            f"{subject_kind} -> {object_kind}"
        )


class InvalidConfig(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class DegenerateFlow(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class NonFiniteInput(NonFinite):
    pass


class NoConvergence(NumericalError):
    def __init__(self, column: int, residual: float):
        self.column = column
        self.residual = residual
        super().__init__(f"CG did not converge on column {column} (relative residual {residual:.3e})")
