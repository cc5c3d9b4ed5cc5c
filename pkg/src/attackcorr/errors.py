"""Exception hierarchy.

Input errors (bad documents, unknown references) map to CLI exit code 2,
model errors (inconsistent or unusable models) map to exit code 3.
"""

from __future__ import annotations


class AttackCorrError(Exception):
    exit_code = 1


class InputError(AttackCorrError):
    exit_code = 2


class ModelError(AttackCorrError):
    exit_code = 3


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + where)


class SchemaError(InputError):
    pass


class UnknownDetector(InputError):
    pass


class UnknownSubject(InputError):
    pass


class UnknownKind(InputError):
    pass


class UnknownRelation(InputError):
    pass


class ArityMismatch(ModelError):
    pass


class InconsistentTrace(ModelError):
    pass


class CyclicGraph(ModelError):
    pass


class UnknownPinnedLabel(ModelError):
    pass


class UnassessedGraph(ModelError):
    pass


class ModelMismatch(ModelError):
    pass


class TooLarge(ModelError):
    pass


class EvidenceConflict(ModelError):
    pass
