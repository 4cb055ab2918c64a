"""Typed error hierarchy shared by all modules.

Every error carries a stable ``code`` string so the CLI and the HTTP
service can surface the same machine-readable identifier.
"""

from __future__ import annotations


class WorkbenchError(Exception):
    """Base class for all covtune errors."""

    code = "error"

    def payload(self) -> dict:
        return {"error": self.code, "message": str(self)}


class DomainError(WorkbenchError):
    """A parameter value or definition violates its domain."""

    code = "domain"


class InvalidGroupError(WorkbenchError):
    code = "invalid-group"


class VectorLengthError(WorkbenchError):
    code = "vector-length-mismatch"


class BundleError(WorkbenchError):
    """Base for the five-file bundle contract violations."""

    code = "bundle"

    def __init__(self, message: str, file: str | None = None, line: int | None = None):
        self.file = file
        self.line = line
        where = ""
        if file is not None:
            where = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(where + message)

    def payload(self) -> dict:
        out = super().payload()
        if self.file is not None:
            out["file"] = self.file
        if self.line is not None:
            out["line"] = self.line
        return out


class ParseError(BundleError):
    code = "parse"


class SchemaError(BundleError):
    code = "schema"


class ConsistencyError(BundleError):
    code = "consistency"


class TooFewTrialsError(WorkbenchError):
    code = "too-few-trials"


class UnknownParameterError(WorkbenchError):
    code = "unknown-parameter"


class DegenerateLayoutError(WorkbenchError):
    code = "degenerate-layout"


class DuplicateGroupError(WorkbenchError):
    code = "duplicate-group"


class BuiltinGroupError(WorkbenchError):
    code = "builtin-group"


class EmptyGroupError(WorkbenchError):
    code = "empty-group"


class UnknownGroupError(WorkbenchError):
    code = "unknown-group"


class UnknownBucketError(WorkbenchError):
    code = "unknown-bucket"


class NoBranchesError(WorkbenchError):
    code = "no-branches"


class InvalidAlphaError(WorkbenchError):
    code = "invalid-alpha"


class PlanError(WorkbenchError):
    code = "plan"


class UnknownProfileError(WorkbenchError):
    code = "unknown-profile"


class InvalidConfigError(WorkbenchError):
    code = "invalid-config"


class JobError(WorkbenchError):
    code = "job"
