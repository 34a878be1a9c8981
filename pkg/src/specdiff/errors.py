"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class SpecDiffError(Exception):
    """Base class for every error raised by specdiff."""


class SpecError(SpecDiffError):
    pass


class SpecParseError(SpecError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class UnsupportedConstructError(SpecError):
    def __init__(self, construct: str, path: str, method: str | None = None):
        self.construct = construct
        self.path = path
        self.method = method
        owner = f"method {method!r}, " if method else ""
        super().__init__(f"unsupported schema construct {construct!r} at {owner}path {path or '/'}")


class InvariantViolation(SpecError):
    def __init__(self, message: str, path: str = "", method: str | None = None):
        self.path = path
        self.method = method
        owner = f"method {method!r}, " if method else ""
        super().__init__(f"{message} ({owner}path {path or '/'})")


class AnnotationError(SpecDiffError):
    def __init__(self, method: str, field_path: str, cause: str):
        self.method = method
        self.field_path = field_path
        super().__init__(f"policy annotation failed for {method} at {field_path or '/'}: {cause}")


class GenerationError(SpecDiffError):
    pass


class UnsupportedRegexError(GenerationError):
    def __init__(self, construct: str, pattern: str):
        self.construct = construct
        self.pattern = pattern
        super().__init__(f"unsupported regex construct {construct!r} in pattern {pattern!r}")


class UnsatisfiableSchemaError(GenerationError):
    pass


class InapplicableCategoryError(GenerationError):
    def __init__(self, category: str, method: str):
        self.category = category
        self.method = method
        super().__init__(f"invalid category {category!r} does not apply to {method}")


class FactError(SpecDiffError):
    pass


class EmptyFactStoreError(FactError):
    pass


class MissingAnchorError(FactError):
    pass


class ConfigError(SpecDiffError):
    pass


class ReadinessError(SpecDiffError):
    def __init__(self, report):
        self.report = report
        super().__init__("fleet not ready: " + "; ".join(report.failures))


class OracleError(SpecDiffError):
    pass


class UndefinedRateError(SpecDiffError, ZeroDivisionError):
    pass
