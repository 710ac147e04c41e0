"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
process exit status without a lookup table: 1 for usage/config problems,
2 for data/validation problems, 3 for runtime (training/tracking) failures.
"""

from __future__ import annotations


class EcoBenchError(Exception):
    exit_code = 3


class ConfigError(EcoBenchError):
    exit_code = 1


class ParameterError(ConfigError, ValueError):
    pass


class DataError(EcoBenchError):
    exit_code = 2


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, problems: list[tuple[int, str, str]]):
        self.problems = problems
        shown = "; ".join(f"row {r} column {c!r}: {v!r}" for r, c, v in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"unparseable cells: {shown}{more}")


class ValidationError(DataError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"{report.total_violations} invariant violation(s): {dict(report.rule_counts)}")


class EncodingError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class StratificationError(DataError):
    pass


class SmoteError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class JoinError(DataError):
    pass


class NumericError(EcoBenchError):
    pass


class CalibrationError(EcoBenchError):
    pass


class TraceError(EcoBenchError):
    pass


class BackendError(EcoBenchError):
    pass


class TrackerBusyError(EcoBenchError):
    """Raised when a second energy tracker is started while one is active."""
