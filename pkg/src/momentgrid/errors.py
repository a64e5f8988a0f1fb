"""Exception types shared across the package."""


class MomentGridError(Exception):
    """Base class for all package errors."""


class InputError(MomentGridError):
    """Malformed or inconsistent user input (maps to CLI exit code 4)."""


class CaseSyntaxError(InputError):
    pass


class DanglingBranch(InputError):
    pass


class MissingSection(InputError):
    pass


class ZeroImpedanceBranch(InputError):
    pass


class MergedBoundsEmpty(InputError):
    pass


class UnsupportedObjective(InputError):
    pass


class NegativeRadius(InputError):
    pass


class NotQuadratic(InputError):
    pass


class OrderTooLow(InputError):
    pass


class UncoveredConstraint(InputError):
    pass


class PopSyntaxError(InputError):
    pass


class ConicFormatError(InputError):
    pass


class CompletionFailure(MomentGridError):
    pass


class CycleInconsistent(CompletionFailure):
    pass


class RankTooHigh(CompletionFailure):
    pass


class StitchFailure(MomentGridError):
    pass


class MaxItersExceeded(MomentGridError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
