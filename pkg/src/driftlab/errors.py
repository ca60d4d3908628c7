"""Shared exception types.

The CLI maps these onto exit codes: ContractError/ParseError -> 2,
NumericError -> 3, InfeasibleError -> 4.
"""


class ContractError(ValueError):
    """A precondition on an operation or type invariant was violated."""


class DimensionError(ContractError):
    """Shapes or widths do not agree."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or otherwise failed numerically."""


class InfeasibleError(ValueError):
    """A transport or flow problem has no feasible solution."""


class ParseError(ValueError):
    """An input file could not be parsed. Carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(ValueError):
    """A statistic is undefined for the given inputs."""
