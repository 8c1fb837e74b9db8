"""Exception hierarchy shared across the toolkit.

Errors deriving from InputError indicate a problem with user-supplied
input (bad netlist text, malformed config, out-of-range arguments) and
map to CLI exit code 1.  Everything else is a runtime failure and maps
to exit code 2.
"""


class IrgridError(Exception):
    """Base class for all toolkit errors."""


class InputError(IrgridError):
    """User input failed validation."""


class ParseError(InputError):
    """Netlist text violates the grammar.  Carries line/column position."""

    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


class ValidationFailure(InputError):
    """A netlist failed semantic validation.  Carries the diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"netlist validation failed: {lines}")


class FormatError(InputError):
    """A tensor container or checkpoint file violates its format."""


class SolveError(IrgridError):
    """The linear solver failed to reach the requested residual."""


class TrainingError(IrgridError):
    """Training diverged or was misconfigured at runtime."""
