"""Exception hierarchy shared by every module."""


class DialpolError(Exception):
    pass


class ValidationError(DialpolError, ValueError):
    """Input violates a documented invariant."""


class ConfigError(ValidationError):
    """Inconsistent or out-of-range configuration."""


class ParseError(ValidationError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ContractError(DialpolError, RuntimeError):
    """An operation was called outside its precondition."""


class ConvergenceError(DialpolError, ArithmeticError):
    """An iterative routine hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations
