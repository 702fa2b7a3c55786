"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies rather than bare ValueError/RuntimeError.
"""


class ValidationError(ValueError):
    """Bad inputs: shapes, ranges, unknown names, malformed config."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or a degenerate factorization."""


class IntegrityError(RuntimeError):
    """A file on disk is corrupt, truncated, or from an incompatible version."""
