"""Exception hierarchy shared by the library and the command-line front end."""


class SpaceTsivError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SpaceTsivError, ValueError):
    """Malformed or dimensionally inconsistent input (CLI exit status 2)."""


class ParseError(InputError):
    """A text input could not be parsed.

    The message names the file and, when known, the line and column.
    """

    def __init__(self, path, message, line=None, column=None):
        self.path = str(path)
        self.line = line
        self.column = column
        where = self.path
        if line is not None:
            where += f", line {line}"
        if column is not None:
            where += f", column {column!r}"
        super().__init__(f"{where}: {message}")


class DimensionMismatchError(InputError):
    """Two inputs disagree on a shape."""


class DegenerateColumnError(InputError):
    """A data column has zero sum of squares."""


class NumericalError(SpaceTsivError, ArithmeticError):
    """A numerical precondition failed (CLI exit status 3)."""


class NearSingularError(NumericalError):
    """An instrument correlation matrix is too close to singular to invert."""

    def __init__(self, name, min_eig, max_eig):
        self.name = name
        self.min_eig = min_eig
        self.max_eig = max_eig
        super().__init__(
            f"near-singular instrument correlation: {name} has eigenvalue range "
            f"[{min_eig:.3g}, {max_eig:.3g}]"
        )


class InconsistentMarginalError(NumericalError):
    """The marginal statistics imply a nonpositive residual variance."""


class RankDeficientError(NumericalError):
    """The instrument design matrix Z^T Z is not invertible."""


class DegenerateWeightError(NumericalError):
    """The Q-statistic weight matrix is singular or indefinite."""

    def __init__(self, eigenvalue, max_eigenvalue):
        self.eigenvalue = eigenvalue
        self.max_eigenvalue = max_eigenvalue
        super().__init__(
            f"degenerate weight matrix: eigenvalue {eigenvalue:.6g} "
            f"(largest {max_eigenvalue:.6g})"
        )


class OverParameterizedError(NumericalError, ValueError):
    """A support has more free coefficients than there are moment conditions."""
