"""Exception hierarchy shared by every module of the package."""


class PinnError(Exception):
    """Base class; the CLI maps every subclass to a nonzero exit status."""

    kind = "error"


class UnboundVariableError(PinnError, KeyError):
    kind = "unbound-variable"

    def __init__(self, name):
        super().__init__(f"input variable {name!r} is not bound")
        self.name = name

    def __str__(self):
        return self.args[0]


class NumericOverflowError(PinnError, ArithmeticError):
    kind = "numeric-overflow"

    def __init__(self, index, op):
        super().__init__(f"non-finite value produced at node {index} ({op})")
        self.index = index
        self.op = op


class NonDifferentiableError(PinnError, ArithmeticError):
    kind = "non-differentiable"


class ConfigurationError(PinnError, ValueError):
    kind = "configuration"


class RegionError(PinnError, ValueError):
    kind = "region"


class GeometryError(PinnError, ValueError):
    kind = "geometry"


class SamplingError(PinnError, ValueError):
    kind = "sampling"


class DivergenceError(PinnError, FloatingPointError):
    kind = "divergence"

    def __init__(self, message, term=None, history=None):
        super().__init__(message)
        self.term = term
        self.history = history if history is not None else []


class UnphysicalResultError(PinnError, ValueError):
    kind = "unphysical-result"


class SolverError(PinnError, RuntimeError):
    kind = "solver"

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history or []


class SchemaError(PinnError, ValueError):
    kind = "schema"
