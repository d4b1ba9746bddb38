"""Exception types shared across the library."""


class DimensionError(ValueError):
    """Input has the wrong matrix or vector dimension for the requested map."""


class IllConditionedLogError(ValueError):
    """Logarithm requested too close to the branch cut, where the axis is not unique."""


class SingularityError(ValueError):
    """A rational map (Cayley inverse, linear blend) was evaluated at a singular point."""


class ZeroQuaternionError(ValueError):
    """Quaternion inversion or normalization of a (numerically) zero quaternion."""


class LyapunovError(ValueError):
    """Coefficient matrix of a Lyapunov equation is not symmetric positive definite."""


class PreconditionError(ValueError):
    """A documented precondition of an algorithm was violated."""


class IterationLimitError(RuntimeError):
    """A fixed-point iteration failed to converge within its iteration cap."""


class ProjectionDomainError(ValueError):
    """A matrix left the domain of the orthogonal projection (determinant not positive).

    ``element`` and ``det`` locate the failure when it happens inside a curve
    evaluation or an assembly loop.
    """

    def __init__(self, message, element=None, det=None):
        super().__init__(message)
        self.element = element
        self.det = det


class ZeroBlendError(ValueError):
    """A quaternion blend passed through (numerical) zero, so normalization is undefined."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DegenerateAxisError(ValueError):
    """Consecutive target directions are antipodal; the connecting rotation axis is undefined."""


class ProblemValidationError(ValueError):
    """A problem description violates the input contract (times, norms, flags)."""


class AssemblyError(RuntimeError):
    """Residual/Jacobian assembly failed at a specific element and quadrature point."""

    def __init__(self, message, element=None, quad_index=None):
        super().__init__(message)
        self.element = element
        self.quad_index = quad_index


class SolverDivergedError(RuntimeError):
    """The least-squares solver hit its iteration cap without meeting the stopping rule.

    Carries the best iterate seen so far and the step trace.
    """

    def __init__(self, message, best_x=None, trace=None):
        super().__init__(message)
        self.best_x = best_x
        self.trace = trace
