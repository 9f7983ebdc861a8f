"""Exception types shared across the library."""


class MonosdeError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(MonosdeError, ValueError):
    """A precondition on a user-supplied parameter is violated."""


class DimensionMismatchError(MonosdeError, ValueError):
    """Grids or dimensions of two objects do not agree."""


class UnknownModelError(MonosdeError, KeyError):
    """Requested model name is not in the zoo."""


class OutOfDomainError(MonosdeError, ValueError):
    """A model parameter or initial condition is outside the documented domain."""


class NoClosedFormError(MonosdeError):
    """The model does not ship a closed-form oracle of the requested kind."""


class MissingGradientsError(MonosdeError):
    """Coefficient gradients are required but not supplied."""


class DivergenceError(MonosdeError, RuntimeError):
    """A simulated path left the finite range.

    Attributes
    ----------
    step : index of the first bad node.
    path_index : global path index, when known.
    """

    def __init__(self, step, path_index=None):
        self.step = int(step)
        self.path_index = path_index
        where = f" (path {path_index})" if path_index is not None else ""
        super().__init__(f"state diverged at step {self.step}{where}")


class NewtonFailureError(MonosdeError, RuntimeError):
    """The implicit-step Newton iteration did not reach the tolerance."""

    def __init__(self, step, residual, tol):
        self.step = int(step)
        self.residual = float(residual)
        super().__init__(
            f"Newton residual {residual:.3e} > tol {tol:.3e} at step {step}"
        )


class SingularDiffusionError(MonosdeError, RuntimeError):
    """The diffusion matrix is (numerically) singular where an inverse is needed."""


class NonAdaptedIntegrandError(MonosdeError, ValueError):
    """An integrand declared non-adapted was passed to the adapted Skorokhod integral."""


class DegenerateWronskianError(MonosdeError, RuntimeError):
    """The stochastic Wronskian collapsed to zero or a non-finite value."""
