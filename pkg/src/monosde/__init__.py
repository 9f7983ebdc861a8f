"""monosde: Monte Carlo toolkit for SDEs with monotone (one-sided Lipschitz,
super-linear growth) drifts and random coefficients.

Simulates the base SDE with divergence-aware schemes, computes pathwise
Jacobians, inverse flows and stochastic Wronskians, Malliavin derivative
fields and directional derivatives, and numerically verifies the flow
representation of the Malliavin derivative, Cameron-Martin shifts, Gateaux
difference-quotient convergence, and Bismut-Elworthy-Li sensitivities.
"""

__version__ = "0.1.0"

from .core import (
    CHUNK,
    CameronMartinPath,
    History,
    MCEstimate,
    NoisePath,
    StatePath,
    TimeGrid,
    coarsen_noise,
    make_grid,
    mc_estimate,
    sample_noise,
    shift_noise,
)
from .errors import (
    DegenerateWronskianError,
    DimensionMismatchError,
    DivergenceError,
    InvalidParameterError,
    MissingGradientsError,
    MonosdeError,
    NewtonFailureError,
    NoClosedFormError,
    NonAdaptedIntegrandError,
    OutOfDomainError,
    SingularDiffusionError,
    UnknownModelError,
)
from .models import (
    ClosedForm,
    CoefficientField,
    ModelSpec,
    ProbeReport,
    ZOO_NAMES,
    eval_closed_form,
    pareto_theta_sampler,
    probe_assumptions,
    uniform_sampler,
    zoo_lookup,
)
from .solver import (
    EULER,
    IMPLICIT,
    SCHEMES,
    TAMED,
    MomentReport,
    SchemeChoice,
    estimate_sup_moment,
    simulate,
    stability_ratio,
)
from .variational import (
    JacobianBundle,
    LinearSDECoeffs,
    LinearSolveResult,
    finite_difference_jacobian,
    gateaux_direction,
    jacobian,
    linear_sde_solve,
)
from .malliavin import (
    MalliavinField,
    MalliavinMatrix,
    RepresentationParts,
    directional_derivative,
    malliavin_field,
    malliavin_matrix,
    representation_parts,
)
from .shiftlab import (
    CameronMartinReport,
    GronwallShadow,
    QuotientLadder,
    cameron_martin_check,
    clipped_sup_norm,
    doleans_dade,
    gateaux_ladder,
    gronwall_shadow,
    terminal_value,
)
from .greeks import (
    BELConfig,
    GradientReport,
    bel_gradient,
    constant_weight,
    digital_payoff,
    fd_gradient,
    identity_payoff,
    linear_weight,
    skorokhod_adapted,
    tanh_payoff,
)
