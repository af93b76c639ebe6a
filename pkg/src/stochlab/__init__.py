"""stochlab: stochastic characteristics for transport equations with rough divergence-free drift."""

from .brownian import BrownianPath, refine, sample_path, value_at
from .drift import (
    DriftField,
    LpsExponents,
    MollifierKernel,
    SingularityError,
    divergence_numeric,
    evaluate_drift,
    lp_norm_estimate,
    lps_index,
    lps_satisfied,
    make_drift,
    mollify_drift,
)
from .flow import (
    FlowIntegrationError,
    FlowTrajectory,
    backward_flow,
    forward_flow,
    gradient_moment_estimate,
    holder_quotient,
    inverse_consistency,
    jacobian,
)
from .transport import (
    InitialDatum,
    QuadratureSpec,
    TestFunction,
    WeakSolution,
    auxiliary_solution,
    drift_term,
    evaluate_solution,
    make_datum,
    pairing,
    representation_solution,
    stratonovich_term,
    weak_residual,
)

__version__ = "0.1.0"
