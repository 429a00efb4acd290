from .errors import (
    ConfigError,
    DegenerateCriticalPoint,
    ExpressionDomainError,
    ExpressionSyntaxError,
    InadmissibleData,
    MapDegenerate,
    ModeNearZero,
    ModeSolveFailure,
    NewtonDiverged,
    NoConvergence,
    NotSPD,
    NotTorsion,
    OverdeterminedError,
    PointNewtonDiverged,
    ProfileNegative,
    ShapeNewtonDiverged,
    SolverError,
    UnknownIdentifier,
    ValidationError,
)
from .expr import Expression, differentiate, parse
from .problem_core import AffineChart, ProblemSpec, RescaledProblem, affine_reduce, check_admissible, rescale
from .radial import Corrector, RadialProfile, leading_bracket, leading_field, solve_corrector, solve_phi
from .modal import (
    ModalOperator,
    SphereBasis,
    SphereFunction,
    apply_inverse_hp,
    build_hp,
    dtn_operator,
    extract_K_vector,
    mode_family,
    project_K,
    project_perp,
    sphere_basis,
)
from .forward import (
    FieldSolution,
    Resolution,
    first_order_field,
    first_order_neumann,
    linearized_dtn,
    neumann_trace,
    neumann_values,
    solve_dirichlet,
)
