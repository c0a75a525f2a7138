"""invariant-kit: certified forward-invariant boxes and paralleletopes for
neural-network controlled systems."""

from .intervals import (
    DomainError,
    EmbeddingState,
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    elem_minimal,
    pos_neg_split,
    replace_index,
    rounding_mode,
    se_leq,
    set_rounding,
)
from .expressions import (
    Expr,
    ParseError,
    SymbolicJacobians,
    VectorField,
    differentiate,
    load_system,
    parse_expr,
    parse_vector_field,
    save_system,
)
from .networks import (
    AffineRelaxation,
    FeedforwardNetwork,
    Layer,
    LocalizationError,
    build_linear_relu_net,
    compose_input_transform,
    crown_affine_bounds,
    ibp_relaxation,
    interval_forward,
    load_network,
    nn_inclusion,
    save_network,
)
from .inclusions import (
    ClosedLoopSystem,
    LocalizedInclusion,
    closed_loop_jacobian_inclusion,
    closed_loop_natural_inclusion,
    jacobian_based,
    make_inclusion,
    simulate_closed_loop,
)
from .embedding import (
    EmbeddingSystem,
    InvarianceCertificate,
    NestedFamily,
    check_invariance,
    embedding_rhs,
    embedding_system,
    family_to_csv,
    family_to_json,
    integrate_backward,
    integrate_forward,
    refine_localization,
)
from .paralleletopes import (
    Paralleletope,
    SpectrumReport,
    TransformedSystem,
    check_paralleletope_invariance,
    choose_transform,
    embedding_for_transformed,
    find_equilibrium,
    transformed_inclusion,
)
from .oracles import (
    BoundaryReport,
    TrajectoryBundle,
    Witness,
    boundary_check,
    grid_minimal_inclusion,
    monte_carlo_trajectories,
    replay_witness,
)

__version__ = "0.1.0"
