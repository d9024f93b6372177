//! Coefficient algebra for two-component splitting schemes.

mod coeffs;
mod compose;
mod descriptor;
mod order;
mod path;

pub use coeffs::{
    check_consistency, check_symmetry, expand, partition_sizes, transform_jacobian,
    ReducedCoeffs, SplitCoeffs,
};
pub use compose::{repeat_scheme, triple_jump, triple_jump_weights};
pub use descriptor::{
    builtin, parse_list, SchemeDescriptor, BUILTIN_NAMES, LEARN5A, LEARN8A, LEARN8B,
    SYMMETRY_TOL,
};
pub use order::{order_residuals, project_to_fourth_order, OrderResiduals};
pub use path::{path_segments, PathPolyline};
