//! Pre-activation bounds and the dual lower bound with splits and cuts.

mod bounds;
mod cut_matrix;
pub(crate) mod dual;
mod optimize;
mod split;

pub use bounds::{
    classify_neurons, compute_preact_bounds, LayerClasses, NeuronClass, PreActBounds,
    DEGENERATE_WIDTH,
};
pub use cut_matrix::{CutMatrixView, CutRow};
pub use dual::{gcp_lower_bound, DualGrad, DualState, Evaluation, NeuronTrace, Propagator};
pub use optimize::{optimize_duals, optimize_with, OptimizeOutcome, OptimizerConfig};
pub use split::{Phase, SplitSet};
