//! Complete verification of small ReLU networks by branch-and-bound with
//! inferred cutting planes.

pub mod bab;
pub mod cuts;
pub mod error;
pub mod generate;
pub mod model;
pub mod oracle;
pub mod propagation;

pub use bab::{bab_verify, BabConfig, BatchLog, Mode, SearchStats, Status, VerdictReport};
pub use cuts::{infer_cut, merge_cuts, strengthen, validate_cut, Cut, CutPool, Provenance};
pub use error::{Error, Result};
pub use generate::{gen_instances, write_instances, GenConfig, Instance, Label, ManifestEntry};
pub use model::{
    activation_pattern, canonicalize, evaluate, load_instance, save_spec, ActivationPattern,
    InputSpec, Layer, NeuronId, PropertySpec, ReluNetwork,
};
pub use propagation::{
    classify_neurons, compute_preact_bounds, gcp_lower_bound, optimize_duals, CutMatrixView,
    CutRow, DualState, NeuronClass, OptimizerConfig, Phase, PreActBounds, SplitSet,
};
