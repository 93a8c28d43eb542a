//! Branch-and-bound over neuron splits.

mod domain;
mod presolve;
mod search;

pub use domain::{
    branching_scores, filter_domains, select_branching_neuron, split_domain, split_domain_multi,
    Domain, DomainQueue, QueueOrder,
};
pub use presolve::multi_tree_presolve;
pub use search::{
    bab_verify, BabConfig, BatchLog, DomainLog, Mode, PresolveConfig, SearchStats, Status,
    VerdictReport,
};
