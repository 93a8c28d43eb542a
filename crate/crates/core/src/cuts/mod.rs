//! Cuts inferred from verified domains, constraint strengthening and the cut pool.

mod cut;
mod pool;
mod strengthen;

pub use cut::{
    dominates, from_general_form, infer_cut, to_general_form, validate_cut, Cut, Provenance,
    COUNTEREXAMPLE_TOL,
};
pub use pool::{
    merge_cuts, CutDump, CutPool, MergeOutcome, PoolEntry, ACTIVE_DUAL, DEFAULT_POOL_CAP,
};
pub use strengthen::{
    neuron_influence_scores, percentile, reduce_split, strengthen, EmittedCut, InfluenceRecord,
    InfluenceScores, StrengthenConfig, StrengthenOutcome, NONZERO_DUAL,
};
