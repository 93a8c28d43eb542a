use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cuts::cut::{infer_cut, Cut, Provenance};
use crate::cuts::pool::{merge_cuts, CutPool, MergeOutcome};
use crate::error::Result;
use crate::model::{InputSpec, NeuronId, ReluNetwork};
use crate::propagation::{optimize_duals, DualState, OptimizerConfig, PreActBounds, SplitSet};

/// Split duals above this mark the split as binding.
pub const NONZERO_DUAL: f64 = 1e-6;

/// Bound change observed when one split was introduced along a domain's path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub neuron: NeuronId,
    pub parent_bound: f64,
    pub child_bound: f64,
}

impl InfluenceRecord {
    pub fn improvement(&self) -> f64 {
        self.child_bound - self.parent_bound
    }
}

/// Per-split-neuron scores and how many splits had no record (scored 0).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InfluenceScores {
    pub scores: BTreeMap<NeuronId, f64>,
    pub missing: usize,
}

pub fn neuron_influence_scores(split: &SplitSet, history: &[InfluenceRecord]) -> InfluenceScores {
    let mut out = InfluenceScores::default();
    for (id, _) in split.iter() {
        match history.iter().rev().find(|r| r.neuron == id) {
            Some(r) => {
                out.scores.insert(id, r.improvement());
            }
            None => {
                out.scores.insert(id, 0.0);
                out.missing += 1;
            }
        }
    }
    out
}

/// Linear-interpolation percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthenConfig {
    /// Fraction of splits considered for dropping.
    pub drop_percentage: f64,
    /// Re-verification budget.
    pub optimizer: OptimizerConfig,
    /// Keep shrinking a successfully re-verified set.
    pub recursive: bool,
}

impl Default for StrengthenConfig {
    fn default() -> Self {
        StrengthenConfig {
            drop_percentage: 0.5,
            optimizer: OptimizerConfig::default().with_iterations(10),
            recursive: false,
        }
    }
}

/// A cut added to the pool, with the cut it was derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct EmittedCut {
    pub cut: Cut,
    pub parent: Option<Cut>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrengthenOutcome {
    /// Re-verifications of a reduced split set.
    pub attempts: usize,
    /// Re-verifications that proved the reduced set.
    pub successes: usize,
    pub emitted: Vec<EmittedCut>,
    pub missing_history: usize,
    pub merge: MergeOutcome,
}

/// The split set retained after dropping low-influence, non-binding splits.
///
/// Splits with a binding dual are always kept. Among the rest, the
/// `ceil(q·(m−1))` lowest-scoring ones (ties by id) are dropped, which is
/// exactly the set below the linear-interpolation percentile when scores are
/// distinct.
pub fn reduce_split(
    bounds: &PreActBounds,
    split: &SplitSet,
    duals: &DualState,
    scores: &BTreeMap<NeuronId, f64>,
    drop_percentage: f64,
) -> SplitSet {
    let mut free: Vec<(f64, NeuronId)> = split
        .iter()
        .filter(|&(id, _)| duals.split_dual(bounds, id) <= NONZERO_DUAL)
        .map(|(id, _)| (scores.get(&id).copied().unwrap_or(0.0), id))
        .collect();
    free.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let m = free.len();
    let k = if m == 0 {
        0
    } else {
        (drop_percentage.clamp(0.0, 1.0) * (m - 1) as f64 - 1e-12)
            .ceil()
            .max(0.0) as usize
    };
    let dropped: Vec<NeuronId> = free[..k].iter().map(|&(_, id)| id).collect();
    split.restricted(|id| !dropped.contains(&id))
}

/// Turns a verified domain into cuts: the cut of the full split set, plus the
/// cut of a reduced set when that set re-verifies under the current pool.
#[allow(clippy::too_many_arguments)]
pub fn strengthen(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
    duals: &DualState,
    history: &[InfluenceRecord],
    pool: &mut CutPool,
    config: &StrengthenConfig,
    iteration: usize,
) -> Result<StrengthenOutcome> {
    let mut out = StrengthenOutcome::default();
    if split.is_empty() {
        return Ok(out);
    }
    let full = infer_cut(split, iteration)?;
    if pool.insert(full.clone()).is_some() {
        out.emitted.push(EmittedCut {
            cut: full.clone(),
            parent: None,
        });
    }

    let influence = neuron_influence_scores(split, history);
    out.missing_history = influence.missing;
    let mut current = split.clone();
    let mut current_duals = duals.clone();
    let mut parent = full;
    loop {
        let reduced = reduce_split(
            bounds,
            &current,
            &current_duals,
            &influence.scores,
            config.drop_percentage,
        );
        if reduced.len() == current.len() || reduced.is_empty() {
            break;
        }
        out.attempts += 1;
        let view = pool.view(bounds)?;
        let res = optimize_duals(
            network,
            spec,
            bounds,
            &reduced,
            &view,
            &current_duals,
            &config.optimizer,
        )?;
        if res.bound < 0.0 {
            break;
        }
        out.successes += 1;
        let mut cut = infer_cut(&reduced, iteration)?;
        cut.provenance = Provenance::Strengthened;
        if pool.insert(cut.clone()).is_some() {
            out.emitted.push(EmittedCut {
                cut: cut.clone(),
                parent: Some(parent.clone()),
            });
        }
        if !config.recursive {
            break;
        }
        current = reduced;
        current_duals = res.duals;
        parent = cut;
    }
    out.merge = merge_cuts(pool, iteration);
    Ok(out)
}
