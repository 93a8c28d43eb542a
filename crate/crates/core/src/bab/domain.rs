use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cuts::InfluenceRecord;
use crate::error::{Error, Result};
use crate::model::{InputSpec, NeuronId, ReluNetwork};
use crate::propagation::{
    CutMatrixView, DualState, Evaluation, Phase, PreActBounds, Propagator, SplitSet,
};

/// Below this every primary branching score counts as zero.
const SCORE_EPS: f64 = 1e-12;

/// A subproblem of the search.
#[derive(Clone, Debug)]
pub struct Domain {
    pub split: SplitSet,
    pub lower_bound: f64,
    pub duals: DualState,
    pub history: Vec<InfluenceRecord>,
    pub depth: usize,
    pub tree_id: usize,
    /// Bounded with a non-empty cut pool; the bound then only certifies the
    /// absence of counterexamples.
    pub used_cuts: bool,
    /// Unsplit unstable neurons, best branching candidate first.
    pub ranking: Vec<NeuronId>,
    /// Neuron split to create this domain and the parent's bound, until the
    /// domain is bounded.
    pub(crate) pending: Option<(NeuronId, f64)>,
}

impl Domain {
    /// The unbounded root.
    pub fn root(bounds: &PreActBounds, cuts: &CutMatrixView) -> Self {
        Domain {
            split: SplitSet::new(),
            lower_bound: f64::NEG_INFINITY,
            duals: DualState::initial(bounds, cuts),
            history: Vec::new(),
            depth: 0,
            tree_id: 0,
            used_cuts: false,
            ranking: Vec::new(),
            pending: None,
        }
    }

    /// A valid lower bound on the objective over this domain.
    pub fn contribution(&self) -> f64 {
        if self.used_cuts {
            self.lower_bound.min(0.0)
        } else {
            self.lower_bound
        }
    }

    pub fn is_fully_split(&self, bounds: &PreActBounds) -> bool {
        self.split.len() == bounds.num_unstable()
    }
}

/// Ranks unsplit unstable neurons by the bound gap `−h` of their relaxation.
/// Falls back to `|ŝ|·min(u, −l)` when every gap is zero. Ties go to the lowest id.
pub fn branching_scores(
    bounds: &PreActBounds,
    split: &SplitSet,
    ev: &Evaluation,
) -> Vec<(NeuronId, f64)> {
    let candidates: Vec<(NeuronId, usize)> = bounds
        .unstable()
        .iter()
        .enumerate()
        .filter(|(_, id)| !split.contains(**id))
        .map(|(k, &id)| (id, k))
        .collect();
    let primary: Vec<f64> = candidates.iter().map(|&(_, k)| -ev.neurons[k].h).collect();
    let use_primary = primary.iter().any(|&s| s > SCORE_EPS);
    let mut scored: Vec<(NeuronId, f64)> = candidates
        .iter()
        .zip(&primary)
        .map(|(&(id, k), &p)| {
            let score = if use_primary {
                p
            } else {
                ev.neurons[k].s.abs() * bounds.u(id).min(-bounds.l(id))
            };
            (
                id,
                if score.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    score
                },
            )
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

pub fn select_branching_neuron(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    domain: &Domain,
    cuts: &CutMatrixView,
) -> Result<NeuronId> {
    let prop = Propagator::new(network, spec, bounds, &domain.split, cuts, &[1.0])?;
    let ev = prop.eval_with_trace(&domain.duals.aligned(cuts));
    branching_scores(bounds, &domain.split, &ev)
        .first()
        .map(|(id, _)| *id)
        .ok_or(Error::Exhausted)
}

fn child(bounds: &PreActBounds, parent: &Domain, pairs: &[(NeuronId, Phase)]) -> Result<Domain> {
    let mut split = parent.split.clone();
    let mut duals = parent.duals.clone();
    for &(id, phase) in pairs {
        split.insert(id, phase)?;
        if let Some(k) = bounds.unstable_index(id) {
            duals.split_duals[k] = 0.0;
        }
    }
    Ok(Domain {
        split,
        lower_bound: parent.lower_bound,
        duals,
        history: parent.history.clone(),
        depth: parent.depth + pairs.len(),
        tree_id: parent.tree_id,
        used_cuts: false,
        ranking: Vec::new(),
        pending: (pairs.len() == 1).then(|| (pairs[0].0, parent.lower_bound)),
    })
}

fn check_splittable(bounds: &PreActBounds, domain: &Domain, neuron: NeuronId) -> Result<()> {
    if !bounds.is_unstable(neuron) {
        return Err(Error::NotUnstable(neuron));
    }
    if domain.split.contains(neuron) {
        return Err(Error::AlreadySplit(neuron));
    }
    Ok(())
}

/// Children with `neuron` inactive and active, in that order.
pub fn split_domain(
    bounds: &PreActBounds,
    domain: &Domain,
    neuron: NeuronId,
) -> Result<(Domain, Domain)> {
    check_splittable(bounds, domain, neuron)?;
    Ok((
        child(bounds, domain, &[(neuron, Phase::Inactive)])?,
        child(bounds, domain, &[(neuron, Phase::Active)])?,
    ))
}

/// All `2^k` children of splitting on every neuron of `neurons`, in
/// lexicographic order (inactive first). Children of a multi-way split carry
/// no influence record for these neurons.
pub fn split_domain_multi(
    bounds: &PreActBounds,
    domain: &Domain,
    neurons: &[NeuronId],
) -> Result<Vec<Domain>> {
    for &n in neurons {
        check_splittable(bounds, domain, n)?;
    }
    if neurons.len() == 1 {
        let (a, b) = split_domain(bounds, domain, neurons[0])?;
        return Ok(vec![a, b]);
    }
    let k = neurons.len();
    (0..1usize << k)
        .map(|bits| {
            let pairs: Vec<(NeuronId, Phase)> = neurons
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let active = (bits >> (k - 1 - i)) & 1 == 1;
                    (
                        id,
                        if active {
                            Phase::Active
                        } else {
                            Phase::Inactive
                        },
                    )
                })
                .collect();
            child(bounds, domain, &pairs)
        })
        .collect()
}

/// Verified domains (`lower_bound ≥ 0`) and the rest, order preserved.
pub fn filter_domains(children: Vec<Domain>) -> (Vec<Domain>, Vec<Domain>) {
    children.into_iter().partition(|d| d.lower_bound >= 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueOrder {
    /// Shallowest first, then lowest bound.
    #[default]
    Bfs,
    /// Deepest first, then lowest bound.
    Dfs,
}

#[derive(Clone, Copy, Debug)]
struct QueueKey {
    depth: i64,
    bound: f64,
    seq: u64,
}

impl PartialEq for QueueKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.depth
            .cmp(&other.depth)
            .then(self.bound.total_cmp(&other.bound))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Open domains ordered by `(depth, lower_bound, insertion order)`.
#[derive(Clone, Debug, Default)]
pub struct DomainQueue {
    order: QueueOrder,
    items: BTreeMap<QueueKey, Domain>,
    seq: u64,
}

impl DomainQueue {
    pub fn new(order: QueueOrder) -> Self {
        DomainQueue {
            order,
            items: BTreeMap::new(),
            seq: 0,
        }
    }

    pub fn push(&mut self, domain: Domain) {
        let depth = match self.order {
            QueueOrder::Bfs => domain.depth as i64,
            QueueOrder::Dfs => -(domain.depth as i64),
        };
        let key = QueueKey {
            depth,
            bound: domain.lower_bound,
            seq: self.seq,
        };
        self.seq += 1;
        self.items.insert(key, domain);
    }

    pub fn pop(&mut self) -> Option<Domain> {
        self.items.pop_first().map(|(_, d)| d)
    }

    pub fn pop_batch(&mut self, n: usize) -> Vec<Domain> {
        std::iter::from_fn(|| self.pop()).take(n).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Domain> {
        self.items.values()
    }

    /// Smallest contribution over the open domains, `+∞` when empty.
    pub fn min_contribution(&self) -> f64 {
        self.iter()
            .map(Domain::contribution)
            .fold(f64::INFINITY, f64::min)
    }
}
