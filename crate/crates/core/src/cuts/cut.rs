use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputSpec, NeuronId, ReluNetwork};
use crate::oracle::enumerate_regions;
use crate::propagation::{CutRow, Phase, PreActBounds, SplitSet};

/// Regions whose minimum is below this count as containing a counterexample.
pub const COUNTEREXAMPLE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Inferred,
    Strengthened,
    Merged,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Inferred => "inferred",
            Provenance::Strengthened => "strengthened",
            Provenance::Merged => "merged",
        })
    }
}

/// `Σ_{P} z − Σ_{M} z ≤ |P| − 1`: the indicator assignment with every `P`
/// neuron active and every `M` neuron inactive is excluded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cut {
    pos: BTreeSet<NeuronId>,
    neg: BTreeSet<NeuronId>,
    pub provenance: Provenance,
    /// Search iteration that produced the cut.
    pub iteration: usize,
}

impl Cut {
    pub fn new(
        pos: BTreeSet<NeuronId>,
        neg: BTreeSet<NeuronId>,
        provenance: Provenance,
        iteration: usize,
    ) -> Result<Self> {
        if pos.is_empty() && neg.is_empty() {
            return Err(Error::NoCut);
        }
        if let Some(id) = pos.intersection(&neg).next() {
            return Err(Error::InvalidArgument(format!(
                "neuron {id} is on both sides of the cut"
            )));
        }
        Ok(Cut {
            pos,
            neg,
            provenance,
            iteration,
        })
    }

    pub fn pos(&self) -> &BTreeSet<NeuronId> {
        &self.pos
    }

    pub fn neg(&self) -> &BTreeSet<NeuronId> {
        &self.neg
    }

    pub fn rhs(&self) -> i64 {
        self.pos.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Identity of the inequality, ignoring provenance.
    pub fn key(&self) -> (Vec<NeuronId>, Vec<NeuronId>) {
        (
            self.pos.iter().copied().collect(),
            self.neg.iter().copied().collect(),
        )
    }

    pub fn support(&self) -> Vec<NeuronId> {
        self.pos.union(&self.neg).copied().collect()
    }

    /// Evaluates the inequality at an indicator assignment.
    pub fn satisfied_by(&self, z: impl Fn(NeuronId) -> f64) -> bool {
        let lhs: f64 = self.pos.iter().map(|&id| z(id)).sum::<f64>()
            - self.neg.iter().map(|&id| z(id)).sum::<f64>();
        lhs <= self.rhs() as f64 + 1e-9
    }

    /// Evaluates the inequality at a pattern in [`PreActBounds::unstable`] order.
    pub fn satisfied_by_pattern(&self, bounds: &PreActBounds, pattern: &[bool]) -> bool {
        self.satisfied_by(|id| match bounds.unstable_index(id) {
            Some(k) if pattern[k] => 1.0,
            _ => 0.0,
        })
    }

    /// The split set excluded by this cut.
    pub fn split(&self) -> SplitSet {
        SplitSet::from_pairs(
            self.pos
                .iter()
                .map(|&id| (id, Phase::Active))
                .chain(self.neg.iter().map(|&id| (id, Phase::Inactive))),
        )
        .expect("disjoint sides")
    }
}

impl fmt::Display for Cut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms = Vec::new();
        for id in &self.pos {
            terms.push(format!("+z{id}"));
        }
        for id in &self.neg {
            terms.push(format!("-z{id}"));
        }
        write!(f, "{} <= {}", terms.join(" "), self.rhs())
    }
}

/// The cut excluding a verified split set.
pub fn infer_cut(split: &SplitSet, iteration: usize) -> Result<Cut> {
    Cut::new(
        split.active().collect(),
        split.inactive().collect(),
        Provenance::Inferred,
        iteration,
    )
}

/// `Q` row with `+1` on `P`, `−1` on `M` and `d = |P| − 1`.
pub fn to_general_form(cut: &Cut, bounds: &PreActBounds) -> Result<CutRow> {
    let mut q = Vec::with_capacity(cut.len());
    for &id in &cut.pos {
        if !bounds.is_unstable(id) {
            return Err(Error::NotUnstable(id));
        }
        q.push((id, 1.0));
    }
    for &id in &cut.neg {
        if !bounds.is_unstable(id) {
            return Err(Error::NotUnstable(id));
        }
        q.push((id, -1.0));
    }
    Ok(CutRow::z_only(q, cut.rhs() as f64))
}

/// Inverse of [`to_general_form`] for rows of that shape.
pub fn from_general_form(row: &CutRow, provenance: Provenance, iteration: usize) -> Result<Cut> {
    if !row.h.is_empty() || !row.g.is_empty() {
        return Err(Error::InvalidArgument(
            "row has pre- or post-activation coefficients".into(),
        ));
    }
    let mut pos = BTreeSet::new();
    let mut neg = BTreeSet::new();
    for &(id, c) in &row.q {
        let fresh = if c == 1.0 {
            pos.insert(id)
        } else if c == -1.0 {
            neg.insert(id)
        } else {
            return Err(Error::InvalidArgument(format!(
                "coefficient {c} on z{id} is not ±1"
            )));
        };
        if !fresh {
            return Err(Error::InvalidArgument(format!("z{id} appears twice")));
        }
    }
    let cut = Cut::new(pos, neg, provenance, iteration)?;
    if row.d != cut.rhs() as f64 {
        return Err(Error::InvalidArgument(format!(
            "right-hand side {} does not equal |P| − 1 = {}",
            row.d,
            cut.rhs()
        )));
    }
    Ok(cut)
}

/// Whether `a` has strictly fewer literals than `b` on one side and no more on the other.
pub fn dominates(a: &Cut, b: &Cut) -> bool {
    (a.pos.is_subset(&b.pos) && a.neg.is_subset(&b.neg))
        && (a.pos.len() < b.pos.len() || a.neg.len() < b.neg.len())
}

/// Whether every realizable activation pattern whose region contains a
/// counterexample (a point with negative output) satisfies the cut.
///
/// Inferred cuts remove verified regions, so they are not valid inequalities
/// for the full mixed-integer feasible set; they are valid for the set of
/// counterexamples, which is what the search needs.
pub fn validate_cut(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    cut: &Cut,
) -> Result<bool> {
    for id in cut.support() {
        if !bounds.is_unstable(id) {
            return Err(Error::NotUnstable(id));
        }
    }
    let regions = enumerate_regions(network, spec, bounds)?;
    Ok(regions
        .iter()
        .filter(|r| r.value < -COUNTEREXAMPLE_TOL)
        .all(|r| cut.satisfied_by_pattern(bounds, &r.pattern)))
}
