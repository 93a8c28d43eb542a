use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NeuronId;
use crate::propagation::PreActBounds;

/// Branch taken for a split neuron: `Active` fixes `z = 1`, `Inactive` fixes `z = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Inactive,
    Active,
}

impl Phase {
    pub fn z(self) -> f64 {
        match self {
            Phase::Active => 1.0,
            Phase::Inactive => 0.0,
        }
    }
}

/// `Z = Z+ ∪ Z−` over initially-unstable neurons.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSet {
    phases: BTreeMap<NeuronId, Phase>,
}

impl SplitSet {
    pub fn new() -> Self {
        SplitSet::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (NeuronId, Phase)>) -> Result<Self> {
        let mut out = SplitSet::new();
        for (id, phase) in pairs {
            out.insert(id, phase)?;
        }
        Ok(out)
    }

    pub fn insert(&mut self, id: NeuronId, phase: Phase) -> Result<()> {
        if self.phases.contains_key(&id) {
            return Err(Error::AlreadySplit(id));
        }
        self.phases.insert(id, phase);
        Ok(())
    }

    pub fn remove(&mut self, id: NeuronId) -> Option<Phase> {
        self.phases.remove(&id)
    }

    pub fn with(&self, id: NeuronId, phase: Phase) -> Result<Self> {
        let mut out = self.clone();
        out.insert(id, phase)?;
        Ok(out)
    }

    pub fn phase(&self, id: NeuronId) -> Option<Phase> {
        self.phases.get(&id).copied()
    }

    pub fn contains(&self, id: NeuronId) -> bool {
        self.phases.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NeuronId, Phase)> + '_ {
        self.phases.iter().map(|(&id, &p)| (id, p))
    }

    /// `Z+`
    pub fn active(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.iter()
            .filter(|(_, p)| *p == Phase::Active)
            .map(|(id, _)| id)
    }

    /// `Z−`
    pub fn inactive(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.iter()
            .filter(|(_, p)| *p == Phase::Inactive)
            .map(|(id, _)| id)
    }

    /// Keeps only the neurons for which `keep` returns true.
    pub fn restricted(&self, mut keep: impl FnMut(NeuronId) -> bool) -> SplitSet {
        SplitSet {
            phases: self
                .phases
                .iter()
                .filter(|(id, _)| keep(**id))
                .map(|(&id, &p)| (id, p))
                .collect(),
        }
    }

    pub fn validate(&self, bounds: &PreActBounds) -> Result<()> {
        for (id, _) in self.iter() {
            if !bounds.is_unstable(id) {
                return Err(Error::NotUnstable(id));
            }
        }
        Ok(())
    }
}
