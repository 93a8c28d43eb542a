use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cuts::cut::{dominates, to_general_form, Cut, Provenance};
use crate::error::Result;
use crate::model::{write_json, NeuronId};
use crate::propagation::{CutMatrixView, DualState, PreActBounds};

/// Default maximum number of cuts kept.
pub const DEFAULT_POOL_CAP: usize = 1000;

/// A multiplier above this counts as the cut being used.
pub const ACTIVE_DUAL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: u64,
    pub cut: Cut,
    pub activity: u64,
}

/// Deduplicated, capacity-bounded set of cuts with stable ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPool {
    entries: Vec<PoolEntry>,
    keys: BTreeSet<(Vec<NeuronId>, Vec<NeuronId>)>,
    cap: usize,
    next_id: u64,
    evicted: u64,
}

/// One cut of the JSON dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutDump {
    pub pos: Vec<NeuronId>,
    pub neg: Vec<NeuronId>,
    pub rhs: i64,
    pub provenance: Provenance,
}

impl Default for CutPool {
    fn default() -> Self {
        CutPool::new(DEFAULT_POOL_CAP)
    }
}

impl CutPool {
    pub fn new(cap: usize) -> Self {
        CutPool {
            entries: Vec::new(),
            keys: BTreeSet::new(),
            cap: cap.max(1),
            next_id: 0,
            evicted: 0,
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn cuts(&self) -> impl Iterator<Item = &Cut> {
        self.entries.iter().map(|e| &e.cut)
    }

    pub fn contains(&self, cut: &Cut) -> bool {
        self.keys.contains(&cut.key())
    }

    pub fn get(&self, id: u64) -> Option<&PoolEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|k| &self.entries[k])
    }

    /// Adds a cut unless an identical one is present; evicts one cut first when full.
    /// Returns the new id.
    pub fn insert(&mut self, cut: Cut) -> Option<u64> {
        let key = cut.key();
        if self.keys.contains(&key) {
            return None;
        }
        if self.entries.len() >= self.cap {
            self.evict_one();
        }
        let id = self.next_id;
        self.next_id += 1;
        self.keys.insert(key);
        self.entries.push(PoolEntry {
            id,
            cut,
            activity: 0,
        });
        Some(id)
    }

    pub fn remove(&mut self, id: u64) -> Option<Cut> {
        let k = self.entries.binary_search_by_key(&id, |e| e.id).ok()?;
        let entry = self.entries.remove(k);
        self.keys.remove(&entry.cut.key());
        Some(entry.cut)
    }

    /// Lowest activity first, then dominated cuts, then the oldest.
    fn evict_one(&mut self) {
        let victim = self
            .entries
            .iter()
            .map(|e| {
                let dominated = self
                    .entries
                    .iter()
                    .any(|o| o.id != e.id && dominates(&o.cut, &e.cut));
                (e.activity, !dominated, e.id)
            })
            .min()
            .map(|(_, _, id)| id);
        if let Some(id) = victim {
            self.remove(id);
            self.evicted += 1;
        }
    }

    /// Counts the cuts whose multiplier in `duals` is in use.
    pub fn record_activity(&mut self, duals: &DualState) {
        for (id, beta) in duals.beta_ids.iter().zip(&duals.beta) {
            if *beta > ACTIVE_DUAL {
                if let Ok(k) = self.entries.binary_search_by_key(id, |e| e.id) {
                    self.entries[k].activity += 1;
                }
            }
        }
    }

    /// Snapshot of the pool as cut rows keyed by cut id.
    pub fn view(&self, bounds: &PreActBounds) -> Result<CutMatrixView> {
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut ids = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            rows.push(to_general_form(&e.cut, bounds)?);
            ids.push(e.id);
        }
        Ok(CutMatrixView::with_ids(rows, ids))
    }

    pub fn dump(&self) -> Vec<CutDump> {
        self.entries
            .iter()
            .map(|e| CutDump {
                pos: e.cut.pos().iter().copied().collect(),
                neg: e.cut.neg().iter().copied().collect(),
                rhs: e.cut.rhs(),
                provenance: e.cut.provenance,
            })
            .collect()
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        write_json(path, &self.dump())
    }
}

/// Result of [`merge_cuts`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeOutcome {
    /// Number of resolution steps applied.
    pub merges: usize,
    /// Two cuts resolved to the empty inequality `0 ≤ −1`: no counterexample
    /// pattern satisfies the pool.
    pub contradiction: bool,
}

/// Replaces every pair `(P ∪ {k}, M)`, `(P, M ∪ {k})` with `(P, M)` until no
/// pair remains. The merged cut implies both parents.
pub fn merge_cuts(pool: &mut CutPool, iteration: usize) -> MergeOutcome {
    let mut outcome = MergeOutcome::default();
    loop {
        let mut by_key: BTreeMap<(Vec<NeuronId>, Vec<NeuronId>), u64> = BTreeMap::new();
        for e in &pool.entries {
            by_key.insert(e.cut.key(), e.id);
        }
        let mut found = None;
        'outer: for e in &pool.entries {
            for &k in e.cut.pos() {
                let mut pos = e.cut.pos().clone();
                let mut neg = e.cut.neg().clone();
                pos.remove(&k);
                neg.insert(k);
                let partner_key = (pos.iter().copied().collect(), neg.iter().copied().collect());
                if let Some(&partner) = by_key.get(&partner_key) {
                    neg.remove(&k);
                    found = Some((e.id, partner, pos, neg));
                    break 'outer;
                }
            }
        }
        let Some((a, b, pos, neg)) = found else {
            return outcome;
        };
        pool.remove(a);
        pool.remove(b);
        outcome.merges += 1;
        match Cut::new(pos, neg, Provenance::Merged, iteration) {
            Ok(merged) => {
                pool.insert(merged);
            }
            Err(_) => {
                outcome.contradiction = true;
                return outcome;
            }
        }
    }
}
