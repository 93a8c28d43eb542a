use serde::{Deserialize, Serialize};

use crate::model::NeuronId;

/// One row of `Σ_i H(i) x(i) + G(i) x̂(i) + Q(i) z(i) ≤ d`, stored sparsely.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutRow {
    /// Coefficients on pre-activations.
    pub h: Vec<(NeuronId, f64)>,
    /// Coefficients on post-activations.
    pub g: Vec<(NeuronId, f64)>,
    /// Coefficients on ReLU indicators; only initially-unstable neurons.
    pub q: Vec<(NeuronId, f64)>,
    pub d: f64,
}

impl CutRow {
    pub fn z_only(q: Vec<(NeuronId, f64)>, d: f64) -> Self {
        CutRow {
            h: Vec::new(),
            g: Vec::new(),
            q,
            d,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite()
            && self
                .h
                .iter()
                .chain(&self.g)
                .chain(&self.q)
                .all(|(_, c)| c.is_finite())
    }
}

/// An immutable snapshot of cut rows; `ids` keys each row's multiplier across
/// snapshots so warm-started duals survive pool changes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CutMatrixView {
    rows: Vec<CutRow>,
    ids: Vec<u64>,
}

impl CutMatrixView {
    pub fn empty() -> Self {
        CutMatrixView::default()
    }

    /// Rows keyed `0..N`.
    pub fn new(rows: Vec<CutRow>) -> Self {
        let ids = (0..rows.len() as u64).collect();
        CutMatrixView { rows, ids }
    }

    pub fn with_ids(rows: Vec<CutRow>, ids: Vec<u64>) -> Self {
        assert_eq!(rows.len(), ids.len(), "one id per cut row");
        CutMatrixView { rows, ids }
    }

    /// Appends a row; existing rows keep their order.
    pub fn push(&mut self, row: CutRow, id: u64) {
        self.rows.push(row);
        self.ids.push(id);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[CutRow] {
        &self.rows
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }
}
