use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputSpec, Layer, NeuronId, ReluNetwork};
use crate::propagation::dual::{DualState, Propagator};
use crate::propagation::{CutMatrixView, SplitSet};

/// Widths below this are treated as a single point and classified stable.
pub const DEGENERATE_WIDTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronClass {
    Active,
    Inactive,
    Unstable,
}

/// Sound pre-activation intervals for the hidden layers `1..L-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds", into = "RawBounds")]
pub struct PreActBounds {
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
    classes: Vec<Vec<NeuronClass>>,
    unstable: Vec<NeuronId>,
    unstable_index: Vec<Vec<Option<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct RawBounds {
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

impl TryFrom<RawBounds> for PreActBounds {
    type Error = Error;
    fn try_from(raw: RawBounds) -> Result<Self> {
        PreActBounds::new(raw.lower, raw.upper)
    }
}

impl From<PreActBounds> for RawBounds {
    fn from(b: PreActBounds) -> Self {
        RawBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

fn classify(l: f64, u: f64) -> NeuronClass {
    if l >= 0.0 {
        NeuronClass::Active
    } else if u <= 0.0 {
        NeuronClass::Inactive
    } else if u - l < DEGENERATE_WIDTH {
        if u >= -l {
            NeuronClass::Active
        } else {
            NeuronClass::Inactive
        }
    } else {
        NeuronClass::Unstable
    }
}

impl PreActBounds {
    pub fn new(lower: Vec<Vec<f64>>, upper: Vec<Vec<f64>>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(
                "lower and upper bounds cover different layer counts".into(),
            ));
        }
        let mut classes = Vec::with_capacity(lower.len());
        let mut unstable = Vec::new();
        let mut unstable_index = Vec::with_capacity(lower.len());
        for (k, (lo, up)) in lower.iter().zip(&upper).enumerate() {
            if lo.len() != up.len() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} bounds have different lengths",
                    k + 1
                )));
            }
            let mut layer_classes = Vec::with_capacity(lo.len());
            let mut layer_index = Vec::with_capacity(lo.len());
            for (j, (&l, &u)) in lo.iter().zip(up).enumerate() {
                if !(l.is_finite() && u.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "bounds of neuron ({},{j})",
                        k + 1
                    )));
                }
                if l > u {
                    return Err(Error::InvalidArgument(format!(
                        "neuron ({},{j}) has l = {l} > u = {u}",
                        k + 1
                    )));
                }
                let class = classify(l, u);
                if class == NeuronClass::Unstable {
                    layer_index.push(Some(unstable.len()));
                    unstable.push(NeuronId::new(k + 1, j));
                } else {
                    layer_index.push(None);
                }
                layer_classes.push(class);
            }
            classes.push(layer_classes);
            unstable_index.push(layer_index);
        }
        Ok(PreActBounds {
            lower,
            upper,
            classes,
            unstable,
            unstable_index,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self, layer: usize) -> &[f64] {
        &self.lower[layer - 1]
    }

    pub fn upper(&self, layer: usize) -> &[f64] {
        &self.upper[layer - 1]
    }

    pub fn l(&self, id: NeuronId) -> f64 {
        self.lower[id.layer - 1][id.index]
    }

    pub fn u(&self, id: NeuronId) -> f64 {
        self.upper[id.layer - 1][id.index]
    }

    pub fn class(&self, id: NeuronId) -> NeuronClass {
        self.classes[id.layer - 1][id.index]
    }

    pub fn classes(&self, layer: usize) -> &[NeuronClass] {
        &self.classes[layer - 1]
    }

    /// Initially-unstable neurons in (layer, index) order.
    pub fn unstable_neurons(&self) -> Vec<NeuronId> {
        self.unstable.clone()
    }

    pub fn unstable(&self) -> &[NeuronId] {
        &self.unstable
    }

    pub fn num_unstable(&self) -> usize {
        self.unstable.len()
    }

    /// Dense position of an unstable neuron, used to index dual vectors.
    pub fn unstable_index(&self, id: NeuronId) -> Option<usize> {
        self.unstable_index
            .get(id.layer.wrapping_sub(1))
            .and_then(|layer| layer.get(id.index))
            .copied()
            .flatten()
    }

    pub fn is_unstable(&self, id: NeuronId) -> bool {
        self.unstable_index(id).is_some()
    }

    /// Copy with one neuron's interval replaced, keeping the original class map.
    pub(crate) fn with_override(&self, id: NeuronId, l: f64, u: f64) -> PreActBounds {
        let mut out = self.clone();
        out.lower[id.layer - 1][id.index] = l;
        out.upper[id.layer - 1][id.index] = u;
        out
    }
}

/// `(I+, I−, I)` of one layer, as sorted neuron indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerClasses {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub unstable: Vec<usize>,
}

pub fn classify_neurons(bounds: &PreActBounds) -> Vec<LayerClasses> {
    (1..=bounds.num_layers())
        .map(|layer| {
            let mut out = LayerClasses::default();
            for (j, class) in bounds.classes(layer).iter().enumerate() {
                match class {
                    NeuronClass::Active => out.active.push(j),
                    NeuronClass::Inactive => out.inactive.push(j),
                    NeuronClass::Unstable => out.unstable.push(j),
                }
            }
            out
        })
        .collect()
}

/// Layer-by-layer backward bounding of every hidden pre-activation.
///
/// Each neuron's bound is a dual bound of the truncated network with the
/// earlier layers relaxed under the slope heuristic (lower slope 1 when
/// `u ≥ −l`, else 0).
pub fn compute_preact_bounds(network: &ReluNetwork, spec: &InputSpec) -> Result<PreActBounds> {
    if spec.dim() != network.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input spec has dimension {} but the network expects {}",
            spec.dim(),
            network.input_dim()
        )));
    }
    let mut lower: Vec<Vec<f64>> = Vec::new();
    let mut upper: Vec<Vec<f64>> = Vec::new();
    for k in 1..network.num_layers() {
        let partial = PreActBounds::new(lower.clone(), upper.clone())?;
        let layer = network.layer(k);
        let mut lo = Vec::with_capacity(layer.rows());
        let mut up = Vec::with_capacity(layer.rows());
        for j in 0..layer.rows() {
            let row = Layer::new(vec![layer.weights[j].clone()], vec![layer.bias[j]]);
            let trunc = network.truncated(k).with_final_layer(row)?;
            let no_cuts = CutMatrixView::empty();
            let split = SplitSet::new();
            let lower_prop = Propagator::new(&trunc, spec, &partial, &split, &no_cuts, &[1.0])?;
            let duals = DualState::initial(&partial, &no_cuts);
            let l = lower_prop.eval(&duals);
            let upper_prop = Propagator::new(&trunc, spec, &partial, &split, &no_cuts, &[-1.0])?;
            let u = -upper_prop.eval(&duals);
            // Rounding can invert a zero-width interval.
            let (l, u) = if l > u { (u, l) } else { (l, u) };
            lo.push(l);
            up.push(u);
        }
        lower.push(lo);
        upper.push(up);
    }
    PreActBounds::new(lower, upper)
}
