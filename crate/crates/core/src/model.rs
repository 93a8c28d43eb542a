//! Dense ReLU networks, ℓ∞ input regions and linear output properties.
//!
//! Layers are numbered from 1. Layers `1..L-1` are followed by a ReLU, the
//! final layer `L` is purely affine. A network is *canonical* when layer `L`
//! has a single output row: the property holds iff that output is
//! non-negative on the whole input region.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::PreActBounds;

/// A hidden neuron, addressed by its 1-based layer and 0-based row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(layer: usize, index: usize) -> Self {
        NeuronId { layer, index }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.layer, self.index)
    }
}

/// One affine layer; `weights` is stored row-major, one row per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        Layer { weights, bias }
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `W x + b`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    /// `Wᵀ v`.
    pub fn apply_transposed(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (row, &vi) in self.weights.iter().zip(v) {
            if vi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * vi;
            }
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<Layer>,
}

impl TryFrom<NetworkFile> for ReluNetwork {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        ReluNetwork::new(file.layers)
    }
}

impl From<ReluNetwork> for NetworkFile {
    fn from(net: ReluNetwork) -> Self {
        NetworkFile { layers: net.layers }
    }
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            let i = k + 1;
            if layer.rows() == 0 {
                return Err(Error::DimensionMismatch(format!("layer {i} has no rows")));
            }
            if layer.bias.len() != layer.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: bias length {} does not match {} weight rows",
                    layer.bias.len(),
                    layer.rows()
                )));
            }
            let cols = layer.cols();
            if cols == 0 || layer.weights.iter().any(|r| r.len() != cols) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: weight rows have inconsistent lengths"
                )));
            }
            if k > 0 && cols != layers[k - 1].rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i}: weights have {cols} columns but layer {} has width {}",
                    i - 1,
                    layers[k - 1].rows()
                )));
            }
            if layer.weights.iter().flatten().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} weights")));
            }
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} bias")));
            }
        }
        Ok(ReluNetwork { layers })
    }

    /// Number of affine layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// Layer `i` for `i` in `1..=L`.
    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i - 1]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Width `d(i)`; `width(0)` is the input dimension.
    pub fn width(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim()
        } else {
            self.layers[i - 1].rows()
        }
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        (1..self.num_layers()).map(|i| self.width(i)).collect()
    }

    pub fn is_canonical(&self) -> bool {
        self.output_dim() == 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {} but the network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer `1..=L` at `x`.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut post = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.apply(&post);
            if k + 1 < self.layers.len() {
                post = pre.iter().map(|v| v.max(0.0)).collect();
            }
            out.push(pre);
        }
        Ok(out)
    }

    /// Outputs of the final affine layer.
    pub fn outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pre_activations(x)?.pop().expect("non-empty network"))
    }

    /// Keeps layers `1..=k`; the result's output is the pre-activation of layer `k`.
    pub fn truncated(&self, k: usize) -> ReluNetwork {
        ReluNetwork {
            layers: self.layers[..k].to_vec(),
        }
    }

    /// Replaces the final layer with the given rows.
    pub fn with_final_layer(&self, layer: Layer) -> Result<ReluNetwork> {
        let mut layers = self.layers[..self.layers.len() - 1].to_vec();
        layers.push(layer);
        ReluNetwork::new(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: NetworkFile = read_json(path)?;
        ReluNetwork::new(file.layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// The ℓ∞ ball `{x : ‖x − x0‖∞ ≤ eps}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub x0: Vec<f64>,
    pub eps: f64,
}

impl InputSpec {
    pub fn new(x0: Vec<f64>, eps: f64) -> Result<Self> {
        if !eps.is_finite() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input specification".into()));
        }
        if eps < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "eps must be non-negative, got {eps}"
            )));
        }
        Ok(InputSpec { x0, eps })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.x0.iter().map(|v| v - self.eps).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.x0.iter().map(|v| v + self.eps).collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.x0.len()
            && x.iter()
                .zip(&self.x0)
                .all(|(a, b)| (a - b).abs() <= self.eps + tol)
    }

    /// Clamps `x` into the ball so that `contains(x, 0.0)` holds exactly.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x0)
            .map(|(&v, &c)| {
                let mut p = v.clamp(c - self.eps, c + self.eps);
                while (p - c).abs() > self.eps {
                    p = if p > c { p.next_down() } else { p.next_up() };
                }
                p
            })
            .collect()
    }
}

/// `verified iff min over the input region of cᵀ·outputs + c0 ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub c: Vec<f64>,
    pub c0: f64,
}

#[derive(Serialize, Deserialize)]
struct SpecFile {
    x0: Vec<f64>,
    eps: f64,
    c: Vec<f64>,
    c0: f64,
}

/// Writes an instance spec file.
pub fn save_spec(path: &Path, input: &InputSpec, prop: &PropertySpec) -> Result<()> {
    write_json(
        path,
        &SpecFile {
            x0: input.x0.clone(),
            eps: input.eps,
            c: prop.c.clone(),
            c0: prop.c0,
        },
    )
}

/// Reads and cross-checks a network file and a spec file.
pub fn load_instance(
    network_file: &Path,
    spec_file: &Path,
) -> Result<(ReluNetwork, InputSpec, PropertySpec)> {
    let network = ReluNetwork::load(network_file)?;
    let spec: SpecFile = read_json(spec_file)?;
    let input = InputSpec::new(spec.x0, spec.eps)?;
    if input.dim() != network.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {} but layer 1 expects {} inputs",
            input.dim(),
            network.input_dim()
        )));
    }
    if spec.c.iter().any(|v| !v.is_finite()) || !spec.c0.is_finite() {
        return Err(Error::NonFinite("property row".into()));
    }
    if spec.c.len() != network.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "property row has length {} but layer {} has width {}",
            spec.c.len(),
            network.num_layers(),
            network.output_dim()
        )));
    }
    Ok((
        network,
        input,
        PropertySpec {
            c: spec.c,
            c0: spec.c0,
        },
    ))
}

/// Folds the property into the final layer so the result has one output
/// equal to `cᵀ f(x) + c0`.
pub fn canonicalize(network: &ReluNetwork, prop: &PropertySpec) -> Result<ReluNetwork> {
    let last = network.layer(network.num_layers());
    if prop.c.len() != last.rows() {
        return Err(Error::DimensionMismatch(format!(
            "property row has length {} but the output layer has width {}",
            prop.c.len(),
            last.rows()
        )));
    }
    let row = last.apply_transposed(&prop.c);
    let bias = dot(&prop.c, &last.bias) + prop.c0;
    network.with_final_layer(Layer::new(vec![row], vec![bias]))
}

/// Exact forward pass of a canonical network.
pub fn evaluate(network: &ReluNetwork, x: &[f64]) -> Result<f64> {
    if !network.is_canonical() {
        return Err(Error::DimensionMismatch(format!(
            "evaluate needs a single-output network, got {} outputs",
            network.output_dim()
        )));
    }
    Ok(network.outputs(x)?[0])
}

/// On/off state of each initially-unstable neuron at a concrete input.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub states: BTreeMap<NeuronId, bool>,
}

impl ActivationPattern {
    pub fn is_active(&self, id: NeuronId) -> Option<bool> {
        self.states.get(&id).copied()
    }
}

/// A pre-activation of exactly zero is recorded as active.
pub fn activation_pattern(
    network: &ReluNetwork,
    bounds: &PreActBounds,
    x: &[f64],
) -> Result<ActivationPattern> {
    let pre = network.pre_activations(x)?;
    let states = bounds
        .unstable_neurons()
        .into_iter()
        .map(|id| (id, pre[id.layer - 1][id.index] >= 0.0))
        .collect();
    Ok(ActivationPattern { states })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
