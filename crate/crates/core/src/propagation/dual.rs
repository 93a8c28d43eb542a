//! Dual bound propagation with cut rows and indicator splits.
//!
//! The bound is
//!
//! ```text
//! g = −ν(1)ᵀW(1)x0 − ε‖W(1)ᵀν(1)‖₁ − Σ_i ν(i)ᵀb(i) − βᵀd + Σ_{j unstable} h_j
//! ```
//!
//! with `ν(L) = −c` and, for each hidden neuron, `ŝ = ν(i+1)ᵀW(i+1)[:,j] − βᵀG[:,j]`:
//!
//! | neuron            | ν_j                               | h_j                     |
//! |-------------------|-----------------------------------|-------------------------|
//! | stable active     | `ŝ − βᵀH[:,j]`                    | –                       |
//! | split active      | `ŝ − βᵀH[:,j] + μ_j`              | `βᵀQ[:,j]`              |
//! | stable inactive   | `−βᵀH[:,j]`                       | –                       |
//! | split inactive    | `−βᵀH[:,j] − τ_j`                 | `0`                     |
//! | unstable, unsplit | `π*_j + α_j [ŝ]₋ − βᵀH[:,j]`      | three-case `h(β)`       |
//!
//! where `π* = clamp((u[ŝ]₊ − βᵀQ[:,j]) / (u − l), 0, [ŝ]₊)`.
//!
//! Every `(α, β, μ, τ)` in the box gives a lower bound on the split-constrained
//! LP relaxation, so the bound is sound without any optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, InputSpec, ReluNetwork};
use crate::propagation::{CutMatrixView, NeuronClass, Phase, PreActBounds, SplitSet};

/// Optimizable multipliers.
///
/// `alpha` and `split_duals` are dense over the initially-unstable neurons
/// (see [`PreActBounds::unstable_index`]). `alpha` is read only for unsplit
/// neurons; `split_duals` holds `μ` for neurons in `Z+` and `τ` for neurons in
/// `Z−` and is ignored elsewhere. `beta` is aligned with the rows of a
/// [`CutMatrixView`] and keyed by `beta_ids`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub split_duals: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_ids: Vec<u64>,
}

impl DualState {
    /// Slope heuristic for `α`, zeros elsewhere.
    pub fn initial(bounds: &PreActBounds, cuts: &CutMatrixView) -> Self {
        let alpha = bounds
            .unstable()
            .iter()
            .map(|&id| {
                if bounds.u(id) >= -bounds.l(id) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        DualState {
            alpha,
            split_duals: vec![0.0; bounds.num_unstable()],
            beta: vec![0.0; cuts.len()],
            beta_ids: cuts.ids().to_vec(),
        }
    }

    /// All multipliers zero, including `α`.
    pub fn zeros(bounds: &PreActBounds, cuts: &CutMatrixView) -> Self {
        DualState {
            alpha: vec![0.0; bounds.num_unstable()],
            split_duals: vec![0.0; bounds.num_unstable()],
            beta: vec![0.0; cuts.len()],
            beta_ids: cuts.ids().to_vec(),
        }
    }

    /// Re-keys `beta` onto `cuts`; rows absent from `self` start at 0.
    pub fn aligned(&self, cuts: &CutMatrixView) -> DualState {
        if self.beta_ids == cuts.ids() {
            return self.clone();
        }
        let beta = cuts
            .ids()
            .iter()
            .map(|id| match self.beta_ids.binary_search(id) {
                Ok(k) => self.beta[k],
                Err(_) => self
                    .beta_ids
                    .iter()
                    .position(|x| x == id)
                    .map_or(0.0, |k| self.beta[k]),
            })
            .collect();
        DualState {
            alpha: self.alpha.clone(),
            split_duals: self.split_duals.clone(),
            beta,
            beta_ids: cuts.ids().to_vec(),
        }
    }

    /// `μ` or `τ` of a split neuron.
    pub fn split_dual(&self, bounds: &PreActBounds, id: crate::model::NeuronId) -> f64 {
        bounds
            .unstable_index(id)
            .map_or(0.0, |k| self.split_duals[k])
    }

    pub fn validate(&self, bounds: &PreActBounds, cuts: &CutMatrixView) -> Result<()> {
        let n = bounds.num_unstable();
        if self.alpha.len() != n || self.split_duals.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "dual state covers {} / {} neurons but {n} are unstable",
                self.alpha.len(),
                self.split_duals.len()
            )));
        }
        if self.beta.len() != cuts.len() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries for {} cut rows",
                self.beta.len(),
                cuts.len()
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidDual(format!("alpha = {a} outside [0, 1]")));
        }
        if let Some(v) = self
            .split_duals
            .iter()
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidDual(format!("mu/tau = {v} is negative")));
        }
        if let Some(v) = self.beta.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidDual(format!("beta = {v} is negative")));
        }
        Ok(())
    }

    /// Clamps into the feasible box.
    pub fn project(&mut self) {
        for a in &mut self.alpha {
            *a = if a.is_nan() { 0.0 } else { a.clamp(0.0, 1.0) };
        }
        for v in self.split_duals.iter_mut().chain(self.beta.iter_mut()) {
            // Also maps NaN to 0.
            if v.is_nan() || *v <= 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Gradient of the bound with respect to each block of [`DualState`].
#[derive(Clone, Debug, PartialEq)]
pub struct DualGrad {
    pub alpha: Vec<f64>,
    pub split_duals: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Active,
    Inactive,
    Unstable(usize),
    SplitActive(usize),
    SplitInactive(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PiBranch {
    Ratio,
    Upper,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HCase {
    Middle,
    Zero,
    Q,
}

#[derive(Clone, Copy, Debug, Default)]
struct NeuronTape {
    s: f64,
    q: f64,
    pi: f64,
    h: f64,
    pi_branch: Option<PiBranch>,
    h_case: Option<HCase>,
}

/// Per-neuron values of the last evaluation, for branching heuristics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronTrace {
    /// `ŝ = ν(i+1)ᵀW(i+1)[:,j] − βᵀG[:,j]`.
    pub s: f64,
    /// `βᵀQ[:,j]`.
    pub q: f64,
    pub pi: f64,
    /// Contribution of this neuron to the bound (`≤ 0` for unsplit neurons).
    pub h: f64,
}

/// Result of [`Propagator::eval_with_trace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub bound: f64,
    /// Indexed like `alpha`.
    pub neurons: Vec<NeuronTrace>,
    /// Minimizer of the input term, `x0 − ε·sign(W(1)ᵀν(1))`.
    pub input_point: Vec<f64>,
}

type Columns = Vec<Vec<Vec<(usize, f64)>>>;

/// A bound problem with its structure compiled: neuron slots and cut columns.
pub struct Propagator<'a> {
    network: &'a ReluNetwork,
    input: &'a InputSpec,
    bounds: &'a PreActBounds,
    objective: Vec<f64>,
    slots: Vec<Vec<Slot>>,
    h_cols: Columns,
    g_cols: Columns,
    q_cols: Columns,
    d: Vec<f64>,
    num_unstable: usize,
}

fn empty_columns(widths: &[usize]) -> Columns {
    widths.iter().map(|&w| vec![Vec::new(); w]).collect()
}

impl<'a> Propagator<'a> {
    /// `objective` weights the outputs of the final layer; canonical networks use `[1.0]`.
    pub fn new(
        network: &'a ReluNetwork,
        input: &'a InputSpec,
        bounds: &'a PreActBounds,
        split: &SplitSet,
        cuts: &CutMatrixView,
        objective: &[f64],
    ) -> Result<Self> {
        let hidden = network.num_hidden();
        if input.dim() != network.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input spec has dimension {} but the network expects {}",
                input.dim(),
                network.input_dim()
            )));
        }
        if bounds.num_layers() < hidden {
            return Err(Error::DimensionMismatch(format!(
                "bounds cover {} layers but the network has {hidden} hidden layers",
                bounds.num_layers()
            )));
        }
        if objective.len() != network.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "objective has length {} for {} outputs",
                objective.len(),
                network.output_dim()
            )));
        }
        let widths = network.hidden_widths();
        let mut slots = Vec::with_capacity(hidden);
        for (k, &w) in widths.iter().enumerate() {
            let layer = k + 1;
            if bounds.lower(layer).len() != w {
                return Err(Error::DimensionMismatch(format!(
                    "bounds of layer {layer} have length {} but the layer has width {w}",
                    bounds.lower(layer).len()
                )));
            }
            let layer_slots = (0..w)
                .map(|j| {
                    let id = crate::model::NeuronId::new(layer, j);
                    match bounds.class(id) {
                        NeuronClass::Active => Slot::Active,
                        NeuronClass::Inactive => Slot::Inactive,
                        NeuronClass::Unstable => {
                            let u = bounds.unstable_index(id).expect("unstable index");
                            match split.phase(id) {
                                None => Slot::Unstable(u),
                                Some(Phase::Active) => Slot::SplitActive(u),
                                Some(Phase::Inactive) => Slot::SplitInactive(u),
                            }
                        }
                    }
                })
                .collect();
            slots.push(layer_slots);
        }
        for (id, _) in split.iter() {
            if id.layer == 0 || id.layer > hidden || !bounds.is_unstable(id) {
                return Err(Error::NotUnstable(id));
            }
        }

        let mut h_cols = empty_columns(&widths);
        let mut g_cols = empty_columns(&widths);
        let mut q_cols = empty_columns(&widths);
        for (r, row) in cuts.rows().iter().enumerate() {
            if !row.is_finite() {
                return Err(Error::NonFinite(format!("cut row {r}")));
            }
            for (cols, entries) in [(&mut h_cols, &row.h), (&mut g_cols, &row.g)] {
                for &(id, c) in entries {
                    if id.layer == 0 || id.layer > hidden || id.index >= widths[id.layer - 1] {
                        return Err(Error::DimensionMismatch(format!(
                            "cut row {r} references neuron {id} outside the network"
                        )));
                    }
                    cols[id.layer - 1][id.index].push((r, c));
                }
            }
            for &(id, c) in &row.q {
                if id.layer == 0 || id.layer > hidden || !bounds.is_unstable(id) {
                    return Err(Error::NotUnstable(id));
                }
                q_cols[id.layer - 1][id.index].push((r, c));
            }
        }

        Ok(Propagator {
            network,
            input,
            bounds,
            objective: objective.to_vec(),
            slots,
            h_cols,
            g_cols,
            q_cols,
            d: cuts.rows().iter().map(|r| r.d).collect(),
            num_unstable: bounds.num_unstable(),
        })
    }

    pub fn num_cuts(&self) -> usize {
        self.d.len()
    }

    pub fn num_unstable(&self) -> usize {
        self.num_unstable
    }

    /// The bound value.
    pub fn eval(&self, duals: &DualState) -> f64 {
        self.run(duals, None, None)
    }

    /// The bound value and its (sub)gradient.
    pub fn eval_with_grad(&self, duals: &DualState) -> (f64, DualGrad) {
        let mut grad = DualGrad {
            alpha: vec![0.0; self.num_unstable],
            split_duals: vec![0.0; self.num_unstable],
            beta: vec![0.0; self.d.len()],
        };
        let g = self.run(duals, Some(&mut grad), None);
        (g, grad)
    }

    /// The bound value with per-neuron values and the input point selected by the bound.
    pub fn eval_with_trace(&self, duals: &DualState) -> Evaluation {
        let mut ev = Evaluation {
            bound: 0.0,
            neurons: vec![
                NeuronTrace {
                    s: 0.0,
                    q: 0.0,
                    pi: 0.0,
                    h: 0.0,
                };
                self.num_unstable
            ],
            input_point: Vec::new(),
        };
        ev.bound = self.run(duals, None, Some(&mut ev));
        ev
    }

    fn colsum(col: &[(usize, f64)], beta: &[f64]) -> f64 {
        col.iter().fold(0.0, |acc, &(r, c)| acc + beta[r] * c)
    }

    fn run(
        &self,
        duals: &DualState,
        grad: Option<&mut DualGrad>,
        trace: Option<&mut Evaluation>,
    ) -> f64 {
        let net = self.network;
        let num_layers = net.num_layers();
        let beta = &duals.beta;

        // nu[k] holds ν(k+1).
        let mut nu: Vec<Vec<f64>> = vec![Vec::new(); num_layers];
        nu[num_layers - 1] = self.objective.iter().map(|c| -c).collect();
        let mut tapes: Vec<Vec<NeuronTape>> = vec![Vec::new(); num_layers - 1];
        let mut h_total = 0.0;

        for layer in (1..num_layers).rev() {
            let y = net.layer(layer + 1).apply_transposed(&nu[layer]);
            let lo = self.bounds.lower(layer);
            let up = self.bounds.upper(layer);
            let mut nu_layer = vec![0.0; y.len()];
            let mut tape = vec![NeuronTape::default(); y.len()];
            for j in 0..y.len() {
                let hq = Self::colsum(&self.h_cols[layer - 1][j], beta);
                let gq = Self::colsum(&self.g_cols[layer - 1][j], beta);
                let s = y[j] - gq;
                let t = &mut tape[j];
                t.s = s;
                nu_layer[j] = match self.slots[layer - 1][j] {
                    Slot::Active => s - hq,
                    Slot::Inactive => -hq,
                    Slot::SplitActive(k) => {
                        let q = Self::colsum(&self.q_cols[layer - 1][j], beta);
                        t.q = q;
                        t.h = q;
                        h_total += q;
                        s - hq + duals.split_duals[k]
                    }
                    Slot::SplitInactive(k) => {
                        t.q = Self::colsum(&self.q_cols[layer - 1][j], beta);
                        -hq - duals.split_duals[k]
                    }
                    Slot::Unstable(k) => {
                        let (l, u) = (lo[j], up[j]);
                        let q = Self::colsum(&self.q_cols[layer - 1][j], beta);
                        let sp = s.max(0.0);
                        let sn = s.min(0.0);
                        let ratio = (u * sp - q) / (u - l);
                        let (candidate, upper_branch) = if ratio <= sp {
                            (ratio, PiBranch::Ratio)
                        } else {
                            (sp, PiBranch::Upper)
                        };
                        let (pi, branch) = if candidate > 0.0 {
                            (candidate, upper_branch)
                        } else {
                            (0.0, PiBranch::Zero)
                        };
                        let (h, case) = if l * sp <= q && q <= u * sp {
                            (l * pi, HCase::Middle)
                        } else if q >= u * sp {
                            (0.0, HCase::Zero)
                        } else {
                            (q, HCase::Q)
                        };
                        t.q = q;
                        t.pi = pi;
                        t.h = h;
                        t.pi_branch = Some(branch);
                        t.h_case = Some(case);
                        h_total += h;
                        pi + duals.alpha[k] * sn - hq
                    }
                };
            }
            nu[layer - 1] = nu_layer;
            tapes[layer - 1] = tape;
        }

        let y0 = net.layer(1).apply_transposed(&nu[0]);
        let eps = self.input.eps;
        let mut g = 0.0;
        for (yk, xk) in y0.iter().zip(&self.input.x0) {
            g -= yk * xk + eps * yk.abs();
        }
        for layer in 1..=num_layers {
            g -= dot(&nu[layer - 1], &net.layer(layer).bias);
        }
        g -= dot(beta, &self.d);
        g += h_total;

        if let Some(ev) = trace {
            ev.input_point = y0
                .iter()
                .zip(&self.input.x0)
                .map(|(&y, &x)| {
                    if y > 0.0 {
                        x - eps
                    } else if y < 0.0 {
                        x + eps
                    } else {
                        x
                    }
                })
                .collect();
            let trace = &mut ev.neurons;
            for layer in 1..num_layers {
                for (j, t) in tapes[layer - 1].iter().enumerate() {
                    if let Some(k) = self
                        .bounds
                        .unstable_index(crate::model::NeuronId::new(layer, j))
                    {
                        trace[k] = NeuronTrace {
                            s: t.s,
                            q: t.q,
                            pi: t.pi,
                            h: t.h,
                        };
                    }
                }
            }
        }

        if let Some(grad) = grad {
            self.backward(duals, &y0, &tapes, grad);
        }
        g
    }

    fn backward(
        &self,
        duals: &DualState,
        y0: &[f64],
        tapes: &[Vec<NeuronTape>],
        grad: &mut DualGrad,
    ) {
        let net = self.network;
        let num_layers = net.num_layers();
        let eps = self.input.eps;

        for (gb, d) in grad.beta.iter_mut().zip(&self.d) {
            *gb -= d;
        }

        // Adjoint of y0 = W(1)ᵀ ν(1).
        let y0_bar: Vec<f64> = y0
            .iter()
            .zip(&self.input.x0)
            .map(|(&y, &x)| {
                let sign = if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                -x - eps * sign
            })
            .collect();
        let mut nu_bar: Vec<f64> = net
            .layer(1)
            .apply(&y0_bar)
            .iter()
            .zip(&net.layer(1).bias)
            .map(|(v, b)| v - 2.0 * b)
            .collect();
        // `apply` adds the bias once; the bias term of the objective subtracts it once more.

        for layer in 1..num_layers {
            let lo = self.bounds.lower(layer);
            let up = self.bounds.upper(layer);
            let tape = &tapes[layer - 1];
            let mut y_bar = vec![0.0; tape.len()];
            for j in 0..tape.len() {
                let t = tape[j];
                let nb = nu_bar[j];
                let mut s_bar = 0.0;
                let hq_bar = -nb;
                let mut q_bar = 0.0;
                match self.slots[layer - 1][j] {
                    Slot::Active => {
                        s_bar = nb;
                    }
                    Slot::Inactive => {}
                    Slot::SplitActive(k) => {
                        s_bar = nb;
                        grad.split_duals[k] += nb;
                        q_bar = 1.0;
                    }
                    Slot::SplitInactive(k) => {
                        grad.split_duals[k] -= nb;
                    }
                    Slot::Unstable(k) => {
                        let (l, u) = (lo[j], up[j]);
                        let sn = t.s.min(0.0);
                        grad.alpha[k] += nb * sn;
                        let sn_bar = nb * duals.alpha[k];
                        let mut pi_bar = nb;
                        match t.h_case.expect("unstable tape") {
                            HCase::Middle => pi_bar += l,
                            HCase::Zero => {}
                            HCase::Q => q_bar += 1.0,
                        }
                        let mut sp_bar = 0.0;
                        match t.pi_branch.expect("unstable tape") {
                            PiBranch::Ratio => {
                                sp_bar += pi_bar * u / (u - l);
                                q_bar -= pi_bar / (u - l);
                            }
                            PiBranch::Upper => sp_bar += pi_bar,
                            PiBranch::Zero => {}
                        }
                        s_bar = if t.s >= 0.0 { sp_bar } else { sn_bar };
                    }
                }
                y_bar[j] = s_bar;
                let gq_bar = -s_bar;
                for (cols, bar) in [
                    (&self.h_cols, hq_bar),
                    (&self.g_cols, gq_bar),
                    (&self.q_cols, q_bar),
                ] {
                    if bar != 0.0 {
                        for &(r, c) in &cols[layer - 1][j] {
                            grad.beta[r] += bar * c;
                        }
                    }
                }
            }
            if layer + 1 < num_layers {
                let next = net.layer(layer + 1);
                nu_bar = next
                    .apply(&y_bar)
                    .iter()
                    .zip(&next.bias)
                    .map(|(v, b)| v - 2.0 * b)
                    .collect();
            }
        }
    }
}

/// The bound for one fixed dual assignment.
pub fn gcp_lower_bound(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
    cuts: &CutMatrixView,
    duals: &DualState,
) -> Result<f64> {
    duals.validate(bounds, cuts)?;
    let prop = Propagator::new(network, spec, bounds, split, cuts, &[1.0])?;
    Ok(prop.eval(duals))
}
