use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputSpec, NeuronId, ReluNetwork};
use crate::oracle::simplex::{simplex_solve, LinearProgram, LpStatus, Sense};
use crate::propagation::{CutMatrixView, NeuronClass, PreActBounds, SplitSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxationMode {
    /// `z ∈ {0, 1}`; solved only through enumeration.
    Integer,
    /// `z ∈ [0, 1]`.
    Lp,
    /// No indicators; single upper envelope `x̂ ≤ u/(u−l)·(x − l)`.
    Planet,
}

/// The mixed-integer encoding of a canonical network over the input box.
///
/// Variables are laid out as the input, then `x(i), x̂(i)` per hidden layer,
/// then the scalar output `x(L)`, then one `z` per unstable neuron.
#[derive(Clone, Debug)]
pub struct MilpEncoding {
    pub mode: RelaxationMode,
    pub lp: LinearProgram,
    pub input: Vec<usize>,
    /// `pre[i-1][j]` is the variable of `x(i)_j`, for `i = 1..=L`.
    pub pre: Vec<Vec<usize>>,
    /// `post[i-1][j]` is the variable of `x̂(i)_j`, for hidden layers.
    pub post: Vec<Vec<usize>>,
    pub z: BTreeMap<NeuronId, usize>,
    /// Variables required to be integral (empty unless mode is `Integer`).
    pub integer: Vec<usize>,
}

impl MilpEncoding {
    pub fn output(&self) -> usize {
        self.pre.last().expect("output layer")[0]
    }

    pub fn z_var(&self, id: NeuronId) -> Option<usize> {
        self.z.get(&id).copied()
    }

    /// Fixes `z` of each split neuron to its branch.
    pub fn fix_split(&mut self, split: &SplitSet) -> Result<()> {
        for (id, phase) in split.iter() {
            let var = self.z_var(id).ok_or(Error::NotUnstable(id))?;
            self.lp.set_bounds(var, phase.z(), phase.z());
        }
        Ok(())
    }

    /// Appends `H x + G x̂ + Q z ≤ d` rows.
    pub fn add_cuts(&mut self, cuts: &CutMatrixView) -> Result<()> {
        for row in cuts.rows() {
            let mut entries = Vec::new();
            for &(id, c) in &row.h {
                entries.push((self.var(&self.pre, id)?, c));
            }
            for &(id, c) in &row.g {
                entries.push((self.var(&self.post, id)?, c));
            }
            for &(id, c) in &row.q {
                entries.push((self.z_var(id).ok_or(Error::NotUnstable(id))?, c));
            }
            self.lp.add_sparse_row(&entries, Sense::Le, row.d);
        }
        Ok(())
    }

    fn var(&self, table: &[Vec<usize>], id: NeuronId) -> Result<usize> {
        table
            .get(id.layer.wrapping_sub(1))
            .and_then(|l| l.get(id.index))
            .copied()
            .ok_or_else(|| Error::DimensionMismatch(format!("neuron {id} outside the network")))
    }
}

pub fn encode_milp(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    mode: RelaxationMode,
) -> Result<MilpEncoding> {
    if !network.is_canonical() {
        return Err(Error::InvalidArgument(
            "network must have a single output".into(),
        ));
    }
    if spec.dim() != network.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input spec has dimension {} but the network expects {}",
            spec.dim(),
            network.input_dim()
        )));
    }
    let num_layers = network.num_layers();
    if bounds.num_layers() != num_layers - 1 {
        return Err(Error::DimensionMismatch(
            "bounds do not cover every hidden layer".into(),
        ));
    }

    let mut next = 0usize;
    let mut alloc = |k: usize| {
        let v: Vec<usize> = (next..next + k).collect();
        next += k;
        v
    };
    let input = alloc(network.input_dim());
    let mut pre = Vec::with_capacity(num_layers);
    let mut post = Vec::with_capacity(num_layers - 1);
    for i in 1..num_layers {
        pre.push(alloc(network.width(i)));
        post.push(alloc(network.width(i)));
    }
    pre.push(alloc(1));
    let mut z = BTreeMap::new();
    if mode != RelaxationMode::Planet {
        for &id in bounds.unstable() {
            z.insert(id, alloc(1)[0]);
        }
    }
    let mut lp = LinearProgram::new(next);
    for (k, &v) in input.iter().enumerate() {
        lp.set_bounds(v, spec.x0[k] - spec.eps, spec.x0[k] + spec.eps);
    }
    for &v in z.values() {
        lp.set_bounds(v, 0.0, 1.0);
    }
    lp.objective[pre[num_layers - 1][0]] = 1.0;

    for i in 1..=num_layers {
        let layer = network.layer(i);
        let source: &[usize] = if i == 1 { &input } else { &post[i - 2] };
        for ((&var, row), &bias) in pre[i - 1].iter().zip(&layer.weights).zip(&layer.bias) {
            // x(i)_j − W(i)_j · source = b(i)_j
            let mut entries = vec![(var, 1.0)];
            entries.extend(source.iter().zip(row).map(|(&v, &w)| (v, -w)));
            lp.add_sparse_row(&entries, Sense::Eq, bias);
        }
    }

    for i in 1..num_layers {
        for j in 0..network.width(i) {
            let id = NeuronId::new(i, j);
            let (x, xh) = (pre[i - 1][j], post[i - 1][j]);
            match bounds.class(id) {
                NeuronClass::Active => lp.add_sparse_row(&[(xh, 1.0), (x, -1.0)], Sense::Eq, 0.0),
                NeuronClass::Inactive => lp.add_sparse_row(&[(xh, 1.0)], Sense::Eq, 0.0),
                NeuronClass::Unstable => {
                    let (l, u) = (bounds.l(id), bounds.u(id));
                    lp.add_sparse_row(&[(xh, 1.0)], Sense::Ge, 0.0);
                    lp.add_sparse_row(&[(xh, 1.0), (x, -1.0)], Sense::Ge, 0.0);
                    match mode {
                        RelaxationMode::Planet => {
                            // x̂ − u/(u−l)·x ≤ −u·l/(u−l)
                            let slope = u / (u - l);
                            lp.add_sparse_row(&[(xh, 1.0), (x, -slope)], Sense::Le, -slope * l);
                        }
                        _ => {
                            let zv = z[&id];
                            // x̂ − u z ≤ 0
                            lp.add_sparse_row(&[(xh, 1.0), (zv, -u)], Sense::Le, 0.0);
                            // x̂ − x − l z ≤ −l
                            lp.add_sparse_row(&[(xh, 1.0), (x, -1.0), (zv, -l)], Sense::Le, -l);
                        }
                    }
                }
            }
        }
    }

    let integer = if mode == RelaxationMode::Integer {
        z.values().copied().collect()
    } else {
        Vec::new()
    };
    Ok(MilpEncoding {
        mode,
        lp,
        input,
        pre,
        post,
        z,
        integer,
    })
}

fn solve_value(lp: &LinearProgram) -> Result<f64> {
    let sol = simplex_solve(lp)?;
    match sol.status {
        LpStatus::Optimal | LpStatus::Infeasible => Ok(sol.value),
        LpStatus::Unbounded => Err(Error::Solver(
            "relaxation unbounded over a bounded input box".into(),
        )),
    }
}

/// LP-relaxation optimum with split indicators fixed and cut rows appended;
/// `+∞` when the constrained relaxation is infeasible.
pub fn lp_relaxation_bound(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
    cuts: &CutMatrixView,
) -> Result<f64> {
    let mut enc = encode_milp(network, spec, bounds, RelaxationMode::Lp)?;
    enc.fix_split(split)?;
    enc.add_cuts(cuts)?;
    solve_value(&enc.lp)
}

/// Optimum of the Planet relaxation.
pub fn planet_bound(network: &ReluNetwork, spec: &InputSpec, bounds: &PreActBounds) -> Result<f64> {
    solve_value(&encode_milp(network, spec, bounds, RelaxationMode::Planet)?.lp)
}

/// Whether fixing `z = 0` (resp. `z = 1`) in the LP relaxation equals the
/// Planet relaxation with `u = 0` (resp. `l = 0`) for `neuron`.
pub fn check_split_equivalence(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    neuron: NeuronId,
) -> Result<bool> {
    if !bounds.is_unstable(neuron) {
        return Err(Error::NotUnstable(neuron));
    }
    let tol = 1e-7;
    let same = |a: f64, b: f64| (a.is_infinite() && a == b) || (a - b).abs() <= tol;
    for (phase_z, l, u) in [(0.0, bounds.l(neuron), 0.0), (1.0, 0.0, bounds.u(neuron))] {
        let mut enc = encode_milp(network, spec, bounds, RelaxationMode::Lp)?;
        let zv = enc.z_var(neuron).expect("unstable neuron has an indicator");
        enc.lp.set_bounds(zv, phase_z, phase_z);
        let fixed = solve_value(&enc.lp)?;
        let overridden = bounds.with_override(neuron, l, u);
        let planet = planet_bound(network, spec, &overridden)?;
        if !same(fixed, planet) {
            return Ok(false);
        }
    }
    Ok(true)
}
