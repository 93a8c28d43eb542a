use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, InputSpec, NeuronId, ReluNetwork};
use crate::oracle::simplex::{simplex_solve, LinearProgram, LpStatus, Sense};
use crate::propagation::{NeuronClass, Phase, PreActBounds, SplitSet};

/// Largest unstable count accepted by the enumeration oracles.
pub const ENUMERATION_CAP: usize = 16;

const FEAS_TOL: f64 = 1e-9;

/// A non-empty activation region with the minimum of the network over it.
///
/// `pattern[k]` is the state of the `k`-th unstable neuron in
/// [`PreActBounds::unstable`] order (`true` = active).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub pattern: Vec<bool>,
    pub value: f64,
    pub argmin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMin {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub pattern: Vec<bool>,
}

/// Affine map `x ↦ A x + c` of the input, one row per neuron.
#[derive(Clone)]
struct Affine {
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
}

/// `a·x + c ≤ 0` (or `≥ 0` when `active`).
#[derive(Clone)]
struct SignRow {
    a: Vec<f64>,
    c: f64,
    active: bool,
}

struct Enumerator<'a> {
    network: &'a ReluNetwork,
    spec: &'a InputSpec,
    bounds: &'a PreActBounds,
    /// Unstable neuron indices per hidden layer.
    layer_unstable: Vec<Vec<usize>>,
}

fn base_lp(spec: &InputSpec, rows: &[SignRow]) -> LinearProgram {
    let n = spec.dim();
    let mut lp = LinearProgram::new(n);
    for k in 0..n {
        lp.set_bounds(k, spec.x0[k] - spec.eps, spec.x0[k] + spec.eps);
    }
    for r in rows {
        let sense = if r.active { Sense::Ge } else { Sense::Le };
        lp.add_row(r.a.clone(), sense, -r.c);
    }
    lp
}

fn minimize(
    spec: &InputSpec,
    rows: &[SignRow],
    objective: &[f64],
) -> Result<Option<(f64, Vec<f64>)>> {
    let mut lp = base_lp(spec, rows);
    lp.objective = objective.to_vec();
    let sol = simplex_solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some((sol.value, sol.x))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(Error::Solver(
            "region LP unbounded over a bounded box".into(),
        )),
    }
}

impl<'a> Enumerator<'a> {
    fn new(
        network: &'a ReluNetwork,
        spec: &'a InputSpec,
        bounds: &'a PreActBounds,
    ) -> Result<Self> {
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
        if bounds.num_layers() != network.num_hidden() {
            return Err(Error::DimensionMismatch(
                "bounds do not cover every hidden layer".into(),
            ));
        }
        let layer_unstable = (1..network.num_layers())
            .map(|i| {
                (0..network.width(i))
                    .filter(|&j| bounds.class(NeuronId::new(i, j)) == NeuronClass::Unstable)
                    .collect()
            })
            .collect();
        Ok(Enumerator {
            network,
            spec,
            bounds,
            layer_unstable,
        })
    }

    fn first_pre(&self) -> Affine {
        let l1 = self.network.layer(1);
        Affine {
            a: l1.weights.clone(),
            c: l1.bias.clone(),
        }
    }

    /// Pre-activation map of layer `layer + 1` given the states of layer `layer`.
    fn next_pre(&self, layer: usize, pre: &Affine, states: &[bool]) -> Affine {
        let n = self.spec.dim();
        let mut unstable_pos = 0;
        let post: Vec<Option<usize>> = (0..pre.c.len())
            .map(|j| {
                let active = match self.bounds.class(NeuronId::new(layer, j)) {
                    NeuronClass::Active => true,
                    NeuronClass::Inactive => false,
                    NeuronClass::Unstable => {
                        let s = states[unstable_pos];
                        unstable_pos += 1;
                        s
                    }
                };
                active.then_some(j)
            })
            .collect();
        let next = self.network.layer(layer + 1);
        let mut a = vec![vec![0.0; n]; next.rows()];
        let mut c = next.bias.clone();
        for (r, row) in next.weights.iter().enumerate() {
            for j in post.iter().flatten().copied() {
                let w = row[j];
                if w == 0.0 {
                    continue;
                }
                for (ak, pk) in a[r].iter_mut().zip(&pre.a[j]) {
                    *ak += w * pk;
                }
                c[r] += w * pre.c[j];
            }
        }
        Affine { a, c }
    }

    fn run(&self, emit: &mut dyn FnMut(Region)) -> Result<()> {
        let start = self.spec.x0.clone();
        let mut rows = Vec::new();
        let mut states = Vec::new();
        let mut pattern = Vec::new();
        self.dfs(
            1,
            &self.first_pre(),
            &mut states,
            &mut rows,
            &start,
            &mut pattern,
            emit,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(
        &self,
        layer: usize,
        pre: &Affine,
        states: &mut Vec<bool>,
        rows: &mut Vec<SignRow>,
        point: &[f64],
        pattern: &mut Vec<bool>,
        emit: &mut dyn FnMut(Region),
    ) -> Result<()> {
        let unstable = &self.layer_unstable[layer - 1];
        if states.len() == unstable.len() {
            let next = self.next_pre(layer, pre, states);
            if layer + 1 == self.network.num_layers() {
                if let Some((v, x)) = minimize(self.spec, rows, &next.a[0])? {
                    emit(Region {
                        pattern: pattern.clone(),
                        value: v + next.c[0],
                        argmin: x,
                    });
                }
                return Ok(());
            }
            let mut next_states = Vec::new();
            return self.dfs(
                layer + 1,
                &next,
                &mut next_states,
                rows,
                point,
                pattern,
                emit,
            );
        }
        let j = unstable[states.len()];
        let (a, c) = (&pre.a[j], pre.c[j]);
        let at_point = dot(a, point) + c;
        for active in [false, true] {
            let satisfied = if active {
                at_point >= -FEAS_TOL
            } else {
                at_point <= FEAS_TOL
            };
            let child_point = if satisfied {
                Some(point.to_vec())
            } else {
                let sign = if active { -1.0 } else { 1.0 };
                let objective: Vec<f64> = a.iter().map(|v| sign * v).collect();
                match minimize(self.spec, rows, &objective)? {
                    Some((v, x)) if v + sign * c <= FEAS_TOL => Some(x),
                    _ => None,
                }
            };
            let Some(child_point) = child_point else {
                continue;
            };
            rows.push(SignRow {
                a: a.clone(),
                c,
                active,
            });
            states.push(active);
            pattern.push(active);
            let res = self.dfs(layer, pre, states, rows, &child_point, pattern, emit);
            pattern.pop();
            states.pop();
            rows.pop();
            res?;
        }
        Ok(())
    }

    /// Sign rows of one complete pattern, followed by the objective row.
    fn pattern_rows(&self, pattern: &[bool]) -> Vec<SignRow> {
        let mut rows = Vec::new();
        let mut pre = self.first_pre();
        let mut pos = 0;
        for layer in 1..self.network.num_layers() {
            let unstable = &self.layer_unstable[layer - 1];
            let states = &pattern[pos..pos + unstable.len()];
            for (&j, &active) in unstable.iter().zip(states) {
                rows.push(SignRow {
                    a: pre.a[j].clone(),
                    c: pre.c[j],
                    active,
                });
            }
            pos += unstable.len();
            pre = self.next_pre(layer, &pre, states);
        }
        rows.push(SignRow {
            a: pre.a[0].clone(),
            c: pre.c[0],
            active: true,
        });
        rows
    }
}

fn check_cap(bounds: &PreActBounds) -> Result<()> {
    if bounds.num_unstable() > ENUMERATION_CAP {
        return Err(Error::TooManyUnstable {
            count: bounds.num_unstable(),
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Every activation region with a non-empty intersection with the input box,
/// in lexicographic pattern order (inactive before active).
pub fn enumerate_regions(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
) -> Result<Vec<Region>> {
    check_cap(bounds)?;
    let e = Enumerator::new(network, spec, bounds)?;
    let mut out = Vec::new();
    e.run(&mut |r| out.push(r))?;
    Ok(out)
}

fn best_of(regions: impl Iterator<Item = Region>) -> Option<ExactMin> {
    let mut best: Option<ExactMin> = None;
    for r in regions {
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(ExactMin {
                value: r.value,
                argmin: r.argmin,
                pattern: r.pattern,
            });
        }
    }
    best
}

/// Global minimum of the canonical network over the input box.
pub fn exact_min(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
) -> Result<ExactMin> {
    best_of(enumerate_regions(network, spec, bounds)?.into_iter())
        .ok_or_else(|| Error::Solver("no feasible activation region".into()))
}

/// Minimum over the regions whose pattern satisfies `keep`; `None` if there are none.
pub fn exact_min_where(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    keep: impl Fn(&[bool]) -> bool,
) -> Result<Option<ExactMin>> {
    Ok(best_of(
        enumerate_regions(network, spec, bounds)?
            .into_iter()
            .filter(|r| keep(&r.pattern)),
    ))
}

/// Minimum over the region fixed by a split of every unstable neuron;
/// `None` when the region is empty.
pub fn region_min(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
) -> Result<Option<(f64, Vec<f64>)>> {
    let e = Enumerator::new(network, spec, bounds)?;
    let pattern = bounds
        .unstable()
        .iter()
        .map(|&id| match split.phase(id) {
            Some(p) => Ok(p == Phase::Active),
            None => Err(Error::InvalidArgument(format!("neuron {id} is not split"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    let mut rows = e.pattern_rows(&pattern);
    let objective = rows.pop().expect("objective row");
    Ok(minimize(spec, &rows, &objective.a)?.map(|(v, x)| (v + objective.c, x)))
}
