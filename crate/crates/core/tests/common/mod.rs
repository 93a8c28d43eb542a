#![allow(dead_code)]

use std::sync::OnceLock;

use biccos_core::oracle::{Constraint, LinearProgram, Sense};
use biccos_core::{
    canonicalize, gen_instances, GenConfig, InputSpec, Instance, NeuronClass, NeuronId, Phase,
    PreActBounds, ReluNetwork, SplitSet,
};
use rand::Rng;

/// Forward pass written against the raw layer data.
pub fn forward(net: &ReluNetwork, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let n = net.layers().len();
    for (i, layer) in net.layers().iter().enumerate() {
        let mut next = layer.bias.clone();
        for (r, row) in layer.weights.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                next[r] += w * h[c];
            }
        }
        if i + 1 < n {
            for v in &mut next {
                *v = v.max(0.0);
            }
        }
        h = next;
    }
    h
}

/// Split-constrained backward bound in the primal-coefficient form: `lam`
/// holds the objective's coefficients on the current pre-activations,
/// relaxations are chosen by coefficient sign, and each split adds its
/// multiplier on the pre-activation sign constraint.
pub fn beta_crown_bound(
    net: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
    alpha: impl Fn(NeuronId) -> f64,
    split_dual: impl Fn(NeuronId) -> f64,
) -> f64 {
    let layers = net.layers();
    let last = layers.len() - 1;
    // Coefficients on the output layer's pre-activation (a scalar).
    let mut lam = vec![1.0];
    let mut constant = 0.0;
    for i in (0..=last).rev() {
        let layer = &layers[i];
        for (r, &b) in layer.bias.iter().enumerate() {
            constant += lam[r] * b;
        }
        // Coefficients on the input of this layer.
        let mut a = vec![0.0; layer.cols()];
        for (r, row) in layer.weights.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                a[c] += lam[r] * w;
            }
        }
        if i == 0 {
            let center: f64 = a.iter().zip(&spec.x0).map(|(ai, xi)| ai * xi).sum();
            let radius: f64 = a.iter().map(|ai| ai.abs()).sum::<f64>() * spec.eps;
            return constant + center - radius;
        }
        // `a` multiplies post-activations of hidden layer `i`; map to pre-activations.
        let mut next = vec![0.0; a.len()];
        for (j, &aj) in a.iter().enumerate() {
            let id = NeuronId::new(i, j);
            let (l, u) = (bounds.l(id), bounds.u(id));
            next[j] = match (bounds.class(id), split.phase(id)) {
                (NeuronClass::Active, _) => aj,
                (NeuronClass::Inactive, _) => 0.0,
                (NeuronClass::Unstable, Some(Phase::Active)) => aj - split_dual(id),
                (NeuronClass::Unstable, Some(Phase::Inactive)) => split_dual(id),
                (NeuronClass::Unstable, None) => {
                    if aj >= 0.0 {
                        aj * alpha(id)
                    } else {
                        let slope = u / (u - l);
                        constant += aj * slope * (-l);
                        aj * slope
                    }
                }
            };
        }
        lam = next;
    }
    unreachable!("layer 0 returns")
}

/// Brute-force LP minimum over all basic solutions of a small LP with
/// finite variable bounds: every choice of `n` tight constraints is solved
/// by Gaussian elimination and feasible vertices are compared.
pub fn vertex_min(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut faces: Vec<(Vec<f64>, f64)> = Vec::new();
    for row in &lp.rows {
        faces.push((row.coeffs.clone(), row.rhs));
    }
    for v in 0..n {
        let mut e = vec![0.0; n];
        e[v] = 1.0;
        faces.push((e.clone(), lp.lower[v]));
        faces.push((e, lp.upper[v]));
    }
    let feasible = |x: &[f64]| {
        let tol = 1e-8;
        (0..n).all(|v| x[v] >= lp.lower[v] - tol && x[v] <= lp.upper[v] + tol)
            && lp.rows.iter().all(|Constraint { coeffs, sense, rhs }| {
                let lhs: f64 = coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
                match sense {
                    Sense::Le => lhs <= rhs + tol,
                    Sense::Ge => lhs >= rhs - tol,
                    Sense::Eq => (lhs - rhs).abs() <= tol,
                }
            })
    };
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&k| faces[k].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&k| faces[k].1).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v: f64 = lp.objective.iter().zip(&x).map(|(c, xi)| c * xi).sum();
                best = Some(best.map_or(v, |bv: f64| bv.min(v)));
            }
        }
        // Next combination.
        let m = faces.len();
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < m - n + k {
                idx[k] += 1;
                for t in k + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// A random split set over the unstable neurons, each split with probability `p`.
pub fn random_split(rng: &mut impl Rng, bounds: &PreActBounds, p: f64) -> SplitSet {
    let mut split = SplitSet::new();
    for id in bounds.unstable_neurons() {
        if rng.gen_bool(p) {
            let phase = if rng.gen_bool(0.5) {
                Phase::Active
            } else {
                Phase::Inactive
            };
            split.insert(id, phase).unwrap();
        }
    }
    split
}

pub struct Case {
    pub inst: Instance,
    pub net: ReluNetwork,
}

fn suite(
    seed: u64,
    shapes: &[&[usize]],
    per_shape: usize,
    max_unstable: usize,
    max_margin: f64,
) -> Vec<Case> {
    shapes
        .iter()
        .enumerate()
        .flat_map(|(k, shape)| {
            let cfg = GenConfig {
                seed: seed + k as u64,
                count: per_shape,
                shape: shape.to_vec(),
                max_unstable,
                max_margin,
                ..GenConfig::default()
            };
            gen_instances(&cfg).unwrap()
        })
        .map(|inst| Case {
            net: canonicalize(&inst.network, &inst.property).unwrap(),
            inst,
        })
        .collect()
}

/// 200 calibrated instances with at most 12 unstable neurons and 2–4 inputs.
pub fn oracle_suite() -> &'static [Case] {
    static SUITE: OnceLock<Vec<Case>> = OnceLock::new();
    SUITE.get_or_init(|| {
        suite(
            100,
            &[&[2, 8, 8, 1], &[3, 10, 10, 1], &[4, 12, 1], &[2, 10, 6, 2]],
            50,
            12,
            0.05,
        )
    })
}

/// Calibrated instances with up to 16 unstable neurons and small margins.
pub fn hard_candidates() -> &'static [Case] {
    static SUITE: OnceLock<Vec<Case>> = OnceLock::new();
    SUITE.get_or_init(|| {
        suite(
            200,
            &[
                &[3, 12, 12, 1],
                &[4, 20, 1],
                &[2, 8, 8, 8, 1],
                &[5, 16, 8, 1],
            ],
            100,
            16,
            0.01,
        )
    })
}

/// The seed-7 fixture: a random 2-16-16-2 network, its margin property, and
/// a ball around a random center shrunk until at most 12 neurons are unstable.
pub struct Fixture {
    pub raw: ReluNetwork,
    pub net: ReluNetwork,
    pub spec: InputSpec,
    pub bounds: PreActBounds,
}

pub fn seed7() -> Fixture {
    use rand::SeedableRng;
    let raw = biccos_core::generate::random_network(7, &[2, 16, 16, 2]).unwrap();
    let net = canonicalize(
        &raw,
        &biccos_core::PropertySpec {
            c: vec![1.0, -1.0],
            c0: 0.0,
        },
    )
    .unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let x0 = biccos_core::generate::random_center(&mut rng, 2);
    let mut eps = 0.5;
    loop {
        let spec = InputSpec::new(x0.clone(), eps).unwrap();
        let bounds = biccos_core::compute_preact_bounds(&net, &spec).unwrap();
        if bounds.num_unstable() <= 12 {
            return Fixture {
                raw,
                net,
                spec,
                bounds,
            };
        }
        eps *= 0.7;
    }
}

/// A uniform point of the input box.
pub fn sample(rng: &mut impl Rng, spec: &InputSpec) -> Vec<f64> {
    spec.x0
        .iter()
        .map(|c| c + rng.gen_range(-spec.eps..=spec.eps))
        .collect()
}

/// Activation state of every hidden neuron, stable ones included.
pub fn full_pattern(net: &ReluNetwork, x: &[f64]) -> Vec<bool> {
    let pre = net.pre_activations(x).unwrap();
    pre[..pre.len() - 1]
        .iter()
        .flatten()
        .map(|v| *v >= 0.0)
        .collect()
}

/// The unstable-neuron pattern of `x` in `bounds.unstable()` order.
pub fn unstable_pattern(net: &ReluNetwork, bounds: &PreActBounds, x: &[f64]) -> Vec<bool> {
    let pre = net.pre_activations(x).unwrap();
    bounds
        .unstable()
        .iter()
        .map(|id| pre[id.layer - 1][id.index] >= 0.0)
        .collect()
}

/// The split fixing every unstable neuron to its state at `x`.
pub fn split_of_point(net: &ReluNetwork, bounds: &PreActBounds, x: &[f64]) -> SplitSet {
    let pattern = unstable_pattern(net, bounds, x);
    SplitSet::from_pairs(
        bounds
            .unstable()
            .iter()
            .zip(pattern)
            .map(|(&id, on)| (id, if on { Phase::Active } else { Phase::Inactive })),
    )
    .unwrap()
}
