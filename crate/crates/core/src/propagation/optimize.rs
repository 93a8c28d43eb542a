use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{InputSpec, ReluNetwork};
use crate::propagation::{CutMatrixView, DualState, PreActBounds, Propagator, SplitSet};

/// Adam ascent settings for the dual multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub lr_alpha: f64,
    /// Shared by β, μ and τ.
    pub lr_beta: f64,
    /// Multiplicative learning-rate decay per iteration.
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 20,
            lr_alpha: 0.1,
            lr_beta: 0.02,
            lr_decay: 0.98,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    /// Duals attaining `bound`.
    pub duals: DualState,
    /// Best bound seen, including the initial point.
    pub bound: f64,
    /// Running maximum after each evaluation; `history[0]` is the initial bound.
    pub history: Vec<f64>,
    /// Gradient components that were non-finite and zeroed.
    pub nonfinite: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, t: i32, cfg: &OptimizerConfig) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for k in 0..x.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            x[k] += lr * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

fn sanitize(g: &mut [f64]) -> usize {
    let mut count = 0;
    for v in g.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
            count += 1;
        }
    }
    count
}

/// Projected Adam ascent on a compiled problem.
pub fn optimize_with(
    prop: &Propagator<'_>,
    init: &DualState,
    config: &OptimizerConfig,
) -> OptimizeOutcome {
    let mut x = init.clone();
    x.project();
    let mut best = prop.eval(&x);
    let mut best_duals = x.clone();
    let mut history = Vec::with_capacity(config.iterations + 1);
    history.push(best);
    let mut nonfinite = 0;
    let mut adam_alpha = Adam::new(x.alpha.len());
    let mut adam_split = Adam::new(x.split_duals.len());
    let mut adam_beta = Adam::new(x.beta.len());
    let mut lr_a = config.lr_alpha;
    let mut lr_b = config.lr_beta;

    for it in 0..config.iterations {
        let (_, mut grad) = prop.eval_with_grad(&x);
        nonfinite +=
            sanitize(&mut grad.alpha) + sanitize(&mut grad.split_duals) + sanitize(&mut grad.beta);
        let t = it as i32 + 1;
        adam_alpha.step(&mut x.alpha, &grad.alpha, lr_a, t, config);
        adam_split.step(&mut x.split_duals, &grad.split_duals, lr_b, t, config);
        adam_beta.step(&mut x.beta, &grad.beta, lr_b, t, config);
        x.project();
        lr_a *= config.lr_decay;
        lr_b *= config.lr_decay;
        let g = prop.eval(&x);
        if g > best {
            best = g;
            best_duals = x.clone();
        }
        history.push(best);
    }

    OptimizeOutcome {
        duals: best_duals,
        bound: best,
        history,
        nonfinite,
    }
}

/// Optimizes the multipliers of one bounding problem, starting from `init`
/// re-keyed onto `cuts`.
pub fn optimize_duals(
    network: &ReluNetwork,
    spec: &InputSpec,
    bounds: &PreActBounds,
    split: &SplitSet,
    cuts: &CutMatrixView,
    init: &DualState,
    config: &OptimizerConfig,
) -> Result<OptimizeOutcome> {
    let init = init.aligned(cuts);
    init.validate(bounds, cuts)?;
    let prop = Propagator::new(network, spec, bounds, split, cuts, &[1.0])?;
    Ok(optimize_with(&prop, &init, config))
}
