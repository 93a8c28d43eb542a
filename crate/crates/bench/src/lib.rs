//! Benchmark fixtures: calibrated random instances in canonical form.

use biccos_core::{
    canonicalize, compute_preact_bounds, gen_instances, GenConfig, InputSpec, PreActBounds,
    ReluNetwork,
};

pub struct Fixture {
    pub name: String,
    pub network: ReluNetwork,
    pub spec: InputSpec,
    pub bounds: PreActBounds,
    pub exact_min: f64,
}

/// `count` calibrated instances of `shape`, deterministic in `seed`.
pub fn fixtures(seed: u64, count: usize, shape: &[usize]) -> Vec<Fixture> {
    let config = GenConfig {
        seed,
        count,
        shape: shape.to_vec(),
        ..GenConfig::default()
    };
    gen_instances(&config)
        .expect("fixture generation")
        .into_iter()
        .map(|inst| {
            let network = canonicalize(&inst.network, &inst.property).expect("canonical fixture");
            let bounds = compute_preact_bounds(&network, &inst.input).expect("fixture bounds");
            Fixture {
                name: inst.name,
                network,
                spec: inst.input,
                bounds,
                exact_min: inst.exact_min.expect("calibrated"),
            }
        })
        .collect()
}

/// The fixture with the most unstable neurons.
pub fn widest(seed: u64, count: usize, shape: &[usize]) -> Fixture {
    fixtures(seed, count, shape)
        .into_iter()
        .max_by_key(|f| f.bounds.num_unstable())
        .expect("at least one fixture")
}
