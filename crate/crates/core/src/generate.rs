//! Seeded random networks and calibrated verification instances.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    canonicalize, save_spec, write_json, InputSpec, Layer, PropertySpec, ReluNetwork,
};
use crate::oracle::{exact_min, ENUMERATION_CAP};
use crate::propagation::compute_preact_bounds;

/// Weights uniform on `[-1, 1] / sqrt(fan_in)`, biases uniform on `[-0.2, 0.2]`.
pub fn random_network_with(rng: &mut impl Rng, shape: &[usize]) -> Result<ReluNetwork> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid shape {shape:?}")));
    }
    let layers = shape
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let weights = (0..fan_out)
                .map(|_| {
                    (0..fan_in)
                        .map(|_| rng.gen_range(-1.0..=1.0) * scale)
                        .collect()
                })
                .collect();
            let bias = (0..fan_out).map(|_| rng.gen_range(-0.2..=0.2)).collect();
            Layer::new(weights, bias)
        })
        .collect();
    ReluNetwork::new(layers)
}

pub fn random_network(seed: u64, shape: &[usize]) -> Result<ReluNetwork> {
    random_network_with(&mut ChaCha8Rng::seed_from_u64(seed), shape)
}

/// Uniform sample from the input ball.
pub fn sample_input(rng: &mut impl Rng, spec: &InputSpec) -> Vec<f64> {
    spec.x0
        .iter()
        .map(|c| {
            if spec.eps > 0.0 {
                rng.gen_range(c - spec.eps..=c + spec.eps)
            } else {
                *c
            }
        })
        .collect()
}

/// Random center in `[-1, 1]^d`.
pub fn random_center(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Expected verdict of a generated instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Unsat,
    Sat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub shape: Vec<usize>,
    /// Accepted fraction of unstable hidden neurons.
    pub unstable_fraction: (f64, f64),
    /// Hard cap on unstable neurons; must not exceed the enumeration cap when calibrating.
    pub max_unstable: usize,
    /// Set `c0` from the exact minimum so labels are known.
    pub calibrate: bool,
    /// Smallest distance of the calibrated minimum from zero.
    pub min_margin: f64,
    /// Largest calibrated margin; margins are log-uniform in between.
    pub max_margin: f64,
    /// Network draws per instance before giving up.
    pub attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            count: 10,
            shape: vec![2, 8, 8, 1],
            unstable_fraction: (0.3, 0.6),
            max_unstable: 12,
            calibrate: true,
            min_margin: 1e-3,
            max_margin: 0.05,
            attempts: 200,
        }
    }
}

/// A generated instance with the raw (uncanonicalized) network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    pub network: ReluNetwork,
    pub input: InputSpec,
    pub property: PropertySpec,
    pub num_unstable: usize,
    pub label: Option<Label>,
    /// Exact minimum of the canonical objective, when calibrated.
    pub exact_min: Option<f64>,
}

/// One manifest row as written next to the instance files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub network: PathBuf,
    pub spec: PathBuf,
    pub num_unstable: usize,
    pub label: Option<Label>,
    pub exact_min: Option<f64>,
}

fn property_row(rng: &mut impl Rng, outputs: usize) -> Vec<f64> {
    if outputs == 1 {
        return vec![1.0];
    }
    // Margin between a reference output and one other output.
    let i = rng.gen_range(0..outputs);
    let mut j = rng.gen_range(0..outputs - 1);
    if j >= i {
        j += 1;
    }
    let mut c = vec![0.0; outputs];
    c[i] = 1.0;
    c[j] = -1.0;
    c
}

/// Radius grid scanned when matching the unstable fraction.
fn eps_grid() -> impl Iterator<Item = f64> {
    (0..64).map(|k| 0.002 * (1000.0f64).powf(k as f64 / 63.0))
}

fn generate_one(config: &GenConfig, index: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let hidden: usize = config.shape[1..config.shape.len() - 1].iter().sum();
    let (lo, hi) = config.unstable_fraction;
    let wanted = |n: usize| {
        let f = n as f64 / hidden.max(1) as f64;
        n <= config.max_unstable && f >= lo && f <= hi
    };
    for _ in 0..config.attempts {
        let network = random_network_with(&mut rng, &config.shape)?;
        let x0 = random_center(&mut rng, network.input_dim());
        let c = property_row(&mut rng, network.output_dim());
        let base = PropertySpec { c, c0: 0.0 };
        let canonical = canonicalize(&network, &base)?;
        let mut eligible = Vec::new();
        for eps in eps_grid() {
            let input = InputSpec::new(x0.clone(), eps)?;
            let n = compute_preact_bounds(&canonical, &input)?.num_unstable();
            if wanted(n) {
                eligible.push((input, n));
            }
        }
        if eligible.is_empty() {
            continue;
        }
        let (input, num_unstable) = eligible.swap_remove(rng.gen_range(0..eligible.len()));
        let name = format!("inst_{index:04}");
        if !config.calibrate {
            return Ok(Instance {
                name,
                network,
                input,
                property: base,
                num_unstable,
                label: None,
                exact_min: None,
            });
        }
        let bounds = compute_preact_bounds(&canonical, &input)?;
        let m = exact_min(&canonical, &input, &bounds)?.value;
        let margin = (config.min_margin.ln()
            + rng.gen::<f64>() * (config.max_margin / config.min_margin).ln())
        .exp();
        let margin = margin.max(config.min_margin);
        let label = if index.is_multiple_of(2) {
            Label::Unsat
        } else {
            Label::Sat
        };
        let target = match label {
            Label::Unsat => margin,
            Label::Sat => -margin,
        };
        let property = PropertySpec {
            c: base.c,
            c0: target - m,
        };
        // Shifting the output bias moves the minimum by the same amount; recheck after rounding.
        let value = m + property.c0;
        if value.abs() < config.min_margin {
            continue;
        }
        return Ok(Instance {
            name,
            network,
            input,
            property,
            num_unstable,
            label: Some(label),
            exact_min: Some(value),
        });
    }
    Err(Error::Exhausted)
}

/// Deterministic instances for `config.seed`; each index draws from its own stream.
pub fn gen_instances(config: &GenConfig) -> Result<Vec<Instance>> {
    if config.shape.len() < 3 {
        return Err(Error::InvalidArgument(
            "shape needs at least one hidden layer".into(),
        ));
    }
    if !(config.min_margin > 0.0 && config.max_margin >= config.min_margin) {
        return Err(Error::InvalidArgument(
            "margins must satisfy 0 < min ≤ max".into(),
        ));
    }
    if config.calibrate && config.max_unstable > ENUMERATION_CAP {
        return Err(Error::TooManyUnstable {
            count: config.max_unstable,
            cap: ENUMERATION_CAP,
        });
    }
    (0..config.count)
        .into_par_iter()
        .map(|i| generate_one(config, i))
        .collect()
}

/// Writes `<name>.network.json` and `<name>.spec.json` per instance plus `manifest.json`.
pub fn write_instances(dir: &Path, instances: &[Instance]) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut manifest = Vec::with_capacity(instances.len());
    for inst in instances {
        let network = PathBuf::from(format!("{}.network.json", inst.name));
        let spec = PathBuf::from(format!("{}.spec.json", inst.name));
        inst.network.save(&dir.join(&network))?;
        save_spec(&dir.join(&spec), &inst.input, &inst.property)?;
        manifest.push(ManifestEntry {
            name: inst.name.clone(),
            network,
            spec,
            num_unstable: inst.num_unstable,
            label: inst.label,
            exact_min: inst.exact_min,
        });
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
