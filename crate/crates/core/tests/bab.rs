mod common;

use biccos_core::bab::{
    filter_domains, multi_tree_presolve, select_branching_neuron, split_domain, Domain,
    PresolveConfig,
};
use biccos_core::oracle::exact_min_where;
use biccos_core::{
    bab_verify, compute_preact_bounds, optimize_duals, BabConfig, CutMatrixView, InputSpec, Layer,
    Mode, NeuronId, OptimizerConfig, Phase, ReluNetwork, SplitSet, Status,
};
use common::{oracle_suite, random_split, seed7};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `relu(x) + shift` on `[−1, 1]`.
fn t1(shift: f64) -> (ReluNetwork, InputSpec) {
    let net = ReluNetwork::new(vec![
        Layer::new(vec![vec![1.0]], vec![0.0]),
        Layer::new(vec![vec![1.0]], vec![shift]),
    ])
    .unwrap();
    (net, InputSpec::new(vec![0.0], 1.0).unwrap())
}

#[test]
fn branching_examples() {
    let (net, spec) = t1(0.0);
    let b = compute_preact_bounds(&net, &spec).unwrap();
    let cuts = CutMatrixView::empty();
    let root = Domain::root(&b, &cuts);
    assert_eq!(
        select_branching_neuron(&net, &spec, &b, &root, &cuts).unwrap(),
        NeuronId::new(1, 0)
    );

    let fx = seed7();
    let root = Domain::root(&fx.bounds, &cuts);
    let first = select_branching_neuron(&fx.net, &fx.spec, &fx.bounds, &root, &cuts).unwrap();
    assert_eq!(
        select_branching_neuron(&fx.net, &fx.spec, &fx.bounds, &root, &cuts).unwrap(),
        first
    );

    let (last, rest) = fx.bounds.unstable().split_last().unwrap();
    let mut d = Domain::root(&fx.bounds, &cuts);
    d.split = SplitSet::from_pairs(rest.iter().map(|&id| (id, Phase::Active))).unwrap();
    assert_eq!(
        select_branching_neuron(&fx.net, &fx.spec, &fx.bounds, &d, &cuts).unwrap(),
        *last
    );
}

#[test]
fn t1_children_of_a_positive_objective_are_verified() {
    let (net, spec) = t1(0.1);
    let b = compute_preact_bounds(&net, &spec).unwrap();
    let cuts = CutMatrixView::empty();
    let (lo, hi) = split_domain(&b, &Domain::root(&b, &cuts), NeuronId::new(1, 0)).unwrap();
    assert_eq!(lo.split.phase(NeuronId::new(1, 0)), Some(Phase::Inactive));
    assert_eq!(hi.split.phase(NeuronId::new(1, 0)), Some(Phase::Active));
    // The active side needs its split multiplier near 1, beyond 20 steps at lr 0.02.
    let opt = OptimizerConfig::default().with_iterations(200);
    let mut children = Vec::new();
    for mut d in [lo, hi] {
        let out = optimize_duals(&net, &spec, &b, &d.split, &cuts, &d.duals, &opt).unwrap();
        d.lower_bound = out.bound;
        children.push(d);
    }
    let (verified, unknown) = filter_domains(children);
    assert_eq!((verified.len(), unknown.len()), (2, 0));
}

#[test]
fn children_cover_the_parent_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cuts = CutMatrixView::empty();
    for case in oracle_suite().iter().take(30) {
        let spec = &case.inst.input;
        let b = compute_preact_bounds(&case.net, spec).unwrap();
        let mut parent = Domain::root(&b, &cuts);
        parent.split = random_split(&mut rng, &b, 0.3);
        let Some(&neuron) = b.unstable().iter().find(|id| !parent.split.contains(**id)) else {
            continue;
        };
        let (lo, hi) = split_domain(&b, &parent, neuron).unwrap();
        let region_min = |split: &SplitSet| {
            let idx: Vec<(usize, bool)> = split
                .iter()
                .map(|(id, p)| (b.unstable_index(id).unwrap(), p == Phase::Active))
                .collect();
            exact_min_where(&case.net, spec, &b, |pat| {
                idx.iter().all(|&(k, on)| pat[k] == on)
            })
            .unwrap()
            .map_or(f64::INFINITY, |m| m.value)
        };
        let whole = region_min(&parent.split);
        let parts = region_min(&lo.split).min(region_min(&hi.split));
        assert_eq!(whole.to_bits(), parts.to_bits(), "{}", case.inst.name);
    }
}

#[test]
fn presolve_of_a_root_verified_instance_is_empty() {
    let (net, spec) = t1(0.1);
    let config = BabConfig::default().with_mode(Mode::BiccosMts);
    let (frontier, pool) = multi_tree_presolve(&net, &spec, &config).unwrap();
    assert!(frontier.is_empty());
    assert!(pool.len() <= 2);
}

#[test]
fn presolve_defaults() {
    let p = PresolveConfig::default();
    assert_eq!((p.iterations, p.pick, p.generated), (5, 50, 400));
    assert_eq!(p.split_width(), 3);
}

#[test]
fn presolve_frontier_holds_open_domains() {
    let config = BabConfig {
        mode: Mode::BiccosMts,
        ..BabConfig::default()
    };
    let mut checked = 0;
    for case in oracle_suite()
        .iter()
        .filter(|c| c.inst.exact_min.unwrap() >= 0.0)
        .take(20)
    {
        let spec = &case.inst.input;
        match multi_tree_presolve(&case.net, spec, &config) {
            Ok((frontier, _)) => {
                let b = compute_preact_bounds(&case.net, spec).unwrap();
                for d in &frontier {
                    assert!(d.lower_bound < 0.0);
                    d.split.validate(&b).unwrap();
                }
                checked += 1;
            }
            Err(e) => panic!("{}: {e}", case.inst.name),
        }
    }
    assert!(checked > 0);
}

/// Each logged domain's parent bound is the bound logged for the domain it
/// was split from, so influence scores are replayable from the log.
#[test]
fn influence_scores_replay_from_the_domain_log() {
    let config = BabConfig {
        record_domains: true,
        ..BabConfig::default()
    };
    let mut replayed = 0;
    for case in oracle_suite().iter().take(40) {
        let (_, stats) = bab_verify(&case.net, &case.inst.input, &config).unwrap();
        for entry in &stats.domain_log {
            let Some(neuron) = entry.neuron else { continue };
            let parent_split: Vec<_> = entry
                .split
                .iter()
                .copied()
                .filter(|(id, _)| *id != neuron)
                .collect();
            let parent = stats
                .domain_log
                .iter()
                .find(|p| p.split == parent_split && p.tree_id == entry.tree_id)
                .expect("parent logged");
            assert_eq!(parent.bound.to_bits(), entry.parent_bound.to_bits());
            replayed += 1;
        }
    }
    assert!(replayed > 100, "{replayed}");
}

#[test]
fn t1_verdicts() {
    let (net, spec) = t1(0.1);
    let (v, stats) = bab_verify(&net, &spec, &BabConfig::default()).unwrap();
    assert_eq!(v.status, Status::Unsat);
    assert!(stats.domains_visited <= 3);

    let (net, spec) = t1(-0.5);
    let (v, _) = bab_verify(&net, &spec, &BabConfig::default()).unwrap();
    assert_eq!(v.status, Status::Falsified);
    let x = v.witness.unwrap();
    assert!(spec.contains(&x, 0.0));
    assert!(biccos_core::evaluate(&net, &x).unwrap() < 0.0);
}

#[test]
fn forced_timeout_is_unknown_with_a_valid_bound() {
    let case = oracle_suite()
        .iter()
        .filter(|c| c.inst.exact_min.unwrap() > 0.0)
        .max_by_key(|c| c.inst.num_unstable)
        .unwrap();
    let config = BabConfig {
        timeout: std::time::Duration::ZERO,
        ..BabConfig::default()
    };
    let (v, stats) = bab_verify(&case.net, &case.inst.input, &config).unwrap();
    if v.status == Status::Unknown {
        assert!(stats.timed_out);
        assert!(v.bound <= case.inst.exact_min.unwrap() + 1e-9);
    } else {
        assert_eq!(v.status, Status::Unsat, "verified at the root");
    }
}
