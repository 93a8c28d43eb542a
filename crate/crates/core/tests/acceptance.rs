//! End-to-end acceptance checks, one line per criterion.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use biccos_core::cuts::{
    dominates, strengthen, validate_cut, CutPool, InfluenceRecord, StrengthenConfig,
};
use biccos_core::oracle::{check_split_equivalence, lp_relaxation_bound};
use biccos_core::propagation::{optimize_duals, CutMatrixView, DualState, OptimizerConfig};
use biccos_core::{
    bab_verify, compute_preact_bounds, gcp_lower_bound, infer_cut, BabConfig, InputSpec, Label,
    Layer, Mode, NeuronId, Phase, Provenance, ReluNetwork, SplitSet, Status,
};
use common::{beta_crown_bound, hard_candidates, oracle_suite, random_split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [Mode; 3] = [Mode::Plain, Mode::BiccosBase, Mode::BiccosMts];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(mode: Mode) -> BabConfig {
    BabConfig {
        timeout: Duration::from_secs(120),
        ..BabConfig::default().with_mode(mode)
    }
}

/// Every reported bound compared against the exact minimum.
#[derive(Default)]
struct SoundnessLog {
    runs: usize,
    violations: Vec<String>,
}

impl SoundnessLog {
    fn check(&mut self, name: &str, mode: Mode, bound: f64, exact: f64) {
        self.runs += 1;
        if bound > exact + 1e-6 {
            self.violations
                .push(format!("{name}/{}: {bound} > {exact}", mode.name()));
        }
    }
}

fn criterion_1(log: &mut SoundnessLog) -> Outcome {
    let start = Instant::now();
    let suite = oracle_suite();
    let mut agree = 0;
    let mut total = 0;
    let mut mismatches = Vec::new();
    for case in suite {
        let exact = case.inst.exact_min.unwrap();
        assert!(case.inst.num_unstable <= 12 && exact.abs() >= 1e-3);
        for mode in MODES {
            let (v, _) = bab_verify(&case.net, &case.inst.input, &config(mode)).unwrap();
            log.check(&case.inst.name, mode, v.bound, exact);
            let expected = match case.inst.label.unwrap() {
                Label::Unsat => Status::Unsat,
                Label::Sat => Status::Falsified,
            };
            total += 1;
            let witness_ok = v.witness.as_ref().is_none_or(|w| {
                case.inst.input.contains(w, 0.0)
                    && biccos_core::evaluate(&case.net, w).unwrap() < 0.0
            });
            if v.status == expected && witness_ok {
                agree += 1;
            } else {
                mismatches.push(format!(
                    "{}/{}:{:?}:{}:{}",
                    case.inst.name,
                    mode.name(),
                    v.status,
                    v.bound,
                    exact
                ));
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        agree == total && suite.len() == 200 && elapsed < 600.0,
        format!(
            "{agree}/{total} runs over {} instances agree with exact minimization in {elapsed:.1}s {mismatches:?}",
            suite.len()
        ),
    )
}

/// Best bound over five optimizer runs: the default start and four random ones.
fn optimized_bound(
    rng: &mut impl Rng,
    case: &common::Case,
    bounds: &biccos_core::PreActBounds,
    split: &SplitSet,
    view: &CutMatrixView,
) -> f64 {
    let opt = OptimizerConfig {
        iterations: 2000,
        lr_decay: 0.998,
        ..OptimizerConfig::default()
    };
    let mut best = f64::NEG_INFINITY;
    for restart in 0..5 {
        let init = if restart == 0 {
            DualState::initial(bounds, view)
        } else {
            let mut d = DualState::zeros(bounds, view);
            d.alpha
                .iter_mut()
                .for_each(|a| *a = rng.gen_range(0.0..=1.0));
            d.split_duals
                .iter_mut()
                .for_each(|m| *m = rng.gen_range(0.0..1.0));
            d.beta.iter_mut().for_each(|b| *b = rng.gen_range(0.0..1.0));
            d
        };
        let res = optimize_duals(
            &case.net,
            &case.inst.input,
            bounds,
            split,
            view,
            &init,
            &opt,
        )
        .unwrap();
        best = best.max(res.bound);
    }
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut gap_plain, mut gap_cuts): (f64, f64) = (0.0, 0.0);
    let mut excess = f64::NEG_INFINITY;
    let mut over = 0;
    let mut checked = 0;
    for case in oracle_suite() {
        if checked == 50 {
            break;
        }
        let (net, spec) = (&case.net, &case.inst.input);
        let bounds = compute_preact_bounds(net, spec).unwrap();
        if bounds.num_unstable() < 2 {
            continue;
        }
        // A feasible domain with a non-empty pool of inferred cuts.
        let drawn = (0..20).find_map(|_| {
            let split = random_split(&mut rng, &bounds, 0.2);
            let mut pool = CutPool::new(16);
            for _ in 0..2 {
                if let Ok(cut) = infer_cut(&random_split(&mut rng, &bounds, 0.3), 0) {
                    pool.insert(cut);
                }
            }
            let view = pool.view(&bounds).unwrap();
            let lp_cuts = lp_relaxation_bound(net, spec, &bounds, &split, &view).unwrap();
            (!pool.is_empty() && lp_cuts.is_finite()).then_some((split, view, lp_cuts))
        });
        let Some((split, view, lp_cuts)) = drawn else {
            continue;
        };
        let empty = CutMatrixView::empty();
        let lp_plain = lp_relaxation_bound(net, spec, &bounds, &split, &empty).unwrap();
        let g_plain = optimized_bound(&mut rng, case, &bounds, &split, &empty);
        let g_cuts = optimized_bound(&mut rng, case, &bounds, &split, &view);
        gap_plain = gap_plain.max(lp_plain - g_plain);
        gap_cuts = gap_cuts.max(lp_cuts - g_cuts);
        if lp_cuts - g_cuts > 1e-3 {
            over += 1;
        }
        excess = excess.max(g_plain - lp_plain).max(g_cuts - lp_cuts);
        checked += 1;
    }
    outcome(
        checked == 50 && gap_cuts <= 1e-3 && gap_plain <= 1e-3 && excess <= 1e-7,
        format!(
            "{checked} split domains with inferred cuts: largest gap to the LP optimum {gap_cuts:.2e} \
             ({over} above 1e-3); same domains without cuts {gap_plain:.2e}; largest excess {excess:.2e}"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for case in oracle_suite().iter().cycle() {
        if n == 100 {
            break;
        }
        let (net, spec) = (&case.net, &case.inst.input);
        let bounds = compute_preact_bounds(net, spec).unwrap();
        let split = random_split(&mut rng, &bounds, 0.4);
        let empty = CutMatrixView::empty();
        let mut duals = DualState::zeros(&bounds, &empty);
        duals
            .alpha
            .iter_mut()
            .for_each(|a| *a = rng.gen_range(0.0..=1.0));
        duals
            .split_duals
            .iter_mut()
            .for_each(|m| *m = rng.gen_range(0.0..2.0));
        let ours = gcp_lower_bound(net, spec, &bounds, &split, &empty, &duals).unwrap();
        let reference = beta_crown_bound(
            net,
            spec,
            &bounds,
            &split,
            |id| duals.alpha[bounds.unstable_index(id).unwrap()],
            |id| duals.split_dual(&bounds, id),
        );
        worst = worst.max((ours - reference).abs());
        n += 1;
    }
    outcome(
        worst <= 1e-9,
        format!("{n} triples, largest deviation {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut unsat_domains = 0;
    let mut cuts = 0;
    let mut invalid = Vec::new();
    let mut pairs = 0;
    let mut pair_failures = 0;
    for case in oracle_suite().iter().chain(hard_candidates()) {
        if unsat_domains >= 300 {
            break;
        }
        let (net, spec) = (&case.net, &case.inst.input);
        let cfg = BabConfig {
            record_cuts: true,
            ..config(Mode::BiccosBase)
        };
        let (_, stats) = bab_verify(net, spec, &cfg).unwrap();
        unsat_domains += stats.batches.iter().map(|b| b.verified).sum::<usize>();
        let bounds = compute_preact_bounds(net, spec).unwrap();
        let pool = stats.final_pool.as_ref().unwrap();
        for cut in stats.emitted_cuts.iter().map(|e| &e.cut).chain(pool.cuts()) {
            cuts += 1;
            if !validate_cut(net, spec, &bounds, cut).unwrap() {
                invalid.push(format!("{}: {cut}", case.inst.name));
            }
        }
        for e in &stats.emitted_cuts {
            let Some(parent) = &e.parent else { continue };
            let support: BTreeSet<NeuronId> = parent
                .support()
                .into_iter()
                .chain(e.cut.support())
                .collect();
            if support.len() > 10 {
                continue;
            }
            pairs += 1;
            let ids: Vec<NeuronId> = support.into_iter().collect();
            let implied = (0..1u32 << ids.len()).all(|bits| {
                let z = |id: NeuronId| {
                    let k = ids.iter().position(|&x| x == id).unwrap();
                    f64::from((bits >> k) & 1)
                };
                !e.cut.satisfied_by(z) || parent.satisfied_by(z)
            });
            if !(dominates(&e.cut, parent) && implied) {
                pair_failures += 1;
            }
        }
    }
    outcome(
        unsat_domains >= 300 && invalid.is_empty() && pair_failures == 0 && pairs > 0,
        format!(
            "{cuts} cuts from {unsat_domains} verified domains, {} invalid; {pairs} strengthened pairs, {pair_failures} dominance failures",
            invalid.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = 0;
    let mut n = 0;
    for case in oracle_suite() {
        if n == 50 {
            break;
        }
        let bounds = compute_preact_bounds(&case.net, &case.inst.input).unwrap();
        let unstable = bounds.unstable_neurons();
        if unstable.is_empty() {
            continue;
        }
        let id = unstable[rng.gen_range(0..unstable.len())];
        n += 1;
        if check_split_equivalence(&case.net, &case.inst.input, &bounds, id).unwrap() {
            ok += 1;
        }
    }
    outcome(
        ok == 50 && n == 50,
        format!("{ok}/{n} (instance, neuron) pairs equivalent within 1e-7"),
    )
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn criterion_7(log: &mut SoundnessLog) -> Outcome {
    let mut plain = Vec::new();
    let mut base = Vec::new();
    let mut rich = 0;
    for case in hard_candidates() {
        let exact = case.inst.exact_min.unwrap();
        let (vp, sp) = bab_verify(&case.net, &case.inst.input, &config(Mode::Plain)).unwrap();
        log.check(&case.inst.name, Mode::Plain, vp.bound, exact);
        if sp.domains_visited <= 100 {
            continue;
        }
        let (vb, sb) = bab_verify(&case.net, &case.inst.input, &config(Mode::BiccosBase)).unwrap();
        log.check(&case.inst.name, Mode::BiccosBase, vb.bound, exact);
        plain.push(sp.domains_visited);
        base.push(sb.domains_visited);
        if sb.cuts_generated >= 10 {
            rich += 1;
        }
    }
    let hard = plain.len();
    let (mp, mb) = (median(plain), median(base));
    outcome(
        hard > 0 && mb <= mp && 2 * rich >= hard,
        format!("{hard} hard instances, median domains plain {mp} vs biccos-base {mb}, {rich} with at least 10 cuts"),
    )
}

/// Output `m − k·relu(x1 + a) + Σ s_i·relu(w_i x_{i+1} + b_i)` over `[−1, 1]^d`:
/// fixing the first neuron inactive alone proves the property.
fn literal_family(rng: &mut impl Rng, extra: usize) -> (ReluNetwork, InputSpec) {
    let d = extra + 1;
    let mut w1 = vec![vec![0.0; d]; d];
    let mut b1 = vec![0.0; d];
    w1[0][0] = 1.0;
    b1[0] = rng.gen_range(-0.3..0.3);
    let mut out = vec![-rng.gen_range(1.0..2.0)];
    for i in 1..d {
        w1[i][i] = rng.gen_range(0.5..1.0);
        b1[i] = rng.gen_range(-0.3..0.3);
        let mag = rng.gen_range(0.005..0.02);
        out.push(if rng.gen_bool(0.5) { mag } else { -mag });
    }
    let m = rng.gen_range(0.1..0.3);
    let net = ReluNetwork::new(vec![Layer::new(w1, b1), Layer::new(vec![out], vec![m])]).unwrap();
    (net, InputSpec::new(vec![0.0; d], 1.0).unwrap())
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let opt = OptimizerConfig::default();
    let mut success = 0;
    let total = 100;
    for _ in 0..total {
        let extra = rng.gen_range(2..=4);
        let (net, spec) = literal_family(&mut rng, extra);
        let bounds = compute_preact_bounds(&net, &spec).unwrap();
        assert_eq!(bounds.num_unstable(), extra + 1);
        let empty = CutMatrixView::empty();
        // Path: the two irrelevant neurons first, then the deciding one.
        let mut path: Vec<(NeuronId, Phase)> = (1..=extra)
            .map(|i| {
                (
                    NeuronId::new(1, i),
                    if rng.gen_bool(0.5) {
                        Phase::Active
                    } else {
                        Phase::Inactive
                    },
                )
            })
            .collect();
        path.push((NeuronId::new(1, 0), Phase::Inactive));
        let mut split = SplitSet::new();
        let mut duals = DualState::initial(&bounds, &empty);
        let mut bound = optimize_duals(&net, &spec, &bounds, &split, &empty, &duals, &opt)
            .unwrap()
            .bound;
        let mut history = Vec::new();
        for &(id, phase) in &path {
            split.insert(id, phase).unwrap();
            let res = optimize_duals(&net, &spec, &bounds, &split, &empty, &duals, &opt).unwrap();
            history.push(InfluenceRecord {
                neuron: id,
                parent_bound: bound,
                child_bound: res.bound,
            });
            bound = res.bound;
            duals = res.duals;
        }
        assert!(bound >= 0.0, "the deciding split must verify the domain");
        let mut pool = CutPool::new(100);
        let out = strengthen(
            &net,
            &spec,
            &bounds,
            &split,
            &duals,
            &history,
            &mut pool,
            &StrengthenConfig::default(),
            0,
        )
        .unwrap();
        if out
            .emitted
            .iter()
            .any(|e| e.cut.provenance == Provenance::Strengthened && e.cut.len() < split.len())
        {
            success += 1;
        }
    }
    outcome(
        success * 10 >= total * 9,
        format!(
            "{success}/{total} constructed instances yield a strictly smaller strengthened cut"
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut mismatches = Vec::new();
    let mut runs = 0;
    let cases: Vec<_> = oracle_suite()
        .iter()
        .step_by(20)
        .chain(hard_candidates().iter().step_by(12))
        .collect();
    for case in &cases {
        for mode in MODES {
            let mut reference = None;
            for workers in [1, 4, 1, 4] {
                let cfg = BabConfig {
                    workers,
                    ..config(mode)
                };
                let (v, s) = bab_verify(&case.net, &case.inst.input, &cfg).unwrap();
                runs += 1;
                let key = (
                    v.status,
                    v.bound.to_bits(),
                    v.witness
                        .map(|w| w.iter().map(|x| x.to_bits()).collect::<Vec<_>>()),
                    s.domains_visited,
                    s.cuts_generated,
                    s.final_pool.unwrap().dump(),
                );
                match &reference {
                    None => reference = Some(key),
                    Some(r) if *r != key => {
                        mismatches.push(format!("{}/{}/{workers}", case.inst.name, mode.name()))
                    }
                    Some(_) => {}
                }
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{runs} runs over {} instances, worker counts 1 and 4, {} mismatches {mismatches:?}",
            cases.len(),
            mismatches.len()
        ),
    )
}

fn main() {
    let mut log = SoundnessLog::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "oracle equivalence", criterion_1(&mut log)));
    results.push((7, "ablation trend", criterion_7(&mut log)));
    results.push((
        2,
        "soundness sweep",
        outcome(
            log.violations.is_empty() && log.runs > 0,
            format!(
                "{} bounds checked, {} violations {:?}",
                log.runs,
                log.violations.len(),
                log.violations
            ),
        ),
    ));
    results.push((3, "dual bound reaches the LP relaxation", criterion_3()));
    results.push((
        4,
        "reduction to split-constrained propagation",
        criterion_4(),
    ));
    results.push((5, "cut validity and dominance", criterion_5()));
    results.push((6, "split and bound-override equivalence", criterion_6()));
    results.push((8, "strengthening efficacy", criterion_8()));
    results.push((9, "determinism", criterion_9()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {tag}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
