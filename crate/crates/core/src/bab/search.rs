use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bab::domain::{branching_scores, Domain, DomainQueue, QueueOrder};
use crate::cuts::{
    infer_cut, merge_cuts, strengthen, CutPool, EmittedCut, InfluenceRecord, StrengthenConfig,
    DEFAULT_POOL_CAP,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, InputSpec, NeuronId, ReluNetwork};
use crate::oracle::region_min;
use crate::propagation::{
    compute_preact_bounds, optimize_with, CutMatrixView, OptimizerConfig, Phase, PreActBounds,
    Propagator,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Branch-and-bound without cuts.
    Plain,
    /// Inferred and strengthened cuts.
    BiccosBase,
    /// Cuts plus the multi-tree presolve.
    BiccosMts,
    /// `BiccosMts` above the unstable-count threshold, `BiccosBase` otherwise.
    Auto,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::BiccosBase => "biccos-base",
            Mode::BiccosMts => "biccos-mts",
            Mode::Auto => "auto",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresolveConfig {
    pub iterations: usize,
    /// Domains expanded per iteration.
    pub pick: usize,
    /// Children generated per iteration; each pick is split `log2(generated / pick)` ways.
    pub generated: usize,
    pub trees: usize,
}

impl Default for PresolveConfig {
    fn default() -> Self {
        PresolveConfig {
            iterations: 5,
            pick: 50,
            generated: 400,
            trees: 4,
        }
    }
}

impl PresolveConfig {
    /// Neurons split at once per picked domain.
    pub fn split_width(&self) -> usize {
        let ratio = self.generated as f64 / self.pick.max(1) as f64;
        (ratio.log2().floor() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BabConfig {
    pub mode: Mode,
    pub timeout: Duration,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub strengthen: StrengthenConfig,
    /// Strengthening runs only during this many initial iterations.
    pub strengthen_iterations: usize,
    pub presolve: PresolveConfig,
    pub pool_cap: usize,
    /// `Auto` uses the presolve above this many unstable neurons.
    pub auto_threshold: usize,
    /// Open-domain limit; exceeding it ends the search as unknown.
    pub max_domains: usize,
    /// Bounding threads; 0 uses the global pool.
    pub workers: usize,
    pub order: QueueOrder,
    /// Keep a log of every bounded domain.
    pub record_domains: bool,
    /// Keep every emitted cut with its parent.
    pub record_cuts: bool,
}

impl Default for BabConfig {
    fn default() -> Self {
        BabConfig {
            mode: Mode::BiccosBase,
            timeout: Duration::from_secs(200),
            batch_size: 64,
            optimizer: OptimizerConfig::default(),
            strengthen: StrengthenConfig::default(),
            strengthen_iterations: 40,
            presolve: PresolveConfig::default(),
            pool_cap: DEFAULT_POOL_CAP,
            auto_threshold: 64,
            max_domains: 1_000_000,
            workers: 0,
            order: QueueOrder::Bfs,
            record_domains: false,
            record_cuts: false,
        }
    }
}

impl BabConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.strengthen.drop_percentage) {
            return Err(Error::InvalidArgument(format!(
                "drop percentage {} outside [0, 1)",
                self.strengthen.drop_percentage
            )));
        }
        if self.presolve.pick == 0 || self.presolve.trees == 0 {
            return Err(Error::InvalidArgument(
                "presolve pick and tree count must be positive".into(),
            ));
        }
        if self.pool_cap == 0 {
            return Err(Error::InvalidArgument("pool cap must be positive".into()));
        }
        let opt = &self.optimizer;
        if !(opt.lr_alpha >= 0.0 && opt.lr_beta >= 0.0 && opt.lr_decay > 0.0 && opt.lr_decay <= 1.0)
        {
            return Err(Error::InvalidArgument(
                "learning rates must be non-negative and decay in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Unsat,
    Unknown,
    Falsified,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Unsat => "unsat",
            Status::Unknown => "unknown",
            Status::Falsified => "falsified",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub status: Status,
    /// A lower bound on the objective over the input region.
    pub bound: f64,
    /// An input in the region with a negative objective (falsified only).
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLog {
    pub iteration: usize,
    pub phase: String,
    pub bounded: usize,
    pub verified: usize,
    pub open: usize,
    pub pool_size: usize,
    pub global_bound: f64,
    pub elapsed_s: f64,
}

/// One bounded domain, for replaying influence scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainLog {
    pub split: Vec<(NeuronId, Phase)>,
    /// Neuron whose split created the domain (single splits only).
    pub neuron: Option<NeuronId>,
    pub parent_bound: f64,
    pub bound: f64,
    pub tree_id: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub mode: Option<Mode>,
    pub num_unstable: usize,
    pub domains_visited: usize,
    pub cuts_generated: usize,
    pub strengthen_attempts: usize,
    pub strengthen_successes: usize,
    pub iterations: usize,
    pub leaves_solved: usize,
    pub unresolved_leaves: usize,
    pub nonfinite_gradients: usize,
    pub missing_history: usize,
    pub final_pool_size: usize,
    pub memory_cap_hit: bool,
    pub timed_out: bool,
    pub presolve_tree: Option<usize>,
    pub wall_time: f64,
    pub final_status: Option<Status>,
    pub batches: Vec<BatchLog>,
    #[serde(skip)]
    pub domain_log: Vec<DomainLog>,
    #[serde(skip)]
    pub emitted_cuts: Vec<EmittedCut>,
    #[serde(skip)]
    pub final_pool: Option<CutPool>,
}

/// Outcome of bounding one child.
struct Bounded {
    domain: Domain,
    /// Input point suggested by the bound.
    point: Vec<f64>,
    /// Region minimum of a fully split domain (`None` when empty).
    leaf: Option<Option<(f64, Vec<f64>)>>,
    nonfinite: usize,
}

/// What the processing of a batch decided.
pub(crate) enum BatchEvent {
    Continue,
    Falsified(Vec<f64>),
    Verified,
}

pub(crate) struct Search<'a> {
    pub network: &'a ReluNetwork,
    pub spec: &'a InputSpec,
    pub bounds: PreActBounds,
    pub config: &'a BabConfig,
    pub pool: CutPool,
    pub stats: SearchStats,
    pub use_cuts: bool,
    pub iteration: usize,
    start: Instant,
    threads: Option<rayon::ThreadPool>,
}

impl<'a> Search<'a> {
    pub fn new(
        network: &'a ReluNetwork,
        spec: &'a InputSpec,
        config: &'a BabConfig,
    ) -> Result<Self> {
        let start = Instant::now();
        let bounds = compute_preact_bounds(network, spec)?;
        let mode = resolve_mode(config, bounds.num_unstable());
        let threads = if config.workers > 0 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.workers)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Search {
            network,
            spec,
            stats: SearchStats {
                mode: Some(mode),
                num_unstable: bounds.num_unstable(),
                ..SearchStats::default()
            },
            bounds,
            config,
            pool: CutPool::new(config.pool_cap),
            use_cuts: mode != Mode::Plain,
            iteration: 0,
            start,
            threads,
        })
    }

    pub fn timed_out(&self) -> bool {
        self.start.elapsed() >= self.config.timeout
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn view(&self) -> Result<CutMatrixView> {
        if self.use_cuts {
            self.pool.view(&self.bounds)
        } else {
            Ok(CutMatrixView::empty())
        }
    }

    fn bound_one(&self, mut domain: Domain, view: &CutMatrixView) -> Result<Bounded> {
        if domain.is_fully_split(&self.bounds) {
            let leaf = region_min(self.network, self.spec, &self.bounds, &domain.split)?;
            domain.lower_bound = leaf.as_ref().map_or(f64::INFINITY, |(v, _)| *v);
            domain.used_cuts = false;
            return Ok(Bounded {
                domain,
                point: Vec::new(),
                leaf: Some(leaf),
                nonfinite: 0,
            });
        }
        let prop = Propagator::new(
            self.network,
            self.spec,
            &self.bounds,
            &domain.split,
            view,
            &[1.0],
        )?;
        let init = domain.duals.aligned(view);
        let res = optimize_with(&prop, &init, &self.config.optimizer);
        let ev = prop.eval_with_trace(&res.duals);
        domain.ranking = branching_scores(&self.bounds, &domain.split, &ev)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        domain.lower_bound = res.bound;
        domain.duals = res.duals;
        domain.used_cuts = !view.is_empty();
        Ok(Bounded {
            domain,
            point: ev.input_point,
            leaf: None,
            nonfinite: res.nonfinite,
        })
    }

    /// Bounds every domain against one pool snapshot; output order matches input order.
    fn bound_all(&self, domains: Vec<Domain>) -> Result<Vec<Bounded>> {
        let view = self.view()?;
        let run = || -> Result<Vec<Bounded>> {
            domains
                .into_par_iter()
                .map(|d| self.bound_one(d, &view))
                .collect()
        };
        match &self.threads {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }

    /// Bounds `domains` and routes each result: verified domains become cuts,
    /// open domains go to `open`. Returns `closed_min` of the verified ones.
    pub fn process(
        &mut self,
        domains: Vec<Domain>,
        open: &mut Vec<Domain>,
        closed_min: &mut f64,
    ) -> Result<BatchEvent> {
        let results = self.bound_all(domains)?;
        let strengthen_now = self.use_cuts && self.iteration < self.config.strengthen_iterations;
        // The rest of the batch is still routed after a witness so the reported bound stays valid.
        let mut witness = None;
        for b in results {
            let mut d = b.domain;
            self.stats.domains_visited += 1;
            self.stats.nonfinite_gradients += b.nonfinite;
            let pending = d.pending.take();
            if let Some((neuron, parent_bound)) = pending {
                d.history.push(InfluenceRecord {
                    neuron,
                    parent_bound,
                    child_bound: d.lower_bound,
                });
            }
            if self.config.record_domains {
                self.stats.domain_log.push(DomainLog {
                    split: d.split.iter().collect(),
                    neuron: pending.map(|p| p.0),
                    parent_bound: pending.map_or(f64::NAN, |p| p.1),
                    bound: d.lower_bound,
                    tree_id: d.tree_id,
                });
            }
            if d.used_cuts {
                self.pool.record_activity(&d.duals);
            }
            if witness.is_none() && !b.point.is_empty() {
                let p = self.spec.project(&b.point);
                if evaluate(self.network, &p)? < 0.0 {
                    witness = Some(p);
                }
            }
            if let Some(leaf) = b.leaf {
                self.stats.leaves_solved += 1;
                match leaf {
                    Some((v, x)) if v < 0.0 => {
                        *closed_min = closed_min.min(v);
                        let x = self.spec.project(&x);
                        if evaluate(self.network, &x)? < 0.0 {
                            witness.get_or_insert(x);
                        } else {
                            self.stats.unresolved_leaves += 1;
                        }
                    }
                    leaf => {
                        *closed_min = closed_min.min(leaf.map_or(f64::INFINITY, |(v, _)| v));
                        if self.use_cuts && witness.is_none() {
                            self.add_cut_of(&d)?;
                        }
                    }
                }
                continue;
            }
            if d.lower_bound >= 0.0 {
                *closed_min = closed_min.min(d.contribution());
                if witness.is_some() {
                    continue;
                }
                if strengthen_now {
                    let out = strengthen(
                        self.network,
                        self.spec,
                        &self.bounds,
                        &d.split,
                        &d.duals,
                        &d.history,
                        &mut self.pool,
                        &self.config.strengthen,
                        self.iteration,
                    )?;
                    self.stats.strengthen_attempts += out.attempts;
                    self.stats.strengthen_successes += out.successes;
                    self.stats.missing_history += out.missing_history;
                    self.stats.cuts_generated += out.emitted.len() + out.merge.merges;
                    if self.config.record_cuts {
                        self.stats.emitted_cuts.extend(out.emitted);
                    }
                    if out.merge.contradiction {
                        return Ok(BatchEvent::Verified);
                    }
                } else if self.use_cuts {
                    self.add_cut_of(&d)?;
                }
            } else {
                open.push(d);
            }
        }
        if let Some(x) = witness {
            return Ok(BatchEvent::Falsified(x));
        }
        if self.use_cuts {
            let merge = merge_cuts(&mut self.pool, self.iteration);
            self.stats.cuts_generated += merge.merges;
            if merge.contradiction {
                return Ok(BatchEvent::Verified);
            }
        }
        Ok(BatchEvent::Continue)
    }

    fn add_cut_of(&mut self, d: &Domain) -> Result<()> {
        if d.split.is_empty() {
            return Ok(());
        }
        let cut = infer_cut(&d.split, self.iteration)?;
        if self.pool.insert(cut.clone()).is_some() {
            self.stats.cuts_generated += 1;
            if self.config.record_cuts {
                self.stats
                    .emitted_cuts
                    .push(EmittedCut { cut, parent: None });
            }
        }
        Ok(())
    }

    pub fn log_batch(
        &mut self,
        phase: &str,
        bounded: usize,
        verified: usize,
        open: usize,
        global_bound: f64,
    ) {
        let entry = BatchLog {
            iteration: self.iteration,
            phase: phase.to_string(),
            bounded,
            verified,
            open,
            pool_size: self.pool.len(),
            global_bound,
            elapsed_s: self.elapsed(),
        };
        self.stats.batches.push(entry);
    }
}

fn resolve_mode(config: &BabConfig, num_unstable: usize) -> Mode {
    match config.mode {
        Mode::Auto if num_unstable > config.auto_threshold => Mode::BiccosMts,
        Mode::Auto => Mode::BiccosBase,
        m => m,
    }
}

fn finish(
    search: Search<'_>,
    status: Status,
    bound: f64,
    witness: Option<Vec<f64>>,
) -> (VerdictReport, SearchStats) {
    let mut stats = search.stats;
    // A leaf whose region minimum is negative without a confirmed witness blocks a proof.
    let status = if status == Status::Unsat && stats.unresolved_leaves > 0 {
        Status::Unknown
    } else {
        status
    };
    stats.wall_time = search.start.elapsed().as_secs_f64();
    stats.final_status = Some(status);
    stats.final_pool_size = search.pool.len();
    stats.final_pool = Some(search.pool);
    (
        VerdictReport {
            status,
            bound,
            witness,
        },
        stats,
    )
}

/// Complete verification of `min f ≥ 0` over the input region of a canonical network.
pub fn bab_verify(
    network: &ReluNetwork,
    spec: &InputSpec,
    config: &BabConfig,
) -> Result<(VerdictReport, SearchStats)> {
    config.validate()?;
    if !network.is_canonical() {
        return Err(Error::InvalidArgument(
            "network must have a single output".into(),
        ));
    }
    let mut search = Search::new(network, spec, config)?;
    let mode = search.stats.mode.expect("mode resolved");

    // Root.
    let root = Domain::root(&search.bounds, &CutMatrixView::empty());
    let mut open = Vec::new();
    let mut closed_min = f64::INFINITY;
    if evaluate(network, &spec.x0)? < 0.0 {
        let x0 = spec.x0.clone();
        let root_bound = search
            .bound_all(vec![root])?
            .remove(0)
            .domain
            .contribution();
        search.stats.domains_visited += 1;
        return Ok(finish(search, Status::Falsified, root_bound, Some(x0)));
    }
    match search.process(vec![root], &mut open, &mut closed_min)? {
        BatchEvent::Falsified(x) => {
            let bound = global_bound(closed_min, open.iter(), std::iter::empty());
            let bound = bound.min(evaluate(network, &x)?);
            return Ok(finish(search, Status::Falsified, bound, Some(x)));
        }
        BatchEvent::Verified => {
            return Ok(finish(search, Status::Unsat, closed_min.min(0.0), None))
        }
        BatchEvent::Continue => {}
    }
    let root_bound = open.first().map_or(closed_min, |d| d.contribution());
    search.log_batch(
        "root",
        1,
        usize::from(open.is_empty()),
        open.len(),
        root_bound,
    );
    if open.is_empty() {
        return Ok(finish(search, Status::Unsat, closed_min, None));
    }

    let mut queue = DomainQueue::new(config.order);
    if mode == Mode::BiccosMts {
        let root = open.pop().expect("open root");
        match crate::bab::presolve::run(&mut search, root)? {
            crate::bab::presolve::PresolveResult::Verified { closed_min: c } => {
                return Ok(finish(search, Status::Unsat, c, None));
            }
            crate::bab::presolve::PresolveResult::Falsified { witness, bound } => {
                return Ok(finish(search, Status::Falsified, bound, Some(witness)));
            }
            crate::bab::presolve::PresolveResult::Frontier {
                domains,
                closed_min: c,
                tree,
            } => {
                search.stats.presolve_tree = Some(tree);
                closed_min = c;
                for d in domains {
                    queue.push(d);
                }
            }
            crate::bab::presolve::PresolveResult::TimedOut { bound } => {
                search.stats.timed_out = true;
                return Ok(finish(search, Status::Unknown, bound, None));
            }
        }
    } else {
        for d in open.drain(..) {
            queue.push(d);
        }
    }

    while !queue.is_empty() {
        if search.timed_out() {
            search.stats.timed_out = true;
            let bound = closed_min.min(queue.min_contribution());
            return Ok(finish(search, Status::Unknown, bound, None));
        }
        if queue.len() > config.max_domains {
            search.stats.memory_cap_hit = true;
            let bound = closed_min.min(queue.min_contribution());
            return Ok(finish(search, Status::Unknown, bound, None));
        }
        let batch = queue.pop_batch(config.batch_size);
        let mut children = Vec::with_capacity(batch.len() * 2);
        for d in &batch {
            let neuron = *d.ranking.first().ok_or(Error::Exhausted)?;
            let (a, b) = crate::bab::domain::split_domain(&search.bounds, d, neuron)?;
            children.push(a);
            children.push(b);
        }
        let bounded = children.len();
        search.iteration += 1;
        search.stats.iterations = search.iteration;
        let mut open = Vec::new();
        let event = search.process(children, &mut open, &mut closed_min)?;
        match event {
            BatchEvent::Falsified(x) => {
                let bound = global_bound(
                    closed_min,
                    queue.iter().chain(open.iter()),
                    std::iter::empty(),
                )
                .min(evaluate(network, &x)?);
                return Ok(finish(search, Status::Falsified, bound, Some(x)));
            }
            BatchEvent::Verified => {
                return Ok(finish(search, Status::Unsat, closed_min.min(0.0), None));
            }
            BatchEvent::Continue => {}
        }
        let verified = bounded - open.len();
        for d in open {
            queue.push(d);
        }
        let gb = closed_min.min(queue.min_contribution());
        search.log_batch("main", bounded, verified, queue.len(), gb);
    }

    if search.stats.unresolved_leaves > 0 {
        return Ok(finish(search, Status::Unknown, closed_min, None));
    }
    Ok(finish(search, Status::Unsat, closed_min, None))
}

pub(crate) fn global_bound<'d>(
    closed_min: f64,
    open: impl Iterator<Item = &'d Domain>,
    extra: impl Iterator<Item = f64>,
) -> f64 {
    open.map(Domain::contribution)
        .chain(extra)
        .fold(closed_min, f64::min)
}
