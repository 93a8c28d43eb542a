use crate::bab::domain::{split_domain, split_domain_multi, Domain};
use crate::bab::search::{global_bound, BabConfig, BatchEvent, Search};
use crate::cuts::CutPool;
use crate::error::{Error, Result};
use crate::model::{evaluate, InputSpec, ReluNetwork};
use crate::propagation::CutMatrixView;

pub(crate) enum PresolveResult {
    Verified {
        closed_min: f64,
    },
    Falsified {
        witness: Vec<f64>,
        bound: f64,
    },
    Frontier {
        domains: Vec<Domain>,
        closed_min: f64,
        tree: usize,
    },
    TimedOut {
        bound: f64,
    },
}

struct Tree {
    id: usize,
    frontier: Vec<Domain>,
    closed_min: f64,
    expansions: usize,
}

impl Tree {
    fn bound(&self) -> f64 {
        global_bound(self.closed_min, self.frontier.iter(), std::iter::empty())
    }

    fn min_frontier(&self) -> f64 {
        self.frontier
            .iter()
            .map(|d| d.lower_bound)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Bounds `children` into `tree`. Returns an early result if the batch decided the instance.
fn grow(
    search: &mut Search<'_>,
    tree: &mut Tree,
    children: Vec<Domain>,
) -> Result<Option<PresolveResult>> {
    let mut open = Vec::new();
    let event = search.process(children, &mut open, &mut tree.closed_min)?;
    match event {
        BatchEvent::Falsified(x) => {
            let bound = global_bound(
                tree.closed_min,
                tree.frontier.iter().chain(open.iter()),
                std::iter::empty(),
            )
            .min(evaluate(search.network, &x)?);
            Ok(Some(PresolveResult::Falsified { witness: x, bound }))
        }
        BatchEvent::Verified => Ok(Some(PresolveResult::Verified {
            closed_min: tree.closed_min.min(0.0),
        })),
        BatchEvent::Continue => {
            tree.frontier.extend(open);
            Ok(None)
        }
    }
}

/// Grows several search trees from different root splits, sharing one cut pool,
/// and hands the most developed tree to the main search.
pub(crate) fn run(search: &mut Search<'_>, root: Domain) -> Result<PresolveResult> {
    let cfg = search.config.presolve.clone();
    let width = cfg.split_width();
    let seeds: Vec<_> = root.ranking.iter().take(cfg.trees).copied().collect();
    if seeds.is_empty() {
        return Err(Error::Exhausted);
    }
    let mut trees: Vec<Tree> = Vec::with_capacity(seeds.len());
    search.iteration += 1;
    for (t, &neuron) in seeds.iter().enumerate() {
        let mut base = root.clone();
        base.tree_id = t;
        let (a, b) = split_domain(&search.bounds, &base, neuron)?;
        let mut tree = Tree {
            id: t,
            frontier: Vec::new(),
            closed_min: f64::INFINITY,
            expansions: 1,
        };
        if let Some(done) = grow(search, &mut tree, vec![a, b])? {
            return Ok(done);
        }
        if tree.frontier.is_empty() {
            return Ok(PresolveResult::Verified {
                closed_min: tree.closed_min,
            });
        }
        trees.push(tree);
    }
    let best = trees
        .iter()
        .map(Tree::bound)
        .fold(f64::NEG_INFINITY, f64::max);
    search.log_batch(
        "presolve",
        2 * trees.len(),
        0,
        trees.iter().map(|t| t.frontier.len()).sum(),
        best,
    );

    for _ in 0..cfg.iterations {
        if search.timed_out() {
            let bound = trees
                .iter()
                .map(Tree::bound)
                .fold(f64::NEG_INFINITY, f64::max);
            return Ok(PresolveResult::TimedOut { bound });
        }
        search.iteration += 1;
        search.stats.iterations = search.iteration;

        // Highest bounds across all trees; ties by tree, then position.
        let mut picks: Vec<(f64, usize, usize)> = trees
            .iter()
            .flat_map(|t| {
                t.frontier
                    .iter()
                    .enumerate()
                    .map(move |(i, d)| (d.lower_bound, t.id, i))
            })
            .collect();
        picks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        picks.truncate(cfg.pick);

        let mut taken: Vec<Vec<usize>> = vec![Vec::new(); trees.len()];
        for &(_, t, i) in &picks {
            taken[t].push(i);
        }
        let mut bounded = 0;
        let mut verified = 0;
        for (t, tree) in trees.iter_mut().enumerate() {
            if taken[t].is_empty() {
                continue;
            }
            taken[t].sort_unstable();
            let mut chosen = Vec::with_capacity(taken[t].len());
            for &i in taken[t].iter().rev() {
                chosen.push(tree.frontier.remove(i));
            }
            chosen.reverse();
            let mut children = Vec::new();
            for d in &chosen {
                let k = width.min(d.ranking.len());
                let neurons: Vec<_> = d.ranking[..k].to_vec();
                children.extend(split_domain_multi(&search.bounds, d, &neurons)?);
            }
            tree.expansions += chosen.len();
            let n = children.len();
            let before = tree.frontier.len();
            if let Some(done) = grow(search, tree, children)? {
                return Ok(done);
            }
            bounded += n;
            verified += n - (tree.frontier.len() - before);
            if tree.frontier.is_empty() {
                return Ok(PresolveResult::Verified {
                    closed_min: tree.closed_min,
                });
            }
        }
        let best = trees
            .iter()
            .map(Tree::bound)
            .fold(f64::NEG_INFINITY, f64::max);
        let open = trees.iter().map(|t| t.frontier.len()).sum();
        search.log_batch("presolve", bounded, verified, open, best);
    }

    let chosen = trees
        .into_iter()
        .max_by(|a, b| {
            a.expansions
                .cmp(&b.expansions)
                .then(a.min_frontier().total_cmp(&b.min_frontier()))
                .then(b.id.cmp(&a.id))
        })
        .expect("at least one tree");
    Ok(PresolveResult::Frontier {
        closed_min: chosen.closed_min,
        tree: chosen.id,
        domains: chosen.frontier,
    })
}

/// Runs only the presolve and returns the surviving frontier with the shared pool.
/// The frontier is empty when the presolve proved the instance; a found
/// counterexample or a timeout is reported as an error.
pub fn multi_tree_presolve(
    network: &ReluNetwork,
    spec: &InputSpec,
    config: &BabConfig,
) -> Result<(Vec<Domain>, CutPool)> {
    config.validate()?;
    let mut search = Search::new(network, spec, config)?;
    search.use_cuts = true;
    let root = Domain::root(&search.bounds, &CutMatrixView::empty());
    let mut open = Vec::new();
    let mut closed_min = f64::INFINITY;
    match search.process(vec![root], &mut open, &mut closed_min)? {
        BatchEvent::Falsified(_) => {
            return Err(Error::Solver("instance falsified during presolve".into()))
        }
        BatchEvent::Verified => return Ok((Vec::new(), search.pool)),
        BatchEvent::Continue => {}
    }
    let Some(root) = open.pop() else {
        return Ok((Vec::new(), search.pool));
    };
    match run(&mut search, root)? {
        PresolveResult::Frontier { domains, .. } => Ok((domains, search.pool)),
        PresolveResult::Verified { .. } => Ok((Vec::new(), search.pool)),
        PresolveResult::Falsified { .. } => {
            Err(Error::Solver("instance falsified during presolve".into()))
        }
        PresolveResult::TimedOut { .. } => Err(Error::Solver("presolve timed out".into())),
    }
}
