use std::path::{Path, PathBuf};

use biccos_core::{bab_verify, canonicalize, load_instance, Mode};
use rayon::prelude::*;
use serde::Deserialize;

use crate::args::SearchArgs;
use crate::error::{CliError, CliResult};
use crate::report::{RunReport, SuiteReport};

/// One instance of a manifest; paths are relative to the manifest's directory.
#[derive(Clone, Debug, Deserialize)]
pub struct Entry {
    pub name: String,
    pub network: PathBuf,
    pub spec: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Entries(Vec<Entry>),
    Full {
        instances: Vec<Entry>,
        #[serde(default)]
        modes: Vec<Mode>,
    },
}

pub struct Manifest {
    pub entries: Vec<Entry>,
    pub modes: Vec<Mode>,
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|source| biccos_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|source| biccos_core::Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let (entries, modes) = match file {
        ManifestFile::Entries(e) => (e, Vec::new()),
        ManifestFile::Full { instances, modes } => (instances, modes),
    };
    let entries = entries
        .into_iter()
        .map(|e| Entry {
            network: base.join(e.network),
            spec: base.join(e.spec),
            name: e.name,
        })
        .collect();
    Ok(Manifest { entries, modes })
}

pub fn run_one(entry: &Entry, mode: Mode, search: &SearchArgs) -> CliResult<RunReport> {
    let config = search.config(mode)?;
    let (network, input, property) = load_instance(&entry.network, &entry.spec)?;
    let network = canonicalize(&network, &property)?;
    let (verdict, stats) = bab_verify(&network, &input, &config)?;
    Ok(RunReport::from_search(
        &entry.name,
        mode,
        search.seed,
        &verdict,
        &stats,
    ))
}

/// Runs every (instance, mode) pair; a failing pair becomes an error row.
pub fn run_suite(
    manifest: &Manifest,
    modes: &[Mode],
    search: &SearchArgs,
    jobs: usize,
) -> CliResult<SuiteReport> {
    // Reject bad settings once, before any instance runs.
    for &m in modes {
        search.config(m)?;
    }
    let pairs: Vec<(&Entry, Mode)> = manifest
        .entries
        .iter()
        .flat_map(|e| modes.iter().map(move |&m| (e, m)))
        .collect();
    let run = |&(entry, mode): &(&Entry, Mode)| {
        run_one(entry, mode, search)
            .unwrap_or_else(|e| RunReport::failed(&entry.name, mode, search.seed, e.to_string()))
    };
    let rows: Vec<RunReport> = if jobs <= 1 {
        pairs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {jobs} jobs: {e}")))?;
        pool.install(|| pairs.par_iter().map(run).collect())
    };
    Ok(SuiteReport::new(modes.to_vec(), rows))
}
