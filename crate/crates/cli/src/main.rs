mod args;
mod error;
mod report;
mod suite;

use std::process::ExitCode;

use biccos_core::{gen_instances, write_instances, GenConfig, Mode, Status};
use clap::Parser;

use args::{Cli, Command, GenArgs, SuiteArgs, VerifyArgs};
use error::{CliError, CliResult};
use report::{emit, write_stream, RunReport};
use suite::{load_manifest, run_suite};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Verify(a) => verify(a),
        Command::Suite(a) => run_manifest(a),
        Command::Gen(a) => generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn verify(a: VerifyArgs) -> CliResult<u8> {
    let mode = Mode::from(a.mode);
    let config = a.search.config(mode)?;
    let (network, input, property) = biccos_core::load_instance(&a.network, &a.spec)?;
    let network = biccos_core::canonicalize(&network, &property)?;
    let (verdict, stats) = biccos_core::bab_verify(&network, &input, &config)?;

    let name = a
        .network
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".network").to_string())
        .unwrap_or_default();
    let report = RunReport::from_search(&name, mode, a.search.seed, &verdict, &stats);
    emit(&report, a.report.as_deref())?;
    if let Some(path) = &a.stats_stream {
        write_stream(path, &stats.batches)?;
    }
    eprintln!(
        "{}: {} (bound {:.6e}, {} domains, {} cuts, {:.2}s)",
        name,
        verdict.status.name(),
        verdict.bound,
        stats.domains_visited,
        stats.cuts_generated,
        stats.wall_time
    );
    Ok(match verdict.status {
        Status::Unsat => 0,
        Status::Unknown => 1,
        Status::Falsified => 2,
    })
}

fn run_manifest(a: SuiteArgs) -> CliResult<u8> {
    let manifest = load_manifest(&a.manifest)?;
    let modes: Vec<Mode> = if !a.modes.is_empty() {
        a.modes.iter().map(|&m| Mode::from(m)).collect()
    } else if !manifest.modes.is_empty() {
        manifest.modes.clone()
    } else {
        vec![Mode::Plain, Mode::BiccosBase]
    };
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    let report = run_suite(&manifest, &modes, &a.search, a.jobs)?;
    emit(&report, a.report.as_deref())?;
    for agg in &report.aggregates {
        eprintln!(
            "{}: {}/{} verified, {} falsified, {} unknown, {} errors, median domains {}",
            agg.mode.name(),
            agg.verified_count,
            agg.instances,
            agg.falsified_count,
            agg.unknown_count,
            agg.error_count,
            agg.median_domains
        );
    }
    Ok(0)
}

fn generate(a: GenArgs) -> CliResult<u8> {
    let config = GenConfig {
        seed: a.seed,
        count: a.count,
        shape: a.shape.0.clone(),
        max_unstable: a.max_unstable,
        calibrate: !a.no_calibrate,
        min_margin: a.min_margin,
        max_margin: a.max_margin,
        ..GenConfig::default()
    };
    let instances = gen_instances(&config)?;
    let manifest = write_instances(&a.out, &instances)?;
    eprintln!("wrote {} instances to {}", manifest.len(), a.out.display());
    Ok(0)
}
