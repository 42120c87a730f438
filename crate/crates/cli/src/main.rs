use std::process::ExitCode;
use std::time::Instant;

use brw_cli::config::{self, Cli, ExperimentConfig};
use brw_cli::error::{CliError, EXIT_OK};
use brw_cli::experiments;
use brw_cli::output;
use clap::Parser;

fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if let Some(n) = cfg.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime("thread pool", e))?;
    }
    let start = Instant::now();
    let outcome = experiments::run_experiment(cfg)?;
    let written = output::write_outputs(cfg, &outcome, start.elapsed().as_secs_f64())?;
    for line in &outcome.report {
        println!("{line}");
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    let failed = experiments::failed_criteria(&outcome);
    if failed > 0 {
        return Err(CliError::CriteriaFailed(failed));
    }
    if cfg.global.strict && !outcome.warnings.is_empty() {
        return Err(CliError::Escalated(outcome.warnings.clone()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version requests also land here and exit 0.
        Err(e) => e.exit(),
    };
    let dump = cli.dump_config;
    let result = config::resolve(cli).and_then(|cfg| match cfg {
        None => Err(CliError::Usage("no subcommand given; see --help".into())),
        Some(cfg) if dump => {
            println!("{}", cfg.to_json());
            Ok(())
        }
        Some(cfg) => run(&cfg),
    });
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
