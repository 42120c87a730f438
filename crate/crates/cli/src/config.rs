//! Command-line and config-file parsing.
//!
//! A config is the global options plus one subcommand with its arguments. It
//! serializes to JSON, and `--config FILE` runs a saved config unchanged.

use std::path::{Path, PathBuf};

use brw_core::laws::{ModelParams, OffspringLaw, StepLaw};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Critical branching random walk experiments.
#[derive(Debug, Parser)]
#[command(name = "brw", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    /// Run the config saved in this JSON file instead of a subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the resolved config as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Existing directory for data files and the manifest.
    #[arg(long, global = true, env = "BRW_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Treat numerical warnings as failures (exit code 3).
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Offspring law: don, geom, poisson or table:k=p,...
    #[arg(long, default_value = "don")]
    pub offspring: String,
    /// Step law: rademacher, lazy:q=Q, table:x=a,... or heavy:eps=E,cutoff=N
    #[arg(long, default_value = "rademacher")]
    pub step: String,
}

impl ModelArgs {
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let offspring = OffspringLaw::parse_spec(&self.offspring)?;
        let step = StepLaw::parse_spec(&self.step)?;
        Ok(ModelParams::new(offspring, step))
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long = "xmax", default_value_t = 1024)]
    pub x_max: i64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub iter_cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Solve for the all-time tail u(x) = P{M >= x}.
    SolveTail {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Also solve the reproduce-first equation and compare with Q(u).
        #[arg(long)]
        alternate: bool,
    },
    /// Run the forward recursion for v_n(x) = P{M_n >= x}.
    Evolve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1000)]
        n_max: usize,
        #[arg(long = "xmax", default_value_t = 400)]
        x_max: i64,
        /// Write every this many generations.
        #[arg(long, default_value_t = 100)]
        every: usize,
    },
    /// Conditional law of M_n / sqrt(n) given survival to n.
    Conditional {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [500usize, 2000])]
        n: Vec<usize>,
        #[arg(long = "xmax", default_value_t = 400)]
        x_max: i64,
        /// Generation for the conditioned simulation.
        #[arg(long, default_value_t = 400)]
        sim_n: u64,
        /// Accepted conditioned trees; 0 skips the simulation.
        #[arg(long, default_value_t = 0)]
        accept: usize,
        #[arg(long, default_value_t = 10_000_000)]
        attempt_budget: u64,
    },
    /// Maximum of n independent copies at scale sqrt(n).
    Superposition {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 10_000)]
        particles: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.5, 2.0, 3.0])]
        x: Vec<f64>,
        /// Simulated replicates; 0 skips the simulation.
        #[arg(long, default_value_t = 0)]
        replicates: u64,
        #[arg(long, default_value_t = 10_000)]
        gen_cap: u64,
    },
    /// Monte Carlo estimates of P{M >= x}.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100_000)]
        trees: u64,
        #[arg(long, default_value_t = 10_000)]
        gen_cap: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [8i64, 16, 32])]
        x: Vec<i64>,
        /// Confidence level of the Wilson intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Also solve for u on a grid of this size and compare.
        #[arg(long = "compare-xmax")]
        compare_x_max: Option<i64>,
    },
    /// Survival probabilities q[n] = P{zeta > n} of the offspring process.
    Survival {
        #[arg(long, default_value = "don")]
        offspring: String,
        #[arg(long, default_value_t = 100_000)]
        n_max: usize,
        #[arg(long, default_value_t = 1000)]
        every: usize,
    },
    /// Shooting solution of the scaling-limit ODE against its closed form.
    OdeCheck {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Integration range; defaults to 12/beta.
        #[arg(long)]
        y_max: Option<f64>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Explicit PDE scheme on flat data against the exact Riccati solution.
    PdeCheck {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        /// Flat value at t = 1.
        #[arg(long, default_value_t = 2.0)]
        c0: f64,
        #[arg(long, default_value_t = 0.05)]
        dx: f64,
        #[arg(long, default_value_t = 4.0)]
        t_final: f64,
    },
    /// PDE evolution of n v_n against n v_2n.
    CrossScale {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [250usize, 500])]
        n: Vec<usize>,
        #[arg(long = "xmax", default_value_t = 400)]
        x_max: i64,
    },
    /// Optional-stopping Monte Carlo of the multiplicative martingale.
    Martingale {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [30i64])]
        start: Vec<i64>,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 100_000_000)]
        step_cap: u64,
    },
    /// Overshoot law of the reflected walk below 0 from several heights.
    Overshoot {
        #[arg(long, default_value = "table:-2=0.25,-1=0.25,1=0.25,2=0.25")]
        step: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1000i64, 10000])]
        heights: Vec<i64>,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        /// Descending ladder steps to record; 0 skips.
        #[arg(long, default_value_t = 0)]
        ladders: usize,
        #[arg(long, default_value_t = 100_000_000)]
        step_cap: u64,
    },
    /// Brownian Feynman-Kac estimate of phi(y).
    FkBrownian {
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0])]
        y: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        /// Euler steps allowed per path; unlimited by default because the
        /// hitting time of 0 is heavy-tailed.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Plateau scan of x^2 u(x) beta^2 for a heavy-tailed step law.
    HeavyTailReport {
        #[arg(long, default_value = "don")]
        offspring: String,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        cutoff: i64,
        #[arg(long = "xmax", default_value_t = 1024)]
        x_max: i64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [16i64, 32, 64, 128, 256])]
        x: Vec<i64>,
    },
    /// Run the acceptance criteria.
    Verify {
        /// Criteria to run (1-10); all when empty.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveTail { .. } => "solve-tail",
            Command::Evolve { .. } => "evolve",
            Command::Conditional { .. } => "conditional",
            Command::Superposition { .. } => "superposition",
            Command::Simulate { .. } => "simulate",
            Command::Survival { .. } => "survival",
            Command::OdeCheck { .. } => "ode-check",
            Command::PdeCheck { .. } => "pde-check",
            Command::CrossScale { .. } => "cross-scale",
            Command::Martingale { .. } => "martingale",
            Command::Overshoot { .. } => "overshoot",
            Command::FkBrownian { .. } => "fk-brownian",
            Command::HeavyTailReport { .. } => "heavy-tail-report",
            Command::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub global: GlobalArgs,
    pub experiment: Command,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Checks law specs and numeric ranges without running anything.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::BadNumeric(what.to_string()));
        if self.global.threads == Some(0) {
            return bad("--threads must be at least 1");
        }
        let solver_ok = |s: &SolverArgs| s.x_max >= 4 && s.tol > 0.0 && s.tol.is_finite();
        match &self.experiment {
            Command::SolveTail { model, solver, .. } => {
                model.params()?;
                if !solver_ok(solver) {
                    return bad("need --xmax >= 4 and --tol > 0");
                }
            }
            Command::Evolve {
                model, n_max, x_max, every,
            } => {
                model.params()?;
                if *n_max == 0 || *x_max < 1 || *every == 0 {
                    return bad("need --n-max, --xmax and --every positive");
                }
            }
            Command::Conditional {
                model, n, x_max, sim_n, ..
            } => {
                model.params()?;
                if n.is_empty() || n.contains(&0) || *x_max < 1 || *sim_n == 0 {
                    return bad("need positive generations and --xmax");
                }
            }
            Command::Superposition {
                model, solver, particles, x, ..
            } => {
                model.params()?;
                if !solver_ok(solver) || *particles == 0 || x.iter().any(|&v| !(v > 0.0)) {
                    return bad("need --particles >= 1, positive --x and a valid solver grid");
                }
            }
            Command::Simulate {
                model, trees, gen_cap, x, level, compare_x_max,
            } => {
                model.params()?;
                if *trees == 0 || *gen_cap == 0 || x.is_empty() || x.iter().any(|&v| v < 1) {
                    return bad("need --trees, --gen-cap and every --x at least 1");
                }
                if !(*level > 0.0 && *level < 1.0) {
                    return bad("--level must lie in (0, 1)");
                }
                if compare_x_max.is_some_and(|m| m < 4) {
                    return bad("--compare-xmax must be at least 4");
                }
            }
            Command::Survival { offspring, n_max, every } => {
                OffspringLaw::parse_spec(offspring)?;
                if *n_max == 0 || *every == 0 {
                    return bad("need --n-max and --every positive");
                }
            }
            Command::OdeCheck { sigma, eta, tol, .. } => {
                if !(*sigma > 0.0 && *eta > 0.0 && *tol > 0.0) {
                    return bad("need --sigma, --eta and --tol positive");
                }
            }
            Command::PdeCheck {
                sigma, eta, c0, dx, t_final,
            } => {
                if !(*sigma > 0.0 && *eta > 0.0 && *c0 > 0.0 && *dx > 0.0 && *t_final > 1.0) {
                    return bad("need positive --sigma, --eta, --c0, --dx and --t-final > 1");
                }
            }
            Command::CrossScale { model, n, x_max } => {
                model.params()?;
                if n.is_empty() || n.contains(&0) || *x_max < 1 {
                    return bad("need positive --n and --xmax");
                }
            }
            Command::Martingale {
                model, solver, start, paths, ..
            } => {
                model.params()?;
                if !solver_ok(solver) || *paths == 0 || start.iter().any(|&s| s < 1 || s > solver.x_max) {
                    return bad("need --paths >= 1 and every --start in 1..=xmax");
                }
            }
            Command::Overshoot { step, heights, paths, .. } => {
                StepLaw::parse_spec(step)?;
                if heights.is_empty() || heights[0] < 1 || heights.windows(2).any(|w| w[1] <= w[0]) || *paths == 0 {
                    return bad("need positive increasing --heights and --paths >= 1");
                }
            }
            Command::FkBrownian {
                sigma, eta, y, dt, paths, ..
            } => {
                if !(*sigma > 0.0 && *eta > 0.0) || y.iter().any(|&v| !(v > 0.0)) || *paths == 0 {
                    return bad("need positive --sigma, --eta, --y and --paths");
                }
                if !(*dt > 0.0 && *dt <= 1e-3) {
                    return bad("--dt must lie in (0, 1e-3]");
                }
            }
            Command::HeavyTailReport {
                offspring, eps, cutoff, x_max, tol, x,
            } => {
                OffspringLaw::parse_spec(offspring)?;
                StepLaw::heavy_tail(*eps, *cutoff)?;
                if *x_max < 4 || !(*tol > 0.0) || x.iter().any(|&v| v < 1 || v > *x_max) {
                    return bad("need --xmax >= 4, --tol > 0 and every --x in 1..=xmax");
                }
            }
            Command::Verify { only } => {
                if only.iter().any(|id| !(1..=10).contains(id)) {
                    return bad("criteria are numbered 1 to 10");
                }
            }
        }
        Ok(())
    }
}

/// Resolves parsed arguments into a validated config. `Ok(None)` means there
/// was nothing to run.
pub fn resolve(cli: Cli) -> Result<Option<ExperimentConfig>, CliError> {
    let cfg = match (cli.config, cli.command) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config("give either --config or a subcommand, not both".into()));
        }
        (Some(path), None) => ExperimentConfig::load(&path)?,
        (None, Some(command)) => ExperimentConfig {
            global: cli.global,
            experiment: command,
        },
        (None, None) => return Ok(None),
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

/// Parses an argument vector (program name first).
pub fn parse_config<I, T>(args: I) -> Result<Option<ExperimentConfig>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    resolve(cli)
}
