//! The acceptance suite: each criterion as a runner returning a verdict.
//!
//! Runners share one reference tail solve and one space-time table through
//! [`Verifier`], so the full suite pays for each only once.

use std::sync::OnceLock;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::continuum::{self, ContinuumError, PdeCoefficients};
use crate::diagnostics::{self, DiagError, DEFAULT_STEP_CAP};
use crate::estimators::{self, EstimatorError, StepCdf, Trend};
use crate::gw;
use crate::lattice::{self, SolverError, SpaceTimeTail, TailFunction, TailSolverConfig};
use crate::laws::{LawError, ModelParams, OffspringLaw, StepLaw};
use crate::simulate::{self, SimConfig, SimError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error(transparent)]
    Continuum(#[from] ContinuumError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Grid and tolerance of the reference tail solve.
pub const REFERENCE_X_MAX: i64 = 1024;
pub const REFERENCE_TOL: f64 = 1e-12;
/// Spatial half-width and horizon of the shared space-time table.
pub const SPACETIME_X_MAX: i64 = 400;
pub const SPACETIME_N_MAX: usize = 2000;
/// Rounding allowance when comparing the one-step defect with the solver
/// residual; the two sum the same terms in different orders.
pub const RESIDUAL_SLACK: f64 = 1e-15;
/// Multiplier on the standard error for Monte Carlo comparisons.
pub const SE_MULTIPLIER: f64 = 3.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub id: u8,
    pub title: &'static str,
    /// Exploratory criteria are reported but never fail the suite.
    pub gating: bool,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let tag = if self.gating {
            ""
        } else {
            " [exploratory, not gated]"
        };
        format!(
            "{status} criterion {:>2} {}{tag} ({:.1}s): {}",
            self.id, self.title, self.seconds, self.detail
        )
    }
}

pub const TITLES: [&str; 10] = [
    "all-time tail constant",
    "Monte Carlo vs solver",
    "survival asymptotics",
    "scaling-limit ODE",
    "superposition law",
    "optional stopping",
    "reproduce-first identity",
    "conditional law stability",
    "PDE cross-scale consistency",
    "heavy-tail plateau",
];

pub struct Verifier {
    seed: u64,
    params: ModelParams,
    tail: OnceLock<TailFunction>,
    spacetime: OnceLock<SpaceTimeTail>,
}

impl Verifier {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: ModelParams::reference(),
            tail: OnceLock::new(),
            spacetime: OnceLock::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reference_tail(&self) -> Result<&TailFunction, VerifyError> {
        if let Some(t) = self.tail.get() {
            return Ok(t);
        }
        let cfg = TailSolverConfig::new(REFERENCE_X_MAX, REFERENCE_TOL);
        let t = lattice::solve_all_time_tail(&self.params, &cfg)?;
        Ok(self.tail.get_or_init(|| t))
    }

    pub fn spacetime(&self) -> Result<&SpaceTimeTail, VerifyError> {
        if let Some(s) = self.spacetime.get() {
            return Ok(s);
        }
        let s = lattice::evolve_space_time_tail(&self.params, SPACETIME_N_MAX, SPACETIME_X_MAX)?;
        Ok(self.spacetime.get_or_init(|| s))
    }

    fn seed_for(&self, id: u8) -> u64 {
        self.seed.wrapping_add(id as u64)
    }

    /// Runs criterion `id` (1 to 10). Errors become failing verdicts.
    pub fn run(&self, id: u8) -> Verdict {
        assert!((1..=10).contains(&id), "criteria are numbered 1 to 10");
        let start = Instant::now();
        let result = match id {
            1 => self.tail_constant(),
            2 => self.monte_carlo_vs_solver(),
            3 => self.survival_asymptotics(),
            4 => self.scaling_ode(),
            5 => self.superposition(),
            6 => self.optional_stopping(),
            7 => self.reproduce_first(),
            8 => self.conditional_stability(),
            9 => self.cross_scale(),
            _ => self.heavy_tail(),
        };
        let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
        Verdict {
            id,
            title: TITLES[id as usize - 1],
            gating: id != 10,
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    pub fn run_all(&self) -> Vec<Verdict> {
        (1..=10).map(|id| self.run(id)).collect()
    }

    fn tail_constant(&self) -> Result<(bool, String), VerifyError> {
        let u = self.reference_tail()?;
        let p = &self.params;
        let norm = p.sigma().powi(2) / (6.0 * p.eta().powi(2));
        let devs: Vec<(i64, f64)> = [64, 128, 256]
            .iter()
            .map(|&x| (x, ((x * x) as f64 * u.at(x) * norm - 1.0).abs()))
            .collect();
        let ok = devs.iter().all(|&(_, d)| d <= 0.15) && devs[2].1 < devs[0].1;
        let detail = devs
            .iter()
            .map(|(x, d)| format!("|dev({x})|={d:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        Ok((ok, detail))
    }

    fn monte_carlo_vs_solver(&self) -> Result<(bool, String), VerifyError> {
        const TREES: u64 = 100_000;
        const GEN_CAP: u64 = 10_000;
        let xs = [8i64, 16, 32];
        let u = self.reference_tail()?;
        let mut cfg = SimConfig::new(GEN_CAP);
        // Reaching the top level settles every comparison for that tree.
        cfg.stop_level = Some(xs[xs.len() - 1]);
        let records = simulate::simulate_many(&self.params, TREES, &cfg, self.seed_for(2))?;
        let hits = simulate::tail_hits(&records, &xs);
        let bias = gw::survival_probabilities(&self.params.offspring, GEN_CAP as usize)
            .get(GEN_CAP as usize);
        let mut ok = true;
        let mut parts = Vec::new();
        for (&x, &k) in xs.iter().zip(&hits) {
            let p = k as f64 / TREES as f64;
            let se = (p * (1.0 - p) / TREES as f64).sqrt();
            let gap = (p - u.at(x)).abs();
            let bound = SE_MULTIPLIER * se + bias;
            ok &= gap <= bound;
            parts.push(format!(
                "x={x} p={p:.5} u={:.5} gap={gap:.2e}<={bound:.2e}",
                u.at(x)
            ));
        }
        Ok((ok, parts.join("; ")))
    }

    fn survival_asymptotics(&self) -> Result<(bool, String), VerifyError> {
        const N: usize = 100_000;
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, law) in [
            ("double-or-nothing", OffspringLaw::double_or_nothing()),
            ("poisson", OffspringLaw::poisson()),
        ] {
            let k = gw::kolmogorov_diagnostic(&gw::survival_probabilities(&law, N))[N];
            ok &= (k - 1.0).abs() <= 0.01;
            parts.push(format!("{name}: n q[n] sigma^2/2 = {k:.5}"));
        }
        Ok((ok, parts.join("; ")))
    }

    fn scaling_ode(&self) -> Result<(bool, String), VerifyError> {
        let (s, e) = (self.params.sigma(), self.params.eta());
        let b = continuum::beta(s, e);
        let prof = continuum::solve_phi_shooting(s, e, 12.0 / b, 1e-12)?;
        let mut sup = 0.0_f64;
        for i in 0..=10_000 {
            let y = i as f64 * 1e-3;
            sup = sup.max((prof.eval(y) - continuum::phi_closed_form(y, s, e)?).abs());
        }
        let slope_err = (prof.initial_slope() + 2.0 * b).abs();
        let ok = sup <= 1e-6 && slope_err <= 1e-8;
        Ok((
            ok,
            format!("sup|phi - closed form| on [0,10] = {sup:.2e}; slope error = {slope_err:.2e}"),
        ))
    }

    fn superposition(&self) -> Result<(bool, String), VerifyError> {
        const N: u64 = 10_000;
        let u = self.reference_tail()?;
        let ratio = 6.0 * self.params.eta().powi(2) / self.params.sigma().powi(2);
        let mut ok = true;
        let mut parts = Vec::new();
        for x in [1.0, 1.5, 2.0, 3.0] {
            let lattice_value = lattice::superposition_tail(u, N, x)?;
            let limit = -(-ratio / (x * x)).exp_m1();
            let gap = (lattice_value - limit).abs();
            ok &= gap <= 0.02;
            parts.push(format!("x={x}: {lattice_value:.4} vs {limit:.4}"));
        }
        Ok((ok, parts.join("; ")))
    }

    fn optional_stopping(&self) -> Result<(bool, String), VerifyError> {
        let u = self.reference_tail()?;
        let rep = diagnostics::martingale_optional_stopping_check(
            &self.params,
            u,
            30,
            100_000,
            self.seed_for(6),
            DEFAULT_STEP_CAP,
        )?;
        let gap = (rep.estimate - rep.solver_value).abs();
        let defect = diagnostics::one_step_identity_defect(&self.params, u);
        let ok = gap <= SE_MULTIPLIER * rep.std_error && defect <= u.residual() + RESIDUAL_SLACK;
        Ok((
            ok,
            format!(
                "estimate {:.6} (se {:.1e}) vs u(30) {:.6}; one-step defect {defect:.4e} vs residual {:.4e}",
                rep.estimate,
                rep.std_error,
                rep.solver_value,
                u.residual()
            ),
        ))
    }

    fn reproduce_first(&self) -> Result<(bool, String), VerifyError> {
        let u = self.reference_tail()?;
        let alt = lattice::alternate_order_tail(&self.params, u);
        let cfg = TailSolverConfig::new(REFERENCE_X_MAX, REFERENCE_TOL);
        let direct = lattice::solve_reproduce_first_tail(&self.params, &cfg)?;
        let sup = (-2..=REFERENCE_X_MAX)
            .map(|x| (alt.at(x) - direct.at(x)).abs())
            .fold(0.0, f64::max);
        Ok((sup <= 1e-10, format!("sup|Q(u) - direct| = {sup:.2e}")))
    }

    fn conditional_stability(&self) -> Result<(bool, String), VerifyError> {
        const N_SIM: u64 = 400;
        let st = self.spacetime()?;
        let mid = lattice::conditional_cdf_distance(st, 500, 2000)?;
        let raw = estimators::ks_distance(
            &lattice::conditional_cdf(st, 500)?.to_step_cdf(),
            &lattice::conditional_cdf(st, 2000)?.to_step_cdf(),
        )?;
        let sample = simulate::sample_conditioned_maxima(
            &self.params,
            N_SIM,
            2000,
            10_000_000,
            self.seed_for(8),
        )?;
        let root = (N_SIM as f64).sqrt();
        let scaled: Vec<f64> = sample
            .final_maxima
            .iter()
            .map(|&m| m as f64 / root)
            .collect();
        let ks = estimators::ks_distance(
            &StepCdf::empirical(&scaled),
            &lattice::conditional_cdf(st, N_SIM as usize)?.to_step_cdf(),
        )?;
        let ok = mid <= 0.03 && ks <= 0.05;
        Ok((
            ok,
            format!(
                "G_500 vs G_2000 at common atoms {mid:.4} (raw sup {raw:.4}); KS(simulated, G_400) = {ks:.4} from {} of {} trees",
                sample.final_maxima.len(),
                sample.attempts
            ),
        ))
    }

    fn cross_scale(&self) -> Result<(bool, String), VerifyError> {
        let st = self.spacetime()?;
        let coeffs = PdeCoefficients::from_sigma_eta(self.params.sigma(), self.params.eta());
        let small = continuum::cross_scale_check(st, 250, &coeffs)?.sup_rel;
        let large = continuum::cross_scale_check(st, 500, &coeffs)?.sup_rel;
        let ok = large <= 0.05 && large < small;
        Ok((
            ok,
            format!("relative discrepancy n=250 {small:.4}, n=500 {large:.4}"),
        ))
    }

    /// Passes when the plateau scan is flagged as drifting.
    fn heavy_tail(&self) -> Result<(bool, String), VerifyError> {
        let params = ModelParams::new(
            OffspringLaw::double_or_nothing(),
            StepLaw::heavy_tail(0.5, 1000)?,
        );
        let u = lattice::solve_all_time_tail(&params, &TailSolverConfig::new(1024, 1e-10))?;
        let b2 = params.beta * params.beta;
        let points: Vec<(f64, f64)> = [16i64, 32, 64, 128, 256]
            .iter()
            .map(|&x| (x as f64, (x * x) as f64 * u.at(x) * b2))
            .collect();
        let (last, trend) = estimators::plateau_constant(&points)?;
        let seq = points
            .iter()
            .map(|(x, w)| format!("{x}:{w:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        Ok((
            trend == Trend::Drifting,
            format!("w beta^2 = [{seq}], last {last:.3}, {trend:?}"),
        ))
    }
}
