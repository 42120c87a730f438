//! One function per subcommand. Each returns tables and result values; the
//! caller owns all file output.

use brw_core::continuum::{self, PdeCoefficients, PdeState};
use brw_core::diagnostics;
use brw_core::estimators::{self, StepCdf};
use brw_core::gw;
use brw_core::lattice::{self, TailFunction, TailSolverConfig};
use brw_core::laws::{ModelParams, OffspringLaw, StepLaw};
use brw_core::rng::RngStream;
use brw_core::simulate::{self, Fate, SimConfig};
use brw_core::verify::Verifier;

use crate::config::{Command, ExperimentConfig, SolverArgs};
use crate::error::CliError;
use crate::output::{Outcome, ResultValue, Table};

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let seed = cfg.global.seed;
    match &cfg.experiment {
        Command::SolveTail { model, solver, alternate } => solve_tail(&model.params()?, solver, *alternate),
        Command::Evolve {
            model, n_max, x_max, every,
        } => evolve(&model.params()?, *n_max, *x_max, *every),
        Command::Conditional {
            model,
            n,
            x_max,
            sim_n,
            accept,
            attempt_budget,
        } => conditional(&model.params()?, n, *x_max, *sim_n, *accept, *attempt_budget, seed),
        Command::Superposition {
            model,
            solver,
            particles,
            x,
            replicates,
            gen_cap,
        } => superposition(&model.params()?, solver, *particles, x, *replicates, *gen_cap, seed),
        Command::Simulate {
            model,
            trees,
            gen_cap,
            x,
            level,
            compare_x_max,
        } => simulate(&model.params()?, *trees, *gen_cap, x, *level, *compare_x_max, seed),
        Command::Survival { offspring, n_max, every } => survival(&OffspringLaw::parse_spec(offspring)?, *n_max, *every),
        Command::OdeCheck { sigma, eta, y_max, tol } => ode_check(*sigma, *eta, *y_max, *tol),
        Command::PdeCheck {
            sigma, eta, c0, dx, t_final,
        } => pde_check(*sigma, *eta, *c0, *dx, *t_final),
        Command::CrossScale { model, n, x_max } => cross_scale(&model.params()?, n, *x_max),
        Command::Martingale {
            model,
            solver,
            start,
            paths,
            step_cap,
        } => martingale(&model.params()?, solver, start, *paths, *step_cap, seed),
        Command::Overshoot {
            step,
            heights,
            paths,
            ladders,
            step_cap,
        } => overshoot(&StepLaw::parse_spec(step)?, heights, *paths, *ladders, *step_cap, seed),
        Command::FkBrownian {
            sigma,
            eta,
            y,
            dt,
            paths,
            max_steps,
        } => fk_brownian(*sigma, *eta, y, *dt, *paths, *max_steps, seed),
        Command::HeavyTailReport {
            offspring,
            eps,
            cutoff,
            x_max,
            tol,
            x,
        } => {
            let params = ModelParams::new(OffspringLaw::parse_spec(offspring)?, StepLaw::heavy_tail(*eps, *cutoff)?);
            heavy_tail_report(&params, *x_max, *tol, x)
        }
        Command::Verify { only } => verify(only, seed),
    }
}

fn solve(params: &ModelParams, s: &SolverArgs) -> Result<TailFunction, CliError> {
    let mut cfg = TailSolverConfig::new(s.x_max, s.tol);
    cfg.iter_cap = s.iter_cap;
    lattice::solve_all_time_tail(params, &cfg).map_err(|e| CliError::runtime("tail solver", e))
}

fn solver_results(out: &mut Outcome, u: &TailFunction, tol: f64) {
    let prov = "fixed-point iteration";
    out.results.push(ResultValue::exact("iterations", u.iterations() as f64, Some(tol), prov));
    out.results.push(ResultValue::exact("residual", u.residual(), Some(tol), prov));
    out.results
        .push(ResultValue::exact("monotonicity_defect", u.monotonicity_defect(), Some(tol), prov));
    out.warnings.extend(u.warnings().iter().map(|w| w.to_string()));
}

fn solve_tail(params: &ModelParams, s: &SolverArgs, alternate: bool) -> Result<Outcome, CliError> {
    let u = solve(params, s)?;
    let mut out = Outcome::default();
    solver_results(&mut out, &u, s.tol);
    let b2 = params.beta * params.beta;
    let alt = alternate.then(|| lattice::alternate_order_tail(params, &u));
    let mut columns = vec!["x", "u", "w"];
    if alt.is_some() {
        columns.push("u_reproduce_first");
    }
    let mut table = Table::new("solve-tail", &columns);
    for x in 1..=s.x_max {
        let mut row = vec![x.into(), u.at(x).into(), ((x * x) as f64 * u.at(x) * b2).into()];
        if let Some(a) = &alt {
            row.push(a.at(x).into());
        }
        table.push(row);
    }
    out.tables.push(table);
    out.results.push(ResultValue::exact("u(1)", u.at(1), Some(s.tol), "solver"));
    out.report.push(format!(
        "u(1) = {:.12}; {} sweeps, residual {:.2e}",
        u.at(1),
        u.iterations(),
        u.residual()
    ));

    // Doubling points up to a quarter of the grid, away from the clamp.
    let points: Vec<(f64, f64)> = std::iter::successors(Some(16i64), |x| Some(2 * x))
        .take_while(|&x| x <= s.x_max / 4)
        .map(|x| (x as f64, u.at(x)))
        .collect();
    if let Ok(fit) = estimators::tail_exponent_fit(&points) {
        out.results
            .push(ResultValue::exact("tail_slope", fit.slope, Some(s.tol), "log-log fit, x = 16, 32, ... <= xmax/4"));
        out.report.push(format!("log-log slope {:.4} (r^2 {:.6})", fit.slope, fit.r_squared));
    }
    let w: Vec<(f64, f64)> = points.iter().map(|&(x, p)| (x, x * x * p * b2)).collect();
    match estimators::plateau_constant(&w) {
        Ok((est, trend)) => {
            out.results
                .push(ResultValue::exact("plateau_w", est, Some(s.tol), format!("plateau scan, {trend:?}")));
            out.report.push(format!("w(x) = x^2 u(x) beta^2 -> {est:.4} ({trend:?})"));
        }
        Err(e) => out.report.push(format!("plateau skipped: {e}")),
    }

    if let Some(a) = &alt {
        let mut cfg = TailSolverConfig::new(s.x_max, s.tol);
        cfg.iter_cap = s.iter_cap;
        let direct =
            lattice::solve_reproduce_first_tail(params, &cfg).map_err(|e| CliError::runtime("reproduce-first solver", e))?;
        let gap = (1..=s.x_max).map(|x| (a.at(x) - direct.at(x)).abs()).fold(0.0, f64::max);
        out.results
            .push(ResultValue::exact("reproduce_first_gap", gap, Some(s.tol), "sup |Q(u) - direct solve|"));
        out.report.push(format!("sup |Q(u) - reproduce-first solve| = {gap:.2e}"));
    }
    Ok(out)
}

fn spacetime(params: &ModelParams, n_max: usize, x_max: i64) -> Result<lattice::SpaceTimeTail, CliError> {
    lattice::evolve_space_time_tail(params, n_max, x_max).map_err(|e| CliError::runtime("space-time recursion", e))
}

fn evolve(params: &ModelParams, n_max: usize, x_max: i64, every: usize) -> Result<Outcome, CliError> {
    let st = spacetime(params, n_max, x_max)?;
    let mut out = Outcome::default();
    let mut table = Table::new("evolve", &["n", "x", "v"]);
    let mut slices: Vec<usize> = (0..=n_max).step_by(every).collect();
    if slices.last() != Some(&n_max) {
        slices.push(n_max);
    }
    for &n in &slices {
        for (i, &v) in st.slice(n).iter().enumerate() {
            table.push(vec![n.into(), (i as i64 - x_max).into(), v.into()]);
        }
    }
    out.tables.push(table);
    let gap = (0..=n_max)
        .map(|n| (st.at(n, -x_max) - st.survival().get(n)).abs().max(st.at(n, x_max)))
        .fold(0.0, f64::max);
    out.results.push(ResultValue::exact(
        "edge_gap",
        gap,
        Some(lattice::EDGE_TOLERANCE),
        "max over n of |v_n(-X) - q[n]| and v_n(X)",
    ));
    out.report.push(format!("evolved {n_max} generations on |x| <= {x_max}; edge gap {gap:.2e}"));
    Ok(out)
}

fn conditional(
    params: &ModelParams,
    ns: &[usize],
    x_max: i64,
    sim_n: u64,
    accept: usize,
    budget: u64,
    seed: u64,
) -> Result<Outcome, CliError> {
    let horizon = ns.iter().copied().max().unwrap_or(0).max(if accept > 0 { sim_n as usize } else { 0 });
    let st = spacetime(params, horizon, x_max)?;
    let rt = |e| CliError::runtime("conditional law", e);
    let mut out = Outcome::default();
    let mut table = Table::new("conditional", &["n", "x", "g"]);
    for &n in ns {
        for &(x, g) in lattice::conditional_cdf(&st, n).map_err(rt)?.grid() {
            table.push(vec![n.into(), x.into(), g.into()]);
        }
    }
    out.tables.push(table);
    for pair in ns.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = lattice::conditional_cdf_distance(&st, a, b).map_err(rt)?;
        let raw = estimators::ks_distance(
            &lattice::conditional_cdf(&st, a).map_err(rt)?.to_step_cdf(),
            &lattice::conditional_cdf(&st, b).map_err(rt)?.to_step_cdf(),
        )
        .map_err(|e| CliError::runtime("KS distance", e))?;
        out.results.push(ResultValue::exact(
            format!("distance_{a}_{b}"),
            d,
            None,
            "sup at common atoms, mid-jump values",
        ));
        out.results
            .push(ResultValue::exact(format!("raw_sup_{a}_{b}"), raw, None, "sup over all x"));
        out.report.push(format!("G_{a} vs G_{b}: {d:.4} at common atoms, raw sup {raw:.4}"));
    }
    if accept > 0 {
        let sample = simulate::sample_conditioned_maxima(params, sim_n, accept, budget, seed)
            .map_err(|e| CliError::runtime("conditioned simulation", e))?;
        let root = (sim_n as f64).sqrt();
        let scaled: Vec<f64> = sample.final_maxima.iter().map(|&m| m as f64 / root).collect();
        let exact = lattice::conditional_cdf(&st, sim_n as usize).map_err(rt)?.to_step_cdf();
        let ks = estimators::ks_distance(&StepCdf::empirical(&scaled), &exact)
            .map_err(|e| CliError::runtime("KS distance", e))?;
        let mut sims = Table::new("conditional-sample", &["index", "final_max", "scaled"]);
        for (i, (&m, &s)) in sample.final_maxima.iter().zip(&scaled).enumerate() {
            sims.push(vec![i.into(), m.into(), s.into()]);
        }
        out.tables.push(sims);
        out.results.push(ResultValue {
            name: format!("ks_simulated_{sim_n}"),
            value: ks,
            std_error: None,
            seed: Some(seed),
            tolerance: None,
            provenance: format!("{accept} accepted of {} attempts", sample.attempts),
        });
        out.report.push(format!(
            "KS(simulated, G_{sim_n}) = {ks:.4} from {accept} of {} trees",
            sample.attempts
        ));
    }
    Ok(out)
}

fn superposition(
    params: &ModelParams,
    s: &SolverArgs,
    particles: u64,
    xs: &[f64],
    replicates: u64,
    gen_cap: u64,
    seed: u64,
) -> Result<Outcome, CliError> {
    let u = solve(params, s)?;
    let mut out = Outcome::default();
    solver_results(&mut out, &u, s.tol);
    let root = (particles as f64).sqrt();
    let levels: Vec<i64> = xs.iter().map(|&x| (root * x).ceil() as i64).collect();
    let records = if replicates > 0 {
        let mut cfg = SimConfig::new(gen_cap);
        cfg.stop_level = levels.iter().copied().max();
        Some(
            simulate::simulate_superposition_many(params, particles, replicates, &cfg, seed)
                .map_err(|e| CliError::runtime("superposition simulation", e))?,
        )
    } else {
        None
    };
    let mut table = Table::new(
        "superposition",
        &["x", "level", "lattice", "limit", "simulated", "std_error"],
    );
    for (&x, &level) in xs.iter().zip(&levels) {
        let lat = lattice::superposition_tail(&u, particles, x).map_err(|e| CliError::runtime("superposition", e))?;
        let limit = -(-params.c_const / (x * x)).exp_m1();
        let (sim, se) = match &records {
            Some(r) => {
                let p = r.iter().filter(|rec| rec.reached(level)).count() as f64 / replicates as f64;
                (p, (p * (1.0 - p) / replicates as f64).sqrt())
            }
            None => (f64::NAN, f64::NAN),
        };
        table.push(vec![x.into(), level.into(), lat.into(), limit.into(), sim.into(), se.into()]);
        out.results.push(ResultValue::exact(
            format!("gap_x{x}"),
            lat - limit,
            Some(s.tol),
            "lattice minus limit law",
        ));
        out.report.push(format!("x = {x}: lattice {lat:.4}, limit {limit:.4}"));
    }
    out.tables.push(table);
    Ok(out)
}

fn simulate(
    params: &ModelParams,
    trees: u64,
    gen_cap: u64,
    xs: &[i64],
    level: f64,
    compare_x_max: Option<i64>,
    seed: u64,
) -> Result<Outcome, CliError> {
    let mut cfg = SimConfig::new(gen_cap);
    cfg.stop_level = xs.iter().copied().max();
    let records =
        simulate::simulate_many(params, trees, &cfg, seed).map_err(|e| CliError::runtime("simulation", e))?;
    let hits = simulate::tail_hits(&records, xs);
    let bias = gw::survival_probabilities(&params.offspring, gen_cap as usize).get(gen_cap as usize);
    let tail = match compare_x_max {
        Some(m) => {
            let s = SolverArgs {
                x_max: m,
                tol: 1e-12,
                iter_cap: None,
            };
            Some(solve(params, &s)?)
        }
        None => None,
    };
    let mut out = Outcome::default();
    let censored = records.iter().filter(|r| matches!(r.fate, Fate::Censored(_))).count();
    let mut table = Table::new(
        "simulate",
        &["x", "hits", "trials", "p_hat", "std_error", "ci_low", "ci_high", "bias_bound", "u_solver"],
    );
    let mut points = Vec::new();
    for (&x, &k) in xs.iter().zip(&hits) {
        let p = k as f64 / trees as f64;
        let se = (p * (1.0 - p) / trees as f64).sqrt();
        let (lo, hi) = estimators::bernoulli_ci(k, trees, level).map_err(|e| CliError::runtime("interval", e))?;
        let u = tail.as_ref().map_or(f64::NAN, |t| t.at(x));
        table.push(vec![
            x.into(),
            k.into(),
            trees.into(),
            p.into(),
            se.into(),
            lo.into(),
            hi.into(),
            bias.into(),
            u.into(),
        ]);
        out.results.push(ResultValue::sampled(format!("p_hat_x{x}"), p, se, seed, "tree simulation"));
        out.report.push(format!("P(M >= {x}) ~ {p:.5} +- {se:.1e}{}", if u.is_nan() { String::new() } else { format!(" (solver {u:.5})") }));
        if k > 0 {
            points.push((x as f64, p));
        }
    }
    out.tables.push(table);
    out.results.push(ResultValue {
        name: "censored".into(),
        value: censored as f64,
        std_error: None,
        seed: Some(seed),
        tolerance: Some(bias),
        provenance: format!("trees alive at generation {gen_cap}; bias bound q[gen_cap]"),
    });
    if censored > 0 {
        out.warnings
            .push(format!("{censored} trees censored at generation {gen_cap}; bias bound {bias:.2e}"));
    }
    if let Ok(fit) = estimators::tail_exponent_fit(&points) {
        out.results.push(ResultValue {
            name: "tail_slope".into(),
            value: fit.slope,
            std_error: None,
            seed: Some(seed),
            tolerance: None,
            provenance: "log-log fit of p_hat".into(),
        });
    }
    Ok(out)
}

fn survival(law: &OffspringLaw, n_max: usize, every: usize) -> Result<Outcome, CliError> {
    let table_q = gw::survival_probabilities(law, n_max);
    let k = gw::kolmogorov_diagnostic(&table_q);
    let mut out = Outcome::default();
    let mut table = Table::new("survival", &["n", "q", "kolmogorov"]);
    for n in (0..=n_max).step_by(every).chain((!n_max.is_multiple_of(every)).then_some(n_max)) {
        table.push(vec![n.into(), table_q.get(n).into(), k[n].into()]);
    }
    out.tables.push(table);
    out.results
        .push(ResultValue::exact("kolmogorov_at_n_max", k[n_max], None, "n q[n] sigma^2 / 2"));
    out.results
        .push(ResultValue::exact("truncation_error", law.truncation_error(), None, "dropped offspring mass"));
    out.report.push(format!("n q[n] sigma^2/2 at n = {n_max}: {:.6}", k[n_max]));
    Ok(out)
}

fn ode_check(sigma: f64, eta: f64, y_max: Option<f64>, tol: f64) -> Result<Outcome, CliError> {
    let b = continuum::beta(sigma, eta);
    let prof = continuum::solve_phi_shooting(sigma, eta, y_max.unwrap_or(12.0 / b), tol)
        .map_err(|e| CliError::runtime("shooting", e))?;
    let mut out = Outcome::default();
    let mut table = Table::new("ode-check", &["y", "shooting", "closed_form", "diff"]);
    let mut sup = 0.0_f64;
    for i in 0..=1000 {
        let y = i as f64 * 0.01;
        let exact = continuum::phi_closed_form(y, sigma, eta).map_err(|e| CliError::runtime("closed form", e))?;
        let num = prof.eval(y);
        sup = sup.max((num - exact).abs());
        table.push(vec![y.into(), num.into(), exact.into(), (num - exact).into()]);
    }
    out.tables.push(table);
    let slope_err = prof.initial_slope() + 2.0 * b;
    out.results
        .push(ResultValue::exact("sup_diff_0_10", sup, Some(tol), "shooting vs closed form on [0, 10]"));
    out.results
        .push(ResultValue::exact("initial_slope", prof.initial_slope(), Some(tol), "bisection"));
    out.results
        .push(ResultValue::exact("initial_slope_error", slope_err, Some(tol), "against -2 beta"));
    out.report.push(format!(
        "sup |phi - closed form| on [0,10] = {sup:.2e}; phi'(0) = {:.12} (error {slope_err:.1e})",
        prof.initial_slope()
    ));
    Ok(out)
}

fn pde_check(sigma: f64, eta: f64, c0: f64, dx: f64, t_final: f64) -> Result<Outcome, CliError> {
    let coeffs = PdeCoefficients::from_sigma_eta(sigma, eta);
    let width = 41;
    let mut state = PdeState::new(1.0, -(width as f64 - 1.0) / 2.0 * dx, dx, vec![c0; width], &coeffs);
    let mut out = Outcome::default();
    let mut table = Table::new("pde-check", &["t", "numeric", "exact", "abs_err"]);
    let exact = |t: f64| 1.0 / (1.0 / c0 + coeffs.reaction * (t - 1.0));
    table.push(vec![1.0.into(), c0.into(), c0.into(), 0.0.into()]);
    let mut sup = 0.0_f64;
    let steps = ((t_final - 1.0) / 0.25).ceil() as usize;
    for i in 1..=steps {
        let t = (1.0 + i as f64 * 0.25).min(t_final);
        state = continuum::pde_evolve(&state, t, &coeffs).map_err(|e| CliError::runtime("PDE", e))?;
        let err = state
            .values
            .iter()
            .map(|v| (v - exact(t)).abs())
            .fold(0.0, f64::max);
        sup = sup.max(err);
        table.push(vec![t.into(), state.values[width / 2].into(), exact(t).into(), err.into()]);
    }
    out.tables.push(table);
    out.results.push(ResultValue::exact(
        "flat_sup_error",
        sup,
        None,
        "explicit scheme vs 1/(1/c0 + (sigma^2/2)(t-1))",
    ));
    out.report.push(format!("flat data, t in [1, {t_final}]: sup error {sup:.2e}"));
    Ok(out)
}

fn cross_scale(params: &ModelParams, ns: &[usize], x_max: i64) -> Result<Outcome, CliError> {
    let n_max = 2 * ns.iter().copied().max().unwrap_or(1);
    let st = spacetime(params, n_max, x_max)?;
    let coeffs = PdeCoefficients::from_sigma_eta(params.sigma(), params.eta());
    let mut out = Outcome::default();
    let mut table = Table::new("cross-scale", &["n", "x", "recursion", "pde", "diff"]);
    for &n in ns {
        let rep = continuum::cross_scale_check(&st, n, &coeffs).map_err(|e| CliError::runtime("cross-scale", e))?;
        for r in &rep.rows {
            table.push(vec![n.into(), r.x.into(), r.recursion.into(), r.pde.into(), r.diff.into()]);
        }
        out.results.push(ResultValue::exact(
            format!("relative_discrepancy_n{n}"),
            rep.sup_rel,
            None,
            "sup |PDE - n v_2n| / sup |n v_2n|",
        ));
        out.report.push(format!("n = {n}: relative discrepancy {:.4}", rep.sup_rel));
    }
    out.tables.push(table);
    Ok(out)
}

fn martingale(
    params: &ModelParams,
    s: &SolverArgs,
    starts: &[i64],
    paths: u64,
    step_cap: u64,
    seed: u64,
) -> Result<Outcome, CliError> {
    let u = solve(params, s)?;
    let mut out = Outcome::default();
    solver_results(&mut out, &u, s.tol);
    let defect = diagnostics::one_step_identity_defect(params, &u);
    out.results
        .push(ResultValue::exact("one_step_defect", defect, Some(u.residual()), "one-step identity"));
    let mut table = Table::new(
        "martingale",
        &["start_x", "paths", "estimate", "std_error", "solver", "z_score", "exited", "truncated"],
    );
    for (i, &x) in starts.iter().enumerate() {
        // Distinct starts get distinct seeds so their errors are independent.
        let run_seed = seed.wrapping_add(i as u64);
        let rep = diagnostics::martingale_optional_stopping_check(params, &u, x, paths, run_seed, step_cap)
            .map_err(|e| CliError::runtime("martingale", e))?;
        let z = (rep.estimate - rep.solver_value) / rep.std_error;
        table.push(vec![
            x.into(),
            paths.into(),
            rep.estimate.into(),
            rep.std_error.into(),
            rep.solver_value.into(),
            z.into(),
            rep.exited.into(),
            rep.truncated.into(),
        ]);
        out.results.push(ResultValue::sampled(
            format!("estimate_x{x}"),
            rep.estimate,
            rep.std_error,
            run_seed,
            "optional stopping",
        ));
        out.report.push(format!(
            "x = {x}: {:.6} +- {:.1e} vs u = {:.6}",
            rep.estimate, rep.std_error, rep.solver_value
        ));
    }
    out.tables.push(table);
    out.report.push(format!("one-step defect {defect:.2e}, residual {:.2e}", u.residual()));
    Ok(out)
}

fn overshoot(
    step: &StepLaw,
    heights: &[i64],
    paths: u64,
    ladders: usize,
    step_cap: u64,
    seed: u64,
) -> Result<Outcome, CliError> {
    let rows = diagnostics::overshoot_statistics(step, heights, paths, seed, step_cap)
        .map_err(|e| CliError::runtime("overshoot", e))?;
    let mut out = Outcome::default();
    let mut moments = Table::new("overshoot", &["height", "paths", "mean", "second_moment", "max"]);
    let mut law = Table::new("overshoot-law", &["height", "overshoot", "count"]);
    for r in &rows {
        moments.push(vec![
            r.height.into(),
            r.n_paths.into(),
            r.mean.into(),
            r.second_moment.into(),
            r.max.into(),
        ]);
        for (&v, &c) in &r.distribution {
            law.push(vec![r.height.into(), v.into(), c.into()]);
        }
        out.results.push(ResultValue {
            name: format!("mean_h{}", r.height),
            value: r.mean,
            std_error: Some(((r.second_moment - r.mean * r.mean).max(0.0) / r.n_paths as f64).sqrt()),
            seed: Some(seed),
            tolerance: None,
            provenance: "overshoot below 0".into(),
        });
    }
    for pair in rows.windows(2) {
        let ks = estimators::ks_distance(&pair[0].to_step_cdf(), &pair[1].to_step_cdf())
            .map_err(|e| CliError::runtime("KS distance", e))?;
        out.results.push(ResultValue {
            name: format!("ks_h{}_h{}", pair[0].height, pair[1].height),
            value: ks,
            std_error: None,
            seed: Some(seed),
            tolerance: None,
            provenance: "overshoot laws from two heights".into(),
        });
        out.report
            .push(format!("KS(h = {}, h = {}) = {ks:.4}", pair[0].height, pair[1].height));
    }
    for r in &rows {
        out.report
            .push(format!("h = {}: mean {:.4}, second moment {:.4}, max {}", r.height, r.mean, r.second_moment, r.max));
    }
    out.tables.push(moments);
    out.tables.push(law);
    if ladders > 0 {
        let mut rng = RngStream::new(seed, RngStream::family_id(u32::MAX, 0));
        let lad = diagnostics::ladder_decomposition_sample(step, ladders, step_cap, &mut rng)
            .map_err(|e| CliError::runtime("ladder", e))?;
        let mut table = Table::new("ladder", &["index", "increment", "epoch"]);
        for (i, (&z, &t)) in lad.increments.iter().zip(&lad.epochs).enumerate() {
            table.push(vec![(i + 1).into(), z.into(), t.into()]);
        }
        out.tables.push(table);
    }
    Ok(out)
}

fn fk_brownian(
    sigma: f64,
    eta: f64,
    ys: &[f64],
    dt: f64,
    paths: u64,
    max_steps: Option<u64>,
    seed: u64,
) -> Result<Outcome, CliError> {
    let b = continuum::beta(sigma, eta);
    let y_far = ys.iter().copied().fold(0.0, f64::max).max(1.0);
    let prof = continuum::solve_phi_shooting(sigma, eta, (12.0 / b).max(2.0 * y_far), 1e-12)
        .map_err(|e| CliError::runtime("shooting", e))?;
    let mut out = Outcome::default();
    let mut table = Table::new(
        "fk-brownian",
        &["y", "paths", "estimate", "std_error", "phi", "diff", "mean_steps"],
    );
    for (i, &y) in ys.iter().enumerate() {
        let run_seed = seed.wrapping_add(i as u64);
        let est = diagnostics::brownian_fk_estimate(|z| prof.eval(z), y, sigma, eta, dt, paths, run_seed, max_steps.unwrap_or(u64::MAX))
            .map_err(|e| CliError::runtime("Feynman-Kac", e))?;
        let phi = prof.eval(y);
        table.push(vec![
            y.into(),
            paths.into(),
            est.estimate.into(),
            est.std_error.into(),
            phi.into(),
            (est.estimate - phi).into(),
            est.mean_steps.into(),
        ]);
        out.results.push(ResultValue::sampled(
            format!("estimate_y{y}"),
            est.estimate,
            est.std_error,
            run_seed,
            format!("Euler paths, dt = {dt}; bias allowance sqrt(dt)"),
        ));
        out.report.push(format!(
            "y = {y}: {:.5} +- {:.1e} vs phi = {phi:.5}",
            est.estimate, est.std_error
        ));
    }
    out.tables.push(table);
    Ok(out)
}

fn heavy_tail_report(params: &ModelParams, x_max: i64, tol: f64, xs: &[i64]) -> Result<Outcome, CliError> {
    let u = solve(
        params,
        &SolverArgs {
            x_max,
            tol,
            iter_cap: None,
        },
    )?;
    let mut out = Outcome::default();
    solver_results(&mut out, &u, tol);
    let b2 = params.beta * params.beta;
    let mut table = Table::new("heavy-tail-report", &["x", "u", "w"]);
    let mut points = Vec::new();
    for &x in xs {
        let w = (x * x) as f64 * u.at(x) * b2;
        table.push(vec![x.into(), u.at(x).into(), w.into()]);
        points.push((x as f64, w));
    }
    out.tables.push(table);
    match estimators::plateau_constant(&points) {
        Ok((est, trend)) => {
            out.results
                .push(ResultValue::exact("plateau_w", est, Some(tol), format!("plateau scan, {trend:?}")));
            out.report.push(format!("w(x) beta^2 at x = {xs:?}: last {est:.4}, {trend:?}"));
        }
        Err(e) => out.report.push(format!("plateau skipped: {e}")),
    }
    Ok(out)
}

fn verify(only: &[u8], seed: u64) -> Result<Outcome, CliError> {
    let verifier = Verifier::new(seed);
    let ids: Vec<u8> = if only.is_empty() { (1..=10).collect() } else { only.to_vec() };
    let mut out = Outcome::default();
    let mut table = Table::new("verify", &["criterion", "title", "gating", "passed", "detail"]);
    for id in ids {
        let v = verifier.run(id);
        out.report.push(v.line());
        table.push(vec![
            (v.id as i64).into(),
            v.title.into(),
            v.gating.into(),
            v.passed.into(),
            v.detail.clone().into(),
        ]);
        out.results.push(ResultValue {
            name: format!("criterion_{}", v.id),
            value: if v.passed { 1.0 } else { 0.0 },
            std_error: None,
            seed: Some(seed),
            tolerance: None,
            provenance: v.title.into(),
        });
    }
    out.tables.push(table);
    Ok(out)
}

/// Number of gated criteria that failed in a verify outcome.
pub fn failed_criteria(out: &Outcome) -> usize {
    out.tables
        .iter()
        .filter(|t| t.name == "verify")
        .flat_map(|t| &t.rows)
        .filter(|row| matches!((&row[2], &row[3]), (crate::output::Cell::Bool(true), crate::output::Cell::Bool(false))))
        .count()
}
