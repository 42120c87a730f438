//! Deterministic solvers for the nonlinear convolution equations.
//!
//! Convention: `u(x) = P{M ≥ x}` on the integers, so `u(x) = 1` for `x ≤ 0`
//! (the initial particle sits at 0). For `x ≥ 1`
//!
//! ```text
//! u(x) = Σ_y a_y Q(u(x - y))
//! ```
//!
//! The same convention is used for `v_n(x) = P{M_n ≥ x}`, which obeys
//! `v_n(x) = Σ_y a_y Q(v_{n-1}(x - y))` with `v_0 = 1{x ≤ 0}`.
//!
//! Grids are truncated: beyond the right edge values are clamped to zero.
//! Convolutions are direct sums over the step support.

use serde::Serialize;
use thiserror::Error;

use crate::gw::{survival_probabilities, SurvivalTable};
use crate::laws::{ModelParams, OffspringLaw, StepLaw};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {iterations} sweeps (residual {residual:e})")]
    IterCapExceeded { iterations: u64, residual: f64 },
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SolverWarning {
    /// The tail at the right edge is not negligible, so the zero clamp biases
    /// values near the edge.
    GridTooSmall { x_max: i64, edge_value: f64 },
}

impl std::fmt::Display for SolverWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverWarning::GridTooSmall { x_max, edge_value } => write!(
                f,
                "GridTooSmall: u({x_max}) = {edge_value:e} exceeds 10*tol; right-clamp bias present"
            ),
        }
    }
}

/// Computes `out(x) = Σ_y a_y G(x - y)` on a grid `[lo, hi]`, where `G` is
/// given on the grid and clamped to constants on either side.
#[derive(Debug, Clone)]
struct Convolver {
    lo: i64,
    hi: i64,
    mode: ConvMode,
}

#[derive(Debug, Clone)]
enum ConvMode {
    /// Small support: pad `G` with its clamp values and sum over the support.
    Padded {
        taps: Vec<(usize, f64)>,
        max_step: i64,
        pad_len: usize,
    },
    /// Support wider than the grid: dense weights for in-grid lags plus
    /// tail masses for the clamped parts.
    Dense {
        /// `weights[d + span]` = `a_d` for `|d| ≤ span`.
        weights: Vec<f64>,
        span: i64,
        step: StepLaw,
    },
}

impl Convolver {
    fn new(step: &StepLaw, lo: i64, hi: i64) -> Self {
        let len = (hi - lo + 1) as usize;
        let (min_y, max_y) = (step.min_step(), step.max_step());
        let width = (max_y - min_y) as usize;
        let mode = if width <= 4 * len + 64 {
            let taps = step
                .support()
                .iter()
                .map(|&(y, a)| ((max_y - y) as usize, a))
                .collect();
            ConvMode::Padded {
                taps,
                max_step: max_y,
                pad_len: len + width,
            }
        } else {
            let span = hi - lo;
            let weights = (-span..=span).map(|d| step.prob(d)).collect();
            ConvMode::Dense {
                weights,
                span,
                step: step.clone(),
            }
        };
        Self { lo, hi, mode }
    }

    fn apply(&self, g: &[f64], left: f64, right: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
        let len = g.len();
        match &self.mode {
            ConvMode::Padded {
                taps,
                max_step,
                pad_len,
            } => {
                // padded[j] holds G(lo - max_step + j).
                scratch.clear();
                scratch.resize(*pad_len, right);
                let left_pad = *max_step as usize;
                let left_n = left_pad.min(*pad_len);
                scratch[..left_n].fill(left);
                scratch[left_pad..left_pad + len].copy_from_slice(g);
                // out(x) = Σ a_y G(x - y); x = lo + i, y = max_step - t  =>  index i + t.
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(t, a) in taps {
                        acc += a * scratch[i + t];
                    }
                    *o = acc;
                }
            }
            ConvMode::Dense {
                weights,
                span,
                step,
            } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let x = self.lo + i as i64;
                    // G(x - y) = left when x - y < lo, i.e. y > x - lo.
                    let mut acc = left * step.upper_tail(x - self.lo + 1)
                        + right * step.lower_tail(x - self.hi - 1);
                    // In-grid: z = lo + j, lag d = x - z = i - j.
                    for (j, &gz) in g.iter().enumerate() {
                        let d = i as i64 - j as i64;
                        acc += weights[(d + span) as usize] * gz;
                    }
                    *o = acc;
                }
            }
        }
    }
}

/// Grid representation of `u(x) = P{M ≥ x}` (or of a related tail).
#[derive(Debug, Clone, Serialize)]
pub struct TailFunction {
    /// `values[i] = u(i + 1)` for `1 ≤ x ≤ x_max`.
    values: Vec<f64>,
    x_max: i64,
    /// Value for every `x ≤ 0`.
    left_value: f64,
    residual: f64,
    iterations: u64,
    /// Largest decrease between successive iterates or increase in `x`
    /// observed during the iteration (rounding level when healthy).
    monotonicity_defect: f64,
    warnings: Vec<SolverWarning>,
}

impl TailFunction {
    /// Wraps explicit values for `x = 1..=values.len()`.
    pub fn from_values(values: Vec<f64>, left_value: f64) -> Self {
        Self {
            x_max: values.len() as i64,
            values,
            left_value,
            residual: f64::NAN,
            iterations: 0,
            monotonicity_defect: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn at(&self, x: i64) -> f64 {
        if x <= 0 {
            self.left_value
        } else if x > self.x_max {
            0.0
        } else {
            self.values[(x - 1) as usize]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn x_max(&self) -> i64 {
        self.x_max
    }

    pub fn left_value(&self) -> f64 {
        self.left_value
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn monotonicity_defect(&self) -> f64 {
        self.monotonicity_defect
    }

    pub fn warnings(&self) -> &[SolverWarning] {
        &self.warnings
    }
}

/// The map `(Tf)(x) = Σ_y a_y Q(f(x - y))` on `1..=x_max` with `f = 1` left
/// of the grid and `f = 0` right of it.
#[derive(Debug, Clone)]
pub struct TailOperator {
    offspring: OffspringLaw,
    conv: Convolver,
    x_max: i64,
}

impl TailOperator {
    pub fn new(params: &ModelParams, x_max: i64) -> Self {
        Self {
            offspring: params.offspring.clone(),
            conv: Convolver::new(&params.step, 1, x_max),
            x_max,
        }
    }

    pub fn x_max(&self) -> i64 {
        self.x_max
    }

    fn apply_into(&self, f: &[f64], g: &mut Vec<f64>, scratch: &mut Vec<f64>, out: &mut [f64]) {
        g.clear();
        g.extend(f.iter().map(|&s| self.offspring.q_unchecked(s)));
        let left = self.offspring.q_unchecked(1.0);
        self.conv.apply(g, left, 0.0, scratch, out);
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len() as i64, self.x_max);
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }

    /// The first `k` iterates from `u⁽⁰⁾ = 1{x ≤ 0}`; iterate `k` equals
    /// `P{max_{j≤k} M_j ≥ x}` on the truncated grid.
    pub fn iterates(&self, k: usize) -> Vec<Vec<f64>> {
        let mut cur = vec![0.0; self.x_max as usize];
        let mut out = Vec::with_capacity(k + 1);
        out.push(cur.clone());
        for _ in 0..k {
            cur = self.apply(&cur);
            out.push(cur.clone());
        }
        out
    }
}

/// Reproduce-first map `f ↦ Q(Σ_k a_k f(· - k))` with `f = 1 - p₀` left of
/// the grid: a position counts only once a particle has reproduced there,
/// so `P{M̃ ≥ x} = P{root has children}` for `x ≤ 0`.
#[derive(Debug, Clone)]
struct ReproduceFirstOperator {
    offspring: OffspringLaw,
    conv: Convolver,
}

impl ReproduceFirstOperator {
    fn apply_into(&self, f: &[f64], _g: &mut Vec<f64>, scratch: &mut Vec<f64>, out: &mut [f64]) {
        let left = 1.0 - self.offspring.p0();
        self.conv.apply(f, left, 0.0, scratch, out);
        for o in out.iter_mut() {
            *o = self.offspring.q_unchecked(*o);
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailSolverConfig {
    pub x_max: i64,
    pub tol: f64,
    /// Defaults to `50 x_max²`.
    pub iter_cap: Option<u64>,
}

impl TailSolverConfig {
    pub fn new(x_max: i64, tol: f64) -> Self {
        Self {
            x_max,
            tol,
            iter_cap: None,
        }
    }

    fn validate(&self) -> Result<u64, SolverError> {
        if self.x_max < 4 {
            return Err(SolverError::InvalidArgument(format!(
                "x_max = {} is below 4",
                self.x_max
            )));
        }
        if !(self.tol >= 1e-14) {
            return Err(SolverError::InvalidArgument(format!(
                "tol = {:e} is below 1e-14",
                self.tol
            )));
        }
        let x = self.x_max as u64;
        Ok(self.iter_cap.unwrap_or(50 * x * x))
    }
}

/// Monotone iteration from the zero function on `1..=x_max`, stopping when
/// the sup-norm change falls to `tol`.
fn fixed_point<F>(
    cfg: &TailSolverConfig,
    left_value: f64,
    sweep: F,
) -> Result<TailFunction, SolverError>
where
    F: Fn(&[f64], &mut Vec<f64>, &mut Vec<f64>, &mut [f64]),
{
    let cap = cfg.validate()?;
    let n = cfg.x_max as usize;
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    let (mut g, mut scratch) = (Vec::with_capacity(n), Vec::new());
    let mut defect = 0.0_f64;
    let mut iterations = 0u64;
    loop {
        sweep(&cur, &mut g, &mut scratch, &mut next);
        iterations += 1;
        let mut change = 0.0_f64;
        let mut prev = left_value;
        for (&new, &old) in next.iter().zip(&cur) {
            change = change.max((new - old).abs());
            defect = defect.max(old - new).max(new - prev);
            prev = new;
        }
        std::mem::swap(&mut cur, &mut next);
        if change <= cfg.tol {
            break;
        }
        if iterations >= cap {
            return Err(SolverError::IterCapExceeded {
                iterations,
                residual: change,
            });
        }
    }
    sweep(&cur, &mut g, &mut scratch, &mut next);
    let residual = next
        .iter()
        .zip(&cur)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    let edge = cur[n - 1];
    if edge > 10.0 * cfg.tol {
        warnings.push(SolverWarning::GridTooSmall {
            x_max: cfg.x_max,
            edge_value: edge,
        });
    }
    Ok(TailFunction {
        values: cur,
        x_max: cfg.x_max,
        left_value,
        residual,
        iterations,
        monotonicity_defect: defect,
        warnings,
    })
}

/// Solves `u = Tu` for the all-time tail `u(x) = P{M ≥ x}`.
pub fn solve_all_time_tail(
    params: &ModelParams,
    cfg: &TailSolverConfig,
) -> Result<TailFunction, SolverError> {
    cfg.validate()?;
    let op = TailOperator::new(params, cfg.x_max);
    fixed_point(cfg, 1.0, |f, g, s, out| op.apply_into(f, g, s, out))
}

/// `ũ = Q(u)` on `x ≥ 1`: the tail for the model in which particles
/// reproduce before they move.
pub fn alternate_order_tail(params: &ModelParams, tail: &TailFunction) -> TailFunction {
    let values = tail
        .values
        .iter()
        .map(|&u| params.offspring.q_unchecked(u))
        .collect();
    TailFunction {
        values,
        x_max: tail.x_max,
        left_value: 1.0 - params.offspring.p0(),
        residual: tail.residual,
        iterations: tail.iterations,
        monotonicity_defect: tail.monotonicity_defect,
        warnings: tail.warnings.clone(),
    }
}

/// Solves the reproduce-first equation `ũ = Q(Σ_k a_k ũ(· - k))` directly.
pub fn solve_reproduce_first_tail(
    params: &ModelParams,
    cfg: &TailSolverConfig,
) -> Result<TailFunction, SolverError> {
    cfg.validate()?;
    let op = ReproduceFirstOperator {
        offspring: params.offspring.clone(),
        conv: Convolver::new(&params.step, 1, cfg.x_max),
    };
    fixed_point(cfg, 1.0 - params.offspring.p0(), |f, g, s, out| {
        op.apply_into(f, g, s, out)
    })
}

/// `(x, x² u(x) β²)` for every grid point; tends to 1 under finite
/// `4+ε` step moments.
pub fn plateau_scan(tail: &TailFunction, beta: f64) -> Vec<(i64, f64)> {
    (1..=tail.x_max)
        .map(|x| (x, (x * x) as f64 * tail.at(x) * beta * beta))
        .collect()
}

/// `P{M^n ≥ ⌈√n x⌉}` for the process started from `n` particles at 0.
pub fn superposition_tail(
    tail: &TailFunction,
    n_particles: u64,
    x_scaled: f64,
) -> Result<f64, SolverError> {
    if n_particles == 0 {
        return Err(SolverError::InvalidArgument(
            "n_particles must be positive".into(),
        ));
    }
    let level = ((n_particles as f64).sqrt() * x_scaled).ceil();
    if level > tail.x_max as f64 {
        return Err(SolverError::GridTooSmall(format!(
            "level {level} exceeds x_max {}",
            tail.x_max
        )));
    }
    let u = tail.at(level as i64);
    Ok(-(n_particles as f64 * (-u).ln_1p()).exp_m1())
}

/// `v_n(x) = P{M_n ≥ x}` for `n = 0..=n_max` on `-x_max..=x_max`.
#[derive(Debug, Clone)]
pub struct SpaceTimeTail {
    x_max: i64,
    slices: Vec<Vec<f64>>,
    survival: SurvivalTable,
    offspring: OffspringLaw,
    step: StepLaw,
}

/// Largest allowed gap between the left edge of a slice and `q[n]`.
pub const EDGE_TOLERANCE: f64 = 1e-9;

impl SpaceTimeTail {
    pub fn at(&self, n: usize, x: i64) -> f64 {
        if x < -self.x_max {
            self.survival.get(n)
        } else if x > self.x_max {
            0.0
        } else {
            self.slices[n][(x + self.x_max) as usize]
        }
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        &self.slices[n]
    }

    pub fn n_max(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn x_max(&self) -> i64 {
        self.x_max
    }

    pub fn survival(&self) -> &SurvivalTable {
        &self.survival
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    pub fn step(&self) -> &StepLaw {
        &self.step
    }

    /// Whether both families were computed from the same laws on the same grid.
    pub fn compatible_with(&self, other: &SpaceTimeTail) -> bool {
        self.x_max == other.x_max && self.offspring == other.offspring && self.step == other.step
    }
}

pub fn evolve_space_time_tail(
    params: &ModelParams,
    n_max: usize,
    x_max: i64,
) -> Result<SpaceTimeTail, SolverError> {
    if x_max < 1 {
        return Err(SolverError::InvalidArgument(
            "x_max must be positive".into(),
        ));
    }
    let survival = survival_probabilities(&params.offspring, n_max);
    let conv = Convolver::new(&params.step, -x_max, x_max);
    let width = (2 * x_max + 1) as usize;
    let mut slices = Vec::with_capacity(n_max + 1);
    slices.push(
        (-x_max..=x_max)
            .map(|x| if x <= 0 { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>(),
    );
    let (mut g, mut scratch) = (Vec::with_capacity(width), Vec::new());
    for n in 1..=n_max {
        let prev: &Vec<f64> = &slices[n - 1];
        g.clear();
        g.extend(prev.iter().map(|&v| params.offspring.q_unchecked(v)));
        let mut next = vec![0.0; width];
        conv.apply(&g, survival.get(n), 0.0, &mut scratch, &mut next);
        let left_gap = (next[0] - survival.get(n)).abs();
        let right_edge = next[width - 1];
        if left_gap > EDGE_TOLERANCE || right_edge > EDGE_TOLERANCE {
            return Err(SolverError::GridTooSmall(format!(
                "generation {n}: |v_n(-{x_max}) - q[n]| = {left_gap:e}, v_n({x_max}) = {right_edge:e}"
            )));
        }
        slices.push(next);
    }
    Ok(SpaceTimeTail {
        x_max,
        slices,
        survival,
        offspring: params.offspring.clone(),
        step: params.step.clone(),
    })
}

/// Finite-`n` approximant of the conditional law of `M_n/√n` given survival
/// to generation `n`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalCdf {
    n: usize,
    /// `(k/√n, 1 - v_n(k)/q[n])` for every grid point `k`.
    grid: Vec<(f64, f64)>,
    /// `1 - v_n(k+1)/q[n] = P{M_n ≤ k | survival}`, aligned with `grid`.
    at_most: Vec<f64>,
}

impl ConditionalCdf {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[(f64, f64)] {
        &self.grid
    }

    /// `G_n(x) = 1 - v_n(⌈x√n⌉)/q[n]`.
    pub fn eval(&self, x: f64) -> f64 {
        let root = (self.n as f64).sqrt();
        let k = (x * root - 1e-9).ceil();
        let x_max = (self.grid.len() as i64 - 1) / 2;
        if k < -(x_max as f64) {
            0.0
        } else if k > x_max as f64 {
            1.0
        } else {
            self.grid[(k as i64 + x_max) as usize].1
        }
    }

    /// The same law as a right-continuous step function of `x = M_n/√n`.
    pub fn to_step_cdf(&self) -> crate::estimators::StepCdf {
        crate::estimators::StepCdf::new(
            self.grid
                .iter()
                .zip(&self.at_most)
                .map(|(&(x, _), &f)| (x, f))
                .collect(),
        )
    }
}

pub fn conditional_cdf(spacetime: &SpaceTimeTail, n: usize) -> Result<ConditionalCdf, SolverError> {
    if n > spacetime.n_max() {
        return Err(SolverError::InvalidArgument(format!(
            "slice {n} not available (n_max = {})",
            spacetime.n_max()
        )));
    }
    let q = spacetime.survival.get(n);
    if !(q > 0.0) {
        return Err(SolverError::InvalidArgument(format!("q[{n}] is zero")));
    }
    let root = (n as f64).sqrt();
    let x_max = spacetime.x_max;
    let grid = (-x_max..=x_max)
        .map(|k| {
            (
                k as f64 / root,
                (1.0 - spacetime.at(n, k) / q).clamp(0.0, 1.0),
            )
        })
        .collect();
    let at_most = (-x_max..=x_max)
        .map(|k| (1.0 - spacetime.at(n, k + 1) / q).clamp(0.0, 1.0))
        .collect();
    Ok(ConditionalCdf { n, grid, at_most })
}

/// Period `d` of the step lattice: every step is `≡ y₀ (mod d)`, so `M_n`
/// lives on `n y₀ + dℤ`.
pub fn step_period(step: &StepLaw) -> i64 {
    let y0 = step.support()[0].0;
    step.support()
        .iter()
        .fold(0i64, |g, &(y, _)| gcd(g, (y - y0).abs()))
        .max(1)
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sup distance between the conditional laws of `M_a/√a` and `M_b/√b` over
/// the scaled points that are atoms of both. Each CDF is taken at the middle
/// of its jump, `(P{M < k} + P{M ≤ k})/2`, which removes the leading lattice
/// discreteness (the jumps themselves are of order `d/√n`).
pub fn conditional_cdf_distance(
    spacetime: &SpaceTimeTail,
    a: usize,
    b: usize,
) -> Result<f64, SolverError> {
    let (ca, cb) = (
        conditional_cdf(spacetime, a)?,
        conditional_cdf(spacetime, b)?,
    );
    let d = step_period(&spacetime.step);
    let y0 = spacetime.step.support()[0].0;
    let on_support = |n: usize, k: i64| (k - n as i64 * y0).rem_euclid(d) == 0;
    let ratio = (b as f64 / a as f64).sqrt();
    let x_max = spacetime.x_max;
    let mut sup = 0.0_f64;
    let mut common = 0usize;
    for k in -x_max..=x_max {
        let kb = k as f64 * ratio;
        let kb_int = kb.round();
        if (kb - kb_int).abs() > 1e-9 || kb_int.abs() > x_max as f64 {
            continue;
        }
        let kb_int = kb_int as i64;
        if !on_support(a, k) || !on_support(b, kb_int) {
            continue;
        }
        let (ia, ib) = ((k + x_max) as usize, (kb_int + x_max) as usize);
        let fa = 0.5 * (ca.grid[ia].1 + ca.at_most[ia]);
        let fb = 0.5 * (cb.grid[ib].1 + cb.at_most[ib]);
        sup = sup.max((fa - fb).abs());
        common += 1;
    }
    if common == 0 {
        return Err(SolverError::InvalidArgument(format!(
            "generations {a} and {b} share no scaled support points"
        )));
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{OffspringLaw, StepLaw};
    use proptest::prelude::*;

    fn reference() -> ModelParams {
        ModelParams::reference()
    }

    /// Brute-force convolution with explicit clamps.
    fn naive_apply(params: &ModelParams, f: &[f64]) -> Vec<f64> {
        let n = f.len() as i64;
        let at = |z: i64| {
            if z <= 0 {
                1.0
            } else if z > n {
                0.0
            } else {
                f[(z - 1) as usize]
            }
        };
        (1..=n)
            .map(|x| {
                params
                    .step
                    .support()
                    .iter()
                    .map(|&(y, a)| a * params.offspring.q(at(x - y)).unwrap())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn operator_matches_naive_for_both_modes() {
        let laws = [
            StepLaw::rademacher(),
            StepLaw::new([(-3, 0.1), (-1, 0.425), (1, 0.325), (2, 0.1), (4, 0.05)]).unwrap(),
            StepLaw::heavy_tail(0.5, 1000).unwrap(),
        ];
        for step in laws {
            let params = ModelParams::new(OffspringLaw::poisson(), step);
            let op = TailOperator::new(&params, 40);
            let f: Vec<f64> = (1..=40).map(|x| 1.0 / (1.0 + x as f64)).collect();
            let fast = op.apply(&f);
            let slow = naive_apply(&params, &f);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-14, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn left_clamp_and_small_grid_solution() {
        let tail = solve_all_time_tail(&reference(), &TailSolverConfig::new(64, 1e-13)).unwrap();
        for x in -5..=0 {
            assert_eq!(tail.at(x), 1.0);
        }
        assert!(tail.residual() <= 1e-12);
        assert!(tail.monotonicity_defect() <= 1e-15);
        assert!(tail.values().windows(2).all(|w| w[1] <= w[0]));
        assert!(tail.values().iter().all(|&u| (0.0..=1.0).contains(&u)));
        assert!(!tail.warnings().is_empty());
    }

    #[test]
    fn first_value_regression_independent_of_grid() {
        // Frozen from two grid sizes at tol 1e-12 (see decisions log).
        let params = reference();
        let a = solve_all_time_tail(&params, &TailSolverConfig::new(128, 1e-12)).unwrap();
        let b = solve_all_time_tail(&params, &TailSolverConfig::new(256, 1e-12)).unwrap();
        assert!((a.at(1) - b.at(1)).abs() < 1e-9);
        assert!(
            (b.at(1) - U1_REFERENCE).abs() < 1e-9,
            "u(1) = {:.12}",
            b.at(1)
        );
    }

    /// `u(1)` for rademacher steps with double-or-nothing branching.
    const U1_REFERENCE: f64 = 0.343_540_467_82;

    #[test]
    fn iterates_increase_and_bound_space_time_tail() {
        let params = reference();
        let op = TailOperator::new(&params, 60);
        let its = op.iterates(50);
        let st = evolve_space_time_tail(&params, 50, 60).unwrap();
        let tail = solve_all_time_tail(&params, &TailSolverConfig::new(60, 1e-13)).unwrap();
        for k in 1..its.len() {
            for x in 1..=60i64 {
                let i = (x - 1) as usize;
                assert!(its[k][i] >= its[k - 1][i]);
                assert!(st.at(k, x) <= its[k][i] + 1e-15, "k={k} x={x}");
                assert!(its[k][i] <= tail.at(x) + 1e-15);
            }
        }
    }

    #[test]
    fn grid_doubling_changes_inner_values_little() {
        let params = reference();
        let a = solve_all_time_tail(&params, &TailSolverConfig::new(64, 1e-13)).unwrap();
        let b = solve_all_time_tail(&params, &TailSolverConfig::new(128, 1e-13)).unwrap();
        for x in 1..=16 {
            let rel = (b.at(x) - a.at(x)) / b.at(x);
            assert!(rel >= -1e-12, "doubling can only raise u");
            assert!(rel <= 1e-3, "x={x} rel={rel}");
        }
    }

    #[test]
    fn alternate_order_identity_small_grid() {
        let params = ModelParams::new(OffspringLaw::poisson(), StepLaw::lazy(0.2).unwrap());
        let cfg = TailSolverConfig::new(48, 1e-14);
        let u = solve_all_time_tail(&params, &cfg).unwrap();
        let alt = alternate_order_tail(&params, &u);
        let direct = solve_reproduce_first_tail(&params, &cfg).unwrap();
        for x in -2..=48 {
            assert!((alt.at(x) - direct.at(x)).abs() < 1e-10, "x={x}");
            assert!(alt.at(x) <= u.at(x));
        }
    }

    #[test]
    fn superposition_basics() {
        let tail = solve_all_time_tail(&reference(), &TailSolverConfig::new(64, 1e-12)).unwrap();
        for x in [1.0, 2.0, 5.0] {
            assert!(
                (superposition_tail(&tail, 1, x).unwrap() - tail.at(x.ceil() as i64)).abs() < 1e-15
            );
        }
        let mut last = 1.0;
        for i in 1..=30 {
            let p = superposition_tail(&tail, 25, i as f64 * 0.4).unwrap();
            assert!(p <= last);
            last = p;
        }
        assert!(matches!(
            superposition_tail(&tail, 100, 7.0),
            Err(SolverError::GridTooSmall(_))
        ));
    }

    #[test]
    fn plateau_of_exact_power_law_is_one() {
        let params = reference();
        let values: Vec<f64> = (1..=50).map(|x| params.c_const / (x * x) as f64).collect();
        let tail = TailFunction::from_values(values, 1.0);
        for (_, w) in plateau_scan(&tail, params.beta) {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn space_time_edges_and_initial_slice() {
        let params = reference();
        let st = evolve_space_time_tail(&params, 1000, 400).unwrap();
        for x in -400..=400 {
            assert_eq!(st.at(0, x), if x <= 0 { 1.0 } else { 0.0 });
        }
        for n in 0..=1000 {
            assert!((st.at(n, -400) - st.survival().get(n)).abs() <= 1e-9);
            let s = st.slice(n);
            assert!(s.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(matches!(
            evolve_space_time_tail(&params, 100, 5),
            Err(SolverError::GridTooSmall(_))
        ));
    }

    #[test]
    fn pure_branching_clamp_matches_survival() {
        // The far-left value is spatially blind: it must equal the pgf iteration.
        let params = ModelParams::new(OffspringLaw::geometric(), StepLaw::lazy(0.5).unwrap());
        let st = evolve_space_time_tail(&params, 200, 250).unwrap();
        let q = survival_probabilities(&params.offspring, 200);
        for n in 0..=200 {
            assert!((st.at(n, -250) - q.get(n)).abs() <= 1e-12);
        }
    }

    #[test]
    fn conditional_cdf_limits() {
        let params = reference();
        let st = evolve_space_time_tail(&params, 400, 200).unwrap();
        let g = conditional_cdf(&st, 400).unwrap();
        assert!(g.grid().first().unwrap().1 < 1e-6);
        assert!((g.grid().last().unwrap().1 - 1.0).abs() < 1e-6);
        assert!(g.grid().windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(g.eval(-100.0), 0.0);
        assert_eq!(g.eval(100.0), 1.0);
        let k = 7i64;
        let x = k as f64 / 20.0;
        assert!((g.eval(x) - (1.0 - st.at(400, k) / st.survival().get(400))).abs() < 1e-15);
    }

    #[test]
    fn periods_and_common_grid_distance() {
        assert_eq!(step_period(&StepLaw::rademacher()), 2);
        assert_eq!(step_period(&StepLaw::lazy(0.3).unwrap()), 1);
        let st = evolve_space_time_tail(&reference(), 400, 200).unwrap();
        assert_eq!(conditional_cdf_distance(&st, 100, 100).unwrap(), 0.0);
        let d = conditional_cdf_distance(&st, 100, 400).unwrap();
        assert!(d > 0.0 && d < 0.1, "{d}");
    }

    proptest! {
        #[test]
        fn operator_preserves_unit_range_and_monotonicity(
            mut raw in proptest::collection::vec(0.0f64..=1.0, 30)
        ) {
            raw.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let params = ModelParams::new(
                OffspringLaw::geometric(),
                StepLaw::new([(-2, 0.25), (-1, 0.25), (1, 0.25), (2, 0.25)]).unwrap(),
            );
            let op = TailOperator::new(&params, 30);
            let out = op.apply(&raw);
            prop_assert!(out.iter().all(|&v| (0.0..=1.0 + 1e-15).contains(&v)));
            prop_assert!(out.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        }
    }
}
