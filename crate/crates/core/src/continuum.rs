//! Scaling limits: the profile `φ` solving `φ'' = (σ²/η²) φ²`, `φ(0) = 1`,
//! `φ(∞) = 0`, and the semilinear heat equation
//!
//! ```text
//! φ_t = (η²/2) φ_xx − (σ²/2) φ²
//! ```
//!
//! obtained from `v_k(x)` by `φ = n v`, `t = k/n`, `x = pos/√n`.

use serde::Serialize;
use thiserror::Error;

use crate::lattice::SpaceTimeTail;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuumError {
    #[error("negative argument {0}")]
    NegativeArgument(f64),
    #[error("bisection failed: {0}")]
    BisectionFailure(String),
    #[error("dt = {dt:e} exceeds the stability bound {bound:e}")]
    StabilityViolation { dt: f64, bound: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `β = σ/(√6 η)`.
pub fn beta(sigma: f64, eta: f64) -> f64 {
    sigma / (6f64.sqrt() * eta)
}

/// `φ(y) = (βy + 1)⁻²`.
pub fn phi_closed_form(y: f64, sigma: f64, eta: f64) -> Result<f64, ContinuumError> {
    if y < 0.0 {
        return Err(ContinuumError::NegativeArgument(y));
    }
    let b = beta(sigma, eta);
    Ok((b * y + 1.0).powi(-2))
}

/// `φ''(y) = 6β²(βy + 1)⁻⁴`.
pub fn phi_closed_form_second_derivative(y: f64, sigma: f64, eta: f64) -> f64 {
    let b = beta(sigma, eta);
    6.0 * b * b * (b * y + 1.0).powi(-4)
}

/// Adaptive Dormand–Prince 5(4) for the autonomous system `(φ, φ')`.
struct Rk45 {
    k: f64,
    rtol: f64,
    atol: f64,
}

type State = [f64; 2];

impl Rk45 {
    fn rhs(&self, s: State) -> State {
        [s[1], self.k * s[0] * s[0]]
    }

    /// One trial step; returns the 5th-order state and an error estimate.
    fn trial(&self, s: State, h: f64) -> (State, f64) {
        const A21: f64 = 1.0 / 5.0;
        const A31: f64 = 3.0 / 40.0;
        const A32: f64 = 9.0 / 40.0;
        const A41: f64 = 44.0 / 45.0;
        const A42: f64 = -56.0 / 15.0;
        const A43: f64 = 32.0 / 9.0;
        const A51: f64 = 19372.0 / 6561.0;
        const A52: f64 = -25360.0 / 2187.0;
        const A53: f64 = 64448.0 / 6561.0;
        const A54: f64 = -212.0 / 729.0;
        const A61: f64 = 9017.0 / 3168.0;
        const A62: f64 = -355.0 / 33.0;
        const A63: f64 = 46732.0 / 5247.0;
        const A64: f64 = 49.0 / 176.0;
        const A65: f64 = -5103.0 / 18656.0;
        const B1: f64 = 35.0 / 384.0;
        const B3: f64 = 500.0 / 1113.0;
        const B4: f64 = 125.0 / 192.0;
        const B5: f64 = -2187.0 / 6784.0;
        const B6: f64 = 11.0 / 84.0;
        const E1: f64 = 71.0 / 57600.0;
        const E3: f64 = -71.0 / 16695.0;
        const E4: f64 = 71.0 / 1920.0;
        const E5: f64 = -17253.0 / 339200.0;
        const E6: f64 = 22.0 / 525.0;
        const E7: f64 = -1.0 / 40.0;

        let add = |s: State, terms: &[(f64, State)]| -> State {
            let mut out = s;
            for &(c, k) in terms {
                out[0] += h * c * k[0];
                out[1] += h * c * k[1];
            }
            out
        };
        let k1 = self.rhs(s);
        let k2 = self.rhs(add(s, &[(A21, k1)]));
        let k3 = self.rhs(add(s, &[(A31, k1), (A32, k2)]));
        let k4 = self.rhs(add(s, &[(A41, k1), (A42, k2), (A43, k3)]));
        let k5 = self.rhs(add(s, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]));
        let k6 = self.rhs(add(
            s,
            &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)],
        ));
        let next = add(s, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
        let k7 = self.rhs(next);
        let mut err = 0.0_f64;
        for i in 0..2 {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = self.atol + self.rtol * s[i].abs().max(next[i].abs());
            err = err.max((e / scale).abs());
        }
        (next, err)
    }

    /// Integrates from `y0` to `y1`, stopping early when `stop` holds.
    /// Returns the final position, state and whether `stop` fired.
    fn integrate(
        &self,
        mut y: f64,
        y1: f64,
        mut s: State,
        h: &mut f64,
        stop: impl Fn(State) -> bool,
    ) -> (f64, State, bool) {
        while y < y1 {
            let step = h.min(y1 - y);
            let (next, err) = self.trial(s, step);
            if !next[0].is_finite() || !next[1].is_finite() {
                *h = step / 4.0;
                if *h < 1e-300 {
                    return (y, s, true);
                }
                continue;
            }
            if err <= 1.0 {
                y += step;
                s = next;
                if stop(s) {
                    return (y, s, true);
                }
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            *h = step * factor;
        }
        (y, s, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shot {
    /// φ went negative: the initial slope is too steep.
    TooSteep,
    /// φ' turned positive: the solution grows and blows up.
    TooShallow,
    Undecided,
}

/// Profile `φ` on a uniform grid of `[0, y_max]` with slopes for Hermite
/// interpolation.
#[derive(Debug, Clone, Serialize)]
pub struct PhiProfile {
    grid: Vec<(f64, f64)>,
    slopes: Vec<f64>,
    sigma: f64,
    eta: f64,
    initial_slope: f64,
}

impl PhiProfile {
    pub fn grid(&self) -> &[(f64, f64)] {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Recovered `φ'(0)`.
    pub fn initial_slope(&self) -> f64 {
        self.initial_slope
    }

    pub fn y_max(&self) -> f64 {
        self.grid.last().map_or(0.0, |p| p.0)
    }

    /// Cubic Hermite interpolation on the grid; `φ(y_max)(y_max/y)²` beyond.
    pub fn eval(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        let y_max = self.y_max();
        if y >= y_max {
            let last = self.grid.last().unwrap().1;
            return last * (y_max / y).powi(2);
        }
        let h = self.grid[1].0 - self.grid[0].0;
        let i = ((y / h).floor() as usize).min(self.grid.len() - 2);
        let (y0, f0) = self.grid[i];
        let (f1, d0, d1) = (self.grid[i + 1].1, self.slopes[i], self.slopes[i + 1]);
        let t = (y - y0) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * h * d1
    }
}

/// Solves `φ'' = (σ²/η²) φ²`, `φ(0) = 1`, `φ → 0` by bisection on `φ'(0)`.
/// `tol` is the local relative error target of the integrator.
pub fn solve_phi_shooting(
    sigma: f64,
    eta: f64,
    y_max: f64,
    tol: f64,
) -> Result<PhiProfile, ContinuumError> {
    if !(sigma > 0.0 && eta > 0.0) {
        return Err(ContinuumError::InvalidArgument(
            "sigma and eta must be positive".into(),
        ));
    }
    let scale = 1.0 / beta(sigma, eta);
    if !(y_max >= 10.0 * scale) {
        return Err(ContinuumError::InvalidArgument(format!(
            "y_max = {y_max} is below 10·√6η/σ = {}",
            10.0 * scale
        )));
    }
    if !(tol > 0.0) {
        return Err(ContinuumError::InvalidArgument(
            "tol must be positive".into(),
        ));
    }
    let rk = Rk45 {
        k: (sigma / eta).powi(2),
        rtol: tol,
        atol: tol * 1e-3,
    };
    let horizon = 1e4 * scale;
    let classify = |slope: f64| -> Shot {
        let mut h = 1e-3 * scale;
        let (_, s, stopped) = rk.integrate(0.0, horizon, [1.0, slope], &mut h, |s| {
            s[0] < 0.0 || s[1] > 0.0
        });
        if !stopped {
            Shot::Undecided
        } else if s[0] < 0.0 {
            Shot::TooSteep
        } else {
            Shot::TooShallow
        }
    };

    // φ'(0) = 0 gives immediate growth; widen downward until φ crosses 0.
    let mut shallow = 0.0;
    if classify(shallow) != Shot::TooShallow {
        return Err(ContinuumError::BisectionFailure(
            "zero slope does not blow up".into(),
        ));
    }
    let mut steep = -1.0 / scale;
    let mut widen = 0;
    while classify(steep) != Shot::TooSteep {
        shallow = steep;
        steep *= 2.0;
        widen += 1;
        if widen > 200 {
            return Err(ContinuumError::BisectionFailure("no steep bracket".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (shallow + steep);
        if mid == shallow || mid == steep {
            break;
        }
        match classify(mid) {
            Shot::TooSteep => steep = mid,
            Shot::TooShallow => shallow = mid,
            Shot::Undecided => {
                shallow = mid;
                steep = mid;
                break;
            }
        }
    }
    let slope = 0.5 * (shallow + steep);
    if !slope.is_finite() {
        return Err(ContinuumError::BisectionFailure("non-finite slope".into()));
    }

    let points = ((y_max / scale) * 200.0).ceil().max(2000.0) as usize;
    let dy = y_max / points as f64;
    let mut grid = Vec::with_capacity(points + 1);
    let mut slopes = Vec::with_capacity(points + 1);
    let mut state = [1.0, slope];
    let mut h = 1e-3 * scale;
    grid.push((0.0, 1.0));
    slopes.push(slope);
    for i in 1..=points {
        let (y0, y1) = ((i - 1) as f64 * dy, i as f64 * dy);
        let (_, s, _) = rk.integrate(y0, y1, state, &mut h, |_| false);
        state = s;
        grid.push((y1, s[0]));
        slopes.push(s[1]);
    }
    Ok(PhiProfile {
        grid,
        slopes,
        sigma,
        eta,
        initial_slope: slope,
    })
}

/// Diffusion and reaction coefficients of `φ_t = D φ_xx − R φ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeCoefficients {
    pub diffusion: f64,
    pub reaction: f64,
}

impl PdeCoefficients {
    /// `D = η²/2`, `R = σ²/2`.
    pub fn from_sigma_eta(sigma: f64, eta: f64) -> Self {
        Self {
            diffusion: eta * eta / 2.0,
            reaction: sigma * sigma / 2.0,
        }
    }

    /// Largest stable time step for the explicit scheme, `dx²/(2D)`.
    pub fn stability_bound(&self, dx: f64) -> f64 {
        dx * dx / (2.0 * self.diffusion)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeState {
    pub t: f64,
    pub x0: f64,
    pub dx: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl PdeState {
    /// Uses the default time step of half the stability bound.
    pub fn new(t: f64, x0: f64, dx: f64, values: Vec<f64>, coeffs: &PdeCoefficients) -> Self {
        Self {
            t,
            x0,
            dx,
            dt: 0.5 * coeffs.stability_bound(dx),
            values,
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
}

fn pde_rhs(v: &[f64], dx: f64, c: &PdeCoefficients, out: &mut [f64]) {
    let n = v.len();
    let lam = c.diffusion / (dx * dx);
    for i in 0..n {
        // Constant extension at both ends.
        let left = v[i.saturating_sub(1)];
        let right = v[(i + 1).min(n - 1)];
        out[i] = lam * (left - 2.0 * v[i] + right) - c.reaction * v[i] * v[i];
    }
}

/// Method of lines with second-order central differences in `x` and the
/// three-stage strong-stability-preserving Runge–Kutta scheme in `t`.
pub fn pde_evolve(
    initial: &PdeState,
    t_final: f64,
    coeffs: &PdeCoefficients,
) -> Result<PdeState, ContinuumError> {
    if !(t_final > initial.t) {
        return Err(ContinuumError::InvalidArgument(format!(
            "t_final {t_final} must exceed t {}",
            initial.t
        )));
    }
    if initial.values.len() < 3 {
        return Err(ContinuumError::InvalidArgument(
            "grid needs at least 3 points".into(),
        ));
    }
    let bound = coeffs.stability_bound(initial.dx);
    if !(initial.dt > 0.0 && initial.dt <= bound) {
        return Err(ContinuumError::StabilityViolation {
            dt: initial.dt,
            bound,
        });
    }
    let n = initial.values.len();
    let mut u = initial.values.clone();
    let (mut k, mut u1, mut u2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let steps = ((t_final - initial.t) / initial.dt).ceil() as u64;
    let dt = (t_final - initial.t) / steps as f64;
    for _ in 0..steps {
        pde_rhs(&u, initial.dx, coeffs, &mut k);
        for i in 0..n {
            u1[i] = u[i] + dt * k[i];
        }
        pde_rhs(&u1, initial.dx, coeffs, &mut k);
        for i in 0..n {
            u2[i] = 0.75 * u[i] + 0.25 * (u1[i] + dt * k[i]);
        }
        pde_rhs(&u2, initial.dx, coeffs, &mut k);
        for i in 0..n {
            u[i] = u[i] / 3.0 + 2.0 / 3.0 * (u2[i] + dt * k[i]);
        }
    }
    Ok(PdeState {
        t: t_final,
        x0: initial.x0,
        dx: initial.dx,
        dt: initial.dt,
        values: u,
    })
}

/// Solution of the flat equation `c' = −R c²` at elapsed time `t`.
pub fn flat_solution(c0: f64, t: f64, coeffs: &PdeCoefficients) -> f64 {
    1.0 / (1.0 / c0 + coeffs.reaction * t)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossScaleRow {
    pub x: f64,
    pub recursion: f64,
    pub pde: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossScaleReport {
    pub n: usize,
    pub sup_abs: f64,
    /// `sup |diff| / sup |recursion|`.
    pub sup_rel: f64,
    pub rows: Vec<CrossScaleRow>,
}

/// Evolves `Φ(1, k/√n) = n v_n(k)` from `start` to `t = 2` and compares with
/// `n v_{2n}(k)` from `end`.
pub fn cross_scale_compare(
    start: &SpaceTimeTail,
    end: &SpaceTimeTail,
    n: usize,
    coeffs: &PdeCoefficients,
) -> Result<CrossScaleReport, ContinuumError> {
    if !start.compatible_with(end) {
        return Err(ContinuumError::GridMismatch(
            "slices come from different laws or grids".into(),
        ));
    }
    if n == 0 || n > start.n_max() || 2 * n > end.n_max() {
        return Err(ContinuumError::InvalidArgument(format!(
            "slices {n} and {} not available",
            2 * n
        )));
    }
    let root = (n as f64).sqrt();
    let scale = n as f64;
    let x_max = start.x_max();
    let values: Vec<f64> = start.slice(n).iter().map(|v| scale * v).collect();
    let init = PdeState::new(1.0, -(x_max as f64) / root, 1.0 / root, values, coeffs);
    let evolved = pde_evolve(&init, 2.0, coeffs)?;
    let mut rows = Vec::with_capacity(evolved.values.len());
    let (mut sup_abs, mut sup_ref) = (0.0_f64, 0.0_f64);
    for (i, &pde) in evolved.values.iter().enumerate() {
        let recursion = scale * end.slice(2 * n)[i];
        let diff = pde - recursion;
        sup_abs = sup_abs.max(diff.abs());
        sup_ref = sup_ref.max(recursion.abs());
        rows.push(CrossScaleRow {
            x: evolved.x(i),
            recursion,
            pde,
            diff,
        });
    }
    Ok(CrossScaleReport {
        n,
        sup_abs,
        sup_rel: sup_abs / sup_ref,
        rows,
    })
}

/// [`cross_scale_compare`] with both slices from one family.
pub fn cross_scale_check(
    spacetime: &SpaceTimeTail,
    n: usize,
    coeffs: &PdeCoefficients,
) -> Result<CrossScaleReport, ContinuumError> {
    cross_scale_compare(spacetime, spacetime, n, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::evolve_space_time_tail;
    use crate::laws::{ModelParams, OffspringLaw, StepLaw};

    #[test]
    fn closed_form_values() {
        assert_eq!(phi_closed_form(0.0, 1.3, 0.7).unwrap(), 1.0);
        let y = 6f64.sqrt() * 0.7 / 1.3;
        assert!((phi_closed_form(y, 1.3, 0.7).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            phi_closed_form(-1.0, 1.0, 1.0),
            Err(ContinuumError::NegativeArgument(_))
        ));
    }

    #[test]
    fn closed_form_solves_ode() {
        let (s, e) = (1.0, 1.0);
        let h = 1e-3;
        let f = |y: f64| phi_closed_form(y, s, e).unwrap();
        let fd = (f(2.0 + h) - 2.0 * f(2.0) + f(2.0 - h)) / (h * h);
        assert!((fd - s * s * f(2.0).powi(2) / (e * e)).abs() < 1e-6);
        for (s, e) in [(1.0, 1.0), (2.0, 0.5), (0.3, 1.7)] {
            for i in 0..1000 {
                let y = i as f64 * 0.02;
                let phi = phi_closed_form(y, s, e).unwrap();
                let res = phi_closed_form_second_derivative(y, s, e) - (s / e).powi(2) * phi * phi;
                assert!(res.abs() <= 1e-12 * (1.0 + (s / e).powi(2)));
            }
        }
    }

    #[test]
    fn shooting_recovers_closed_form() {
        for (s, e) in [(1.0, 1.0), (2.0f64.sqrt(), 0.8)] {
            let b = beta(s, e);
            let prof = solve_phi_shooting(s, e, 12.0 / b, 1e-12).unwrap();
            assert!(
                (prof.initial_slope() + 2.0 * b).abs() < 1e-8,
                "slope {}",
                prof.initial_slope()
            );
            let mut worst = 0.0_f64;
            for &(y, v) in prof.grid().iter().filter(|p| p.0 <= 10.0) {
                worst = worst.max((v - phi_closed_form(y, s, e).unwrap()).abs());
            }
            assert!(worst <= 1e-6, "sup error {worst}");
            for i in 0..997 {
                let y = i as f64 * 0.01 + 0.005;
                assert!((prof.eval(y) - phi_closed_form(y, s, e).unwrap()).abs() < 1e-6);
            }
            // Convex, decreasing, inside (0, 1].
            let g = prof.grid();
            assert!(g.windows(2).all(|w| w[1].1 < w[0].1 && w[1].1 > 0.0));
            assert!(g.windows(3).all(|w| w[2].1 - 2.0 * w[1].1 + w[0].1 > 0.0));
        }
    }

    #[test]
    fn shooting_rejects_short_domain() {
        assert!(solve_phi_shooting(1.0, 1.0, 5.0, 1e-10).is_err());
    }

    #[test]
    fn profile_tail_extrapolation() {
        let prof = solve_phi_shooting(1.0, 1.0, 25.0, 1e-12).unwrap();
        let y = 50.0;
        let want = phi_closed_form(y, 1.0, 1.0).unwrap();
        assert!((prof.eval(y) - want).abs() / want < 0.1);
        assert_eq!(prof.eval(-1.0), 1.0);
    }

    #[test]
    fn flat_data_follows_riccati() {
        let c = PdeCoefficients::from_sigma_eta(1.0, 1.0);
        for c0 in [2.0, 0.5] {
            let init = PdeState::new(1.0, -1.0, 0.05, vec![c0; 41], &c);
            let out = pde_evolve(&init, 2.0, &c).unwrap();
            let want = flat_solution(c0, 1.0, &c);
            assert!(out.values.iter().all(|v| (v - want).abs() < 1e-6));
        }
        // 2/σ² at t = 1 becomes 2/(σ² t).
        let c = PdeCoefficients::from_sigma_eta(1.5, 0.7);
        let init = PdeState::new(1.0, 0.0, 0.1, vec![2.0 / 2.25; 11], &c);
        let out = pde_evolve(&init, 3.0, &c).unwrap();
        assert!(out
            .values
            .iter()
            .all(|v| (v - 2.0 / (2.25 * 3.0)).abs() < 1e-6));
    }

    #[test]
    fn stability_guard() {
        let c = PdeCoefficients::from_sigma_eta(1.0, 1.0);
        let mut init = PdeState::new(1.0, 0.0, 0.1, vec![1.0; 10], &c);
        init.dt = 0.011;
        assert!(matches!(
            pde_evolve(&init, 2.0, &c),
            Err(ContinuumError::StabilityViolation { .. })
        ));
    }

    #[test]
    fn monotone_data_stays_monotone_and_under_envelope() {
        let c = PdeCoefficients::from_sigma_eta(1.0, 1.0);
        let values: Vec<f64> = (0..201)
            .map(|i| 2.0 / (1.0 + (0.1 * (i as f64 - 100.0)).exp()))
            .collect();
        let init = PdeState::new(1.0, -10.0, 0.1, values, &c);
        for t in [1.5, 2.0, 4.0] {
            let out = pde_evolve(&init, t, &c).unwrap();
            assert!(out.values.windows(2).all(|w| w[1] <= w[0] + 1e-14));
            let env = flat_solution(2.0, t - 1.0, &c);
            assert!(out.values.iter().all(|&v| v >= 0.0 && v <= env + 1e-12));
        }
    }

    #[test]
    fn cross_scale_mismatch_and_small_case() {
        let a = evolve_space_time_tail(&ModelParams::reference(), 100, 150).unwrap();
        let other = ModelParams::new(OffspringLaw::poisson(), StepLaw::rademacher());
        let b = evolve_space_time_tail(&other, 100, 150).unwrap();
        let c = PdeCoefficients::from_sigma_eta(1.0, 1.0);
        assert!(matches!(
            cross_scale_compare(&a, &b, 50, &c),
            Err(ContinuumError::GridMismatch(_))
        ));
        let rep = cross_scale_check(&a, 50, &c).unwrap();
        assert!(rep.sup_rel < 0.2, "{}", rep.sup_rel);
        assert!(cross_scale_check(&a, 60, &c).is_err());
    }
}
