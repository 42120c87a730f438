//! Galton-Watson survival probabilities.
//!
//! `q[n] = P{N_n ≥ 1} = P{ζ > n}` where ζ is the first generation without
//! particles. The recursion `q[n+1] = 1 - f(1 - q[n]) = q[n] - h(q[n])` is
//! run through `h`, which is accurate for small `q`.

use rand::Rng;
use serde::Serialize;

use crate::laws::OffspringLaw;

#[derive(Debug, Clone, Serialize)]
pub struct SurvivalTable {
    q: Vec<f64>,
    variance: f64,
}

impl SurvivalTable {
    /// Wraps precomputed values; `q[0]` should be 1.
    pub fn from_values(q: Vec<f64>, variance: f64) -> Self {
        Self { q, variance }
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn get(&self, n: usize) -> f64 {
        self.q[n]
    }

    pub fn n_max(&self) -> usize {
        self.q.len() - 1
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

pub fn survival_probabilities(law: &OffspringLaw, n_max: usize) -> SurvivalTable {
    let mut q = Vec::with_capacity(n_max + 1);
    let mut cur = 1.0_f64;
    q.push(cur);
    for _ in 0..n_max {
        cur -= law.h_unchecked(cur);
        q.push(cur);
    }
    SurvivalTable {
        q,
        variance: law.variance(),
    }
}

/// `n q[n] σ²/2`, which tends to 1.
pub fn kolmogorov_diagnostic(table: &SurvivalTable) -> Vec<f64> {
    table
        .q
        .iter()
        .enumerate()
        .map(|(n, &q)| n as f64 * q * table.variance / 2.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lifetime {
    /// First generation with no particles.
    Extinct(u64),
    /// Still alive at the generation cap.
    Censored(u64),
}

impl Lifetime {
    /// Whether the process is known to be alive at generation `n`.
    pub fn survives(&self, n: u64) -> bool {
        match *self {
            Lifetime::Extinct(z) => z > n,
            Lifetime::Censored(cap) => cap >= n,
        }
    }
}

/// Samples ζ for the bare branching process.
pub fn sample_extinction_time<R: Rng + ?Sized>(
    law: &OffspringLaw,
    gen_cap: u64,
    rng: &mut R,
) -> Lifetime {
    let mut population = 1u64;
    for generation in 1..=gen_cap {
        population = law.sample_total(population, rng);
        if population == 0 {
            return Lifetime::Extinct(generation);
        }
    }
    Lifetime::Censored(gen_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::RngCore;

    /// A source that always returns zero bits.
    struct ZeroRng;

    impl RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            dest.fill(0)
        }
    }

    #[test]
    fn first_steps() {
        let don = OffspringLaw::double_or_nothing();
        let t = survival_probabilities(&don, 2);
        assert_eq!(t.get(0), 1.0);
        assert_eq!(t.get(1), 0.5);
        // f(s) = (1 + s²)/2: 1 - f(f(0)) = 1 - f(1/2) = 3/8.
        assert!((t.get(2) - 0.375).abs() < 1e-16);
    }

    #[test]
    fn monotone_and_positive() {
        for law in [
            OffspringLaw::double_or_nothing(),
            OffspringLaw::poisson(),
            OffspringLaw::geometric(),
        ] {
            let t = survival_probabilities(&law, 10_000);
            assert!(t.values().windows(2).all(|w| w[1] < w[0]));
            assert!(t.values().iter().all(|&q| q > 0.0));
            assert!((t.get(1) - (1.0 - law.p0())).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_pgf_iteration_for_moderate_n() {
        // Independent route: iterate the extinction probability t -> f(t).
        let law = OffspringLaw::poisson();
        let table = survival_probabilities(&law, 200);
        let mut t = 0.0;
        for n in 1..=200 {
            t = law.pgf(t);
            assert!((table.get(n) - (1.0 - t)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn kolmogorov_limits() {
        let don = kolmogorov_diagnostic(&survival_probabilities(
            &OffspringLaw::double_or_nothing(),
            100_000,
        ));
        assert!((0.98..=1.02).contains(&don[1000]));
        assert!((don[100_000] - 1.0).abs() <= 0.01);
        let poi = kolmogorov_diagnostic(&survival_probabilities(&OffspringLaw::poisson(), 100_000));
        assert!((0.99..=1.01).contains(&poi[10_000]));
        assert!((poi[100_000] - 1.0).abs() <= 0.01);
    }

    #[test]
    fn fake_table_diverges() {
        let fake = SurvivalTable::from_values(vec![1.0; 6], 2.0);
        assert_eq!(
            kolmogorov_diagnostic(&fake),
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        );
    }

    #[test]
    fn extinction_time_edge_cases() {
        let don = OffspringLaw::double_or_nothing();
        // A zero random source draws the first alias column, offspring 0.
        let mut zero = ZeroRng;
        assert_eq!(
            sample_extinction_time(&don, 10, &mut zero),
            Lifetime::Extinct(1)
        );
        let mut rng = RngStream::new(9, 0);
        let geom = OffspringLaw::geometric();
        let mut censored = 0;
        for _ in 0..2000 {
            if let Lifetime::Censored(c) = sample_extinction_time(&geom, 10, &mut rng) {
                assert_eq!(c, 10);
                censored += 1;
            }
        }
        assert!(censored > 0);
    }

    #[test]
    fn empirical_survival_matches_table() {
        let don = OffspringLaw::double_or_nothing();
        let q100 = survival_probabilities(&don, 100).get(100);
        let n = 100_000u64;
        let mut alive = 0u64;
        for i in 0..n {
            let mut rng = RngStream::new(77, i);
            if sample_extinction_time(&don, 100, &mut rng).survives(100) {
                alive += 1;
            }
        }
        let p = alive as f64 / n as f64;
        let se = (q100 * (1.0 - q100) / n as f64).sqrt();
        assert!((p - q100).abs() < 4.0 * se, "{p} vs {q100}");
    }
}
