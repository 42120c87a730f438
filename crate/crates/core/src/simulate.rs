//! Monte Carlo simulation of the branching random walk.
//!
//! Each generation every particle first jumps and then reproduces at its new
//! site; generation `n` consists of the children, so a particle that jumps and
//! leaves no offspring never contributes to `M_n`. The frontier is kept as a
//! position to count map and updated site by site: the `c` particles at a site
//! are split over the step support by a multinomial draw, and the total
//! offspring of the particles landing on a site is drawn in one batch. Both
//! batches have the exact joint law of `c` independent (step, offspring) pairs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::laws::ModelParams;
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("population overflow at generation {generation}")]
    ParticleOverflow { generation: u64 },
    #[error("no accepted sample after {attempts} attempts")]
    AttemptBudgetExceeded { attempts: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Frontier {
    counts: BTreeMap<i64, u64>,
}

impl Frontier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_particles(position: i64, count: u64) -> Self {
        let mut f = Self::new();
        f.add(position, count);
        f
    }

    pub fn add(&mut self, position: i64, count: u64) {
        if count > 0 {
            *self.counts.entry(position).or_insert(0) += count;
        }
    }

    pub fn counts(&self) -> &BTreeMap<i64, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_position(&self) -> Option<i64> {
        self.counts.keys().next_back().copied()
    }

    pub fn min_position(&self) -> Option<i64> {
        self.counts.keys().next().copied()
    }

    /// One generation: jump, then reproduce at the new site.
    pub fn advance(&self, params: &ModelParams, rng: &mut RngStream) -> Option<Frontier> {
        let mut landed: BTreeMap<i64, u64> = BTreeMap::new();
        for (&x, &c) in &self.counts {
            params.step.scatter(c, rng, |y, n| {
                *landed.entry(x + y).or_insert(0) += n;
            });
        }
        let mut next = Frontier::new();
        let mut total = 0u64;
        for (x, n) in landed {
            let children = params.offspring.sample_total(n, rng);
            total = total.checked_add(children)?;
            if total > i64::MAX as u64 {
                return None;
            }
            next.add(x, children);
        }
        Some(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fate {
    /// First generation with no particles.
    Extinct(u64),
    /// Still alive at the generation cap.
    Censored(u64),
    /// Stopped at this generation because the running maximum reached the
    /// requested stop level; later generations were not simulated.
    Halted(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    /// `M = max_n M_n`, at least 0 because `M_0 = 0`.
    pub max_overall: i64,
    /// Leftmost position ever occupied, at most 0.
    pub min_overall: i64,
    pub fate: Fate,
    /// `M_n` per generation, `None` once extinct.
    pub gen_maxima: Option<Vec<Option<i64>>>,
    pub gen_counts: Option<Vec<u64>>,
    /// Maximum position in the last simulated generation.
    pub final_max: Option<i64>,
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RunRecord {
    /// Whether the run shows `M ≥ x`; exact for `x` up to the stop level.
    pub fn reached(&self, x: i64) -> bool {
        self.max_overall >= x
    }

    /// Whether generation `n` is known to be non-empty.
    pub fn survived(&self, n: u64) -> bool {
        match self.fate {
            Fate::Extinct(z) => z > n,
            Fate::Censored(g) | Fate::Halted(g) => g >= n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub gen_cap: u64,
    pub record_trajectory: bool,
    /// Stop as soon as `M` reaches this level.
    pub stop_level: Option<i64>,
}

impl SimConfig {
    pub fn new(gen_cap: u64) -> Self {
        Self {
            gen_cap,
            record_trajectory: false,
            stop_level: None,
        }
    }
}

/// Runs the process from the given initial frontier.
pub fn simulate_from(
    params: &ModelParams,
    start: Frontier,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> Result<RunRecord, SimError> {
    if cfg.gen_cap < 1 {
        return Err(SimError::InvalidArgument(
            "gen_cap must be at least 1".into(),
        ));
    }
    if start.is_empty() {
        return Err(SimError::InvalidArgument("empty initial frontier".into()));
    }
    let mut frontier = start;
    let mut max_overall = frontier.max_position().unwrap_or(0).max(0);
    let mut min_overall = frontier.min_position().unwrap_or(0).min(0);
    let (mut maxima, mut counts) = if cfg.record_trajectory {
        (
            Some(vec![frontier.max_position()]),
            Some(vec![frontier.total()]),
        )
    } else {
        (None, None)
    };
    let mut fate = Fate::Censored(cfg.gen_cap);
    for generation in 1..=cfg.gen_cap {
        if let Some(level) = cfg.stop_level {
            if max_overall >= level {
                fate = Fate::Halted(generation - 1);
                break;
            }
        }
        frontier = frontier
            .advance(params, rng)
            .ok_or(SimError::ParticleOverflow { generation })?;
        if let (Some(m), Some(c)) = (maxima.as_mut(), counts.as_mut()) {
            m.push(frontier.max_position());
            c.push(frontier.total());
        }
        match (frontier.max_position(), frontier.min_position()) {
            (Some(hi), Some(lo)) => {
                max_overall = max_overall.max(hi);
                min_overall = min_overall.min(lo);
            }
            _ => {
                fate = Fate::Extinct(generation);
                break;
            }
        }
    }
    Ok(RunRecord {
        max_overall,
        min_overall,
        fate,
        gen_maxima: maxima,
        gen_counts: counts,
        final_max: frontier.max_position(),
        master_seed: rng.master_seed(),
        stream_id: rng.stream_id(),
    })
}

pub fn simulate_tree(
    params: &ModelParams,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> Result<RunRecord, SimError> {
    simulate_from(params, Frontier::with_particles(0, 1), cfg, rng)
}

/// `n_particles` independent trees started together at the origin, run as
/// one frontier.
pub fn simulate_superposition(
    params: &ModelParams,
    n_particles: u64,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> Result<RunRecord, SimError> {
    if n_particles < 1 {
        return Err(SimError::InvalidArgument(
            "n_particles must be at least 1".into(),
        ));
    }
    simulate_from(params, Frontier::with_particles(0, n_particles), cfg, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionedRecord {
    pub record: RunRecord,
    /// Trees drawn until this one survived, including itself.
    pub attempts: u64,
}

/// Rejection sampling: reruns trees from `rng` until one is alive at
/// generation `n_target`.
pub fn simulate_conditioned(
    params: &ModelParams,
    n_target: u64,
    attempt_budget: u64,
    rng: &mut RngStream,
) -> Result<ConditionedRecord, SimError> {
    if n_target < 1 {
        return Err(SimError::InvalidArgument(
            "n_target must be at least 1".into(),
        ));
    }
    let cfg = SimConfig::new(n_target);
    for attempts in 1..=attempt_budget {
        let record = simulate_tree(params, &cfg, rng)?;
        if record.survived(n_target) {
            return Ok(ConditionedRecord { record, attempts });
        }
    }
    Err(SimError::AttemptBudgetExceeded {
        attempts: attempt_budget,
    })
}

/// Replicate `i` uses stream `i` of `master_seed`; results are returned in
/// replicate order whatever the thread count.
pub fn simulate_many(
    params: &ModelParams,
    n_trees: u64,
    cfg: &SimConfig,
    master_seed: u64,
) -> Result<Vec<RunRecord>, SimError> {
    (0..n_trees)
        .into_par_iter()
        .map(|i| simulate_tree(params, cfg, &mut RngStream::new(master_seed, i)))
        .collect()
}

/// Superposition replicates, stream `i` for replicate `i`.
pub fn simulate_superposition_many(
    params: &ModelParams,
    n_particles: u64,
    replicates: u64,
    cfg: &SimConfig,
    master_seed: u64,
) -> Result<Vec<RunRecord>, SimError> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            simulate_superposition(
                params,
                n_particles,
                cfg,
                &mut RngStream::new(master_seed, i),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionedSample {
    /// `M_n` for each accepted tree, in attempt order.
    pub final_maxima: Vec<i64>,
    pub attempts: u64,
}

/// Draws single attempts on streams `0, 1, 2, ...` (one tree per stream) in
/// parallel batches and keeps the first `n_accept` survivors by stream index.
pub fn sample_conditioned_maxima(
    params: &ModelParams,
    n_target: u64,
    n_accept: usize,
    attempt_budget: u64,
    master_seed: u64,
) -> Result<ConditionedSample, SimError> {
    if n_target < 1 {
        return Err(SimError::InvalidArgument(
            "n_target must be at least 1".into(),
        ));
    }
    let cfg = SimConfig::new(n_target);
    let batch = 4096u64;
    let mut accepted = Vec::with_capacity(n_accept);
    let mut next = 0u64;
    while accepted.len() < n_accept {
        if next >= attempt_budget {
            return Err(SimError::AttemptBudgetExceeded { attempts: next });
        }
        let end = (next + batch).min(attempt_budget);
        let results: Vec<Option<(u64, i64)>> = (next..end)
            .into_par_iter()
            .map(|i| {
                let rec = simulate_tree(params, &cfg, &mut RngStream::new(master_seed, i))?;
                Ok(rec
                    .survived(n_target)
                    .then(|| (i, rec.final_max.expect("survivor has particles"))))
            })
            .collect::<Result<_, SimError>>()?;
        for (i, m) in results.into_iter().flatten() {
            if accepted.len() < n_accept {
                accepted.push(m);
                next = i + 1;
            }
        }
        if accepted.len() < n_accept {
            next = end;
        }
    }
    Ok(ConditionedSample {
        final_maxima: accepted,
        attempts: next,
    })
}

/// Number of runs with `M ≥ x`, for each `x`.
pub fn tail_hits(records: &[RunRecord], xs: &[i64]) -> Vec<u64> {
    xs.iter()
        .map(|&x| records.iter().filter(|r| r.reached(x)).count() as u64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gw::survival_probabilities;
    use crate::laws::{OffspringLaw, StepLaw};

    fn reference() -> ModelParams {
        ModelParams::reference()
    }

    #[test]
    fn maximum_is_never_negative_and_trajectory_consistent() {
        let params = reference();
        let cfg = SimConfig {
            gen_cap: 200,
            record_trajectory: true,
            stop_level: None,
        };
        for i in 0..500 {
            let rec = simulate_tree(&params, &cfg, &mut RngStream::new(5, i)).unwrap();
            assert!(rec.max_overall >= 0 && rec.min_overall <= 0);
            let maxima = rec.gen_maxima.as_ref().unwrap();
            let best = maxima.iter().flatten().copied().max().unwrap();
            assert_eq!(best, rec.max_overall);
            let counts = rec.gen_counts.as_ref().unwrap();
            assert_eq!(counts[0], 1);
            if let Fate::Extinct(z) = rec.fate {
                assert_eq!(counts.len() as u64, z + 1);
                assert_eq!(*counts.last().unwrap(), 0);
                assert!(maxima.last().unwrap().is_none());
            }
        }
    }

    #[test]
    fn step_then_no_offspring_gives_zero_maximum() {
        // The root jumps and leaves no children: M stays at M_0 = 0.
        let params = ModelParams::new(OffspringLaw::double_or_nothing(), StepLaw::rademacher());
        let mut seen = false;
        for i in 0..200 {
            let rec =
                simulate_tree(&params, &SimConfig::new(10), &mut RngStream::new(1, i)).unwrap();
            if rec.fate == Fate::Extinct(1) {
                assert_eq!(rec.max_overall, 0);
                assert_eq!(rec.min_overall, 0);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn replay_is_deterministic() {
        let params = reference();
        let cfg = SimConfig::new(1000);
        let a = simulate_many(&params, 300, &cfg, 11).unwrap();
        let b: Vec<RunRecord> = (0..300)
            .map(|i| simulate_tree(&params, &cfg, &mut RngStream::new(11, i)).unwrap())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_population_is_one() {
        let params = ModelParams::new(OffspringLaw::poisson(), StepLaw::rademacher());
        let cfg = SimConfig {
            gen_cap: 10,
            record_trajectory: true,
            stop_level: None,
        };
        let n = 100_000u64;
        let recs = simulate_many(&params, n, &cfg, 3).unwrap();
        for g in [1usize, 5, 10] {
            let xs: Vec<f64> = recs
                .iter()
                .map(|r| r.gen_counts.as_ref().unwrap().get(g).copied().unwrap_or(0) as f64)
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - 1.0).abs() < 4.0 * se,
                "gen {g}: mean {mean} se {se}"
            );
        }
    }

    #[test]
    fn stop_level_halts_and_preserves_lower_events() {
        let params = reference();
        let full = SimConfig::new(2000);
        let stop = SimConfig {
            stop_level: Some(10),
            ..full
        };
        for i in 0..400 {
            let a = simulate_tree(&params, &full, &mut RngStream::new(8, i)).unwrap();
            let b = simulate_tree(&params, &stop, &mut RngStream::new(8, i)).unwrap();
            for x in 0..=10 {
                assert_eq!(a.reached(x), b.reached(x));
            }
            if b.max_overall >= 10 {
                assert!(matches!(b.fate, Fate::Halted(_)));
            }
        }
    }

    #[test]
    fn conditioned_attempts_for_one_generation() {
        let params = reference();
        let mut total = 0u64;
        let reps = 4000u64;
        for i in 0..reps {
            let c = simulate_conditioned(&params, 1, 1000, &mut RngStream::new(21, i)).unwrap();
            assert!(c.record.survived(1));
            total += c.attempts;
        }
        // Attempts are geometric with mean 2 and variance 2.
        let mean = total as f64 / reps as f64;
        assert!(
            (mean - 2.0).abs() < 4.0 * (2.0 / reps as f64).sqrt(),
            "{mean}"
        );
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            simulate_conditioned(&params, 500, 1, &mut rng),
            Err(SimError::AttemptBudgetExceeded { attempts: 1 })
        ));
    }

    #[test]
    fn conditioned_batches_are_deterministic() {
        let params = reference();
        let a = sample_conditioned_maxima(&params, 20, 50, 1_000_000, 4).unwrap();
        let b = sample_conditioned_maxima(&params, 20, 50, 1_000_000, 4).unwrap();
        assert_eq!(a, b);
        // Cross-check against sequential single-stream rejection.
        let cfg = SimConfig::new(20);
        let mut want = Vec::new();
        let mut i = 0;
        while want.len() < 50 {
            let r = simulate_tree(&params, &cfg, &mut RngStream::new(4, i)).unwrap();
            if r.survived(20) {
                want.push(r.final_max.unwrap());
            }
            i += 1;
        }
        assert_eq!(a.final_maxima, want);
        assert_eq!(a.attempts, i);
    }

    #[test]
    fn superposition_of_one_matches_tree() {
        let params = reference();
        let cfg = SimConfig::new(500);
        let a = simulate_superposition(&params, 1, &cfg, &mut RngStream::new(2, 9)).unwrap();
        let b = simulate_tree(&params, &cfg, &mut RngStream::new(2, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn survival_frequency_matches_recursion() {
        let params = reference();
        let recs = simulate_many(&params, 50_000, &SimConfig::new(50), 12).unwrap();
        let q = survival_probabilities(&params.offspring, 50).get(50);
        let p = recs.iter().filter(|r| r.survived(50)).count() as f64 / 50_000.0;
        assert!((p - q).abs() < 4.0 * (q * (1.0 - q) / 50_000.0).sqrt());
    }

    #[test]
    fn frontier_bookkeeping() {
        let params = reference();
        let mut rng = RngStream::new(1, 1);
        let start = Frontier::with_particles(3, 1000);
        let next = start.advance(&params, &mut rng).unwrap();
        assert!(next.counts().values().all(|&c| c >= 1));
        assert!(next.counts().keys().all(|&x| x == 2 || x == 4));
        assert_eq!(next.total(), next.counts().values().sum::<u64>());
        assert_eq!(next.total() % 2, 0);
    }
}
