//! Checks of the probabilistic representations behind the tail equation.
//!
//! The reflected walk `W` has increments `-Y` with `Y` drawn from the step
//! law. For `u = Tu` the process
//!
//! ```text
//! Y_n = Π_{j=1}^{n} (1 - H(u(W_j))) · u(W_n)
//! ```
//!
//! is a bounded martingale up to `τ₀ = min{n : W_n ≤ 0}`, so optional stopping
//! gives `u(x) = E_x Π_{j=1}^{τ₀} (1 - H(u(W_j)))` when `u = 1` on `x ≤ 0`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Geometric, Hypergeometric, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::StepCdf;
use crate::lattice::TailFunction;
use crate::laws::{multinomial, ModelParams, StepLaw};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("step cap of {cap} exceeded")]
    StepCapExceeded { cap: u64 },
    #[error("path budget of {budget} steps exceeded")]
    PathBudgetExceeded { budget: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Increments within this radius form the core used for block moves.
const CORE_RADIUS: i64 = 32;
/// Shortest block worth drawing as a multinomial.
const BLOCK_MIN: u64 = 16;
const MAX_BLOCK: u64 = 1 << 40;
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Sampler for the walk with increments `-Y`.
///
/// Increments split into a core (`|Δ| ≤ 32`) and a tail. Gaps between tail
/// increments are geometric, and runs of core increments that cannot reach
/// the target level are drawn as multinomial counts and split recursively
/// where they might cross, which leaves the law of the passage time and
/// position unchanged.
#[derive(Debug, Clone)]
pub struct ReflectedWalk {
    core: Vec<(i64, f64)>,
    core_alias: WeightedAliasIndex<f64>,
    p_tail: f64,
    /// `(increment, cumulative conditional probability)` over the tail.
    tail: Vec<(i64, f64)>,
    core_variance: f64,
    /// Full support by decreasing probability, for far-field blocks.
    full: Vec<(i64, f64)>,
    /// `E[max(-Δ, 0)]` over the full support.
    mean_down: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Passage {
    /// `τ = min{n : W_n ≤ level}`.
    pub tau: u64,
    pub terminal: i64,
    /// Sampling iterations used (blocks count once).
    pub iterations: u64,
}

impl ReflectedWalk {
    pub fn new(step: &StepLaw) -> Self {
        let increments = step.reflected();
        let (core, tail): (Vec<_>, Vec<_>) = increments
            .support()
            .iter()
            .copied()
            .partition(|&(y, _)| y.abs() <= CORE_RADIUS);
        let core_mass: f64 = core.iter().map(|c| c.1).sum();
        let core: Vec<(i64, f64)> = core.into_iter().map(|(y, a)| (y, a / core_mass)).collect();
        let tail_mass: f64 = tail.iter().map(|c| c.1).sum();
        let mut acc = 0.0;
        let tail = tail
            .into_iter()
            .map(|(y, a)| {
                acc += a / tail_mass;
                (y, acc)
            })
            .collect();
        let core_alias =
            WeightedAliasIndex::new(core.iter().map(|c| c.1).collect()).expect("core has mass");
        let core_variance = core
            .iter()
            .map(|c| (c.0 * c.0) as f64 * c.1)
            .sum::<f64>()
            .max(1e-12);
        let mut full = increments.support().to_vec();
        full.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mean_down = full
            .iter()
            .map(|&(y, a)| (-y).max(0) as f64 * a)
            .sum::<f64>()
            .max(1e-12);
        Self {
            core,
            core_alias,
            p_tail: tail_mass,
            tail,
            core_variance,
            full,
            mean_down,
        }
    }

    fn tail_increment<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let r: f64 = rng.random();
        let i = self
            .tail
            .partition_point(|t| t.1 < r)
            .min(self.tail.len() - 1);
        self.tail[i].0
    }

    fn core_increment<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.core[self.core_alias.sample(rng)].0
    }

    /// One increment `W_{n+1} - W_n`.
    pub fn increment<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        if self.p_tail > 0.0 && rng.random::<f64>() < self.p_tail {
            self.tail_increment(rng)
        } else {
            self.core_increment(rng)
        }
    }

    fn core_steps_before_tail<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.p_tail > 0.0 {
            Geometric::new(self.p_tail).expect("valid p").sample(rng)
        } else {
            u64::MAX
        }
    }

    /// Runs from `start > level` until `W ≤ level`.
    pub fn first_passage<R: Rng + ?Sized>(
        &self,
        start: i64,
        level: i64,
        step_cap: u64,
        rng: &mut R,
    ) -> Result<Passage, DiagError> {
        let mut w = start;
        let (mut tau, mut iterations) = (0u64, 0u64);
        if w <= level {
            return Ok(Passage {
                tau,
                terminal: w,
                iterations,
            });
        }
        let mut until_tail = self.core_steps_before_tail(rng);
        let mut counts = vec![0u64; self.core.len()];
        let index: Vec<(usize, f64)> = self
            .core
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.1))
            .collect();
        let mut full_counts = vec![0u64; self.full.len()];
        let full_index: Vec<(usize, f64)> = self
            .full
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.1))
            .collect();
        loop {
            iterations += 1;
            if iterations > step_cap {
                return Err(DiagError::StepCapExceeded { cap: step_cap });
            }
            if until_tail == 0 {
                w += self.tail_increment(rng);
                tau += 1;
                until_tail = self.core_steps_before_tail(rng);
            } else {
                // Blocks of about gap²/variance steps cross with probability
                // of order one, so the walk needs few of them.
                let gap = (w - level) as f64;
                let m = ((gap * gap / self.core_variance).ceil() as u64)
                    .clamp(1, MAX_BLOCK)
                    .min(until_tail);
                // Far from the level, a full-support block whose mean downward
                // travel is a quarter of the gap almost never needs splitting
                // and does not stop at tail increments.
                let far = ((gap / (4.0 * self.mean_down)) as u64).min(MAX_BLOCK);
                if self.p_tail > 0.0 && far >= BLOCK_MIN {
                    full_counts.iter_mut().for_each(|c| *c = 0);
                    multinomial(far, &full_index, rng, |i, n| full_counts[i] = n);
                    match resolve_block(&self.full, w, level, &full_counts, far, rng) {
                        Block::Crossed { terminal, steps } => {
                            return Ok(Passage {
                                tau: tau + steps,
                                terminal,
                                iterations,
                            });
                        }
                        Block::Clear { end } => {
                            w = end;
                            tau += far;
                            // Tail gaps are memoryless, so redraw after a full block.
                            until_tail = self.core_steps_before_tail(rng);
                        }
                    }
                } else if m >= BLOCK_MIN {
                    counts.iter_mut().for_each(|c| *c = 0);
                    multinomial(m, &index, rng, |i, n| counts[i] = n);
                    match resolve_block(&self.core, w, level, &counts, m, rng) {
                        Block::Crossed { terminal, steps } => {
                            return Ok(Passage {
                                tau: tau + steps,
                                terminal,
                                iterations,
                            });
                        }
                        Block::Clear { end } => {
                            w = end;
                            tau += m;
                            until_tail -= m;
                        }
                    }
                } else {
                    w += self.core_increment(rng);
                    tau += 1;
                    until_tail -= 1;
                }
            }
            if w <= level {
                return Ok(Passage {
                    tau,
                    terminal: w,
                    iterations,
                });
            }
        }
    }
}

/// Given the increment counts of a run of `m` steps from `w`, finds the first
/// visit to `≤ level` by splitting the run in halves with multivariate
/// hypergeometric draws.
fn resolve_block<R: Rng + ?Sized>(
    cells: &[(i64, f64)],
    w: i64,
    level: i64,
    counts: &[u64],
    m: u64,
    rng: &mut R,
) -> Block {
    let mut lowest = w;
    let mut end = w;
    for (c, &n) in cells.iter().zip(counts) {
        let move_ = c.0 * n as i64;
        end += move_;
        if c.0 < 0 {
            lowest += move_;
        }
    }
    if lowest > level {
        return Block::Clear { end };
    }
    if m == 1 {
        return if end <= level {
            Block::Crossed {
                terminal: end,
                steps: 1,
            }
        } else {
            Block::Clear { end }
        };
    }
    let first_len = m / 2;
    let mut first = vec![0u64; counts.len()];
    let (mut population, mut draws) = (m, first_len);
    for (i, &n) in counts.iter().enumerate() {
        if draws == 0 {
            break;
        }
        let k = if n == population {
            draws
        } else if n == 0 {
            0
        } else {
            Hypergeometric::new(population, n, draws)
                .expect("valid counts")
                .sample(rng)
        };
        first[i] = k;
        population -= n;
        draws -= k;
    }
    let second: Vec<u64> = counts.iter().zip(&first).map(|(a, b)| a - b).collect();
    match resolve_block(cells, w, level, &first, first_len, rng) {
        Block::Crossed { terminal, steps } => Block::Crossed { terminal, steps },
        Block::Clear { end: mid } => {
            match resolve_block(cells, mid, level, &second, m - first_len, rng) {
                Block::Crossed { terminal, steps } => Block::Crossed {
                    terminal,
                    steps: first_len + steps,
                },
                clear => clear,
            }
        }
    }
}

enum Block {
    Crossed { terminal: i64, steps: u64 },
    Clear { end: i64 },
}

/// Exit laws of the walk from the centre of `(-d, d)` for `d = 2^k`.
///
/// For a start `w` with `w - d ≥ level` every position visited before the
/// exit lies above the level, so one draw from the exit law of half-width
/// `d` advances the walk to its next observation without skipping the first
/// passage. Jumping with the largest such `d` reaches the level in
/// `O(log(start))` draws. Exit laws solve banded Dirichlet problems, so this
/// needs a finite support of small span.
#[derive(Debug, Clone)]
pub struct ExitSampler {
    /// `levels[k]` holds the exit displacements and their alias table for
    /// half-width `2^k`.
    levels: Vec<(Vec<i64>, WeightedAliasIndex<f64>)>,
}

/// Largest step magnitude handled by [`ExitSampler`].
pub const EXIT_MAX_SPAN: i64 = 64;
/// Largest tabulated half-width.
pub const EXIT_MAX_WIDTH: i64 = 1 << 17;

impl ExitSampler {
    /// Tables for half-widths up to `max_width` (at most `EXIT_MAX_WIDTH`).
    /// Above the largest table the walk advances by that width per draw, so
    /// tables should reach well past the start heights: the walk climbs to
    /// height `G` with probability about `start/G`.
    pub fn new(step: &StepLaw, max_width: i64) -> Result<Self, DiagError> {
        let max_width = max_width.min(EXIT_MAX_WIDTH);
        let inc = step.reflected();
        let up = inc.max_step().max(0);
        let down = (-inc.min_step()).max(0);
        if up > EXIT_MAX_SPAN || down > EXIT_MAX_SPAN {
            return Err(DiagError::InvalidArgument(format!(
                "steps up to {} exceed the exit-law span {EXIT_MAX_SPAN}",
                up.max(down)
            )));
        }
        let mut levels = Vec::new();
        let mut d = 1i64;
        loop {
            let (outcomes, probs) = exit_law(inc.support(), d, up, down);
            let keep: Vec<usize> = (0..outcomes.len()).filter(|&i| probs[i] > 0.0).collect();
            let alias = WeightedAliasIndex::new(keep.iter().map(|&i| probs[i]).collect())
                .map_err(|e| DiagError::InvalidArgument(format!("exit law: {e}")))?;
            levels.push((keep.iter().map(|&i| outcomes[i]).collect(), alias));
            if d >= max_width.max(1) {
                break;
            }
            d *= 2;
        }
        Ok(Self { levels })
    }

    /// Terminal position `W_τ ≤ level` from `start > level`, with the number
    /// of draws used.
    pub fn overshoot_terminal<R: Rng + ?Sized>(
        &self,
        start: i64,
        level: i64,
        step_cap: u64,
        rng: &mut R,
    ) -> Result<(i64, u64), DiagError> {
        let mut w = start;
        let mut draws = 0u64;
        while w > level {
            draws += 1;
            if draws > step_cap {
                return Err(DiagError::StepCapExceeded { cap: step_cap });
            }
            let gap = (w - level) as u64;
            let k = (63 - gap.leading_zeros() as usize).min(self.levels.len() - 1);
            let (outcomes, alias) = &self.levels[k];
            w += outcomes[alias.sample(rng)];
        }
        Ok((w, draws))
    }
}

/// Exit position law from 0 for the walk killed on leaving `(-d, d)`, by
/// banded elimination on the interior. Returns outcomes and probabilities.
fn exit_law(support: &[(i64, f64)], d: i64, up: i64, down: i64) -> (Vec<i64>, Vec<f64>) {
    let outcomes: Vec<i64> = (-(d - 1) - down..=-d).chain(d..=d - 1 + up).collect();
    let n = (2 * d - 1) as usize;
    let m = outcomes.len();
    let outcome_index = |x: i64| -> usize {
        if x <= -d {
            (x + (d - 1) + down) as usize
        } else {
            (down as usize) + (x - d) as usize
        }
    };
    // Band storage: row i, column j at a[i][j - i + down].
    let (lo, hi) = (down as usize, up as usize);
    let width = lo + hi + 1;
    let mut a = vec![0.0; n * width];
    let mut b = vec![0.0; n * m];
    for i in 0..n {
        let p = i as i64 - (d - 1);
        a[i * width + lo] += 1.0;
        for &(y, prob) in support {
            let q = p + y;
            if q.abs() < d {
                let j = (q + d - 1) as usize;
                a[i * width + (j + lo - i)] -= prob;
            } else {
                b[i * m + outcome_index(q)] += prob;
            }
        }
    }
    // Forward elimination without pivoting: I - P on the interior is
    // diagonally dominant.
    for k in 0..n {
        let pivot = a[k * width + lo];
        for i in (k + 1)..(k + lo + 1).min(n) {
            let factor = a[i * width + (k + lo - i)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in k..(k + hi + 1).min(n) {
                a[i * width + (j + lo - i)] -= factor * a[k * width + (j + lo - k)];
            }
            for c in 0..m {
                b[i * m + c] -= factor * b[k * m + c];
            }
        }
    }
    let mut x = vec![0.0; n * m];
    for i in (0..n).rev() {
        for c in 0..m {
            let mut acc = b[i * m + c];
            for j in (i + 1)..(i + hi + 1).min(n) {
                acc -= a[i * width + (j + lo - i)] * x[j * m + c];
            }
            x[i * m + c] = acc / a[i * width + lo];
        }
    }
    let centre = (d - 1) as usize;
    let mut probs: Vec<f64> = (0..m).map(|c| x[centre * m + c].max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    (outcomes, probs)
}

/// Passage of the walk from `start` to `W ≤ stop_level`.
pub fn reflected_walk_path(
    step: &StepLaw,
    start: i64,
    stop_level: i64,
    step_cap: u64,
    rng: &mut RngStream,
) -> Result<Passage, DiagError> {
    if start <= stop_level {
        return Err(DiagError::InvalidArgument(
            "start must exceed stop_level".into(),
        ));
    }
    ReflectedWalk::new(step).first_passage(start, stop_level, step_cap, rng)
}

/// `Σ_k a_k u(x-k) - u(x) - Σ_k a_k h(u(x-k))`, maximised over the grid;
/// zero up to the solver residual.
pub fn one_step_identity_defect(params: &ModelParams, tail: &TailFunction) -> f64 {
    let law = &params.offspring;
    (1..=tail.x_max())
        .map(|x| {
            let (mut mean, mut hsum) = (0.0, 0.0);
            for &(k, a) in params.step.support() {
                let v = tail.at(x - k);
                mean += a * v;
                hsum += a * law.h_unchecked(v);
            }
            (mean - tail.at(x) - hsum).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MartingaleSample {
    pub start_x: i64,
    pub stop_level: i64,
    pub product: f64,
    pub terminal: f64,
    pub y_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub start_x: i64,
    pub n_paths: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub solver_value: f64,
    pub min_value: f64,
    pub max_value: f64,
    /// Paths that left the grid, where the truncated `u` is 0.
    pub exited: u64,
    /// Paths stopped once the product fell below `PRODUCT_FLOOR`.
    pub truncated: u64,
}

/// Products below this are scored as 0; the bias per path is at most this.
pub const PRODUCT_FLOOR: f64 = 1e-10;

/// Monte Carlo of `E_x Π_{j=1}^{τ₀}(1 - H(u(W_j))) u(W_{τ₀})` against `u(x)`.
pub fn martingale_optional_stopping_check(
    params: &ModelParams,
    tail: &TailFunction,
    start_x: i64,
    n_paths: u64,
    master_seed: u64,
    step_cap: u64,
) -> Result<MartingaleReport, DiagError> {
    if n_paths == 0 {
        return Err(DiagError::InvalidArgument(
            "n_paths must be positive".into(),
        ));
    }
    let law = &params.offspring;
    let x_max = tail.x_max();
    let log_factor: Vec<f64> = (1..=x_max)
        .map(|x| (1.0 - law.big_h_unchecked(tail.at(x))).ln())
        .collect();
    let left = tail.left_value();
    let left_log = (1.0 - law.big_h_unchecked(left)).ln();
    let walk = ReflectedWalk::new(&params.step);
    let floor = PRODUCT_FLOOR.ln();

    #[derive(Clone, Copy)]
    enum End {
        Hit,
        Exited,
        Truncated,
    }
    let run = |i: u64| -> Result<(MartingaleSample, End), DiagError> {
        let mut rng = RngStream::new(master_seed, i);
        let mut w = start_x;
        let mut log_p = 0.0;
        let mut steps = 0u64;
        let end = loop {
            if w <= 0 {
                break End::Hit;
            }
            steps += 1;
            if steps > step_cap {
                return Err(DiagError::StepCapExceeded { cap: step_cap });
            }
            w += walk.increment(&mut rng);
            if w <= 0 {
                log_p += left_log;
                break End::Hit;
            }
            if w > x_max {
                break End::Exited;
            }
            log_p += log_factor[(w - 1) as usize];
            if log_p < floor {
                break End::Truncated;
            }
        };
        let (product, terminal) = match end {
            End::Hit => (log_p.exp(), left),
            End::Exited | End::Truncated => (log_p.exp(), 0.0),
        };
        let sample = MartingaleSample {
            start_x,
            stop_level: 0,
            product,
            terminal,
            y_value: product * terminal,
        };
        Ok((sample, end))
    };
    let results: Vec<(MartingaleSample, End)> = (0..n_paths)
        .into_par_iter()
        .map(run)
        .collect::<Result<_, _>>()?;

    let n = n_paths as f64;
    let values: Vec<f64> = results.iter().map(|r| r.0.y_value).collect();
    let mean = values.iter().sum::<f64>() / n;
    let var = if n_paths > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MartingaleReport {
        start_x,
        n_paths,
        estimate: mean,
        std_error: (var / n).sqrt(),
        solver_value: tail.at(start_x),
        min_value: values.iter().copied().fold(f64::INFINITY, f64::min),
        max_value: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        exited: results
            .iter()
            .filter(|r| matches!(r.1, End::Exited))
            .count() as u64,
        truncated: results
            .iter()
            .filter(|r| matches!(r.1, End::Truncated))
            .count() as u64,
    })
}

/// Empirical law of the overshoot `|W_τ₀|` from one start height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootRow {
    pub height: i64,
    pub n_paths: u64,
    pub mean: f64,
    pub second_moment: f64,
    pub max: u64,
    /// Overshoot value to count.
    pub distribution: BTreeMap<u64, u64>,
}

impl OvershootRow {
    pub fn to_step_cdf(&self) -> StepCdf {
        let n = self.n_paths as f64;
        let mut acc = 0u64;
        StepCdf::new(
            self.distribution
                .iter()
                .map(|(&v, &c)| {
                    acc += c;
                    (v as f64, acc as f64 / n)
                })
                .collect(),
        )
    }
}

/// Overshoot below level 0 from each start height; stream
/// `family_id(height index, path)` for each path. Small-span laws use exit
/// laws, others the time-stepping sampler.
pub fn overshoot_statistics(
    step: &StepLaw,
    heights: &[i64],
    n_paths: u64,
    master_seed: u64,
    step_cap: u64,
) -> Result<Vec<OvershootRow>, DiagError> {
    if heights.is_empty() || heights[0] < 1 || heights.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiagError::InvalidArgument(
            "heights must be positive and increasing".into(),
        ));
    }
    if n_paths == 0 {
        return Err(DiagError::InvalidArgument(
            "n_paths must be positive".into(),
        ));
    }
    let walk = ReflectedWalk::new(step);
    let exits = ExitSampler::new(step, 64 * heights[heights.len() - 1]).ok();
    heights
        .iter()
        .enumerate()
        .map(|(h, &height)| {
            let overshoots: Vec<u64> = (0..n_paths)
                .into_par_iter()
                .map(|i| {
                    let mut rng = RngStream::new(master_seed, RngStream::family_id(h as u32, i));
                    let terminal = match &exits {
                        Some(e) => e.overshoot_terminal(height, 0, step_cap, &mut rng)?.0,
                        None => walk.first_passage(height, 0, step_cap, &mut rng)?.terminal,
                    };
                    Ok((-terminal) as u64)
                })
                .collect::<Result<_, DiagError>>()?;
            let mut distribution = BTreeMap::new();
            for &o in &overshoots {
                *distribution.entry(o).or_insert(0u64) += 1;
            }
            let n = n_paths as f64;
            Ok(OvershootRow {
                height,
                n_paths,
                mean: overshoots.iter().map(|&o| o as f64).sum::<f64>() / n,
                second_moment: overshoots.iter().map(|&o| (o as f64).powi(2)).sum::<f64>() / n,
                max: overshoots.iter().copied().max().unwrap_or(0),
                distribution,
            })
        })
        .collect()
}

/// Strict descending ladder variables of the walk started at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderSample {
    /// `Z_i = W_{T_i} - W_{T_{i-1}} < 0`.
    pub increments: Vec<i64>,
    /// `T_i`, strictly increasing.
    pub epochs: Vec<u64>,
}

pub fn ladder_decomposition_sample(
    step: &StepLaw,
    n_ladders: usize,
    step_cap: u64,
    rng: &mut RngStream,
) -> Result<LadderSample, DiagError> {
    if n_ladders == 0 {
        return Err(DiagError::InvalidArgument(
            "n_ladders must be positive".into(),
        ));
    }
    let walk = ReflectedWalk::new(step);
    let mut increments = Vec::with_capacity(n_ladders);
    let mut epochs = Vec::with_capacity(n_ladders);
    let mut t = 0u64;
    for _ in 0..n_ladders {
        // The walk is translation invariant, so each ladder restarts at 0.
        let p = walk.first_passage(0, -1, step_cap, rng)?;
        t += p.tau;
        increments.push(p.terminal);
        epochs.push(t);
    }
    Ok(LadderSample { increments, epochs })
}

/// Fraction of walks from `start` not yet at level 0 after `horizon` steps,
/// with its binomial standard error.
pub fn first_passage_survival(
    step: &StepLaw,
    start: i64,
    horizon: u64,
    n_paths: u64,
    master_seed: u64,
) -> Result<(f64, f64), DiagError> {
    if start < 1 || n_paths == 0 {
        return Err(DiagError::InvalidArgument(
            "need start ≥ 1 and n_paths ≥ 1".into(),
        ));
    }
    let walk = ReflectedWalk::new(step);
    let alive: u64 = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(master_seed, i);
            let mut w = start;
            for _ in 0..horizon {
                w += walk.increment(&mut rng);
                if w <= 0 {
                    return 0;
                }
            }
            1
        })
        .sum();
    let p = alive as f64 / n_paths as f64;
    Ok((p, (p * (1.0 - p) / n_paths as f64).sqrt()))
}

/// Brownian prediction `P{τ₀ > t} = 2Φ(x/(η√t)) - 1` from height `x`.
pub fn brownian_first_passage_survival(start: f64, horizon: f64, eta: f64) -> f64 {
    2.0 * Normal::standard().cdf(start / (eta * horizon.sqrt())) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: u64,
    pub mean_steps: f64,
}

/// Weights below this are rouletted: kept at this value with probability
/// `w / ROULETTE_LEVEL`, otherwise dropped. The expectation is unchanged.
const ROULETTE_LEVEL: f64 = 0.05;

/// Monte Carlo of `E exp{-(σ²/2) ∫₀^τ φ(η B_t) dt}` for Brownian `B` from
/// `y/η` stopped at `τ = min{t : B_t ≤ 0}`, on an Euler grid of step `dt`.
#[allow(clippy::too_many_arguments)]
pub fn brownian_fk_estimate<F>(
    potential: F,
    y: f64,
    sigma: f64,
    eta: f64,
    dt: f64,
    n_paths: u64,
    master_seed: u64,
    max_steps_per_path: u64,
) -> Result<FkEstimate, DiagError>
where
    F: Fn(f64) -> f64 + Sync,
{
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(DiagError::InvalidArgument(format!(
            "dt = {dt} must lie in (0, 1e-3]"
        )));
    }
    if !(y > 0.0) || n_paths == 0 {
        return Err(DiagError::InvalidArgument(
            "need y > 0 and n_paths ≥ 1".into(),
        ));
    }
    let rate = 0.5 * sigma * sigma * dt;
    let root_dt = dt.sqrt();
    let run = |i: u64| -> Result<(f64, u64), DiagError> {
        let mut rng = RngStream::new(master_seed, i);
        let mut b = y / eta;
        let mut log_w = 0.0_f64;
        let mut weight_scale = 1.0_f64;
        let mut steps = 0u64;
        while b > 0.0 {
            steps += 1;
            if steps > max_steps_per_path {
                return Err(DiagError::PathBudgetExceeded {
                    budget: max_steps_per_path,
                });
            }
            log_w -= rate * potential(eta * b);
            let z: f64 = rng.sample(StandardNormal);
            b += root_dt * z;
            let w = weight_scale * log_w.exp();
            if w < ROULETTE_LEVEL {
                if rng.random::<f64>() < w / ROULETTE_LEVEL {
                    weight_scale = ROULETTE_LEVEL;
                    log_w = 0.0;
                } else {
                    return Ok((0.0, steps));
                }
            }
        }
        Ok((weight_scale * log_w.exp(), steps))
    };
    let results: Vec<(f64, u64)> = (0..n_paths)
        .into_par_iter()
        .map(run)
        .collect::<Result<_, _>>()?;
    let n = n_paths as f64;
    let mean = results.iter().map(|r| r.0).sum::<f64>() / n;
    let var = if n_paths > 1 {
        results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(FkEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_paths,
        mean_steps: results.iter().map(|r| r.1 as f64).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::{phi_closed_form, solve_phi_shooting};
    use crate::estimators::ks_distance;
    use crate::lattice::{solve_all_time_tail, TailSolverConfig};
    use crate::laws::OffspringLaw;

    fn four_point() -> StepLaw {
        StepLaw::new([(-2, 0.25), (-1, 0.25), (1, 0.25), (2, 0.25)]).unwrap()
    }

    #[test]
    fn rademacher_walk_has_no_overshoot() {
        let mut rng = RngStream::new(1, 0);
        for start in [1, 5, 40] {
            let p =
                reflected_walk_path(&StepLaw::rademacher(), start, 0, DEFAULT_STEP_CAP, &mut rng)
                    .unwrap();
            assert_eq!(p.terminal, 0);
            assert!(p.tau >= start as u64);
        }
        assert!(reflected_walk_path(&StepLaw::rademacher(), 0, 0, 10, &mut rng).is_err());
    }

    #[test]
    fn increments_are_reflected_and_centred() {
        let skew = StepLaw::new([(-3, 0.1), (-1, 0.425), (1, 0.325), (2, 0.1), (4, 0.05)]).unwrap();
        let walk = ReflectedWalk::new(&skew);
        let mut rng = RngStream::new(2, 0);
        let n = 200_000;
        let draws: Vec<i64> = (0..n).map(|_| walk.increment(&mut rng)).collect();
        let freq = |v: i64| draws.iter().filter(|&&d| d == v).count() as f64 / n as f64;
        assert!((freq(3) - 0.1).abs() < 4.0 * (0.09f64 / n as f64).sqrt());
        assert_eq!(freq(-3), 0.0);
        let mean = draws.iter().sum::<i64>() as f64 / n as f64;
        let se = (skew.variance() / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se);
    }

    #[test]
    fn block_moves_preserve_passage_law() {
        // Same start, block moves vs plain stepping: compare overshoot law
        // and the median passage time.
        let law = four_point();
        let walk = ReflectedWalk::new(&law);
        let n = 20_000u64;
        let mut fast = Vec::new();
        let mut slow = Vec::new();
        for i in 0..n {
            let mut rng = RngStream::new(31, i);
            let p = walk
                .first_passage(12, 0, DEFAULT_STEP_CAP, &mut rng)
                .unwrap();
            fast.push((p.terminal, p.tau));
            let mut rng = RngStream::new(32, i);
            let (mut w, mut t) = (12i64, 0u64);
            while w > 0 {
                w += walk.increment(&mut rng);
                t += 1;
                if t > 1_000_000 {
                    break;
                }
            }
            slow.push((w, t));
        }
        let share = |v: &Vec<(i64, u64)>| v.iter().filter(|p| p.0 == -1).count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt() * 2f64.sqrt();
        assert!((share(&fast) - share(&slow)).abs() < 4.0 * se);
        let below = |v: &Vec<(i64, u64)>| v.iter().filter(|p| p.1 <= 144).count() as f64 / n as f64;
        assert!((below(&fast) - below(&slow)).abs() < 4.0 * se);
    }

    #[test]
    fn exit_law_matches_simple_cases() {
        // Rademacher from the centre of (-d, d) exits at ±d with probability 1/2.
        let e = ExitSampler::new(&StepLaw::rademacher(), 8).unwrap();
        for (outcomes, _) in &e.levels {
            assert_eq!(outcomes.len(), 2);
        }
        let (outcomes, probs) = exit_law(StepLaw::rademacher().support(), 4, 1, 1);
        assert_eq!(outcomes, vec![-4, 4]);
        assert!((probs[0] - 0.5).abs() < 1e-14);
        // Four-point law, d = 1: one step decides.
        let law = four_point();
        let (outcomes, probs) = exit_law(law.reflected().support(), 1, 2, 2);
        assert_eq!(outcomes, vec![-2, -1, 1, 2]);
        assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!(ExitSampler::new(&StepLaw::heavy_tail(0.5, 1000).unwrap(), 8).is_err());
    }

    #[test]
    fn exit_sampler_agrees_with_stepping() {
        let law = StepLaw::new([(-3, 0.1), (-1, 0.425), (1, 0.325), (2, 0.1), (4, 0.05)]).unwrap();
        let e = ExitSampler::new(&law, 1 << 12).unwrap();
        let walk = ReflectedWalk::new(&law);
        let n = 40_000u64;
        let (mut a, mut b) = (BTreeMap::new(), BTreeMap::new());
        for i in 0..n {
            let t = e
                .overshoot_terminal(20, 0, DEFAULT_STEP_CAP, &mut RngStream::new(41, i))
                .unwrap()
                .0;
            *a.entry(t).or_insert(0u64) += 1;
            let t = walk
                .first_passage(20, 0, DEFAULT_STEP_CAP, &mut RngStream::new(42, i))
                .unwrap()
                .terminal;
            *b.entry(t).or_insert(0u64) += 1;
        }
        for t in -3..=0 {
            let pa = *a.get(&t).unwrap_or(&0) as f64 / n as f64;
            let pb = *b.get(&t).unwrap_or(&0) as f64 / n as f64;
            let se = ((pa * (1.0 - pa) + pb * (1.0 - pb)) / n as f64).sqrt();
            assert!((pa - pb).abs() < 4.0 * se + 1e-12, "t={t}: {pa} vs {pb}");
        }
    }

    #[test]
    fn one_step_identity_holds() {
        let params = ModelParams::new(OffspringLaw::geometric(), four_point());
        let tail = solve_all_time_tail(&params, &TailSolverConfig::new(128, 1e-13)).unwrap();
        let defect = one_step_identity_defect(&params, &tail);
        assert!(
            defect <= tail.residual() + 1e-14,
            "{defect} vs {}",
            tail.residual()
        );
    }

    #[test]
    fn optional_stopping_small_case() {
        let params = ModelParams::reference();
        let tail = solve_all_time_tail(&params, &TailSolverConfig::new(256, 1e-12)).unwrap();
        let zero = martingale_optional_stopping_check(&params, &tail, 0, 10, 1, 10).unwrap();
        assert_eq!(zero.estimate, 1.0);
        let rep =
            martingale_optional_stopping_check(&params, &tail, 5, 20_000, 7, DEFAULT_STEP_CAP)
                .unwrap();
        assert!(rep.min_value >= 0.0 && rep.max_value <= 1.0);
        assert!(
            (rep.estimate - tail.at(5)).abs() < 3.5 * rep.std_error,
            "{rep:?}"
        );
        let again =
            martingale_optional_stopping_check(&params, &tail, 5, 20_000, 7, DEFAULT_STEP_CAP)
                .unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn overshoot_edge_cases() {
        let rows = overshoot_statistics(&StepLaw::rademacher(), &[3, 30], 500, 1, DEFAULT_STEP_CAP)
            .unwrap();
        assert!(rows.iter().all(|r| r.max == 0 && r.mean == 0.0));
        assert!(overshoot_statistics(&StepLaw::rademacher(), &[30, 3], 10, 1, 10).is_err());
    }

    #[test]
    fn overshoot_law_stabilises() {
        let rows =
            overshoot_statistics(&four_point(), &[1000, 10_000], 100_000, 3, DEFAULT_STEP_CAP)
                .unwrap();
        let ks = ks_distance(&rows[0].to_step_cdf(), &rows[1].to_step_cdf()).unwrap();
        assert!(ks <= 0.01, "ks {ks}");
        assert!(rows.iter().all(|r| r.max <= 1));
    }

    #[test]
    fn ladder_variables() {
        let mut rng = RngStream::new(4, 0);
        let lad =
            ladder_decomposition_sample(&four_point(), 200, DEFAULT_STEP_CAP, &mut rng).unwrap();
        assert!(lad.increments.iter().all(|&z| (-2..0).contains(&z)));
        assert!(lad.epochs.windows(2).all(|w| w[1] > w[0]));
        let rad =
            ladder_decomposition_sample(&StepLaw::rademacher(), 50, DEFAULT_STEP_CAP, &mut rng)
                .unwrap();
        assert!(rad.increments.iter().all(|&z| z == -1));
    }

    #[test]
    fn step_cap_is_reported() {
        let mut rng = RngStream::new(5, 0);
        let r = reflected_walk_path(&StepLaw::rademacher(), 1000, 0, 0, &mut rng);
        assert_eq!(r, Err(DiagError::StepCapExceeded { cap: 0 }));
        // Block moves cross a gap of 1000 in a handful of iterations, but not
        // always in one.
        let capped = (0..200)
            .filter(|_| reflected_walk_path(&StepLaw::rademacher(), 1000, 0, 1, &mut rng).is_err())
            .count();
        assert!(capped > 0);
    }

    #[test]
    fn brownian_first_passage_scaling() {
        let (p, _) = first_passage_survival(&StepLaw::rademacher(), 25, 625, 100_000, 6).unwrap();
        let want = brownian_first_passage_survival(25.0, 625.0, 1.0);
        assert!((want - 0.6827).abs() < 1e-4);
        assert!((p - want).abs() / want < 0.1, "{p} vs {want}");
    }

    #[test]
    fn brownian_fk_trivial_cases() {
        let zero = brownian_fk_estimate(|_| 0.0, 0.05, 1.0, 1.0, 1e-3, 200, 1, 10_000_000).unwrap();
        assert_eq!(zero.estimate, 1.0);
        let near = brownian_fk_estimate(
            |y| phi_closed_form(y.max(0.0), 1.0, 1.0).unwrap(),
            1e-4,
            1.0,
            1.0,
            1e-3,
            2000,
            1,
            u64::MAX,
        )
        .unwrap();
        // Discrete monitoring lets paths slip past 0, an O(√dt) effect.
        assert!(1.0 - near.estimate <= 1e-3f64.sqrt(), "{near:?}");
        assert!(brownian_fk_estimate(|_| 0.0, 1.0, 1.0, 1.0, 1e-2, 10, 1, 10).is_err());
        assert!(matches!(
            brownian_fk_estimate(|_| 0.0, 5.0, 1.0, 1.0, 1e-3, 10, 1, 10),
            Err(DiagError::PathBudgetExceeded { budget: 10 })
        ));
    }

    #[test]
    fn brownian_fk_matches_profile() {
        let prof = solve_phi_shooting(1.0, 1.0, 30.0, 1e-12).unwrap();
        let est = brownian_fk_estimate(|y| prof.eval(y), 1.0, 1.0, 1.0, 1e-3, 20_000, 8, u64::MAX)
            .unwrap();
        let want = phi_closed_form(1.0, 1.0, 1.0).unwrap();
        let allowance = 3.5 * est.std_error + 1e-3f64.sqrt();
        assert!(
            (est.estimate - want).abs() <= allowance,
            "{est:?} vs {want}"
        );
    }
}
