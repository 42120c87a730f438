//! Offspring and step laws of the branching random walk.
//!
//! Both laws have finite support. The offspring law carries the nonlinear
//! maps built from its generating function:
//!
//! ```text
//! Q(s) = 1 - Σ p_i (1 - s)^i,   h(s) = s - Q(s),   H(s) = h(s) / s
//! ```
//!
//! Near `s = 0` the map `h` is evaluated from the binomial moments
//! `m_j = Σ p_i C(i, j)` as `h(s) = Σ_{j≥2} (-1)^j m_j s^j`, which keeps full
//! relative precision where `1 - f(1 - s)` would cancel.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

/// Mass must be within this of 1 before renormalization.
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Mean tolerance for criticality (offspring) and zero drift (steps).
pub const MEAN_TOLERANCE: f64 = 1e-9;
const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest offspring count kept for the truncated Poisson and geometric laws.
pub const TRUNCATION_K: u64 = 60;
/// Smallest accepted cutoff for the truncated heavy-tailed step law.
pub const HEAVY_MIN_CUTOFF: i64 = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("offspring mean is {0}, the process is not critical")]
    NotCritical(f64),
    #[error("step mean is {0}, the walk has drift")]
    NonzeroDrift(f64),
    #[error("variance {0} is not positive")]
    DegenerateVariance(f64),
    #[error("invalid probability {value} at {key}")]
    InvalidProbability { key: i64, value: f64 },
    #[error("cutoff {0} is below the minimum {HEAVY_MIN_CUTOFF}")]
    CutoffTooSmall(i64),
    #[error("argument {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("bad law spec `{spec}`: {reason}")]
    BadSpec { spec: String, reason: String },
}

/// Compensated (Neumaier) summation.
pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_probability(key: i64, value: f64) -> Result<(), LawError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(LawError::InvalidProbability { key, value })
    }
}

/// Critical offspring law `{p_k}` with finite support.
#[derive(Clone)]
pub struct OffspringLaw {
    /// Dense probabilities indexed by offspring count.
    probs: Vec<f64>,
    /// Nonzero support entries, used for batched sampling.
    support: Vec<(u64, f64)>,
    variance: f64,
    third_moment: f64,
    /// `(-1)^j m_j` for j = 2..=kmax, the power series of `h` in `s`.
    h_coeffs: Vec<f64>,
    /// Below this argument `h` is evaluated from `h_coeffs`.
    series_cutoff: f64,
    truncation_error: f64,
    alias: WeightedAliasIndex<f64>,
}

impl fmt::Debug for OffspringLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OffspringLaw")
            .field("support", &self.support)
            .field("variance", &self.variance)
            .field("third_moment", &self.third_moment)
            .field("truncation_error", &self.truncation_error)
            .finish()
    }
}

impl PartialEq for OffspringLaw {
    fn eq(&self, other: &Self) -> bool {
        self.probs == other.probs
    }
}

impl OffspringLaw {
    /// Validates a table `k -> p_k`. Mass is renormalized when it is within
    /// [`MASS_TOLERANCE`] of 1; the mean is never adjusted.
    pub fn new<I>(table: I) -> Result<Self, LawError>
    where
        I: IntoIterator<Item = (u64, f64)>,
    {
        Self::with_truncation(table, 0.0)
    }

    fn with_truncation<I>(table: I, truncation_error: f64) -> Result<Self, LawError>
    where
        I: IntoIterator<Item = (u64, f64)>,
    {
        let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
        for (k, p) in table {
            check_probability(k as i64, p)?;
            *merged.entry(k).or_insert(0.0) += p;
        }
        let mass = neumaier_sum(merged.values().copied());
        if !mass.is_finite() || (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(LawError::NotNormalized(mass));
        }
        let kmax = merged
            .iter()
            .rev()
            .find(|(_, &p)| p > 0.0)
            .map(|(&k, _)| k)
            .unwrap_or(0);
        let mut probs = vec![0.0; kmax as usize + 1];
        for (&k, &p) in &merged {
            if k <= kmax {
                probs[k as usize] = p / mass;
            }
        }
        let mean = neumaier_sum(probs.iter().enumerate().map(|(k, p)| k as f64 * p));
        if (mean - 1.0).abs() > MEAN_TOLERANCE {
            return Err(LawError::NotCritical(mean));
        }
        let second = neumaier_sum(probs.iter().enumerate().map(|(k, p)| (k * k) as f64 * p));
        let variance = second - 1.0;
        if variance <= VARIANCE_FLOOR {
            return Err(LawError::DegenerateVariance(variance.max(0.0)));
        }
        let third_moment = neumaier_sum(
            probs
                .iter()
                .enumerate()
                .map(|(k, p)| (k as f64).powi(3) * p),
        );

        // Binomial moments m_j = Σ_i p_i C(i, j), j >= 2.
        let mut h_coeffs = Vec::with_capacity(kmax as usize);
        for j in 2..=kmax as usize {
            let m_j = neumaier_sum(
                probs
                    .iter()
                    .enumerate()
                    .skip(j)
                    .map(|(i, p)| p * binomial_coefficient(i as u64, j as u64)),
            );
            h_coeffs.push(if j % 2 == 0 { m_j } else { -m_j });
        }
        let series_cutoff = (1.0 / kmax.max(2) as f64).min(0.5);

        let support: Vec<(u64, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| (k as u64, p))
            .collect();
        let alias = WeightedAliasIndex::new(support.iter().map(|&(_, p)| p).collect())
            .expect("validated weights are finite and positive");

        Ok(Self {
            probs,
            support,
            variance,
            third_moment,
            h_coeffs,
            series_cutoff,
            truncation_error,
            alias,
        })
    }

    /// Double-or-nothing: 0 or 2 offspring with probability 1/2 each.
    pub fn double_or_nothing() -> Self {
        Self::new([(0, 0.5), (2, 0.5)]).expect("double-or-nothing is valid")
    }

    /// Geometric `p_k = 2^-(k+1)`, truncated at [`TRUNCATION_K`] and renormalized.
    pub fn geometric() -> Self {
        let table: Vec<(u64, f64)> = (0..=TRUNCATION_K)
            .map(|k| (k, 0.5_f64.powi(k as i32 + 1)))
            .collect();
        let kept = neumaier_sum(table.iter().map(|&(_, p)| p));
        let renorm = table.into_iter().map(|(k, p)| (k, p / kept));
        let dropped = 0.5_f64.powi(TRUNCATION_K as i32 + 1);
        Self::with_truncation(renorm, dropped).expect("truncated geometric is valid")
    }

    /// Poisson(1), truncated at [`TRUNCATION_K`] and renormalized.
    pub fn poisson() -> Self {
        let mut table = Vec::with_capacity(TRUNCATION_K as usize + 1);
        let mut p = (-1.0_f64).exp();
        for k in 0..=TRUNCATION_K {
            if k > 0 {
                p /= k as f64;
            }
            table.push((k, p));
        }
        let mut dropped = 0.0;
        for k in TRUNCATION_K + 1..TRUNCATION_K + 40 {
            p /= k as f64;
            dropped += p;
        }
        let kept = neumaier_sum(table.iter().map(|&(_, p)| p));
        let renorm = table.into_iter().map(|(k, p)| (k, p / kept));
        Self::with_truncation(renorm, dropped).expect("truncated Poisson is valid")
    }

    /// Parses `don`, `geom`, `poisson` or `table:k1=p1,k2=p2,...`.
    pub fn parse_spec(spec: &str) -> Result<Self, LawError> {
        let bad = |reason: &str| LawError::BadSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        match spec.trim() {
            "don" => Ok(Self::double_or_nothing()),
            "geom" => Ok(Self::geometric()),
            "poisson" => Ok(Self::poisson()),
            s => {
                let body = s
                    .strip_prefix("table:")
                    .ok_or_else(|| bad("expected don, geom, poisson or table:k=p,..."))?;
                let mut table = Vec::new();
                for pair in body.split(',').filter(|p| !p.trim().is_empty()) {
                    let (k, p) = pair.split_once('=').ok_or_else(|| bad("expected k=p"))?;
                    let k: u64 = k.trim().parse().map_err(|_| bad("offspring count"))?;
                    let p: f64 = p.trim().parse().map_err(|_| bad("probability"))?;
                    table.push((k, p));
                }
                if table.is_empty() {
                    return Err(bad("empty table"));
                }
                Self::new(table)
            }
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p0(&self) -> f64 {
        self.probs[0]
    }

    /// σ²
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Σ k³ p_k
    pub fn third_moment(&self) -> f64 {
        self.third_moment
    }

    /// Mass removed before renormalization (0 for exact tables).
    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    pub fn max_offspring(&self) -> u64 {
        self.probs.len() as u64 - 1
    }

    /// Generating function `f(t) = Σ p_k t^k`.
    pub fn pgf(&self, t: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, &p| acc * t + p)
    }

    /// `h(s) = s - Q(s)` without range checks.
    pub(crate) fn h_unchecked(&self, s: f64) -> f64 {
        if s <= self.series_cutoff {
            let tail = self.h_coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c);
            s * s * tail
        } else {
            s - (1.0 - self.pgf(1.0 - s))
        }
    }

    /// `Q(s)` without range checks; the hot path of every sweep.
    #[inline]
    pub(crate) fn q_unchecked(&self, s: f64) -> f64 {
        if s <= self.series_cutoff {
            s - self.h_unchecked(s)
        } else {
            1.0 - self.pgf(1.0 - s)
        }
    }

    pub fn q(&self, s: f64) -> Result<f64, LawError> {
        check_unit(s)?;
        Ok(self.q_unchecked(s).clamp(0.0, s))
    }

    pub fn h(&self, s: f64) -> Result<f64, LawError> {
        check_unit(s)?;
        Ok(self.h_unchecked(s).max(0.0))
    }

    /// `H(s) = h(s)/s`, with `H(0) = 0`.
    pub fn big_h(&self, s: f64) -> Result<f64, LawError> {
        check_unit(s)?;
        Ok(self.big_h_unchecked(s))
    }

    pub(crate) fn big_h_unchecked(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            (self.h_unchecked(s) / s).max(0.0)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.support[self.alias.sample(rng)].0
    }

    /// Total offspring of `count` independent parents.
    pub fn sample_total<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> u64 {
        if count <= 2 * self.support.len() as u64 {
            return (0..count).map(|_| self.sample(rng)).sum();
        }
        let mut total = 0u64;
        multinomial(count, &self.support, rng, |k, n| total += k * n);
        total
    }
}

fn check_unit(s: f64) -> Result<(), LawError> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(LawError::OutOfRange(s))
    }
}

fn binomial_coefficient(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Splits `count` trials over `cells` by sequential conditional binomials,
/// calling `emit(value, n)` for every cell with a nonzero count.
pub(crate) fn multinomial<T: Copy, R: Rng + ?Sized>(
    count: u64,
    cells: &[(T, f64)],
    rng: &mut R,
    mut emit: impl FnMut(T, u64),
) {
    let mut remaining = count;
    let mut mass_left = 1.0_f64;
    for (i, &(value, p)) in cells.iter().enumerate() {
        if remaining == 0 {
            return;
        }
        if i + 1 == cells.len() {
            emit(value, remaining);
            return;
        }
        let cond = (p / mass_left).clamp(0.0, 1.0);
        let n = if cond >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, cond)
                .expect("conditional probability in [0, 1]")
                .sample(rng)
        };
        if n > 0 {
            emit(value, n);
        }
        remaining -= n;
        mass_left -= p;
    }
}

/// Drift-free step law `{a_x}` on the integers with finite support.
#[derive(Clone)]
pub struct StepLaw {
    /// Nonzero entries sorted by position.
    support: Vec<(i64, f64)>,
    variance: f64,
    moment_order: f64,
    /// `upper_tail[i] = Σ_{j ≥ i} a_{support[j]}`.
    upper_tail: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
}

impl fmt::Debug for StepLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("StepLaw");
        if self.support.len() <= 16 {
            d.field("support", &self.support);
        } else {
            d.field("support_len", &self.support.len());
        }
        d.field("variance", &self.variance)
            .field("moment_order", &self.moment_order)
            .finish()
    }
}

impl PartialEq for StepLaw {
    fn eq(&self, other: &Self) -> bool {
        self.support == other.support
    }
}

impl StepLaw {
    pub fn new<I>(table: I) -> Result<Self, LawError>
    where
        I: IntoIterator<Item = (i64, f64)>,
    {
        Self::with_moment_order(table, f64::INFINITY)
    }

    fn with_moment_order<I>(table: I, moment_order: f64) -> Result<Self, LawError>
    where
        I: IntoIterator<Item = (i64, f64)>,
    {
        let mut merged: BTreeMap<i64, f64> = BTreeMap::new();
        for (x, a) in table {
            check_probability(x, a)?;
            *merged.entry(x).or_insert(0.0) += a;
        }
        let mass = neumaier_sum(merged.values().copied());
        if !mass.is_finite() || (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(LawError::NotNormalized(mass));
        }
        let support: Vec<(i64, f64)> = merged
            .into_iter()
            .filter(|&(_, a)| a > 0.0)
            .map(|(x, a)| (x, a / mass))
            .collect();
        let mean = neumaier_sum(support.iter().map(|&(x, a)| x as f64 * a));
        if mean.abs() > MEAN_TOLERANCE {
            return Err(LawError::NonzeroDrift(mean));
        }
        let variance = neumaier_sum(support.iter().map(|&(x, a)| (x as f64).powi(2) * a));
        if variance <= VARIANCE_FLOOR {
            return Err(LawError::DegenerateVariance(variance));
        }
        let mut upper_tail = vec![0.0; support.len() + 1];
        let mut acc = 0.0;
        for i in (0..support.len()).rev() {
            acc += support[i].1;
            upper_tail[i] = acc;
        }
        let alias = WeightedAliasIndex::new(support.iter().map(|&(_, a)| a).collect())
            .expect("validated weights are finite and positive");
        Ok(Self {
            support,
            variance,
            moment_order,
            upper_tail,
            alias,
        })
    }

    /// ±1 with probability 1/2 each.
    pub fn rademacher() -> Self {
        Self::new([(-1, 0.5), (1, 0.5)]).expect("rademacher is valid")
    }

    /// Holds with probability `hold`, otherwise ±1 with equal probability.
    pub fn lazy(hold: f64) -> Result<Self, LawError> {
        if !(0.0..1.0).contains(&hold) {
            return Err(LawError::OutOfRange(hold));
        }
        Self::new([(-1, (1.0 - hold) / 2.0), (0, hold), (1, (1.0 - hold) / 2.0)])
    }

    /// Symmetric law `a_x ∝ |x|^-(5-ε)` on `1 ≤ |x| ≤ cutoff`; its untruncated
    /// version has an infinite fourth moment.
    pub fn heavy_tail(epsilon: f64, cutoff: i64) -> Result<Self, LawError> {
        if !(epsilon > 0.0 && epsilon < 2.0) {
            return Err(LawError::BadSpec {
                spec: format!("heavy:eps={epsilon}"),
                reason: "eps must lie in (0, 2)".into(),
            });
        }
        if cutoff < HEAVY_MIN_CUTOFF {
            return Err(LawError::CutoffTooSmall(cutoff));
        }
        let exponent = 5.0 - epsilon;
        // Smallest terms first.
        let weights: Vec<f64> = (1..=cutoff)
            .rev()
            .map(|x| (x as f64).powf(-exponent))
            .collect();
        let half = neumaier_sum(weights.iter().copied());
        let total = 2.0 * half;
        let mut table = Vec::with_capacity(2 * cutoff as usize);
        for (i, w) in weights.iter().enumerate() {
            let x = cutoff - i as i64;
            table.push((x, w / total));
            table.push((-x, w / total));
        }
        Self::with_moment_order(table, 4.0 - epsilon)
    }

    /// Parses `rademacher`, `lazy:q=Q`, `table:x1=a1,...` or `heavy:eps=E,cutoff=N`.
    pub fn parse_spec(spec: &str) -> Result<Self, LawError> {
        let bad = |reason: &str| LawError::BadSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let s = spec.trim();
        if s == "rademacher" {
            return Ok(Self::rademacher());
        }
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| bad("expected rademacher, lazy:q=Q, table:... or heavy:..."))?;
        let pairs: Vec<(&str, &str)> = body
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.split_once('=').map(|(k, v)| (k.trim(), v.trim())))
            .collect::<Option<_>>()
            .ok_or_else(|| bad("expected key=value pairs"))?;
        let lookup = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        match kind {
            "lazy" => {
                let q: f64 = lookup("q")
                    .ok_or_else(|| bad("missing q"))?
                    .parse()
                    .map_err(|_| bad("q must be a number"))?;
                Self::lazy(q)
            }
            "heavy" => {
                let eps: f64 = lookup("eps")
                    .ok_or_else(|| bad("missing eps"))?
                    .parse()
                    .map_err(|_| bad("eps must be a number"))?;
                let cutoff: i64 = lookup("cutoff")
                    .ok_or_else(|| bad("missing cutoff"))?
                    .parse()
                    .map_err(|_| bad("cutoff must be an integer"))?;
                Self::heavy_tail(eps, cutoff)
            }
            "table" => {
                let mut table = Vec::new();
                for (x, a) in pairs {
                    let x: i64 = x.parse().map_err(|_| bad("step must be an integer"))?;
                    let a: f64 = a.parse().map_err(|_| bad("probability"))?;
                    table.push((x, a));
                }
                if table.is_empty() {
                    return Err(bad("empty table"));
                }
                Self::new(table)
            }
            _ => Err(bad("unknown step law")),
        }
    }

    pub fn support(&self) -> &[(i64, f64)] {
        &self.support
    }

    pub fn prob(&self, x: i64) -> f64 {
        self.support
            .binary_search_by_key(&x, |&(y, _)| y)
            .map(|i| self.support[i].1)
            .unwrap_or(0.0)
    }

    /// η²
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Order of the highest moment the law is meant to have; infinite for
    /// genuinely finite laws, `4 - ε` for the truncated heavy tail.
    pub fn moment_order(&self) -> f64 {
        self.moment_order
    }

    pub fn min_step(&self) -> i64 {
        self.support[0].0
    }

    pub fn max_step(&self) -> i64 {
        self.support[self.support.len() - 1].0
    }

    /// `P(X ≥ x)`.
    pub fn upper_tail(&self, x: i64) -> f64 {
        let i = self.support.partition_point(|&(y, _)| y < x);
        self.upper_tail[i]
    }

    /// `P(X ≤ x)`.
    pub fn lower_tail(&self, x: i64) -> f64 {
        1.0 - self.upper_tail(x + 1)
    }

    /// The law of `-X`.
    pub fn reflected(&self) -> Self {
        Self::with_moment_order(
            self.support.iter().map(|&(x, a)| (-x, a)),
            self.moment_order,
        )
        .expect("reflection of a valid law is valid")
    }

    pub fn is_symmetric(&self) -> bool {
        self.support
            .iter()
            .zip(self.support.iter().rev())
            .all(|(&(x, a), &(y, b))| x == -y && a == b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        self.support[self.alias.sample(rng)].0
    }

    /// Distributes `count` independent steps over the support, calling
    /// `emit(step, n)` for each step value drawn `n > 0` times.
    pub fn scatter<R: Rng + ?Sized>(
        &self,
        count: u64,
        rng: &mut R,
        mut emit: impl FnMut(i64, u64),
    ) {
        if count <= 2 * self.support.len() as u64 {
            for _ in 0..count {
                emit(self.sample(rng), 1);
            }
        } else {
            multinomial(count, &self.support, rng, emit);
        }
    }
}

/// The pair of laws together with the constants of the tail asymptotics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub offspring: OffspringLaw,
    pub step: StepLaw,
    /// `C = 6η²/σ²`
    pub c_const: f64,
    /// `β = σ/(√6 η)`
    pub beta: f64,
}

impl ModelParams {
    pub fn new(offspring: OffspringLaw, step: StepLaw) -> Self {
        let sigma2 = offspring.variance();
        let eta2 = step.variance();
        let c_const = 6.0 * eta2 / sigma2;
        let beta = (sigma2 / (6.0 * eta2)).sqrt();
        Self {
            offspring,
            step,
            c_const,
            beta,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.offspring.variance().sqrt()
    }

    pub fn eta(&self) -> f64 {
        self.step.variance().sqrt()
    }

    /// Rademacher steps with double-or-nothing branching.
    pub fn reference() -> Self {
        Self::new(OffspringLaw::double_or_nothing(), StepLaw::rademacher())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn double_or_nothing_moments() {
        let law = OffspringLaw::new([(0, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(law.variance(), 1.0);
        assert_eq!(law.third_moment(), 4.0);
    }

    #[test]
    fn geometric_variance_from_finite_sum() {
        // Oracle: exact finite sums of the renormalized truncated table.
        let raw: Vec<f64> = (0..=60).map(|k| 0.5_f64.powi(k + 1)).collect();
        let total: f64 = raw.iter().sum();
        let second: f64 = raw
            .iter()
            .enumerate()
            .map(|(k, p)| (k * k) as f64 * p / total)
            .sum();
        let law = OffspringLaw::geometric();
        assert!((law.variance() - (second - 1.0)).abs() < 1e-12);
        assert!((law.variance() - 2.0).abs() < 1e-12);
        assert!(law.truncation_error() > 0.0 && law.truncation_error() < 1e-17);
        assert!(OffspringLaw::poisson().truncation_error() > 0.0);
    }

    #[test]
    fn offspring_errors() {
        assert!(matches!(
            OffspringLaw::new([(1, 1.0)]),
            Err(LawError::DegenerateVariance(_))
        ));
        assert!(matches!(
            OffspringLaw::new([(0, 0.5), (1, 0.5)]),
            Err(LawError::NotCritical(_))
        ));
        assert!(matches!(
            OffspringLaw::new([(0, 0.5), (2, 0.4)]),
            Err(LawError::NotNormalized(_))
        ));
        assert!(matches!(
            OffspringLaw::new([(0, -0.5), (2, 1.5)]),
            Err(LawError::InvalidProbability { .. })
        ));
    }

    #[test]
    fn step_laws() {
        assert_eq!(StepLaw::rademacher().variance(), 1.0);
        let lazy = StepLaw::new([(-1, 0.25), (0, 0.5), (1, 0.25)]).unwrap();
        assert_eq!(lazy.variance(), 0.5);
        assert_eq!(lazy, StepLaw::lazy(0.5).unwrap());
        assert!(matches!(
            StepLaw::new([(-1, 0.75), (1, 0.25)]),
            Err(LawError::NonzeroDrift(_))
        ));
        assert!(matches!(
            StepLaw::new([(0, 1.0)]),
            Err(LawError::DegenerateVariance(_))
        ));
        assert_eq!(StepLaw::rademacher().moment_order(), f64::INFINITY);
    }

    #[test]
    fn heavy_tail_law() {
        let law = StepLaw::heavy_tail(0.5, 1_000_000).unwrap();
        let mass = neumaier_sum(law.support().iter().map(|&(_, a)| a));
        let mean = neumaier_sum(law.support().iter().map(|&(x, a)| x as f64 * a));
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(mean.abs() < 1e-12);
        assert!(law.is_symmetric());
        assert_eq!(law.prob(17), law.prob(-17));
        assert_eq!(law.moment_order(), 3.5);
        assert!(matches!(
            StepLaw::heavy_tail(0.5, 999),
            Err(LawError::CutoffTooSmall(999))
        ));
    }

    #[test]
    fn q_h_values() {
        let law = OffspringLaw::double_or_nothing();
        assert_eq!(law.q(0.0).unwrap(), 0.0);
        assert_eq!(law.q(1.0).unwrap(), 1.0 - law.p0());
        assert!((law.q(0.5).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(law.big_h(0.0).unwrap(), 0.0);
        assert!((law.big_h(1.0).unwrap() - law.p0()).abs() < 1e-15);
        assert!((law.big_h(0.4).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(law.q(1.5), Err(LawError::OutOfRange(_))));
        assert!(matches!(law.h(-0.1), Err(LawError::OutOfRange(_))));
        for law in [OffspringLaw::poisson(), OffspringLaw::geometric()] {
            assert!((law.big_h(1.0).unwrap() - law.p0()).abs() < 1e-13);
        }
    }

    #[test]
    fn series_and_direct_forms_agree() {
        let laws = [
            OffspringLaw::double_or_nothing(),
            OffspringLaw::poisson(),
            OffspringLaw::geometric(),
            OffspringLaw::new([(0, 0.5), (1, 0.3), (3, 0.1), (4, 0.1)]).unwrap(),
        ];
        for law in &laws {
            for i in 1..=40 {
                let s = law.series_cutoff * i as f64 / 40.0;
                let direct = s - (1.0 - law.pgf(1.0 - s));
                let series = law.h_unchecked(s);
                assert!((direct - series).abs() < 1e-14, "{s}: {direct} vs {series}");
            }
        }
    }

    #[test]
    fn h_quadratic_near_zero_with_third_moment_bound() {
        // |h(s) - σ²s²/2| ≤ E[C(X,3)] s³ ≤ E[X³]/6 s³ by the Taylor remainder.
        let laws = [
            OffspringLaw::double_or_nothing(),
            OffspringLaw::poisson(),
            OffspringLaw::geometric(),
            OffspringLaw::new([(0, 0.5), (1, 0.3), (3, 0.1), (4, 0.1)]).unwrap(),
        ];
        for law in &laws {
            let bound = law.third_moment() / (3.0 * law.variance());
            for e in 4..=12 {
                let s = 10f64.powi(-e) * 3.0;
                let lead = law.variance() * s * s / 2.0;
                let rel = (law.h(s).unwrap() / lead - 1.0).abs();
                assert!(rel <= bound * s * (1.0 + 1e-6) + 1e-12, "s={s} rel={rel}");
            }
        }
    }

    #[test]
    fn q_concave_monotone_and_h_increasing_on_grid() {
        for law in [
            OffspringLaw::double_or_nothing(),
            OffspringLaw::poisson(),
            OffspringLaw::geometric(),
        ] {
            let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
            let q: Vec<f64> = grid.iter().map(|&s| law.q(s).unwrap()).collect();
            let hh: Vec<f64> = grid.iter().map(|&s| law.big_h(s).unwrap()).collect();
            for i in 0..grid.len() {
                assert!(q[i] <= grid[i]);
                if i > 0 {
                    assert!(q[i] >= q[i - 1]);
                    assert!(hh[i] >= hh[i - 1] - 1e-15);
                }
                if i > 0 && i + 1 < grid.len() {
                    assert!(q[i] >= 0.5 * (q[i - 1] + q[i + 1]) - 1e-14);
                }
            }
        }
    }

    #[test]
    fn constants_are_reciprocal() {
        for (o, s) in [
            (OffspringLaw::double_or_nothing(), StepLaw::rademacher()),
            (OffspringLaw::poisson(), StepLaw::lazy(0.3).unwrap()),
            (
                OffspringLaw::geometric(),
                StepLaw::new([(-2, 0.25), (-1, 0.25), (1, 0.25), (2, 0.25)]).unwrap(),
            ),
        ] {
            let p = ModelParams::new(o, s);
            assert!((p.c_const * p.beta * p.beta - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_means_and_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let law = OffspringLaw::double_or_nothing();
        let n = 1_000_000u64;
        let sum: u64 = (0..n).map(|_| law.sample(&mut rng)).sum();
        let mean = sum as f64 / n as f64;
        let se = (law.variance() / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se);

        let step = StepLaw::rademacher();
        let ups = (0..n).filter(|_| step.sample(&mut rng) == 1).count() as f64 / n as f64;
        assert!((ups - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let law = OffspringLaw::poisson();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000).map(|_| law.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    fn chi_square_passes(counts: &[u64], probs: &[f64], n: u64) -> bool {
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .filter(|(_, &p)| p * n as f64 > 5.0)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let dof = probs.iter().filter(|&&p| p * n as f64 > 5.0).count() - 1;
        let crit = ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.9999);
        stat < crit
    }

    #[test]
    fn chi_square_goodness_of_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000u64;
        let law = OffspringLaw::poisson();
        let mut counts = vec![0u64; law.probs().len()];
        for _ in 0..n {
            counts[law.sample(&mut rng) as usize] += 1;
        }
        assert!(chi_square_passes(&counts, law.probs(), n));

        let step = StepLaw::new([(-3, 0.1), (-1, 0.425), (1, 0.325), (2, 0.1), (4, 0.05)]).unwrap();
        let mut counts = vec![0u64; step.support().len()];
        for _ in 0..n {
            let x = step.sample(&mut rng);
            let i = step.support().iter().position(|&(y, _)| y == x).unwrap();
            counts[i] += 1;
        }
        let probs: Vec<f64> = step.support().iter().map(|&(_, a)| a).collect();
        assert!(chi_square_passes(&counts, &probs, n));
    }

    #[test]
    fn batched_scatter_matches_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = StepLaw::new([(-2, 0.2), (-1, 0.3), (1, 0.3), (2, 0.2)]).unwrap();
        let batch = 1000u64;
        let reps = 2000u64;
        let mut counts = [0u64; 4];
        for _ in 0..reps {
            let mut seen = 0;
            step.scatter(batch, &mut rng, |x, c| {
                let i = step.support().iter().position(|&(y, _)| y == x).unwrap();
                counts[i] += c;
                seen += c;
            });
            assert_eq!(seen, batch);
        }
        let probs: Vec<f64> = step.support().iter().map(|&(_, a)| a).collect();
        assert!(chi_square_passes(&counts, &probs, batch * reps));

        let law = OffspringLaw::poisson();
        let n = 5000u64;
        let totals: Vec<f64> = (0..400)
            .map(|_| law.sample_total(n, &mut rng) as f64)
            .collect();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let se = (law.variance() * n as f64 / totals.len() as f64).sqrt();
        assert!((mean - n as f64).abs() < 4.0 * se);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            OffspringLaw::parse_spec("don").unwrap(),
            OffspringLaw::double_or_nothing()
        );
        assert_eq!(
            OffspringLaw::parse_spec("table:0=0.25,1=0.5,2=0.25")
                .unwrap()
                .variance(),
            0.5
        );
        assert!(matches!(
            OffspringLaw::parse_spec("table:1=1.0"),
            Err(LawError::DegenerateVariance(_))
        ));
        assert!(matches!(
            OffspringLaw::parse_spec("bogus"),
            Err(LawError::BadSpec { .. })
        ));
        assert_eq!(
            StepLaw::parse_spec("rademacher").unwrap(),
            StepLaw::rademacher()
        );
        assert_eq!(StepLaw::parse_spec("lazy:q=0.5").unwrap().variance(), 0.5);
        assert_eq!(
            StepLaw::parse_spec("table:-2=0.25,-1=0.25,1=0.25,2=0.25")
                .unwrap()
                .variance(),
            2.5
        );
        assert_eq!(
            StepLaw::parse_spec("heavy:eps=0.5,cutoff=1000")
                .unwrap()
                .max_step(),
            1000
        );
        assert!(matches!(
            StepLaw::parse_spec("lazy:p=0.5"),
            Err(LawError::BadSpec { .. })
        ));
    }

    #[test]
    fn tails_and_reflection() {
        let step = StepLaw::new([(-3, 0.1), (-1, 0.425), (1, 0.325), (2, 0.1), (4, 0.05)]).unwrap();
        assert!((step.upper_tail(2) - 0.15).abs() < 1e-15);
        assert!((step.upper_tail(-10) - 1.0).abs() < 1e-15);
        assert_eq!(step.upper_tail(5), 0.0);
        assert!((step.lower_tail(-1) - 0.525).abs() < 1e-15);
        let r = step.reflected();
        assert_eq!(r.prob(3), 0.1);
        assert_eq!(r.prob(-4), 0.05);
    }
}
