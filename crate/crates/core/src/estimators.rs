//! Confidence intervals, power-law fits, KS distances and plateau extraction.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("bad counts: {hits} hits out of {trials} trials")]
    BadCounts { hits: u64, trials: u64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub count: u64,
    /// Upper bound on systematic bias, e.g. the censoring mass `q[gen_cap]`.
    pub bias_bound: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimateTable {
    pub rows: Vec<EstimateRow>,
}

impl EstimateTable {
    pub fn push(&mut self, row: EstimateRow) {
        debug_assert!(row.std_error >= 0.0);
        self.rows.push(row);
    }

    /// Row for a Bernoulli frequency: estimate `hits/trials`, binomial SE.
    pub fn push_proportion(
        &mut self,
        label: impl Into<String>,
        hits: u64,
        trials: u64,
        bias_bound: f64,
        provenance: impl Into<String>,
    ) -> Result<(), EstimatorError> {
        if trials == 0 || hits > trials {
            return Err(EstimatorError::BadCounts { hits, trials });
        }
        let p = hits as f64 / trials as f64;
        self.push(EstimateRow {
            label: label.into(),
            estimate: p,
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
            count: trials,
            bias_bound,
            provenance: provenance.into(),
        });
        Ok(())
    }
}

/// Wilson score interval for a binomial proportion.
pub fn bernoulli_ci(hits: u64, trials: u64, level: f64) -> Result<(f64, f64), EstimatorError> {
    if trials == 0 || hits > trials {
        return Err(EstimatorError::BadCounts { hits, trials });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::DegenerateInput(format!(
            "level {level} not in (0,1)"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let low = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0).min(p)
    };
    let high = if hits == trials {
        1.0
    } else {
        (centre + half).min(1.0).max(p)
    };
    Ok((low, high))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln p` on `ln x`.
pub fn tail_exponent_fit(points: &[(f64, f64)]) -> Result<PowerFit, EstimatorError> {
    if points.len() < 3 {
        return Err(EstimatorError::DegenerateInput(format!(
            "{} points, need 3",
            points.len()
        )));
    }
    if points.iter().any(|&(x, p)| !(x > 0.0) || !(p > 0.0)) {
        return Err(EstimatorError::DegenerateInput(
            "non-positive coordinate".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, p)| (x.ln(), p.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|l| l.0).sum::<f64>() / n;
    let my = logs.iter().map(|l| l.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|l| (l.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|l| (l.0 - mx) * (l.1 - my)).sum();
    let syy: f64 = logs.iter().map(|l| (l.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(EstimatorError::DegenerateInput("all x equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // Constant data is fitted exactly.
    let r_squared = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    Ok(PowerFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Right-continuous step CDF: `F(x)` is the value at the last breakpoint
/// `≤ x`, and 0 before the first one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCdf {
    points: Vec<(f64, f64)>,
}

impl StepCdf {
    /// Breakpoints are sorted by position; later duplicates win.
    pub fn new(mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            match dedup.last_mut() {
                Some(last) if last.0 == p.0 => *last = p,
                _ => dedup.push(p),
            }
        }
        Self { points: dedup }
    }

    pub fn empirical(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        Self::new(
            sorted
                .iter()
                .enumerate()
                .map(|(i, &x)| (x, (i + 1) as f64 / n))
                .collect(),
        )
    }

    /// The CDF of a point mass.
    pub fn heaviside(at: f64) -> Self {
        Self::new(vec![(at, 1.0)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.0 <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    fn is_valid(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.0.is_finite() && (0.0..=1.0).contains(&p.1))
            && self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// `sup_x |A(x) - B(x)|`, attained at one of the union breakpoints.
pub fn ks_distance(a: &StepCdf, b: &StepCdf) -> Result<f64, EstimatorError> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(EstimatorError::GridMismatch("empty CDF".into()));
    }
    if !a.is_valid() || !b.is_valid() {
        return Err(EstimatorError::DegenerateInput(
            "CDF not non-decreasing into [0,1]".into(),
        ));
    }
    let sup = a
        .points
        .iter()
        .chain(&b.points)
        .map(|&(x, _)| (a.eval(x) - b.eval(x)).abs())
        .fold(0.0, f64::max);
    Ok(sup)
}

/// Sup distance between two CDFs tabulated on the same grid.
pub fn grid_sup_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64, EstimatorError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(p, q)| p.0 != q.0) {
        return Err(EstimatorError::GridMismatch(format!(
            "grids of length {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(p, q)| (p.1 - q.1).abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Trend {
    Approaching,
    Drifting,
}

/// Last-point estimate of a plateau, flagged `Approaching` when successive
/// differences shrink in magnitude.
pub fn plateau_constant(points: &[(f64, f64)]) -> Result<(f64, Trend), EstimatorError> {
    if points.len() < 4 {
        return Err(EstimatorError::DegenerateInput(format!(
            "{} points, need 4",
            points.len()
        )));
    }
    let (first, last) = (points[0].0, points[points.len() - 1].0);
    if !(first > 0.0) || last < 4.0 * first {
        return Err(EstimatorError::DegenerateInput(
            "points must span two doublings".into(),
        ));
    }
    let diffs: Vec<f64> = points.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let slack = 1e-12 * scale.max(1.0);
    let shrinking = diffs.windows(2).all(|d| d[1] <= d[0] + slack);
    let trend = if shrinking {
        Trend::Approaching
    } else {
        Trend::Drifting
    };
    Ok((points[points.len() - 1].1, trend))
}
