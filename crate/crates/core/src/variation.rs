//! Discrete β-variation sums and dyadic convergence studies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::stats;

/// `S_{β,n} = Σ_i |x_{i+1} - x_i|^β` over `n` increments on `interval`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationSum {
    pub beta: f64,
    pub interval: (f64, f64),
    pub n: usize,
    pub value: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 1.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("variation exponent must be >= 1, got {beta}")))
    }
}

fn raw_sum(samples: &[f64], beta: f64) -> f64 {
    samples.windows(2).map(|w| (w[1] - w[0]).abs().powf(beta)).sum()
}

/// β-variation sum of samples on a uniform partition of `[0, 1]`.
pub fn variation_sum(samples: &[f64], beta: f64) -> Result<VariationSum> {
    variation_sum_on(samples, beta, (0.0, 1.0))
}

/// β-variation sum of samples on a uniform partition of `interval`.
pub fn variation_sum_on(samples: &[f64], beta: f64, interval: (f64, f64)) -> Result<VariationSum> {
    check_beta(beta)?;
    if samples.len() < 2 {
        return Err(config("variation sum needs at least two samples"));
    }
    Ok(VariationSum { beta, interval, n: samples.len() - 1, value: raw_sum(samples, beta) })
}

/// Splits the partition of `[0, 1]` at `midpoint_index` into two equal halves.
pub fn additivity_check(
    samples: &[f64],
    beta: f64,
    midpoint_index: usize,
) -> Result<(VariationSum, VariationSum, VariationSum)> {
    check_beta(beta)?;
    let n = samples.len().saturating_sub(1);
    if n < 2 || n % 2 != 0 || midpoint_index * 2 != n {
        return Err(config(format!(
            "midpoint index {midpoint_index} does not split {n} increments into equal halves"
        )));
    }
    let left = variation_sum_on(&samples[..=midpoint_index], beta, (0.0, 0.5))?;
    let right = variation_sum_on(&samples[midpoint_index..], beta, (0.5, 1.0))?;
    let whole = variation_sum(samples, beta)?;
    Ok((left, right, whole))
}

/// Aggregation mode of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMode {
    /// Mean of `S`.
    L1,
    /// Root mean square of `S - target` (requires a target).
    L2,
}

/// Per-`n` statistics of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub rel_error: Option<f64>,
    pub l2_error: Option<f64>,
}

/// Dyadic convergence study of `S_{β,n}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub beta: f64,
    pub n_sequence: Vec<usize>,
    pub levels: Vec<ConvergenceLevel>,
    pub target: Option<f64>,
    pub mode: ConvergenceMode,
    /// Least-squares slope of `ln mean` against `ln n`.
    pub growth_exponent: f64,
    /// Growth exponent above 1/6 (midway between a finite limit and `n^{1/3}` growth).
    pub divergent: bool,
    /// `|error|` non-increasing in `n`; `None` without a target.
    pub monotone_trend: Option<bool>,
    /// Per-replicate values, indexed `[level][replicate]`.
    pub samples: Vec<Vec<f64>>,
}

/// Divergence threshold on the fitted growth exponent.
pub const DIVERGENCE_EXPONENT: f64 = 1.0 / 6.0;

/// Runs `generator(replicate)` to get samples at `max(n_sequence)` partition points on `[0, 1]`,
/// then evaluates `S_{β,n}` on every nested sub-partition.
pub fn run_convergence_study<G>(
    generator: G,
    beta: f64,
    n_sequence: &[usize],
    n_rep: usize,
    target: Option<f64>,
    mode: ConvergenceMode,
) -> Result<ConvergenceStudy>
where
    G: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    check_beta(beta)?;
    if n_sequence.is_empty() || n_sequence.iter().any(|n| !n.is_power_of_two()) {
        return Err(config("n_sequence must contain powers of two"));
    }
    if n_sequence.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config("n_sequence must be strictly increasing"));
    }
    if n_rep == 0 {
        return Err(config("n_rep must be positive"));
    }
    if mode == ConvergenceMode::L2 && target.is_none() {
        return Err(config("L2 mode needs a target"));
    }
    let n_max = *n_sequence.last().expect("non-empty");
    let per_rep: Vec<Result<Vec<f64>>> = (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let x = generator(r).map_err(|e| Error::Replicate { index: r, source: Box::new(e) })?;
            if x.len() != n_max + 1 {
                return Err(Error::Replicate {
                    index: r,
                    source: Box::new(config(format!("generator returned {} samples, expected {}", x.len(), n_max + 1))),
                });
            }
            Ok(n_sequence
                .iter()
                .map(|&n| {
                    let sub: Vec<f64> = x.iter().step_by(n_max / n).copied().collect();
                    raw_sum(&sub, beta)
                })
                .collect())
        })
        .collect();
    let mut samples = vec![Vec::with_capacity(n_rep); n_sequence.len()];
    for r in per_rep {
        for (k, v) in r?.into_iter().enumerate() {
            samples[k].push(v);
        }
    }
    let levels: Vec<ConvergenceLevel> = n_sequence
        .iter()
        .zip(&samples)
        .map(|(&n, s)| {
            let mean = stats::mean(s);
            ConvergenceLevel {
                n,
                mean,
                stderr: stats::stderr(s),
                rel_error: target.map(|t| (mean - t) / t),
                l2_error: target.map(|t| (s.iter().map(|v| (v - t) * (v - t)).sum::<f64>() / s.len() as f64).sqrt()),
            }
        })
        .collect();
    let growth_exponent = if levels.len() >= 2 {
        let lx: Vec<f64> = levels.iter().map(|l| (l.n as f64).ln()).collect();
        let ly: Vec<f64> = levels.iter().map(|l| l.mean.ln()).collect();
        stats::slope(&lx, &ly)
    } else {
        f64::NAN
    };
    let monotone_trend = target.map(|_| {
        let err: Vec<f64> = levels
            .iter()
            .map(|l| match mode {
                ConvergenceMode::L1 => l.rel_error.unwrap_or(0.0).abs(),
                ConvergenceMode::L2 => l.l2_error.unwrap_or(0.0),
            })
            .collect();
        err.windows(2).all(|w| w[1] <= w[0])
    });
    Ok(ConvergenceStudy {
        beta,
        n_sequence: n_sequence.to_vec(),
        levels,
        target,
        mode,
        growth_exponent,
        divergent: growth_exponent > DIVERGENCE_EXPONENT,
        monotone_trend,
        samples,
    })
}
