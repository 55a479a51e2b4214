//! The smoothed-noise process `X_t = ∫_0^t E^θ W_{θ√(t-r)} dB_r` and variance diagnostics.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, coverage, domain, Result};
use crate::paths::{simulate_brownian, simulate_two_sided, Path, Seed, SubStream, TimeGrid, TwoSidedPath};
use crate::quadrature::GaussHermiteRule;
use crate::stats;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// `Var X_t = (√2-1)/√π · (2/3) · t^{3/2}`.
pub fn variance_x(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain(format!("time must be non-negative, got {t}")));
    }
    Ok((std::f64::consts::SQRT_2 - 1.0) / SQRT_PI * (2.0 / 3.0) * t.powf(1.5))
}

/// `E Y_t²` from the improper and finite integrals of the stationarized process.
pub fn variance_y(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain(format!("time must be non-negative, got {t}")));
    }
    // Antiderivative of √(2t+4r) - √(t+r) - √r; vanishes as r → ∞.
    let f = |r: f64| {
        (2.0 * t + 4.0 * r).powf(1.5) / 6.0 - 2.0 / 3.0 * (t + r).powf(1.5) - 2.0 / 3.0 * r.powf(1.5)
    };
    let improper = -f(0.0);
    let finite = (std::f64::consts::SQRT_2 - 1.0) * (2.0 / 3.0) * t.powf(1.5);
    Ok((improper + finite) / SQRT_PI)
}

/// How the lag function `f(s) = E^θ W_{θ√s}` was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseSource {
    /// θ-quadrature over an interpolated two-sided path.
    Quadrature { theta_nodes: usize, extent: f64 },
    /// Exact-law Gaussian mode expansion.
    Modal { n_modes: usize },
}

/// Lag function samples `f(m·dt)`, `m = 0..=n` (`f(0) = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedNoise {
    pub dt: f64,
    pub lags: Vec<f64>,
    pub source: NoiseSource,
}

impl SmoothedNoise {
    /// `f(m·dt) = Σ_k w_k W(θ_k √(m·dt))` from a two-sided path.
    pub fn from_two_sided(noise: &TwoSidedPath, rule: &GaussHermiteRule, grid: &TimeGrid) -> Result<Self> {
        let need = rule.theta_max() * grid.duration().sqrt();
        if noise.extent() < need * (1.0 - 1e-12) {
            return Err(coverage(format!(
                "noise extent {} below required θ_max·√T = {need}",
                noise.extent()
            )));
        }
        let dt = grid.dt();
        let lags = (0..=grid.n_steps())
            .map(|m| {
                let s = (m as f64 * dt).sqrt();
                rule.expect(|th| noise.value_unchecked(th * s))
            })
            .collect();
        Ok(Self {
            dt,
            lags,
            source: NoiseSource::Quadrature { theta_nodes: rule.len(), extent: noise.extent() },
        })
    }
}

/// Mode expansion `f(s) = Σ_m a_m (1 - e^{-s x_m}) ζ_m + σ_tail ζ_0`, exact in law up to the stated covariance error.
#[derive(Debug, Clone)]
pub struct ModalBasis {
    n_steps: usize,
    dt: f64,
    amps: Vec<f64>,
    tail_sd: f64,
    /// Row-major `(n_steps) × modes` matrix of `1 - e^{-m·dt·x}`, `m = 1..=n_steps`.
    shape: Vec<f64>,
}

/// Step in `ln x` of the mode grid.
pub const MODE_LOG_STEP: f64 = 0.1;

impl ModalBasis {
    /// Basis for lags on `grid`; modes span `x ∈ [10⁻⁴/T, 50/dt]`.
    pub fn new(grid: &TimeGrid) -> Arc<Self> {
        let dt = grid.dt();
        let big_t = grid.duration();
        let c2 = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::SQRT_2);
        let (u_lo, u_hi) = ((1e-4 / big_t).ln(), (50.0 / dt).ln());
        let k = ((u_hi - u_lo) / MODE_LOG_STEP).round() as usize;
        let du = (u_hi - u_lo) / k as f64;
        let mut xs = Vec::with_capacity(k + 1);
        let mut amps = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let u = u_lo + i as f64 * du;
            let w = if i == 0 || i == k { 0.5 } else { 1.0 };
            xs.push(u.exp());
            amps.push((c2 * (-u / 2.0).exp() * du * w).sqrt());
        }
        let tail_sd = (2.0 * c2 / xs[k].sqrt()).sqrt();
        let n = grid.n_steps();
        let mut shape = Vec::with_capacity(n * xs.len());
        for m in 1..=n {
            let s = m as f64 * dt;
            shape.extend(xs.iter().map(|x| -(-s * x).exp_m1()));
        }
        Arc::new(Self { n_steps: n, dt, amps, tail_sd, shape })
    }

    pub fn n_modes(&self) -> usize {
        self.amps.len() + 1
    }

    /// Model covariance of `f(s)` and `f(s')` at lag indices `a`, `b` ≥ 1.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let k = self.amps.len();
        let ra = &self.shape[(a - 1) * k..a * k];
        let rb = &self.shape[(b - 1) * k..b * k];
        let mut c = self.tail_sd * self.tail_sd;
        for i in 0..k {
            c += self.amps[i] * self.amps[i] * ra[i] * rb[i];
        }
        c
    }

    /// Draws one lag function from the noise-modes sub-stream of `seed`.
    pub fn sample(&self, seed: Seed) -> SmoothedNoise {
        let mut rng = seed.rng(SubStream::NoiseModes);
        let k = self.amps.len();
        let coef: Vec<f64> = self
            .amps
            .iter()
            .map(|a| a * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let offset = self.tail_sd * rng.sample::<f64, _>(StandardNormal);
        let mut lags = Vec::with_capacity(self.n_steps + 1);
        lags.push(0.0);
        for m in 0..self.n_steps {
            let row = &self.shape[m * k..(m + 1) * k];
            let mut v = offset;
            for i in 0..k {
                v += coef[i] * row[i];
            }
            lags.push(v);
        }
        SmoothedNoise { dt: self.dt, lags, source: NoiseSource::Modal { n_modes: self.n_modes() } }
    }
}

/// Sampled `X` with its driver and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedNoiseProcess {
    pub driver: Path,
    pub noise: SmoothedNoise,
    pub values: Vec<f64>,
}

/// `X_{t_i} = Σ_{j<i} f((i-j)·dt) ΔB_j` for one index.
pub fn x_at(lags: &[f64], increments: &[f64], i: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..i {
        acc += lags[i - j] * increments[j];
    }
    acc
}

fn convolve(driver: &Path, noise: SmoothedNoise) -> Result<SmoothedNoiseProcess> {
    let n = driver.grid.n_steps();
    if noise.lags.len() < n + 1 || (noise.dt - driver.grid.dt()).abs() > 1e-12 * noise.dt {
        return Err(config("noise lags do not match the driver grid"));
    }
    let inc = driver.increments();
    let values = (0..=n).map(|i| x_at(&noise.lags, &inc, i)).collect();
    Ok(SmoothedNoiseProcess { driver: driver.clone(), noise, values })
}

/// Left-point Itô sum with `E^θ` by the θ-quadrature `rule` over the two-sided path `noise`.
pub fn simulate_x(driver: &Path, noise: &TwoSidedPath, rule: &GaussHermiteRule) -> Result<SmoothedNoiseProcess> {
    if driver.grid.t_start() != 0.0 {
        return Err(config("driver must start at time 0"));
    }
    let f = SmoothedNoise::from_two_sided(noise, rule, &driver.grid)?;
    convolve(driver, f)
}

/// Left-point Itô sum with the exact-law lag function from `basis`.
pub fn simulate_x_modal(driver: &Path, basis: &ModalBasis, seed: Seed) -> Result<SmoothedNoiseProcess> {
    if driver.grid.t_start() != 0.0 || basis.n_steps != driver.grid.n_steps() {
        return Err(config("modal basis does not match the driver grid"));
    }
    convolve(driver, basis.sample(seed))
}

/// Default two-sided noise for the quadrature route: extent `θ_max√T`, step `√dt/16`.
pub fn default_noise(grid: &TimeGrid, rule: &GaussHermiteRule, seed: Seed) -> Result<TwoSidedPath> {
    let dy = grid.dt().sqrt() / 16.0;
    simulate_two_sided(rule.theta_max() * grid.duration().sqrt() + dy, dy, seed)
}

/// Outcome for one `(t, 2t)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarityEntry {
    pub t: f64,
    /// Sample second moments of `X_t` and `X_{2t}`.
    pub var_t: f64,
    pub var_2t: f64,
    /// Conditional estimates `mean(Σ f_k² dt)`: `X` given the noise is exactly Gaussian with that variance.
    pub cond_var_t: f64,
    pub cond_var_2t: f64,
    /// Standard errors of the four variance estimates, in field order.
    pub stderr: [f64; 4],
    pub ratio: f64,
    pub ks_distance: f64,
    pub ratio_pass: bool,
    pub ks_pass: bool,
}

/// Self-similarity diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarityReport {
    pub n_rep: usize,
    pub n_steps: usize,
    pub entries: Vec<SelfSimilarityEntry>,
    pub low_confidence: bool,
}

/// Settings for [`check_self_similarity`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarityConfig {
    pub n_steps: usize,
    pub root: u64,
    pub ratio_tol: f64,
    pub ks_tol: f64,
}

impl Default for SelfSimilarityConfig {
    fn default() -> Self {
        Self { n_steps: 4096, root: 0, ratio_tol: 0.05, ks_tol: 0.03 }
    }
}

/// Per-replicate `X_t`, `X_{2t}` and their conditional variances given the noise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct XPairSample {
    pub x_t: Vec<f64>,
    pub x_2t: Vec<f64>,
    pub cond_var_t: Vec<f64>,
    pub cond_var_2t: Vec<f64>,
}

/// Samples `(X_t, X_{2t})` per replicate on `[0, 2t]`.
pub fn sample_x_pair(n_rep: usize, t: f64, n_steps: usize, root: u64) -> Result<XPairSample> {
    if n_steps % 2 != 0 {
        return Err(config("self-similarity grid needs an even number of steps"));
    }
    let grid = TimeGrid::unit(2.0 * t, n_steps)?;
    let dt = grid.dt();
    let basis = ModalBasis::new(&grid);
    let h = n_steps / 2;
    let rows: Vec<[f64; 4]> = (0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let seed = Seed::new(root, r);
            let b = simulate_brownian(grid, seed);
            let f = basis.sample(seed);
            let inc = b.increments();
            let sq = |m: usize| f.lags[1..=m].iter().map(|v| v * v).sum::<f64>() * dt;
            [x_at(&f.lags, &inc, h), x_at(&f.lags, &inc, n_steps), sq(h), sq(n_steps)]
        })
        .collect();
    let mut s = XPairSample::default();
    for r in rows {
        s.x_t.push(r[0]);
        s.x_2t.push(r[1]);
        s.cond_var_t.push(r[2]);
        s.cond_var_2t.push(r[3]);
    }
    Ok(s)
}

/// Variance ratio `Var X_{2t}/Var X_t` and KS distance between `X_{2t}/2^{3/4}` and `X_t`.
pub fn check_self_similarity(
    n_rep: usize,
    t_pairs: &[(f64, f64)],
    cfg: &SelfSimilarityConfig,
) -> Result<SelfSimilarityReport> {
    let mut entries = Vec::with_capacity(t_pairs.len());
    for &(t, t2) in t_pairs {
        if !(t > 0.0) || (t2 - 2.0 * t).abs() > 1e-12 * t2 {
            return Err(config(format!("pair ({t}, {t2}) is not of the form (t, 2t)")));
        }
        let s = sample_x_pair(n_rep, t, cfg.n_steps, cfg.root)?;
        let sq_a: Vec<f64> = s.x_t.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = s.x_2t.iter().map(|v| v * v).collect();
        let (var_t, var_2t) = (stats::mean(&sq_a), stats::mean(&sq_b));
        let ratio = var_2t / var_t;
        let scaled: Vec<f64> = s.x_2t.iter().map(|v| v / 2f64.powf(0.75)).collect();
        let ks = stats::ks_distance(&scaled, &s.x_t);
        let target = 2f64.powf(1.5);
        entries.push(SelfSimilarityEntry {
            t,
            var_t,
            var_2t,
            cond_var_t: stats::mean(&s.cond_var_t),
            cond_var_2t: stats::mean(&s.cond_var_2t),
            stderr: [
                stats::stderr(&sq_a),
                stats::stderr(&sq_b),
                stats::stderr(&s.cond_var_t),
                stats::stderr(&s.cond_var_2t),
            ],
            ratio,
            ks_distance: ks,
            ratio_pass: (ratio / target - 1.0).abs() <= cfg.ratio_tol,
            ks_pass: ks <= cfg.ks_tol,
        });
    }
    Ok(SelfSimilarityReport { n_rep, n_steps: cfg.n_steps, entries, low_confidence: n_rep < 1000 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(variance_x(0.0).unwrap(), 0.0);
        assert!((variance_x(1.0).unwrap() - 0.155_797).abs() < 1e-6);
        assert!((variance_x(2.0).unwrap() / variance_x(1.0).unwrap() - 2f64.powf(1.5)).abs() < 1e-14);
        assert!(variance_x(-1.0).is_err());
        assert_eq!(variance_y(0.0).unwrap(), 0.0);
        assert!((variance_y(1.0).unwrap() - 0.265_962).abs() < 1e-6);
        assert!(variance_y(-0.1).is_err());
    }

    #[test]
    fn modal_covariance_matches_target() {
        let grid = TimeGrid::unit(1.0, 1024).unwrap();
        let basis = ModalBasis::new(&grid);
        let exact = |s: f64, u: f64| (s.sqrt() + u.sqrt() - (s + u).sqrt()) / (2.0 * std::f64::consts::PI).sqrt();
        for (a, b) in [(1usize, 1usize), (1, 1024), (300, 700), (1024, 1024)] {
            let (s, u) = (a as f64 / 1024.0, b as f64 / 1024.0);
            let c = basis.covariance(a, b);
            assert!((c / exact(s, u) - 1.0).abs() < 1e-3, "({a},{b}): {c} vs {}", exact(s, u));
        }
    }

    #[test]
    fn zero_noise_gives_zero_process() {
        let grid = TimeGrid::unit(1.0, 64).unwrap();
        let b = simulate_brownian(grid, Seed::new(1, 0));
        let rule = GaussHermiteRule::default();
        let w = TwoSidedPath::zero(rule.theta_max() + 0.1, 100, Seed::new(1, 0)).unwrap();
        let x = simulate_x(&b, &w, &rule).unwrap();
        assert!(x.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadrature_route_checks_extent() {
        let grid = TimeGrid::unit(1.0, 64).unwrap();
        let b = simulate_brownian(grid, Seed::new(1, 0));
        let rule = GaussHermiteRule::default();
        let w = simulate_two_sided(1.0, 0.01, Seed::new(1, 0)).unwrap();
        assert!(matches!(simulate_x(&b, &w, &rule), Err(crate::Error::Coverage(_))));
        let w = default_noise(&grid, &rule, Seed::new(1, 0)).unwrap();
        let x = simulate_x(&b, &w, &rule).unwrap();
        assert_eq!(x.values[0], 0.0);
    }

    #[test]
    fn modal_variance_at_small_scale() {
        let grid = TimeGrid::unit(1.0, 256).unwrap();
        let basis = ModalBasis::new(&grid);
        let v: Vec<f64> = (0..4000u64)
            .map(|r| {
                let s = Seed::new(8, r);
                let x = simulate_x_modal(&simulate_brownian(grid, s), &basis, s).unwrap();
                x.values[256].powi(2)
            })
            .collect();
        let m = stats::mean(&v);
        let se = stats::stderr(&v);
        let target = variance_x(1.0).unwrap();
        assert!((m - target).abs() < 4.0 * se + 0.02 * target, "{m} ± {se} vs {target}");
    }

    #[test]
    fn self_similarity_empty() {
        let r = check_self_similarity(1000, &[], &SelfSimilarityConfig::default()).unwrap();
        assert!(r.entries.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn variance_y_scaling(t in 0.01f64..50.0) {
            let v = variance_y(t).unwrap();
            let w = t.powf(1.5) * variance_y(1.0).unwrap();
            prop_assert!((v - w).abs() <= 1e-9 * w);
        }
    }
}
