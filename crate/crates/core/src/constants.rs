//! Estimators of the limiting constant `K` of the 4/3-variation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{config, coverage, domain, Result};
use crate::local_time::{build_terminal_row, default_bandwidth, SpaceGrid};
use crate::paths::{simulate_brownian, Path, Seed, TimeGrid};
use crate::quadrature::GaussLegendre;
use crate::stats;

/// `E|θ|^p = 2^{p/2} Γ((p+1)/2) / Γ(1/2)` for standard normal θ.
pub fn abs_moment_std_normal(p: f64) -> Result<f64> {
    if !(p > -1.0) {
        return Err(domain(format!("absolute moment needs p > -1, got {p}")));
    }
    Ok((0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0)) - ln_gamma(0.5)).exp())
}

/// `E|θ|^{4/3}`.
pub fn c0() -> f64 {
    abs_moment_std_normal(4.0 / 3.0).expect("valid exponent")
}

/// Estimation method for `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KMethod {
    R2XyQuad,
    R2ExpKernel,
    RwOuterPower,
    RwInnerPower,
}

impl KMethod {
    pub fn name(&self) -> &'static str {
        match self {
            KMethod::R2XyQuad => "r2_xy_quad",
            KMethod::R2ExpKernel => "r2_exp_kernel",
            KMethod::RwOuterPower => "rw_outer_power",
            KMethod::RwInnerPower => "rw_inner_power",
        }
    }
}

/// Monte Carlo estimate of `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub method: KMethod,
    pub value: f64,
    pub stderr: f64,
    pub n_rep: usize,
    /// `X_max` for the quadratic-form methods.
    pub truncation: Option<f64>,
    /// Fewer than 100 replicates.
    pub low_confidence: bool,
    /// Value with the prefactor ¼ taken literally (quadratic-form methods only).
    pub as_printed: Option<f64>,
}

/// Piecewise-constant cells on `[0, X_max]`, geometric from `h0` with ratio `growth`, widths capped at `h_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XGrid {
    pub edges: Vec<f64>,
}

impl XGrid {
    pub fn graded(x_max: f64, h0: f64, growth: f64, h_cap: f64) -> Result<Self> {
        if !(x_max > 0.0 && h0 > 0.0 && growth >= 1.0 && h_cap >= h0) {
            return Err(config(format!(
                "invalid x-grid parameters X_max={x_max}, h0={h0}, growth={growth}, cap={h_cap}"
            )));
        }
        let mut edges = vec![0.0];
        let mut h = h0;
        let mut x = 0.0;
        while x + h < x_max * (1.0 - 1e-12) {
            x += h;
            edges.push(x);
            h = (h * growth).min(h_cap);
        }
        edges.push(x_max);
        if edges.len() >= 3 {
            let k = edges.len();
            if edges[k - 1] - edges[k - 2] < 0.25 * (edges[k - 2] - edges[k - 3]) {
                edges.remove(k - 2);
            }
        }
        Ok(Self { edges })
    }

    /// Default grid: `h0 = 10⁻³`, growth 1.05, cap 0.1.
    pub fn default_for(x_max: f64) -> Result<Self> {
        Self::graded(x_max, 1e-3, 1.05, 0.1)
    }

    /// Grid with every width divided by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        let mut edges = Vec::with_capacity((self.edges.len() - 1) * factor + 1);
        edges.push(0.0);
        for w in self.edges.windows(2) {
            for k in 1..=factor {
                edges.push(if k == factor { w[1] } else { w[0] + (w[1] - w[0]) * k as f64 / factor as f64 });
            }
        }
        Self { edges }
    }

    pub fn cells(&self) -> usize {
        self.edges.len() - 1
    }
    pub fn x_max(&self) -> f64 {
        *self.edges.last().expect("non-empty")
    }
    pub fn h0(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }
    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// `W_ab = ∫_{cell a}∫_{cell b} (x+y)^{-3/2} dy dx`.
    pub fn weight_matrix(&self) -> Vec<f64> {
        let m = self.cells();
        let e = &self.edges;
        let mut w = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..=a {
                let v = 4.0
                    * ((e[a + 1] + e[b]).sqrt() + (e[a] + e[b + 1]).sqrt()
                        - (e[a + 1] + e[b + 1]).sqrt()
                        - (e[a] + e[b]).sqrt());
                w[a * m + b] = v;
                w[b * m + a] = v;
            }
        }
        w
    }
}

/// Log-spaced nodes in `z` with trapezoid weights in `ln z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub nodes: Vec<f64>,
    pub log_step: f64,
}

impl ZGrid {
    pub fn log_spaced(z_min: f64, z_max: f64, n_nodes: usize) -> Result<Self> {
        if !(z_min > 0.0 && z_max > z_min) || n_nodes < 2 {
            return Err(config(format!("invalid z-grid [{z_min}, {z_max}] with {n_nodes} nodes")));
        }
        let (a, b) = (z_min.ln(), z_max.ln());
        let step = (b - a) / (n_nodes - 1) as f64;
        let nodes = (0..n_nodes).map(|k| (a + k as f64 * step).exp()).collect();
        Ok(Self { nodes, log_step: step })
    }

    /// Default for an x-grid: `[10⁻³/X_max, 40/h0]`, 300 nodes.
    pub fn default_for(x: &XGrid) -> Result<Self> {
        Self::log_spaced(1e-3 / x.x_max(), 40.0 / x.h0(), 300)
    }

    pub fn z_min(&self) -> f64 {
        self.nodes[0]
    }
    pub fn z_max(&self) -> f64 {
        *self.nodes.last().expect("non-empty")
    }
}

/// `Γ(3/2)`.
const GAMMA_3_2: f64 = 0.886_226_925_452_758;

fn cell_increments(path: &Path, x: &XGrid) -> Result<Vec<f64>> {
    let g = &path.grid;
    if g.t_start() > 0.0 || g.t_end() < x.x_max() + 1.0 - 1e-12 {
        return Err(coverage(format!(
            "increment path covers [{}, {}], needs [0, {}]",
            g.t_start(),
            g.t_end(),
            x.x_max() + 1.0
        )));
    }
    Ok(x.midpoints()
        .iter()
        .map(|&m| path.interp_unchecked((1.0 + m).min(g.t_end())) - path.interp_unchecked(m))
        .collect())
}

/// Reusable tables for both quadratic-form routes.
#[derive(Debug, Clone)]
pub struct R2Quadrature {
    pub x_grid: XGrid,
    pub z_grid: ZGrid,
    weights: Vec<f64>,
    /// `(e^{-a0 z} - e^{-a1 z})/z`, row-major `z × cells`.
    laplace: Vec<f64>,
}

impl R2Quadrature {
    pub fn new(x_grid: XGrid, z_grid: ZGrid) -> Self {
        let weights = x_grid.weight_matrix();
        let m = x_grid.cells();
        let e = &x_grid.edges;
        let mut laplace = Vec::with_capacity(z_grid.nodes.len() * m);
        for &z in &z_grid.nodes {
            for a in 0..m {
                laplace.push((-e[a] * z).exp() * -(-(e[a + 1] - e[a]) * z).exp_m1() / z);
            }
        }
        Self { x_grid, z_grid, weights, laplace }
    }

    pub fn default_for(x_max: f64) -> Result<Self> {
        let x = XGrid::default_for(x_max)?;
        let z = ZGrid::default_for(&x)?;
        Ok(Self::new(x, z))
    }

    /// `¼ Σ_ab g_a g_b W_ab` for cell values `g`.
    pub fn xy_form(&self, g: &[f64]) -> f64 {
        let m = self.x_grid.cells();
        let mut total = 0.0;
        for a in 0..m {
            let row = &self.weights[a * m..(a + 1) * m];
            let mut s = 0.0;
            for b in 0..m {
                s += row[b] * g[b];
            }
            total += g[a] * s;
        }
        0.25 * total
    }

    /// `(1/(4Γ(3/2))) ∫ I(z)² z^{1/2} dz` with analytic tails, for cell values `g`.
    pub fn exp_form(&self, g: &[f64]) -> f64 {
        let m = self.x_grid.cells();
        let z = &self.z_grid.nodes;
        let k = z.len();
        let mut total = 0.0;
        let mut first = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.laplace[i * m..(i + 1) * m];
            let mut inner = 0.0;
            for a in 0..m {
                inner += row[a] * g[a];
            }
            if i == 0 {
                first = inner;
            }
            let w = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
            total += w * inner * inner * zi.powf(1.5);
        }
        total *= self.z_grid.log_step;
        let (z_lo, z_hi) = (self.z_grid.z_min(), self.z_grid.z_max());
        total += first * first * (2.0 / 3.0) * z_lo.powf(1.5);
        total += 2.0 * g[0] * g[0] / z_hi.sqrt();
        total / (4.0 * GAMMA_3_2)
    }
}

/// `¼∫∫(x+y)^{-3/2} ΔB(x)ΔB(y)` on the graded cells of `x_grid`, `ΔB(x) = B_{1+x} - B_x`.
pub fn r2_quadratic_form_xy(increment_path: &Path, quad: &R2Quadrature) -> Result<f64> {
    let g = cell_increments(increment_path, &quad.x_grid)?;
    Ok(quad.xy_form(&g))
}

/// Exponential-kernel form of the same quadratic form; non-negative by construction.
pub fn r2_quadratic_form_expkernel(increment_path: &Path, quad: &R2Quadrature) -> Result<f64> {
    let g = cell_increments(increment_path, &quad.x_grid)?;
    Ok(quad.exp_form(&g))
}

/// `E` of the ¼-form truncated to `[0, X]²` for Brownian increments.
pub fn r2_expected_form(x_max: f64) -> Result<f64> {
    Ok(2.0 / 3.0 - r2_expected_tail(x_max)?)
}

/// Expected mass of the ¼-form outside `[0, X]²`: `½∫_0^1 (1-d)(2X-d)^{-1/2} dd`.
pub fn r2_expected_tail(x_max: f64) -> Result<f64> {
    if !(x_max >= 1.0) {
        return Err(domain(format!("truncation must be at least 1, got {x_max}")));
    }
    let a = 2.0 * x_max;
    let gl = GaussLegendre::new(32);
    let j = if a > 1.5 {
        gl.integrate(0.0, 1.0, |d| (1.0 - d) / (a - d).sqrt())
    } else {
        // Substitution v = √(a-d) removes the endpoint singularity at a = 1.
        gl.integrate((a - 1.0).sqrt(), a.sqrt(), |v| 2.0 * (1.0 - a + v * v))
    };
    Ok(0.5 * j)
}

/// Conversion from the literal ¼ prefactor to the conditional variance of the unit increment.
pub fn r2_normalization() -> f64 {
    1.0 / (2.0 * std::f64::consts::PI).sqrt()
}

/// Settings for [`estimate_k_r2`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Options {
    pub x_max: f64,
    /// Time step of the simulated path on `[0, X_max + 1]`.
    pub path_dt: f64,
    /// Add the expected form mass beyond `X_max` to each replicate.
    pub tail_compensation: bool,
}

impl Default for R2Options {
    fn default() -> Self {
        Self { x_max: 20.0, path_dt: 1.0 / 1024.0, tail_compensation: true }
    }
}

/// Per-replicate ¼-forms `(xy, exp)` for seeds `(root, 0..n_rep)`.
pub fn r2_forms(n_rep: usize, root: u64, opts: &R2Options, quad: &R2Quadrature) -> Result<Vec<(f64, f64)>> {
    let span = opts.x_max + 1.0;
    let n = (span / opts.path_dt).ceil() as usize;
    let grid = TimeGrid::unit(span, n)?;
    (0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let p = simulate_brownian(grid, Seed::new(root, r));
            let g = cell_increments(&p, &quad.x_grid)?;
            Ok((quad.xy_form(&g), quad.exp_form(&g)))
        })
        .collect()
}

fn k_from_forms(method: KMethod, forms: &[f64], tail: f64, x_max: f64) -> KEstimate {
    let c = c0();
    let printed: Vec<f64> = forms.iter().map(|q| c * (q + tail).max(0.0).powf(2.0 / 3.0)).collect();
    let scale = r2_normalization().powf(2.0 / 3.0);
    let mean = stats::mean(&printed);
    KEstimate {
        method,
        value: mean * scale,
        stderr: stats::stderr(&printed) * scale,
        n_rep: forms.len(),
        truncation: Some(x_max),
        low_confidence: forms.len() < 100,
        as_printed: Some(mean),
    }
}

/// `E|θ|^{4/3} · E[Q^{2/3}]` with `Q` the conditional variance of a unit increment of `X`, by both quadrature routes.
pub fn estimate_k_r2(n_rep: usize, root: u64, opts: &R2Options) -> Result<(KEstimate, KEstimate)> {
    let quad = R2Quadrature::default_for(opts.x_max)?;
    estimate_k_r2_with(n_rep, root, opts, &quad)
}

/// [`estimate_k_r2`] with explicit quadrature tables.
pub fn estimate_k_r2_with(
    n_rep: usize,
    root: u64,
    opts: &R2Options,
    quad: &R2Quadrature,
) -> Result<(KEstimate, KEstimate)> {
    if n_rep == 0 {
        return Err(config("n_rep must be positive"));
    }
    let forms = r2_forms(n_rep, root, opts, quad)?;
    let tail = if opts.tail_compensation { r2_expected_tail(quad.x_grid.x_max())? } else { 0.0 };
    let xy: Vec<f64> = forms.iter().map(|f| f.0).collect();
    let ex: Vec<f64> = forms.iter().map(|f| f.1).collect();
    let x_max = quad.x_grid.x_max();
    Ok((
        k_from_forms(KMethod::R2XyQuad, &xy, tail, x_max),
        k_from_forms(KMethod::R2ExpKernel, &ex, tail, x_max),
    ))
}

/// Reading of `E|B_1|^{4/3} E[∫(L_1^z)²dz]^{2/3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RwReading {
    /// Power outside the expectation.
    OuterPower,
    /// Power inside the expectation.
    InnerPower,
}

/// Per-replicate `∫(L_1^z)²dz` at `n_steps`, bandwidth `dt/4`, seeds `(root, 0..n_rep)`.
pub fn squared_integral_samples(n_rep: usize, n_steps: usize, root: u64) -> Result<Vec<f64>> {
    let grid = TimeGrid::unit(1.0, n_steps)?;
    let eps = default_bandwidth(&grid);
    (0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let p = simulate_brownian(grid, Seed::new(root, r));
            let sg = SpaceGrid::for_path(&p, eps)?;
            let row = build_terminal_row(&p, sg, eps)?;
            Ok(crate::local_time::row_squared_integral(&row, sg.dx()))
        })
        .collect()
}

/// Rogers–Walsh reading from per-replicate squared integrals.
pub fn rogers_walsh_from_samples(samples: &[f64], reading: RwReading) -> KEstimate {
    let c = c0();
    let n = samples.len();
    let (method, value, stderr) = match reading {
        RwReading::OuterPower => {
            let m = stats::mean(samples);
            let se = stats::stderr(samples);
            (KMethod::RwOuterPower, c * m.powf(2.0 / 3.0), c * (2.0 / 3.0) * m.powf(-1.0 / 3.0) * se)
        }
        RwReading::InnerPower => {
            let v: Vec<f64> = samples.iter().map(|s| c * s.powf(2.0 / 3.0)).collect();
            (KMethod::RwInnerPower, stats::mean(&v), stats::stderr(&v))
        }
    };
    KEstimate { method, value, stderr, n_rep: n, truncation: None, low_confidence: n < 100, as_printed: None }
}

/// `E|B_1|^{4/3}` times the chosen reading of `E[∫(L_1^z)²dz]^{2/3}`.
pub fn estimate_k_rogers_walsh(n_rep: usize, reading: RwReading, n_steps: usize, root: u64) -> Result<KEstimate> {
    if n_rep == 0 {
        return Err(config("n_rep must be positive"));
    }
    let s = squared_integral_samples(n_rep, n_steps, root)?;
    Ok(rogers_walsh_from_samples(&s, reading))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moments() {
        assert!((abs_moment_std_normal(2.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((abs_moment_std_normal(1.0).unwrap() - 0.797_884_560_802_865_4).abs() < 1e-14);
        assert!((abs_moment_std_normal(4.0 / 3.0).unwrap() - 0.830_860_925_029_559_2).abs() < 1e-13);
        assert!(abs_moment_std_normal(-1.0).is_err());
    }

    #[test]
    fn grid_shapes() {
        let x = XGrid::default_for(20.0).unwrap();
        assert_eq!(x.edges[0], 0.0);
        assert_eq!(x.x_max(), 20.0);
        assert!(x.edges.windows(2).all(|w| w[1] > w[0]));
        assert!(x.cells() > 200 && x.cells() < 400);
        assert_eq!(x.refined(4).cells(), 4 * x.cells());
        assert!(XGrid::graded(0.0, 1e-3, 1.05, 0.1).is_err());
        assert!(ZGrid::log_spaced(1.0, 0.5, 10).is_err());
    }

    fn linear_path(x_max: f64) -> Path {
        let g = TimeGrid::unit(x_max + 1.0, 64).unwrap();
        let v = (0..=64).map(|i| g.t(i)).collect();
        Path::from_values(g, v, Seed::new(0, 0)).unwrap()
    }

    #[test]
    fn degenerate_and_synthetic_inputs() {
        let quad = R2Quadrature::default_for(20.0).unwrap();
        let g = TimeGrid::unit(21.0, 64).unwrap();
        let zero = Path::from_values(g, vec![0.0; 65], Seed::new(0, 0)).unwrap();
        assert_eq!(r2_quadratic_form_xy(&zero, &quad).unwrap(), 0.0);
        assert_eq!(r2_quadratic_form_expkernel(&zero, &quad).unwrap(), 0.0);
        let p = linear_path(20.0);
        let a = r2_quadratic_form_xy(&p, &quad).unwrap();
        let b = r2_quadratic_form_expkernel(&p, &quad).unwrap();
        // ¼∫∫_{[0,X]²}(x+y)^{-3/2} = 2√X - √(2X).
        let exact = 2.0 * 20f64.sqrt() - 40f64.sqrt();
        assert!((a / exact - 1.0).abs() < 1e-10, "{a} vs {exact}");
        assert!((b / a - 1.0).abs() < 5e-3, "{b} vs {a}");
        let short = linear_path(5.0);
        assert!(matches!(r2_quadratic_form_xy(&short, &quad), Err(crate::Error::Coverage(_))));
    }

    #[test]
    fn routes_agree_per_path() {
        let quad = R2Quadrature::default_for(20.0).unwrap();
        let fine = R2Quadrature::new(quad.x_grid.refined(4), ZGrid::log_spaced(quad.z_grid.z_min(), 4.0 * quad.z_grid.z_max(), 1200).unwrap());
        let g = TimeGrid::unit(21.0, 21 * 1024).unwrap();
        for r in 0..5 {
            let p = simulate_brownian(g, Seed::new(12, r));
            let a = r2_quadratic_form_xy(&p, &quad).unwrap();
            let b = r2_quadratic_form_expkernel(&p, &quad).unwrap();
            assert!(a >= -1e-3 * a.abs() - 1e-6);
            assert!((a - b).abs() <= 0.01 * a.abs(), "{a} vs {b}");
            let c = r2_quadratic_form_xy(&p, &fine).unwrap();
            let d = r2_quadratic_form_expkernel(&p, &fine).unwrap();
            assert!((c - d).abs() <= 1e-3 * c.abs(), "{c} vs {d}");
        }
    }

    #[test]
    fn expected_form_limits() {
        assert!((r2_expected_form(1e12).unwrap() - 2.0 / 3.0).abs() < 1e-6);
        let t = r2_expected_tail(20.0).unwrap();
        let a: f64 = 40.0;
        let closed = 0.5 * ((1.0 - a) * 2.0 * (a.sqrt() - (a - 1.0).sqrt()) + 2.0 / 3.0 * (a.powf(1.5) - (a - 1.0).powf(1.5)));
        assert!((t - closed).abs() < 1e-9);
        assert!(r2_expected_tail(0.5).is_err());
        // Conditional variance of a unit increment matches the stationary variance.
        let y1 = crate::fractional::variance_y(1.0).unwrap();
        assert!((2.0 / 3.0 * r2_normalization() - y1).abs() < 1e-12);
    }

    #[test]
    fn single_replicate_is_low_confidence() {
        let opts = R2Options { x_max: 4.0, path_dt: 1.0 / 256.0, tail_compensation: true };
        let (a, b) = estimate_k_r2(1, 3, &opts).unwrap();
        assert_eq!(a.stderr, 0.0);
        assert!(a.low_confidence && b.low_confidence);
        assert!(a.value > 0.0);
        let rw = rogers_walsh_from_samples(&[1.0], RwReading::InnerPower);
        assert_eq!(rw.stderr, 0.0);
        assert!(rw.low_confidence);
    }

    #[test]
    fn rogers_walsh_factor() {
        let k = rogers_walsh_from_samples(&[1.0638; 4], RwReading::OuterPower);
        assert!((k.value - 0.830_862 * 1.0638f64.powf(2.0 / 3.0)).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn exp_form_nonnegative(r in 0u64..10_000) {
            let quad = R2Quadrature::default_for(4.0).unwrap();
            let g = TimeGrid::unit(5.0, 5 * 256).unwrap();
            let p = simulate_brownian(g, Seed::new(77, r));
            prop_assert!(r2_quadratic_form_expkernel(&p, &quad).unwrap() >= 0.0);
        }
    }
}
