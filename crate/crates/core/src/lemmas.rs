//! Executable checks of the auxiliary Gaussian lemmas.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::paths::{heat_kernel_unchecked, Seed, SubStream};
use crate::quadrature::GaussLegendre;
use crate::stats;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Normalizing constant of the kernel-moment formula.
pub const LEMMA_A2_CONSTANT: f64 = 1.0 / TWO_PI;

/// `E[p_α(X) p_β(X+Y)] = c·((α+σ₁²)(β+σ₂²) + ασ₁²)^{-1/2}`, `X ~ N(0,σ₁²)`, `Y ~ N(0,σ₂²)`.
pub fn lemma_a2_kernel_moment(alpha: f64, beta: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("beta", beta), ("sigma1_sq", sigma1_sq), ("sigma2_sq", sigma2_sq)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(LEMMA_A2_CONSTANT / ((alpha + sigma1_sq) * (beta + sigma2_sq) + alpha * sigma1_sq).sqrt())
}

/// Monte Carlo mean and standard error of `p_α(X) p_β(X+Y)`.
pub fn lemma_a2_monte_carlo(
    alpha: f64,
    beta: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
    n_mc: usize,
    seed: Seed,
) -> Result<(f64, f64)> {
    lemma_a2_kernel_moment(alpha, beta, sigma1_sq, sigma2_sq)?;
    let mut rng = seed.rng(SubStream::Auxiliary);
    let (s1, s2) = (sigma1_sq.sqrt(), sigma2_sq.sqrt());
    let v: Vec<f64> = (0..n_mc)
        .map(|_| {
            let x = s1 * rng.sample::<f64, _>(StandardNormal);
            let y = s2 * rng.sample::<f64, _>(StandardNormal);
            heat_kernel_unchecked(x, alpha) * heat_kernel_unchecked(x + y, beta)
        })
        .collect();
    Ok((stats::mean(&v), stats::stderr(&v)))
}

/// Bound constant `C` in `C·x^{-1/2}(2√(2y+z) - √(2y) - √(2y+2z))`.
pub const LEMMA_A1_CONSTANT: f64 = 1.0 / TWO_PI;

/// Prefactor of `g(x,y,z,θ) = k ∫_0^z √x θ (y+ξ)^{-3/2} e^{-xθ²/(2(y+ξ))} dξ`.
pub const LEMMA_A1_G_PREFACTOR: f64 = 0.199_471_140_200_716_35; // 1/(2√(2π))

/// Outcome of [`lemma_a1_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaA1Report {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// `∫ g² φ dθ` by nested quadrature.
    pub quadrature: f64,
    /// Same quantity from the exact double-integral form.
    pub double_integral: f64,
    /// Monte Carlo estimate of the squared conditional expectation.
    pub monte_carlo: f64,
    pub monte_carlo_stderr: f64,
    pub bound: f64,
    /// `quadrature <= bound`.
    pub inequality_holds: bool,
    /// `|quadrature - monte_carlo| <= 3·stderr`.
    pub routes_agree: bool,
}

fn check_spacings(x: f64, y: f64, z: f64) -> Result<()> {
    for (name, v) in [("x", x), ("y", y), ("z", z)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(domain(format!("spacing {name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Panel breaks on `[lo, hi]` with widths at most `w`.
fn breaks(lo: f64, hi: f64, w: f64) -> Vec<f64> {
    let k = ((hi - lo) / w).ceil().max(1.0) as usize;
    (0..=k).map(|i| if i == k { hi } else { lo + (hi - lo) * i as f64 / k as f64 }).collect()
}

/// `g(x, y, z, θ)`; the ξ-integral is taken in `v = ln(y+ξ)`.
pub fn lemma_a1_g(x: f64, y: f64, z: f64, theta: f64) -> f64 {
    let gl = GaussLegendre::new(20);
    let b = breaks(y.ln(), (y + z).ln(), 0.5);
    let s = gl.integrate_panels(&b, |v| {
        let e = v.exp();
        e.powf(-0.5) * (-x * theta * theta / (2.0 * e)).exp()
    });
    LEMMA_A1_G_PREFACTOR * x.sqrt() * theta * s
}

/// `∫ g(x,y,z,θ)² φ(θ) dθ` by nested Gauss–Legendre quadrature.
pub fn lemma_a1_quadrature(x: f64, y: f64, z: f64) -> Result<f64> {
    check_spacings(x, y, z)?;
    let gl = GaussLegendre::new(20);
    let mut b = vec![0.0];
    b.extend((0..40).rev().map(|k| 12.0 * 0.7f64.powi(k)));
    let v = gl.integrate_panels(&b, |t| {
        let g = lemma_a1_g(x, y, z, t);
        g * g * heat_kernel_unchecked(t, 1.0)
    });
    Ok(2.0 * v)
}

/// `(x/(8π)) ∫_0^z∫_0^z [(y+ξ₁)(y+ξ₂) + x(2y+ξ₁+ξ₂)]^{-3/2} dξ₁ dξ₂`.
pub fn lemma_a1_double_integral(x: f64, y: f64, z: f64) -> Result<f64> {
    check_spacings(x, y, z)?;
    let gl = GaussLegendre::new(20);
    let b = breaks(y.ln(), (y + z).ln(), 0.5);
    let v = gl.integrate_panels(&b, |v1| {
        let a = v1.exp();
        a * gl.integrate_panels(&b, |v2| {
            let c = v2.exp();
            c * (a * c + x * (a + c)).powf(-1.5)
        })
    });
    Ok(x / (4.0 * TWO_PI) * v)
}

/// `C·x^{-1/2}(2√(2y+z) - √(2y) - √(2y+2z))`.
pub fn lemma_a1_bound(x: f64, y: f64, z: f64) -> Result<f64> {
    check_spacings(x, y, z)?;
    let (s, t) = (2.0 * y, z);
    // 2√(s+t) - √s - √(s+2t) written without cancellation.
    let d1 = t / ((s + t).sqrt() + s.sqrt());
    let d2 = t / ((s + 2.0 * t).sqrt() + (s + t).sqrt());
    Ok(LEMMA_A1_CONSTANT / x.sqrt() * (d1 - d2))
}

/// Monte Carlo of `E[(E(1{B_c<B_a<B_d} - 1{B_c>B_a>B_d} | F_b))²]` with two independent continuations per sample.
pub fn lemma_a1_monte_carlo(x: f64, y: f64, z: f64, n_mc: usize, seed: Seed) -> Result<(f64, f64)> {
    check_spacings(x, y, z)?;
    let mut rng = seed.rng(SubStream::Auxiliary);
    let (sx, sy, sz) = (x.sqrt(), y.sqrt(), z.sqrt());
    let draw = |a: f64, rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
        let c = sy * rng.sample::<f64, _>(StandardNormal);
        let d = c + sz * rng.sample::<f64, _>(StandardNormal);
        if c < a && a < d {
            1.0
        } else if c > a && a > d {
            -1.0
        } else {
            0.0
        }
    };
    let v: Vec<f64> = (0..n_mc)
        .map(|_| {
            let a = sx * rng.sample::<f64, _>(StandardNormal);
            draw(a, &mut rng) * draw(a, &mut rng)
        })
        .collect();
    Ok((stats::mean(&v), stats::stderr(&v)))
}

/// All three evaluations plus the inequality and agreement verdicts.
pub fn lemma_a1_check(x: f64, y: f64, z: f64, n_mc: usize, seed: Seed) -> Result<LemmaA1Report> {
    let quadrature = lemma_a1_quadrature(x, y, z)?;
    let double_integral = lemma_a1_double_integral(x, y, z)?;
    let bound = lemma_a1_bound(x, y, z)?;
    let (monte_carlo, se) = if n_mc > 0 { lemma_a1_monte_carlo(x, y, z, n_mc, seed)? } else { (f64::NAN, f64::NAN) };
    Ok(LemmaA1Report {
        x,
        y,
        z,
        quadrature,
        double_integral,
        monte_carlo,
        monte_carlo_stderr: se,
        bound,
        inequality_holds: quadrature <= bound * (1.0 + 1e-9),
        routes_agree: n_mc > 0 && (quadrature - monte_carlo).abs() <= 3.0 * se,
    })
}

/// Outcome of [`lemma1_numeric_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub beta: f64,
    pub n_sequence: Vec<usize>,
    pub values: Vec<f64>,
    /// Last value below a quarter of the first and below `0.01(b-a)`.
    pub decreasing_to_zero: bool,
    pub strictly_decreasing: bool,
    /// Slope of `ln value` against `ln n`.
    pub log_slope: f64,
}

/// `∫_a^{r_j} (√(r_{j+1}-r) - √(r_j-r))^β dr` with `h = r_{j+1}-r_j`, `V = r_j - a`, via `w² = r_j - r`.
pub fn lemma1_term(h: f64, v: f64, beta: f64) -> f64 {
    if h <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    let gl = GaussLegendre::new(16);
    let top = v.sqrt();
    let s = h.sqrt();
    let mut b = vec![0.0];
    let mut w = s;
    while w < top {
        b.push(w);
        w *= 2.0;
    }
    b.push(top);
    gl.integrate_panels(&b, |w| (h / ((h + w * w).sqrt() + w)).powf(beta) * 2.0 * w)
}

/// `Σ_{j=1}^n |∫_a^{r_j}(√(r_{j+1}-r) - √(r_j-r))^β dr|^{2/3}` for each `n`.
pub fn lemma1_numeric_check(a: f64, b: f64, beta: f64, n_sequence: &[usize]) -> Result<Lemma1Report> {
    if !(beta > 1.5) {
        return Err(domain(format!("exponent must exceed 3/2, got {beta}")));
    }
    if !(a <= b) {
        return Err(config(format!("interval [{a}, {b}] is reversed")));
    }
    if n_sequence.iter().any(|&n| n == 0) {
        return Err(config("n_sequence entries must be positive"));
    }
    let values: Vec<f64> = n_sequence
        .iter()
        .map(|&n| {
            let h = (b - a) / n as f64;
            (1..=n).map(|j| lemma1_term(h, j as f64 * h, beta).abs().powf(2.0 / 3.0)).sum()
        })
        .collect();
    let strictly_decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let decreasing_to_zero = match (values.first(), values.last()) {
        (Some(&f), Some(&l)) if b > a => l < f / 4.0 && l < 0.01 * (b - a),
        _ => false,
    };
    let log_slope = if values.len() >= 2 && values.iter().all(|&v| v > 0.0) {
        let lx: Vec<f64> = n_sequence.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        stats::slope(&lx, &ly)
    } else {
        f64::NAN
    };
    Ok(Lemma1Report { beta, n_sequence: n_sequence.to_vec(), values, decreasing_to_zero, strictly_decreasing, log_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn a2_values() {
        let v = lemma_a2_kernel_moment(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((v - LEMMA_A2_CONSTANT / 5f64.sqrt()).abs() < 1e-15);
        assert!(lemma_a2_kernel_moment(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn a2_against_brute_force_quadrature() {
        // E[p_α(X)p_β(X+Y)] as a 2-D integral against the Gaussian densities.
        let (al, be, s1, s2) = (0.5, 2.0, 0.3, 1.7);
        let gl = GaussLegendre::new(40);
        let b: Vec<f64> = (0..=48).map(|k| -12.0 + 0.5 * k as f64).collect();
        let v = gl.integrate_panels(&b, |x| {
            heat_kernel_unchecked(x, al)
                * heat_kernel_unchecked(x, s1)
                * gl.integrate_panels(&b, |y| heat_kernel_unchecked(x + y, be) * heat_kernel_unchecked(y, s2))
        });
        let f = lemma_a2_kernel_moment(al, be, s1, s2).unwrap();
        assert!((v / f - 1.0).abs() < 1e-8, "{v} vs {f}");
    }

    #[test]
    fn a1_g_matches_definition() {
        // g = ∫ φ(η) [Φ(√(x/y)θ) - Φ(√(x/y)θ - √(z/y)η)] dη.
        use statrs::distribution::{ContinuousCDF, Normal};
        let n = Normal::standard();
        let (x, y, z) = (1.0, 2.0, 3.0);
        let gl = GaussLegendre::new(40);
        let b: Vec<f64> = (0..=48).map(|k| -12.0 + 0.5 * k as f64).collect();
        for th in [0.3, 1.2, -0.7] {
            let (a, c) = ((x / y as f64).sqrt(), (z / y as f64).sqrt());
            let def = gl.integrate_panels(&b, |e| heat_kernel_unchecked(e, 1.0) * (n.cdf(a * th) - n.cdf(a * th - c * e)));
            let g = lemma_a1_g(x, y, z, th);
            assert!((def - g).abs() < 1e-10, "θ={th}: {def} vs {g}");
        }
    }

    #[test]
    fn a1_routes() {
        for (x, y, z) in [(1.0, 1.0, 1.0), (10.0, 0.1, 10.0), (0.1, 10.0, 0.1)] {
            let q = lemma_a1_quadrature(x, y, z).unwrap();
            let d = lemma_a1_double_integral(x, y, z).unwrap();
            assert!((q / d - 1.0).abs() < 1e-6, "({x},{y},{z}): {q} vs {d}");
            assert!(q <= lemma_a1_bound(x, y, z).unwrap());
        }
        let r = lemma_a1_check(1.0, 1.0, 1.0, 200_000, Seed::new(4, 0)).unwrap();
        assert!((r.quadrature - r.monte_carlo).abs() < 4.0 * r.monte_carlo_stderr);
        let tiny = lemma_a1_check(1.0, 1.0, 1e-9, 10_000, Seed::new(4, 1)).unwrap();
        assert!(tiny.bound < 1e-9 && tiny.quadrature < 1e-9 && tiny.monte_carlo.abs() < 1e-3);
        assert!(lemma_a1_check(0.0, 1.0, 1.0, 10, Seed::new(0, 0)).is_err());
    }

    fn closed_form_beta2(h: f64, v: f64) -> f64 {
        // ∫_0^W (√(h+w²)-w)² 2w dw = hW² + W⁴ - 4∫_0^W w²√(h+w²) dw.
        let w = v.sqrt();
        let r = (h + w * w).sqrt();
        let prim = |w: f64, r: f64| w * (2.0 * w * w + h) * r / 8.0 - h * h / 8.0 * (w + r).ln();
        h * w * w + w.powi(4) - 4.0 * (prim(w, r) - prim(0.0, h.sqrt()))
    }

    #[test]
    fn lemma1_term_against_closed_form() {
        for (h, v) in [(1e-3, 0.5), (0.25, 0.25), (1.0 / 64.0, 1.0)] {
            let a = lemma1_term(h, v, 2.0);
            let b = closed_form_beta2(h, v);
            assert!((a - b).abs() < 1e-12 + 1e-9 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn lemma1_sequences() {
        let ns: Vec<usize> = (4..=10).map(|k| 1usize << k).collect();
        let r = lemma1_numeric_check(0.0, 1.0, 2.0, &ns).unwrap();
        assert!(r.strictly_decreasing);
        assert!((r.values[0] - 0.3178).abs() < 1e-3);
        assert!(r.log_slope < 0.0);
        let z = lemma1_numeric_check(0.5, 0.5, 2.0, &ns).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(lemma1_numeric_check(0.0, 1.0, 1.5, &ns).is_err());
        assert!(lemma1_numeric_check(1.0, 0.0, 2.0, &ns).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn a2_invariant_under_beta_sigma2_exchange(a in 0.01f64..10.0, b in 0.01f64..10.0, s1 in 0.01f64..10.0, s2 in 0.01f64..10.0) {
            prop_assert_eq!(lemma_a2_kernel_moment(a, b, s1, s2).unwrap(), lemma_a2_kernel_moment(a, s2, s1, b).unwrap());
        }
    }
}
