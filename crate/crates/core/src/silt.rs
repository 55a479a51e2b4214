//! Mollified self-intersection local time and two estimators of its derivative process γ.

use serde::{Deserialize, Serialize};

use crate::error::{config, coverage, domain, Result};
use crate::local_time::LocalTimeField;
use crate::paths::{heat_kernel_deriv_unchecked, heat_kernel_unchecked, Path, TimeGrid};
use crate::quadrature::GaussHermiteRule;

/// Pairs with `(B_u - B_s)² > CUTOFF_VAR · eps` are skipped (kernel below e^{-32}).
const CUTOFF_VAR: f64 = 64.0;

/// Estimation route for γ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaRoute {
    Direct,
    ClarkOcone,
}

/// γ evaluated at partition points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub route: GammaRoute,
    /// Mollifier bandwidth (direct route).
    pub eps: Option<f64>,
    /// θ-quadrature size (Clark–Ocone route).
    pub theta_nodes: Option<usize>,
}

/// Default mollifier bandwidth `dt^{3/4}`.
pub fn default_eps(grid: &TimeGrid) -> f64 {
    grid.dt().powf(0.75)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("mollifier bandwidth must be positive, got {eps}")))
    }
}

/// `Σ_{s<u<n} p_eps(B_u - B_s - y)·dt²` over left-point time cells.
pub fn silt_alpha(path: &Path, y: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let n = path.grid.n_steps();
    let b = &path.values;
    let cut2 = CUTOFF_VAR * eps;
    let mut total = 0.0;
    for u in 1..n {
        let bu = b[u] - y;
        let mut row = 0.0;
        for &bs in &b[..u] {
            let d = bu - bs;
            if d * d <= cut2 {
                row += heat_kernel_unchecked(d, eps);
            }
        }
        total += row;
    }
    let dt = path.grid.dt();
    Ok(total * dt * dt)
}

#[inline]
fn direct_row(b: &[f64], u: usize, eps: f64, cut2: f64) -> f64 {
    let bu = b[u];
    let mut row = 0.0;
    for &bs in &b[..u] {
        let d = bu - bs;
        if d * d <= cut2 {
            row += heat_kernel_deriv_unchecked(d, eps);
        }
    }
    row
}

/// `γ_{t_i} = Σ_{s<u<i} p′_eps(B_u - B_s)·dt²` at each partition point, accumulated row by row.
pub fn gamma_direct(path: &Path, eps: f64, partition: &TimeGrid) -> Result<GammaPath> {
    check_eps(eps)?;
    let stride = path.grid.nesting_stride(partition)?;
    let b = &path.values;
    let dt2 = path.grid.dt() * path.grid.dt();
    let cut2 = CUTOFF_VAR * eps;
    let mut values = Vec::with_capacity(partition.len());
    values.push(0.0);
    let mut acc = 0.0;
    let mut u = 0;
    for p in 1..=partition.n_steps() {
        let end = p * stride;
        while u < end {
            acc += dt2 * direct_row(b, u, eps, cut2);
            u += 1;
        }
        values.push(acc);
    }
    Ok(GammaPath { grid: *partition, values, route: GammaRoute::Direct, eps: Some(eps), theta_nodes: None })
}

/// Direct estimator at a single grid index, summed from scratch.
pub fn gamma_direct_at(path: &Path, eps: f64, index: usize) -> Result<f64> {
    check_eps(eps)?;
    if index > path.grid.n_steps() {
        return Err(crate::Error::IndexOutOfRange { index, len: path.grid.len() });
    }
    let dt2 = path.grid.dt() * path.grid.dt();
    let cut2 = CUTOFF_VAR * eps;
    let mut acc = 0.0;
    for u in 0..index {
        acc += dt2 * direct_row(&path.values, u, eps, cut2);
    }
    Ok(acc)
}

/// Clark–Ocone estimator `γ_t = Σ_{t_j<t} 2·E^θ[L_{t_j}^{B_{t_j}+θ√(t-t_j)} - L_{t_j}^{B_{t_j}}]·ΔB_j`.
pub fn gamma_clark_ocone(
    path: &Path,
    field: &LocalTimeField,
    rule: &GaussHermiteRule,
    partition: &TimeGrid,
) -> Result<GammaPath> {
    if field.time_grid != path.grid {
        return Err(config("field time grid does not match the path grid"));
    }
    if !field.covers_support() {
        let (lo, hi) = field.support();
        return Err(coverage(format!(
            "field grid [{}, {}] does not contain the occupation support [{lo}, {hi}]",
            field.space_grid.x_min(),
            field.space_grid.x_max()
        )));
    }
    let stride = path.grid.nesting_stride(partition)?;
    let b = &path.values;
    let grid = &path.grid;
    let mut values = Vec::with_capacity(partition.len());
    values.push(0.0);
    for p in 1..=partition.n_steps() {
        let i = p * stride;
        let t = grid.t(i);
        let mut acc = 0.0;
        for j in 1..i {
            let s = (t - grid.t(j)).sqrt();
            let bj = b[j];
            let base = field.interp_row(j, bj);
            let e = rule.expect(|th| field.interp_row(j, bj + th * s) - base);
            acc += 2.0 * e * (b[j + 1] - bj);
        }
        values.push(acc);
    }
    Ok(GammaPath {
        grid: *partition,
        values,
        route: GammaRoute::ClarkOcone,
        eps: None,
        theta_nodes: Some(rule.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_time::{build_default_field, build_local_time_field, default_bandwidth};
    use crate::paths::{simulate_brownian, Seed};
    use proptest::prelude::*;

    fn path(n: usize, r: u64) -> Path {
        simulate_brownian(TimeGrid::unit(1.0, n).unwrap(), Seed::new(31, r))
    }

    #[test]
    fn alpha_conventions() {
        let p = path(1, 0);
        assert_eq!(silt_alpha(&p, 0.0, 0.1).unwrap(), 0.0);
        let q = path(64, 1);
        assert_eq!(silt_alpha(&q, 0.0, 0.01).unwrap(), silt_alpha(&q.negated(), 0.0, 0.01).unwrap());
        assert!(silt_alpha(&q, 0.0, 0.0).is_err());
    }

    #[test]
    fn direct_antisymmetry_and_incremental() {
        let p = path(256, 2);
        let eps = default_eps(&p.grid);
        let part = TimeGrid::unit(1.0, 16).unwrap();
        let g = gamma_direct(&p, eps, &part).unwrap();
        let h = gamma_direct(&p.negated(), eps, &part).unwrap();
        assert_eq!(g.values[0], 0.0);
        for (a, b) in g.values.iter().zip(&h.values) {
            assert_eq!(*a, -*b);
        }
        for (k, v) in g.values.iter().enumerate() {
            let s = gamma_direct_at(&p, eps, k * 16).unwrap();
            assert!((v - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }
        let bad = TimeGrid::unit(1.0, 24).unwrap();
        assert!(matches!(gamma_direct(&p, eps, &bad), Err(crate::Error::Config(_))));
    }

    #[test]
    fn direct_converges_as_eps_shrinks() {
        let p = path(2048, 3);
        let part = TimeGrid::unit(1.0, 1).unwrap();
        let mut eps = default_eps(&p.grid);
        let mut vals = Vec::new();
        for _ in 0..4 {
            vals.push(gamma_direct(&p, eps, &part).unwrap().values[1]);
            eps *= 0.5;
        }
        let d: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(d.iter().all(|x| x.is_finite()));
        assert!(d[2] < d[0], "increments {d:?}");
    }

    #[test]
    fn clark_ocone_basics() {
        let p = path(128, 4);
        let eps_l = default_bandwidth(&p.grid);
        let f = build_default_field(&p, eps_l).unwrap();
        let rule = GaussHermiteRule::default();
        let part = TimeGrid::unit(1.0, 4).unwrap();
        let g = gamma_clark_ocone(&p, &f, &rule, &part).unwrap();
        assert_eq!(g.values[0], 0.0);
        assert!(g.values.iter().all(|v| v.is_finite()));
        let q = p.negated();
        let fq = build_local_time_field(&q, f.space_grid.mirrored(), eps_l).unwrap();
        let h = gamma_clark_ocone(&q, &fq, &rule, &part).unwrap();
        for (a, b) in g.values.iter().zip(&h.values) {
            assert_eq!(*a, -*b);
        }
        let other = path(64, 4);
        assert!(gamma_clark_ocone(&other, &f, &rule, &TimeGrid::unit(1.0, 4).unwrap()).is_err());
    }

    #[test]
    fn clark_ocone_requires_full_support() {
        let p = path(64, 5);
        let eps_l = default_bandwidth(&p.grid);
        let (lo, hi) = p.range();
        let s = eps_l.sqrt();
        let g = crate::local_time::SpaceGrid::new(lo - 4.5 * s, hi + 4.5 * s, 200).unwrap();
        let f = build_local_time_field(&p, g, eps_l).unwrap();
        let part = TimeGrid::unit(1.0, 1).unwrap();
        let r = gamma_clark_ocone(&p, &f, &GaussHermiteRule::default(), &part);
        assert!(matches!(r, Err(crate::Error::Coverage(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn alpha_nonnegative_and_even(r in 0u64..500, e in 1e-3f64..0.1) {
            let p = path(64, r);
            let a = silt_alpha(&p, 0.0, e).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, silt_alpha(&p.negated(), 0.0, e).unwrap());
        }
    }
}
