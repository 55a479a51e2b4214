//! Kernel-smoothed occupation density `L_t^x` on a time × space grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{config, coverage, domain, Error, Result};
use crate::paths::{Path, TimeGrid};

/// Kernel truncation radius in units of the kernel standard deviation.
pub const KERNEL_CUTOFF_SD: f64 = 6.0;
/// Required coverage beyond the path range, in kernel standard deviations.
pub const COVERAGE_SD: f64 = 4.0;

/// Uniform space grid with nodes `x_j = origin + (j0 + j)·dx`, `j = 0..=m_cells`.
///
/// Grids from [`SpaceGrid::aligned`] use `origin = 0`, so nodes are integer
/// multiples of `dx` and the mirrored grid has bitwise-mirrored nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    origin: f64,
    j0: i64,
    dx: f64,
    m_cells: usize,
}

impl SpaceGrid {
    /// Grid on `[x_min, x_max]` with `m_cells` cells.
    pub fn new(x_min: f64, x_max: f64, m_cells: usize) -> Result<Self> {
        if m_cells == 0 || !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(config(format!("invalid space grid [{x_min}, {x_max}] with {m_cells} cells")));
        }
        Ok(Self { origin: x_min, j0: 0, dx: (x_max - x_min) / m_cells as f64, m_cells })
    }

    /// Grid with nodes `j·dx`, `j = j_min..=j_min + m_cells`.
    pub fn aligned(dx: f64, j_min: i64, m_cells: usize) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) || m_cells == 0 {
            return Err(config(format!("invalid aligned space grid dx={dx}, cells={m_cells}")));
        }
        Ok(Self { origin: 0.0, j0: j_min, dx, m_cells })
    }

    /// Default grid for a path: `dx = ½√eps_L`, covering the full truncated kernel support.
    pub fn for_path(path: &Path, eps_l: f64) -> Result<Self> {
        if !(eps_l > 0.0) {
            return Err(domain(format!("bandwidth must be positive, got {eps_l}")));
        }
        let s = eps_l.sqrt();
        let dx = 0.5 * s;
        let (lo, hi) = path.range();
        let margin = KERNEL_CUTOFF_SD * s + dx;
        let j_min = ((lo - margin) / dx).floor() as i64;
        let j_max = ((hi + margin) / dx).ceil() as i64;
        Self::aligned(dx, j_min, (j_max - j_min) as usize)
    }

    /// Reflection `x ↦ -x`.
    pub fn mirrored(&self) -> Self {
        Self {
            origin: -self.origin,
            j0: -(self.j0 + self.m_cells as i64),
            dx: self.dx,
            m_cells: self.m_cells,
        }
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn m_cells(&self) -> usize {
        self.m_cells
    }
    pub fn x_min(&self) -> f64 {
        self.x(0)
    }
    pub fn x_max(&self) -> f64 {
        self.x(self.m_cells)
    }

    /// Node `x_j`.
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.origin + (self.j0 + j as i64) as f64 * self.dx
    }

    /// Position in index units, `(x - x_0)/dx`, computed so mirrored queries stay mirrored.
    #[inline]
    fn locate(&self, x: f64) -> f64 {
        (x - self.origin) / self.dx - self.j0 as f64
    }
}

/// Mollified occupation density; entry `(i, j)` approximates `L_{t_i}^{x_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeField {
    pub time_grid: TimeGrid,
    pub space_grid: SpaceGrid,
    pub eps_l: f64,
    values: Vec<f64>,
    support: (f64, f64),
}

/// Default bandwidth `dt/4`.
pub fn default_bandwidth(grid: &TimeGrid) -> f64 {
    grid.dt() / 4.0
}

struct KernelStamp {
    eps_l: f64,
    cut2: f64,
    half_width: i64,
    scale: f64,
}

impl KernelStamp {
    fn new(eps_l: f64, dx: f64, dt: f64) -> Self {
        let cut = KERNEL_CUTOFF_SD * eps_l.sqrt();
        Self {
            eps_l,
            cut2: cut * cut,
            half_width: (cut / dx).ceil() as i64 + 1,
            scale: dt / (2.0 * std::f64::consts::PI * eps_l).sqrt(),
        }
    }

    /// Adds `p_{eps_L}(b - x_j)·dt` to every node within the truncation radius.
    #[inline]
    fn add(&self, row: &mut [f64], grid: &SpaceGrid, b: f64) {
        let c = grid.locate(b).round() as i64;
        let j_lo = (c - self.half_width).max(0);
        let j_hi = (c + self.half_width).min(grid.m_cells() as i64);
        if j_hi < j_lo {
            return;
        }
        for j in j_lo as usize..=j_hi as usize {
            let d = b - grid.x(j);
            let d2 = d * d;
            if d2 <= self.cut2 {
                row[j] += self.scale * (-d2 / (2.0 * self.eps_l)).exp();
            }
        }
    }
}

fn check_coverage(path: &Path, space_grid: &SpaceGrid, eps_l: f64) -> Result<(f64, f64)> {
    if !(eps_l > 0.0 && eps_l.is_finite()) {
        return Err(domain(format!("bandwidth must be positive, got {eps_l}")));
    }
    let sd = eps_l.sqrt();
    let n = path.grid.n_steps();
    let (lo, hi) = path.values[..n]
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (need_lo, need_hi) = (lo - COVERAGE_SD * sd, hi + COVERAGE_SD * sd);
    if space_grid.x_min() > need_lo {
        return Err(coverage(format!(
            "space grid lower bound {} above required {need_lo}",
            space_grid.x_min()
        )));
    }
    if space_grid.x_max() < need_hi {
        return Err(coverage(format!(
            "space grid upper bound {} below required {need_hi}",
            space_grid.x_max()
        )));
    }
    let cut = KERNEL_CUTOFF_SD * sd;
    Ok((lo - cut, hi + cut))
}

/// Builds the field `L_{t_i}^{x_j} = Σ_{k<i} p_{eps_L}(B_{t_k} - x_j)·dt` incrementally.
pub fn build_local_time_field(path: &Path, space_grid: SpaceGrid, eps_l: f64) -> Result<LocalTimeField> {
    let support = check_coverage(path, &space_grid, eps_l)?;
    let n = path.grid.n_steps();
    let m1 = space_grid.m_cells() + 1;
    let stamp = KernelStamp::new(eps_l, space_grid.dx(), path.grid.dt());
    let mut values = vec![0.0; (n + 1) * m1];
    for i in 1..=n {
        let (prev, cur) = values.split_at_mut(i * m1);
        let cur = &mut cur[..m1];
        cur.copy_from_slice(&prev[(i - 1) * m1..]);
        stamp.add(cur, &space_grid, path.values[i - 1]);
    }
    Ok(LocalTimeField { time_grid: path.grid, space_grid, eps_l, values, support })
}

/// Final row `L_{t_n}^{x_j}` only; bitwise equal to the last row of the full field.
pub fn build_terminal_row(path: &Path, space_grid: SpaceGrid, eps_l: f64) -> Result<Vec<f64>> {
    check_coverage(path, &space_grid, eps_l)?;
    let n = path.grid.n_steps();
    let stamp = KernelStamp::new(eps_l, space_grid.dx(), path.grid.dt());
    let mut row = vec![0.0; space_grid.m_cells() + 1];
    for &b in &path.values[..n] {
        stamp.add(&mut row, &space_grid, b);
    }
    Ok(row)
}

/// Linear interpolation of a single field row; zero outside the grid.
pub fn interp_in_row(row: &[f64], grid: &SpaceGrid, x: f64) -> f64 {
    let p = grid.locate(x);
    let jf = p.floor();
    let m = grid.m_cells();
    if !(jf >= 0.0) || jf >= m as f64 {
        if jf == m as f64 && p == jf {
            return row[m];
        }
        return 0.0;
    }
    let j = jf as usize;
    let wl = (grid.x(j + 1) - x) / grid.dx();
    let wr = (x - grid.x(j)) / grid.dx();
    row[j] * wl + row[j + 1] * wr
}

/// Trapezoidal `∫ v(z)² dz` over a row with spacing `dx`.
pub fn row_squared_integral(row: &[f64], dx: f64) -> f64 {
    trapezoid(row, dx, |v| v * v)
}

/// Builds the field on the default grid for `path` with bandwidth `eps_l`.
pub fn build_default_field(path: &Path, eps_l: f64) -> Result<LocalTimeField> {
    build_local_time_field(path, SpaceGrid::for_path(path, eps_l)?, eps_l)
}

impl LocalTimeField {
    fn m1(&self) -> usize {
        self.space_grid.m_cells() + 1
    }

    /// Row `i` (all space nodes at time `t_i`).
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let n1 = self.time_grid.len();
        if i >= n1 {
            return Err(Error::IndexOutOfRange { index: i, len: n1 });
        }
        let m1 = self.m1();
        Ok(&self.values[i * m1..(i + 1) * m1])
    }

    /// Entry `(i, j)`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m1() + j]
    }

    /// All entries, row-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Interval outside which the field is identically zero.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// True if the space grid contains the whole support, so off-grid values are exactly zero.
    pub fn covers_support(&self) -> bool {
        self.space_grid.x_min() <= self.support.0 && self.space_grid.x_max() >= self.support.1
    }

    /// Linear interpolation in space at time index `i`; zero outside the grid.
    #[inline]
    pub fn interp_row(&self, i: usize, x: f64) -> f64 {
        let m1 = self.m1();
        interp_in_row(&self.values[i * m1..(i + 1) * m1], &self.space_grid, x)
    }

    /// Bilinear interpolation at `(t, x)`.
    pub fn interp(&self, t: f64, x: f64) -> f64 {
        let g = &self.time_grid;
        let p = ((t - g.t_start()) / g.dt()).clamp(0.0, g.n_steps() as f64);
        let i = (p.floor() as usize).min(g.n_steps().saturating_sub(1));
        let f = p - i as f64;
        let a = self.interp_row(i, x);
        if f == 0.0 {
            return a;
        }
        let b = self.interp_row(i + 1, x);
        a * (1.0 - f) + b * f
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= c;
        }
        out
    }

    /// Trapezoidal `∫ L_{t_i}^z dz`.
    pub fn mass(&self, i: usize) -> Result<f64> {
        let r = self.row(i)?;
        Ok(trapezoid(r, self.space_grid.dx(), |v| v))
    }

    fn check_path(&self, path: &Path) -> Result<()> {
        if path.grid != self.time_grid || path.values.len() != self.time_grid.len() {
            return Err(config("path grid does not match the field's time grid"));
        }
        Ok(())
    }

    /// Writes the binary dump: header (little-endian) then row-major `f64` payload.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.time_grid.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.time_grid.t_start().to_le_bytes())?;
        w.write_all(&self.time_grid.t_end().to_le_bytes())?;
        w.write_all(&(self.space_grid.m_cells as u64).to_le_bytes())?;
        w.write_all(&self.space_grid.origin.to_le_bytes())?;
        w.write_all(&self.space_grid.j0.to_le_bytes())?;
        w.write_all(&self.space_grid.dx.to_le_bytes())?;
        w.write_all(&self.eps_l.to_le_bytes())?;
        w.write_all(&self.support.0.to_le_bytes())?;
        w.write_all(&self.support.1.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump written by [`LocalTimeField::write_dump`].
    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| config(format!("field dump: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != DUMP_MAGIC {
            return Err(config("field dump: bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        if u32::from_le_bytes(b4) != DUMP_VERSION {
            return Err(config("field dump: unsupported version"));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(b8)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let t0 = f64::from_le_bytes(next(&mut r)?);
        let t1 = f64::from_le_bytes(next(&mut r)?);
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let origin = f64::from_le_bytes(next(&mut r)?);
        let j0 = i64::from_le_bytes(next(&mut r)?);
        let dx = f64::from_le_bytes(next(&mut r)?);
        let eps_l = f64::from_le_bytes(next(&mut r)?);
        let s0 = f64::from_le_bytes(next(&mut r)?);
        let s1 = f64::from_le_bytes(next(&mut r)?);
        let time_grid = TimeGrid::new(t0, t1, n)?;
        if m == 0 || !(dx > 0.0) {
            return Err(config("field dump: invalid space grid"));
        }
        let space_grid = SpaceGrid { origin, j0, dx, m_cells: m };
        let len = (n + 1) * (m + 1);
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        Ok(Self { time_grid, space_grid, eps_l, values, support: (s0, s1) })
    }
}

const DUMP_MAGIC: &[u8; 4] = b"SLTF";
const DUMP_VERSION: u32 = 1;

fn trapezoid<F: Fn(f64) -> f64>(v: &[f64], h: f64, f: F) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let inner: f64 = v.iter().map(|&x| f(x)).sum();
    h * (inner - 0.5 * (f(v[0]) + f(v[v.len() - 1])))
}

/// `L_{t_i}^{B_{t_i}}` for every grid index.
pub fn running_local_time(field: &LocalTimeField, path: &Path) -> Result<Vec<f64>> {
    field.check_path(path)?;
    Ok(path
        .values
        .iter()
        .enumerate()
        .map(|(i, &b)| field.interp_row(i, b))
        .collect())
}

/// Trapezoidal `∫ (L_{t_i}^z)² dz`.
pub fn squared_field_integral(field: &LocalTimeField, t_index: usize) -> Result<f64> {
    let r = field.row(t_index)?;
    Ok(trapezoid(r, field.space_grid.dx(), |v| v * v))
}

/// Trapezoidal `∫_0^T (L_r^{B_r})^p dr`.
pub fn power_local_time_integral(field: &LocalTimeField, path: &Path, exponent: f64) -> Result<f64> {
    if !(exponent >= 0.0) {
        return Err(domain(format!("exponent must be non-negative, got {exponent}")));
    }
    let lt = running_local_time(field, path)?;
    Ok(trapezoid(&lt, path.grid.dt(), |v| v.powf(exponent)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{simulate_brownian, Seed};
    use proptest::prelude::*;

    fn path(n: usize, r: u64) -> Path {
        simulate_brownian(TimeGrid::unit(1.0, n).unwrap(), Seed::new(21, r))
    }

    #[test]
    fn zero_path_grows_linearly() {
        let g = TimeGrid::unit(1.0, 64).unwrap();
        let p = Path::from_values(g, vec![0.0; 65], Seed::new(0, 0)).unwrap();
        let eps = 1e-3;
        let f = build_default_field(&p, eps).unwrap();
        let p0 = crate::paths::heat_kernel(0.0, eps).unwrap();
        for i in [0usize, 1, 17, 64] {
            let v = f.interp_row(i, 0.0);
            assert!((v - p0 * g.t(i)).abs() < 1e-12 * (1.0 + v), "{i}: {v}");
        }
    }

    #[test]
    fn invariants_on_random_path() {
        let p = path(256, 1);
        let f = build_default_field(&p, default_bandwidth(&p.grid)).unwrap();
        assert!(f.row(0).unwrap().iter().all(|&v| v == 0.0));
        for i in 1..=256 {
            let (a, b) = (f.row(i - 1).unwrap(), f.row(i).unwrap());
            assert!(a.iter().zip(b).all(|(x, y)| *y >= *x && *x >= 0.0));
        }
        for (i, t) in [(128usize, 0.5), (256, 1.0)] {
            let m = f.mass(i).unwrap();
            assert!((m - t).abs() < 0.01 * t, "mass {m} at {t}");
        }
        assert!(f.covers_support());
        assert!(f.row(257).is_err());
        assert!(squared_field_integral(&f, 999).is_err());
        assert_eq!(squared_field_integral(&f, 0).unwrap(), 0.0);
    }

    #[test]
    fn coverage_error_names_bound() {
        let p = path(64, 2);
        let (lo, hi) = p.range();
        let g = SpaceGrid::new(lo, hi + 1.0, 100).unwrap();
        match build_local_time_field(&p, g, 1e-3) {
            Err(Error::Coverage(m)) => assert!(m.contains("lower")),
            other => panic!("expected coverage error, got {other:?}"),
        }
        assert!(matches!(build_local_time_field(&p, g, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn running_local_time_basics() {
        let p = path(128, 3);
        let f = build_default_field(&p, default_bandwidth(&p.grid)).unwrap();
        let lt = running_local_time(&f, &p).unwrap();
        assert_eq!(lt[0], 0.0);
        assert!(lt.iter().all(|&v| v >= 0.0));
        assert_eq!(power_local_time_integral(&f, &p, 0.0).unwrap(), 1.0);
        let other = path(64, 3);
        assert!(running_local_time(&f, &other).is_err());
        assert!(power_local_time_integral(&f, &p, -1.0).is_err());
    }

    #[test]
    fn mirrored_field_is_exact_mirror() {
        let p = path(200, 4);
        let eps = default_bandwidth(&p.grid);
        let f = build_default_field(&p, eps).unwrap();
        let q = p.negated();
        let g = build_local_time_field(&q, f.space_grid.mirrored(), eps).unwrap();
        let m = f.space_grid.m_cells();
        for i in [0usize, 50, 200] {
            for j in 0..=m {
                assert_eq!(f.value(i, j), g.value(i, m - j));
            }
            for x in [-0.3, 0.0123, 0.5, 1.7] {
                assert_eq!(f.interp_row(i, x), g.interp_row(i, -x));
            }
        }
    }

    #[test]
    fn terminal_row_matches_field() {
        let p = path(300, 7);
        let eps = default_bandwidth(&p.grid);
        let f = build_default_field(&p, eps).unwrap();
        let row = build_terminal_row(&p, f.space_grid, eps).unwrap();
        assert_eq!(row.as_slice(), f.row(300).unwrap());
        assert_eq!(row_squared_integral(&row, f.space_grid.dx()), squared_field_integral(&f, 300).unwrap());
    }

    #[test]
    fn dump_round_trip() {
        let p = path(32, 5);
        let f = build_default_field(&p, 0.01).unwrap();
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 * 10 + 8 * f.values().len());
        let g = LocalTimeField::read_dump(buf.as_slice()).unwrap();
        assert_eq!(f, g);
        assert!(LocalTimeField::read_dump(&buf[..10]).is_err());
    }

    #[test]
    fn bilinear_matches_rows_on_nodes() {
        let p = path(64, 6);
        let f = build_default_field(&p, 0.002).unwrap();
        let x = f.space_grid.x(10);
        assert_eq!(f.interp(f.time_grid.t(7), x), f.value(7, 10));
        let mid = f.interp(0.5 * (f.time_grid.t(7) + f.time_grid.t(8)), x);
        assert!((mid - 0.5 * (f.value(7, 10) + f.value(8, 10))).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn homogeneity(r in 0u64..1000, e in 0.1f64..2.0) {
            let p = path(64, r);
            let f = build_default_field(&p, 0.004).unwrap();
            let a = power_local_time_integral(&f, &p, e).unwrap();
            let b = power_local_time_integral(&f.scaled(2.0), &p, e).unwrap();
            prop_assert!((b - 2f64.powf(e) * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }

        #[test]
        fn conservation(r in 0u64..1000) {
            let p = path(256, r);
            let f = build_default_field(&p, default_bandwidth(&p.grid)).unwrap();
            prop_assert!((f.mass(128).unwrap() - 0.5).abs() < 0.005);
            prop_assert!((f.mass(256).unwrap() - 1.0).abs() < 0.01);
        }
    }
}
