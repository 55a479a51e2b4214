//! Seedable Brownian paths on uniform grids and the Gaussian heat kernel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, coverage, domain, Result};

/// Random-stream address: `root` selects the experiment, `stream` the replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub root: u64,
    pub stream: u64,
}

/// Named sub-streams of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SubStream {
    Driver = 1,
    NoisePositive = 2,
    NoiseNegative = 3,
    NoiseModes = 4,
    Auxiliary = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(root: u64, stream: u64) -> Self {
        Self { root, stream }
    }

    /// Generator for one sub-stream; distinct (root, stream, tag) give independent sequences.
    pub fn rng(&self, sub: SubStream) -> ChaCha8Rng {
        self.rng_tagged(sub as u64)
    }

    /// Generator for an arbitrary numeric tag.
    pub fn rng_tagged(&self, tag: u64) -> ChaCha8Rng {
        let key = splitmix64(splitmix64(self.root) ^ splitmix64(tag.wrapping_mul(0xA24B_AED4_963E_E407)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(self.stream);
        rng
    }

    /// Independent seed family derived from a label, keeping the replicate index.
    pub fn derive(&self, label: u64) -> Seed {
        Seed {
            root: splitmix64(self.root ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))),
            stream: self.stream,
        }
    }
}

/// Fill `out` with independent N(0, 1) draws.
pub fn fill_standard_normal<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Uniform time grid `t_i = t_start + (i / n_steps)(t_end - t_start)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(config("time grid needs n_steps >= 1"));
        }
        if !(t_start.is_finite() && t_end.is_finite()) || t_start >= t_end {
            return Err(config(format!("time grid needs t_start < t_end, got [{t_start}, {t_end}]")));
        }
        Ok(Self { t_start, t_end, n_steps })
    }

    /// Grid on `[0, t_end]`.
    pub fn unit(t_end: f64, n_steps: usize) -> Result<Self> {
        Self::new(0.0, t_end, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Grid point `t_i`.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            return self.t_end;
        }
        self.t_start + (self.t_end - self.t_start) * (i as f64 / self.n_steps as f64)
    }

    /// Index stride if `partition` consists of every k-th point of `self`.
    pub fn nesting_stride(&self, partition: &TimeGrid) -> Result<usize> {
        let tol = 1e-9 * self.duration().max(1.0);
        if (partition.t_start - self.t_start).abs() > tol {
            return Err(config("partition must start at the path grid start"));
        }
        if partition.t_end > self.t_end + tol {
            return Err(config("partition extends beyond the path grid"));
        }
        let ratio = partition.dt() / self.dt();
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(config(format!(
                "partition step {} is not a multiple of path step {}",
                partition.dt(),
                self.dt()
            )));
        }
        let k = k as usize;
        if k * partition.n_steps > self.n_steps {
            return Err(config("partition extends beyond the path grid"));
        }
        Ok(k)
    }
}

/// Sampled trajectory with the seed that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub seed: Seed,
}

impl Path {
    /// Wraps given values; length must match the grid.
    pub fn from_values(grid: TimeGrid, values: Vec<f64>, seed: Seed) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(config(format!(
                "path has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values, seed })
    }

    /// Pointwise negation (reflected path).
    pub fn negated(&self) -> Path {
        Path {
            grid: self.grid,
            values: self.values.iter().map(|v| -v).collect(),
            seed: self.seed,
        }
    }

    /// Minimum and maximum of the samples.
    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Linear interpolation at time `t` inside the grid.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let g = &self.grid;
        let tol = 1e-12 * g.duration().max(1.0);
        if t < g.t_start() - tol || t > g.t_end() + tol {
            return Err(coverage(format!(
                "time {t} outside path range [{}, {}]",
                g.t_start(),
                g.t_end()
            )));
        }
        Ok(self.interp_unchecked(t))
    }

    pub(crate) fn interp_unchecked(&self, t: f64) -> f64 {
        let g = &self.grid;
        let p = ((t - g.t_start()) / g.dt()).clamp(0.0, g.n_steps() as f64);
        let i = (p.floor() as usize).min(g.n_steps() - 1);
        let f = p - i as f64;
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }

    /// Increments `values[i+1] - values[i]`.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Brownian motion started at 0 on `grid`, using the driver sub-stream of `seed`.
pub fn simulate_brownian(grid: TimeGrid, seed: Seed) -> Path {
    simulate_brownian_stream(grid, seed, SubStream::Driver)
}

/// Brownian motion on a specified sub-stream.
pub fn simulate_brownian_stream(grid: TimeGrid, seed: Seed, sub: SubStream) -> Path {
    let mut rng = seed.rng(sub);
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    let mut values = Vec::with_capacity(n + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        acc += sd * z;
        values.push(acc);
    }
    Path { grid, values, seed }
}

/// Two-sided Brownian motion `W_y`, `y` in `[-extent, extent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSidedPath {
    pub positive: Path,
    pub negative: Path,
}

impl TwoSidedPath {
    /// Covered half-width.
    pub fn extent(&self) -> f64 {
        self.positive.grid.t_end().min(self.negative.grid.t_end())
    }

    /// `W_y` by linear interpolation; positive branch for `y >= 0`.
    pub fn value_at(&self, y: f64) -> Result<f64> {
        if y >= 0.0 {
            self.positive.value_at(y)
        } else {
            self.negative.value_at(-y)
        }
    }

    pub(crate) fn value_unchecked(&self, y: f64) -> f64 {
        if y >= 0.0 {
            self.positive.interp_unchecked(y)
        } else {
            self.negative.interp_unchecked(-y)
        }
    }

    /// Identically zero noise on `[-extent, extent]`.
    pub fn zero(extent: f64, n_steps: usize, seed: Seed) -> Result<Self> {
        let g = TimeGrid::unit(extent, n_steps)?;
        let p = Path::from_values(g, vec![0.0; n_steps + 1], seed)?;
        Ok(Self { positive: p.clone(), negative: p })
    }
}

/// Two independent one-sided branches glued at 0; step at most `dy`.
pub fn simulate_two_sided(extent: f64, dy: f64, seed: Seed) -> Result<TwoSidedPath> {
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(config(format!("two-sided extent must be positive, got {extent}")));
    }
    if !(dy > 0.0 && dy.is_finite()) {
        return Err(config(format!("two-sided step must be positive, got {dy}")));
    }
    let n = (extent / dy).ceil().max(1.0) as usize;
    let grid = TimeGrid::unit(extent, n)?;
    Ok(TwoSidedPath {
        positive: simulate_brownian_stream(grid, seed, SubStream::NoisePositive),
        negative: simulate_brownian_stream(grid, seed, SubStream::NoiseNegative),
    })
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian density with variance `eps`.
pub fn heat_kernel(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(heat_kernel_unchecked(x, eps))
}

/// Derivative `-(x/eps) p_eps(x)`.
pub fn heat_kernel_deriv(x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(heat_kernel_deriv_unchecked(x, eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("kernel bandwidth must be positive, got {eps}")))
    }
}

#[inline]
pub(crate) fn heat_kernel_unchecked(x: f64, eps: f64) -> f64 {
    INV_SQRT_2PI / eps.sqrt() * (-x * x / (2.0 * eps)).exp()
}

#[inline]
pub(crate) fn heat_kernel_deriv_unchecked(x: f64, eps: f64) -> f64 {
    -(x / eps) * heat_kernel_unchecked(x, eps)
}
