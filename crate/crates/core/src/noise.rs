//! Jointly distributed standard and averaged Wiener increments.
//!
//! For a scalar Brownian motion `W` on the grid `t_m = m tau`, the averaged
//! increment is `<W>_m - <W>_{m-1}` where `<W>_m` is the time mean of `W` over
//! `[t_{m-1}, t_m]` and `<W>_0 = 0`. Writing `W` on each step as its linear
//! interpolant plus an independent Brownian bridge gives the exact sampler
//!
//! ```text
//! std[m]    = sqrt(tau) zeta_m
//! bridge[m] = sqrt(tau / 12) eta_m
//! avg[m]    = (std[m] + std[m-1]) / 2 + bridge[m] - bridge[m-1]
//! ```
//!
//! with `std[0] = bridge[0] = 0` and all `zeta, eta` i.i.d. standard normal.
//! Modes are independent scalar copies of this construction.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() || steps == 0 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs T > 0 and M >= 1 (got T = {t_final}, M = {steps})"
            )));
        }
        Ok(Self { t_final, steps })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    /// `t_m = m T / M`, exact at `m = M`.
    pub fn time(&self, m: usize) -> f64 {
        self.t_final * m as f64 / self.steps as f64
    }

    /// The grid with `steps / ratio` steps over the same horizon.
    pub fn coarsened(&self, ratio: usize) -> Result<Self> {
        if ratio == 0 || self.steps % ratio != 0 {
            return Err(Error::Divisibility {
                fine: self.steps,
                ratio,
            });
        }
        Ok(Self {
            t_final: self.t_final,
            steps: self.steps / ratio,
        })
    }
}

/// Diffusion coefficient `G(u) dW = sum_j g_j(x, u) d beta_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// One mode, `g(x, u) = lambda u`.
    Linear { lambda: f64 },
    /// Two modes, `g_1 = sin(pi x) y u` and `g_2 = sin(pi y) x u`.
    Trace,
}

impl NoiseModel {
    pub fn modes(&self) -> usize {
        match self {
            NoiseModel::Linear { .. } => 1,
            NoiseModel::Trace => 2,
        }
    }

    pub fn eval(&self, mode: usize, x: [f64; 2], u: f64) -> f64 {
        use std::f64::consts::PI;
        match (self, mode) {
            (NoiseModel::Linear { lambda }, 0) => lambda * u,
            (NoiseModel::Trace, 0) => (PI * x[0]).sin() * x[1] * u,
            (NoiseModel::Trace, 1) => (PI * x[1]).sin() * x[0] * u,
            _ => panic!("noise mode {mode} out of range for {self:?}"),
        }
    }
}

/// Which of the two independent normal families a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    /// `zeta`, scaling the endpoint increment.
    Increment = 0,
    /// `eta`, scaling the bridge mean.
    Bridge = 1,
}

/// Counter-based standard normals keyed by `(master_seed, sample, m, j, draw)`.
///
/// Each key maps to a fixed position of a ChaCha stream, so a value never
/// depends on how many other values were drawn before it or by whom.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(master_seed: u64, sample: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(sample);
        Self { rng }
    }

    /// Standard normal for step `m >= 1` and mode `j`, by Box-Muller on two
    /// uniforms read from a key-determined position of the stream.
    pub fn normal(&mut self, m: usize, j: usize, draw: Draw) -> f64 {
        debug_assert!(m >= 1 && j < (1 << 30) && m < (1 << 32));
        let key = ((m as u128) << 32) | ((j as u128) << 1) | draw as u128;
        // four 32-bit words per key
        self.rng.set_word_pos(key << 2);
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Per-step, per-mode coefficients of `Delta_m W` and of the averaged increment.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementTable {
    grid: TimeGrid,
    modes: usize,
    /// Row-major `[m-1][j]`.
    std: Vec<f64>,
    avg: Vec<f64>,
}

impl IncrementTable {
    /// Builds a table from raw rows; `std` and `avg` are row-major `[m-1][j]`.
    pub fn from_rows(grid: TimeGrid, modes: usize, std: Vec<f64>, avg: Vec<f64>) -> Result<Self> {
        let len = grid.steps() * modes;
        if modes == 0 || std.len() != len || avg.len() != len {
            return Err(Error::GridMismatch(format!(
                "expected {len} entries per table for M = {}, J = {modes}",
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            modes,
            std,
            avg,
        })
    }

    /// Applies the sampler to given standard normals `zeta`, `eta` (row-major `[m-1][j]`).
    pub fn from_normals(grid: TimeGrid, modes: usize, zeta: &[f64], eta: &[f64]) -> Result<Self> {
        let len = grid.steps() * modes;
        if modes == 0 || zeta.len() != len || eta.len() != len {
            return Err(Error::GridMismatch(format!("expected {len} normals")));
        }
        let sqrt_tau = grid.tau().sqrt();
        let bridge_scale = (grid.tau() / 12.0).sqrt();
        let std: Vec<f64> = zeta.iter().map(|z| sqrt_tau * z).collect();
        let bridge: Vec<f64> = eta.iter().map(|e| bridge_scale * e).collect();
        let mut avg = vec![0.0; len];
        for m in 0..grid.steps() {
            for j in 0..modes {
                let k = m * modes + j;
                let (std_prev, bridge_prev) = if m == 0 {
                    (0.0, 0.0)
                } else {
                    (std[k - modes], bridge[k - modes])
                };
                avg[k] = 0.5 * (std[k] + std_prev) + bridge[k] - bridge_prev;
            }
        }
        Ok(Self {
            grid,
            modes,
            std,
            avg,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Standard increments of step `m` (1-based), one entry per mode.
    pub fn std_row(&self, m: usize) -> &[f64] {
        assert!(
            m >= 1 && m <= self.steps(),
            "step {m} out of 1..={}",
            self.steps()
        );
        &self.std[(m - 1) * self.modes..m * self.modes]
    }

    /// Averaged increments of step `m` (1-based), one entry per mode.
    pub fn avg_row(&self, m: usize) -> &[f64] {
        assert!(
            m >= 1 && m <= self.steps(),
            "step {m} out of 1..={}",
            self.steps()
        );
        &self.avg[(m - 1) * self.modes..m * self.modes]
    }

    pub fn std(&self, m: usize, j: usize) -> f64 {
        self.std_row(m)[j]
    }

    pub fn avg(&self, m: usize, j: usize) -> f64 {
        self.avg_row(m)[j]
    }

    /// Copy with rows `> m` replaced by `f(step, mode)`; used to probe adaptedness.
    pub fn with_tail(&self, m: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for step in m + 1..=self.steps() {
            for j in 0..self.modes {
                let k = (step - 1) * self.modes + j;
                let (s, a) = f(step, j);
                out.std[k] = s;
                out.avg[k] = a;
            }
        }
        out
    }
}

/// Samples one table with the counter-based generator for `(master_seed, sample)`.
pub fn sample_increment_table(
    grid: TimeGrid,
    modes: usize,
    master_seed: u64,
    sample: u64,
) -> Result<IncrementTable> {
    if modes == 0 {
        return Err(Error::InvalidArgument(
            "need at least one noise mode".into(),
        ));
    }
    let mut stream = NormalStream::new(master_seed, sample);
    let len = grid.steps() * modes;
    let mut zeta = Vec::with_capacity(len);
    let mut eta = Vec::with_capacity(len);
    for m in 1..=grid.steps() {
        for j in 0..modes {
            zeta.push(stream.normal(m, j, Draw::Increment));
            eta.push(stream.normal(m, j, Draw::Bridge));
        }
    }
    IncrementTable::from_normals(grid, modes, &zeta, &eta)
}

/// Sample covariances of one mode across a set of tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    pub samples: usize,
    /// `Cov(avg[m], avg[l])`, `[m-1][l-1]`.
    pub avg_avg: Vec<Vec<f64>>,
    /// `Cov(std[m], avg[l])`, `[m-1][l-1]`.
    pub std_avg: Vec<Vec<f64>>,
    /// Standard errors of the `avg_avg` estimates.
    pub avg_avg_stderr: Vec<Vec<f64>>,
    /// Standard errors of the `std_avg` estimates.
    pub std_avg_stderr: Vec<Vec<f64>>,
}

/// Unbiased sample covariances of mode `j`, with per-entry standard errors
/// estimated from the spread of the centred products.
pub fn empirical_covariance(tables: &[IncrementTable], j: usize) -> Result<EmpiricalCovariance> {
    let n = tables.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "covariance needs at least two samples".into(),
        ));
    }
    let steps = tables[0].steps();
    if tables.iter().any(|t| t.steps() != steps || j >= t.modes()) {
        return Err(Error::GridMismatch("tables differ in shape".into()));
    }
    let column = |f: &dyn Fn(&IncrementTable, usize) -> f64| -> Vec<Vec<f64>> {
        (1..=steps)
            .map(|m| tables.iter().map(|t| f(t, m)).collect())
            .collect()
    };
    let std_cols = column(&|t, m| t.std(m, j));
    let avg_cols = column(&|t, m| t.avg(m, j));
    let centre = |cols: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        cols.into_iter()
            .map(|c| {
                let mean = c.iter().sum::<f64>() / n as f64;
                c.into_iter().map(|x| x - mean).collect()
            })
            .collect()
    };
    let std_c = centre(std_cols);
    let avg_c = centre(avg_cols);
    let cov_with_se = |a: &[f64], b: &[f64]| -> (f64, f64) {
        let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        let cov = prods.iter().sum::<f64>() / (n - 1) as f64;
        let mean = prods.iter().sum::<f64>() / n as f64;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (cov, (var / n as f64).sqrt())
    };
    let mut out = EmpiricalCovariance {
        samples: n,
        avg_avg: vec![vec![0.0; steps]; steps],
        std_avg: vec![vec![0.0; steps]; steps],
        avg_avg_stderr: vec![vec![0.0; steps]; steps],
        std_avg_stderr: vec![vec![0.0; steps]; steps],
    };
    for m in 0..steps {
        for l in 0..steps {
            let (c, se) = cov_with_se(&avg_c[m], &avg_c[l]);
            out.avg_avg[m][l] = c;
            out.avg_avg_stderr[m][l] = se;
            let (c, se) = cov_with_se(&std_c[m], &avg_c[l]);
            out.std_avg[m][l] = c;
            out.std_avg_stderr[m][l] = se;
        }
    }
    Ok(out)
}

/// Covariance of averaged increments `(m, l)` (1-based) on a grid of step `tau`.
pub fn averaged_covariance(tau: f64, m: usize, l: usize) -> f64 {
    match m.abs_diff(l) {
        0 if m == 1 => tau / 3.0,
        0 => 2.0 * tau / 3.0,
        1 => tau / 6.0,
        _ => 0.0,
    }
}

/// `Cov(std[m], avg[l])` (1-based): `tau / 2` for `l` in `{m, m + 1}`, else 0.
pub fn cross_covariance(tau: f64, m: usize, l: usize) -> f64 {
    if l == m || l == m + 1 {
        0.5 * tau
    } else {
        0.0
    }
}

/// Exact coarse increments from fine ones via the weighted reconstruction sums.
pub fn coarsen_increments(fine: &IncrementTable, ratio: usize) -> Result<IncrementTable> {
    let grid = fine.grid.coarsened(ratio)?;
    let r = ratio as f64;
    let modes = fine.modes;
    let mut std = vec![0.0; grid.steps() * modes];
    let mut avg = vec![0.0; grid.steps() * modes];
    for jc in 1..=grid.steps() {
        let row = (jc - 1) * modes;
        for mode in 0..modes {
            std[row + mode] = (0..ratio)
                .map(|l| fine.std(ratio * (jc - 1) + l + 1, mode))
                .sum();
            avg[row + mode] = if jc == 1 {
                (1..=ratio)
                    .map(|l| (1.0 - (l - 1) as f64 / r) * fine.avg(l, mode))
                    .sum()
            } else {
                let current: f64 = (0..ratio)
                    .map(|l| (l + 1) as f64 / r * fine.avg(ratio * jc - l, mode))
                    .sum();
                let previous: f64 = (0..ratio.saturating_sub(1))
                    .map(|l| (1.0 - (l + 1) as f64 / r) * fine.avg(ratio * (jc - 1) - l, mode))
                    .sum();
                current + previous
            };
        }
    }
    IncrementTable::from_rows(grid, modes, std, avg)
}

/// Coarse increments through the fine running means: `<W>_m` by prefix sums,
/// block means of `r` consecutive fine means, then successive differences.
pub fn coarse_oracle(fine: &IncrementTable, ratio: usize) -> Result<IncrementTable> {
    let grid = fine.grid.coarsened(ratio)?;
    let modes = fine.modes;
    let mut std = Vec::with_capacity(grid.steps() * modes);
    let mut avg = Vec::with_capacity(grid.steps() * modes);
    let mut running = vec![0.0; modes];
    let mut coarse_prev = vec![0.0; modes];
    let mut block_std = vec![0.0; modes];
    let mut block_mean = vec![0.0; modes];
    for m in 1..=fine.steps() {
        for j in 0..modes {
            running[j] += fine.avg(m, j);
            block_mean[j] += running[j];
            block_std[j] += fine.std(m, j);
        }
        if m % ratio == 0 {
            for j in 0..modes {
                let mean = block_mean[j] / ratio as f64;
                avg.push(mean - coarse_prev[j]);
                std.push(block_std[j]);
                coarse_prev[j] = mean;
                block_mean[j] = 0.0;
                block_std[j] = 0.0;
            }
        }
    }
    IncrementTable::from_rows(grid, modes, std, avg)
}

/// Brownian path values `beta_j(t_m)`, `m = 0..=M`, from the standard increments.
pub fn path_points(table: &IncrementTable, j: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(table.steps() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for m in 1..=table.steps() {
        acc += table.std(m, j);
        out.push(acc);
    }
    out
}

/// Time means `<W>_m`, `m = 0..=M` (with `<W>_0 = 0`), from the averaged increments.
pub fn running_means(table: &IncrementTable, j: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(table.steps() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for m in 1..=table.steps() {
        acc += table.avg(m, j);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: f64, m: usize) -> TimeGrid {
        TimeGrid::new(t, m).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = grid(1.0, 7);
        assert_eq!(g.time(7), 1.0);
        assert!((g.tau() * 7.0 - 1.0).abs() < 1e-15);
        assert!(g.coarsened(3).is_err());
    }

    #[test]
    fn hand_evaluated_sampler() {
        let t = IncrementTable::from_normals(grid(2.0, 2), 1, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!((t.std(1, 0), t.std(2, 0)), (1.0, 0.0));
        assert_eq!((t.avg(1, 0), t.avg(2, 0)), (0.5, 0.5));

        let z = IncrementTable::from_normals(grid(1.0, 3), 2, &[0.0; 6], &[0.0; 6]).unwrap();
        assert!(z.std.iter().chain(&z.avg).all(|&x| x == 0.0));

        // first averaged increment: std/2 + bridge
        let t = IncrementTable::from_normals(grid(1.0, 1), 1, &[0.0], &[1.0]).unwrap();
        assert!((t.avg(1, 0) - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_order_free() {
        let g = grid(1.0, 16);
        let a = sample_increment_table(g, 2, 99, 5).unwrap();
        let b = sample_increment_table(g, 2, 99, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_increment_table(g, 2, 99, 6).unwrap());
        assert_ne!(a, sample_increment_table(g, 2, 100, 5).unwrap());
        let mut s = NormalStream::new(99, 5);
        let late = s.normal(16, 1, Draw::Bridge);
        let early = s.normal(1, 0, Draw::Increment);
        let mut fresh = NormalStream::new(99, 5);
        assert_eq!(fresh.normal(1, 0, Draw::Increment), early);
        assert_eq!(fresh.normal(16, 1, Draw::Bridge), late);
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut s = NormalStream::new(1, 0);
        let n = 200_000;
        let xs: Vec<f64> = (1..=n).map(|m| s.normal(m, 0, Draw::Increment)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn covariance_of_constant_samples_is_zero() {
        let t = IncrementTable::from_normals(grid(1.0, 3), 1, &[1.0, 2.0, 3.0], &[0.5, 0.0, -1.0])
            .unwrap();
        let c = empirical_covariance(&[t.clone(), t.clone(), t], 0).unwrap();
        assert!(c
            .avg_avg
            .iter()
            .flatten()
            .chain(c.std_avg.iter().flatten())
            .all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_law_and_cross_mode_independence() {
        let g = grid(0.3, 3);
        let tau = g.tau();
        let tables: Vec<_> = (0..40_000)
            .map(|s| sample_increment_table(g, 2, 17, s).unwrap())
            .collect();
        let c = empirical_covariance(&tables, 0).unwrap();
        for m in 1..=3 {
            for l in 1..=3 {
                let expect = averaged_covariance(tau, m, l);
                let (est, se) = (c.avg_avg[m - 1][l - 1], c.avg_avg_stderr[m - 1][l - 1]);
                assert!(
                    (est - expect).abs() < 4.0 * se,
                    "({m},{l}) {est} vs {expect} +- {se}"
                );
            }
        }
        // bridge part of the first step: avg[1] - std[1]/2 has variance tau/12
        let bridge: Vec<f64> = tables
            .iter()
            .map(|t| t.avg(1, 0) - 0.5 * t.std(1, 0))
            .collect();
        let var = bridge.iter().map(|b| b * b).sum::<f64>() / bridge.len() as f64;
        assert!((var - tau / 12.0).abs() < 4.0 * tau / 12.0 * (2.0 / bridge.len() as f64).sqrt());
        // modes are independent
        let n = tables.len() as f64;
        let cross = tables
            .iter()
            .map(|t| t.avg(2, 0) * t.avg(2, 1))
            .sum::<f64>()
            / n;
        assert!(cross.abs() < 4.0 * (2.0 * tau / 3.0) / n.sqrt());
    }

    #[test]
    fn running_mean_variance() {
        // Var <W>_m = (2 t_{m-1} + t_m) / 3
        let g = grid(1.0, 4);
        let n = 40_000;
        let tables: Vec<_> = (0..n)
            .map(|s| sample_increment_table(g, 1, 8, s).unwrap())
            .collect();
        for m in 1..=4 {
            let expect = (2.0 * g.time(m - 1) + g.time(m)) / 3.0;
            let xs: Vec<f64> = tables.iter().map(|t| running_means(t, 0)[m]).collect();
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            assert!(
                (var - expect).abs() < 4.0 * expect * (2.0 / n as f64).sqrt(),
                "m={m}"
            );
        }
    }

    /// Brute-force oracle: simulate W on a fine sub-grid of each step and average
    /// it by the trapezoid rule, then estimate Cov(std[m], avg[l]).
    #[test]
    fn increment_avg_cross_covariance_matches_brute_force() {
        let (t_final, steps, sub) = (1.0, 3usize, 1000usize);
        let g = grid(t_final, steps);
        let n = 6_000u64;
        let mut brute = vec![vec![0.0; steps]; steps];
        let mut stream = NormalStream::new(4242, 0);
        let h = g.tau() / sub as f64;
        for s in 0..n {
            let mut w = 0.0;
            let mut incs = vec![0.0; steps];
            let mut means = vec![0.0; steps + 1];
            for m in 0..steps {
                let start = w;
                let mut integral = 0.0;
                for k in 0..sub {
                    let key = (s as usize) * steps * sub + m * sub + k + 1;
                    let next = w + h.sqrt() * stream.normal(key, 0, Draw::Increment);
                    integral += 0.5 * (w + next) * h;
                    w = next;
                }
                incs[m] = w - start;
                means[m + 1] = integral / g.tau();
            }
            for m in 0..steps {
                for l in 0..steps {
                    brute[m][l] += incs[m] * (means[l + 1] - means[l]) / n as f64;
                }
            }
        }
        let tables: Vec<_> = (0..n)
            .map(|s| sample_increment_table(g, 1, 31, s).unwrap())
            .collect();
        let c = empirical_covariance(&tables, 0).unwrap();
        let tau = g.tau();
        for m in 0..steps {
            for l in 0..steps {
                let tol = 5.0 * c.std_avg_stderr[m][l] + 5.0 * tau / (n as f64).sqrt();
                assert!(
                    (c.std_avg[m][l] - brute[m][l]).abs() < tol,
                    "({m},{l}) sampler {} vs brute {}",
                    c.std_avg[m][l],
                    brute[m][l]
                );
            }
            // Cov(std[m], avg[m]) = tau/2, Cov(std[m], avg[m+1]) = tau/2
            assert!((c.std_avg[m][m] - tau / 2.0).abs() < 5.0 * c.std_avg_stderr[m][m]);
        }
    }

    #[test]
    fn coarsening_examples() {
        let g = grid(1.0, 6);
        let t = sample_increment_table(g, 2, 3, 0).unwrap();
        assert_eq!(coarsen_increments(&t, 1).unwrap(), t);
        assert!(coarsen_increments(&t, 4).is_err());
        assert!(coarse_oracle(&t, 4).is_err());

        let two = sample_increment_table(grid(1.0, 2), 1, 3, 1).unwrap();
        let c = coarsen_increments(&two, 2).unwrap();
        assert!((c.avg(1, 0) - (two.avg(1, 0) + 0.5 * two.avg(2, 0))).abs() < 1e-15);
        assert!((c.std(1, 0) - (two.std(1, 0) + two.std(2, 0))).abs() < 1e-15);
    }

    #[test]
    fn telescoping_means_agree_across_levels() {
        let fine = sample_increment_table(grid(1.0, 24), 1, 5, 2).unwrap();
        for r in [2, 3, 4, 8] {
            let c = coarsen_increments(&fine, r).unwrap();
            let fm = running_means(&fine, 0);
            let cm = running_means(&c, 0);
            let block: f64 = fm[fine.steps() - r + 1..].iter().sum::<f64>() / r as f64;
            assert!((cm[c.steps()] - block).abs() < 1e-12);
            assert!((path_points(&c, 0)[c.steps()] - path_points(&fine, 0)[24]).abs() < 1e-12);
        }
    }

    #[test]
    fn path_points_examples() {
        let zero = IncrementTable::from_rows(grid(1.0, 2), 1, vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(path_points(&zero, 0), vec![0.0; 3]);
        let t = IncrementTable::from_rows(grid(1.0, 2), 1, vec![1.0, -1.0], vec![0.0; 2]).unwrap();
        assert_eq!(path_points(&t, 0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn terminal_value_has_variance_t() {
        let g = grid(2.0, 8);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|s| path_points(&sample_increment_table(g, 1, 77, s).unwrap(), 0)[8])
            .collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let se = 2.0 * (2.0 / n as f64).sqrt();
        assert!((var - 2.0).abs() < 3.0 * se, "{var}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn coarsening_matches_mean_value_oracle(seed in 0u64..1000, coarse in 1usize..6, r_pow in 0u32..4, modes in 1usize..3) {
            let r = 2usize.pow(r_pow);
            let fine = sample_increment_table(grid(1.0, coarse * r), modes, seed, 0).unwrap();
            let a = coarsen_increments(&fine, r).unwrap();
            let b = coarse_oracle(&fine, r).unwrap();
            for (x, y) in a.std.iter().zip(&b.std).chain(a.avg.iter().zip(&b.avg)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn coarsening_composes(seed in 0u64..1000) {
            let fine = sample_increment_table(grid(1.0, 24), 1, seed, 3).unwrap();
            let direct = coarsen_increments(&fine, 6).unwrap();
            let staged = coarsen_increments(&coarsen_increments(&fine, 2).unwrap(), 3).unwrap();
            for m in 1..=4 {
                prop_assert!((direct.avg(m, 0) - staged.avg(m, 0)).abs() < 1e-12);
                prop_assert!((direct.std(m, 0) - staged.std(m, 0)).abs() < 1e-12);
            }
        }
    }
}
