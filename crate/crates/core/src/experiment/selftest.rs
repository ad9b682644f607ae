//! Quick numerical checks run by the `selftest` experiment.

use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{CsvRow, ExperimentConfig};
use crate::error::Result;
use crate::errors::pair_distances;
use crate::fem::{solve_spd, P1Space};
use crate::flux::{FluxParams, Grad2};
use crate::mesh::{unit_square_mesh, FeFunction};
use crate::noise::{
    averaged_covariance, coarse_oracle, coarsen_increments, empirical_covariance,
    sample_increment_table, TimeGrid,
};
use crate::schemes::{ImplicitStep, NewtonConfig, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheck {
    pub name: &'static str,
    pub value: f64,
    pub passed: bool,
}

impl SelfCheck {
    fn new(name: &'static str, value: f64, passed: bool) -> Self {
        Self {
            name,
            value,
            passed,
        }
    }

    /// The status goes into the scheme column, the measured value into `mean`.
    pub fn row(&self, cfg: &ExperimentConfig) -> CsvRow {
        let mut r = super::row(
            cfg,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            0.0,
        );
        r.n_samples = 0;
        r.mean = self.value;
        r
    }
}

struct Uniform(ChaCha8Rng);

impl Uniform {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn next(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn function(&mut self, space: &P1Space) -> FeFunction {
        space.mesh().interpolate(|_| self.next(-1.0, 1.0))
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn covariance_law(seed: u64) -> Result<SelfCheck> {
    let grid = TimeGrid::new(0.5, 5)?;
    let tables: Vec<_> = (0..20_000)
        .map(|s| sample_increment_table(grid, 1, seed, s))
        .collect::<Result<_>>()?;
    let cov = empirical_covariance(&tables, 0)?;
    let mut worst: f64 = 0.0;
    for m in 1..=5 {
        for l in 1..=5 {
            let dev = (cov.avg_avg[m - 1][l - 1] - averaged_covariance(grid.tau(), m, l)).abs();
            worst = worst.max(dev / cov.avg_avg_stderr[m - 1][l - 1]);
        }
    }
    Ok(SelfCheck::new("COVARIANCE_MAX_DEV_SE", worst, worst < 4.5))
}

fn coarsening(seed: u64) -> Result<SelfCheck> {
    let mut worst: f64 = 0.0;
    for (i, r) in [2usize, 4, 8, 32].into_iter().cycle().take(20).enumerate() {
        let fine = sample_increment_table(TimeGrid::new(1.0, 3 * r)?, 2, seed, i as u64)?;
        let (a, b) = (coarsen_increments(&fine, r)?, coarse_oracle(&fine, r)?);
        for m in 1..=3 {
            for j in 0..2 {
                worst = worst
                    .max((a.std(m, j) - b.std(m, j)).abs())
                    .max((a.avg(m, j) - b.avg(m, j)).abs());
            }
        }
    }
    Ok(SelfCheck::new("COARSENING_MAX_DIFF", worst, worst < 1e-12))
}

fn eigenvalue() -> Result<SelfCheck> {
    let space = P1Space::new(unit_square_mesh(16)?);
    let (mu, _) = space.min_eigenpair(&space.assemble_stiffness(), &space.assemble_mass())?;
    let exact = 2.0 * PI * PI;
    Ok(SelfCheck::new(
        "EIGENVALUE_N16",
        mu,
        mu > exact && mu < 1.05 * exact,
    ))
}

fn jacobian(seed: u64) -> Result<SelfCheck> {
    let space = P1Space::new(unit_square_mesh(6)?);
    let mut rng = Uniform::new(seed);
    let mut worst: f64 = 0.0;
    for (p, kappa) in [(3.0, 0.0), (1.5, 1.0), (2.0, 0.0)] {
        let params = FluxParams::new(p, kappa)?;
        for _ in 0..5 {
            let v = rng.function(&space);
            let d = rng.function(&space);
            let jd = space
                .p_laplace_jacobian(&params, &v)?
                .mul_vec(&space.restrict(&d)?);
            let eps = 1e-6;
            let plus = space.p_laplace_residual(&params, &v.sub(&d.scaled(-eps))?)?;
            let minus = space.p_laplace_residual(&params, &v.sub(&d.scaled(eps))?)?;
            let fd: Vec<f64> = plus
                .iter()
                .zip(&minus)
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect();
            worst = worst.max(rel_diff(&jd, &fd));
        }
    }
    Ok(SelfCheck::new("JACOBIAN_FD_REL", worst, worst < 1e-5))
}

fn linear_step(seed: u64) -> Result<SelfCheck> {
    let space = P1Space::new(unit_square_mesh(8)?);
    let mass = space.assemble_mass();
    let stiffness = space.assemble_stiffness();
    let mut rng = Uniform::new(seed);
    let v = rng.function(&space);
    let load: Vec<f64> = (0..space.num_dofs()).map(|_| rng.next(-0.1, 0.1)).collect();
    let tau = 0.05;
    let step = ImplicitStep::new(
        &space,
        &mass,
        FluxParams::new(2.0, 0.0)?,
        NewtonConfig::default(),
    );
    let x = step.solve(tau, &v, &load)?;
    let rhs: Vec<f64> = mass
        .mul_vec(&space.restrict(&v)?)
        .iter()
        .zip(&load)
        .map(|(a, b)| a + b)
        .collect();
    let direct = solve_spd(&mass.add_scaled(tau, &stiffness), &rhs)?;
    let diff = rel_diff(&direct, &space.restrict(&x)?);
    Ok(SelfCheck::new("P2_STEP_VS_LINEAR", diff, diff < 1e-9))
}

fn pythagoras(seed: u64) -> Result<SelfCheck> {
    let coarse_space = P1Space::new(unit_square_mesh(3)?);
    let fine_space = P1Space::new(crate::mesh::refined_square(3, 1)?);
    let mut rng = Uniform::new(seed);
    let params = FluxParams::new(1.5, 0.0)?;
    let (r, mc) = (3, 4);
    let fine = Trajectory {
        grid: TimeGrid::new(1.0, r * mc)?,
        states: (0..=r * mc).map(|_| rng.function(&fine_space)).collect(),
    };
    let coarse = Trajectory {
        grid: TimeGrid::new(1.0, mc)?,
        states: (0..=mc).map(|_| rng.function(&coarse_space)).collect(),
    };
    let d = pair_distances(&params, &fine_space, &fine, &coarse, r)?;
    let rel = (d.l2v_classic - d.l2v_outer - d.oscillation).abs() / d.l2v_classic;
    Ok(SelfCheck::new("PYTHAGORAS_REL", rel, rel <= 1e-10))
}

fn coercivity(seed: u64) -> Result<SelfCheck> {
    let mut rng = Uniform::new(seed);
    let mut lowest = f64::INFINITY;
    let mut finite = true;
    for p in [1.5, 2.0, 3.0] {
        let params = FluxParams::new(p, 0.0)?;
        for _ in 0..2000 {
            let a = Grad2 {
                x: rng.next(-2.0, 2.0),
                y: rng.next(-2.0, 2.0),
            };
            let b = Grad2 {
                x: rng.next(-2.0, 2.0),
                y: rng.next(-2.0, 2.0),
            };
            let ratio =
                (params.s(a) - params.s(b)).dot(a - b) / (params.v(a) - params.v(b)).norm_sq();
            finite &= ratio.is_finite();
            lowest = lowest.min(ratio);
        }
    }
    Ok(SelfCheck::new(
        "V_COERCIVITY_MIN_RATIO",
        lowest,
        finite && lowest > 0.0,
    ))
}

/// Runs every check; a check that errors counts as failed with a NaN value.
pub fn run_selftest(seed: u64) -> Result<Vec<SelfCheck>> {
    let checks: [(&'static str, Box<dyn Fn() -> Result<SelfCheck>>); 7] = [
        (
            "COVARIANCE_MAX_DEV_SE",
            Box::new(move || covariance_law(seed)),
        ),
        ("COARSENING_MAX_DIFF", Box::new(move || coarsening(seed))),
        ("EIGENVALUE_N16", Box::new(eigenvalue)),
        ("JACOBIAN_FD_REL", Box::new(move || jacobian(seed))),
        ("P2_STEP_VS_LINEAR", Box::new(move || linear_step(seed))),
        ("PYTHAGORAS_REL", Box::new(move || pythagoras(seed))),
        ("V_COERCIVITY_MIN_RATIO", Box::new(move || coercivity(seed))),
    ];
    Ok(checks
        .iter()
        .map(|(name, check)| check().unwrap_or_else(|_| SelfCheck::new(name, f64::NAN, false)))
        .collect())
}
