//! Reference trajectories for the linear heat equation with multiplicative
//! scalar noise `lambda u d beta`, started in an eigenfunction.
//!
//! With `S u = mu M u`, the semidiscrete solution is
//! `u(t) = exp(-(lambda^2/2 + mu) t + lambda beta(t)) u(0)`.

use crate::error::{Error, Result};
use crate::mesh::FeFunction;
use crate::noise::{path_points, IncrementTable, TimeGrid};
use crate::schemes::Trajectory;

#[derive(Debug, Clone)]
pub struct ExactParams {
    pub lambda: f64,
    /// Eigenvalue of the continuous operator, `2 pi^2` on the unit square.
    pub mu: f64,
    /// Eigenvalue of the discrete pencil belonging to `u_h0`.
    pub mu_h: f64,
    pub u_h0: FeFunction,
    /// Number of Riemann points per step for the time averages.
    pub r_ref: usize,
}

impl ExactParams {
    pub fn new(lambda: f64, mu: f64, mu_h: f64, u_h0: FeFunction, r_ref: usize) -> Result<Self> {
        if !(mu > 0.0) || !(mu_h > mu) || r_ref == 0 {
            return Err(Error::InvalidArgument(format!(
                "exact solution needs mu_h > mu > 0 and r_ref >= 1 (mu = {mu}, mu_h = {mu_h}, r_ref = {r_ref})"
            )));
        }
        Ok(Self {
            lambda,
            mu,
            mu_h,
            u_h0,
            r_ref,
        })
    }

    /// `exp(-(lambda^2/2 + mu) t + lambda beta(t))`, with `mu_h` when `discrete`.
    pub fn scale_factor(&self, t: f64, beta_t: f64, discrete: bool) -> f64 {
        let mu = if discrete { self.mu_h } else { self.mu };
        (-(0.5 * self.lambda * self.lambda + mu) * t + self.lambda * beta_t).exp()
    }
}

/// Point values `u_h(t_m)` and Riemann-averaged values
/// `(1/r) sum_k u_h(t_{m-1} + k tau / r)` of the semidiscrete solution.
///
/// `fine_table` must resolve each scheme step into exactly `r_ref` sub-steps;
/// its first mode drives the solution.
pub fn build_references(
    params: &ExactParams,
    fine_table: &IncrementTable,
    scheme_grid: TimeGrid,
) -> Result<(Trajectory, Trajectory)> {
    let r = params.r_ref;
    let fine_grid = fine_table.grid();
    if fine_grid.steps() != scheme_grid.steps() * r || fine_grid.t_final() != scheme_grid.t_final()
    {
        return Err(Error::GridMismatch(format!(
            "reference table has {} steps, expected {} x {r}",
            fine_grid.steps(),
            scheme_grid.steps()
        )));
    }
    let beta = path_points(fine_table, 0);
    let factor = |k: usize| params.scale_factor(fine_grid.time(k), beta[k], true);
    let u0 = &params.u_h0;
    let mut point = Vec::with_capacity(scheme_grid.steps() + 1);
    let mut aver = Vec::with_capacity(scheme_grid.steps() + 1);
    point.push(u0.clone());
    aver.push(u0.clone());
    for m in 1..=scheme_grid.steps() {
        point.push(u0.scaled(factor(m * r)));
        let mean = ((m - 1) * r + 1..=m * r).map(factor).sum::<f64>() / r as f64;
        aver.push(u0.scaled(mean));
    }
    Ok((
        Trajectory {
            grid: scheme_grid,
            states: point,
        },
        Trajectory {
            grid: scheme_grid,
            states: aver,
        },
    ))
}
