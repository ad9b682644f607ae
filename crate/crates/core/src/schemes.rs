//! Fully discrete time stepping: Euler-Maruyama and the two averaged schemes.
//!
//! Every step solves
//!
//! ```text
//! (v - v_prev, xi) + tau_eff (S(grad v), grad xi) = (load, xi)   for all xi,
//! ```
//!
//! which is the optimality condition of the strictly convex functional
//! `1/2 v'Mv - v'M v_prev + tau_eff J(v) - v' load`. It is minimized by Newton's
//! method with Armijo backtracking. When the Newton step needs damping, the
//! secant (Kacanov) iterate is tried as well and the lower objective wins; this
//! matters for `p < 2`, `kappa = 0` where the Hessian blows up at small gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::fem::{dot, norm2, solve_spd, P1Space, SparseSpd};
use crate::flux::FluxParams;
use crate::mesh::FeFunction;
use crate::noise::{IncrementTable, NoiseModel, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    /// Implicit in the drift, explicit in the noise, driven by `Delta_m W`.
    Em,
    /// Averaged increments with a half first step.
    AvgHalf,
    /// Averaged increments with a full first step.
    AvgFull,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Em, SchemeKind::AvgHalf, SchemeKind::AvgFull];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Em => "EM",
            SchemeKind::AvgHalf => "AVG_HALF",
            SchemeKind::AvgFull => "AVG_FULL",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_iter: 50,
            armijo: 1e-4,
            backtrack: 0.5,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.max_iter > 0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.backtrack > 0.0
            && self.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid Newton configuration {self:?}"
            )))
        }
    }
}

/// The time-indexed states `v_0, ..., v_M` of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<FeFunction>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }
}

/// Per-step diagnostics of the Newton solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    /// Euclidean norm of every accepted increment.
    pub increments: Vec<f64>,
    /// Objective value before the first and after every accepted iteration.
    pub objective: Vec<f64>,
    /// Iterations that fell back to a preconditioned gradient direction.
    pub gradient_steps: usize,
    /// Iterations that took the secant (Kacanov) iterate over a damped Newton step.
    pub secant_steps: usize,
    pub residual: f64,
}

/// One implicit step; see the module docs for the equation being solved.
pub struct ImplicitStep<'a> {
    pub space: &'a P1Space,
    pub mass: &'a SparseSpd,
    pub params: FluxParams,
    pub cfg: NewtonConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Newton,
    Secant,
    Gradient,
}

struct LineStep {
    point: Vec<f64>,
    objective: Objective,
    t: f64,
    norm: f64,
}

struct Objective {
    value: f64,
    /// Magnitude of the summands, for the round-off floor of comparisons.
    scale: f64,
}

impl<'a> ImplicitStep<'a> {
    pub fn new(
        space: &'a P1Space,
        mass: &'a SparseSpd,
        params: FluxParams,
        cfg: NewtonConfig,
    ) -> Self {
        Self {
            space,
            mass,
            params,
            cfg,
        }
    }

    fn objective(&self, x: &[f64], linear: &[f64], tau_eff: f64) -> Result<Objective> {
        let quad = 0.5 * self.mass.inner(x, x);
        let lin = dot(x, linear);
        let energy = if tau_eff == 0.0 {
            0.0
        } else {
            tau_eff * self.space.energy(&self.params, &self.space.extend(x))?
        };
        Ok(Objective {
            value: quad - lin + energy,
            scale: quad.abs() + lin.abs() + energy.abs(),
        })
    }

    fn gradient(&self, x: &[f64], linear: &[f64], tau_eff: f64) -> Result<Vec<f64>> {
        let mut g = self.mass.mul_vec(x);
        if tau_eff != 0.0 {
            let res = self
                .space
                .p_laplace_residual(&self.params, &self.space.extend(x))?;
            g.iter_mut()
                .zip(&res)
                .for_each(|(gi, ri)| *gi += tau_eff * ri);
        }
        g.iter_mut().zip(linear).for_each(|(gi, li)| *gi -= li);
        Ok(g)
    }

    fn newton_direction(&self, x: &[f64], grad: &[f64], tau_eff: f64) -> Option<Vec<f64>> {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        if tau_eff == 0.0 {
            return solve_spd(self.mass, &neg).ok();
        }
        let jac = self
            .space
            .p_laplace_jacobian(&self.params, &self.space.extend(x))
            .ok()?;
        solve_spd(&self.mass.add_scaled(tau_eff, &jac), &neg).ok()
    }

    /// Direction to the Kacanov iterate `(M + tau A(x))^-1 (M v_prev + load)`.
    fn secant_direction(&self, x: &[f64], grad: &[f64], tau_eff: f64) -> Option<Vec<f64>> {
        let secant = self
            .space
            .p_laplace_secant(&self.params, &self.space.extend(x))
            .ok()?;
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        solve_spd(&self.mass.add_scaled(tau_eff, &secant), &neg).ok()
    }

    fn gradient_direction(&self, grad: &[f64]) -> Vec<f64> {
        // L2-preconditioned steepest descent
        solve_spd(self.mass, grad)
            .map(|d| d.iter().map(|v| -v).collect())
            .unwrap_or_else(|_| grad.iter().map(|g| -g).collect())
    }

    fn try_direction(
        &self,
        x: &[f64],
        dir: Vec<f64>,
        grad: &[f64],
        phi: &Objective,
        linear: &[f64],
        tau_eff: f64,
    ) -> Result<Option<LineStep>> {
        let slope = dot(grad, &dir);
        if !(slope < 0.0) {
            return Ok(None);
        }
        self.line_search(x, &dir, slope, phi, linear, tau_eff)
    }

    /// Solves the step from `v_prev` with right-hand side `load` (interior DOFs).
    pub fn solve(&self, tau_eff: f64, v_prev: &FeFunction, load: &[f64]) -> Result<FeFunction> {
        self.solve_with_stats(tau_eff, v_prev, load).map(|(v, _)| v)
    }

    pub fn solve_with_stats(
        &self,
        tau_eff: f64,
        v_prev: &FeFunction,
        load: &[f64],
    ) -> Result<(FeFunction, StepStats)> {
        if !(tau_eff >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative effective step {tau_eff}"
            )));
        }
        if load.len() != self.space.num_dofs() {
            return Err(Error::InvalidArgument("load vector length".into()));
        }
        let prev = self.space.restrict(v_prev)?;
        let m_prev = self.mass.mul_vec(&prev);
        let tol = self.cfg.abs_tol + self.cfg.rel_tol * (norm2(&m_prev) + norm2(load));
        // the part of the objective linear in v
        let linear: Vec<f64> = m_prev.iter().zip(load).map(|(a, b)| a + b).collect();

        let mut stats = StepStats::default();
        let mut x = prev;
        let mut phi = self.objective(&x, &linear, tau_eff)?;
        let mut grad = self.gradient(&x, &linear, tau_eff)?;
        stats.objective.push(phi.value);
        for _ in 0..self.cfg.max_iter {
            let res = norm2(&grad);
            stats.residual = res;
            if res <= tol {
                return Ok((self.space.extend(&x), stats));
            }
            // Newton first; when it needs damping the secant iterate competes,
            // and the preconditioned gradient is the last resort.
            let mut best = match self.newton_direction(&x, &grad, tau_eff) {
                Some(d) => self
                    .try_direction(&x, d, &grad, &phi, &linear, tau_eff)?
                    .map(|s| (s, Direction::Newton)),
                None => None,
            };
            if tau_eff > 0.0
                && (self.params.p() < 2.0 || best.as_ref().is_none_or(|(s, _)| s.t < 1.0))
            {
                if let Some(d) = self.secant_direction(&x, &grad, tau_eff) {
                    if let Some(s) = self.try_direction(&x, d, &grad, &phi, &linear, tau_eff)? {
                        if best
                            .as_ref()
                            .is_none_or(|(b, _)| s.objective.value < b.objective.value)
                        {
                            best = Some((s, Direction::Secant));
                        }
                    }
                }
            }
            if best.is_none() {
                let d = self.gradient_direction(&grad);
                best = self
                    .try_direction(&x, d, &grad, &phi, &linear, tau_eff)?
                    .map(|s| (s, Direction::Gradient));
            }
            let Some((
                LineStep {
                    point: x_next,
                    objective: phi_next,
                    norm: step_norm,
                    ..
                },
                kind,
            )) = best
            else {
                return Err(Error::NoDescent { residual: res });
            };
            stats.gradient_steps += usize::from(kind == Direction::Gradient);
            stats.secant_steps += usize::from(kind == Direction::Secant);
            stats.increments.push(step_norm);
            stats.objective.push(phi_next.value);
            x = x_next;
            phi = phi_next;
            grad = self.gradient(&x, &linear, tau_eff)?;
        }
        let res = norm2(&grad);
        if res <= tol {
            stats.residual = res;
            return Ok((self.space.extend(&x), stats));
        }
        Err(Error::NewtonDiverged {
            iterations: self.cfg.max_iter,
            residual: res,
        })
    }

    fn line_search(
        &self,
        x: &[f64],
        dir: &[f64],
        slope: f64,
        phi: &Objective,
        linear: &[f64],
        tau_eff: f64,
    ) -> Result<Option<LineStep>> {
        let mut t = 1.0;
        let dir_norm = norm2(dir);
        while t * dir_norm > 1e-300 && t > 1e-20 {
            let trial: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + t * b).collect();
            let next = self.objective(&trial, linear, tau_eff)?;
            let floor = 64.0 * f64::EPSILON * (phi.scale + next.scale);
            if next.value <= phi.value + self.cfg.armijo * t * slope + floor {
                return Ok(Some(LineStep {
                    point: trial,
                    objective: next,
                    t,
                    norm: t * dir_norm,
                }));
            }
            t *= self.cfg.backtrack;
        }
        Ok(None)
    }
}

/// Runs `kind` from `u0` driven by `table`, returning all `M + 1` states.
#[allow(clippy::too_many_arguments)]
pub fn run_scheme(
    kind: SchemeKind,
    params: FluxParams,
    space: &P1Space,
    mass: &SparseSpd,
    u0: &FeFunction,
    model: &NoiseModel,
    table: &IncrementTable,
    cfg: NewtonConfig,
) -> Result<Trajectory> {
    if table.modes() != model.modes() {
        return Err(Error::GridMismatch(format!(
            "table has {} modes, noise model {}",
            table.modes(),
            model.modes()
        )));
    }
    space.mesh().check(u0)?;
    let stepper = ImplicitStep::new(space, mass, params, cfg);
    let grid = table.grid();
    let tau = grid.tau();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(u0.clone());
    for m in 1..=grid.steps() {
        let (tau_eff, coeff_state, weights) = match (kind, m) {
            (SchemeKind::Em, _) => (tau, m - 1, table.std_row(m)),
            (SchemeKind::AvgHalf, 1) => (0.5 * tau, 0, table.avg_row(1)),
            (SchemeKind::AvgFull, 1) => (tau, 0, table.avg_row(1)),
            (_, _) => (tau, m - 2, table.avg_row(m)),
        };
        let load = space.noise_load_vector(model, &states[coeff_state], weights)?;
        let next = stepper.solve(tau_eff, &states[m - 1], &load)?;
        states.push(next);
    }
    Ok(Trajectory { grid, states })
}
