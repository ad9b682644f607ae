//! Distances between a fine and a coarse trajectory, and Monte Carlo averaging.
//!
//! Coarse states are prolongated to the fine mesh, so every quantity is an exact
//! integral of elementwise constants or of P1 functions on the fine mesh. With
//! `r = M_f / M_c`, the fine states `(m-1) r + 1 ..= m r` cover coarse step `m`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::P1Space;
use crate::flux::{FluxParams, Grad2};
use crate::mesh::{prolongate, FeFunction};
use crate::schemes::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    /// `max_m ||<v_f>_m - v_c,m||^2` (L2 in space)
    LinfL2Aver,
    /// `max_m ||v_f,mr - v_c,m||^2`
    LinfL2Point,
    /// `sum_m tau_c/r sum_k ||V(grad v_f,k) - V(grad v_c,m)||^2`
    L2vClassic,
    /// `sum_m tau_c ||V(grad <v_f>_m) - V(grad v_c,m)||^2`
    L2vInner,
    /// `sum_m tau_c ||<V(grad v_f)>_m - V(grad v_c,m)||^2`
    L2vOuter,
    /// `sum_m tau_c ||grad(<v_f>_m - v_c,m)||^2`
    L2Grad,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::LinfL2Aver,
        MetricKind::LinfL2Point,
        MetricKind::L2vClassic,
        MetricKind::L2vInner,
        MetricKind::L2vOuter,
        MetricKind::L2Grad,
    ];

    /// The five distances compared between fine and coarse runs of one scheme.
    pub const COARSE_FINE: [MetricKind; 5] = [
        MetricKind::LinfL2Aver,
        MetricKind::LinfL2Point,
        MetricKind::L2vClassic,
        MetricKind::L2vInner,
        MetricKind::L2vOuter,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::LinfL2Aver => "LINF_L2_AVER",
            MetricKind::LinfL2Point => "LINF_L2_POINT",
            MetricKind::L2vClassic => "L2V_CLASSIC",
            MetricKind::L2vInner => "L2V_INNER",
            MetricKind::L2vOuter => "L2V_OUTER",
            MetricKind::L2Grad => "L2_GRAD",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All single-sample distances of one fine/coarse pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairDistances {
    pub linf_l2_aver: f64,
    pub linf_l2_point: f64,
    pub l2v_classic: f64,
    pub l2v_inner: f64,
    pub l2v_outer: f64,
    pub l2_grad: f64,
    /// `sum_m tau_c/r sum_k ||V(grad v_f,k) - <V(grad v_f)>_m||^2`
    pub oscillation: f64,
}

impl PairDistances {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::LinfL2Aver => self.linf_l2_aver,
            MetricKind::LinfL2Point => self.linf_l2_point,
            MetricKind::L2vClassic => self.l2v_classic,
            MetricKind::L2vInner => self.l2v_inner,
            MetricKind::L2vOuter => self.l2v_outer,
            MetricKind::L2Grad => self.l2_grad,
        }
    }
}

fn l2_sq(space: &P1Space, a: &FeFunction, b: &FeFunction) -> Result<f64> {
    Ok(space.norms(a, b)?.l2_dist_sq)
}

/// Computes every distance between `fine` (on `fine_space`) and `coarse`.
pub fn pair_distances(
    params: &FluxParams,
    fine_space: &P1Space,
    fine: &Trajectory,
    coarse: &Trajectory,
    r: usize,
) -> Result<PairDistances> {
    let (mf, mc) = (fine.steps(), coarse.steps());
    if r == 0 || mf != r * mc || fine.grid.t_final() != coarse.grid.t_final() {
        return Err(Error::GridMismatch(format!(
            "{mf} fine steps vs {mc} coarse steps with ratio {r}"
        )));
    }
    if fine.states.len() != mf + 1 || coarse.states.len() != mc + 1 {
        return Err(Error::GridMismatch(
            "trajectory length does not match its grid".into(),
        ));
    }
    let tau_c = coarse.grid.tau();
    let ne = fine_space.num_elements();
    let area: Vec<f64> = (0..ne).map(|t| fine_space.area(t)).collect();
    let integrate = |f: &dyn Fn(usize) -> f64| -> f64 { (0..ne).map(|t| area[t] * f(t)).sum() };

    let mut out = PairDistances::default();
    for m in 1..=mc {
        let vc = prolongate(&coarse.states[m], fine_space.mesh())?;
        let grad_c = fine_space.element_gradients(&vc)?;
        let v_c: Vec<Grad2> = grad_c.iter().map(|&g| params.v(g)).collect();

        let block = &fine.states[(m - 1) * r + 1..=m * r];
        let mean_f = FeFunction::mean(block)?;
        let grad_mean = fine_space.element_gradients(&mean_f)?;
        let v_fine: Vec<Vec<Grad2>> = block
            .iter()
            .map(|f| {
                Ok(fine_space
                    .element_gradients(f)?
                    .into_iter()
                    .map(|g| params.v(g))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let v_mean: Vec<Grad2> = (0..ne)
            .map(|t| (1.0 / r as f64) * v_fine.iter().fold(Grad2::ZERO, |acc, v| acc + v[t]))
            .collect();

        out.linf_l2_aver = out.linf_l2_aver.max(l2_sq(fine_space, &mean_f, &vc)?);
        out.linf_l2_point = out
            .linf_l2_point
            .max(l2_sq(fine_space, &block[r - 1], &vc)?);
        for vf in &v_fine {
            out.l2v_classic += tau_c / r as f64 * integrate(&|t| (vf[t] - v_c[t]).norm_sq());
            out.oscillation += tau_c / r as f64 * integrate(&|t| (vf[t] - v_mean[t]).norm_sq());
        }
        out.l2v_inner += tau_c * integrate(&|t| (params.v(grad_mean[t]) - v_c[t]).norm_sq());
        out.l2v_outer += tau_c * integrate(&|t| (v_mean[t] - v_c[t]).norm_sq());
        out.l2_grad += tau_c * integrate(&|t| (grad_mean[t] - grad_c[t]).norm_sq());
    }
    Ok(out)
}

/// A single distance; see [`MetricKind`] for the definitions.
pub fn trajectory_distance(
    kind: MetricKind,
    params: &FluxParams,
    fine_space: &P1Space,
    fine: &Trajectory,
    coarse: &Trajectory,
    r: usize,
) -> Result<f64> {
    Ok(pair_distances(params, fine_space, fine, coarse, r)?.get(kind))
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self {
            mean,
            stderr,
            n_samples: n,
        }
    }
}

/// Monte Carlo estimates for one (scheme, coarse cell) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub scheme: String,
    pub p: f64,
    pub kappa: f64,
    pub tau_c: f64,
    pub h_c: f64,
    pub tau_f: f64,
    pub h_f: f64,
    pub seed: u64,
    pub metrics: Vec<(String, Estimate)>,
}

/// Evaluates `f(index)` for `index in 0..n` on a pool of `workers` threads and
/// returns the results in index order. The first failure by index is reported
/// as [`Error::Sample`].
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&f).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Evaluates `per_sample(index)` for `index in 0..n` on `workers` threads and
/// averages each output entry. Results are combined in index order, so the
/// estimates do not depend on the worker count.
pub fn monte_carlo<F>(n: usize, workers: usize, per_sample: F) -> Result<Vec<Estimate>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let samples = parallel_map(n, workers, per_sample)?;
    let width = samples[0].len();
    if samples.iter().any(|s| s.len() != width) {
        return Err(Error::InvalidArgument(
            "samples returned different numbers of values".into(),
        ));
    }
    Ok((0..width)
        .map(|k| Estimate::from_samples(&samples.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .collect())
}
