//! Experiment driver: configuration, orchestration and CSV output.
//!
//! Every sample index owns one finest increment table; all schemes and all
//! coarse cells of that sample use coarsenings of it. Rows are assembled in a
//! fixed order after the parallel phase, so the output does not depend on the
//! number of workers.

mod config;
mod csv;
mod selftest;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub use config::{parse_config, parse_config_for, Coupling, Experiment, ExperimentConfig};
pub use csv::{sci, CsvRow, HEADER};
pub use selftest::{run_selftest, SelfCheck};

use crate::error::{Error, Result};
use crate::errors::{pair_distances, parallel_map, Estimate, MetricKind};
use crate::exact::{build_references, ExactParams};
use crate::fem::P1Space;
use crate::flux::FluxParams;
use crate::mesh::refined_square;
use crate::noise::{
    averaged_covariance, coarse_oracle, coarsen_increments, cross_covariance, empirical_covariance,
    sample_increment_table, IncrementTable, NoiseModel, TimeGrid,
};
use crate::schemes::{run_scheme, SchemeKind};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "SPLAP_WORKERS";

/// Metric names of the explicit-solution experiment, in output order.
pub const EXPLICIT_METRICS: [&str; 4] = ["E_POINT", "E_AVER", "V_POINT", "V_AVER"];

/// Worker count from `SPLAP_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub experiment: Experiment,
    /// Result rows; empty for `sample-noise`, whose CSV has its own columns.
    pub rows: Vec<CsvRow>,
    /// The full CSV text.
    pub csv: String,
    /// False when a self-test check failed.
    pub passed: bool,
}

impl Outcome {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.experiment)
    }

    /// Writes the CSV (and, for sweeps, a gnuplot script) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = csv::write_atomic(dir, &self.file_name(), &self.csv)?;
        if let Some(script) = plot_script(self) {
            csv::write_atomic(dir, &format!("{}.gp", self.experiment), &script)?;
        }
        Ok(path)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    cfg.validate()?;
    let (rows, passed) = match cfg.experiment {
        Experiment::VerifyLaw => (run_verify_law(cfg, workers)?, true),
        Experiment::Explicit => (run_explicit(cfg, workers)?, true),
        Experiment::Converge => (run_converge(cfg, workers)?, true),
        Experiment::SelfTest => {
            let checks = run_selftest(cfg.master_seed)?;
            let passed = checks.iter().all(|c| c.passed);
            (checks.iter().map(|c| c.row(cfg)).collect(), passed)
        }
        Experiment::SampleNoise => {
            let csv = run_sample_noise(cfg, workers)?;
            return Ok(Outcome {
                experiment: cfg.experiment,
                rows: Vec::new(),
                csv,
                passed: true,
            });
        }
    };
    let csv = csv::render(&rows);
    Ok(Outcome {
        experiment: cfg.experiment,
        rows,
        csv,
        passed,
    })
}

fn row(cfg: &ExperimentConfig, scheme: &str, metric: &str, p: f64) -> CsvRow {
    CsvRow {
        experiment: cfg.experiment.name().to_string(),
        scheme: scheme.to_string(),
        metric: metric.to_string(),
        p,
        kappa: cfg.kappa,
        tau_c: 0.0,
        h_c: 0.0,
        tau_f: 0.0,
        h_f: 0.0,
        n_samples: cfg.n_samples,
        mean: 0.0,
        stderr: 0.0,
        seed: cfg.master_seed,
    }
}

/// Coarsens `fine` by `ratio` and cross-checks against the running-mean oracle.
pub fn coupled_coarsening(fine: &IncrementTable, ratio: usize) -> Result<IncrementTable> {
    let coarse = coarsen_increments(fine, ratio)?;
    let oracle = coarse_oracle(fine, ratio)?;
    let diff = (1..=coarse.steps())
        .flat_map(|m| {
            let (a, b) = (
                coarse.std_row(m).iter().zip(oracle.std_row(m)),
                coarse.avg_row(m).iter().zip(oracle.avg_row(m)),
            );
            a.chain(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    if diff > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "coarsened increments deviate from the running-mean oracle by {diff:e} (ratio {ratio})"
        )));
    }
    Ok(coarse)
}

/// Groups per-sample vectors into one estimate per entry.
fn estimates(samples: &[Vec<f64>]) -> Vec<Estimate> {
    let width = samples.first().map_or(0, Vec::len);
    (0..width)
        .map(|k| Estimate::from_samples(&samples.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .collect()
}

fn run_verify_law(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<CsvRow>> {
    let grid = TimeGrid::new(cfg.t_final, cfg.m_list[0])?;
    let modes = cfg.noise.modes();
    let tables = parallel_map(cfg.n_samples, workers, |s| {
        sample_increment_table(grid, modes, cfg.master_seed, s as u64)
    })?;
    let tau = grid.tau();
    let steps = grid.steps();
    let mut rows = Vec::new();
    for j in 0..modes {
        let cov = empirical_covariance(&tables, j)?;
        let scheme = format!("mode{j}");
        let mut max_dev: f64 = 0.0;
        let mut emit = |name: &str, m: usize, l: usize, value: f64, se: f64, theory: f64| {
            if se > 0.0 {
                max_dev = max_dev.max((value - theory).abs() / se);
            }
            let mut r = row(cfg, &scheme, &format!("{name}_{m}_{l}"), 0.0);
            r.tau_c = tau;
            r.mean = value;
            r.stderr = se;
            rows.push(r);
            let mut t = row(cfg, &scheme, &format!("{name}_THEORY_{m}_{l}"), 0.0);
            t.tau_c = tau;
            t.mean = theory;
            rows.push(t);
        };
        for m in 1..=steps {
            for l in m..=steps {
                emit(
                    "AVG_AVG",
                    m,
                    l,
                    cov.avg_avg[m - 1][l - 1],
                    cov.avg_avg_stderr[m - 1][l - 1],
                    averaged_covariance(tau, m, l),
                );
            }
        }
        for m in 1..=steps {
            for l in 1..=steps {
                emit(
                    "STD_AVG",
                    m,
                    l,
                    cov.std_avg[m - 1][l - 1],
                    cov.std_avg_stderr[m - 1][l - 1],
                    cross_covariance(tau, m, l),
                );
            }
        }
        let mut r = row(cfg, &scheme, "MAX_DEV_SE", 0.0);
        r.tau_c = tau;
        r.mean = max_dev;
        rows.push(r);
    }
    Ok(rows)
}

fn run_sample_noise(cfg: &ExperimentConfig, workers: usize) -> Result<String> {
    let grid = TimeGrid::new(cfg.t_final, cfg.m_list[0])?;
    let modes = cfg.noise.modes();
    let tables = parallel_map(cfg.n_samples, workers, |s| {
        sample_increment_table(grid, modes, cfg.master_seed, s as u64)
    })?;
    let mut out = String::from("sample,m,j,std,avg\n");
    for (s, t) in tables.iter().enumerate() {
        for m in 1..=t.steps() {
            for j in 0..modes {
                out.push_str(&format!(
                    "{s},{m},{j},{},{}\n",
                    sci(t.std(m, j)),
                    sci(t.avg(m, j))
                ));
            }
        }
    }
    Ok(out)
}

fn run_explicit(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<CsvRow>> {
    let NoiseModel::Linear { lambda } = cfg.noise else {
        return Err(Error::ConfigInvalid {
            key: "noise".into(),
            message: "explicit needs linear noise".into(),
        });
    };
    let params = FluxParams::new(2.0, cfg.kappa)?;
    let space = P1Space::new(refined_square(cfg.mesh_n0, cfg.levels)?);
    let h = space.mesh().h_max();
    let mass = space.assemble_mass();
    let (mu_h, u0) = space.min_eigenpair(&space.assemble_stiffness(), &mass)?;
    let exact = ExactParams::new(lambda, 2.0 * PI * PI, mu_h, u0.clone(), cfg.r_ref)?;
    let m_max = *cfg.m_list.last().expect("validated non-empty");
    let finest_grid = TimeGrid::new(cfg.t_final, m_max * cfg.r_ref)?;
    let cells = cfg.m_list.len();

    // Work item = (sample, M); each regenerates the sample's finest table.
    let values = parallel_map(cfg.n_samples * cells, workers, |item| {
        let (sample, cell) = (item / cells, item % cells);
        let m = cfg.m_list[cell];
        let finest = sample_increment_table(finest_grid, 1, cfg.master_seed, sample as u64)?;
        let reference_table = coupled_coarsening(&finest, m_max / m)?;
        let table = coupled_coarsening(&finest, m_max * cfg.r_ref / m)?;
        let (point, aver) = build_references(&exact, &reference_table, table.grid())?;
        let mut out = Vec::with_capacity(SchemeKind::ALL.len() * EXPLICIT_METRICS.len());
        for kind in SchemeKind::ALL {
            let traj = run_scheme(
                kind, params, &space, &mass, &u0, &cfg.noise, &table, cfg.newton,
            )?;
            let dp = pair_distances(&params, &space, &point, &traj, 1)?;
            let da = pair_distances(&params, &space, &aver, &traj, 1)?;
            out.extend([dp.linf_l2_point, da.linf_l2_point, dp.l2_grad, da.l2_grad]);
        }
        Ok(out)
    })?;

    let mut rows = Vec::new();
    for (s, kind) in SchemeKind::ALL.iter().enumerate() {
        for (k, metric) in EXPLICIT_METRICS.iter().enumerate() {
            for (cell, &m) in cfg.m_list.iter().enumerate() {
                let column: Vec<Vec<f64>> = (0..cfg.n_samples)
                    .map(|sample| {
                        vec![values[sample * cells + cell][s * EXPLICIT_METRICS.len() + k]]
                    })
                    .collect();
                let mut r = row(cfg, kind.name(), metric, 2.0);
                r.tau_c = cfg.t_final / m as f64;
                r.h_c = h;
                r.tau_f = r.tau_c / cfg.r_ref as f64;
                r.h_f = h;
                r.set_estimate(estimates(&column)[0]);
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

fn run_converge(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<CsvRow>> {
    let cells = cfg.coarse_cells();
    let spaces: Vec<P1Space> = (0..=cfg.levels)
        .map(|k| Ok(P1Space::new(refined_square(cfg.mesh_n0, k)?)))
        .collect::<Result<_>>()?;
    let masses: Vec<_> = spaces.iter().map(P1Space::assemble_mass).collect();
    let initial: Vec<_> = spaces
        .iter()
        .zip(&masses)
        .map(|(s, m)| s.l2_project(m, |[x, y]| (PI * x).sin() * (PI * y).sin()))
        .collect::<Result<_>>()?;
    let fine_space = spaces.last().expect("levels + 1 spaces");
    let fine_mass = masses.last().expect("levels + 1 spaces");
    let fine_u0 = initial.last().expect("levels + 1 spaces");
    let fine_grid = TimeGrid::new(cfg.t_final, cfg.m_fine)?;
    let modes = cfg.noise.modes();
    let schemes = SchemeKind::ALL.len();
    let metrics = MetricKind::COARSE_FINE;

    let mut rows = Vec::new();
    for &p in &cfg.p {
        let params = FluxParams::new(p, cfg.kappa)?;
        // Work item = (sample, scheme): one fine reference shared by all coarse cells.
        let values = parallel_map(cfg.n_samples * schemes, workers, |item| {
            let (sample, kind) = (item / schemes, SchemeKind::ALL[item % schemes]);
            let fine_table =
                sample_increment_table(fine_grid, modes, cfg.master_seed, sample as u64)?;
            let fine = run_scheme(
                kind,
                params,
                fine_space,
                fine_mass,
                fine_u0,
                &cfg.noise,
                &fine_table,
                cfg.newton,
            )?;
            let mut out = Vec::with_capacity(cells.len() * metrics.len());
            for &(mc, level) in &cells {
                let ratio = cfg.m_fine / mc;
                let table = coupled_coarsening(&fine_table, ratio)?;
                let coarse = run_scheme(
                    kind,
                    params,
                    &spaces[level],
                    &masses[level],
                    &initial[level],
                    &cfg.noise,
                    &table,
                    cfg.newton,
                )?;
                let d = pair_distances(&params, fine_space, &fine, &coarse, ratio)?;
                out.extend(metrics.iter().map(|&k| d.get(k)));
            }
            Ok(out)
        })?;

        for (s, kind) in SchemeKind::ALL.iter().enumerate() {
            for (k, metric) in metrics.iter().enumerate() {
                for (c, &(mc, level)) in cells.iter().enumerate() {
                    let column: Vec<Vec<f64>> = (0..cfg.n_samples)
                        .map(|sample| vec![values[sample * schemes + s][c * metrics.len() + k]])
                        .collect();
                    let mut r = row(cfg, kind.name(), metric.name(), p);
                    r.tau_c = cfg.t_final / mc as f64;
                    r.h_c = spaces[level].mesh().h_max();
                    r.tau_f = fine_grid.tau();
                    r.h_f = fine_space.mesh().h_max();
                    r.set_estimate(estimates(&column)[0]);
                    rows.push(r);
                }
            }
        }
    }
    Ok(rows)
}

/// Gnuplot commands plotting every (scheme, metric) curve of a sweep on log axes.
pub fn plot_script(outcome: &Outcome) -> Option<String> {
    let (x_col, x_label) = match outcome.experiment {
        Experiment::Explicit => (6, "tau"),
        Experiment::Converge => (7, "h"),
        _ => return None,
    };
    let csv = outcome.file_name();
    let mut curves: Vec<(String, String, String)> = Vec::new();
    for r in &outcome.rows {
        let key = (r.scheme.clone(), r.metric.clone(), sci(r.p));
        if !curves.contains(&key) {
            curves.push(key);
        }
    }
    let mut s = format!(
        "set datafile separator ','\nset logscale xy\nset key outside\nset xlabel '{x_label}'\nset ylabel 'error'\nplot \\\n"
    );
    let lines: Vec<String> = curves
        .iter()
        .map(|(scheme, metric, p)| {
            format!(
                "  '< grep \",{scheme},{metric},{p},\" {csv}' using {x_col}:11 with linespoints title '{scheme} {metric} p={}'",
                p.parse::<f64>().unwrap_or(0.0)
            )
        })
        .collect();
    s.push_str(&lines.join(", \\\n"));
    s.push('\n');
    Some(s)
}
