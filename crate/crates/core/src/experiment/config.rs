//! `key = value` experiment configuration.
//!
//! ```text
//! # Figure-3-style sweep at desk scale
//! experiment = converge
//! p = 1.5, 3
//! noise = trace
//! n_samples = 10
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::schemes::NewtonConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    VerifyLaw,
    Explicit,
    Converge,
    SampleNoise,
    SelfTest,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyLaw => "verify-law",
            Experiment::Explicit => "explicit",
            Experiment::Converge => "converge",
            Experiment::SampleNoise => "sample-noise",
            Experiment::SelfTest => "selftest",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "verify-law" => Experiment::VerifyLaw,
            "explicit" => Experiment::Explicit,
            "converge" => Experiment::Converge,
            "sample-noise" => Experiment::SampleNoise,
            "selftest" => Experiment::SelfTest,
            other => return Err(format!("unknown experiment `{other}`")),
        })
    }
}

/// How coarse time steps are tied to coarse mesh levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `tau ~ h`: the coarse step count doubles per refinement.
    TauH,
    /// `tau ~ h^2`: the coarse step count quadruples per refinement.
    TauH2,
}

impl Coupling {
    pub fn factor(&self) -> usize {
        match self {
            Coupling::TauH => 2,
            Coupling::TauH2 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub p: Vec<f64>,
    pub kappa: f64,
    pub noise: NoiseModel,
    pub t_final: f64,
    pub mesh_n0: usize,
    /// Number of uniform refinements of the base mesh (finest level).
    pub levels: usize,
    /// Step counts swept by `explicit`, or the grid of `verify-law`/`sample-noise`.
    pub m_list: Vec<usize>,
    pub m_fine: usize,
    pub m_coarse: Vec<usize>,
    pub coupling: Coupling,
    pub r_ref: usize,
    pub n_samples: usize,
    pub master_seed: u64,
    pub newton: NewtonConfig,
    pub output: Option<PathBuf>,
}

pub const KEYS: [&str; 19] = [
    "experiment",
    "p",
    "kappa",
    "noise",
    "T",
    "mesh_n0",
    "levels",
    "M",
    "M_f",
    "M_c",
    "coupling",
    "r_ref",
    "n_samples",
    "master_seed",
    "newton_abs_tol",
    "newton_rel_tol",
    "newton_max_iter",
    "output",
    "preset",
];

impl ExperimentConfig {
    /// Defaults of `experiment` before any key is applied.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            p: vec![2.0],
            kappa: 0.0,
            noise: NoiseModel::Linear { lambda: 1.0 },
            t_final: 1.0,
            mesh_n0: 10,
            levels: 0,
            m_list: vec![16, 32, 64, 128, 256],
            m_fine: 256,
            m_coarse: vec![8, 16, 32, 64],
            coupling: Coupling::TauH,
            r_ref: 10,
            n_samples: 20,
            master_seed: 0,
            newton: NewtonConfig::default(),
            output: None,
        };
        match experiment {
            Experiment::Converge => {
                cfg.p = vec![1.5, 3.0];
                cfg.noise = NoiseModel::Trace;
                cfg.levels = 2;
            }
            Experiment::VerifyLaw => cfg.m_list = vec![5],
            Experiment::SampleNoise => {
                cfg.m_list = vec![8];
                cfg.noise = NoiseModel::Trace;
            }
            Experiment::Explicit | Experiment::SelfTest => {}
        }
        cfg
    }

    /// The documented paper-scale sweep: 3 refinements, `M_f = 1280`, `M_c = 40, 80, 160, 320`.
    fn apply_paper_preset(&mut self) {
        self.levels = 3;
        self.m_fine = 1280;
        self.m_coarse = vec![40, 80, 160, 320];
        self.n_samples = 20;
    }

    /// Coarse `(M_c, level)` cells. The finest level pairs with the largest
    /// `M_c`, and each coarser level divides the step count by the coupling factor;
    /// cells whose count is not listed are skipped.
    pub fn coarse_cells(&self) -> Vec<(usize, usize)> {
        let Some(&top) = self.m_coarse.last() else {
            return Vec::new();
        };
        let factor = self.coupling.factor();
        (0..=self.levels)
            .filter_map(|k| {
                let div = factor.checked_pow((self.levels - k) as u32)?;
                let m = top / div;
                (top % div == 0 && self.m_coarse.contains(&m)).then_some((m, k))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |key: &str, message: String| {
            Err(Error::ConfigInvalid {
                key: key.into(),
                message,
            })
        };
        if self.p.is_empty() || self.p.iter().any(|&p| !(p > 1.0)) {
            return invalid("p", "every exponent must exceed 1".into());
        }
        if !(self.kappa >= 0.0) {
            return invalid("kappa", "must be non-negative".into());
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return invalid("T", "must be positive".into());
        }
        for (key, v) in [
            ("mesh_n0", self.mesh_n0),
            ("r_ref", self.r_ref),
            ("n_samples", self.n_samples),
            ("M_f", self.m_fine),
        ] {
            if v == 0 {
                return invalid(key, "must be positive".into());
            }
        }
        for (key, list) in [("M", &self.m_list), ("M_c", &self.m_coarse)] {
            if list.is_empty() || list.contains(&0) {
                return invalid(key, "needs positive step counts".into());
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(key, "must be sorted ascending without repeats".into());
            }
        }
        if let Some(&bad) = self.m_coarse.iter().find(|&&m| self.m_fine % m != 0) {
            return invalid(
                "M_c",
                format!("{bad} does not divide M_f = {}", self.m_fine),
            );
        }
        if self.newton.validate().is_err() {
            return invalid(
                "newton_abs_tol",
                "Newton tolerances must be positive".into(),
            );
        }
        match self.experiment {
            Experiment::Explicit => {
                if self.p != [2.0] {
                    return invalid("p", "the explicit solution exists only for p = 2".into());
                }
                if !matches!(self.noise, NoiseModel::Linear { .. }) {
                    return invalid("noise", "the explicit solution needs linear noise".into());
                }
                let finest = *self.m_list.last().expect("non-empty");
                if let Some(&bad) = self.m_list.iter().find(|&&m| finest % m != 0) {
                    return invalid(
                        "M",
                        format!("{bad} does not divide the finest count {finest}"),
                    );
                }
            }
            Experiment::Converge => {
                if self.coarse_cells().len() < 2 {
                    return invalid(
                        "M_c",
                        "fewer than two coarse cells match the coupling and levels".into(),
                    );
                }
            }
            Experiment::VerifyLaw => {
                if self.n_samples < 2 {
                    return invalid(
                        "n_samples",
                        "covariance estimates need at least two samples".into(),
                    );
                }
            }
            Experiment::SampleNoise | Experiment::SelfTest => {}
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("cannot parse `{}`", s.trim()))
        })
        .collect()
}

fn parse_one<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_noise(value: &str) -> std::result::Result<NoiseModel, String> {
    let v = value.to_ascii_lowercase();
    if v == "trace" {
        return Ok(NoiseModel::Trace);
    }
    if v == "linear" {
        return Ok(NoiseModel::Linear { lambda: 1.0 });
    }
    if let Some(inner) = v.strip_prefix("linear(").and_then(|s| s.strip_suffix(')')) {
        let lambda = parse_one::<f64>(inner.trim())?;
        return Ok(NoiseModel::Linear { lambda });
    }
    Err(format!(
        "unknown noise `{value}` (expected `trace`, `linear` or `linear(<lambda>)`)"
    ))
}

fn parse_coupling(value: &str) -> std::result::Result<Coupling, String> {
    match value {
        "tau~h" => Ok(Coupling::TauH),
        "tau~h2" => Ok(Coupling::TauH2),
        other => Err(format!(
            "unknown coupling `{other}` (expected `tau~h` or `tau~h2`)"
        )),
    }
}

/// Parses and validates a configuration. The `experiment` key is required.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

/// Like [`parse_config`], with `fallback` used when the text names no experiment.
/// A text naming a different experiment than `fallback` is rejected.
pub fn parse_config_for(text: &str, fallback: Option<Experiment>) -> Result<ExperimentConfig> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigParse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: format!("missing value for `{key}`"),
            });
        }
        if entries.iter().any(|(_, k, _)| k == key) {
            return Err(Error::ConfigParse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        entries.push((line, key.to_string(), value.to_string()));
    }

    let named = entries
        .iter()
        .find(|(_, k, _)| k == "experiment")
        .map(|(line, _, v)| {
            v.parse::<Experiment>()
                .map_err(|message| Error::ConfigParse {
                    line: *line,
                    message,
                })
        })
        .transpose()?;
    let experiment = match (named, fallback) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::ConfigInvalid {
                key: "experiment".into(),
                message: format!("config is for `{a}` but `{b}` was requested"),
            })
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(Error::ConfigInvalid {
                key: "experiment".into(),
                message: "missing".into(),
            });
        }
    };

    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "preset") {
        match v.as_str() {
            "paper" => cfg.apply_paper_preset(),
            "desk" => {}
            other => {
                return Err(Error::ConfigParse {
                    line: *line,
                    message: format!("unknown preset `{other}`"),
                })
            }
        }
    }
    for (line, key, value) in &entries {
        let at = |message: String| Error::ConfigParse {
            line: *line,
            message,
        };
        match key.as_str() {
            "experiment" | "preset" => {}
            "p" => cfg.p = parse_list(value).map_err(at)?,
            "kappa" => cfg.kappa = parse_one(value).map_err(at)?,
            "noise" => cfg.noise = parse_noise(value).map_err(at)?,
            "T" => cfg.t_final = parse_one(value).map_err(at)?,
            "mesh_n0" => cfg.mesh_n0 = parse_one(value).map_err(at)?,
            "levels" => cfg.levels = parse_one(value).map_err(at)?,
            "M" => cfg.m_list = parse_list(value).map_err(at)?,
            "M_f" => cfg.m_fine = parse_one(value).map_err(at)?,
            "M_c" => cfg.m_coarse = parse_list(value).map_err(at)?,
            "coupling" => cfg.coupling = parse_coupling(value).map_err(at)?,
            "r_ref" => cfg.r_ref = parse_one(value).map_err(at)?,
            "n_samples" => cfg.n_samples = parse_one(value).map_err(at)?,
            "master_seed" => cfg.master_seed = parse_one(value).map_err(at)?,
            "newton_abs_tol" => cfg.newton.abs_tol = parse_one(value).map_err(at)?,
            "newton_rel_tol" => cfg.newton.rel_tol = parse_one(value).map_err(at)?,
            "newton_max_iter" => cfg.newton.max_iter = parse_one(value).map_err(at)?,
            "output" => cfg.output = Some(PathBuf::from(value)),
            _ => unreachable!("keys are checked against KEYS"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
