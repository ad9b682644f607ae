//! CSV rows and number formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::errors::Estimate;

pub const HEADER: &str =
    "experiment,scheme,metric,p,kappa,tau_c,h_c,tau_f,h_f,n_samples,mean,stderr,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment: String,
    pub scheme: String,
    pub metric: String,
    pub p: f64,
    pub kappa: f64,
    pub tau_c: f64,
    pub h_c: f64,
    pub tau_f: f64,
    pub h_f: f64,
    pub n_samples: usize,
    pub mean: f64,
    pub stderr: f64,
    pub seed: u64,
}

impl CsvRow {
    pub fn set_estimate(&mut self, e: Estimate) {
        self.mean = e.mean;
        self.stderr = e.stderr;
        self.n_samples = e.n_samples;
    }

    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{},{},{}", self.experiment, self.scheme, self.metric);
        for x in [
            self.p, self.kappa, self.tau_c, self.h_c, self.tau_f, self.h_f,
        ] {
            let _ = write!(s, ",{}", sci(x));
        }
        let _ = write!(
            s,
            ",{},{},{},{}",
            self.n_samples,
            sci(self.mean),
            sci(self.stderr),
            self.seed
        );
        s
    }
}

/// `d.dddddddddddde+XX`: 13 significant digits, signed exponent of at least two digits.
pub fn sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let raw = format!("{x:.12e}");
    let (mantissa, exp) = raw
        .split_once('e')
        .expect("`e` formatting always has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn render(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Writes `contents` to `dir/name` through a temporary file and a rename, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, &target)?;
    Ok(target)
}
