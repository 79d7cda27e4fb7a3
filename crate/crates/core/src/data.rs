//! Domain data model, dataset ingestion and validation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {detail}")]
    Schema { detail: String },
    #[error("validation error in study '{study_id}': {detail}")]
    Validation { study_id: String, detail: String },
}

/// Per-study arm sizes and event counts on the two outcomes. Arm A is the
/// control arm, arm B the treatment arm.
///
/// Some trials report the two outcomes on different analysis populations, so
/// outcome 2 may carry its own arm sizes; when absent they default to the
/// outcome 1 sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub n_ctrl: u64,
    pub r1_ctrl: u64,
    pub r2_ctrl: u64,
    pub n_trt: u64,
    pub r1_trt: u64,
    pub r2_trt: u64,
    #[serde(default)]
    pub n2_ctrl: Option<u64>,
    #[serde(default)]
    pub n2_trt: Option<u64>,
}

impl StudyRecord {
    pub fn new(
        study_id: impl Into<String>,
        n_ctrl: u64,
        r1_ctrl: u64,
        r2_ctrl: u64,
        n_trt: u64,
        r1_trt: u64,
        r2_trt: u64,
    ) -> Result<Self, DataError> {
        Self::with_outcome2_sizes(study_id, n_ctrl, r1_ctrl, r2_ctrl, n_trt, r1_trt, r2_trt, None, None)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_outcome2_sizes(
        study_id: impl Into<String>,
        n_ctrl: u64,
        r1_ctrl: u64,
        r2_ctrl: u64,
        n_trt: u64,
        r1_trt: u64,
        r2_trt: u64,
        n2_ctrl: Option<u64>,
        n2_trt: Option<u64>,
    ) -> Result<Self, DataError> {
        let rec = Self { study_id: study_id.into(), n_ctrl, r1_ctrl, r2_ctrl, n_trt, r1_trt, r2_trt, n2_ctrl, n2_trt };
        rec.validate()?;
        Ok(rec)
    }

    /// Outcome 2 control-arm size (falls back to `n_ctrl`).
    pub fn outcome2_n_ctrl(&self) -> u64 {
        self.n2_ctrl.unwrap_or(self.n_ctrl)
    }

    /// Outcome 2 treatment-arm size (falls back to `n_trt`).
    pub fn outcome2_n_trt(&self) -> u64 {
        self.n2_trt.unwrap_or(self.n_trt)
    }

    fn validate(&self) -> Result<(), DataError> {
        let err = |detail: String| DataError::Validation { study_id: self.study_id.clone(), detail };
        if self.n_ctrl == 0 || self.n_trt == 0 {
            return Err(err("arm sizes must be positive".into()));
        }
        if self.outcome2_n_ctrl() == 0 || self.outcome2_n_trt() == 0 {
            return Err(err("outcome 2 arm sizes must be positive".into()));
        }
        let checks = [
            ("r1_ctrl", self.r1_ctrl, "n_ctrl", self.n_ctrl),
            ("r2_ctrl", self.r2_ctrl, "outcome 2 n_ctrl", self.outcome2_n_ctrl()),
            ("r1_trt", self.r1_trt, "n_trt", self.n_trt),
            ("r2_trt", self.r2_trt, "outcome 2 n_trt", self.outcome2_n_trt()),
        ];
        for (rn, r, nn, n) in checks {
            if r > n {
                return Err(err(format!("{rn} = {r} exceeds {nn} = {n}")));
            }
        }
        Ok(())
    }
}

const BASE_HEADER: [&str; 7] =
    ["study_id", "n_ctrl", "r1_ctrl", "r2_ctrl", "n_trt", "r1_trt", "r2_trt"];
const EXT_HEADER: [&str; 2] = ["n2_ctrl", "n2_trt"];

/// Load a dataset from the CSV file at `path` (comment lines start with `#`).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<StudyRecord>, DataError> {
    parse_dataset(File::open(path)?)
}

/// Parse a dataset from any reader holding the CSV schema
/// `study_id,n_ctrl,r1_ctrl,r2_ctrl,n_trt,r1_trt,r2_trt[,n2_ctrl,n2_trt]`.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Vec<StudyRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let extended = match cols.len() {
        7 if cols == BASE_HEADER => false,
        9 if cols[..7] == BASE_HEADER && cols[7..] == EXT_HEADER => true,
        _ => {
            return Err(DataError::Schema {
                detail: format!(
                    "expected header '{}', optionally extended with '{}'; found '{}'",
                    BASE_HEADER.join(","),
                    EXT_HEADER.join(","),
                    cols.join(",")
                ),
            })
        }
    };

    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = idx + 2; // 1-based, after the header
        let expect = if extended { 9 } else { 7 };
        if row.len() != expect {
            return Err(DataError::Schema {
                detail: format!("row {line}: expected {expect} fields, found {}", row.len()),
            });
        }
        let cell = |i: usize| -> Result<u64, DataError> {
            row[i].parse().map_err(|_| DataError::Schema {
                detail: format!("row {line}, column '{}': '{}' is not a count", cols[i], &row[i]),
            })
        };
        let rec = StudyRecord::with_outcome2_sizes(
            row[0].to_string(),
            cell(1)?,
            cell(2)?,
            cell(3)?,
            cell(4)?,
            cell(5)?,
            cell(6)?,
            if extended { Some(cell(7)?) } else { None },
            if extended { Some(cell(8)?) } else { None },
        )?;
        if records.iter().any(|r: &StudyRecord| r.study_id == rec.study_id) {
            return Err(DataError::Validation {
                study_id: rec.study_id,
                detail: format!("duplicate study_id (row {line})"),
            });
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(DataError::Schema { detail: "no data rows".into() });
    }
    Ok(records)
}

/// Write a dataset back out in the same CSV schema. The extended columns are
/// emitted only when some record carries explicit outcome 2 sizes.
pub fn write_dataset<W: Write>(mut w: W, records: &[StudyRecord]) -> Result<(), DataError> {
    let extended = records.iter().any(|r| r.n2_ctrl.is_some() || r.n2_trt.is_some());
    if extended {
        writeln!(w, "{},{}", BASE_HEADER.join(","), EXT_HEADER.join(","))?;
    } else {
        writeln!(w, "{}", BASE_HEADER.join(","))?;
    }
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            r.study_id, r.n_ctrl, r.r1_ctrl, r.r2_ctrl, r.n_trt, r.r1_trt, r.r2_trt
        )?;
        if extended {
            write!(w, ",{},{}", r.outcome2_n_ctrl(), r.outcome2_n_trt())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-study log odds ratios, their variances and the within-study
/// correlation; the input of the normal-approximation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOrSummary {
    pub y1: f64,
    pub y2: f64,
    pub var1: f64,
    pub var2: f64,
    pub rho_w: f64,
    pub corrected: bool,
}

fn log_or_one_outcome(r_ctrl: u64, n_ctrl: u64, r_trt: u64, n_trt: u64) -> (f64, f64, bool) {
    let cells = [r_trt, n_trt - r_trt, r_ctrl, n_ctrl - r_ctrl];
    let corrected = cells.contains(&0);
    let (rt, nt, rc, nc) = if corrected {
        (r_trt as f64 + 0.5, n_trt as f64 + 1.0, r_ctrl as f64 + 0.5, n_ctrl as f64 + 1.0)
    } else {
        (r_trt as f64, n_trt as f64, r_ctrl as f64, n_ctrl as f64)
    };
    let y = (rt / (nt - rt)).ln() - (rc / (nc - rc)).ln();
    let var = (1.0 / rt + 1.0 / (nt - rt)) + (1.0 / rc + 1.0 / (nc - rc));
    (y, var, corrected)
}

/// Transform counts to log odds ratios with variances. When any cell of an
/// outcome's 2x2 table is zero, 0.5 is added to all four cells of that
/// outcome's table (only) before computing.
pub fn to_log_or(rec: &StudyRecord, rho_w: f64) -> LogOrSummary {
    assert!((-1.0..=1.0).contains(&rho_w), "rho_w must lie in [-1, 1]");
    let (y1, var1, c1) = log_or_one_outcome(rec.r1_ctrl, rec.n_ctrl, rec.r1_trt, rec.n_trt);
    let (y2, var2, c2) =
        log_or_one_outcome(rec.r2_ctrl, rec.outcome2_n_ctrl(), rec.r2_trt, rec.outcome2_n_trt());
    LogOrSummary { y1, y2, var1, var2, rho_w, corrected: c1 || c2 }
}

/// Shared hierarchical parameters plus per-study effects, on the constrained
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenStudyState {
    pub d1: f64,
    pub d2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub rho_b: f64,
    pub z: f64,
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    /// Baseline log-odds per study; absent for the normal-approximation model.
    pub mu1: Option<Vec<f64>>,
    pub mu2: Option<Vec<f64>>,
}

impl BetweenStudyState {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |detail: String| DataError::Schema { detail };
        if (self.rho_b - self.z.tanh()).abs() > 1e-12 {
            return Err(err(format!("rho_b = {} is not tanh(z = {})", self.rho_b, self.z)));
        }
        if !(self.tau1 >= 0.0 && self.tau2 >= 0.0) {
            return Err(err("between-studies standard deviations must be nonnegative".into()));
        }
        if self.rho_b.abs() > 1.0 {
            return Err(err(format!("|rho_b| = {} exceeds 1", self.rho_b.abs())));
        }
        // determinant of the 2x2 covariance
        let det = self.tau1.powi(2) * self.tau2.powi(2) * (1.0 - self.rho_b.powi(2));
        if det < 0.0 {
            return Err(err(format!("between-studies covariance has det {det} < 0")));
        }
        Ok(())
    }
}

/// Gaussian prior summary on a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub mean: f64,
    pub sd: f64,
}

/// Where a study's dependence parameters come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DependenceSource {
    /// Fixed at the stated values (the simulation-study path, where they are
    /// estimated from the generated patient data).
    Fixed,
    /// Sampled under informative normal priors on the theta scale.
    InformativePrior { ctrl: ThetaPrior, trt: ThetaPrior },
}

/// Frank dependence parameters of the two arms of one study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmDependence {
    pub theta_ctrl: f64,
    pub theta_trt: f64,
    pub source: DependenceSource,
}

impl ArmDependence {
    pub fn fixed(theta_ctrl: f64, theta_trt: f64) -> Self {
        Self { theta_ctrl, theta_trt, source: DependenceSource::Fixed }
    }

    pub fn with_priors(ctrl: ThetaPrior, trt: ThetaPrior) -> Self {
        Self {
            theta_ctrl: ctrl.mean,
            theta_trt: trt.mean,
            source: DependenceSource::InformativePrior { ctrl, trt },
        }
    }
}

/// Posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub parameter: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl PosteriorSummary {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.ci_low <= self.median && self.median <= self.ci_high) {
            return Err(DataError::Schema {
                detail: format!(
                    "summary for '{}' violates ci_low <= median <= ci_high",
                    self.parameter
                ),
            });
        }
        if self.rhat < 1.0 - 1e-3 {
            return Err(DataError::Schema {
                detail: format!("summary for '{}' has rhat {} < 1 - 1e-3", self.parameter, self.rhat),
            });
        }
        Ok(())
    }
}
