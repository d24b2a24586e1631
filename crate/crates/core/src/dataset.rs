//! Censored survival data: loading, validation, horizon truncation and the
//! descriptive summaries used in reports.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CsfError, Result};
use crate::matrix::Matrix;

/// Maps CSV column names onto the roles of a survival dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub event: String,
    pub covariates: Vec<String>,
}

impl ColumnSchema {
    /// Column layout of the cleaned JTPA file (days of unemployment, offer
    /// of training, job found by the second interview, six covariates).
    pub fn jtpa() -> Self {
        ColumnSchema {
            outcome: "days".into(),
            treatment: "treatment".into(),
            event: "delta".into(),
            covariates: ["age", "hsged", "white", "children", "married", "male"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Whether validation insists on at least one censored unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CensoringCheck {
    #[default]
    Required,
    /// Data known to be uncensored (e.g. simulations without censoring).
    NotRequired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    names: Vec<String>,
    x: Matrix,
    y: Vec<f64>,
    w: Vec<bool>,
    d: Vec<bool>,
}

impl SurvivalDataset {
    pub fn new(
        names: Vec<String>,
        x: Matrix,
        y: Vec<f64>,
        w: Vec<bool>,
        d: Vec<bool>,
        check: CensoringCheck,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(CsfError::Input(format!("need at least 2 rows, got {n}")));
        }
        if x.nrows() != n || w.len() != n || d.len() != n {
            return Err(CsfError::Input(format!(
                "length mismatch: x has {} rows, y {n}, w {}, d {}",
                x.nrows(),
                w.len(),
                d.len()
            )));
        }
        if names.len() != x.ncols() {
            return Err(CsfError::Input(format!(
                "{} covariate names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(CsfError::Input(format!(
                "outcome must be finite and nonnegative (row {i}: {})",
                y[i]
            )));
        }
        if let Some(i) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(CsfError::Input(format!(
                "non-finite covariate value at row {}",
                i / x.ncols().max(1)
            )));
        }
        if !w.iter().any(|&t| t) || w.iter().all(|&t| t) {
            return Err(CsfError::Input(
                "need at least one treated and one control unit".into(),
            ));
        }
        if !d.iter().any(|&e| e) {
            return Err(CsfError::Input("need at least one observed event".into()));
        }
        if check == CensoringCheck::Required && d.iter().all(|&e| e) {
            return Err(CsfError::Input(
                "no censored units; pass the no-censoring flag if this is expected".into(),
            ));
        }
        Ok(SurvivalDataset { names, x, y, w, d })
    }

    /// Reads a header-first, comma-separated numeric CSV.
    pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema, check: CensoringCheck) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CsfError::io(path, e))?;
        Self::read_csv(file, schema, check)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, schema: &ColumnSchema, check: CensoringCheck) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CsfError::Input(format!("cannot read header: {e}")))?
            .clone();
        if headers.is_empty() || headers.iter().all(str::is_empty) {
            return Err(CsfError::Input("empty file".into()));
        }
        let find = |role: &str, name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CsfError::Schema(format!("{role} column not found: '{name}'")))
        };
        let yi = find("outcome", &schema.outcome)?;
        let wi = find("treatment", &schema.treatment)?;
        let di = find("event", &schema.event)?;
        let xi = schema
            .covariates
            .iter()
            .map(|c| find("covariate", c))
            .collect::<Result<Vec<_>>>()?;

        let mut y = Vec::new();
        let mut w = Vec::new();
        let mut d = Vec::new();
        let mut xs = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            // Row numbers are 1-based data rows (header excluded).
            let row = r + 1;
            let rec = rec.map_err(|e| CsfError::Input(format!("malformed CSV at row {row}: {e}")))?;
            let cell = |idx: usize| -> Result<f64> {
                let raw = rec.get(idx).unwrap_or("");
                let column = headers.get(idx).unwrap_or("?").to_string();
                if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                    return Err(CsfError::Parse {
                        row,
                        column,
                        message: "missing value".into(),
                    });
                }
                raw.parse::<f64>().map_err(|_| CsfError::Parse {
                    row,
                    column,
                    message: format!("not a number: '{raw}'"),
                })
            };
            let binary = |idx: usize| -> Result<bool> {
                let v = cell(idx)?;
                match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(CsfError::Parse {
                        row,
                        column: headers.get(idx).unwrap_or("?").to_string(),
                        message: format!("expected 0 or 1, got {v}"),
                    }),
                }
            };
            y.push(cell(yi)?);
            w.push(binary(wi)?);
            d.push(binary(di)?);
            for &c in &xi {
                xs.push(cell(c)?);
            }
        }
        if y.is_empty() {
            return Err(CsfError::Input("no data rows".into()));
        }
        let x = Matrix::from_row_major(y.len(), xi.len(), xs)?;
        Self::new(schema.covariates.clone(), x, y, w, d, check)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub fn d(&self) -> &[bool] {
        &self.d
    }

    pub fn w_f64(&self) -> Vec<f64> {
        self.w.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    pub fn treated_fraction(&self) -> f64 {
        self.w.iter().filter(|&&t| t).count() as f64 / self.n() as f64
    }

    pub fn censoring_rate(&self) -> f64 {
        self.d.iter().filter(|&&e| !e).count() as f64 / self.n() as f64
    }

    /// Swaps treated and control labels.
    pub fn relabel_treatment(&self) -> SurvivalDataset {
        SurvivalDataset {
            w: self.w.iter().map(|&t| !t).collect(),
            ..self.clone()
        }
    }

    pub fn truncate(&self, horizon: f64) -> Result<TruncatedOutcome> {
        TruncatedOutcome::new(&self.y, &self.d, horizon)
    }

    pub fn histogram(&self, n_bins: usize) -> Result<Histogram> {
        Histogram::new(&self.y, &self.d, n_bins)
    }

    /// Per-covariate means over the rows where `mask` is true.
    pub fn group_covariate_means(&self, mask: &[bool]) -> Result<Vec<(String, f64)>> {
        if mask.len() != self.n() {
            return Err(CsfError::Selection(format!(
                "mask has length {}, dataset has {} rows",
                mask.len(),
                self.n()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(CsfError::Selection("selection is empty".into()));
        }
        let mut sums = vec![0.0; self.p()];
        for (row, _) in self.x.rows().zip(mask).filter(|(_, &m)| m) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        Ok(self
            .names
            .iter()
            .cloned()
            .zip(sums.into_iter().map(|s| s / count as f64))
            .collect())
    }

    /// Digest identifying the training data: dimensions, column names and
    /// the first and last rows.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.p() as u64).to_le_bytes());
        for name in &self.names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for i in [0, self.n() - 1] {
            for v in self.x.row(i) {
                h.update(v.to_le_bytes());
            }
            h.update(self.y[i].to_le_bytes());
            h.update([self.w[i] as u8, self.d[i] as u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Outcome truncated at the horizon together with its completeness flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedOutcome {
    pub u: Vec<f64>,
    /// True when `min(T, h)` is known: the event was observed or follow-up
    /// reached the horizon.
    pub complete: Vec<bool>,
    pub horizon: f64,
}

impl TruncatedOutcome {
    pub fn new(y: &[f64], d: &[bool], horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CsfError::param(format!("horizon must be positive, got {horizon}")));
        }
        let u = y.iter().map(|&t| t.min(horizon)).collect();
        let complete = y.iter().zip(d).map(|(&t, &e)| e || t >= horizon).collect();
        Ok(TruncatedOutcome { u, complete, horizon })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn n_complete(&self) -> usize {
        self.complete.iter().filter(|&&c| c).count()
    }
}

/// Equal-width histogram of recorded times split by event status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts_event: Vec<usize>,
    pub counts_censored: Vec<usize>,
}

impl Histogram {
    pub fn new(y: &[f64], d: &[bool], n_bins: usize) -> Result<Self> {
        if n_bins == 0 {
            return Err(CsfError::param("histogram needs at least one bin"));
        }
        if y.is_empty() {
            return Err(CsfError::Input("histogram of empty data".into()));
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / n_bins as f64;
        let bin_edges: Vec<f64> = (0..=n_bins)
            .map(|k| if k == n_bins { hi } else { lo + width * k as f64 })
            .collect();
        let mut counts_event = vec![0; n_bins];
        let mut counts_censored = vec![0; n_bins];
        for (&t, &e) in y.iter().zip(d) {
            let bin = if width > 0.0 {
                (((t - lo) / width).floor() as usize).min(n_bins - 1)
            } else {
                0
            };
            if e {
                counts_event[bin] += 1;
            } else {
                counts_censored[bin] += 1;
            }
        }
        Ok(Histogram {
            bin_edges,
            counts_event,
            counts_censored,
        })
    }

    pub fn total(&self) -> usize {
        self.counts_event.iter().sum::<usize>() + self.counts_censored.iter().sum::<usize>()
    }
}
