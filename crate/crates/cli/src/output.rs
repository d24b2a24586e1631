//! JSON, aligned-text and CSV rendering of results.

use std::fmt::Write as _;
use std::io::Write;

use clap::ValueEnum;
use csf_core::inference::{BlpResult, Estimate};
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

/// Pretty JSON with object keys sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Usage(format!("cannot encode output: {e}")))?;
    serde_json::to_string_pretty(&v).map_err(|e| CliError::Usage(format!("cannot encode output: {e}")))
}

/// Quantile with linear interpolation between order statistics
/// (the common "type 7" definition).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> FiveNumber {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        FiveNumber {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        }
    }

    pub fn table(&self) -> String {
        let cells = [self.min, self.q1, self.median, self.mean, self.q3, self.max].map(|v| format!("{v:.0}"));
        aligned(
            &["Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max."],
            &[cells.to_vec()],
            None,
        )
    }
}

/// Right-aligned columns; `row_names` adds a left-aligned first column.
pub fn aligned(header: &[&str], rows: &[Vec<String>], row_names: Option<&[String]>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let name_width = row_names.map_or(0, |n| n.iter().map(String::len).max().unwrap_or(0));
    let mut out = String::new();
    if row_names.is_some() {
        out.push_str(&" ".repeat(name_width));
    }
    for (i, (h, w)) in header.iter().zip(&widths).enumerate() {
        if i > 0 || row_names.is_some() {
            out.push(' ');
        }
        let _ = write!(out, "{h:>w$}");
    }
    out.push('\n');
    for (r, row) in rows.iter().enumerate() {
        if let Some(names) = row_names {
            let _ = write!(out, "{:<name_width$}", names[r]);
        }
        for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
            if i > 0 || row_names.is_some() {
                out.push(' ');
            }
            let _ = write!(out, "{c:>w$}");
        }
        out.push('\n');
    }
    out
}

pub fn ate_table(est: &Estimate) -> String {
    aligned(
        &["estimate", "std.err"],
        &[vec![format!("{:.1}", est.estimate), format!("{:.1}", est.std_err)]],
        None,
    )
}

fn stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => "",
    }
}

pub fn blp_table(blp: &BlpResult) -> String {
    let names: Vec<String> = blp.coefficients.iter().map(|c| c.name.clone()).collect();
    let rows: Vec<Vec<String>> = blp
        .coefficients
        .iter()
        .map(|c| {
            vec![
                format!("{:.3}", c.estimate),
                format!("{:.3}", c.std_error),
                format!("{:.2}", c.t_value),
                format!("{:.3}", c.p_value),
                stars(c.p_value).to_string(),
            ]
        })
        .collect();
    let mut out = String::from(
        "\nBest linear projection of the conditional average treatment effect.\n\
         Confidence intervals are heteroskedasticity-robust (HC3):\n\n",
    );
    out.push_str(&aligned(
        &["Estimate", "Std. Error", "t value", "Pr(>|t|)", ""],
        &rows,
        Some(&names),
    ));
    out.push_str("---\nSignif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n");
    out
}

pub fn blp_csv(blp: &BlpResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::Usage(format!("cannot write csv: {e}"));
    w.write_record(["term", "estimate", "std_error", "t_value", "p_value"]).map_err(err)?;
    for c in &blp.coefficients {
        w.write_record([
            c.name.clone(),
            c.estimate.to_string(),
            c.std_error.to_string(),
            c.t_value.to_string(),
            c.p_value.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("<stdout>", e))
}

/// Writes a two-column-or-wider numeric table as CSV.
pub fn numeric_csv(header: &[&str], columns: &[&[f64]], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::Usage(format!("cannot write csv: {e}"));
    w.write_record(header).map_err(err)?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|c| c[i].to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert!((quantile(&s, 0.8) - 3.4).abs() < 1e-12);
    }

    #[test]
    fn ate_layout() {
        let t = ate_table(&Estimate {
            estimate: 27.21,
            std_err: 5.36,
        });
        assert_eq!(t, "estimate std.err\n    27.2     5.4\n");
    }

    #[test]
    fn keys_are_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        let j = canonical_json(&S { zeta: 1, alpha: 2 }).unwrap();
        assert!(j.find("alpha").unwrap() < j.find("zeta").unwrap());
    }

    #[test]
    fn significance_codes() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.046), "*");
        assert_eq!(stars(0.07), ".");
        assert_eq!(stars(0.5), "");
    }
}
