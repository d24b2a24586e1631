//! Doubly robust inference on a fitted model: average effect, best linear
//! projection with HC3 standard errors, and rank-weighted effects.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::csf::CsfModel;
use crate::error::{CsfError, Result};
use crate::matrix::Matrix;

pub const DEFAULT_BOOTSTRAP: usize = 200;

/// Maximum number of TOC points kept for plotting.
pub const TOC_PLOT_POINTS: usize = 200;

/// Per-unit AIPW scores `Gamma_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrScores {
    pub gamma: Vec<f64>,
}

impl DrScores {
    /// `Gamma_i = tau_i + omega_i (W_i - e_i) / (e_i (1 - e_i))
    ///   * (U_i - m_i - (W_i - e_i) tau_i)`.
    pub fn from_components(tau: &[f64], w: &[f64], e_hat: &[f64], m_hat: &[f64], u: &[f64], omega: &[f64]) -> Result<Self> {
        let n = tau.len();
        if [w.len(), e_hat.len(), m_hat.len(), u.len(), omega.len()].iter().any(|&l| l != n) {
            return Err(CsfError::param("score components must have equal length"));
        }
        let mut gamma = Vec::with_capacity(n);
        for i in 0..n {
            let e = e_hat[i];
            if !(e > 0.0 && e < 1.0) {
                return Err(CsfError::param(format!("propensity {e} of unit {i} outside (0, 1)")));
            }
            let r = w[i] - e;
            let g = if omega[i] == 0.0 {
                tau[i]
            } else {
                tau[i] + omega[i] * r / (e * (1.0 - e)) * (u[i] - m_hat[i] - r * tau[i])
            };
            if !g.is_finite() {
                return Err(CsfError::param(format!("score of unit {i} is not finite")));
            }
            gamma.push(g);
        }
        Ok(DrScores { gamma })
    }

    /// Scores from a model's OOB estimates and nuisances.
    pub fn from_model(model: &CsfModel) -> Result<Self> {
        Self::from_components(
            &model.tau_oob,
            &model.w,
            &model.nuisances.e_hat,
            &model.nuisances.m_hat,
            &model.u,
            &model.ipcw,
        )
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_err: f64,
}

pub fn average_treatment_effect(scores: &DrScores) -> Result<Estimate> {
    let n = scores.len();
    if n < 2 {
        return Err(CsfError::param("at least two scores are required"));
    }
    let mean = scores.gamma.iter().sum::<f64>() / n as f64;
    let var = scores.gamma.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(Estimate {
        estimate: mean,
        std_err: (var / n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlpResult {
    pub coefficients: Vec<Coefficient>,
    /// HC3 covariance, row-major, intercept first.
    pub covariance: Vec<f64>,
}

pub const INTERCEPT: &str = "(Intercept)";

/// Two-sided normal p-value for a t statistic.
pub fn normal_p_value(t: f64) -> f64 {
    let z = Normal::standard();
    (2.0 * (1.0 - z.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Finds the first column of `a` that lies in the span of the earlier ones
/// by modified Gram–Schmidt.
fn dependent_column(a: &DMatrix<f64>) -> Option<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let col = a.column(j).into_owned();
        let norm = col.norm();
        let mut v = col;
        for q in &basis {
            let c = q.dot(&v);
            v -= q * c;
        }
        let r = v.norm();
        if r <= 1e-10 * norm.max(1.0) || norm == 0.0 {
            return Some(j);
        }
        basis.push(v / r);
    }
    None
}

/// OLS of the scores on `[1, covariates]` with HC3 covariance.
pub fn best_linear_projection(scores: &DrScores, covariates: &Matrix, names: &[String]) -> Result<BlpResult> {
    let n = scores.len();
    let k = covariates.ncols() + 1;
    if covariates.nrows() != n {
        return Err(CsfError::param(format!("{} covariate rows for {n} scores", covariates.nrows())));
    }
    if names.len() != covariates.ncols() {
        return Err(CsfError::param("one name per projection covariate is required"));
    }
    if n <= k {
        return Err(CsfError::LinearAlgebra(format!("{n} observations cannot identify {k} coefficients")));
    }
    let labels: Vec<&str> = std::iter::once(INTERCEPT).chain(names.iter().map(String::as_str)).collect();
    let a = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { covariates.get(i, j - 1) });
    if let Some(j) = dependent_column(&a) {
        let earlier = labels[..j].join(", ");
        return Err(CsfError::LinearAlgebra(format!(
            "projection design is rank deficient: column '{}' is a linear combination of [{earlier}]",
            labels[j]
        )));
    }
    let y = DVector::from_column_slice(&scores.gamma);
    let ata = a.transpose() * &a;
    let inv = ata
        .clone()
        .cholesky()
        .ok_or_else(|| CsfError::LinearAlgebra("normal equations are not positive definite".into()))?
        .inverse();
    let beta = if k == 1 {
        // Same summation as the average effect, so the two agree exactly.
        DVector::from_element(1, scores.gamma.iter().sum::<f64>() / n as f64)
    } else {
        let qr = a.clone().qr();
        let qty = qr.q().transpose() * &y;
        qr.r()
            .solve_upper_triangular(&qty)
            .ok_or_else(|| CsfError::LinearAlgebra("projection design is singular".into()))?
    };
    let resid = &y - &a * &beta;

    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let row = a.row(i);
        let h = (row * &inv * row.transpose())[(0, 0)];
        if 1.0 - h < 1e-12 {
            return Err(CsfError::LinearAlgebra(format!(
                "observation {} has leverage 1; HC3 is undefined",
                i + 1
            )));
        }
        let s = resid[i] / (1.0 - h);
        meat += row.transpose() * row * (s * s);
    }
    let cov = &inv * meat * &inv;

    let coefficients = (0..k)
        .map(|j| {
            let se = cov[(j, j)].max(0.0).sqrt();
            let t = beta[j] / se;
            Coefficient {
                name: labels[j].to_string(),
                estimate: beta[j],
                std_error: se,
                t_value: t,
                p_value: if t.is_nan() { 1.0 } else { normal_p_value(t) },
            }
        })
        .collect();
    let covariance = (0..k * k).map(|idx| cov[(idx / k, idx % k)]).collect();
    Ok(BlpResult { coefficients, covariance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TocCurve {
    /// `k / n` for `k = 1..=n`.
    pub q_grid: Vec<f64>,
    pub toc_values: Vec<f64>,
    pub overall_ate: f64,
}

/// Order by priority descending, ties by ascending position.
fn priority_order(priorities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));
    order
}

/// TOC values from scores already sorted by priority.
fn toc_sorted(sorted: impl Iterator<Item = f64>) -> (Vec<f64>, f64) {
    let mut prefix = Vec::new();
    let mut acc = 0.0;
    for g in sorted {
        acc += g;
        prefix.push(acc);
    }
    let n = prefix.len();
    let overall = acc / n as f64;
    let toc = prefix.iter().enumerate().map(|(k, s)| s / (k + 1) as f64 - overall).collect();
    (toc, overall)
}

fn check_priorities(scores: &DrScores, priorities: &[f64], min_n: usize) -> Result<()> {
    if priorities.len() != scores.len() {
        return Err(CsfError::param(format!(
            "{} priorities for {} scores",
            priorities.len(),
            scores.len()
        )));
    }
    if scores.len() < min_n {
        return Err(CsfError::param(format!("at least {min_n} units are required")));
    }
    if priorities.iter().any(|p| p.is_nan()) {
        return Err(CsfError::param("priorities must not be NaN"));
    }
    Ok(())
}

pub fn toc_curve(scores: &DrScores, priorities: &[f64]) -> Result<TocCurve> {
    check_priorities(scores, priorities, 2)?;
    let order = priority_order(priorities);
    let (toc_values, overall_ate) = toc_sorted(order.iter().map(|&i| scores.gamma[i]));
    let n = order.len();
    Ok(TocCurve {
        q_grid: (1..=n).map(|k| k as f64 / n as f64).collect(),
        toc_values,
        overall_ate,
    })
}

fn autoc_of(toc: &[f64]) -> f64 {
    toc.iter().sum::<f64>() / toc.len() as f64
}

/// One point of the thinned TOC curve with a pointwise 95% band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TocBar {
    pub q: f64,
    pub toc: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub autoc_estimate: f64,
    pub std_err: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub toc: TocCurve,
    /// Thinned curve for plotting.
    pub toc_bars: Vec<TocBar>,
}

/// Grid positions kept for plotting: at most `max_points`, always the last.
fn thinned_positions(n: usize, max_points: usize) -> Vec<usize> {
    if n <= max_points {
        return (0..n).collect();
    }
    let mut out: Vec<usize> = (1..=max_points).map(|j| (j * n).div_ceil(max_points) - 1).collect();
    out.dedup();
    out
}

/// AUTOC with a half-sample bootstrap standard error.
///
/// Each replicate draws `floor(n/2)` units without replacement. Sampling half
/// the units without replacement has the same variance, to first order, as
/// the full-sample estimator, so the replicate sd is used unscaled.
pub fn rate(scores: &DrScores, priorities: &[f64], n_bootstrap: usize, seed: u64) -> Result<RateResult> {
    check_priorities(scores, priorities, 4)?;
    if n_bootstrap < 2 {
        return Err(CsfError::param("n_bootstrap must be at least 2"));
    }
    let toc = toc_curve(scores, priorities)?;
    let autoc_estimate = autoc_of(&toc.toc_values);
    let n = scores.len();
    let half = n / 2;
    let positions = thinned_positions(n, TOC_PLOT_POINTS);
    let qs: Vec<f64> = positions.iter().map(|&p| toc.q_grid[p]).collect();

    // Each replicate: AUTOC and the TOC at the plotted quantiles.
    let replicates: Vec<(f64, Vec<f64>)> = (0..n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut ids = rand::seq::index::sample(&mut rng, n, half).into_vec();
            ids.sort_unstable();
            let sub_p: Vec<f64> = ids.iter().map(|&i| priorities[i]).collect();
            let order = priority_order(&sub_p);
            let (sub_toc, _) = toc_sorted(order.iter().map(|&j| scores.gamma[ids[j]]));
            let at_q = qs
                .iter()
                .map(|&q| sub_toc[((q * half as f64).ceil() as usize).clamp(1, half) - 1])
                .collect();
            (autoc_of(&sub_toc), at_q)
        })
        .collect();

    let sd = |values: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = values.collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let std_err = sd(&mut replicates.iter().map(|r| r.0));
    let toc_bars = positions
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            let se = sd(&mut replicates.iter().map(|r| r.1[j]));
            let v = toc.toc_values[p];
            TocBar {
                q: toc.q_grid[p],
                toc: v,
                lower: v - 1.96 * se,
                upper: v + 1.96 * se,
            }
        })
        .collect();
    Ok(RateResult {
        autoc_estimate,
        std_err,
        n_bootstrap,
        seed,
        toc,
        toc_bars,
    })
}
