//! Causal survival forest.
//!
//! Fitting runs in stages:
//!
//! 1. propensity `e(x)`: a supplied constant, or an OOB regression forest of
//!    `W` on `X`;
//! 2. censoring survival `G(t | x, w)`: marginal Kaplan–Meier or an OOB
//!    log-rank survival forest, evaluated just before `min(Y, h)`;
//! 3. inverse-probability-of-censoring weights `omega = 1{complete} / G`
//!    (floored), so only complete cases carry weight;
//! 4. outcome mean `m(x)`: OOB weighted regression forest of `U` on `X`;
//! 5. the causal forest, grown on complete cases with the orthogonalized
//!    residuals `U - m(X)` and `W - e(X)`.
//!
//! Splits use the gradient pseudo-outcome of the partially linear model;
//! predictions are the kernel-weighted local orthogonal estimate
//! `sum a_i w_i Wr_i Ur_i / sum a_i w_i Wr_i^2`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{SurvivalDataset, TruncatedOutcome};
use crate::error::{CsfError, Result};
use crate::forest::{Forest, ForestParams, LabelKind, RegressionForest, SplitCriterion, VarianceScan, RNG_ID};
use crate::matrix::Matrix;
use crate::survival::{censoring_km, SurvivalForest, TimeGrid, DEFAULT_MAX_GRID_POINTS, SURVIVAL_MIN_NODE_SIZE};

pub const MODEL_VERSION: u32 = 1;

/// Censoring correction recorded in model metadata.
pub const SCORE_KIND: &str = "ipcw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Restricted mean survival time `E[min(T, h)]`.
    Rmst,
    /// Survival probability `P[T > h]`.
    SurvivalProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propensity {
    /// Known constant propensity, e.g. the treated fraction of an RCT.
    Constant(f64),
    /// OOB regression forest of `W` on `X`.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringModel {
    /// Marginal Kaplan–Meier of the censoring times, ignoring covariates.
    Km,
    /// Survival forest on `(X, W)` with censoring as the event.
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsfParams {
    pub horizon: f64,
    pub target: Target,
    pub propensity: Propensity,
    pub censoring_model: CensoringModel,
    pub g_floor: f64,
    pub grid_max_points: usize,
    /// Final causal forest. Its `seed` field is ignored; see `seed`.
    pub forest: ForestParams,
    /// Propensity and outcome forests. `seed` ignored.
    pub nuisance_forest: ForestParams,
    /// Censoring survival forest. `seed` ignored.
    pub censoring_forest: ForestParams,
    /// Master seed; every sub-forest gets a seed derived from it.
    pub seed: u64,
}

impl CsfParams {
    pub fn new(horizon: f64) -> Self {
        CsfParams {
            horizon,
            target: Target::Rmst,
            propensity: Propensity::Estimate,
            censoring_model: CensoringModel::Forest,
            g_floor: 0.05,
            grid_max_points: DEFAULT_MAX_GRID_POINTS,
            forest: ForestParams::default(),
            nuisance_forest: ForestParams::default().with_trees(500),
            censoring_forest: ForestParams {
                min_node_size: SURVIVAL_MIN_NODE_SIZE,
                ..ForestParams::default().with_trees(500)
            },
            seed: 42,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(CsfError::param(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.g_floor > 0.0 && self.g_floor <= 1.0) {
            return Err(CsfError::param("g_floor must lie in (0, 1]"));
        }
        if let Propensity::Constant(c) = self.propensity {
            if !(c > 0.0 && c < 1.0) {
                return Err(CsfError::param(format!("constant propensity must lie in (0, 1), got {c}")));
            }
        }
        if self.grid_max_points == 0 {
            return Err(CsfError::param("grid_max_points must be positive"));
        }
        self.forest.validate(p)?;
        self.nuisance_forest.validate(p)?;
        self.censoring_forest.validate(p + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Propensity = 1,
    Censoring = 2,
    Outcome = 3,
    Causal = 4,
}

/// SplitMix64 finalizer applied to `seed + stage`.
fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut z = seed.wrapping_add((stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    /// Smallest censoring survival among complete cases before flooring.
    pub g_min_raw: f64,
    /// Complete cases whose censoring survival was raised to the floor.
    pub g_floored_count: usize,
    /// Units with estimated propensity outside [0.01, 0.99].
    pub overlap_violations: usize,
    pub overlap_warning: bool,
    /// Units that were in-bag for every tree of some nuisance forest.
    pub oob_fallbacks: usize,
    pub propensity_forest_fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub e_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    /// Censoring survival just before `min(Y, h)`, after flooring.
    pub g_hat_at_u: Vec<f64>,
    pub diagnostics: NuisanceDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n: usize,
    pub p: usize,
    pub names: Vec<String>,
    pub data_hash: String,
}

impl Fingerprint {
    pub fn of(ds: &SurvivalDataset) -> Self {
        Fingerprint {
            n: ds.n(),
            p: ds.p(),
            names: ds.names().to_vec(),
            data_hash: ds.fingerprint(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n: usize,
    pub p: usize,
    pub n_complete: usize,
    pub censoring_rate: f64,
    pub treated_fraction: f64,
    pub u_resid_mean: f64,
    pub u_resid_sd: f64,
    pub w_resid_mean: f64,
    pub w_resid_sd: f64,
    pub cate_oob_fallbacks: usize,
}

/// A fitted causal survival forest with everything inference needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsfModel {
    pub version: u32,
    pub score: String,
    pub rng: String,
    pub params: CsfParams,
    pub fingerprint: Fingerprint,
    pub nuisances: NuisanceSet,
    pub propensity_forest: Option<RegressionForest>,
    pub censoring_forest: Option<SurvivalForest>,
    pub outcome_forest: RegressionForest,
    pub final_forest: Forest,
    /// Treatment indicator as 0/1.
    pub w: Vec<f64>,
    /// Target outcome per unit (truncated time or survival indicator).
    pub u: Vec<f64>,
    pub complete: Vec<bool>,
    pub ipcw: Vec<f64>,
    pub u_resid: Vec<f64>,
    pub w_resid: Vec<f64>,
    /// OOB CATE estimates for the training units.
    pub tau_oob: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    /// Free-form metadata set by callers, e.g. where the data came from.
    #[serde(default)]
    pub annotations: BTreeMap<String, String>,
}

/// Outcome entering the orthogonal moment for the chosen target.
pub fn make_outcome(y: &[f64], d: &[bool], trunc: &TruncatedOutcome, target: Target) -> Vec<f64> {
    match target {
        Target::Rmst => trunc.u.clone(),
        // Survival past the horizon is known when y > h, or when follow-up
        // ended exactly at h without an event.
        Target::SurvivalProbability => y
            .iter()
            .zip(d)
            .map(|(&t, &e)| {
                if t > trunc.horizon || (t >= trunc.horizon && !e) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// `omega_i = 1{complete_i} / max(G_i, floor)`.
pub fn ipcw_weights(trunc: &TruncatedOutcome, g_hat_at_u: &[f64], g_floor: f64) -> Result<Vec<f64>> {
    if g_hat_at_u.len() != trunc.n() {
        return Err(CsfError::param("one censoring survival value per unit is required"));
    }
    if !(g_floor > 0.0 && g_floor <= 1.0) {
        return Err(CsfError::param("g_floor must lie in (0, 1]"));
    }
    g_hat_at_u
        .iter()
        .zip(&trunc.complete)
        .map(|(&g, &c)| {
            if !(0.0..=1.0).contains(&g) || g.is_nan() {
                return Err(CsfError::param(format!("censoring survival {g} outside [0, 1]")));
            }
            Ok(if c { 1.0 / g.max(g_floor) } else { 0.0 })
        })
        .collect()
}

/// Gradient pseudo-outcomes of a parent node:
/// `rho_i = Wr_i (Ur_i - Wr_i tau_P) / (sum w Wr^2 / sum w)`, with
/// `tau_P` the weighted orthogonal effect of the parent. `None` when the
/// parent has no treatment-residual variation.
pub fn pseudo_outcomes(u_resid: &[f64], w_resid: &[f64], weights: &[f64]) -> Option<Vec<f64>> {
    let sw: f64 = weights.iter().sum();
    let sww: f64 = weights.iter().zip(w_resid).map(|(w, r)| w * r * r).sum();
    if sw <= 0.0 || sww <= 1e-12 * sw {
        return None;
    }
    let swu: f64 = weights.iter().zip(w_resid).zip(u_resid).map(|((w, r), u)| w * r * u).sum();
    let tau = swu / sww;
    let scale = sww / sw;
    Some(
        u_resid
            .iter()
            .zip(w_resid)
            .map(|(&u, &r)| r * (u - r * tau) / scale)
            .collect(),
    )
}

struct CausalCriterion<'a> {
    u_resid: &'a [f64],
    w_resid: &'a [f64],
    weights: &'a [f64],
}

impl SplitCriterion for CausalCriterion<'_> {
    type Scan = VarianceScan;

    fn scan(&self, split_ids: &[u32]) -> Option<VarianceScan> {
        let pick = |v: &[f64]| -> Vec<f64> { split_ids.iter().map(|&i| v[i as usize]).collect() };
        let u = pick(self.u_resid);
        let r = pick(self.w_resid);
        let w = pick(self.weights);
        let rho = pseudo_outcomes(&u, &r, &w)?;
        // Gains are judged against the size of the uncancelled terms.
        let sw: f64 = w.iter().sum();
        let sww: f64 = w.iter().zip(&r).map(|(a, b)| a * b * b).sum();
        let scale: f64 = w
            .iter()
            .zip(&r)
            .zip(&u)
            .map(|((a, b), c)| a * (b * c * sw / sww).powi(2))
            .sum();
        Some(VarianceScan::with_scale(rho, w, scale))
    }
}

impl CsfModel {
    pub fn fit(ds: &SurvivalDataset, params: &CsfParams) -> Result<CsfModel> {
        params.validate(ds.p())?;
        let n = ds.n();
        let x = ds.x();
        let w = ds.w_f64();
        let trunc = ds.truncate(params.horizon)?;
        let n_complete = trunc.n_complete();
        if n_complete == 0 {
            return Err(CsfError::Fit("every unit is censored before the horizon".into()));
        }
        let mut diag = NuisanceDiagnostics::default();

        // Propensity.
        let (e_hat, propensity_forest) = match params.propensity {
            Propensity::Constant(c) => (vec![c; n], None),
            Propensity::Estimate => {
                let fp = ForestParams {
                    seed: stage_seed(params.seed, Stage::Propensity),
                    ..params.nuisance_forest.clone()
                };
                let forest = RegressionForest::fit(x, &w, &vec![1.0; n], &fp)?;
                let oob = forest.oob_predict(x)?;
                diag.oob_fallbacks += oob.fallback_count;
                diag.propensity_forest_fitted = true;
                (oob.values, Some(forest))
            }
        };
        diag.overlap_violations = e_hat.iter().filter(|&&e| !(0.01..=0.99).contains(&e)).count();
        diag.overlap_warning = diag.overlap_violations * 100 > n;
        if diag.overlap_warning {
            log::warn!(
                "{} units have estimated propensity outside [0.01, 0.99]",
                diag.overlap_violations
            );
        }

        // Censoring survival just before min(Y, h).
        let censored: Vec<bool> = ds.d().iter().map(|&e| !e).collect();
        let (g_raw, censoring_forest) = if !censored.iter().any(|&c| c) {
            (vec![1.0; n], None)
        } else {
            let grid = TimeGrid::from_event_times(ds.y(), &censored, params.horizon, params.grid_max_points)?;
            match params.censoring_model {
                CensoringModel::Km => {
                    let curve = censoring_km(ds.y(), ds.d(), &vec![1.0; n], &grid)?;
                    (trunc.u.iter().map(|&t| curve.value_before(t)).collect(), None)
                }
                CensoringModel::Forest => {
                    let xw = x.with_column(&w)?;
                    let fp = ForestParams {
                        seed: stage_seed(params.seed, Stage::Censoring),
                        ..params.censoring_forest.clone()
                    };
                    let forest = SurvivalForest::fit(&xw, ds.y(), &censored, grid, &fp)?;
                    let (curves, fallback) = forest.oob_predict_survival(&xw)?;
                    diag.oob_fallbacks += fallback;
                    let g = curves.iter().zip(&trunc.u).map(|(c, &t)| c.value_before(t)).collect();
                    (g, Some(forest))
                }
            }
        };
        diag.g_min_raw = g_raw
            .iter()
            .zip(&trunc.complete)
            .filter(|(_, &c)| c)
            .map(|(&g, _)| g)
            .fold(1.0, f64::min);
        diag.g_floored_count = g_raw
            .iter()
            .zip(&trunc.complete)
            .filter(|(&g, &c)| c && g < params.g_floor)
            .count();
        if diag.g_floored_count > 0 {
            log::info!("{} censoring weights floored at {}", diag.g_floored_count, params.g_floor);
        }
        let g_hat_at_u: Vec<f64> = g_raw.iter().map(|&g| g.max(params.g_floor)).collect();
        let ipcw = ipcw_weights(&trunc, &g_hat_at_u, params.g_floor)?;

        // Outcome mean on weighted complete cases.
        let u = make_outcome(ds.y(), ds.d(), &trunc, params.target);
        let fp = ForestParams {
            seed: stage_seed(params.seed, Stage::Outcome),
            ..params.nuisance_forest.clone()
        };
        let outcome_forest = RegressionForest::fit(x, &u, &ipcw, &fp)?;
        let m_oob = outcome_forest.oob_predict(x)?;
        diag.oob_fallbacks += m_oob.fallback_count;
        let m_hat = m_oob.values;

        let u_resid: Vec<f64> = u.iter().zip(&m_hat).map(|(a, b)| a - b).collect();
        let w_resid: Vec<f64> = w.iter().zip(&e_hat).map(|(a, b)| a - b).collect();

        // Final forest: unit sample weights on complete cases, IPCW inside
        // the split criterion and the local estimate.
        let kernel_weights: Vec<f64> = trunc.complete.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        let fp = ForestParams {
            seed: stage_seed(params.seed, Stage::Causal),
            ..params.forest.clone()
        };
        let criterion = CausalCriterion {
            u_resid: &u_resid,
            w_resid: &w_resid,
            weights: &ipcw,
        };
        let final_forest = Forest::grow(x, &kernel_weights, &criterion, &fp, LabelKind::Causal)?;

        let moments = |r: &[f64]| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() as f64 - 1.0);
            (mean, var.sqrt())
        };
        let cc: Vec<usize> = (0..n).filter(|&i| trunc.complete[i]).collect();
        let (u_resid_mean, u_resid_sd) = moments(&cc.iter().map(|&i| u_resid[i]).collect::<Vec<_>>());
        let (w_resid_mean, w_resid_sd) = moments(&w_resid);

        let mut model = CsfModel {
            version: MODEL_VERSION,
            score: SCORE_KIND.to_string(),
            rng: RNG_ID.to_string(),
            params: params.clone(),
            fingerprint: Fingerprint::of(ds),
            nuisances: NuisanceSet {
                e_hat,
                m_hat,
                g_hat_at_u,
                diagnostics: diag,
            },
            propensity_forest,
            censoring_forest,
            outcome_forest,
            final_forest,
            w,
            u,
            complete: trunc.complete.clone(),
            ipcw,
            u_resid,
            w_resid,
            tau_oob: Vec::new(),
            diagnostics: FitDiagnostics {
                n,
                p: ds.p(),
                n_complete,
                censoring_rate: ds.censoring_rate(),
                treated_fraction: ds.treated_fraction(),
                u_resid_mean,
                u_resid_sd,
                w_resid_mean,
                w_resid_sd,
                cate_oob_fallbacks: 0,
            },
            annotations: BTreeMap::new(),
        };
        let (tau, fallbacks) = model.oob_cate(x)?;
        model.tau_oob = tau;
        model.diagnostics.cate_oob_fallbacks = fallbacks;
        Ok(model)
    }

    fn local_effect(&self, x: &[f64], exclude: Option<usize>) -> Option<(f64, f64)> {
        self.final_forest
            .kernel_average(x, exclude, 2, |i, acc, a| {
                let wr = self.w_resid[i];
                acc[0] += a * self.ipcw[i] * wr * self.u_resid[i];
                acc[1] += a * self.ipcw[i] * wr * wr;
            })
            .map(|v| (v[0], v[1]))
    }

    fn ratio(row: usize, num: f64, den: f64) -> Result<f64> {
        if den.abs() < 1e-12 {
            return Err(CsfError::UndefinedPrediction {
                row,
                reason: format!("local treatment-residual variance {den:e} below 1e-12"),
            });
        }
        Ok(num / den)
    }

    /// CATE estimates at new points.
    pub fn predict_cate(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.fingerprint.p {
            return Err(CsfError::Fingerprint(format!(
                "data has {} covariates, model was trained on {}",
                x.ncols(),
                self.fingerprint.p
            )));
        }
        (0..x.nrows())
            .into_par_iter()
            .map(|r| {
                let (num, den) = self
                    .local_effect(x.row(r), None)
                    .ok_or_else(|| CsfError::Model("causal forest has no usable tree".into()))?;
                Self::ratio(r, num, den)
            })
            .collect()
    }

    /// OOB CATE estimates for the training matrix.
    pub fn oob_cate(&self, x: &Matrix) -> Result<(Vec<f64>, usize)> {
        if x.nrows() != self.fingerprint.n || x.ncols() != self.fingerprint.p {
            return Err(CsfError::Fingerprint("OOB prediction requires the training data".into()));
        }
        let out: Vec<(f64, bool)> = (0..x.nrows())
            .into_par_iter()
            .map(|i| {
                let (parts, fell_back) = match self.local_effect(x.row(i), Some(i)) {
                    Some(p) => (p, false),
                    None => (
                        self.local_effect(x.row(i), None)
                            .ok_or_else(|| CsfError::Model("causal forest has no usable tree".into()))?,
                        true,
                    ),
                };
                Ok((Self::ratio(i, parts.0, parts.1)?, fell_back))
            })
            .collect::<Result<_>>()?;
        let fallbacks = out.iter().filter(|o| o.1).count();
        if fallbacks > 0 {
            log::warn!("{fallbacks} units were in-bag for every causal tree");
        }
        Ok((out.into_iter().map(|o| o.0).collect(), fallbacks))
    }

    /// Cached OOB estimates, after checking the data matches training.
    pub fn predict_oob(&self, ds: &SurvivalDataset) -> Result<&[f64]> {
        self.check_training_data(ds)?;
        Ok(&self.tau_oob)
    }

    pub fn check_training_data(&self, ds: &SurvivalDataset) -> Result<()> {
        let fp = Fingerprint::of(ds);
        if fp != self.fingerprint {
            return Err(CsfError::Fingerprint(
                "OOB estimates exist only for the training data; this data does not match the model's training fingerprint"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.fingerprint.n
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| CsfError::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| CsfError::Model(e.to_string()))?;
        out.flush().map_err(|e| CsfError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CsfModel> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CsfError::io(path, e))?;
        let model: CsfModel =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| CsfError::Model(format!("{}: {e}", path.display())))?;
        if model.version != MODEL_VERSION {
            return Err(CsfError::Model(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self).map_err(|e| CsfError::Model(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}
