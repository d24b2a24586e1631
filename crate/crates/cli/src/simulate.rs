//! Synthetic randomized trials with exponential event and censoring times
//! and a known effect on the restricted mean.
//!
//! Covariates are iid uniform on (0, 1). Control units have event rate
//! `baseline_rate`. A treated unit with covariates `x` has the exponential
//! rate whose restricted mean exceeds the control one by exactly `tau(x)`,
//! so every row's true effect is known in closed form.

use std::io::Write;
use std::path::Path;

use csf_core::{CensoringCheck, Matrix, SurvivalDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    Constant { tau: f64 },
    /// `low` when `x1 <= threshold`, `high` otherwise.
    Step { low: f64, high: f64, threshold: f64 },
    /// `intercept + slope * x1`.
    Linear { intercept: f64, slope: f64 },
}

impl Effect {
    pub fn at(&self, x1: f64) -> f64 {
        match *self {
            Effect::Constant { tau } => tau,
            Effect::Step { low, high, threshold } => {
                if x1 <= threshold {
                    low
                } else {
                    high
                }
            }
            Effect::Linear { intercept, slope } => intercept + slope * x1,
        }
    }

    /// Mean effect over `x1 ~ U(0, 1)`.
    pub fn population_mean(&self) -> f64 {
        match *self {
            Effect::Constant { tau } => tau,
            Effect::Step { low, high, threshold } => {
                let t = threshold.clamp(0.0, 1.0);
                low * t + high * (1.0 - t)
            }
            Effect::Linear { intercept, slope } => intercept + slope / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    None,
    /// Exponential censoring with this rate.
    Rate { rate: f64 },
    /// Exponential censoring whose rate is chosen so that this fraction of
    /// units is censored in the population.
    Fraction { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub p: usize,
    pub effect: Effect,
    pub baseline_rate: f64,
    pub censoring: Censoring,
    pub treated_fraction: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(n: usize, effect: Effect, horizon: f64, seed: u64) -> Self {
        SimulationSpec {
            n,
            p: 5,
            effect,
            baseline_rate: 0.01,
            censoring: Censoring::Fraction { fraction: 0.3 },
            treated_fraction: 0.5,
            horizon,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Core(csf_core::CsfError::Parameter(m)));
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate.is_finite()) {
            return bad(format!("baseline rate must be positive, got {}", self.baseline_rate));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            return bad(format!("treated fraction must lie in (0, 1), got {}", self.treated_fraction));
        }
        match self.censoring {
            Censoring::Rate { rate } if !(rate > 0.0 && rate.is_finite()) => {
                return bad(format!("censoring rate must be positive, got {rate}"));
            }
            Censoring::Fraction { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                return bad(format!("censored fraction must lie in (0, 1), got {fraction}"));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Restricted mean `E[min(T, h)]` of an exponential with this rate.
pub fn exp_rmst(rate: f64, h: f64) -> f64 {
    -(-rate * h).exp_m1() / rate
}

/// The exponential rate whose restricted mean at `h` equals `target`.
pub fn rate_for_rmst(target: f64, h: f64) -> Option<f64> {
    if !(target > 0.0 && target < h) {
        return None;
    }
    // exp_rmst is decreasing in the rate; bisect on log scale.
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if exp_rmst(mid.exp(), h) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}

/// Composite Simpson nodes and weights on [0, 1].
fn simpson(intervals: usize) -> Vec<(f64, f64)> {
    let m = intervals + intervals % 2;
    (0..=m)
        .map(|k| {
            let w = if k == 0 || k == m {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (k as f64 / m as f64, w / (3.0 * m as f64))
        })
        .collect()
}

struct Model {
    spec: SimulationSpec,
    control_rate: f64,
    /// Quadrature weights and treated rates over `x1`.
    nodes: Vec<(f64, f64)>,
}

impl Model {
    fn new(spec: &SimulationSpec) -> Result<Model> {
        spec.validate()?;
        let mut model = Model {
            spec: spec.clone(),
            control_rate: spec.baseline_rate,
            nodes: Vec::new(),
        };
        model.nodes = simpson(2000)
            .into_iter()
            .map(|(x1, w)| Ok((w, model.treated_rate(x1)?)))
            .collect::<Result<_>>()?;
        Ok(model)
    }

    fn treated_rate(&self, x1: f64) -> Result<f64> {
        let h = self.spec.horizon;
        let target = exp_rmst(self.control_rate, h) + self.spec.effect.at(x1);
        rate_for_rmst(target, h).ok_or_else(|| {
            CliError::Core(csf_core::CsfError::Parameter(format!(
                "effect {} at x1 = {x1} needs a treated restricted mean of {target}, outside (0, {h})",
                self.spec.effect.at(x1)
            )))
        })
    }

    /// Population probability of being censored for a censoring hazard.
    fn censored_fraction(&self, censor_rate: f64) -> f64 {
        let pt = self.spec.treated_fraction;
        let c = censor_rate;
        let control = c / (c + self.control_rate);
        let treated: f64 = self.nodes.iter().map(|&(w, l1)| w * c / (c + l1)).sum();
        (1.0 - pt) * control + pt * treated
    }

    fn censor_rate(&self) -> Result<Option<f64>> {
        match self.spec.censoring {
            Censoring::None => Ok(None),
            Censoring::Rate { rate } => Ok(Some(rate)),
            Censoring::Fraction { fraction } => {
                let (mut lo, mut hi) = (-40.0f64, 40.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.censored_fraction(mid.exp()) < fraction {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(Some((0.5 * (lo + hi)).exp()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub rmst0: f64,
    pub rmst1: f64,
    pub cate: f64,
    /// `P[T(0) > h]` and `P[T(1) > h]`.
    pub surv0: f64,
    pub surv1: f64,
}

impl TruthRow {
    pub fn cate_survival(&self) -> f64 {
        self.surv1 - self.surv0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub spec: SimulationSpec,
    pub censoring_hazard: Option<f64>,
    /// True restricted-mean effect averaged over the covariate distribution.
    pub ate_population: f64,
    /// True restricted-mean effect averaged over the drawn rows.
    pub ate_sample: f64,
    pub ate_survival_sample: f64,
    pub censoring_rate_expected: f64,
    pub censoring_rate_observed: f64,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: SurvivalDataset,
    pub truth: Vec<TruthRow>,
    pub summary: TruthSummary,
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    let model = Model::new(spec)?;
    let censor_rate = model.censor_rate()?;
    let censoring_rate_expected = match censor_rate {
        Some(c) => model.censored_fraction(c),
        None => 0.0,
    };
    let h = spec.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, p) = (spec.n, spec.p);
    let mut xs = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let unit_exp = Exp::new(1.0).expect("unit rate is valid");
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let l0 = model.control_rate;
        let l1 = model.treated_rate(row[0])?;
        let treated = rng.random_bool(spec.treated_fraction);
        let t = unit_exp.sample(&mut rng) / if treated { l1 } else { l0 };
        let c = match censor_rate {
            Some(rate) => unit_exp.sample(&mut rng) / rate,
            None => f64::INFINITY,
        };
        truth.push(TruthRow {
            rmst0: exp_rmst(l0, h),
            rmst1: exp_rmst(l1, h),
            cate: spec.effect.at(row[0]),
            surv0: (-l0 * h).exp(),
            surv1: (-l1 * h).exp(),
        });
        xs.extend(row);
        y.push(t.min(c));
        d.push(t <= c);
        w.push(treated);
    }
    let x = Matrix::from_row_major(n, p, xs)?;
    let observed = d.iter().filter(|&&e| !e).count() as f64 / n as f64;
    let dataset = SurvivalDataset::new(covariate_names(p), x, y, w, d, CensoringCheck::NotRequired)?;
    let summary = TruthSummary {
        spec: spec.clone(),
        censoring_hazard: censor_rate,
        ate_population: spec.effect.population_mean(),
        ate_sample: truth.iter().map(|t| t.cate).sum::<f64>() / n as f64,
        ate_survival_sample: truth.iter().map(TruthRow::cate_survival).sum::<f64>() / n as f64,
        censoring_rate_expected,
        censoring_rate_observed: observed,
    };
    Ok(Simulation { dataset, truth, summary })
}

/// Column names used for simulated files.
pub const TIME_COLUMN: &str = "time";
pub const TREATMENT_COLUMN: &str = "treatment";
pub const EVENT_COLUMN: &str = "event";

impl Simulation {
    pub fn write_data(&self, out: impl Write) -> Result<()> {
        let ds = &self.dataset;
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec![TIME_COLUMN.to_string(), TREATMENT_COLUMN.into(), EVENT_COLUMN.into()];
        header.extend(ds.names().iter().cloned());
        wtr.write_record(&header).map_err(csv_err)?;
        for i in 0..ds.n() {
            let mut rec = vec![
                ds.y()[i].to_string(),
                u8::from(ds.w()[i]).to_string(),
                u8::from(ds.d()[i]).to_string(),
            ];
            rec.extend(ds.x().row(i).iter().map(f64::to_string));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| CliError::io("<csv>", e))
    }

    pub fn write_truth(&self, out: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["row", "rmst0", "rmst1", "cate", "surv0", "surv1", "cate_survival"])
            .map_err(csv_err)?;
        for (i, t) in self.truth.iter().enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                t.rmst0.to_string(),
                t.rmst1.to_string(),
                t.cate.to_string(),
                t.surv0.to_string(),
                t.surv1.to_string(),
                t.cate_survival().to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| CliError::io("<csv>", e))
    }

    /// Writes `<stem>.csv`, `<stem>.truth.csv` and `<stem>.truth.json`
    /// next to `data_path`.
    pub fn write_files(&self, data_path: &Path) -> Result<[std::path::PathBuf; 3]> {
        let truth_csv = data_path.with_extension("truth.csv");
        let truth_json = data_path.with_extension("truth.json");
        let create = |p: &Path| std::fs::File::create(p).map_err(|e| CliError::io(p, e));
        self.write_data(std::io::BufWriter::new(create(data_path)?))?;
        self.write_truth(std::io::BufWriter::new(create(&truth_csv)?))?;
        let json = crate::output::canonical_json(&self.summary)?;
        std::fs::write(&truth_json, json + "\n").map_err(|e| CliError::io(&truth_json, e))?;
        Ok([data_path.to_path_buf(), truth_csv, truth_json])
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(csf_core::CsfError::Input(format!("csv write failed: {e}")))
}
