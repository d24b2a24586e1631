use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csf_core::csf::FitDiagnostics;
use csf_core::inference::{self, DrScores};
use csf_core::{
    CensoringCheck, CensoringModel, ColumnSchema, CsfError, CsfModel, CsfParams, ForestParams, Matrix, Propensity,
    SurvivalDataset, Target,
};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::fetch;
use crate::output::{self, canonical_json, Format};
use crate::simulate::{self, Censoring, Effect, SimulationSpec};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "csf", version, about = "Causal survival forests for right-censored outcomes")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "CSF_THREADS", global = true)]
    pub threads: Option<usize>,

    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and save it.
    Fit(FitArgs),
    /// CATE estimates for new rows, or OOB estimates for the training rows.
    Predict(PredictArgs),
    /// Doubly robust average treatment effect.
    Ate(AteArgs),
    /// Best linear projection of the CATE on covariates.
    Blp(BlpArgs),
    /// Rank-weighted average treatment effect (TOC and AUTOC).
    Rate(RateArgs),
    /// CATE summary, covariate means of the top group, outcome histogram.
    Report(ReportArgs),
    /// Draw a synthetic trial with known effects.
    Simulate(SimulateArgs),
    /// Download the JTPA data file.
    FetchJtpa(FetchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Jtpa,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Input CSV. Model-based commands default to the training file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Named column mapping.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Recorded-time column [default: time].
    #[arg(long)]
    pub outcome: Option<String>,
    /// Treatment column [default: treatment].
    #[arg(long)]
    pub treatment: Option<String>,
    /// Event-indicator column [default: event].
    #[arg(long)]
    pub event: Option<String>,
    /// Covariate columns [default: every other column].
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Analyze W' = 1 - W.
    #[arg(long)]
    pub relabel_treatment: bool,
    /// Accept data without any censored unit.
    #[arg(long)]
    pub no_censoring: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Rmst,
    SurvivalProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CensoringArg {
    Km,
    Forest,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Where to write the model.
    #[arg(long)]
    pub model: PathBuf,
    /// Truncation horizon h.
    #[arg(long)]
    pub horizon: f64,
    #[arg(long, value_enum, default_value = "rmst")]
    pub target: TargetArg,
    /// Propensity: `auto-mean` (treated fraction), `estimate` (forest) or a
    /// number in (0, 1).
    #[arg(long, default_value = "estimate")]
    pub w_hat: String,
    #[arg(long, value_enum, default_value = "forest")]
    pub censoring_model: CensoringArg,
    /// Lower bound on the censoring survival in the weights.
    #[arg(long, default_value_t = 0.05)]
    pub g_floor: f64,
    #[arg(long, default_value_t = 2000)]
    pub num_trees: usize,
    /// Trees in the propensity and outcome forests.
    #[arg(long, default_value_t = 500)]
    pub nuisance_trees: usize,
    /// Trees in the censoring forest.
    #[arg(long, default_value_t = 500)]
    pub censoring_trees: usize,
    #[arg(long, default_value_t = 5)]
    pub min_node_size: usize,
    #[arg(long, default_value_t = csf_core::survival::SURVIVAL_MIN_NODE_SIZE)]
    pub censoring_min_node_size: usize,
    /// Candidate features per split [default: min(ceil(sqrt(p) + 20), p)].
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub subsample_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub honesty_fraction: f64,
    #[arg(long, default_value_t = csf_core::survival::DEFAULT_MAX_GRID_POINTS)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArg {
    /// Fitted model file.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// OOB estimates for the training rows; the data must match the model.
    #[arg(long)]
    pub oob: bool,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct AteArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct BlpArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Projection covariates [default: all model covariates].
    #[arg(long, value_delimiter = ',')]
    pub on: Vec<String>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Priority rule: `cate` (OOB estimates), `constant`, or a covariate name.
    #[arg(long, default_value = "cate")]
    pub priority: String,
    #[arg(long, default_value_t = inference::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Full TOC curve as CSV.
    #[arg(long)]
    pub toc_csv: Option<PathBuf>,
    /// TOC plot with 95% bars.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Size of the top group by OOB CATE.
    #[arg(long, default_value_t = 0.2)]
    pub top_fraction: f64,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    #[arg(long)]
    pub histogram_svg: Option<PathBuf>,
    #[arg(long)]
    pub histogram_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffectArg {
    Constant,
    Step,
    Linear,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Output CSV; truth goes to `<stem>.truth.csv` and `<stem>.truth.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[arg(long, value_enum, default_value = "constant")]
    pub effect: EffectArg,
    /// Constant effect on the restricted mean.
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tau_low: f64,
    #[arg(long, default_value_t = 10.0)]
    pub tau_high: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    pub intercept: f64,
    #[arg(long, default_value_t = 10.0)]
    pub slope: f64,
    /// Control-arm exponential event rate.
    #[arg(long, default_value_t = 0.01)]
    pub baseline_rate: f64,
    /// Exponential censoring rate.
    #[arg(long, conflicts_with_all = ["censored_fraction", "no_censoring"])]
    pub censoring_rate: Option<f64>,
    /// Target censored share; the censoring rate is solved for.
    #[arg(long, conflicts_with = "no_censoring")]
    pub censored_fraction: Option<f64>,
    #[arg(long)]
    pub no_censoring: bool,
    #[arg(long, default_value_t = 0.5)]
    pub treated_fraction: f64,
    #[arg(long, default_value_t = 200.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FetchArgs {
    #[arg(long, default_value = "clean_dataset_JTPA.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = fetch::JTPA_URL)]
    pub url: String,
    /// Expected sha256 of the file; mismatches are rejected.
    #[arg(long)]
    pub sha256: Option<String>,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Fit(a) => run_fit(&a, stdout),
        Command::Predict(a) => run_predict(&a, stdout),
        Command::Ate(a) => run_ate(&a, stdout),
        Command::Blp(a) => run_blp(&a, stdout),
        Command::Rate(a) => run_rate(&a, stdout),
        Command::Report(a) => run_report(&a, stdout),
        Command::Simulate(a) => run_simulate(&a, stdout),
        Command::FetchJtpa(a) => run_fetch(&a, stdout),
    }
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
        .map_err(|e| CliError::io("<stdout>", e))
}

fn emit_json<T: Serialize>(stdout: &mut dyn Write, value: &T) -> Result<()> {
    emit(stdout, &(canonical_json(value)? + "\n"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn csv_header(path: &Path) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Core(CsfError::Input(format!("{}: {other:?}", path.display()))),
    })?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Core(CsfError::Input(format!("{}: {e}", path.display()))))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

mod keys {
    pub const DATA: &str = "data";
    pub const OUTCOME: &str = "outcome";
    pub const TREATMENT: &str = "treatment";
    pub const EVENT: &str = "event";
    pub const COVARIATES: &str = "covariates";
    pub const RELABEL: &str = "relabel_treatment";
    pub const NO_CENSORING: &str = "no_censoring";
}

impl DataArgs {
    fn has_schema_flags(&self) -> bool {
        self.preset.is_some()
            || self.outcome.is_some()
            || self.treatment.is_some()
            || self.event.is_some()
            || !self.covariates.is_empty()
    }

    fn schema(&self, path: &Path) -> Result<ColumnSchema> {
        if self.preset == Some(Preset::Jtpa) {
            return Ok(ColumnSchema::jtpa());
        }
        let outcome = self.outcome.clone().unwrap_or_else(|| simulate::TIME_COLUMN.into());
        let treatment = self.treatment.clone().unwrap_or_else(|| simulate::TREATMENT_COLUMN.into());
        let event = self.event.clone().unwrap_or_else(|| simulate::EVENT_COLUMN.into());
        let covariates = if self.covariates.is_empty() {
            csv_header(path)?
                .into_iter()
                .filter(|c| *c != outcome && *c != treatment && *c != event)
                .collect()
        } else {
            self.covariates.clone()
        };
        Ok(ColumnSchema {
            outcome,
            treatment,
            event,
            covariates,
        })
    }

    fn check(&self) -> CensoringCheck {
        if self.no_censoring {
            CensoringCheck::NotRequired
        } else {
            CensoringCheck::Required
        }
    }

    fn load(&self) -> Result<(PathBuf, ColumnSchema, SurvivalDataset)> {
        let path = self
            .data
            .clone()
            .ok_or_else(|| CliError::Usage("--data is required".into()))?;
        let schema = self.schema(&path)?;
        let mut ds = SurvivalDataset::load_csv(&path, &schema, self.check())?;
        if self.relabel_treatment {
            ds = ds.relabel_treatment();
        }
        Ok((path, schema, ds))
    }

    /// Data flags for a model-based command: explicit flags win, otherwise
    /// the training data recorded in the model is used.
    fn resolve(&self, model: &CsfModel) -> DataArgs {
        let ann = &model.annotations;
        let get = |k: &str| ann.get(k).cloned();
        let mut out = self.clone();
        if out.data.is_none() {
            out.data = get(keys::DATA).map(PathBuf::from);
            out.relabel_treatment |= get(keys::RELABEL).as_deref() == Some("true");
            out.no_censoring |= get(keys::NO_CENSORING).as_deref() == Some("true");
        }
        if !self.has_schema_flags() {
            out.outcome = get(keys::OUTCOME);
            out.treatment = get(keys::TREATMENT);
            out.event = get(keys::EVENT);
            out.covariates = get(keys::COVARIATES)
                .map(|c| c.split(',').map(str::to_string).collect())
                .unwrap_or_default();
        }
        out
    }
}

fn load_model(arg: &ModelArg) -> Result<CsfModel> {
    Ok(CsfModel::load(&arg.model)?)
}

/// The training data of `model`, verified against its fingerprint.
fn training_data(model: &CsfModel, data: &DataArgs) -> Result<SurvivalDataset> {
    let resolved = data.resolve(model);
    let (_, _, ds) = resolved.load()?;
    model.check_training_data(&ds)?;
    Ok(ds)
}

fn parse_w_hat(s: &str, ds: &SurvivalDataset) -> Result<Propensity> {
    match s {
        "auto-mean" => Ok(Propensity::Constant(ds.treated_fraction())),
        "estimate" => Ok(Propensity::Estimate),
        v => v
            .parse::<f64>()
            .map(Propensity::Constant)
            .map_err(|_| CliError::Usage(format!("--w-hat must be auto-mean, estimate or a number, got '{v}'"))),
    }
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: String,
    model_hash: String,
    horizon: f64,
    target: Target,
    seed: u64,
    propensity: Propensity,
    censoring_model: CensoringModel,
    diagnostics: &'a FitDiagnostics,
    g_min_raw: f64,
    g_floored_count: usize,
    overlap_violations: usize,
    overlap_warning: bool,
    nuisance_oob_fallbacks: usize,
}

pub fn run_fit(a: &FitArgs, stdout: &mut dyn Write) -> Result<()> {
    let (path, schema, ds) = a.data.load()?;
    let forest = ForestParams {
        num_trees: a.num_trees,
        subsample_fraction: a.subsample_fraction,
        honesty_fraction: a.honesty_fraction,
        mtry: a.mtry,
        min_node_size: a.min_node_size,
        seed: a.seed,
    };
    let params = CsfParams {
        horizon: a.horizon,
        target: match a.target {
            TargetArg::Rmst => Target::Rmst,
            TargetArg::SurvivalProbability => Target::SurvivalProbability,
        },
        propensity: parse_w_hat(&a.w_hat, &ds)?,
        censoring_model: match a.censoring_model {
            CensoringArg::Km => CensoringModel::Km,
            CensoringArg::Forest => CensoringModel::Forest,
        },
        g_floor: a.g_floor,
        grid_max_points: a.grid_points,
        nuisance_forest: ForestParams {
            num_trees: a.nuisance_trees,
            ..forest.clone()
        },
        censoring_forest: ForestParams {
            num_trees: a.censoring_trees,
            min_node_size: a.censoring_min_node_size,
            ..forest.clone()
        },
        forest,
        seed: a.seed,
    };
    let start = Instant::now();
    let mut model = CsfModel::fit(&ds, &params)?;
    log::info!("fit finished in {:.1}s", start.elapsed().as_secs_f64());
    let abs = std::fs::canonicalize(&path).unwrap_or(path);
    let ann = &mut model.annotations;
    ann.insert(keys::DATA.into(), abs.display().to_string());
    ann.insert(keys::OUTCOME.into(), schema.outcome.clone());
    ann.insert(keys::TREATMENT.into(), schema.treatment.clone());
    ann.insert(keys::EVENT.into(), schema.event.clone());
    ann.insert(keys::COVARIATES.into(), schema.covariates.join(","));
    ann.insert(keys::RELABEL.into(), a.data.relabel_treatment.to_string());
    ann.insert(keys::NO_CENSORING.into(), a.data.no_censoring.to_string());
    model.save(&a.model)?;

    let nd = &model.nuisances.diagnostics;
    let report = FitReport {
        model: a.model.display().to_string(),
        model_hash: model.content_hash()?,
        horizon: params.horizon,
        target: params.target,
        seed: params.seed,
        propensity: params.propensity,
        censoring_model: params.censoring_model,
        diagnostics: &model.diagnostics,
        g_min_raw: nd.g_min_raw,
        g_floored_count: nd.g_floored_count,
        overlap_violations: nd.overlap_violations,
        overlap_warning: nd.overlap_warning,
        nuisance_oob_fallbacks: nd.oob_fallbacks,
    };
    match a.format {
        Format::Json => emit_json(stdout, &report),
        Format::Table | Format::Csv => {
            let d = &model.diagnostics;
            let rows = [
                ("n", d.n.to_string()),
                ("p", d.p.to_string()),
                ("complete cases", d.n_complete.to_string()),
                ("censoring rate", format!("{:.3}", d.censoring_rate)),
                ("treated fraction", format!("{:.3}", d.treated_fraction)),
                ("floored weights", nd.g_floored_count.to_string()),
                ("overlap violations", nd.overlap_violations.to_string()),
                ("model", report.model.clone()),
                ("model hash", report.model_hash.clone()),
            ];
            let mut text = String::new();
            for (k, v) in rows {
                if a.format == Format::Csv {
                    text.push_str(&format!("{k},{v}\n"));
                } else {
                    text.push_str(&format!("{k:<20}{v}\n"));
                }
            }
            emit(stdout, &text)
        }
    }
}

/// Reads the named covariate columns from any CSV that contains them.
fn read_covariates(path: &Path, names: &[String]) -> Result<Matrix> {
    let header = csv_header(path)?;
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Core(CsfError::Schema(format!("covariate column not found: '{n}'"))))
        })
        .collect::<Result<_>>()?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Core(CsfError::Input(e.to_string())))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Core(CsfError::Input(e.to_string())))?;
        for (&i, name) in idx.iter().zip(names) {
            let cell = rec.get(i).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Core(CsfError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("'{cell}' is not a number"),
                })
            })?;
            if !v.is_finite() {
                return Err(CliError::Core(CsfError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("'{cell}' is not finite"),
                }));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Core(CsfError::Input(format!("{} has no data rows", path.display()))));
    }
    Ok(Matrix::from_row_major(rows, names.len(), data)?)
}

pub fn run_predict(a: &PredictArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let tau = if a.oob {
        training_data(&model, &a.data)?;
        model.tau_oob.clone()
    } else {
        let path = a
            .data
            .data
            .clone()
            .ok_or_else(|| CliError::Usage("--data is required unless --oob is given".into()))?;
        model.predict_cate(&read_covariates(&path, &model.fingerprint.names)?)?
    };
    let text = match a.format {
        Format::Csv => {
            let rows: Vec<f64> = (1..=tau.len()).map(|i| i as f64).collect();
            let mut buf = Vec::new();
            output::numeric_csv(&["row", "tau_hat"], &[&rows, &tau], &mut buf)?;
            String::from_utf8(buf).expect("csv output is utf-8")
        }
        Format::Json => canonical_json(&serde_json::json!({ "predictions": tau }))? + "\n",
        Format::Table => output::FiveNumber::of(&tau).table(),
    };
    match &a.out {
        Some(p) => write_file(p, &text),
        None => emit(stdout, &text),
    }
}

pub fn run_ate(a: &AteArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let est = inference::average_treatment_effect(&DrScores::from_model(&model)?)?;
    match a.format {
        Format::Json => emit_json(stdout, &est),
        Format::Table => emit(stdout, &output::ate_table(&est)),
        Format::Csv => emit(stdout, &format!("estimate,std_err\n{},{}\n", est.estimate, est.std_err)),
    }
}

fn select_columns(ds: &SurvivalDataset, names: &[String]) -> Result<Matrix> {
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            ds.names()
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Core(CsfError::Schema(format!("covariate column not found: '{n}'"))))
        })
        .collect::<Result<_>>()?;
    let data = (0..ds.n())
        .flat_map(|i| idx.iter().map(move |&j| ds.x().get(i, j)))
        .collect();
    Ok(Matrix::from_row_major(ds.n(), idx.len(), data)?)
}

pub fn run_blp(a: &BlpArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = training_data(&model, &a.data)?;
    let names = if a.on.is_empty() { ds.names().to_vec() } else { a.on.clone() };
    let covariates = select_columns(&ds, &names)?;
    let blp = inference::best_linear_projection(&DrScores::from_model(&model)?, &covariates, &names)?;
    match a.format {
        Format::Json => emit_json(stdout, &blp.coefficients),
        Format::Table => emit(stdout, &output::blp_table(&blp)),
        Format::Csv => output::blp_csv(&blp, stdout),
    }
}

fn priorities(model: &CsfModel, rule: &str, data: &DataArgs) -> Result<Vec<f64>> {
    match rule {
        "cate" => Ok(model.tau_oob.clone()),
        "constant" => Ok(vec![0.0; model.n()]),
        name => {
            let ds = training_data(model, data)?;
            Ok(select_columns(&ds, &[name.to_string()])?.column(0))
        }
    }
}

#[derive(Serialize)]
struct RateReport {
    autoc_estimate: f64,
    std_err: f64,
    ci95_half_width: f64,
    n_bootstrap: usize,
    seed: u64,
    priority: String,
    overall_ate: f64,
}

pub fn run_rate(a: &RateArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = priorities(&model, &a.priority, &a.data)?;
    let r = inference::rate(&DrScores::from_model(&model)?, &s, a.bootstrap, a.seed)?;
    if let Some(p) = &a.toc_csv {
        output::numeric_csv(&["q", "toc"], &[&r.toc.q_grid, &r.toc.toc_values], create_file(p)?)?;
    }
    if let Some(p) = &a.svg {
        let title = format!("TOC: By decreasing {}", if a.priority == "cate" { "CATE estimates" } else { &a.priority });
        write_file(p, &svg::toc_plot(&r.toc_bars, &title))?;
    }
    let report = RateReport {
        autoc_estimate: r.autoc_estimate,
        std_err: r.std_err,
        ci95_half_width: 1.96 * r.std_err,
        n_bootstrap: r.n_bootstrap,
        seed: r.seed,
        priority: a.priority.clone(),
        overall_ate: r.toc.overall_ate,
    };
    match a.format {
        Format::Json => emit_json(stdout, &report),
        Format::Table => emit(
            stdout,
            &format!("AUTOC: {:.2} +/- {:.2}\n", report.autoc_estimate, report.ci95_half_width),
        ),
        Format::Csv => emit(
            stdout,
            &format!(
                "autoc_estimate,std_err,n_bootstrap\n{},{},{}\n",
                report.autoc_estimate, report.std_err, report.n_bootstrap
            ),
        ),
    }
}

#[derive(Debug, Serialize)]
pub struct GroupMeans {
    pub group: String,
    pub size: usize,
    pub means: Vec<(String, f64)>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub cate_summary: output::FiveNumber,
    pub top_fraction: f64,
    pub cutoff: f64,
    pub groups: Vec<GroupMeans>,
}

/// Full-sample and top-group covariate means; the top group holds the
/// units whose OOB CATE is at least the `(1 - top_fraction)` quantile.
pub fn build_report(model: &CsfModel, ds: &SurvivalDataset, top_fraction: f64) -> Result<Report> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(CliError::Core(CsfError::Parameter(format!(
            "top fraction must lie in (0, 1], got {top_fraction}"
        ))));
    }
    let tau = &model.tau_oob;
    let mut sorted = tau.clone();
    sorted.sort_by(f64::total_cmp);
    let cutoff = output::quantile(&sorted, 1.0 - top_fraction);
    let mask: Vec<bool> = tau.iter().map(|&t| t >= cutoff).collect();
    let all = vec![true; ds.n()];
    let pct = (top_fraction * 100.0).round();
    Ok(Report {
        cate_summary: output::FiveNumber::of(tau),
        top_fraction,
        cutoff,
        groups: vec![
            GroupMeans {
                group: "full.sample".into(),
                size: ds.n(),
                means: ds.group_covariate_means(&all)?,
            },
            GroupMeans {
                group: format!("top.{pct}"),
                size: mask.iter().filter(|&&m| m).count(),
                means: ds.group_covariate_means(&mask)?,
            },
        ],
    })
}

pub fn run_report(a: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = training_data(&model, &a.data)?;
    let report = build_report(&model, &ds, a.top_fraction)?;
    if a.histogram_svg.is_some() || a.histogram_csv.is_some() {
        let h = ds.histogram(a.bins)?;
        if let Some(p) = &a.histogram_svg {
            write_file(p, &svg::histogram_plot(&h, Some(model.params.horizon), "Histogram of recorded times"))?;
        }
        if let Some(p) = &a.histogram_csv {
            let lo: Vec<f64> = h.bin_edges[..a.bins].to_vec();
            let hi: Vec<f64> = h.bin_edges[1..].to_vec();
            let ev: Vec<f64> = h.counts_event.iter().map(|&c| c as f64).collect();
            let ce: Vec<f64> = h.counts_censored.iter().map(|&c| c as f64).collect();
            output::numeric_csv(&["lower", "upper", "events", "censored"], &[&lo, &hi, &ev, &ce], create_file(p)?)?;
        }
    }
    match a.format {
        Format::Json => emit_json(stdout, &report),
        Format::Table | Format::Csv => {
            let names: Vec<&str> = report.groups[0].means.iter().map(|(n, _)| n.as_str()).collect();
            let text = if a.format == Format::Csv {
                let mut t = format!("group,{}\n", names.join(","));
                for g in &report.groups {
                    let vals: Vec<String> = g.means.iter().map(|(_, v)| v.to_string()).collect();
                    t.push_str(&format!("{},{}\n", g.group, vals.join(",")));
                }
                t
            } else {
                let rows: Vec<Vec<String>> = report
                    .groups
                    .iter()
                    .map(|g| g.means.iter().map(|(_, v)| format_mean(*v)).collect())
                    .collect();
                let labels: Vec<String> = report.groups.iter().map(|g| g.group.clone()).collect();
                format!(
                    "{}\n{}",
                    report.cate_summary.table(),
                    output::aligned(&names, &rows, Some(&labels))
                )
            };
            emit(stdout, &text)
        }
    }
}

fn format_mean(v: f64) -> String {
    if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub fn simulation_spec(a: &SimulateArgs) -> SimulationSpec {
    let effect = match a.effect {
        EffectArg::Constant => Effect::Constant { tau: a.tau },
        EffectArg::Step => Effect::Step {
            low: a.tau_low,
            high: a.tau_high,
            threshold: a.threshold,
        },
        EffectArg::Linear => Effect::Linear {
            intercept: a.intercept,
            slope: a.slope,
        },
    };
    let censoring = if a.no_censoring {
        Censoring::None
    } else if let Some(rate) = a.censoring_rate {
        Censoring::Rate { rate }
    } else {
        Censoring::Fraction {
            fraction: a.censored_fraction.unwrap_or(0.3),
        }
    };
    SimulationSpec {
        n: a.n,
        p: a.p,
        effect,
        baseline_rate: a.baseline_rate,
        censoring,
        treated_fraction: a.treated_fraction,
        horizon: a.horizon,
        seed: a.seed,
    }
}

pub fn run_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let sim = simulate::simulate(&simulation_spec(a))?;
    let files = sim.write_files(&a.out)?;
    let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    emit_json(stdout, &serde_json::json!({ "files": files, "truth": sim.summary }))
}

pub fn run_fetch(a: &FetchArgs, stdout: &mut dyn Write) -> Result<()> {
    let report = fetch::fetch(&a.url, &a.out, a.sha256.as_deref())?;
    if a.sha256.is_none() {
        log::warn!("no --sha256 pin given; record {} to pin this file", report.sha256);
    }
    emit_json(stdout, &report)
}
