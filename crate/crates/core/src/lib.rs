//! Causal survival forests.
//!
//! Estimates conditional average treatment effects on right-censored
//! time-to-event outcomes (restricted mean survival time or survival
//! probability at a horizon) with honest, subsampled forests, and provides
//! doubly-robust downstream inference: average treatment effect, best
//! linear projection with HC3 standard errors, and rank-weighted average
//! treatment effects (TOC / AUTOC).
//!
//! The pipeline is split into modules that mirror the fitting stages:
//!
//! - [`dataset`]: ingestion, validation, truncation at the horizon, summaries.
//! - [`forest`]: generic honest forest with pluggable split criteria.
//! - [`survival`]: Kaplan–Meier curves, log-rank survival forests, RMST.
//! - [`csf`]: nuisance estimation, IPCW weights, the causal forest itself.
//! - [`inference`]: DR scores, ATE, BLP, TOC and AUTOC.

pub mod csf;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod inference;
pub mod matrix;
pub mod survival;

pub use csf::{CensoringModel, CsfModel, CsfParams, Propensity, Target};
pub use dataset::{CensoringCheck, ColumnSchema, Histogram, SurvivalDataset, TruncatedOutcome};
pub use error::{CsfError, Result};
pub use forest::{Forest, ForestParams, LabelKind};
pub use inference::{BlpResult, DrScores, RateResult, TocCurve};
pub use matrix::Matrix;
pub use survival::{StepFunction, SurvivalForest, TimeGrid};
