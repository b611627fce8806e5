//! Causal-impact estimation for multi-series daily count data around a
//! known-date intervention.
//!
//! The pipeline: ingest transaction and license records into a contiguous
//! daily panel ([`data`]); build log-scale autoregressive designs with
//! calendar effects and lagged license regressors ([`design`]); fit all
//! series jointly by feasible GLS ([`estimator`]); pick lag depths and time
//! effects by blocked cross-validation ([`selection`]); forecast the
//! counterfactual path after a cutoff with forward-bootstrap prediction
//! intervals ([`forecast`]); and turn observed-versus-predicted differences
//! into windowed effect estimates ([`effects`]). Classifier scoring
//! ([`classifier`]), longitudinal descriptives ([`descriptives`]), and a
//! synthetic data generator with known ground truth ([`synth`]) round out the
//! toolkit. [`report`] holds the file formats.

pub mod classifier;
pub mod data;
pub mod descriptives;
pub mod design;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod forecast;
pub mod linalg;
pub mod report;
pub mod selection;
pub mod synth;

pub use data::{
    aggregate_daily, inverse_log_offset, log_offset, DailyPanel, ExogenousFuture, FirearmType,
    IngestReport, LicenseKind, LicenseRecord, LogSeries, TransactionRecord, DEFAULT_LOG_OFFSET,
};
pub use design::{build_design, calendar_features, time_effect_grid, DesignMatrix, ModelSpec};
pub use effects::{
    breakeven_weeks, estimate_effects, holdout_validation, Breakeven, EffectEstimate, EffectWindow,
};
pub use error::{Error, Result};
pub use estimator::{fit_ols, fit_sur, fit_sur_designs, OlsFit, SurFit};
pub use forecast::{forecast_counterfactual, percentile_interval, ForecastResult};
pub use selection::{
    auto_select, compare_time_specs, cross_validate, select_lags, AutoSelection, CvReport,
    LagDimension, LagSelection,
};
pub use synth::{generate_panel, inject_intervention, SynthConfig, SynthTruth};
