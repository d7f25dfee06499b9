//! Analysis engine for a 2x2 factorial trial of economic-incentive
//! interventions: data ingestion and validation, outcome derivation,
//! regression models with marginal standardization, missing-data handling,
//! and a trial simulator for calibration studies.

pub mod config;
pub mod data;
pub mod describe;
pub mod error;
pub mod glm;
pub mod missing;
pub mod outcomes;
pub mod pipeline;
pub mod sim;
pub mod standardize;
pub mod stats;

pub use config::{AnalysisConfig, AnalysisSettings, OutcomeCutoffs, ReportFormat};
pub use data::{
    derive_factor_indicators, load_trial_data, validate, FactorIndicators, Gender, MemsEvent,
    ParticipantRecord, ScreenedRecord, TrialDataset, ValidationReport,
};
pub use error::{Error, Result};
pub use outcomes::{derive_all, derive_outcomes, BinaryOutcome, ContinuousOutcome, DerivedOutcomes};
pub use pipeline::{
    emit_report, expected_analysis_names, run_full, run_scoped, AnalysisPayload, AnalysisRecord,
    AnalysisReport, AnalysisStatus, RunScope, Section,
};
pub use standardize::{Factor, MarginalEstimate};
