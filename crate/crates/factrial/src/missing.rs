//! Missing-data strategy: complete-case filtering, worst-case imputation of
//! the drinking outcome, complete-vs-missing comparison, and inverse
//! probability weighting.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::data::{ParticipantRecord, TrialDataset};
use crate::describe::GroupComparisonTable;
use crate::error::{Error, Result};
use crate::glm::{expit, fit_logistic, DesignMatrix};
use crate::outcomes::{BinaryOutcome, DerivedOutcomes};
use crate::standardize::{marginal_analysis_rows, Factor, MarginalEstimate};

/// Participants retained for one analysis, with the outcome coded 0/1.
#[derive(Debug, Clone)]
pub struct AnalysisRows<'a> {
    pub records: Vec<&'a ParticipantRecord>,
    pub y: Vec<f64>,
    pub n_total: usize,
    pub n_missing: usize,
}

impl<'a> AnalysisRows<'a> {
    pub fn missing_fraction(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_missing as f64 / self.n_total as f64
        }
    }

    pub fn restrict_to_arms(&self, arms: &[u8]) -> AnalysisRows<'a> {
        let mut records = Vec::new();
        let mut y = Vec::new();
        for (r, v) in self.records.iter().zip(&self.y) {
            if arms.contains(&r.arm) {
                records.push(*r);
                y.push(*v);
            }
        }
        AnalysisRows { records, y, n_total: self.n_total, n_missing: self.n_missing }
    }
}

/// Retain exactly the participants whose derived outcome is non-missing.
pub fn complete_case_filter<'a>(
    dataset: &'a TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
) -> AnalysisRows<'a> {
    let mut records = Vec::new();
    let mut y = Vec::new();
    let n_total = dataset.participants.len();
    for p in &dataset.participants {
        if let Some(v) = outcomes.get(&p.participant_id).and_then(|d| outcome.value(d)) {
            records.push(p);
            y.push(if v { 1.0 } else { 0.0 });
        }
    }
    let n_missing = n_total - records.len();
    AnalysisRows { records, y, n_total, n_missing }
}

/// Worst-case sensitivity imputation: a participant who missed the 3- and/or
/// 6-month visit and has no observed composite outcome is coded as drinking
/// heavily (outcome 0). Observed outcomes are never changed.
pub fn worst_case_impute_alcohol(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
) -> BTreeMap<String, DerivedOutcomes> {
    let mut imputed = outcomes.clone();
    for p in &dataset.participants {
        let missed_visit = !p.visit_attended_month(3) || !p.visit_attended_month(6);
        if let Some(d) = imputed.get_mut(&p.participant_id) {
            if d.no_heavy_drinking.is_none() && missed_visit {
                d.no_heavy_drinking = Some(false);
            }
        }
    }
    imputed
}

/// Baseline comparison of participants with complete versus missing outcome
/// data.
pub fn missingness_comparison(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
    covariates: &[String],
) -> Result<GroupComparisonTable> {
    let mut complete: Vec<&ParticipantRecord> = Vec::new();
    let mut missing: Vec<&ParticipantRecord> = Vec::new();
    for p in &dataset.participants {
        let observed = outcomes.get(&p.participant_id).and_then(|d| outcome.value(d)).is_some();
        if observed {
            complete.push(p);
        } else {
            missing.push(p);
        }
    }
    crate::describe::compare_participant_groups("complete", &complete, "missing", &missing, covariates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub n_truncated: usize,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwAnalysis {
    pub estimate: MarginalEstimate,
    pub weights: WeightSummary,
    pub missing_fraction: f64,
    /// Columns of the observation-probability model.
    pub missingness_model_columns: Vec<String>,
}

/// Inverse-probability-weighted factorial analysis: model P(outcome observed)
/// on the configured baseline covariates, weight observed rows by the inverse
/// fitted probability (floored), and refit the standardized contrast. The
/// weights apply to both the model fit and the standardization averages, so
/// the estimate targets the full randomized population rather than the
/// completers.
pub fn ipw_analysis(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
    factor: Factor,
    config: &AnalysisConfig,
) -> Result<IpwAnalysis> {
    let covariates = &config.analysis.ipw_covariates;
    if covariates.is_empty() {
        return Err(Error::IpwCovariatesMissing);
    }
    let rows = complete_case_filter(dataset, outcomes, outcome);
    let floor = config.analysis.weight_floor;
    let site_order = if config.sites.is_empty() { dataset.observed_sites() } else { config.sites.clone() };

    if rows.n_missing == 0 {
        // Nothing to reweight: unit weights, identical to complete case.
        let ones = DVector::from_element(rows.records.len(), 1.0);
        let estimate = marginal_analysis_rows(
            &rows.records,
            &rows.y,
            Some(&ones),
            factor,
            &site_order,
            config.analysis.ci_level,
        )?;
        return Ok(IpwAnalysis {
            estimate,
            weights: WeightSummary { min: 1.0, max: 1.0, n_truncated: 0, floor },
            missing_fraction: 0.0,
            missingness_model_columns: Vec::new(),
        });
    }

    // Observation model over all randomized participants.
    let n = dataset.participants.len();
    let mut columns: Vec<(String, Vec<f64>)> = vec![("intercept".into(), vec![1.0; n])];
    for cov in covariates {
        let mut col = Vec::with_capacity(n);
        for p in &dataset.participants {
            match p.baseline_value(cov)? {
                Some(v) => col.push(v),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "IPW covariate `{cov}` is missing for participant {}",
                        p.participant_id
                    )))
                }
            }
        }
        columns.push((cov.clone(), col));
    }
    let ids = dataset.participants.iter().map(|p| p.participant_id.clone()).collect();
    let design = DesignMatrix::from_columns(columns, ids)?;
    let observed_indicator: Vec<f64> = dataset
        .participants
        .iter()
        .map(|p| {
            let observed = outcomes.get(&p.participant_id).and_then(|d| outcome.value(d)).is_some();
            if observed {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let obs_model = fit_logistic(&design, &observed_indicator, None)?;

    // Weights for the observed rows, in analysis-row order.
    let eta = &design.matrix * &obs_model.coefficients;
    let mut prob_by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for (i, p) in dataset.participants.iter().enumerate() {
        prob_by_id.insert(p.participant_id.as_str(), expit(eta[i]));
    }
    let mut weights = Vec::with_capacity(rows.records.len());
    let mut n_truncated = 0usize;
    for r in &rows.records {
        let p_hat = prob_by_id[r.participant_id.as_str()];
        let bounded = if p_hat < floor {
            n_truncated += 1;
            floor
        } else {
            p_hat
        };
        weights.push(1.0 / bounded);
    }
    let wmin = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let wmax = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wv = DVector::from_vec(weights);

    let estimate = marginal_analysis_rows(
        &rows.records,
        &rows.y,
        Some(&wv),
        factor,
        &site_order,
        config.analysis.ci_level,
    )?;

    Ok(IpwAnalysis {
        estimate,
        weights: WeightSummary { min: wmin, max: wmax, n_truncated, floor },
        missing_fraction: rows.missing_fraction(),
        missingness_model_columns: obs_model.column_names,
    })
}
