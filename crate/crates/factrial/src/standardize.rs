//! Marginal standardization for the factorial contrasts: counterfactual
//! predictions, adjusted risks, risk difference / risk ratio, and delta-method
//! confidence intervals, plus the prespecified interaction analysis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::AnalysisConfig;
use crate::data::{ParticipantRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic, DesignMatrix, FittedGlm};
use crate::missing::complete_case_filter;
use crate::outcomes::{BinaryOutcome, DerivedOutcomes};
use crate::stats::{likelihood_ratio_test, TestResult};

/// The two randomized factors of the 2x2 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Alcohol,
    Adherence,
}

impl Factor {
    pub fn column_name(&self) -> &'static str {
        match self {
            Factor::Alcohol => "alcohol_int",
            Factor::Adherence => "adherence_int",
        }
    }

    pub fn other(&self) -> Factor {
        match self {
            Factor::Alcohol => Factor::Adherence,
            Factor::Adherence => Factor::Alcohol,
        }
    }

    pub fn indicator(&self, record: &ParticipantRecord) -> f64 {
        let f = record.factors();
        match self {
            Factor::Alcohol => f.alcohol_int as f64,
            Factor::Adherence => f.adherence_int as f64,
        }
    }
}

impl std::str::FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alcohol" | "alcohol_int" => Ok(Factor::Alcohol),
            "adherence" | "adherence_int" => Ok(Factor::Adherence),
            other => Err(Error::InvalidInput(format!(
                "unknown factor `{other}` (expected alcohol or adherence)"
            ))),
        }
    }
}

/// Standardized effect of one factor: adjusted risks under both counterfactual
/// assignments, their difference and ratio, and delta-method inference. Ratio
/// fields are absent when a zero risk makes them undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub factor: String,
    pub risk1: f64,
    pub risk0: f64,
    pub rd: f64,
    pub se_rd: f64,
    pub ci_rd: (f64, f64),
    pub p_rd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_log_rr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_rr: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_rr: Option<f64>,
    pub n: usize,
    pub model_columns: Vec<String>,
}

/// Predicted probabilities with the factor column forced to `level` for every
/// row; all other columns stay at observed values.
pub fn predict_counterfactual(
    model: &FittedGlm,
    x: &DesignMatrix,
    factor_column: &str,
    level: f64,
) -> Result<DVector<f64>> {
    if model.column_names != x.column_names {
        return Err(Error::InvalidInput(format!(
            "model columns {:?} do not match design columns {:?}",
            model.column_names, x.column_names
        )));
    }
    let forced = x.with_column_set(factor_column, level)?;
    let eta = &forced.matrix * &model.coefficients;
    Ok(eta.map(crate::glm::expit))
}

/// Adjusted risks are plain averages of the counterfactual probabilities.
pub fn adjusted_risks(pi1: &DVector<f64>, pi0: &DVector<f64>) -> (f64, f64) {
    (pi1.mean(), pi0.mean())
}

/// Risk difference and, when the reference risk is positive, risk ratio.
pub fn risk_difference_and_ratio(risk1: f64, risk0: f64) -> (f64, Option<f64>) {
    let rd = risk1 - risk0;
    let rr = if risk0 > 0.0 { Some(risk1 / risk0) } else { None };
    (rd, rr)
}

/// d(standardization average of expit)/d(beta) for one counterfactual arm.
/// When the model carries IPW weights the average is weighted, so the
/// gradient is too.
fn risk_gradient(x: &DMatrix<f64>, pi: &DVector<f64>, weights: Option<&DVector<f64>>) -> DVector<f64> {
    let deriv = pi.map(|p| p * (1.0 - p));
    match weights {
        Some(w) => (x.transpose() * deriv.component_mul(w)) / w.sum(),
        None => {
            let n = x.nrows() as f64;
            (x.transpose() * deriv) / n
        }
    }
}

/// Weighted standardization average of counterfactual probabilities.
fn weighted_mean(v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    v.component_mul(w).sum() / w.sum()
}

fn wald_p(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(estimate.abs() / se)).clamp(0.0, 1.0)
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn z_for(ci_level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - (1.0 - ci_level) / 2.0)
}

/// Delta-method inference for the standardized contrast between two
/// counterfactual designs under one fitted model. Both designs must carry the
/// model's exact columns and describe the same rows. A model fitted with
/// per-observation weights (IPW) standardizes to the weighted population:
/// the weights enter the risk averages and their gradients, not just the fit.
pub fn delta_from_designs(
    model: &FittedGlm,
    x1: &DesignMatrix,
    x0: &DesignMatrix,
    label: &str,
    ci_level: f64,
) -> Result<MarginalEstimate> {
    if !model.converged {
        return Err(Error::InvalidInput("delta method requires a converged model".into()));
    }
    for x in [x1, x0] {
        if model.column_names != x.column_names {
            return Err(Error::InvalidInput(format!(
                "model columns {:?} do not match design columns {:?}",
                model.column_names, x.column_names
            )));
        }
    }
    if x1.n_rows() != x0.n_rows() {
        return Err(Error::InvalidInput(format!(
            "counterfactual designs describe {} vs {} rows",
            x1.n_rows(),
            x0.n_rows()
        )));
    }
    let weights = model.weights_used.as_ref();
    if let Some(w) = weights {
        if w.len() != x1.n_rows() {
            return Err(Error::InvalidInput(format!(
                "{} fit weights do not cover {} design rows",
                w.len(),
                x1.n_rows()
            )));
        }
    }
    let pi1 = (&x1.matrix * &model.coefficients).map(crate::glm::expit);
    let pi0 = (&x0.matrix * &model.coefficients).map(crate::glm::expit);
    let (risk1, risk0) = match weights {
        Some(w) => (weighted_mean(&pi1, w), weighted_mean(&pi0, w)),
        None => adjusted_risks(&pi1, &pi0),
    };
    let (rd, rr) = risk_difference_and_ratio(risk1, risk0);

    let g1 = risk_gradient(&x1.matrix, &pi1, weights);
    let g0 = risk_gradient(&x0.matrix, &pi0, weights);

    let v = &model.covariance;
    let g_rd = &g1 - &g0;
    let var_rd = (g_rd.transpose() * v * &g_rd)[(0, 0)].max(0.0);
    let se_rd = var_rd.sqrt();
    let z = z_for(ci_level);
    let ci_rd = (rd - z * se_rd, rd + z * se_rd);
    let p_rd = wald_p(rd, se_rd);

    // Ratio inference on the log scale, defined only for positive risks.
    let (rr, se_log_rr, ci_rr, p_rr) = match rr {
        Some(ratio) if risk1 > 0.0 => {
            let h = &g1 / risk1 - &g0 / risk0;
            let var_log_rr = (h.transpose() * v * &h)[(0, 0)].max(0.0);
            let se = var_log_rr.sqrt();
            let log_rr = ratio.ln();
            let ci = ((log_rr - z * se).exp(), (log_rr + z * se).exp());
            (Some(ratio), Some(se), Some(ci), Some(wald_p(log_rr, se)))
        }
        Some(ratio) => (Some(ratio), None, None, None),
        None => (None, None, None, None),
    };

    Ok(MarginalEstimate {
        factor: label.to_string(),
        risk1,
        risk0,
        rd,
        se_rd,
        ci_rd,
        p_rd,
        rr,
        se_log_rr,
        ci_rr,
        p_rr,
        n: x1.n_rows(),
        model_columns: x1.column_names.clone(),
    })
}

/// Delta-method inference for the standardized contrast on `factor_column`.
pub fn delta_method_inference(
    model: &FittedGlm,
    x: &DesignMatrix,
    factor_column: &str,
    ci_level: f64,
) -> Result<MarginalEstimate> {
    let x1 = x.with_column_set(factor_column, 1.0)?;
    let x0 = x.with_column_set(factor_column, 0.0)?;
    delta_from_designs(model, &x1, &x0, factor_column, ci_level)
}

/// Order the sites appearing in `records`: configured order first, then
/// first-appearance for any site not configured. The first becomes the
/// reference level.
fn present_sites(records: &[&ParticipantRecord], configured: &[String]) -> Vec<String> {
    let mut present: Vec<String> = Vec::new();
    for r in records {
        if !present.contains(&r.site) {
            present.push(r.site.clone());
        }
    }
    if configured.is_empty() {
        return present;
    }
    let mut ordered: Vec<String> =
        configured.iter().filter(|s| present.contains(s)).cloned().collect();
    for s in present {
        if !ordered.contains(&s) {
            ordered.push(s);
        }
    }
    ordered
}

/// Design matrix for the factorial model on the given rows: intercept, focal
/// factor, optionally the other factor and their product, and the
/// randomization strata (gender, site dummies). A stratum column that is
/// constant across the rows carries no information and is omitted.
pub fn build_design(
    records: &[&ParticipantRecord],
    focal: Factor,
    include_other: bool,
    include_interaction: bool,
    site_order: &[String],
) -> Result<DesignMatrix> {
    let n = records.len();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    columns.push(("intercept".into(), vec![1.0; n]));
    columns.push((
        focal.column_name().into(),
        records.iter().map(|r| focal.indicator(r)).collect(),
    ));
    if include_other {
        let other = focal.other();
        columns.push((
            other.column_name().into(),
            records.iter().map(|r| other.indicator(r)).collect(),
        ));
    }
    if include_interaction {
        columns.push((
            "alcohol_int:adherence_int".into(),
            records
                .iter()
                .map(|r| Factor::Alcohol.indicator(r) * Factor::Adherence.indicator(r))
                .collect(),
        ));
    }

    columns.extend(strata_columns(records, site_order));

    let row_ids = records.iter().map(|r| r.participant_id.clone()).collect();
    DesignMatrix::from_columns(columns, row_ids)
}

/// Randomization-stratum adjustment columns: `gender_male` when both genders
/// are present, plus an indicator per non-reference site. A column constant
/// across the rows is omitted.
pub(crate) fn strata_columns(
    records: &[&ParticipantRecord],
    site_order: &[String],
) -> Vec<(String, Vec<f64>)> {
    let mut columns = Vec::new();
    if records.is_empty() {
        return columns;
    }
    let genders: Vec<f64> = records
        .iter()
        .map(|r| if r.gender == crate::data::Gender::Male { 1.0 } else { 0.0 })
        .collect();
    if genders.iter().any(|g| *g != genders[0]) {
        columns.push(("gender_male".to_string(), genders));
    }
    let sites = present_sites(records, site_order);
    for site in sites.iter().skip(1) {
        columns.push((
            format!("site_{site}"),
            records.iter().map(|r| if &r.site == site { 1.0 } else { 0.0 }).collect(),
        ));
    }
    columns
}

/// Fit the factorial logistic model on prepared rows and standardize the
/// focal contrast. `weights` are per-observation log-likelihood multipliers
/// (used for IPW); they carry through to the standardization averages.
pub fn marginal_analysis_rows(
    records: &[&ParticipantRecord],
    y: &[f64],
    weights: Option<&DVector<f64>>,
    focal: Factor,
    site_order: &[String],
    ci_level: f64,
) -> Result<MarginalEstimate> {
    let x = build_design(records, focal, true, false, site_order)?;
    let fit = fit_logistic(&x, y, weights)?;
    delta_method_inference(&fit, &x, focal.column_name(), ci_level)
}

pub fn site_order_for(dataset: &TrialDataset, config: &AnalysisConfig) -> Vec<String> {
    if config.sites.is_empty() {
        dataset.observed_sites()
    } else {
        config.sites.clone()
    }
}

/// Complete-case factorial analysis of a binary outcome.
pub fn factorial_analysis(
    dataset: &TrialDataset,
    outcomes: &std::collections::BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
    factor: Factor,
    config: &AnalysisConfig,
) -> Result<MarginalEstimate> {
    let rows = complete_case_filter(dataset, outcomes, outcome);
    marginal_analysis_rows(
        &rows.records,
        &rows.y,
        None,
        factor,
        &site_order_for(dataset, config),
        config.analysis.ci_level,
    )
}

/// One post-interaction two-arm contrast, restricted to the listed arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedEstimate {
    pub label: String,
    pub arms: [u8; 2],
    pub estimate: MarginalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub outcome: String,
    pub lrt: TestResult,
    pub significance_level: f64,
    pub significant: bool,
    pub note: String,
    pub stratified: Vec<StratifiedEstimate>,
    pub n: usize,
}

/// The four prespecified two-arm contrasts used when the interaction is
/// significant: each compares a single factor with the other held fixed.
const STRATIFIED_CONTRASTS: [(&str, Factor, [u8; 2]); 4] = [
    ("alcohol_arm2_vs_arm1", Factor::Alcohol, [1, 2]),
    ("alcohol_arm4_vs_arm3", Factor::Alcohol, [3, 4]),
    ("adherence_arm3_vs_arm1", Factor::Adherence, [1, 3]),
    ("adherence_arm4_vs_arm2", Factor::Adherence, [2, 4]),
];

/// Test the alcohol-by-adherence interaction by LRT; when significant at the
/// configured level, estimate the four prespecified two-arm contrasts
/// (strata adjustment retained).
pub fn interaction_analysis(
    dataset: &TrialDataset,
    outcomes: &std::collections::BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
    config: &AnalysisConfig,
) -> Result<InteractionReport> {
    let rows = complete_case_filter(dataset, outcomes, outcome);
    let site_order = site_order_for(dataset, config);

    let x_full = build_design(&rows.records, Factor::Alcohol, true, true, &site_order)?;
    let x_reduced = build_design(&rows.records, Factor::Alcohol, true, false, &site_order)?;
    let full = fit_logistic(&x_full, &rows.y, None)?;
    let reduced = fit_logistic(&x_reduced, &rows.y, None)?;
    let lrt = likelihood_ratio_test(&full, &reduced)?;

    let significant = lrt.p_value < config.analysis.significance_level;
    let mut stratified = Vec::new();
    if significant {
        for (label, factor, arms) in STRATIFIED_CONTRASTS {
            let sub = rows.restrict_to_arms(&arms);
            let x = build_design(&sub.records, factor, false, false, &site_order)?;
            let fit = fit_logistic(&x, &sub.y, None)?;
            let estimate = delta_method_inference(&fit, &x, factor.column_name(), config.analysis.ci_level)?;
            stratified.push(StratifiedEstimate { label: label.to_string(), arms, estimate });
        }
    }

    let note = if significant {
        "interaction significant: factor effects reported within the prespecified two-arm contrasts".to_string()
    } else {
        "no further action required".to_string()
    };

    Ok(InteractionReport {
        outcome: outcome.as_str().to_string(),
        lrt,
        significance_level: config.analysis.significance_level,
        significant,
        note,
        stratified,
        n: rows.records.len(),
    })
}
