//! Model machinery behind the report pipeline: hepatotoxicity arm contrasts,
//! linear models with baseline adjustment, moderator analyses, and the
//! worst-case sensitivity refit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::AnalysisConfig;
use crate::data::{ParticipantRecord, TrialDataset};
use crate::describe::{compare_participant_groups, GroupComparisonTable};
use crate::error::{Error, Result};
use crate::glm::{fit_linear, fit_logistic, DesignMatrix, FittedGlm};
use crate::missing::{complete_case_filter, worst_case_impute_alcohol, AnalysisRows};
use crate::outcomes::{BinaryOutcome, ContinuousOutcome, CovidCohort, DerivedOutcomes};
use crate::standardize::{
    build_design, delta_from_designs, marginal_analysis_rows, strata_columns, Factor,
    MarginalEstimate,
};
use crate::stats::{jarque_bera, likelihood_ratio_test, TestResult};

/// One pairwise arm contrast; `estimate` is absent when that contrast failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmContrastRecord {
    pub label: String,
    pub arms: [u8; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<MarginalEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Hepatotoxicity safety analysis: arms 2-4 each contrasted against arm 1.
///
/// `model_columns` describes the shared four-arm model; it is empty when the
/// contrasts come from separate two-arm fits (each estimate then carries its
/// own columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HepatotoxReport {
    pub n_by_arm: [usize; 4],
    pub events_by_arm: [usize; 4],
    pub separate_fits: bool,
    pub model_columns: Vec<String>,
    pub contrasts: Vec<ArmContrastRecord>,
}

/// Design with an indicator per listed arm (reference: arm 1) plus the
/// randomization strata.
fn arm_design(
    records: &[&ParticipantRecord],
    arms: &[u8],
    site_order: &[String],
) -> Result<DesignMatrix> {
    let n = records.len();
    let mut columns: Vec<(String, Vec<f64>)> = vec![("intercept".to_string(), vec![1.0; n])];
    for &a in arms {
        columns.push((
            format!("arm_{a}"),
            records.iter().map(|r| if r.arm == a { 1.0 } else { 0.0 }).collect(),
        ));
    }
    columns.extend(strata_columns(records, site_order));
    let row_ids = records.iter().map(|r| r.participant_id.clone()).collect();
    DesignMatrix::from_columns(columns, row_ids)
}

/// Standardized arm-k-vs-arm-1 contrast from the shared four-arm model,
/// averaging over the covariate distribution of the two arms involved.
fn shared_contrast(
    design: &DesignMatrix,
    fit: &FittedGlm,
    records: &[&ParticipantRecord],
    k: u8,
    label: &str,
    ci_level: f64,
) -> Result<MarginalEstimate> {
    let idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.arm == 1 || r.arm == k)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("no participants in arms 1 or {k}")));
    }
    let mut x0 = design.select_rows(&idx)?;
    for a in 2u8..=4 {
        x0 = x0.with_column_set(&format!("arm_{a}"), 0.0)?;
    }
    let x1 = x0.with_column_set(&format!("arm_{k}"), 1.0)?;
    delta_from_designs(fit, &x1, &x0, label, ci_level)
}

/// Hepatotoxicity discontinuation contrasted pairwise against the control
/// arm. The default is one four-arm model; `hepatotox_separate_fits` switches
/// to three independent two-arm fits with per-contrast error capture.
pub(crate) fn hepatotox_analysis(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    config: &AnalysisConfig,
    site_order: &[String],
) -> Result<HepatotoxReport> {
    let rows = complete_case_filter(dataset, outcomes, BinaryOutcome::HepatotoxDiscontinuation);
    if rows.records.is_empty() {
        return Err(Error::InvalidInput("no participants to analyze".to_string()));
    }
    let mut n_by_arm = [0usize; 4];
    let mut events_by_arm = [0usize; 4];
    for (r, yi) in rows.records.iter().zip(&rows.y) {
        let a = (r.arm - 1) as usize;
        n_by_arm[a] += 1;
        events_by_arm[a] += (*yi > 0.5) as usize;
    }
    let ci_level = config.analysis.ci_level;

    if config.analysis.hepatotox_separate_fits {
        let mut contrasts = Vec::new();
        for k in 2u8..=4 {
            let label = format!("arm{k}_vs_arm1");
            let pair: Vec<usize> = rows
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.arm == 1 || r.arm == k)
                .map(|(i, _)| i)
                .collect();
            let result = (|| {
                let recs: Vec<&ParticipantRecord> = pair.iter().map(|&i| rows.records[i]).collect();
                let y: Vec<f64> = pair.iter().map(|&i| rows.y[i]).collect();
                let arm_col = format!("arm_{k}");
                let design = arm_design(&recs, &[k], site_order)?;
                let fit = fit_logistic(&design, &y, None)?;
                let x1 = design.with_column_set(&arm_col, 1.0)?;
                let x0 = design.with_column_set(&arm_col, 0.0)?;
                delta_from_designs(&fit, &x1, &x0, &label, ci_level)
            })();
            contrasts.push(match result {
                Ok(e) => ArmContrastRecord { label, arms: [1, k], estimate: Some(e), error: None },
                Err(e) => {
                    ArmContrastRecord { label, arms: [1, k], estimate: None, error: Some(e.to_string()) }
                }
            });
        }
        if contrasts.iter().all(|c| c.estimate.is_none()) {
            let detail: Vec<String> = contrasts
                .iter()
                .map(|c| format!("{}: {}", c.label, c.error.as_deref().unwrap_or("unknown")))
                .collect();
            return Err(Error::InvalidInput(format!(
                "every hepatotoxicity contrast failed ({})",
                detail.join("; ")
            )));
        }
        return Ok(HepatotoxReport {
            n_by_arm,
            events_by_arm,
            separate_fits: true,
            model_columns: Vec::new(),
            contrasts,
        });
    }

    let design = arm_design(&rows.records, &[2, 3, 4], site_order)?;
    let fit = fit_logistic(&design, &rows.y, None)?;
    let mut contrasts = Vec::new();
    for k in 2u8..=4 {
        let label = format!("arm{k}_vs_arm1");
        let result = shared_contrast(&design, &fit, &rows.records, k, &label, ci_level);
        contrasts.push(match result {
            Ok(e) => ArmContrastRecord { label, arms: [1, k], estimate: Some(e), error: None },
            Err(e) => {
                ArmContrastRecord { label, arms: [1, k], estimate: None, error: Some(e.to_string()) }
            }
        });
    }
    Ok(HepatotoxReport {
        n_by_arm,
        events_by_arm,
        separate_fits: false,
        model_columns: fit.column_names.clone(),
        contrasts,
    })
}

/// Factor effect on a continuous outcome from a linear model adjusted for
/// the other factor, the randomization strata, and optional baseline
/// covariates. Inference uses the t distribution on the residual degrees of
/// freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEstimate {
    pub outcome: String,
    pub factor: String,
    pub coefficient: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub p_value: f64,
    pub df: f64,
    pub n: usize,
    pub covariates: Vec<String>,
    pub model_columns: Vec<String>,
    pub residual_variance: f64,
    /// Jarque-Bera residual normality check; absent below 8 observations or
    /// when the residuals are degenerate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_normality: Option<TestResult>,
}

/// Fit the linear model for one continuous outcome. Rows must have the
/// outcome and every covariate observed. Returns the estimate and the count
/// of participants excluded for missingness.
pub(crate) fn linear_analysis(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    outcome: ContinuousOutcome,
    factor: Factor,
    covariates: &[String],
    config: &AnalysisConfig,
    site_order: &[String],
) -> Result<(LinearEstimate, usize)> {
    let mut recs: Vec<&ParticipantRecord> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut cov_rows: Vec<Vec<f64>> = Vec::new();
    let mut n_missing = 0usize;
    for p in &dataset.participants {
        let value = outcomes.get(&p.participant_id).and_then(|d| outcome.value(d));
        let mut covs = Vec::with_capacity(covariates.len());
        let mut complete = true;
        for c in covariates {
            match p.baseline_value(c)? {
                Some(v) => covs.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        match value {
            Some(v) if complete => {
                recs.push(p);
                y.push(v);
                cov_rows.push(covs);
            }
            _ => n_missing += 1,
        }
    }
    if recs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no analyzable rows for outcome {}",
            outcome.as_str()
        )));
    }

    let base = build_design(&recs, factor, true, false, site_order)?;
    let extra: Vec<(String, Vec<f64>)> = covariates
        .iter()
        .enumerate()
        .map(|(j, c)| (c.clone(), cov_rows.iter().map(|row| row[j]).collect()))
        .collect();
    let x = if extra.is_empty() { base } else { base.with_extra_columns(extra)? };
    let fit = fit_linear(&x, &y, None)?;

    let col = factor.column_name();
    let coefficient = fit.coefficient(col)?;
    let se = fit.standard_error(col)?;
    let n = recs.len();
    let df = (n - x.n_cols()) as f64;
    let (p_value, ci) = if se > 0.0 {
        let t_dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::InvalidInput(format!("t distribution with df {df}: {e}")))?;
        let p = (2.0 * t_dist.sf((coefficient / se).abs())).min(1.0);
        let q = t_dist.inverse_cdf(1.0 - (1.0 - config.analysis.ci_level) / 2.0);
        (p, (coefficient - q * se, coefficient + q * se))
    } else {
        // Exact fit: the factor column has no residual uncertainty.
        (if coefficient == 0.0 { 1.0 } else { 0.0 }, (coefficient, coefficient))
    };

    let fitted = &x.matrix * &fit.coefficients;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(yi, fi)| yi - fi).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let residual_normality = if n >= 8 { jarque_bera(&residuals).ok() } else { None };

    Ok((
        LinearEstimate {
            outcome: outcome.as_str().to_string(),
            factor: col.to_string(),
            coefficient,
            se,
            ci,
            p_value,
            df,
            n,
            covariates: covariates.to_vec(),
            model_columns: fit.column_names.clone(),
            residual_variance: rss / df,
            residual_normality,
        },
        n_missing,
    ))
}

/// How to partition participants for stratified reporting once a moderator
/// interaction is significant.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum StrataRule {
    Binary { label0: &'static str, label1: &'static str },
    Cutpoints(Vec<f64>),
    Unspecified,
}

/// Factor effect within one moderator stratum; `estimate` is absent when the
/// stratum fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorStratum {
    pub label: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<MarginalEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Moderator analysis: likelihood-ratio test of the factor-by-moderator
/// product term, with stratified effect estimates when it is significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeratorReport {
    pub moderator: String,
    pub outcome: String,
    pub factor: String,
    pub lrt: TestResult,
    pub significance_level: f64,
    pub significant: bool,
    pub n: usize,
    /// Complete-outcome rows dropped because the moderator value is missing.
    pub n_missing_moderator: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub strata: Vec<ModeratorStratum>,
}

fn stratum_assignments(
    values: &[f64],
    rule: &StrataRule,
) -> Option<Vec<(String, Vec<usize>)>> {
    match rule {
        StrataRule::Unspecified => None,
        StrataRule::Binary { label0, label1 } => {
            let mut zero = Vec::new();
            let mut one = Vec::new();
            for (i, v) in values.iter().enumerate() {
                if *v == 0.0 {
                    zero.push(i);
                } else {
                    one.push(i);
                }
            }
            Some(vec![(label0.to_string(), zero), (label1.to_string(), one)])
        }
        StrataRule::Cutpoints(cuts) => {
            let mut groups: Vec<(String, Vec<usize>)> = (0..=cuts.len())
                .map(|k| {
                    let label = if k == 0 {
                        format!("below_{}", cuts[0])
                    } else if k == cuts.len() {
                        format!("at_or_above_{}", cuts[k - 1])
                    } else {
                        format!("from_{}_below_{}", cuts[k - 1], cuts[k])
                    };
                    (label, Vec::new())
                })
                .collect();
            for (i, v) in values.iter().enumerate() {
                let k = cuts.iter().filter(|c| *v >= **c).count();
                groups[k].1.push(i);
            }
            Some(groups)
        }
    }
}

/// Test whether `moderator` modifies the factor effect on a binary outcome.
///
/// The reduced model adds the moderator main effect to the factorial model
/// (for gender it is already a stratum column); the full model adds the
/// factor-by-moderator product. When the 1-df LRT is significant, effects are
/// re-estimated within the strata given by `rule`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn moderation_analysis(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    outcome: BinaryOutcome,
    factor: Factor,
    moderator: &str,
    value_of: &dyn Fn(&ParticipantRecord) -> Option<f64>,
    rule: &StrataRule,
    config: &AnalysisConfig,
    site_order: &[String],
) -> Result<ModeratorReport> {
    let rows = complete_case_filter(dataset, outcomes, outcome);
    let mut recs: Vec<&ParticipantRecord> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, r) in rows.records.iter().enumerate() {
        if let Some(v) = value_of(r) {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "moderator `{moderator}` is non-finite for participant {}",
                    r.participant_id
                )));
            }
            recs.push(r);
            y.push(rows.y[i]);
            values.push(v);
        }
    }
    let n_missing_moderator = rows.records.len() - recs.len();
    if recs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "moderator `{moderator}`: no rows with both outcome and moderator observed"
        )));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::DegenerateModerator { column: moderator.to_string() });
    }

    let base = build_design(&recs, factor, true, false, site_order)?;
    let moderator_column =
        if moderator == "gender" { "gender_male".to_string() } else { moderator.to_string() };
    let reduced = if moderator == "gender" {
        base
    } else {
        base.with_extra_columns(vec![(moderator_column.clone(), values.clone())])?
    };
    let product: Vec<f64> =
        recs.iter().zip(&values).map(|(r, v)| factor.indicator(r) * v).collect();
    let product_name = format!("{}:{moderator_column}", factor.column_name());
    let full = reduced.with_extra_columns(vec![(product_name, product)])?;

    let reduced_fit = fit_logistic(&reduced, &y, None)?;
    let full_fit = fit_logistic(&full, &y, None)?;
    let lrt = likelihood_ratio_test(&full_fit, &reduced_fit)?;
    let significant = lrt.p_value < config.analysis.significance_level;

    let mut note = None;
    let mut strata = Vec::new();
    if significant {
        match stratum_assignments(&values, rule) {
            Some(groups) => {
                for (label, idx) in groups {
                    let s_recs: Vec<&ParticipantRecord> = idx.iter().map(|&i| recs[i]).collect();
                    let s_y: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                    let result = if s_recs.is_empty() {
                        Err(Error::InvalidInput("stratum has no rows".to_string()))
                    } else {
                        marginal_analysis_rows(
                            &s_recs,
                            &s_y,
                            None,
                            factor,
                            site_order,
                            config.analysis.ci_level,
                        )
                    };
                    strata.push(match result {
                        Ok(e) => ModeratorStratum {
                            label,
                            n: s_recs.len(),
                            estimate: Some(e),
                            error: None,
                        },
                        Err(e) => ModeratorStratum {
                            label,
                            n: s_recs.len(),
                            estimate: None,
                            error: Some(e.to_string()),
                        },
                    });
                }
            }
            None => {
                note = Some(
                    "interaction significant but no cutpoints are configured; stratified estimates not produced"
                        .to_string(),
                );
            }
        }
    }

    Ok(ModeratorReport {
        moderator: moderator.to_string(),
        outcome: outcome.as_str().to_string(),
        factor: factor.column_name().to_string(),
        lrt,
        significance_level: config.analysis.significance_level,
        significant,
        n: recs.len(),
        n_missing_moderator,
        note,
        strata,
    })
}

/// Worst-case sensitivity refit: missing composite outcomes become failures
/// for participants who missed a drinking visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    /// Outcomes switched from missing to failure by the imputation.
    pub n_imputed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_proportion_complete: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_proportion_imputed: Option<f64>,
    pub estimate: MarginalEstimate,
}

fn success_proportion(rows: &AnalysisRows) -> Option<f64> {
    if rows.y.is_empty() {
        None
    } else {
        Some(rows.y.iter().sum::<f64>() / rows.y.len() as f64)
    }
}

/// Returns the report and the number of outcomes still missing after
/// imputation (participants who attended both visits yet lack a composite).
pub(crate) fn worst_case_analysis(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    config: &AnalysisConfig,
    site_order: &[String],
) -> Result<(WorstCaseReport, usize)> {
    let imputed = worst_case_impute_alcohol(dataset, outcomes);
    let n_imputed = imputed
        .iter()
        .filter(|(id, d)| {
            d.no_heavy_drinking.is_some()
                && outcomes.get(id.as_str()).is_some_and(|o| o.no_heavy_drinking.is_none())
        })
        .count();
    let complete = complete_case_filter(dataset, outcomes, BinaryOutcome::NoHeavyDrinking);
    let after = complete_case_filter(dataset, &imputed, BinaryOutcome::NoHeavyDrinking);
    let estimate = marginal_analysis_rows(
        &after.records,
        &after.y,
        None,
        Factor::Alcohol,
        site_order,
        config.analysis.ci_level,
    )?;
    Ok((
        WorstCaseReport {
            n_imputed,
            success_proportion_complete: success_proportion(&complete),
            success_proportion_imputed: success_proportion(&after),
            estimate,
        },
        after.n_missing,
    ))
}

/// Baseline comparison of the pre- and post-lockdown scheduling cohorts.
pub(crate) fn covid_comparison(
    dataset: &TrialDataset,
    outcomes: &BTreeMap<String, DerivedOutcomes>,
    config: &AnalysisConfig,
) -> Result<GroupComparisonTable> {
    let mut pre: Vec<&ParticipantRecord> = Vec::new();
    let mut post: Vec<&ParticipantRecord> = Vec::new();
    for p in &dataset.participants {
        match outcomes.get(&p.participant_id).map(|d| d.covid_cohort) {
            Some(CovidCohort::PreLockdown) => pre.push(p),
            Some(CovidCohort::PostLockdown) => post.push(p),
            None => {}
        }
    }
    compare_participant_groups(
        "pre_lockdown",
        &pre,
        "post_lockdown",
        &post,
        &config.descriptive_variables,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::basic_record;
    use crate::data::Gender;
    use crate::outcomes::derive_all;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;

    fn dataset(participants: Vec<ParticipantRecord>) -> TrialDataset {
        TrialDataset { participants, mems_events: Vec::new(), screened_declined: None }
    }

    fn config() -> AnalysisConfig {
        AnalysisConfig::default()
    }

    /// 4 arms x 100, single site, all female; first `events[arm-1]`
    /// participants of each arm discontinue for grade 3 hepatotoxicity.
    fn hepatotox_dataset(events: [usize; 4]) -> TrialDataset {
        let mut participants = Vec::new();
        for arm in 1u8..=4 {
            for i in 0..100usize {
                let mut r = basic_record(&format!("a{arm}-{i:03}"), arm);
                if i < events[(arm - 1) as usize] {
                    r.discontinued_inh = true;
                    r.discontinuation_date = NaiveDate::from_ymd_opt(2019, 3, 1);
                    r.discontinuation_reason =
                        Some(crate::data::DiscontinuationReason::HepatotoxicityGrade3);
                }
                participants.push(r);
            }
        }
        dataset(participants)
    }

    #[test]
    fn hepatotox_shared_fit_recovers_cell_proportions() {
        let ds = hepatotox_dataset([5, 10, 15, 20]);
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let rep = hepatotox_analysis(&ds, &outcomes, &cfg, &ds.observed_sites()).unwrap();

        assert_eq!(rep.n_by_arm, [100; 4]);
        assert_eq!(rep.events_by_arm, [5, 10, 15, 20]);
        assert!(!rep.separate_fits);
        assert_eq!(rep.contrasts.len(), 3);
        // Intercept plus three arm indicators saturate the four cells, so the
        // standardized risks are the observed proportions.
        for (c, expected_rd) in rep.contrasts.iter().zip([0.05, 0.10, 0.15]) {
            let est = c.estimate.as_ref().expect("contrast should fit");
            assert_relative_eq!(est.risk0, 0.05, epsilon = 1e-8);
            assert_relative_eq!(est.rd, expected_rd, epsilon = 1e-8);
            assert_eq!(est.n, 200);
        }
        assert_eq!(rep.contrasts[0].arms, [1, 2]);
        assert_eq!(rep.contrasts[2].arms, [1, 4]);
    }

    #[test]
    fn hepatotox_separate_fits_match_shared_on_saturated_cells() {
        let ds = hepatotox_dataset([5, 10, 15, 20]);
        let mut cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let shared = hepatotox_analysis(&ds, &outcomes, &cfg, &ds.observed_sites()).unwrap();
        cfg.analysis.hepatotox_separate_fits = true;
        let separate = hepatotox_analysis(&ds, &outcomes, &cfg, &ds.observed_sites()).unwrap();

        assert!(separate.separate_fits);
        assert!(separate.model_columns.is_empty());
        for (a, b) in shared.contrasts.iter().zip(&separate.contrasts) {
            let (ea, eb) = (a.estimate.as_ref().unwrap(), b.estimate.as_ref().unwrap());
            assert_relative_eq!(ea.rd, eb.rd, epsilon = 1e-8);
        }
    }

    #[test]
    fn hepatotox_contrast_with_no_events_is_reported_not_fatal() {
        // Arm 2 has zero events: its contrast risks separation while the
        // others stay estimable.
        let ds = hepatotox_dataset([5, 0, 15, 20]);
        let mut cfg = config();
        cfg.analysis.hepatotox_separate_fits = true;
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let rep = hepatotox_analysis(&ds, &outcomes, &cfg, &ds.observed_sites()).unwrap();
        assert!(rep.contrasts[0].estimate.is_some() || rep.contrasts[0].error.is_some());
        assert!(rep.contrasts[1].estimate.is_some());
        assert!(rep.contrasts[2].estimate.is_some());
    }

    /// Records where the 6-month PEth tracks baseline PEth closely and the
    /// alcohol factor shifts it by a constant.
    fn ancova_dataset() -> TrialDataset {
        let mut participants = Vec::new();
        for i in 0..80usize {
            let arm = (i % 4 + 1) as u8;
            let mut r = basic_record(&format!("p{i:03}"), arm);
            let baseline = 40.0 + 3.0 * (i as f64);
            // Deterministic residual pattern, mean ~0, uncorrelated with arm.
            let wiggle = ((i % 7) as f64) - 3.0;
            let alcohol = matches!(arm, 2 | 4);
            r.peth[0] = Some(baseline);
            r.peth[2] = Some(0.9 * baseline - if alcohol { 12.0 } else { 0.0 } + wiggle);
            participants.push(r);
        }
        dataset(participants)
    }

    #[test]
    fn baseline_adjustment_shrinks_residual_variance() {
        let ds = ancova_dataset();
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let sites = ds.observed_sites();

        let (unadjusted, _) = linear_analysis(
            &ds,
            &outcomes,
            ContinuousOutcome::Peth6,
            Factor::Alcohol,
            &[],
            &cfg,
            &sites,
        )
        .unwrap();
        let (adjusted, _) = linear_analysis(
            &ds,
            &outcomes,
            ContinuousOutcome::Peth6,
            Factor::Alcohol,
            &["peth_0".to_string()],
            &cfg,
            &sites,
        )
        .unwrap();

        assert!(adjusted.residual_variance < unadjusted.residual_variance / 10.0);
        assert_relative_eq!(adjusted.coefficient, -12.0, epsilon = 1.5);
        assert!(adjusted.p_value < 0.05);
        assert_eq!(adjusted.covariates, vec!["peth_0".to_string()]);
        assert!(adjusted.model_columns.contains(&"peth_0".to_string()));
        assert_eq!(adjusted.n, 80);
    }

    #[test]
    fn linear_analysis_counts_missing_rows() {
        let mut ds = ancova_dataset();
        ds.participants[0].peth[2] = None;
        ds.participants[1].peth[0] = None;
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let (est, n_missing) = linear_analysis(
            &ds,
            &outcomes,
            ContinuousOutcome::Peth6,
            Factor::Alcohol,
            &["peth_0".to_string()],
            &cfg,
            &ds.observed_sites(),
        )
        .unwrap();
        assert_eq!(est.n, 78);
        assert_eq!(n_missing, 2);
    }

    /// 240 records, arms cycling within alternating-gender blocks of four, so
    /// gender and factor assignment stay independent. Success rates come from
    /// per-cell counters for exact proportions.
    fn gendered_dataset(success_rule: impl Fn(bool, bool, usize) -> bool) -> TrialDataset {
        let mut participants = Vec::new();
        let mut cell_counts = [0usize; 4];
        for i in 0..240usize {
            let arm = (i % 4 + 1) as u8;
            let male = (i / 4) % 2 == 0;
            let alcohol = matches!(arm, 2 | 4);
            let cell = (male as usize) * 2 + alcohol as usize;
            let c = cell_counts[cell];
            cell_counts[cell] += 1;
            let success = success_rule(male, alcohol, c);
            let mut r = basic_record(&format!("m{i:03}"), arm);
            r.gender = if male { Gender::Male } else { Gender::Female };
            if success {
                r.peth[1] = Some(10.0);
                r.peth[2] = Some(10.0);
                r.auditc[1] = Some(0);
                r.auditc[2] = Some(0);
            } else {
                r.peth[1] = Some(100.0);
                r.peth[2] = Some(100.0);
            }
            participants.push(r);
        }
        dataset(participants)
    }

    /// Alcohol effect large for men (4/5 vs 1/5) and absent for women (1/2
    /// either way). Counter rules use moduli that keep success balanced
    /// across the adherence arms interleaved within each cell: members of a
    /// cell alternate adherence levels, so stride-2 counter subsequences must
    /// cover every residue (odd modulus) or hit each rate evenly (mod 4 with
    /// a one-per-parity success set).
    fn moderated_dataset() -> TrialDataset {
        gendered_dataset(|male, alcohol, c| {
            if male {
                if alcohol {
                    c % 5 != 4
                } else {
                    c % 5 == 0
                }
            } else {
                c % 4 < 2
            }
        })
    }

    #[test]
    fn planted_gender_moderation_is_detected_and_stratified() {
        let ds = moderated_dataset();
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let rep = moderation_analysis(
            &ds,
            &outcomes,
            BinaryOutcome::NoHeavyDrinking,
            Factor::Alcohol,
            "gender",
            &|p| p.baseline_value("gender").ok().flatten(),
            &StrataRule::Binary { label0: "female", label1: "male" },
            &cfg,
            &ds.observed_sites(),
        )
        .unwrap();

        assert!(rep.significant, "planted interaction should be significant, p={}", rep.lrt.p_value);
        assert_eq!(rep.lrt.df, 1.0);
        assert_eq!(rep.n, 240);
        assert_eq!(rep.n_missing_moderator, 0);
        assert_eq!(rep.strata.len(), 2);
        let female = rep.strata[0].estimate.as_ref().expect("female stratum fits");
        let male = rep.strata[1].estimate.as_ref().expect("male stratum fits");
        assert!(male.rd > female.rd + 0.3, "male rd {} vs female rd {}", male.rd, female.rd);
        assert!(female.rd.abs() < 0.15);
    }

    #[test]
    fn constant_moderator_is_a_named_error() {
        let mut ds = moderated_dataset();
        for p in &mut ds.participants {
            p.gender = Gender::Female;
        }
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let err = moderation_analysis(
            &ds,
            &outcomes,
            BinaryOutcome::NoHeavyDrinking,
            Factor::Alcohol,
            "gender",
            &|p| p.baseline_value("gender").ok().flatten(),
            &StrataRule::Binary { label0: "female", label1: "male" },
            &cfg,
            &ds.observed_sites(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateModerator { ref column } if column == "gender"));
    }

    #[test]
    fn null_moderation_is_usually_not_significant() {
        // No planted interaction: women and men share the same effect
        // (4/5 under alcohol intervention, 1/5 under control).
        let ds = gendered_dataset(|_male, alcohol, c| {
            if alcohol {
                c % 5 != 4
            } else {
                c % 5 == 0
            }
        });
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let rep = moderation_analysis(
            &ds,
            &outcomes,
            BinaryOutcome::NoHeavyDrinking,
            Factor::Alcohol,
            "gender",
            &|p| p.baseline_value("gender").ok().flatten(),
            &StrataRule::Binary { label0: "female", label1: "male" },
            &cfg,
            &ds.observed_sites(),
        )
        .unwrap();
        assert!(!rep.significant, "identical effects flagged significant, p={}", rep.lrt.p_value);
        assert!(rep.strata.is_empty());
    }

    #[test]
    fn cutpoint_strata_cover_all_rows_with_stable_labels() {
        let values = vec![1.0, 4.9, 5.0, 7.2, 11.0, 2.0];
        let groups = stratum_assignments(&values, &StrataRule::Cutpoints(vec![5.0, 10.0])).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].0, "below_5");
        assert_eq!(groups[1].0, "from_5_below_10");
        assert_eq!(groups[2].0, "at_or_above_10");
        assert_eq!(groups[0].1, vec![0, 1, 5]);
        assert_eq!(groups[1].1, vec![2, 3]);
        assert_eq!(groups[2].1, vec![4]);
    }

    #[test]
    fn worst_case_imputes_only_visit_missers() {
        let mut ds = moderated_dataset();
        // Participant 0: missed both drinking visits, outcome unobservable.
        ds.participants[0].visit_attended = [false, false, true];
        ds.participants[0].peth[1] = None;
        ds.participants[0].peth[2] = None;
        ds.participants[0].auditc[1] = None;
        ds.participants[0].auditc[2] = None;
        // Participant 2: attended both visits but a component is missing with
        // the rest passing; stays missing even under worst case.
        ds.participants[2].peth[1] = Some(10.0);
        ds.participants[2].peth[2] = None;
        ds.participants[2].auditc[1] = Some(0);
        ds.participants[2].auditc[2] = Some(0);
        let cfg = config();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let (rep, still_missing) =
            worst_case_analysis(&ds, &outcomes, &cfg, &ds.observed_sites()).unwrap();
        assert_eq!(rep.n_imputed, 1);
        assert_eq!(still_missing, 1);
        assert_eq!(rep.estimate.n, 239);
        let complete = rep.success_proportion_complete.unwrap();
        let imputed = rep.success_proportion_imputed.unwrap();
        assert!(imputed < complete, "imputing failures must lower the success rate");
    }

    #[test]
    fn covid_comparison_splits_on_the_cutoff_date() {
        let mut ds = moderated_dataset();
        for (i, p) in ds.participants.iter_mut().enumerate() {
            p.scheduled_inh_completion_date = if i < 100 {
                NaiveDate::from_ymd_opt(2020, 3, 18).unwrap()
            } else if i < 150 {
                NaiveDate::from_ymd_opt(2020, 3, 19).unwrap()
            } else {
                NaiveDate::from_ymd_opt(2020, 6, 1).unwrap()
            };
        }
        // Plan defaults carry a populated descriptive-variable list.
        let cfg = AnalysisConfig::plan_defaults();
        let outcomes = derive_all(&ds, &cfg).unwrap();
        let table = covid_comparison(&ds, &outcomes, &cfg).unwrap();
        assert_eq!(table.label_a, "pre_lockdown");
        assert_eq!(table.n_a, 100);
        assert_eq!(table.n_b, 140);
        assert!(!table.rows.is_empty());
    }
}
