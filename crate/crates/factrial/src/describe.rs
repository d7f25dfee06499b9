//! Descriptive statistics: baseline tables overall and by arm, per-timepoint
//! drinking-component proportions, and two-group baseline comparisons
//! (enrolled vs declined, complete vs missing).

use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::data::{Gender, ParticipantRecord, ScreenedRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::stats::{fisher_exact_2x2, mean, quantile, sample_sd, two_sample_t_test, TTestVariant, TestResult};

/// Summary of one variable within one group of participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariableSummary {
    Continuous {
        n: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        mean: Option<f64>,
        /// Missing when fewer than 2 observations.
        #[serde(skip_serializing_if = "Option::is_none")]
        sd: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p0: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p25: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p50: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p75: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p100: Option<f64>,
    },
    Categorical {
        n: usize,
        /// (level, count, proportion of non-missing)
        levels: Vec<(String, usize, f64)>,
    },
}

pub fn summarize_continuous(values: &[f64]) -> VariableSummary {
    let n = values.len();
    if n == 0 {
        return VariableSummary::Continuous {
            n,
            mean: None,
            sd: None,
            p0: None,
            p25: None,
            p50: None,
            p75: None,
            p100: None,
        };
    }
    VariableSummary::Continuous {
        n,
        mean: Some(mean(values)),
        sd: if n >= 2 { Some(sample_sd(values)) } else { None },
        p0: Some(quantile(values, 0.0)),
        p25: Some(quantile(values, 0.25)),
        p50: Some(quantile(values, 0.5)),
        p75: Some(quantile(values, 0.75)),
        p100: Some(quantile(values, 1.0)),
    }
}

fn summarize_categorical(values: &[String]) -> VariableSummary {
    let n = values.len();
    let mut order: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for v in values {
        match order.iter().position(|o| o == v) {
            Some(i) => counts[i] += 1,
            None => {
                order.push(v.clone());
                counts.push(1);
            }
        }
    }
    let levels = order
        .into_iter()
        .zip(counts)
        .map(|(level, count)| (level, count, if n == 0 { 0.0 } else { count as f64 / n as f64 }))
        .collect();
    VariableSummary::Categorical { n, levels }
}

fn is_categorical(variable: &str) -> bool {
    matches!(variable, "gender" | "site")
}

fn categorical_value(record: &ParticipantRecord, variable: &str) -> String {
    match variable {
        "gender" => record.gender.as_str().to_string(),
        "site" => record.site.clone(),
        other => unreachable!("categorical accessor called for {other}"),
    }
}

fn summarize_variable(records: &[&ParticipantRecord], variable: &str) -> Result<VariableSummary> {
    if is_categorical(variable) {
        let values: Vec<String> = records.iter().map(|r| categorical_value(r, variable)).collect();
        Ok(summarize_categorical(&values))
    } else {
        let mut values = Vec::new();
        for r in records {
            if let Some(v) = r.baseline_value(variable)? {
                values.push(v);
            }
        }
        Ok(summarize_continuous(&values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub variable: String,
    pub overall: VariableSummary,
    /// Summaries for arms 1 through 4, in order.
    pub by_arm: Vec<VariableSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub n_overall: usize,
    pub n_by_arm: [usize; 4],
    pub rows: Vec<DescriptiveRow>,
}

/// Baseline table, overall and by randomization arm. No between-arm tests by
/// design.
pub fn descriptive_table(dataset: &TrialDataset, variables: &[String]) -> Result<DescriptiveTable> {
    let all: Vec<&ParticipantRecord> = dataset.participants.iter().collect();
    let mut n_by_arm = [0usize; 4];
    let mut by_arm: Vec<Vec<&ParticipantRecord>> = vec![Vec::new(); 4];
    for p in &all {
        let slot = (p.arm - 1) as usize;
        n_by_arm[slot] += 1;
        by_arm[slot].push(p);
    }
    let mut rows = Vec::new();
    for variable in variables {
        let overall = summarize_variable(&all, variable)?;
        let mut arm_summaries = Vec::with_capacity(4);
        for arm_records in &by_arm {
            arm_summaries.push(summarize_variable(arm_records, variable)?);
        }
        rows.push(DescriptiveRow { variable: variable.clone(), overall, by_arm: arm_summaries });
    }
    Ok(DescriptiveTable { n_overall: all.len(), n_by_arm, rows })
}

/// Proportion of measured participants below the drinking cutoffs at one
/// visit, by arm. Purely descriptive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimepointRow {
    pub month: u8,
    pub arm: u8,
    pub n_measured_peth: usize,
    pub peth_below_threshold: f64,
    pub n_measured_auditc: usize,
    pub auditc_below_cutoff: f64,
}

pub fn timepoint_proportions(dataset: &TrialDataset, config: &AnalysisConfig) -> Vec<TimepointRow> {
    let cutoffs = &config.cutoffs;
    let mut rows = Vec::new();
    for month in [3u8, 6u8] {
        for arm in 1..=4u8 {
            let records: Vec<&ParticipantRecord> =
                dataset.participants.iter().filter(|p| p.arm == arm).collect();
            let peth: Vec<f64> = records.iter().filter_map(|p| p.peth_month(month)).collect();
            let peth_ok = peth.iter().filter(|v| **v < cutoffs.peth_threshold).count();
            let auditc: Vec<(u8, Gender)> = records
                .iter()
                .filter_map(|p| p.auditc_month(month).map(|a| (a, p.gender)))
                .collect();
            let auditc_ok = auditc
                .iter()
                .filter(|(a, g)| {
                    let cutoff = match g {
                        Gender::Female => cutoffs.auditc_female,
                        Gender::Male => cutoffs.auditc_male,
                    };
                    *a < cutoff
                })
                .count();
            rows.push(TimepointRow {
                month,
                arm,
                n_measured_peth: peth.len(),
                peth_below_threshold: if peth.is_empty() { 0.0 } else { peth_ok as f64 / peth.len() as f64 },
                n_measured_auditc: auditc.len(),
                auditc_below_cutoff: if auditc.is_empty() {
                    0.0
                } else {
                    auditc_ok as f64 / auditc.len() as f64
                },
            });
        }
    }
    rows
}

/// One variable compared between two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub column: String,
    pub a: VariableSummary,
    pub b: VariableSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparisonTable {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub rows: Vec<ComparisonRow>,
}

fn compare_continuous(column: &str, a: &[f64], b: &[f64]) -> ComparisonRow {
    let (test, note) = match two_sample_t_test(a, b, TTestVariant::Pooled) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ComparisonRow {
        column: column.to_string(),
        a: summarize_continuous(a),
        b: summarize_continuous(b),
        test,
        note,
    }
}

fn compare_binary(column: &str, a_yes: usize, a_n: usize, b_yes: usize, b_n: usize) -> ComparisonRow {
    let table = [[a_yes as u64, (a_n - a_yes) as u64], [b_yes as u64, (b_n - b_yes) as u64]];
    let summary = |yes: usize, n: usize| VariableSummary::Categorical {
        n,
        levels: vec![
            ("yes".into(), yes, if n == 0 { 0.0 } else { yes as f64 / n as f64 }),
            ("no".into(), n - yes, if n == 0 { 0.0 } else { (n - yes) as f64 / n as f64 }),
        ],
    };
    ComparisonRow {
        column: column.to_string(),
        a: summary(a_yes, a_n),
        b: summary(b_yes, b_n),
        test: Some(fisher_exact_2x2(table)),
        note: None,
    }
}

/// Compare two participant groups on baseline columns: pooled t-test for
/// continuous, Fisher's exact for gender, and per-level Fisher 2x2 tests for
/// site.
pub fn compare_participant_groups(
    label_a: &str,
    group_a: &[&ParticipantRecord],
    label_b: &str,
    group_b: &[&ParticipantRecord],
    columns: &[String],
) -> Result<GroupComparisonTable> {
    let mut rows = Vec::new();
    for column in columns {
        if column == "gender" {
            let males = |g: &[&ParticipantRecord]| g.iter().filter(|p| p.gender == Gender::Male).count();
            rows.push(compare_binary(column, males(group_a), group_a.len(), males(group_b), group_b.len()));
        } else if column == "site" {
            let mut levels: Vec<String> = Vec::new();
            for p in group_a.iter().chain(group_b.iter()) {
                if !levels.contains(&p.site) {
                    levels.push(p.site.clone());
                }
            }
            for level in &levels {
                let count = |g: &[&ParticipantRecord]| g.iter().filter(|p| &p.site == level).count();
                rows.push(compare_binary(
                    &format!("site[{level}]"),
                    count(group_a),
                    group_a.len(),
                    count(group_b),
                    group_b.len(),
                ));
            }
        } else {
            let collect = |g: &[&ParticipantRecord]| -> Result<Vec<f64>> {
                let mut vals = Vec::new();
                for p in g {
                    if let Some(v) = p.baseline_value(column)? {
                        vals.push(v);
                    }
                }
                Ok(vals)
            };
            rows.push(compare_continuous(column, &collect(group_a)?, &collect(group_b)?));
        }
    }
    Ok(GroupComparisonTable {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        n_a: group_a.len(),
        n_b: group_b.len(),
        rows,
    })
}

/// Enrolled-vs-declined comparison on the screening variables. Returns `None`
/// when no screening data was provided.
pub fn enrollment_comparison(dataset: &TrialDataset) -> Result<Option<GroupComparisonTable>> {
    let declined: &Vec<ScreenedRecord> = match &dataset.screened_declined {
        Some(s) => s,
        None => return Ok(None),
    };
    let enrolled: Vec<&ParticipantRecord> = dataset.participants.iter().collect();

    // Columns present in the screening data, in its canonical order.
    let mut columns: Vec<String> = Vec::new();
    if declined.iter().any(|s| s.gender.is_some()) {
        columns.push("gender".into());
    }
    for col in crate::data::SCREENING_COLUMNS {
        if declined.iter().any(|s| s.values.contains_key(col)) {
            columns.push(col.to_string());
        }
    }

    let mut rows = Vec::new();
    for column in &columns {
        if column == "gender" {
            let a_yes = enrolled.iter().filter(|p| p.gender == Gender::Male).count();
            let known: Vec<Gender> = declined.iter().filter_map(|s| s.gender).collect();
            let b_yes = known.iter().filter(|g| **g == Gender::Male).count();
            rows.push(compare_binary(column, a_yes, enrolled.len(), b_yes, known.len()));
        } else {
            let mut a_vals = Vec::new();
            for p in &enrolled {
                if let Some(v) = p.baseline_value(column)? {
                    a_vals.push(v);
                }
            }
            let b_vals: Vec<f64> =
                declined.iter().filter_map(|s| s.values.get(column.as_str()).copied().flatten()).collect();
            rows.push(compare_continuous(column, &a_vals, &b_vals));
        }
    }
    Ok(Some(GroupComparisonTable {
        label_a: "enrolled".into(),
        label_b: "declined".into(),
        n_a: enrolled.len(),
        n_b: declined.len(),
        rows,
    }))
}

/// Fail early when a requested descriptive variable does not exist.
pub fn check_variables(variables: &[String]) -> Result<()> {
    for v in variables {
        if !is_categorical(v) && !crate::data::BASELINE_COLUMNS.contains(&v.as_str()) {
            return Err(Error::UnknownColumn(v.clone()));
        }
    }
    Ok(())
}
