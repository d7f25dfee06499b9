//! Report pipeline: runs every prespecified analysis in a fixed order,
//! captures per-analysis failures without aborting the run, and emits the
//! resulting report as JSON, markdown, or CSV tables.
//!
//! The set and order of analyses depend only on the configuration and the
//! requested scope, never on the data: an analysis that cannot run still
//! appears in the report as failed or skipped.

mod analyses;
mod render;

pub use analyses::{
    ArmContrastRecord, HepatotoxReport, LinearEstimate, ModeratorReport, ModeratorStratum,
    WorstCaseReport,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, ReportFormat};
use crate::data::{ParticipantRecord, TrialDataset};
use crate::describe::{
    descriptive_table, enrollment_comparison, timepoint_proportions, DescriptiveTable,
    GroupComparisonTable, TimepointRow,
};
use crate::error::{Error, Result};
use crate::missing::{complete_case_filter, ipw_analysis, missingness_comparison, IpwAnalysis};
use crate::outcomes::{derive_all, BinaryOutcome, ContinuousOutcome, CovidCohort, DerivedOutcomes};
use crate::standardize::{
    interaction_analysis, marginal_analysis_rows, site_order_for, Factor, InteractionReport,
    MarginalEstimate,
};
use analyses::StrataRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Descriptive,
    Primary,
    Secondary,
    Exploratory,
    Sensitivity,
}

impl Section {
    pub fn as_str(&self) -> &'static str {
        match self {
            Section::Descriptive => "descriptive",
            Section::Primary => "primary",
            Section::Secondary => "secondary",
            Section::Exploratory => "exploratory",
            Section::Sensitivity => "sensitivity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStatus {
    Ok,
    Failed,
    Skipped,
}

impl AnalysisStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnalysisStatus::Ok => "ok",
            AnalysisStatus::Failed => "failed",
            AnalysisStatus::Skipped => "skipped",
        }
    }
}

/// Result payload of one analysis. `NotProduced` marks failed or skipped
/// entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalysisPayload {
    NotProduced,
    Descriptive(DescriptiveTable),
    TimepointProportions { rows: Vec<TimepointRow> },
    GroupComparison(GroupComparisonTable),
    Marginal(MarginalEstimate),
    Interaction(InteractionReport),
    HepatotoxContrasts(HepatotoxReport),
    Linear(LinearEstimate),
    Moderation(ModeratorReport),
    Ipw(IpwAnalysis),
    WorstCase(WorstCaseReport),
}

/// One prespecified analysis: identity, population, status, and result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub name: String,
    pub section: Section,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
    pub population: String,
    pub status: AnalysisStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_used: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_missing: Option<usize>,
    pub result: AnalysisPayload,
}

/// Complete analysis report, serializable as the canonical JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub software_version: String,
    pub dataset_fingerprint: String,
    pub n_participants: usize,
    pub config_echo: AnalysisConfig,
    pub analyses: Vec<AnalysisRecord>,
}

impl AnalysisReport {
    pub fn failed_count(&self) -> usize {
        self.analyses.iter().filter(|a| a.status == AnalysisStatus::Failed).count()
    }

    pub fn analysis(&self, name: &str) -> Option<&AnalysisRecord> {
        self.analyses.iter().find(|a| a.name == name)
    }
}

/// Which slice of the prespecified analyses to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunScope {
    /// Descriptive tables only.
    Describe,
    /// Everything; sensitivity analyses run when their triggers fire.
    Full,
    /// Sensitivity analyses only, forced regardless of triggers.
    Sensitivity,
}

/// Analysis names for a scope, in report order. The report produced by
/// [`run_scoped`] contains exactly these names for the same configuration.
pub fn expected_analysis_names(config: &AnalysisConfig, scope: RunScope) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    if scope != RunScope::Sensitivity {
        names.extend(
            ["descriptive_baseline", "descriptive_timepoint_drinking", "enrollment_comparison"]
                .map(String::from),
        );
    }
    if scope == RunScope::Full {
        names.extend(
            [
                "primary_no_heavy_drinking_alcohol",
                "primary_no_heavy_drinking_interaction",
                "primary_inh_adherent_adherence",
                "primary_inh_adherent_interaction",
                "secondary_hepatotoxicity_contrasts",
                "secondary_vl_suppressed_6m_alcohol",
                "secondary_vl_suppressed_6m_adherence",
                "secondary_vl_suppressed_6m_interaction",
                "secondary_vl_suppressed_12m_alcohol",
                "secondary_vl_suppressed_12m_adherence",
                "secondary_vl_suppressed_12m_interaction",
                "secondary_active_tb_alcohol",
                "secondary_active_tb_adherence",
                "secondary_active_tb_interaction",
                "secondary_peth6_continuous_alcohol",
                "secondary_mems_proportion_adherence",
                "exploratory_drink_days_30_alcohol",
                "exploratory_heavy_days_14_alcohol",
                "exploratory_covid_cohort_comparison",
                "exploratory_covid_modification_no_heavy_drinking_alcohol",
                "exploratory_covid_modification_inh_adherent_adherence",
            ]
            .map(String::from),
        );
        for spec in &config.moderators {
            names.push(format!("exploratory_moderator_{}_no_heavy_drinking_alcohol", spec.column));
            names.push(format!("exploratory_moderator_{}_inh_adherent_adherence", spec.column));
        }
    }
    if scope != RunScope::Describe {
        names.extend(
            [
                "sensitivity_missingness_comparison_no_heavy_drinking",
                "sensitivity_worst_case_no_heavy_drinking",
                "sensitivity_ipw_no_heavy_drinking_alcohol",
            ]
            .map(String::from),
        );
    }
    names
}

/// Record under construction: identity fields first, then one terminal call.
struct Slot {
    name: String,
    section: Section,
    outcome: Option<String>,
    factor: Option<String>,
    population: String,
    n_used: Option<usize>,
    n_missing: Option<usize>,
    note: Option<String>,
}

impl Slot {
    fn new(name: &str, section: Section) -> Self {
        Slot {
            name: name.to_string(),
            section,
            outcome: None,
            factor: None,
            population: "complete_case".to_string(),
            n_used: None,
            n_missing: None,
            note: None,
        }
    }

    fn outcome(mut self, outcome: &str) -> Self {
        self.outcome = Some(outcome.to_string());
        self
    }

    fn factor(mut self, factor: &str) -> Self {
        self.factor = Some(factor.to_string());
        self
    }

    fn population(mut self, population: &str) -> Self {
        self.population = population.to_string();
        self
    }

    fn n_used(mut self, n: usize) -> Self {
        self.n_used = Some(n);
        self
    }

    fn n_missing(mut self, n: usize) -> Self {
        self.n_missing = Some(n);
        self
    }

    fn finish(self, status: AnalysisStatus, error: Option<String>, result: AnalysisPayload) -> AnalysisRecord {
        AnalysisRecord {
            name: self.name,
            section: self.section,
            outcome: self.outcome,
            factor: self.factor,
            population: self.population,
            status,
            error,
            note: self.note,
            n_used: self.n_used,
            n_missing: self.n_missing,
            result,
        }
    }

    fn ok(self, result: AnalysisPayload) -> AnalysisRecord {
        self.finish(AnalysisStatus::Ok, None, result)
    }

    fn failed(self, err: &Error) -> AnalysisRecord {
        self.finish(AnalysisStatus::Failed, Some(err.to_string()), AnalysisPayload::NotProduced)
    }

    fn skipped(mut self, note: &str) -> AnalysisRecord {
        self.note = Some(note.to_string());
        self.finish(AnalysisStatus::Skipped, None, AnalysisPayload::NotProduced)
    }
}

struct Ctx<'a> {
    dataset: &'a TrialDataset,
    outcomes: &'a BTreeMap<String, DerivedOutcomes>,
    config: &'a AnalysisConfig,
    site_order: Vec<String>,
}

impl Ctx<'_> {
    fn descriptive_baseline(&self) -> AnalysisRecord {
        let slot = Slot::new("descriptive_baseline", Section::Descriptive)
            .population("all_randomized")
            .n_used(self.dataset.participants.len());
        match descriptive_table(self.dataset, &self.config.descriptive_variables) {
            Ok(t) => slot.ok(AnalysisPayload::Descriptive(t)),
            Err(e) => slot.failed(&e),
        }
    }

    fn timepoint(&self) -> AnalysisRecord {
        let rows = timepoint_proportions(self.dataset, self.config);
        Slot::new("descriptive_timepoint_drinking", Section::Descriptive)
            .population("all_randomized")
            .n_used(self.dataset.participants.len())
            .ok(AnalysisPayload::TimepointProportions { rows })
    }

    fn enrollment(&self) -> AnalysisRecord {
        let slot = Slot::new("enrollment_comparison", Section::Descriptive).population("screened");
        match enrollment_comparison(self.dataset) {
            Ok(Some(t)) => {
                let n = t.n_a + t.n_b;
                slot.n_used(n).ok(AnalysisPayload::GroupComparison(t))
            }
            Ok(None) => slot.skipped("no screening records provided"),
            Err(e) => slot.failed(&e),
        }
    }

    fn binary_marginal(
        &self,
        name: &str,
        section: Section,
        outcome: BinaryOutcome,
        factor: Factor,
    ) -> AnalysisRecord {
        let rows = complete_case_filter(self.dataset, self.outcomes, outcome);
        let slot = Slot::new(name, section)
            .outcome(outcome.as_str())
            .factor(factor.column_name())
            .n_used(rows.records.len())
            .n_missing(rows.n_missing);
        match marginal_analysis_rows(
            &rows.records,
            &rows.y,
            None,
            factor,
            &self.site_order,
            self.config.analysis.ci_level,
        ) {
            Ok(est) => slot.ok(AnalysisPayload::Marginal(est)),
            Err(e) => slot.failed(&e),
        }
    }

    fn interaction(&self, name: &str, section: Section, outcome: BinaryOutcome) -> AnalysisRecord {
        let n_missing = complete_case_filter(self.dataset, self.outcomes, outcome).n_missing;
        let slot = Slot::new(name, section)
            .outcome(outcome.as_str())
            .factor("alcohol_int:adherence_int")
            .n_missing(n_missing);
        match interaction_analysis(self.dataset, self.outcomes, outcome, self.config) {
            Ok(rep) => {
                let n = rep.n;
                slot.n_used(n).ok(AnalysisPayload::Interaction(rep))
            }
            Err(e) => slot.failed(&e),
        }
    }

    fn hepatotox(&self) -> AnalysisRecord {
        let slot = Slot::new("secondary_hepatotoxicity_contrasts", Section::Secondary)
            .outcome(BinaryOutcome::HepatotoxDiscontinuation.as_str())
            .population("all_randomized");
        match analyses::hepatotox_analysis(self.dataset, self.outcomes, self.config, &self.site_order)
        {
            Ok(rep) => {
                let n = rep.n_by_arm.iter().sum();
                slot.n_used(n).n_missing(0).ok(AnalysisPayload::HepatotoxContrasts(rep))
            }
            Err(e) => slot.failed(&e),
        }
    }

    /// Baseline drinking covariates for alcohol-related continuous outcomes;
    /// the outcome's own column is excluded to avoid self-adjustment.
    fn ancova_for(&self, outcome: ContinuousOutcome) -> Vec<String> {
        match outcome {
            ContinuousOutcome::MemsProportion => Vec::new(),
            _ => self
                .config
                .analysis
                .ancova_covariates
                .iter()
                .filter(|c| c.as_str() != outcome.as_str())
                .cloned()
                .collect(),
        }
    }

    fn linear(
        &self,
        name: &str,
        section: Section,
        outcome: ContinuousOutcome,
        factor: Factor,
    ) -> AnalysisRecord {
        let covariates = self.ancova_for(outcome);
        let slot =
            Slot::new(name, section).outcome(outcome.as_str()).factor(factor.column_name());
        match analyses::linear_analysis(
            self.dataset,
            self.outcomes,
            outcome,
            factor,
            &covariates,
            self.config,
            &self.site_order,
        ) {
            Ok((est, n_missing)) => {
                let n = est.n;
                slot.n_used(n).n_missing(n_missing).ok(AnalysisPayload::Linear(est))
            }
            Err(e) => slot.failed(&e),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn moderation(
        &self,
        name: &str,
        section: Section,
        outcome: BinaryOutcome,
        factor: Factor,
        moderator: &str,
        value_of: &dyn Fn(&ParticipantRecord) -> Option<f64>,
        rule: &StrataRule,
    ) -> AnalysisRecord {
        let slot =
            Slot::new(name, section).outcome(outcome.as_str()).factor(factor.column_name());
        match analyses::moderation_analysis(
            self.dataset,
            self.outcomes,
            outcome,
            factor,
            moderator,
            value_of,
            rule,
            self.config,
            &self.site_order,
        ) {
            Ok(rep) => {
                let n = rep.n;
                slot.n_used(n).ok(AnalysisPayload::Moderation(rep))
            }
            Err(e) => slot.failed(&e),
        }
    }

    fn covid_comparison(&self) -> AnalysisRecord {
        let slot = Slot::new("exploratory_covid_cohort_comparison", Section::Exploratory)
            .population("all_randomized");
        match analyses::covid_comparison(self.dataset, self.outcomes, self.config) {
            Ok(t) => {
                let n = t.n_a + t.n_b;
                slot.n_used(n).ok(AnalysisPayload::GroupComparison(t))
            }
            Err(e) => slot.failed(&e),
        }
    }

    /// The three missing-data sensitivity analyses for the composite drinking
    /// outcome. In a full run the comparison and worst-case refit trigger on
    /// any missingness and IPW on the configured threshold; `forced` runs all
    /// three regardless.
    fn sensitivity_records(&self, forced: bool, out: &mut Vec<AnalysisRecord>) {
        let outcome = BinaryOutcome::NoHeavyDrinking;
        let rows = complete_case_filter(self.dataset, self.outcomes, outcome);
        let n_missing = rows.n_missing;
        let frac = rows.missing_fraction();

        let slot = Slot::new("sensitivity_missingness_comparison_no_heavy_drinking", Section::Sensitivity)
            .outcome(outcome.as_str())
            .population("all_randomized")
            .n_missing(n_missing);
        out.push(if n_missing == 0 && !forced {
            slot.skipped("no participant is missing the composite outcome")
        } else {
            match missingness_comparison(
                self.dataset,
                self.outcomes,
                outcome,
                &self.config.descriptive_variables,
            ) {
                Ok(t) => {
                    let n = t.n_a + t.n_b;
                    slot.n_used(n).ok(AnalysisPayload::GroupComparison(t))
                }
                Err(e) => slot.failed(&e),
            }
        });

        let slot = Slot::new("sensitivity_worst_case_no_heavy_drinking", Section::Sensitivity)
            .outcome(outcome.as_str())
            .factor(Factor::Alcohol.column_name())
            .population("worst_case_imputed");
        out.push(if n_missing == 0 && !forced {
            slot.skipped("no participant is missing the composite outcome")
        } else {
            match analyses::worst_case_analysis(self.dataset, self.outcomes, self.config, &self.site_order)
            {
                Ok((rep, still_missing)) => {
                    let n = rep.estimate.n;
                    slot.n_used(n).n_missing(still_missing).ok(AnalysisPayload::WorstCase(rep))
                }
                Err(e) => slot.failed(&e),
            }
        });

        let threshold = self.config.analysis.missing_threshold;
        let slot = Slot::new("sensitivity_ipw_no_heavy_drinking_alcohol", Section::Sensitivity)
            .outcome(outcome.as_str())
            .factor(Factor::Alcohol.column_name())
            .population("complete_case_weighted")
            .n_missing(n_missing);
        out.push(if !forced && frac <= threshold {
            slot.skipped(&format!(
                "outcome missingness {frac:.4} does not exceed the threshold {threshold}"
            ))
        } else {
            match ipw_analysis(self.dataset, self.outcomes, outcome, Factor::Alcohol, self.config) {
                Ok(a) => {
                    let n = a.estimate.n;
                    slot.n_used(n).ok(AnalysisPayload::Ipw(a))
                }
                Err(e) => slot.failed(&e),
            }
        });
    }
}

/// Run the full prespecified analysis set.
pub fn run_full(dataset: &TrialDataset, config: &AnalysisConfig) -> Result<AnalysisReport> {
    run_scoped(dataset, config, RunScope::Full)
}

/// Run the analyses selected by `scope`. Individual analyses that fail are
/// recorded as failed; only configuration or outcome-derivation problems make
/// the whole run fail.
pub fn run_scoped(
    dataset: &TrialDataset,
    config: &AnalysisConfig,
    scope: RunScope,
) -> Result<AnalysisReport> {
    config.validate()?;
    let outcomes = derive_all(dataset, config)?;
    let ctx = Ctx { dataset, outcomes: &outcomes, config, site_order: site_order_for(dataset, config) };
    let mut records: Vec<AnalysisRecord> = Vec::new();

    if scope != RunScope::Sensitivity {
        records.push(ctx.descriptive_baseline());
        records.push(ctx.timepoint());
        records.push(ctx.enrollment());
    }

    if scope == RunScope::Full {
        records.push(ctx.binary_marginal(
            "primary_no_heavy_drinking_alcohol",
            Section::Primary,
            BinaryOutcome::NoHeavyDrinking,
            Factor::Alcohol,
        ));
        records.push(ctx.interaction(
            "primary_no_heavy_drinking_interaction",
            Section::Primary,
            BinaryOutcome::NoHeavyDrinking,
        ));
        records.push(ctx.binary_marginal(
            "primary_inh_adherent_adherence",
            Section::Primary,
            BinaryOutcome::InhAdherent,
            Factor::Adherence,
        ));
        records.push(ctx.interaction(
            "primary_inh_adherent_interaction",
            Section::Primary,
            BinaryOutcome::InhAdherent,
        ));

        records.push(ctx.hepatotox());
        for (outcome, base) in [
            (BinaryOutcome::VlSuppressed6m, "secondary_vl_suppressed_6m"),
            (BinaryOutcome::VlSuppressed12m, "secondary_vl_suppressed_12m"),
            (BinaryOutcome::ActiveTb, "secondary_active_tb"),
        ] {
            records.push(ctx.binary_marginal(
                &format!("{base}_alcohol"),
                Section::Secondary,
                outcome,
                Factor::Alcohol,
            ));
            records.push(ctx.binary_marginal(
                &format!("{base}_adherence"),
                Section::Secondary,
                outcome,
                Factor::Adherence,
            ));
            records.push(ctx.interaction(&format!("{base}_interaction"), Section::Secondary, outcome));
        }
        records.push(ctx.linear(
            "secondary_peth6_continuous_alcohol",
            Section::Secondary,
            ContinuousOutcome::Peth6,
            Factor::Alcohol,
        ));
        records.push(ctx.linear(
            "secondary_mems_proportion_adherence",
            Section::Secondary,
            ContinuousOutcome::MemsProportion,
            Factor::Adherence,
        ));

        records.push(ctx.linear(
            "exploratory_drink_days_30_alcohol",
            Section::Exploratory,
            ContinuousOutcome::DrinkDays30,
            Factor::Alcohol,
        ));
        records.push(ctx.linear(
            "exploratory_heavy_days_14_alcohol",
            Section::Exploratory,
            ContinuousOutcome::HeavyDays14,
            Factor::Alcohol,
        ));
        records.push(ctx.covid_comparison());

        let covid_value = |p: &ParticipantRecord| -> Option<f64> {
            outcomes.get(&p.participant_id).map(|d| match d.covid_cohort {
                CovidCohort::PreLockdown => 0.0,
                CovidCohort::PostLockdown => 1.0,
            })
        };
        let covid_rule = StrataRule::Binary { label0: "pre_lockdown", label1: "post_lockdown" };
        records.push(ctx.moderation(
            "exploratory_covid_modification_no_heavy_drinking_alcohol",
            Section::Exploratory,
            BinaryOutcome::NoHeavyDrinking,
            Factor::Alcohol,
            "covid_cohort",
            &covid_value,
            &covid_rule,
        ));
        records.push(ctx.moderation(
            "exploratory_covid_modification_inh_adherent_adherence",
            Section::Exploratory,
            BinaryOutcome::InhAdherent,
            Factor::Adherence,
            "covid_cohort",
            &covid_value,
            &covid_rule,
        ));

        for spec in &config.moderators {
            let rule = if spec.column == "gender" {
                StrataRule::Binary { label0: "female", label1: "male" }
            } else if let Some(cuts) = &spec.cutpoints {
                StrataRule::Cutpoints(cuts.clone())
            } else {
                StrataRule::Unspecified
            };
            let value_of =
                |p: &ParticipantRecord| -> Option<f64> { p.baseline_value(&spec.column).ok().flatten() };
            records.push(ctx.moderation(
                &format!("exploratory_moderator_{}_no_heavy_drinking_alcohol", spec.column),
                Section::Exploratory,
                BinaryOutcome::NoHeavyDrinking,
                Factor::Alcohol,
                &spec.column,
                &value_of,
                &rule,
            ));
            records.push(ctx.moderation(
                &format!("exploratory_moderator_{}_inh_adherent_adherence", spec.column),
                Section::Exploratory,
                BinaryOutcome::InhAdherent,
                Factor::Adherence,
                &spec.column,
                &value_of,
                &rule,
            ));
        }
    }

    if scope != RunScope::Describe {
        ctx.sensitivity_records(scope == RunScope::Sensitivity, &mut records);
    }

    Ok(AnalysisReport {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_fingerprint: dataset.fingerprint(),
        n_participants: dataset.participants.len(),
        config_echo: config.clone(),
        analyses: records,
    })
}

/// Serialize the report in the requested format as (relative path, bytes)
/// pairs. JSON and markdown produce one file; CSV produces one file per
/// table under `tables/`.
pub fn emit_report(report: &AnalysisReport, format: ReportFormat) -> Result<Vec<(String, Vec<u8>)>> {
    match format {
        ReportFormat::Json => {
            Ok(vec![("report.json".to_string(), render::render_json(report)?.into_bytes())])
        }
        ReportFormat::Markdown => {
            Ok(vec![("report.md".to_string(), render::render_markdown(report).into_bytes())])
        }
        ReportFormat::Csv => Ok(render::csv_tables(report)?
            .into_iter()
            .map(|(name, text)| (format!("tables/{name}"), text.into_bytes()))
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::basic_record;
    use crate::sim::{simulate_trial, SimulationConfig};

    fn sim_dataset(n: usize, seed: u64) -> TrialDataset {
        simulate_trial(&SimulationConfig::plan_defaults(n, seed)).unwrap()
    }

    fn plan_config() -> AnalysisConfig {
        AnalysisConfig::plan_defaults()
    }

    #[test]
    fn full_report_enumerates_every_prespecified_analysis_once() {
        let ds = sim_dataset(400, 11);
        let cfg = plan_config();
        let report = run_scoped(&ds, &cfg, RunScope::Full).unwrap();

        let names: Vec<String> = report.analyses.iter().map(|a| a.name.clone()).collect();
        assert_eq!(names, expected_analysis_names(&cfg, RunScope::Full));
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len(), "analysis names must be unique");

        for name in [
            "primary_no_heavy_drinking_alcohol",
            "primary_no_heavy_drinking_interaction",
            "primary_inh_adherent_adherence",
            "primary_inh_adherent_interaction",
        ] {
            let rec = report.analysis(name).unwrap();
            assert_eq!(rec.status, AnalysisStatus::Ok, "{name}: {:?}", rec.error);
        }
        assert_eq!(
            report.analysis("descriptive_baseline").unwrap().status,
            AnalysisStatus::Ok
        );
        // The simulator produced fully observed outcomes, so the sensitivity
        // analyses are skipped, not run and not silently absent.
        for name in [
            "sensitivity_missingness_comparison_no_heavy_drinking",
            "sensitivity_worst_case_no_heavy_drinking",
            "sensitivity_ipw_no_heavy_drinking_alcohol",
        ] {
            assert_eq!(report.analysis(name).unwrap().status, AnalysisStatus::Skipped);
        }
        assert_eq!(report.n_participants, 400);
        assert_eq!(report.dataset_fingerprint.len(), 64);
    }

    #[test]
    fn scoped_runs_match_expected_names() {
        let ds = sim_dataset(160, 3);
        let cfg = plan_config();
        for scope in [RunScope::Describe, RunScope::Sensitivity] {
            let report = run_scoped(&ds, &cfg, scope).unwrap();
            let names: Vec<String> = report.analyses.iter().map(|a| a.name.clone()).collect();
            assert_eq!(names, expected_analysis_names(&cfg, scope));
        }
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let ds = sim_dataset(240, 5);
        let cfg = plan_config();
        let a = run_scoped(&ds, &cfg, RunScope::Full).unwrap();
        let b = run_scoped(&ds, &cfg, RunScope::Full).unwrap();
        assert_eq!(a, b);
        assert_eq!(render::render_json(&a).unwrap(), render::render_json(&b).unwrap());
        assert_eq!(render::render_markdown(&a), render::render_markdown(&b));
        assert_eq!(render::csv_tables(&a).unwrap(), render::csv_tables(&b).unwrap());
    }

    #[test]
    fn report_json_round_trips() {
        let ds = sim_dataset(160, 9);
        let cfg = plan_config();
        let report = run_scoped(&ds, &cfg, RunScope::Full).unwrap();
        let json = render::render_json(&report).unwrap();
        assert!(json.ends_with('\n'));
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn forced_sensitivity_runs_all_three_with_covariates_configured() {
        let ds = sim_dataset(240, 7);
        let mut cfg = plan_config();
        cfg.analysis.ipw_covariates = vec!["gender".to_string(), "peth_0".to_string()];
        let report = run_scoped(&ds, &cfg, RunScope::Sensitivity).unwrap();
        assert_eq!(report.analyses.len(), 3);
        for rec in &report.analyses {
            assert_eq!(rec.status, AnalysisStatus::Ok, "{}: {:?}", rec.name, rec.error);
        }
        // Nothing is missing, so IPW must collapse to the complete-case
        // analysis with unit weights.
        match &report.analysis("sensitivity_ipw_no_heavy_drinking_alcohol").unwrap().result {
            AnalysisPayload::Ipw(a) => {
                assert_eq!(a.weights.min, 1.0);
                assert_eq!(a.weights.max, 1.0);
                assert_eq!(a.missing_fraction, 0.0);
            }
            other => panic!("expected IPW payload, got {other:?}"),
        }
    }

    #[test]
    fn ipw_without_covariates_fails_when_forced() {
        let ds = sim_dataset(160, 13);
        let cfg = plan_config();
        let report = run_scoped(&ds, &cfg, RunScope::Sensitivity).unwrap();
        let rec = report.analysis("sensitivity_ipw_no_heavy_drinking_alcohol").unwrap();
        assert_eq!(rec.status, AnalysisStatus::Failed);
        assert!(rec.error.as_deref().unwrap().contains("covariate"));
    }

    /// Small hand-built dataset with no TB events, one site, one gender, no
    /// MEMS data, and everything scheduled pre-lockdown: several analyses
    /// must fail while the run itself succeeds.
    fn degenerate_dataset() -> TrialDataset {
        let mut participants = Vec::new();
        for i in 0..24usize {
            let arm = (i % 4 + 1) as u8;
            let mut r = basic_record(&format!("d{i:02}"), arm);
            if i % 2 == 0 {
                r.peth[1] = Some(100.0);
            }
            participants.push(r);
        }
        TrialDataset { participants, mems_events: Vec::new(), screened_declined: None }
    }

    #[test]
    fn failed_analyses_are_recorded_without_aborting_the_run() {
        let ds = degenerate_dataset();
        let cfg = plan_config();
        let report = run_scoped(&ds, &cfg, RunScope::Full).unwrap();

        let names: Vec<String> = report.analyses.iter().map(|a| a.name.clone()).collect();
        assert_eq!(names, expected_analysis_names(&cfg, RunScope::Full));
        assert!(report.failed_count() > 0);

        // All-false TB outcome cannot support a logistic fit.
        let tb = report.analysis("secondary_active_tb_alcohol").unwrap();
        assert_eq!(tb.status, AnalysisStatus::Failed);
        assert!(tb.error.is_some());
        // Single-gender data makes the gender moderator degenerate, by name.
        let gender = report
            .analysis("exploratory_moderator_gender_no_heavy_drinking_alcohol")
            .unwrap();
        assert_eq!(gender.status, AnalysisStatus::Failed);
        assert!(gender.error.as_deref().unwrap().contains("constant"));
        // Everything pre-lockdown: the covid moderator is constant too.
        let covid = report
            .analysis("exploratory_covid_modification_no_heavy_drinking_alcohol")
            .unwrap();
        assert_eq!(covid.status, AnalysisStatus::Failed);
        assert!(covid.error.as_deref().unwrap().contains("constant"));
        // The descriptive table never depends on model fits.
        assert_eq!(report.analysis("descriptive_baseline").unwrap().status, AnalysisStatus::Ok);
    }

    #[test]
    fn emit_produces_the_expected_file_sets() {
        let ds = sim_dataset(160, 21);
        let cfg = plan_config();
        let report = run_scoped(&ds, &cfg, RunScope::Full).unwrap();

        let json = emit_report(&report, ReportFormat::Json).unwrap();
        assert_eq!(json.len(), 1);
        assert_eq!(json[0].0, "report.json");

        let md = emit_report(&report, ReportFormat::Markdown).unwrap();
        assert_eq!(md.len(), 1);
        assert_eq!(md[0].0, "report.md");
        let text = String::from_utf8(md[0].1.clone()).unwrap();
        for rec in &report.analyses {
            assert!(text.contains(&rec.name), "markdown must mention {}", rec.name);
        }

        let csv = emit_report(&report, ReportFormat::Csv).unwrap();
        let names: Vec<&str> = csv.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "tables/analyses.csv",
                "tables/estimates.csv",
                "tables/tests.csv",
                "tables/linear.csv",
                "tables/descriptive.csv",
                "tables/comparisons.csv",
                "tables/timepoints.csv",
            ]
        );
    }

    #[test]
    fn non_finite_numbers_are_rejected_at_json_render() {
        let ds = sim_dataset(120, 2);
        let cfg = plan_config();
        let mut report = run_scoped(&ds, &cfg, RunScope::Describe).unwrap();
        report.analyses.push(AnalysisRecord {
            name: "synthetic".to_string(),
            section: Section::Exploratory,
            outcome: None,
            factor: None,
            population: "complete_case".to_string(),
            status: AnalysisStatus::Ok,
            error: None,
            note: None,
            n_used: None,
            n_missing: None,
            result: AnalysisPayload::Linear(LinearEstimate {
                outcome: "x".into(),
                factor: "alcohol_int".into(),
                coefficient: 1.0,
                se: f64::NAN,
                ci: (0.0, 2.0),
                p_value: 0.5,
                df: 10.0,
                n: 16,
                covariates: vec![],
                model_columns: vec![],
                residual_variance: 1.0,
                residual_normality: None,
            }),
        });
        let err = render::render_json(&report).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
