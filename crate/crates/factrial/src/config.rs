//! Analysis configuration: outcome cutoffs, model settings, and output options.
//!
//! Every knob has a default matching the prespecified analysis plan, so an
//! empty config file is valid. Flags on the command line override file values,
//! and the fully resolved configuration is echoed into every report.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cutoffs and windows used when deriving outcomes from raw measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeCutoffs {
    /// PEth below this value (ng/mL, strict) counts as no heavy drinking.
    pub peth_threshold: f64,
    /// AUDIT-C at or above this score is heavy drinking for women.
    pub auditc_female: u8,
    /// AUDIT-C at or above this score is heavy drinking for men.
    pub auditc_male: u8,
    /// Days after enrollment in which MEMS openings count.
    pub mems_window_days: i64,
    /// Adherent iff opening-day proportion is strictly above this.
    pub mems_threshold: f64,
    /// Scheduled completion on or after this date is the post-lockdown cohort.
    /// ISO date string, e.g. "2020-03-19".
    pub covid_cutoff_date: String,
    /// Limit of detection (copies/mL) when viral load arrives numeric.
    pub vl_limit_of_detection: f64,
}

impl Default for OutcomeCutoffs {
    fn default() -> Self {
        OutcomeCutoffs {
            peth_threshold: 35.0,
            auditc_female: 3,
            auditc_male: 4,
            mems_window_days: 270,
            mems_threshold: 0.90,
            covid_cutoff_date: "2020-03-19".to_string(),
            vl_limit_of_detection: 50.0,
        }
    }
}

impl OutcomeCutoffs {
    pub fn covid_cutoff(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.covid_cutoff_date, "%Y-%m-%d").map_err(|e| {
            Error::Config(format!(
                "covid_cutoff_date `{}` is not an ISO date: {e}",
                self.covid_cutoff_date
            ))
        })
    }
}

/// Model-fitting and inference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub significance_level: f64,
    pub ci_level: f64,
    /// IPW is run only when the outcome-missingness fraction exceeds this.
    pub missing_threshold: f64,
    /// Covariates for the observed-vs-missing model. IPW refuses to run
    /// without an explicit list.
    pub ipw_covariates: Vec<String>,
    /// Fitted observation probabilities below this are truncated.
    pub weight_floor: f64,
    /// Baseline drinking covariates added to linear models of alcohol outcomes.
    pub ancova_covariates: Vec<String>,
    /// Fit the hepatotoxicity contrasts as three separate two-arm models
    /// instead of one shared four-arm model.
    pub hepatotox_separate_fits: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            significance_level: 0.05,
            ci_level: 0.95,
            missing_threshold: 0.10,
            ipw_covariates: Vec::new(),
            weight_floor: 0.02,
            ancova_covariates: vec![
                "peth_0".to_string(),
                "auditc_0".to_string(),
                "drink_days_30".to_string(),
                "heavy_days_14".to_string(),
            ],
            hepatotox_separate_fits: false,
        }
    }
}

/// One candidate effect moderator for the subgroup analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeratorSpec {
    /// Column name: `gender` or any baseline covariate column.
    pub column: String,
    /// Cutpoints for stratified reporting of a continuous moderator.
    /// Without them a significant interaction is reported but not stratified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutpoints: Option<Vec<f64>>,
}

impl ModeratorSpec {
    pub fn named(column: &str) -> Self {
        ModeratorSpec { column: column.to_string(), cutpoints: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub format: ReportFormat,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { format: ReportFormat::Json }
    }
}

/// Full analysis configuration. Defaults reproduce the prespecified plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub cutoffs: OutcomeCutoffs,
    pub analysis: AnalysisSettings,
    /// Study sites in configuration order; the first is the reference level.
    /// Empty means: infer from the data in order of first appearance.
    pub sites: Vec<String>,
    /// Candidate effect moderators for subgroup analyses.
    pub moderators: Vec<ModeratorSpec>,
    /// Variables summarized in the baseline descriptive table.
    pub descriptive_variables: Vec<String>,
    pub output: OutputSettings,
}

impl AnalysisConfig {
    /// Plan defaults: gender plus the preference and readiness scores as
    /// moderators. A baseline alcohol moderator must be named explicitly in
    /// the config (the column choice is a study decision, not a default).
    pub fn plan_defaults() -> Self {
        AnalysisConfig {
            moderators: vec![
                ModeratorSpec::named("gender"),
                ModeratorSpec::named("timepref_score"),
                ModeratorSpec::named("riskpref_score"),
                ModeratorSpec::named("readiness_score"),
            ],
            descriptive_variables: default_descriptive_variables(),
            ..AnalysisConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: AnalysisConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.fill_empty_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    /// Lists left empty in the file fall back to the plan defaults.
    fn fill_empty_defaults(&mut self) {
        if self.moderators.is_empty() {
            self.moderators = AnalysisConfig::plan_defaults().moderators;
        }
        if self.descriptive_variables.is_empty() {
            self.descriptive_variables = default_descriptive_variables();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cutoffs.covid_cutoff()?;
        let a = &self.analysis;
        for (name, v) in [
            ("significance_level", a.significance_level),
            ("ci_level", a.ci_level),
            ("missing_threshold", a.missing_threshold),
            ("weight_floor", a.weight_floor),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.cutoffs.mems_threshold > 0.0 && self.cutoffs.mems_threshold < 1.0) {
            return Err(Error::Config("mems_threshold must be in (0, 1)".into()));
        }
        if self.cutoffs.mems_window_days <= 0 {
            return Err(Error::Config("mems_window_days must be positive".into()));
        }
        if self.cutoffs.peth_threshold <= 0.0 {
            return Err(Error::Config("peth_threshold must be positive".into()));
        }
        let baseline = crate::data::BASELINE_COLUMNS;
        for m in &self.moderators {
            if m.column != "gender" && !baseline.contains(&m.column.as_str()) {
                return Err(Error::Config(format!(
                    "moderator column `{}` is not gender or a baseline covariate",
                    m.column
                )));
            }
            if let Some(cuts) = &m.cutpoints {
                if cuts.is_empty() || cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!(
                        "cutpoints for `{}` must be non-empty and strictly increasing",
                        m.column
                    )));
                }
            }
        }
        for v in &self.descriptive_variables {
            if v != "gender" && v != "site" && !baseline.contains(&v.as_str()) {
                return Err(Error::Config(format!("descriptive variable `{v}` is unknown")));
            }
        }
        for c in a.ipw_covariates.iter().chain(a.ancova_covariates.iter()) {
            if c != "gender" && !baseline.contains(&c.as_str()) {
                return Err(Error::Config(format!("covariate `{c}` is not a baseline column")));
            }
        }
        Ok(())
    }
}

pub fn default_descriptive_variables() -> Vec<String> {
    [
        "gender",
        "site",
        "peth_0",
        "auditc_0",
        "drink_days_30",
        "heavy_days_14",
        "timepref_score",
        "riskpref_score",
        "readiness_score",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
