//! Trial dataset: participant records, MEMS events, factor coding, validation.

mod io;

pub use io::{
    load_mems_csv, load_participants_csv, load_screened_csv, load_trial_data,
    load_trial_data_lenient, write_mems_csv, write_participants_csv, write_screened_csv,
};

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscontinuationReason {
    HepatotoxicityGrade3,
    HepatotoxicityGrade4,
    Other,
}

impl DiscontinuationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiscontinuationReason::HepatotoxicityGrade3 => "hepatotoxicity_grade3",
            DiscontinuationReason::HepatotoxicityGrade4 => "hepatotoxicity_grade4",
            DiscontinuationReason::Other => "other",
        }
    }
}

/// Randomized intervention assignments decoded from the arm number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorIndicators {
    /// 1 for arms 2 and 4, 0 for arms 1 and 3.
    pub alcohol_int: u8,
    /// 1 for arms 3 and 4, 0 for arms 1 and 2.
    pub adherence_int: u8,
}

/// Arm coding: 1 = neither intervention, 2 = alcohol only, 3 = adherence only,
/// 4 = both.
pub fn derive_factor_indicators(arm: i64) -> Result<FactorIndicators> {
    match arm {
        1 => Ok(FactorIndicators { alcohol_int: 0, adherence_int: 0 }),
        2 => Ok(FactorIndicators { alcohol_int: 1, adherence_int: 0 }),
        3 => Ok(FactorIndicators { alcohol_int: 0, adherence_int: 1 }),
        4 => Ok(FactorIndicators { alcohol_int: 1, adherence_int: 1 }),
        other => Err(Error::InvalidArm(other)),
    }
}

impl FactorIndicators {
    pub fn to_arm(self) -> u8 {
        match (self.alcohol_int, self.adherence_int) {
            (0, 0) => 1,
            (1, 0) => 2,
            (0, 1) => 3,
            _ => 4,
        }
    }
}

/// One enrolled participant with every raw measurement the analyses consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub site: String,
    pub gender: Gender,
    pub arm: u8,
    pub enrollment_date: NaiveDate,
    pub scheduled_inh_completion_date: NaiveDate,
    pub discontinued_inh: bool,
    pub discontinuation_date: Option<NaiveDate>,
    pub discontinuation_reason: Option<DiscontinuationReason>,
    pub prescribed_doses: u32,
    /// Visit attendance at months 3, 6, 12.
    pub visit_attended: [bool; 3],
    /// PEth (ng/mL) at months 0, 3, 6, 12.
    pub peth: [Option<f64>; 4],
    /// AUDIT-C score (0-12) at months 0, 3, 6.
    pub auditc: [Option<u8>; 3],
    /// Detectable viral load at months 6 and 12.
    pub viral_load_detectable: [Option<bool>; 2],
    pub active_tb: bool,
    pub drink_days_30: Option<i64>,
    pub heavy_days_14: Option<i64>,
    pub timepref_score: Option<f64>,
    pub riskpref_score: Option<f64>,
    pub readiness_score: Option<f64>,
}

impl ParticipantRecord {
    pub fn factors(&self) -> FactorIndicators {
        // arm is validated at construction, so this cannot fail
        derive_factor_indicators(self.arm as i64).expect("validated arm")
    }

    pub fn visit_attended_month(&self, month: u8) -> bool {
        match month {
            3 => self.visit_attended[0],
            6 => self.visit_attended[1],
            12 => self.visit_attended[2],
            _ => false,
        }
    }

    pub fn peth_month(&self, month: u8) -> Option<f64> {
        match month {
            0 => self.peth[0],
            3 => self.peth[1],
            6 => self.peth[2],
            12 => self.peth[3],
            _ => None,
        }
    }

    pub fn auditc_month(&self, month: u8) -> Option<u8> {
        match month {
            0 => self.auditc[0],
            3 => self.auditc[1],
            6 => self.auditc[2],
            _ => None,
        }
    }

    pub fn vl_detectable_month(&self, month: u8) -> Option<bool> {
        match month {
            6 => self.viral_load_detectable[0],
            12 => self.viral_load_detectable[1],
            _ => None,
        }
    }

    /// Numeric value of a baseline covariate column, by CSV column name.
    /// `gender` is coded 1 for male, 0 for female.
    pub fn baseline_value(&self, column: &str) -> Result<Option<f64>> {
        let v = match column {
            "gender" => Some(if self.gender == Gender::Male { 1.0 } else { 0.0 }),
            "peth_0" => self.peth[0],
            "auditc_0" => self.auditc[0].map(f64::from),
            "drink_days_30" => self.drink_days_30.map(|v| v as f64),
            "heavy_days_14" => self.heavy_days_14.map(|v| v as f64),
            "timepref_score" => self.timepref_score,
            "riskpref_score" => self.riskpref_score,
            "readiness_score" => self.readiness_score,
            other => return Err(Error::UnknownColumn(other.to_string())),
        };
        Ok(v)
    }
}

/// Baseline covariate columns accepted by `baseline_value`, in report order.
pub const BASELINE_COLUMNS: [&str; 8] = [
    "gender",
    "peth_0",
    "auditc_0",
    "drink_days_30",
    "heavy_days_14",
    "timepref_score",
    "riskpref_score",
    "readiness_score",
];

/// One MEMS cap opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemsEvent {
    pub participant_id: String,
    pub opening_timestamp: NaiveDateTime,
}

/// Screening variables for an eligible person who declined enrollment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenedRecord {
    pub screen_id: String,
    pub gender: Option<Gender>,
    /// Continuous screening variables, keyed by column name.
    pub values: BTreeMap<String, Option<f64>>,
}

/// Screening variable columns recognized in screened.csv besides screen_id
/// and gender.
pub const SCREENING_COLUMNS: [&str; 7] = [
    "peth_0",
    "auditc_0",
    "drink_days_30",
    "heavy_days_14",
    "timepref_score",
    "riskpref_score",
    "readiness_score",
];

/// The immutable trial dataset all analyses read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub participants: Vec<ParticipantRecord>,
    pub mems_events: Vec<MemsEvent>,
    pub screened_declined: Option<Vec<ScreenedRecord>>,
}

impl TrialDataset {
    /// Study sites in order of first appearance.
    pub fn observed_sites(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.participants {
            if seen.insert(p.site.clone()) {
                out.push(p.site.clone());
            }
        }
        out
    }

    /// MEMS events grouped by participant, in input order.
    pub fn mems_by_participant(&self) -> HashMap<&str, Vec<&MemsEvent>> {
        let mut map: HashMap<&str, Vec<&MemsEvent>> = HashMap::new();
        for e in &self.mems_events {
            map.entry(e.participant_id.as_str()).or_default().push(e);
        }
        map
    }

    pub fn participant(&self, id: &str) -> Option<&ParticipantRecord> {
        self.participants.iter().find(|p| p.participant_id == id)
    }

    /// SHA-256 over the canonical CSV serialization, hex encoded. Stable
    /// across loads of the same data regardless of source formatting.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(write_participants_csv(&self.participants).as_bytes());
        hasher.update(write_mems_csv(&self.mems_events).as_bytes());
        if let Some(screened) = &self.screened_declined {
            hasher.update(write_screened_csv(screened).as_bytes());
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub participant_id: Option<String>,
    pub message: String,
}

/// Outcome of dataset validation. Hard errors block analysis; warnings are
/// carried into the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, id: Option<&str>, message: String) {
        self.errors.push(ValidationIssue { participant_id: id.map(str::to_string), message });
    }

    fn warn(&mut self, id: Option<&str>, message: String) {
        self.warnings.push(ValidationIssue { participant_id: id.map(str::to_string), message });
    }
}

/// Cross-field consistency checks over a loaded dataset.
pub fn validate(dataset: &TrialDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen: HashMap<&str, usize> = HashMap::new();

    for (idx, p) in dataset.participants.iter().enumerate() {
        let id = p.participant_id.as_str();
        if let Some(first) = seen.insert(id, idx) {
            report.error(
                Some(id),
                format!("duplicate participant_id (records {} and {})", first + 1, idx + 1),
            );
        }
        if !(1..=4).contains(&p.arm) {
            report.error(Some(id), format!("arm must be in 1..=4, got {}", p.arm));
        }
        if p.discontinued_inh && p.discontinuation_date.is_none() {
            report.error(Some(id), "discontinued_inh is true but discontinuation_date is missing".into());
        }
        if !p.discontinued_inh && p.discontinuation_date.is_some() {
            report.error(Some(id), "discontinuation_date present but discontinued_inh is false".into());
        }
        if !p.discontinued_inh && p.discontinuation_reason.is_some() {
            report.error(Some(id), "discontinuation_reason present but discontinued_inh is false".into());
        }
        if p.prescribed_doses == 0 || p.prescribed_doses > 180 {
            report.error(Some(id), format!("prescribed_doses must be in 1..=180, got {}", p.prescribed_doses));
        }
        if p.scheduled_inh_completion_date < p.enrollment_date {
            report.error(Some(id), "scheduled_inh_completion_date precedes enrollment_date".into());
        }
        if let Some(d) = p.discontinuation_date {
            if d < p.enrollment_date {
                report.error(Some(id), "discontinuation_date precedes enrollment_date".into());
            } else if d == p.enrollment_date {
                report.warn(
                    Some(id),
                    "discontinuation on the enrollment date leaves zero prescribed days (MEMS outcome undefined)".into(),
                );
            }
        }
        // Measurements recorded at a visit the participant did not attend.
        for (month, vi) in [(3u8, 0usize), (6, 1), (12, 2)] {
            if p.visit_attended[vi] {
                continue;
            }
            if p.peth_month(month).is_some() {
                report.warn(Some(id), format!("peth_{month} present but visit{month}_attended is false"));
            }
            if month != 12 && p.auditc_month(month).is_some() {
                report.warn(Some(id), format!("auditc_{month} present but visit{month}_attended is false"));
            }
            if month != 3 && p.vl_detectable_month(month).is_some() {
                report.warn(Some(id), format!("vl{month}_detectable present but visit{month}_attended is false"));
            }
        }
    }

    let ids: HashSet<&str> = dataset.participants.iter().map(|p| p.participant_id.as_str()).collect();
    for (row, e) in dataset.mems_events.iter().enumerate() {
        match dataset.participant(&e.participant_id) {
            None => {
                report.error(
                    Some(e.participant_id.as_str()),
                    format!("MEMS event {} references an unknown participant", row + 1),
                );
            }
            Some(p) => {
                if e.opening_timestamp.date() < p.enrollment_date {
                    report.error(
                        Some(e.participant_id.as_str()),
                        format!(
                            "MEMS opening at {} precedes enrollment on {}",
                            e.opening_timestamp, p.enrollment_date
                        ),
                    );
                }
            }
        }
    }
    debug_assert!(ids.len() <= dataset.participants.len());

    report
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub(crate) fn basic_record(id: &str, arm: u8) -> ParticipantRecord {
        ParticipantRecord {
            participant_id: id.to_string(),
            site: "site_a".to_string(),
            gender: Gender::Female,
            arm,
            enrollment_date: NaiveDate::from_ymd_opt(2019, 1, 10).unwrap(),
            scheduled_inh_completion_date: NaiveDate::from_ymd_opt(2019, 7, 9).unwrap(),
            discontinued_inh: false,
            discontinuation_date: None,
            discontinuation_reason: None,
            prescribed_doses: 180,
            visit_attended: [true, true, true],
            peth: [Some(120.0), Some(20.0), Some(10.0), Some(15.0)],
            auditc: [Some(6), Some(2), Some(1)],
            viral_load_detectable: [Some(false), Some(false)],
            active_tb: false,
            drink_days_30: Some(12),
            heavy_days_14: Some(4),
            timepref_score: Some(0.5),
            riskpref_score: Some(0.3),
            readiness_score: Some(7.0),
        }
    }
}
