//! Outcome derivation with explicit missingness semantics.
//!
//! Every derivation is a pure function of one participant's record (plus that
//! participant's MEMS events); `derive_all` maps them over a dataset.

use std::collections::{BTreeMap, HashSet};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, OutcomeCutoffs};
use crate::data::{DiscontinuationReason, Gender, MemsEvent, ParticipantRecord, TrialDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovidCohort {
    PreLockdown,
    PostLockdown,
}

impl CovidCohort {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovidCohort::PreLockdown => "pre_lockdown",
            CovidCohort::PostLockdown => "post_lockdown",
        }
    }
}

/// Binary outcomes addressable by name in analyses and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOutcome {
    NoHeavyDrinking,
    InhAdherent,
    VlSuppressed6m,
    VlSuppressed12m,
    HepatotoxDiscontinuation,
    ActiveTb,
}

impl BinaryOutcome {
    pub const ALL: [BinaryOutcome; 6] = [
        BinaryOutcome::NoHeavyDrinking,
        BinaryOutcome::InhAdherent,
        BinaryOutcome::VlSuppressed6m,
        BinaryOutcome::VlSuppressed12m,
        BinaryOutcome::HepatotoxDiscontinuation,
        BinaryOutcome::ActiveTb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BinaryOutcome::NoHeavyDrinking => "no_heavy_drinking",
            BinaryOutcome::InhAdherent => "inh_adherent",
            BinaryOutcome::VlSuppressed6m => "vl_suppressed_6m",
            BinaryOutcome::VlSuppressed12m => "vl_suppressed_12m",
            BinaryOutcome::HepatotoxDiscontinuation => "hepatotox_discontinuation",
            BinaryOutcome::ActiveTb => "active_tb",
        }
    }

    pub fn value(&self, d: &DerivedOutcomes) -> Option<bool> {
        match self {
            BinaryOutcome::NoHeavyDrinking => d.no_heavy_drinking,
            BinaryOutcome::InhAdherent => d.inh_adherent,
            BinaryOutcome::VlSuppressed6m => d.vl_suppressed_6m,
            BinaryOutcome::VlSuppressed12m => d.vl_suppressed_12m,
            BinaryOutcome::HepatotoxDiscontinuation => Some(d.hepatotox_discontinuation),
            BinaryOutcome::ActiveTb => Some(d.active_tb),
        }
    }
}

impl std::str::FromStr for BinaryOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BinaryOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::UnknownOutcome(s.to_string()))
    }
}

/// Continuous outcomes for the linear-model analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousOutcome {
    MemsProportion,
    Peth6,
    DrinkDays30,
    HeavyDays14,
}

impl ContinuousOutcome {
    pub const ALL: [ContinuousOutcome; 4] = [
        ContinuousOutcome::MemsProportion,
        ContinuousOutcome::Peth6,
        ContinuousOutcome::DrinkDays30,
        ContinuousOutcome::HeavyDays14,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ContinuousOutcome::MemsProportion => "mems_proportion",
            ContinuousOutcome::Peth6 => "peth6_continuous",
            ContinuousOutcome::DrinkDays30 => "drink_days_30",
            ContinuousOutcome::HeavyDays14 => "heavy_days_14",
        }
    }

    pub fn value(&self, d: &DerivedOutcomes) -> Option<f64> {
        match self {
            ContinuousOutcome::MemsProportion => d.mems_proportion,
            ContinuousOutcome::Peth6 => d.peth6_continuous,
            ContinuousOutcome::DrinkDays30 => d.drink_days_30.map(|v| v as f64),
            ContinuousOutcome::HeavyDays14 => d.heavy_days_14.map(|v| v as f64),
        }
    }
}

impl std::str::FromStr for ContinuousOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContinuousOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::UnknownOutcome(s.to_string()))
    }
}

/// All analysis outcomes for one participant. `None` marks a value that could
/// not be determined from the observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedOutcomes {
    /// Composite: PEth below threshold and AUDIT-C below the sex cutoff at
    /// both the 3- and 6-month visits.
    pub no_heavy_drinking: Option<bool>,
    /// MEMS opening-day proportion strictly above the adherence threshold.
    pub inh_adherent: Option<bool>,
    /// The underlying proportion, capped at 1.0.
    pub mems_proportion: Option<f64>,
    /// PEth at 6 months, ng/mL.
    pub peth6_continuous: Option<f64>,
    pub vl_suppressed_6m: Option<bool>,
    pub vl_suppressed_12m: Option<bool>,
    /// INH discontinuation due to grade 3/4 hepatotoxicity.
    pub hepatotox_discontinuation: bool,
    pub active_tb: bool,
    pub drink_days_30: Option<i64>,
    pub heavy_days_14: Option<i64>,
    pub covid_cohort: CovidCohort,
}

fn auditc_cutoff(gender: Gender, cutoffs: &OutcomeCutoffs) -> u8 {
    match gender {
        Gender::Female => cutoffs.auditc_female,
        Gender::Male => cutoffs.auditc_male,
    }
}

/// Composite "no heavy drinking" outcome over months 3 and 6.
///
/// A measured failure dominates missingness: if any observed component is at
/// or above its cutoff the outcome is `Some(false)` even when other components
/// are missing. Otherwise the outcome is missing unless every component is
/// observed and passes.
pub fn alcohol_primary_outcome(record: &ParticipantRecord, cutoffs: &OutcomeCutoffs) -> Option<bool> {
    let cutoff = auditc_cutoff(record.gender, cutoffs);
    let peth_ok = |v: Option<f64>| v.map(|x| x < cutoffs.peth_threshold);
    let auditc_ok = |v: Option<u8>| v.map(|x| x < cutoff);

    let components = [
        peth_ok(record.peth_month(3)),
        peth_ok(record.peth_month(6)),
        auditc_ok(record.auditc_month(3)),
        auditc_ok(record.auditc_month(6)),
    ];
    if components.contains(&Some(false)) {
        Some(false)
    } else if components.iter().any(|c| c.is_none()) {
        None
    } else {
        Some(true)
    }
}

/// Number of doses the participant was prescribed: the recorded count, shortened
/// to the days actually on INH when treatment was discontinued.
fn prescribed_denominator(record: &ParticipantRecord) -> i64 {
    let full = i64::from(record.prescribed_doses);
    match (record.discontinued_inh, record.discontinuation_date) {
        (true, Some(stop)) => {
            let on_drug = (stop - record.enrollment_date).num_days();
            on_drug.min(full)
        }
        _ => full,
    }
}

/// Proportion of prescribed doses covered by a MEMS opening day, capped at
/// 1.0. Multiple openings on one calendar day count once; only openings within
/// `[enrollment, enrollment + window_days)` count. `None` when the participant
/// has no MEMS data at all.
pub fn mems_adherence_continuous(
    record: &ParticipantRecord,
    events: &[MemsEvent],
    cutoffs: &OutcomeCutoffs,
) -> Result<Option<f64>> {
    if events.is_empty() {
        return Ok(None);
    }
    let denominator = prescribed_denominator(record);
    if denominator <= 0 {
        return Err(Error::ZeroDenominator(format!(
            "participant {} has no prescribed doses before discontinuation",
            record.participant_id
        )));
    }
    let window_end = record
        .enrollment_date
        .checked_add_days(Days::new(cutoffs.mems_window_days.max(0) as u64))
        .expect("window end within calendar range");
    let days: HashSet<NaiveDate> = events
        .iter()
        .map(|e| e.opening_timestamp.date())
        .filter(|d| *d >= record.enrollment_date && *d < window_end)
        .collect();
    let proportion = days.len() as f64 / denominator as f64;
    Ok(Some(proportion.min(1.0)))
}

/// Binary adherence: proportion strictly above the threshold (default 0.90).
pub fn mems_adherence_binary(
    record: &ParticipantRecord,
    events: &[MemsEvent],
    cutoffs: &OutcomeCutoffs,
) -> Result<Option<bool>> {
    Ok(mems_adherence_continuous(record, events, cutoffs)?.map(|p| p > cutoffs.mems_threshold))
}

/// Discontinuation of INH coded as due to grade 3 or 4 hepatotoxicity.
pub fn hepatotoxicity_outcome(record: &ParticipantRecord) -> bool {
    record.discontinued_inh
        && matches!(
            record.discontinuation_reason,
            Some(DiscontinuationReason::HepatotoxicityGrade3)
                | Some(DiscontinuationReason::HepatotoxicityGrade4)
        )
}

/// Suppressed = measured and not detectable. `month` is 6 or 12.
pub fn viral_suppression(record: &ParticipantRecord, month: u8) -> Option<bool> {
    record.vl_detectable_month(month).map(|d| !d)
}

/// Pre-lockdown iff the scheduled INH completion date is strictly before the
/// cutoff; on or after the cutoff is post-lockdown.
pub fn covid_cohort(record: &ParticipantRecord, cutoff_date: NaiveDate) -> CovidCohort {
    if record.scheduled_inh_completion_date < cutoff_date {
        CovidCohort::PreLockdown
    } else {
        CovidCohort::PostLockdown
    }
}

pub fn derive_outcomes(
    record: &ParticipantRecord,
    events: &[MemsEvent],
    config: &AnalysisConfig,
) -> Result<DerivedOutcomes> {
    let cutoffs = &config.cutoffs;
    Ok(DerivedOutcomes {
        no_heavy_drinking: alcohol_primary_outcome(record, cutoffs),
        inh_adherent: mems_adherence_binary(record, events, cutoffs)?,
        mems_proportion: mems_adherence_continuous(record, events, cutoffs)?,
        peth6_continuous: record.peth_month(6),
        vl_suppressed_6m: viral_suppression(record, 6),
        vl_suppressed_12m: viral_suppression(record, 12),
        hepatotox_discontinuation: hepatotoxicity_outcome(record),
        active_tb: record.active_tb,
        drink_days_30: record.drink_days_30,
        heavy_days_14: record.heavy_days_14,
        covid_cohort: covid_cohort(record, cutoffs.covid_cutoff()?),
    })
}

/// Derive every outcome for every participant, keyed by participant id.
pub fn derive_all(dataset: &TrialDataset, config: &AnalysisConfig) -> Result<BTreeMap<String, DerivedOutcomes>> {
    let mut grouped: BTreeMap<&str, Vec<MemsEvent>> = BTreeMap::new();
    for e in &dataset.mems_events {
        grouped.entry(e.participant_id.as_str()).or_default().push(e.clone());
    }
    let empty: Vec<MemsEvent> = Vec::new();
    dataset
        .participants
        .iter()
        .map(|p| {
            let events = grouped.get(p.participant_id.as_str()).unwrap_or(&empty);
            Ok((p.participant_id.clone(), derive_outcomes(p, events, config)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::basic_record;
    use proptest::prelude::*;

    fn cutoffs() -> OutcomeCutoffs {
        OutcomeCutoffs::default()
    }

    fn opening(id: &str, date: NaiveDate) -> MemsEvent {
        MemsEvent {
            participant_id: id.to_string(),
            opening_timestamp: date.and_hms_opt(8, 30, 0).unwrap(),
        }
    }

    fn openings_from_enrollment(record: &ParticipantRecord, n: usize) -> Vec<MemsEvent> {
        (0..n)
            .map(|i| {
                opening(
                    &record.participant_id,
                    record.enrollment_date.checked_add_days(Days::new(i as u64)).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn composite_passes_when_all_components_below_cutoffs() {
        let mut p = basic_record("p1", 1);
        p.gender = Gender::Female;
        p.peth = [Some(120.0), Some(10.0), Some(20.0), None];
        p.auditc = [Some(6), Some(2), Some(2)];
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(true));
    }

    #[test]
    fn auditc_at_female_cutoff_is_heavy() {
        let mut p = basic_record("p1", 1);
        p.gender = Gender::Female;
        p.peth = [None, Some(10.0), Some(20.0), None];
        p.auditc = [Some(6), Some(3), Some(2)];
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(false));
    }

    #[test]
    fn auditc_three_passes_for_men_fails_for_women() {
        let mut p = basic_record("p1", 1);
        p.peth = [None, Some(10.0), Some(20.0), None];
        p.auditc = [Some(6), Some(3), Some(2)];
        p.gender = Gender::Male;
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(true));
        p.gender = Gender::Female;
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(false));
    }

    #[test]
    fn peth_exactly_at_threshold_fails() {
        let mut p = basic_record("p1", 1);
        p.gender = Gender::Male;
        p.peth = [None, Some(35.0), Some(10.0), None];
        p.auditc = [Some(6), Some(1), Some(1)];
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(false));
    }

    #[test]
    fn missing_component_with_rest_passing_is_missing() {
        let mut p = basic_record("p1", 1);
        p.gender = Gender::Male;
        p.peth = [None, None, Some(10.0), None];
        p.auditc = [Some(6), Some(1), Some(1)];
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), None);
    }

    #[test]
    fn measured_failure_dominates_missingness() {
        let mut p = basic_record("p1", 1);
        p.gender = Gender::Male;
        p.peth = [None, Some(80.0), None, None];
        p.auditc = [Some(6), None, None];
        assert_eq!(alcohol_primary_outcome(&p, &cutoffs()), Some(false));
    }

    #[test]
    fn adherence_above_threshold() {
        let p = basic_record("p1", 1);
        let events = openings_from_enrollment(&p, 170);
        let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
        assert!((prop - 170.0 / 180.0).abs() < 1e-12);
        assert_eq!(mems_adherence_binary(&p, &events, &cutoffs()).unwrap(), Some(true));
    }

    #[test]
    fn adherence_exactly_at_threshold_is_not_adherent() {
        let p = basic_record("p1", 1);
        let events = openings_from_enrollment(&p, 162);
        let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
        assert!((prop - 0.90).abs() < 1e-12);
        assert_eq!(mems_adherence_binary(&p, &events, &cutoffs()).unwrap(), Some(false));
    }

    #[test]
    fn same_day_openings_count_once() {
        let p = basic_record("p1", 1);
        let day = p.enrollment_date;
        let events = vec![
            opening("p1", day),
            MemsEvent { participant_id: "p1".into(), opening_timestamp: day.and_hms_opt(12, 0, 0).unwrap() },
            MemsEvent { participant_id: "p1".into(), opening_timestamp: day.and_hms_opt(23, 59, 0).unwrap() },
        ];
        let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
        assert!((prop - 1.0 / 180.0).abs() < 1e-12);
    }

    #[test]
    fn openings_outside_window_do_not_count() {
        let p = basic_record("p1", 1);
        let inside = p.enrollment_date.checked_add_days(Days::new(269)).unwrap();
        let outside = p.enrollment_date.checked_add_days(Days::new(270)).unwrap();
        let prop_in = mems_adherence_continuous(&p, &[opening("p1", inside)], &cutoffs()).unwrap().unwrap();
        let prop_out = mems_adherence_continuous(&p, &[opening("p1", outside)], &cutoffs()).unwrap().unwrap();
        assert!((prop_in - 1.0 / 180.0).abs() < 1e-12);
        assert_eq!(prop_out, 0.0);
    }

    #[test]
    fn no_mems_data_at_all_is_missing() {
        let p = basic_record("p1", 1);
        assert_eq!(mems_adherence_continuous(&p, &[], &cutoffs()).unwrap(), None);
        assert_eq!(mems_adherence_binary(&p, &[], &cutoffs()).unwrap(), None);
    }

    #[test]
    fn discontinuation_shortens_denominator_and_caps_proportion() {
        let mut p = basic_record("p1", 1);
        p.discontinued_inh = true;
        p.discontinuation_date = p.enrollment_date.checked_add_days(Days::new(90));
        p.discontinuation_reason = Some(DiscontinuationReason::Other);
        // 100 opening days against a 90-dose denominator: capped at 1.0.
        let events = openings_from_enrollment(&p, 100);
        let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
        assert_eq!(prop, 1.0);
        // 80 opening days / 90 doses.
        let events = openings_from_enrollment(&p, 80);
        let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
        assert!((prop - 80.0 / 90.0).abs() < 1e-12);
    }

    #[test]
    fn discontinuation_on_enrollment_day_is_zero_denominator_error() {
        let mut p = basic_record("p1", 1);
        p.discontinued_inh = true;
        p.discontinuation_date = Some(p.enrollment_date);
        p.discontinuation_reason = Some(DiscontinuationReason::Other);
        let events = openings_from_enrollment(&p, 1);
        assert!(matches!(
            mems_adherence_continuous(&p, &events, &cutoffs()),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn hepatotoxicity_requires_grade3_or_4_reason() {
        let mut p = basic_record("p1", 1);
        assert!(!hepatotoxicity_outcome(&p));
        p.discontinued_inh = true;
        p.discontinuation_date = p.enrollment_date.checked_add_days(Days::new(30));
        p.discontinuation_reason = Some(DiscontinuationReason::Other);
        assert!(!hepatotoxicity_outcome(&p));
        p.discontinuation_reason = Some(DiscontinuationReason::HepatotoxicityGrade3);
        assert!(hepatotoxicity_outcome(&p));
        p.discontinuation_reason = Some(DiscontinuationReason::HepatotoxicityGrade4);
        assert!(hepatotoxicity_outcome(&p));
    }

    #[test]
    fn viral_suppression_negates_detectability() {
        let mut p = basic_record("p1", 1);
        p.viral_load_detectable = [Some(true), Some(false)];
        assert_eq!(viral_suppression(&p, 6), Some(false));
        assert_eq!(viral_suppression(&p, 12), Some(true));
        p.viral_load_detectable = [None, None];
        assert_eq!(viral_suppression(&p, 12), None);
    }

    #[test]
    fn covid_cutoff_boundary() {
        let mut p = basic_record("p1", 1);
        let cutoff = NaiveDate::from_ymd_opt(2020, 3, 19).unwrap();
        p.scheduled_inh_completion_date = NaiveDate::from_ymd_opt(2020, 3, 18).unwrap();
        assert_eq!(covid_cohort(&p, cutoff), CovidCohort::PreLockdown);
        p.scheduled_inh_completion_date = cutoff;
        assert_eq!(covid_cohort(&p, cutoff), CovidCohort::PostLockdown);
        p.scheduled_inh_completion_date = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        assert_eq!(covid_cohort(&p, cutoff), CovidCohort::PostLockdown);
    }

    #[test]
    fn derive_all_over_dataset() {
        let p1 = basic_record("p1", 1);
        let mut p2 = basic_record("p2", 2);
        p2.visit_attended[1] = false;
        p2.peth[2] = None;
        p2.auditc[2] = None;
        let events = openings_from_enrollment(&p1, 170);
        let ds = TrialDataset { participants: vec![p1, p2], mems_events: events, screened_declined: None };
        let cfg = AnalysisConfig::default();
        let all = derive_all(&ds, &cfg).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all["p1"].no_heavy_drinking, Some(true));
        assert_eq!(all["p1"].inh_adherent, Some(true));
        assert_eq!(all["p2"].no_heavy_drinking, None);
        assert_eq!(all["p2"].mems_proportion, None);
        let empty = TrialDataset { participants: vec![], mems_events: vec![], screened_declined: None };
        assert!(derive_all(&empty, &cfg).unwrap().is_empty());
    }

    proptest! {
        // Lowering any PEth or AUDIT-C component never flips the composite
        // from pass to fail.
        #[test]
        fn composite_is_monotone_in_components(
            peth3 in 0.0f64..80.0,
            peth6 in 0.0f64..80.0,
            a3 in 0u8..=8,
            a6 in 0u8..=8,
            drop3 in 0.0f64..1.0,
            drop6 in 0.0f64..1.0,
            da3 in 0u8..=8,
            da6 in 0u8..=8,
            male in proptest::bool::ANY,
        ) {
            let mut p = basic_record("p1", 1);
            p.gender = if male { Gender::Male } else { Gender::Female };
            p.peth = [None, Some(peth3), Some(peth6), None];
            p.auditc = [Some(6), Some(a3), Some(a6)];
            let before = alcohol_primary_outcome(&p, &cutoffs());
            p.peth = [None, Some(peth3 * drop3), Some(peth6 * drop6), None];
            p.auditc = [Some(6), Some(a3.min(da3)), Some(a6.min(da6))];
            let after = alcohol_primary_outcome(&p, &cutoffs());
            if before == Some(true) {
                prop_assert_eq!(after, Some(true));
            }
        }

        // Binary adherence is exactly the thresholded continuous proportion.
        #[test]
        fn binary_equals_thresholded_continuous(n_days in 0usize..300) {
            let p = basic_record("p1", 1);
            let events = openings_from_enrollment(&p, n_days);
            if events.is_empty() {
                prop_assert_eq!(mems_adherence_continuous(&p, &events, &cutoffs()).unwrap(), None);
            } else {
                let prop = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap().unwrap();
                let bin = mems_adherence_binary(&p, &events, &cutoffs()).unwrap().unwrap();
                prop_assert!((0.0..=1.0).contains(&prop));
                prop_assert_eq!(bin, prop > 0.90);
            }
        }

        // Duplicating an opening on an already-counted day changes nothing.
        #[test]
        fn duplicate_day_opening_is_idempotent(n_days in 1usize..200, dup in 0usize..200, hour in 0u32..24) {
            let p = basic_record("p1", 1);
            let mut events = openings_from_enrollment(&p, n_days);
            let dup_date = events[dup % n_days].opening_timestamp.date();
            let before = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap();
            events.push(MemsEvent {
                participant_id: "p1".into(),
                opening_timestamp: dup_date.and_hms_opt(hour, 15, 0).unwrap(),
            });
            let after = mems_adherence_continuous(&p, &events, &cutoffs()).unwrap();
            prop_assert_eq!(before, after);
        }

        // Single breakpoint in the completion date.
        #[test]
        fn covid_cohort_single_breakpoint(offset in -400i64..400) {
            let mut p = basic_record("p1", 1);
            let cutoff = NaiveDate::from_ymd_opt(2020, 3, 19).unwrap();
            let date = if offset >= 0 {
                cutoff.checked_add_days(Days::new(offset as u64)).unwrap()
            } else {
                cutoff.checked_sub_days(Days::new((-offset) as u64)).unwrap()
            };
            p.scheduled_inh_completion_date = date;
            let expected = if date < cutoff { CovidCohort::PreLockdown } else { CovidCohort::PostLockdown };
            prop_assert_eq!(covid_cohort(&p, cutoff), expected);
        }
    }
}
