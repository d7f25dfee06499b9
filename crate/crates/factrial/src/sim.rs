//! Synthetic factorial trials generated under a known logistic outcome model,
//! plus the Monte Carlo and bootstrap oracles that validate the estimators.
//!
//! Determinism contract: every dataset is a pure function of
//! `(SimulationConfig, replicate)`. Replicate `r` reads ChaCha stream `2r` for
//! participant data and stream `2r + 1` for MEMS events, so toggling
//! `generate_mems` never perturbs the participant draws, and replicate `r`
//! is unaffected by how many other replicates run.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::data::{
    derive_factor_indicators, DiscontinuationReason, Gender, MemsEvent, ParticipantRecord,
    TrialDataset, BASELINE_COLUMNS,
};
use crate::error::{Error, Result};
use crate::glm::expit;
use crate::outcomes::{derive_all, BinaryOutcome, DerivedOutcomes};
use crate::standardize::{
    factorial_analysis, interaction_analysis, marginal_analysis_rows, Factor,
};
use crate::stats::sample_sd;

/// Log-odds scale coefficients of the outcome-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueCoefficients {
    pub intercept: f64,
    pub alcohol: f64,
    pub adherence: f64,
    #[serde(default)]
    pub interaction: f64,
    #[serde(default)]
    pub gender_male: f64,
    /// Shift per site, keyed by site name; absent sites get zero.
    #[serde(default)]
    pub site: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumProportion {
    pub gender: Gender,
    pub site: String,
    pub proportion: f64,
}

/// Outcome missingness mechanism applied after generation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum Missingness {
    #[default]
    None,
    Mcar {
        rate: f64,
    },
    /// logit(p_miss_i) = logit(rate) + slope * (x_i - mean(x)), where x is a
    /// baseline covariate; `rate` anchors the marginal rate at the mean.
    Mar {
        covariate: String,
        slope: f64,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub true_coefficients: TrueCoefficients,
    /// Gender-by-site strata with sampling proportions; must sum to 1.
    pub strata_distribution: Vec<StratumProportion>,
    #[serde(default)]
    pub missingness: Missingness,
    pub seed: u64,
    /// Per-day pill-bottle events are bulky at very large n; analyses that
    /// only need the drinking composite can switch them off.
    #[serde(default = "default_true")]
    pub generate_mems: bool,
}

fn default_true() -> bool {
    true
}

impl SimulationConfig {
    /// Two sites, an even gender split, moderate effects, no interaction.
    pub fn plan_defaults(n: usize, seed: u64) -> Self {
        SimulationConfig {
            n,
            true_coefficients: TrueCoefficients {
                intercept: -0.3,
                alcohol: 0.5,
                adherence: 0.2,
                interaction: 0.0,
                gender_male: -0.25,
                site: BTreeMap::from([("site_b".to_string(), 0.2)]),
            },
            strata_distribution: vec![
                StratumProportion { gender: Gender::Female, site: "site_a".into(), proportion: 0.3 },
                StratumProportion { gender: Gender::Male, site: "site_a".into(), proportion: 0.3 },
                StratumProportion { gender: Gender::Female, site: "site_b".into(), proportion: 0.2 },
                StratumProportion { gender: Gender::Male, site: "site_b".into(), proportion: 0.2 },
            ],
            missingness: Missingness::None,
            seed,
            generate_mems: true,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimulationConfig =
            toml::from_str(text).map_err(|e| Error::InvalidSimConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSimConfig("n must be positive".into()));
        }
        if self.strata_distribution.is_empty() {
            return Err(Error::InvalidSimConfig("strata_distribution must be non-empty".into()));
        }
        let mut seen: Vec<(Gender, &str)> = Vec::new();
        let mut total = 0.0;
        for s in &self.strata_distribution {
            if !(s.proportion >= 0.0 && s.proportion <= 1.0) {
                return Err(Error::InvalidSimConfig(format!(
                    "stratum {}/{} proportion {} outside [0, 1]",
                    s.gender.as_str(),
                    s.site,
                    s.proportion
                )));
            }
            let key = (s.gender, s.site.as_str());
            if seen.contains(&key) {
                return Err(Error::InvalidSimConfig(format!(
                    "duplicate stratum {}/{}",
                    s.gender.as_str(),
                    s.site
                )));
            }
            seen.push(key);
            total += s.proportion;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSimConfig(format!(
                "strata proportions sum to {total}, expected 1"
            )));
        }
        let c = &self.true_coefficients;
        let named = [c.intercept, c.alcohol, c.adherence, c.interaction, c.gender_male];
        if named.iter().chain(c.site.values()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSimConfig("coefficients must be finite".into()));
        }
        for site in c.site.keys() {
            if !self.strata_distribution.iter().any(|s| &s.site == site) {
                return Err(Error::InvalidSimConfig(format!(
                    "site effect for '{site}' has no matching stratum"
                )));
            }
        }
        match &self.missingness {
            Missingness::None => {}
            Missingness::Mcar { rate } => {
                if !(*rate >= 0.0 && *rate <= 1.0) {
                    return Err(Error::InvalidSimConfig(format!("mcar rate {rate} outside [0, 1]")));
                }
            }
            Missingness::Mar { covariate, slope, rate } => {
                if !(*rate > 0.0 && *rate < 1.0) {
                    return Err(Error::InvalidSimConfig(format!(
                        "mar rate {rate} outside (0, 1)"
                    )));
                }
                if !slope.is_finite() {
                    return Err(Error::InvalidSimConfig("mar slope must be finite".into()));
                }
                if !BASELINE_COLUMNS.contains(&covariate.as_str()) {
                    return Err(Error::InvalidSimConfig(format!(
                        "mar covariate '{covariate}' is not a baseline column"
                    )));
                }
            }
        }
        Ok(())
    }

}

fn linear_predictor(c: &TrueCoefficients, alcohol: f64, adherence: f64, gender: Gender, site: &str) -> f64 {
    c.intercept
        + c.alcohol * alcohol
        + c.adherence * adherence
        + c.interaction * alcohol * adherence
        + c.gender_male * if gender == Gender::Male { 1.0 } else { 0.0 }
        + c.site.get(site).copied().unwrap_or(0.0)
}

/// Standardized counterfactual risks under the true model, marginalized over
/// the configured strata and a balanced other factor. Exact, no simulation.
pub fn true_standardized_risks(config: &SimulationConfig, factor: Factor) -> (f64, f64) {
    let c = &config.true_coefficients;
    let mut risk = [0.0f64; 2];
    for (level, slot) in [(0.0, 0), (1.0, 1)] {
        for s in &config.strata_distribution {
            for other in [0.0, 1.0] {
                let (alc, adh) = match factor {
                    Factor::Alcohol => (level, other),
                    Factor::Adherence => (other, level),
                };
                risk[slot] += s.proportion * 0.5 * expit(linear_predictor(c, alc, adh, s.gender, &s.site));
            }
        }
    }
    (risk[1], risk[0])
}

pub fn true_standardized_rd(config: &SimulationConfig, factor: Factor) -> f64 {
    let (risk1, risk0) = true_standardized_risks(config, factor);
    risk1 - risk0
}

const ENROLLMENT_START: &str = "2019-01-01";
const ENROLLMENT_SPAN_DAYS: u64 = 540;
const COURSE_DAYS: u64 = 180;
const PRESCRIBED_DOSES: u32 = 180;
// Secondary-data rates, fixed so the full analysis battery has events to work
// with without widening the config surface.
const HEPATOTOX_DISCONTINUATION_RATE: f64 = 0.03;
const OTHER_DISCONTINUATION_RATE: f64 = 0.02;
const VL_DETECTABLE_RATE_6M: f64 = 0.12;
const VL_DETECTABLE_RATE_12M: f64 = 0.10;
const ACTIVE_TB_RATE: f64 = 0.01;
const MEMS_BASE_RATE: f64 = 0.86;
const MEMS_INTERVENTION_LIFT: f64 = 0.06;

struct StratumState {
    gender: Gender,
    site: String,
    block: Vec<u8>,
}

fn next_arm(state: &mut StratumState, rng: &mut ChaCha8Rng) -> u8 {
    if state.block.is_empty() {
        let mut block = vec![1u8, 2, 3, 4];
        block.shuffle(rng);
        state.block = block;
    }
    state.block.pop().expect("refilled above")
}

fn draw_stratum(config: &SimulationConfig, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, s) in config.strata_distribution.iter().enumerate() {
        acc += s.proportion;
        if u < acc {
            return i;
        }
    }
    config.strata_distribution.len() - 1
}

fn passing_peth(rng: &mut ChaCha8Rng, cutoffs: &crate::config::OutcomeCutoffs) -> f64 {
    5.0 + rng.random::<f64>() * (cutoffs.peth_threshold - 10.0)
}

fn failing_peth(rng: &mut ChaCha8Rng, cutoffs: &crate::config::OutcomeCutoffs) -> f64 {
    cutoffs.peth_threshold + rng.random::<f64>() * 165.0
}

fn auditc_cutoff(gender: Gender, cutoffs: &crate::config::OutcomeCutoffs) -> u8 {
    match gender {
        Gender::Female => cutoffs.auditc_female,
        Gender::Male => cutoffs.auditc_male,
    }
}

/// Generate one replicate. `simulate_trial` is replicate 0.
pub fn simulate_replicate(config: &SimulationConfig, replicate: u64) -> Result<TrialDataset> {
    config.validate()?;
    let cutoffs = crate::config::OutcomeCutoffs::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate.wrapping_mul(2));

    let start: NaiveDate = ENROLLMENT_START.parse().expect("valid literal");
    let c = &config.true_coefficients;

    let mut strata: Vec<StratumState> = config
        .strata_distribution
        .iter()
        .map(|s| StratumState { gender: s.gender, site: s.site.clone(), block: Vec::new() })
        .collect();

    let mut participants = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let stratum_idx = draw_stratum(config, &mut rng);
        let arm = next_arm(&mut strata[stratum_idx], &mut rng);
        let gender = strata[stratum_idx].gender;
        let site = strata[stratum_idx].site.clone();
        let factors = derive_factor_indicators(arm as i64).expect("arms 1..=4");
        let alc = factors.alcohol_int as f64;
        let adh = factors.adherence_int as f64;

        let enrollment_date = start + Days::new(rng.random_range(0..ENROLLMENT_SPAN_DAYS));
        let scheduled_inh_completion_date = enrollment_date + Days::new(COURSE_DAYS);

        let cutoff = auditc_cutoff(gender, &cutoffs);
        let peth_0 = 40.0 + 260.0 * rng.random::<f64>().powi(2);
        let auditc_0 = rng.random_range(cutoff..=12);
        let drink_days_30 = rng.random_range(5..=30i64);
        let heavy_days_14 = rng.random_range(1..=14i64);
        let timepref_score = rng.random::<f64>();
        let riskpref_score = rng.random::<f64>();
        let readiness_score = rng.random::<f64>();

        let pi = expit(linear_predictor(c, alc, adh, gender, &site));
        let success = rng.random::<f64>() < pi;

        // Encode the drawn composite into raw measurements: success means all
        // four components pass; failure plants at least one measured failure.
        let (peth_3, peth_6, auditc_3, auditc_6) = if success {
            (
                passing_peth(&mut rng, &cutoffs),
                passing_peth(&mut rng, &cutoffs),
                rng.random_range(0..cutoff),
                rng.random_range(0..cutoff),
            )
        } else {
            let mut fail = [
                rng.random::<f64>() < 0.5,
                rng.random::<f64>() < 0.5,
                rng.random::<f64>() < 0.5,
                rng.random::<f64>() < 0.5,
            ];
            if fail.iter().all(|f| !f) {
                fail[1] = true;
            }
            (
                if fail[0] { failing_peth(&mut rng, &cutoffs) } else { passing_peth(&mut rng, &cutoffs) },
                if fail[1] { failing_peth(&mut rng, &cutoffs) } else { passing_peth(&mut rng, &cutoffs) },
                if fail[2] { rng.random_range(cutoff..=12) } else { rng.random_range(0..cutoff) },
                if fail[3] { rng.random_range(cutoff..=12) } else { rng.random_range(0..cutoff) },
            )
        };
        let peth_12 = if success {
            passing_peth(&mut rng, &cutoffs)
        } else {
            failing_peth(&mut rng, &cutoffs)
        };

        let (discontinued_inh, discontinuation_date, discontinuation_reason) = {
            let u: f64 = rng.random();
            if u < HEPATOTOX_DISCONTINUATION_RATE {
                let date = enrollment_date + Days::new(rng.random_range(30u64..150));
                let reason = if rng.random::<f64>() < 2.0 / 3.0 {
                    DiscontinuationReason::HepatotoxicityGrade3
                } else {
                    DiscontinuationReason::HepatotoxicityGrade4
                };
                (true, Some(date), Some(reason))
            } else if u < HEPATOTOX_DISCONTINUATION_RATE + OTHER_DISCONTINUATION_RATE {
                let date = enrollment_date + Days::new(rng.random_range(30u64..170));
                (true, Some(date), Some(DiscontinuationReason::Other))
            } else {
                (false, None, None)
            }
        };

        let vl_6 = rng.random::<f64>() < VL_DETECTABLE_RATE_6M;
        let vl_12 = rng.random::<f64>() < VL_DETECTABLE_RATE_12M;
        let active_tb = rng.random::<f64>() < ACTIVE_TB_RATE;

        participants.push(ParticipantRecord {
            participant_id: format!("sim-{i:05}"),
            site,
            gender,
            arm,
            enrollment_date,
            scheduled_inh_completion_date,
            discontinued_inh,
            discontinuation_date,
            discontinuation_reason,
            prescribed_doses: PRESCRIBED_DOSES,
            visit_attended: [true, true, true],
            peth: [Some(peth_0), Some(peth_3), Some(peth_6), Some(peth_12)],
            auditc: [Some(auditc_0), Some(auditc_3), Some(auditc_6)],
            viral_load_detectable: [Some(vl_6), Some(vl_12)],
            active_tb,
            drink_days_30: Some(drink_days_30),
            heavy_days_14: Some(heavy_days_14),
            timepref_score: Some(timepref_score),
            riskpref_score: Some(riskpref_score),
            readiness_score: Some(readiness_score),
        });
    }

    apply_missingness(config, &mut participants, &mut rng)?;

    let mems_events = if config.generate_mems {
        let mut mems_rng = ChaCha8Rng::seed_from_u64(config.seed);
        mems_rng.set_stream(replicate.wrapping_mul(2).wrapping_add(1));
        generate_mems_events(&participants, &mut mems_rng)
    } else {
        Vec::new()
    };

    Ok(TrialDataset { participants, mems_events, screened_declined: None })
}

/// One dataset from the master stream.
pub fn simulate_trial(config: &SimulationConfig) -> Result<TrialDataset> {
    simulate_replicate(config, 0)
}

fn apply_missingness(
    config: &SimulationConfig,
    participants: &mut [ParticipantRecord],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let probs: Vec<f64> = match &config.missingness {
        Missingness::None => return Ok(()),
        Missingness::Mcar { rate } => vec![*rate; participants.len()],
        Missingness::Mar { covariate, slope, rate } => {
            let mut values = Vec::with_capacity(participants.len());
            for p in participants.iter() {
                let v = p.baseline_value(covariate)?.ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "mar covariate {covariate} missing for {}",
                        p.participant_id
                    ))
                })?;
                values.push(v);
            }
            let center = crate::stats::mean(&values);
            let base = (rate / (1.0 - rate)).ln();
            values.into_iter().map(|v| expit(base + slope * (v - center))).collect()
        }
    };
    for (p, prob) in participants.iter_mut().zip(probs) {
        if rng.random::<f64>() < prob {
            // Lost to follow-up before month 3: no post-baseline drinking or
            // viral measurements; baseline and MEMS telemetry remain.
            p.visit_attended = [false, false, false];
            p.peth[1] = None;
            p.peth[2] = None;
            p.peth[3] = None;
            p.auditc[1] = None;
            p.auditc[2] = None;
            p.viral_load_detectable = [None, None];
        }
    }
    Ok(())
}

fn generate_mems_events(participants: &[ParticipantRecord], rng: &mut ChaCha8Rng) -> Vec<MemsEvent> {
    let mut events = Vec::new();
    for p in participants {
        let factors = p.factors();
        let jitter = 0.05 * (2.0 * rng.random::<f64>() - 1.0);
        let rate = (MEMS_BASE_RATE + MEMS_INTERVENTION_LIFT * factors.adherence_int as f64 + jitter)
            .clamp(0.05, 0.995);
        let last_day = match p.discontinuation_date {
            Some(d) => (d - p.enrollment_date).num_days().clamp(0, COURSE_DAYS as i64) as u64,
            None => COURSE_DAYS,
        };
        for day in 0..last_day {
            if rng.random::<f64>() < rate {
                let date = p.enrollment_date + Days::new(day);
                let ts: NaiveDateTime = date.and_hms_opt(8, 0, 0).expect("valid time");
                events.push(MemsEvent {
                    participant_id: p.participant_id.clone(),
                    opening_timestamp: ts,
                });
            }
        }
    }
    events
}

/// Monte Carlo summary of estimator behavior across simulated replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub replications: usize,
    pub n_analyzed: usize,
    pub n_failed: usize,
    pub n_per_trial: usize,
    pub seed: u64,
    pub true_rd: f64,
    pub mean_rd: f64,
    pub bias: f64,
    pub ci_level: f64,
    pub coverage: f64,
    pub alpha: f64,
    pub lrt_rejection_rate: f64,
}

struct ReplicateOutcome {
    estimate: Option<(f64, f64, f64)>,
    lrt_p: Option<f64>,
}

fn run_replicate(config: &SimulationConfig, acfg: &AnalysisConfig, r: u64) -> ReplicateOutcome {
    let result = (|| -> Result<ReplicateOutcome> {
        let ds = simulate_replicate(config, r)?;
        let outcomes = derive_all(&ds, acfg)?;
        let est = factorial_analysis(&ds, &outcomes, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, acfg)?;
        let inter = interaction_analysis(&ds, &outcomes, BinaryOutcome::NoHeavyDrinking, acfg)?;
        Ok(ReplicateOutcome {
            estimate: Some((est.rd, est.ci_rd.0, est.ci_rd.1)),
            lrt_p: Some(inter.lrt.p_value),
        })
    })();
    result.unwrap_or(ReplicateOutcome { estimate: None, lrt_p: None })
}

/// Repeatedly simulate and analyze, reporting bias against the analytic true
/// risk difference, empirical CI coverage, and the interaction LRT rejection
/// rate. Replicates run in parallel on independent substreams; results are
/// identical to a serial run.
pub fn monte_carlo_calibration(config: &SimulationConfig, replications: usize) -> Result<CalibrationReport> {
    config.validate()?;
    if replications == 0 {
        return Err(Error::InvalidInput("calibration needs at least 1 replication".into()));
    }
    // MEMS telemetry is dead weight here: only the drinking composite is
    // analyzed, and participant draws live on a separate stream.
    let mut sim_config = config.clone();
    sim_config.generate_mems = false;

    let acfg = AnalysisConfig::default();
    let true_rd = true_standardized_rd(config, Factor::Alcohol);
    let alpha = acfg.analysis.significance_level;
    let ci_level = acfg.analysis.ci_level;

    let results: Vec<ReplicateOutcome> = (0..replications as u64)
        .into_par_iter()
        .map(|r| run_replicate(&sim_config, &acfg, r))
        .collect();

    let mut n_failed = 0usize;
    let mut rds = Vec::new();
    let mut covered = 0usize;
    let mut rejections = 0usize;
    let mut n_lrt = 0usize;
    for r in &results {
        match (&r.estimate, &r.lrt_p) {
            (Some((rd, lo, hi)), Some(p)) => {
                rds.push(*rd);
                if *lo <= true_rd && true_rd <= *hi {
                    covered += 1;
                }
                n_lrt += 1;
                if *p < alpha {
                    rejections += 1;
                }
            }
            _ => n_failed += 1,
        }
    }
    let n_analyzed = rds.len();
    if n_analyzed == 0 {
        return Err(Error::InvalidInput("every calibration replicate failed to fit".into()));
    }
    let mean_rd = crate::stats::mean(&rds);
    Ok(CalibrationReport {
        replications,
        n_analyzed,
        n_failed,
        n_per_trial: config.n,
        seed: config.seed,
        true_rd,
        mean_rd,
        bias: mean_rd - true_rd,
        ci_level,
        coverage: covered as f64 / n_analyzed as f64,
        alpha,
        lrt_rejection_rate: rejections as f64 / n_lrt as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub se_rd: f64,
    pub se_log_rr: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// Nonparametric bootstrap of the standardized estimates: resample
/// participants with replacement, refit, take standard deviations across
/// replicates. Deterministic given the seed; replicates run in parallel on
/// independent substreams.
pub fn bootstrap_se(
    dataset: &TrialDataset,
    outcome: BinaryOutcome,
    factor: Factor,
    b: usize,
    seed: u64,
    config: &AnalysisConfig,
) -> Result<BootstrapSe> {
    if b < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 replicates, got {b}"
        )));
    }
    let outcomes: BTreeMap<String, DerivedOutcomes> = derive_all(dataset, config)?;
    let all: Vec<&ParticipantRecord> = dataset.participants.iter().collect();
    let y_opt: Vec<Option<f64>> = all
        .iter()
        .map(|p| {
            outcomes
                .get(&p.participant_id)
                .and_then(|o| outcome.value(o))
                .map(|v| if v { 1.0 } else { 0.0 })
        })
        .collect();
    let n = all.len();
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap on an empty dataset".into()));
    }
    let site_order: Vec<String> = if config.sites.is_empty() {
        dataset.observed_sites()
    } else {
        config.sites.clone()
    };
    let ci_level = config.analysis.ci_level;

    let draws: Vec<Option<(f64, Option<f64>)>> = (0..b as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep);
            let mut records = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let idx = rng.random_range(0..n);
                if let Some(v) = y_opt[idx] {
                    records.push(all[idx]);
                    y.push(v);
                }
            }
            match marginal_analysis_rows(&records, &y, None, factor, &site_order, ci_level) {
                Ok(est) => {
                    let log_rr = est.rr.filter(|r| *r > 0.0).map(f64::ln);
                    Some((est.rd, log_rr))
                }
                Err(_) => None,
            }
        })
        .collect();

    let mut rds = Vec::with_capacity(b);
    let mut log_rrs = Vec::with_capacity(b);
    let mut failures = 0usize;
    for d in draws {
        match d {
            Some((rd, Some(log_rr))) => {
                rds.push(rd);
                log_rrs.push(log_rr);
            }
            // A fit without a finite log risk ratio cannot contribute to
            // either scale consistently, so the whole replicate is dropped.
            Some((_, None)) | None => failures += 1,
        }
    }
    if (failures as f64) > 0.02 * b as f64 {
        return Err(Error::BootstrapUnreliable { failures, total: b });
    }
    Ok(BootstrapSe {
        se_rd: sample_sd(&rds),
        se_log_rr: sample_sd(&log_rrs),
        replicates: b,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missing::complete_case_filter;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn small_config(n: usize, seed: u64) -> SimulationConfig {
        let mut cfg = SimulationConfig::plan_defaults(n, seed);
        cfg.generate_mems = false;
        cfg
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.n = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.strata_distribution[0].proportion = 0.1;
        assert!(cfg.validate().is_err(), "proportions no longer sum to 1");

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.strata_distribution[0].proportion = -0.3;
        cfg.strata_distribution[1].proportion = 0.9;
        assert!(cfg.validate().is_err(), "negative proportion");

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.true_coefficients.site.insert("nowhere".into(), 0.5);
        assert!(cfg.validate().is_err(), "site effect without stratum");

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.missingness = Missingness::Mcar { rate: 1.5 };
        assert!(cfg.validate().is_err());

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.missingness = Missingness::Mar { covariate: "peth_0".into(), slope: 0.01, rate: 0.0 };
        assert!(cfg.validate().is_err(), "mar rate must be interior");

        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.missingness = Missingness::Mar { covariate: "site".into(), slope: 0.01, rate: 0.2 };
        assert!(cfg.validate().is_err(), "mar covariate must be a baseline column");

        assert!(SimulationConfig::plan_defaults(100, 1).validate().is_ok());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = SimulationConfig::plan_defaults(400, 7);
        let text = toml::to_string(&cfg).unwrap();
        let back = SimulationConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn same_seed_gives_identical_datasets() {
        let cfg = SimulationConfig::plan_defaults(150, 42);
        let a = simulate_trial(&cfg).unwrap();
        let b = simulate_trial(&cfg).unwrap();
        assert_eq!(a.participants, b.participants);
        assert_eq!(a.mems_events, b.mems_events);
        assert!(!a.mems_events.is_empty());
    }

    #[test]
    fn replicates_are_stable_and_distinct()  {
        let cfg = small_config(80, 9);
        let r5a = simulate_replicate(&cfg, 5).unwrap();
        let r5b = simulate_replicate(&cfg, 5).unwrap();
        let r6 = simulate_replicate(&cfg, 6).unwrap();
        assert_eq!(r5a.participants, r5b.participants);
        assert_ne!(r5a.participants, r6.participants);
        let master = simulate_trial(&cfg).unwrap();
        let r0 = simulate_replicate(&cfg, 0).unwrap();
        assert_eq!(master.participants, r0.participants);
    }

    #[test]
    fn mems_flag_does_not_perturb_participants() {
        let mut cfg = SimulationConfig::plan_defaults(120, 13);
        let with = simulate_trial(&cfg).unwrap();
        cfg.generate_mems = false;
        let without = simulate_trial(&cfg).unwrap();
        assert_eq!(with.participants, without.participants);
        assert!(without.mems_events.is_empty());
    }

    #[test]
    fn arm_counts_balanced_within_each_stratum() {
        let cfg = small_config(400, 3);
        let ds = simulate_trial(&cfg).unwrap();
        let mut counts: HashMap<(Gender, String), [usize; 4]> = HashMap::new();
        for p in &ds.participants {
            let e = counts.entry((p.gender, p.site.clone())).or_insert([0; 4]);
            e[(p.arm - 1) as usize] += 1;
        }
        assert_eq!(counts.len(), 4, "all four strata populated");
        for (stratum, arms) in counts {
            let max = arms.iter().max().unwrap();
            let min = arms.iter().min().unwrap();
            assert!(max - min <= 1, "stratum {stratum:?} arm counts {arms:?} unbalanced");
        }
    }

    #[test]
    fn generated_measurements_encode_the_drawn_outcome() {
        let cfg = small_config(300, 21);
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        // No missingness: the composite must be observed for everyone.
        for p in &ds.participants {
            assert!(outcomes[&p.participant_id].no_heavy_drinking.is_some());
        }
    }

    #[test]
    fn true_rd_matches_hand_computed_values() {
        let mut cfg = SimulationConfig::plan_defaults(100, 1);
        cfg.strata_distribution = vec![StratumProportion {
            gender: Gender::Female,
            site: "site_a".into(),
            proportion: 1.0,
        }];
        cfg.true_coefficients = TrueCoefficients {
            intercept: 0.0,
            alcohol: (3.0f64).ln(),
            adherence: 0.0,
            interaction: 0.0,
            gender_male: 0.0,
            site: BTreeMap::new(),
        };
        let (risk1, risk0) = true_standardized_risks(&cfg, Factor::Alcohol);
        assert_abs_diff_eq!(risk1, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(risk0, 0.50, epsilon = 1e-12);
        assert_abs_diff_eq!(true_standardized_rd(&cfg, Factor::Alcohol), 0.25, epsilon = 1e-12);

        // With an adherence effect the other factor averages 50/50.
        cfg.true_coefficients.adherence = 1.0;
        let (risk1, _) = true_standardized_risks(&cfg, Factor::Alcohol);
        let expected = 0.5 * expit((3.0f64).ln()) + 0.5 * expit((3.0f64).ln() + 1.0);
        assert_abs_diff_eq!(risk1, expected, epsilon = 1e-12);
        // For the adherence factor the roles swap.
        let (a1, a0) = true_standardized_risks(&cfg, Factor::Adherence);
        let e1 = 0.5 * expit(1.0) + 0.5 * expit((3.0f64).ln() + 1.0);
        let e0 = 0.5 * expit(0.0) + 0.5 * expit((3.0f64).ln());
        assert_abs_diff_eq!(a1, e1, epsilon = 1e-12);
        assert_abs_diff_eq!(a0, e0, epsilon = 1e-12);
    }

    #[test]
    fn interaction_zero_gives_additive_cell_log_odds() {
        let mut cfg = small_config(100_000, 4);
        cfg.true_coefficients.interaction = 0.0;
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        let mut succ = [0.0f64; 4];
        let mut tot = [0.0f64; 4];
        for p in &ds.participants {
            let v = outcomes[&p.participant_id].no_heavy_drinking.unwrap();
            let k = (p.arm - 1) as usize;
            tot[k] += 1.0;
            if v {
                succ[k] += 1.0;
            }
        }
        let lo: Vec<f64> = (0..4)
            .map(|k| {
                let p = succ[k] / tot[k];
                (p / (1.0 - p)).ln()
            })
            .collect();
        let nonadditivity = lo[3] - lo[2] - lo[1] + lo[0];
        assert!(
            nonadditivity.abs() < 0.02,
            "cell log-odds nonadditivity {nonadditivity} exceeds 0.02"
        );
    }

    #[test]
    fn fitted_estimate_recovers_analytic_truth() {
        let cfg = small_config(20_000, 17);
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        let est = factorial_analysis(&ds, &outcomes, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, &acfg)
            .unwrap();
        let truth = true_standardized_rd(&cfg, Factor::Alcohol);
        assert!(
            (est.rd - truth).abs() < 0.02,
            "rd {} vs analytic truth {truth}",
            est.rd
        );
    }

    #[test]
    fn mcar_missingness_hits_the_configured_rate() {
        let mut cfg = small_config(8_000, 29);
        cfg.missingness = Missingness::Mcar { rate: 0.25 };
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        let rows = complete_case_filter(&ds, &outcomes, BinaryOutcome::NoHeavyDrinking);
        let frac = rows.missing_fraction();
        assert!((frac - 0.25).abs() < 0.02, "missing fraction {frac}");
        // Baselines survive for every participant.
        assert!(ds.participants.iter().all(|p| p.peth[0].is_some()));
    }

    #[test]
    fn mar_missingness_tracks_the_covariate() {
        let mut cfg = small_config(8_000, 31);
        cfg.missingness =
            Missingness::Mar { covariate: "peth_0".into(), slope: 0.02, rate: 0.3 };
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        let (mut miss, mut obs) = (Vec::new(), Vec::new());
        for p in &ds.participants {
            let v = p.peth[0].unwrap();
            if outcomes[&p.participant_id].no_heavy_drinking.is_none() {
                miss.push(v);
            } else {
                obs.push(v);
            }
        }
        let rate = miss.len() as f64 / ds.participants.len() as f64;
        assert!((rate - 0.3).abs() < 0.06, "marginal rate {rate}");
        assert!(
            crate::stats::mean(&miss) > crate::stats::mean(&obs) + 10.0,
            "missingness should concentrate at high baseline drinking"
        );
    }

    #[test]
    fn calibration_report_is_deterministic_and_coherent() {
        let cfg = small_config(300, 5);
        let a = monte_carlo_calibration(&cfg, 20).unwrap();
        let b = monte_carlo_calibration(&cfg, 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_analyzed + a.n_failed, 20);
        assert!(a.coverage >= 0.0 && a.coverage <= 1.0);
        assert!(a.lrt_rejection_rate >= 0.0 && a.lrt_rejection_rate <= 1.0);
        assert_abs_diff_eq!(a.bias, a.mean_rd - a.true_rd, epsilon = 1e-15);
    }

    #[test]
    fn bootstrap_rejects_degenerate_replicate_counts() {
        let cfg = small_config(100, 2);
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        for b in [0usize, 1] {
            let err = bootstrap_se(&ds, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, b, 1, &acfg);
            assert!(err.is_err(), "B={b} must be rejected");
        }
    }

    #[test]
    fn bootstrap_is_deterministic_given_seed() {
        let cfg = small_config(250, 23);
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let a = bootstrap_se(&ds, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, 40, 99, &acfg).unwrap();
        let b = bootstrap_se(&ds, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, 40, 99, &acfg).unwrap();
        assert_eq!(a, b);
        assert!(a.se_rd > 0.0 && a.se_log_rr > 0.0);
    }

    #[test]
    fn bootstrap_se_tracks_delta_method_loosely() {
        let cfg = small_config(400, 37);
        let ds = simulate_trial(&cfg).unwrap();
        let acfg = AnalysisConfig::default();
        let outcomes = derive_all(&ds, &acfg).unwrap();
        let est = factorial_analysis(&ds, &outcomes, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, &acfg)
            .unwrap();
        let boot =
            bootstrap_se(&ds, BinaryOutcome::NoHeavyDrinking, Factor::Alcohol, 200, 7, &acfg).unwrap();
        let ratio = boot.se_rd / est.se_rd;
        assert!(
            ratio > 0.7 && ratio < 1.4,
            "bootstrap se {} vs delta se {}",
            boot.se_rd,
            est.se_rd
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn strata_and_blocks_respect_the_configuration(
            seed in 0u64..1000,
            w in 0.1f64..0.9,
        ) {
            let mut cfg = small_config(101, seed);
            cfg.strata_distribution = vec![
                StratumProportion { gender: Gender::Female, site: "site_a".into(), proportion: w },
                StratumProportion { gender: Gender::Male, site: "site_b".into(), proportion: 1.0 - w },
            ];
            cfg.true_coefficients.site = BTreeMap::new();
            let ds = simulate_trial(&cfg).unwrap();
            prop_assert_eq!(ds.participants.len(), 101);
            let mut per_stratum: HashMap<(Gender, String), [usize; 4]> = HashMap::new();
            for p in &ds.participants {
                // Every participant lands in a configured stratum.
                let valid = (p.gender == Gender::Female && p.site == "site_a")
                    || (p.gender == Gender::Male && p.site == "site_b");
                prop_assert!(valid, "unexpected stratum {:?}/{}", p.gender, p.site);
                per_stratum.entry((p.gender, p.site.clone())).or_insert([0; 4])[(p.arm - 1) as usize] += 1;
            }
            for arms in per_stratum.values() {
                let max = arms.iter().max().unwrap();
                let min = arms.iter().min().unwrap();
                prop_assert!(max - min <= 1, "arm counts {:?}", arms);
            }
        }
    }
}

