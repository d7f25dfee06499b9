//! CSV ingestion and canonical serialization for the trial data files.
//!
//! Schemas (exact column names, any column order, empty cell = missing):
//!
//! participants.csv: participant_id, site, gender, arm, enrollment_date,
//! scheduled_inh_completion_date, discontinued_inh, discontinuation_date,
//! discontinuation_reason, prescribed_doses, visit3_attended, visit6_attended,
//! visit12_attended, peth_0, peth_3, peth_6, peth_12, auditc_0, auditc_3,
//! auditc_6, vl6_detectable, vl12_detectable, active_tb, drink_days_30,
//! heavy_days_14, timepref_score, riskpref_score, readiness_score
//!
//! mems.csv: participant_id, opening_timestamp
//!
//! screened.csv (optional): screen_id, then any of gender, peth_0, auditc_0,
//! drink_days_30, heavy_days_14, timepref_score, riskpref_score,
//! readiness_score
//!
//! Viral-load cells accept the literals `true`/`false` or a numeric copies/mL
//! value, which is converted using the configured limit of detection
//! (detectable iff value >= limit). Plain `0`/`1` are read as copies/mL.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};

use super::{
    DiscontinuationReason, Gender, MemsEvent, ParticipantRecord, ScreenedRecord, TrialDataset,
    ValidationReport, SCREENING_COLUMNS,
};
use crate::config::AnalysisConfig;
use crate::error::{Error, Result, RowError};

pub const PARTICIPANT_COLUMNS: [&str; 28] = [
    "participant_id",
    "site",
    "gender",
    "arm",
    "enrollment_date",
    "scheduled_inh_completion_date",
    "discontinued_inh",
    "discontinuation_date",
    "discontinuation_reason",
    "prescribed_doses",
    "visit3_attended",
    "visit6_attended",
    "visit12_attended",
    "peth_0",
    "peth_3",
    "peth_6",
    "peth_12",
    "auditc_0",
    "auditc_3",
    "auditc_6",
    "vl6_detectable",
    "vl12_detectable",
    "active_tb",
    "drink_days_30",
    "heavy_days_14",
    "timepref_score",
    "riskpref_score",
    "readiness_score",
];

pub const MEMS_COLUMNS: [&str; 2] = ["participant_id", "opening_timestamp"];

struct HeaderIndex {
    by_name: HashMap<String, usize>,
}

impl HeaderIndex {
    fn build(file: &str, headers: &csv::StringRecord, required: &[&str], optional: &[&str]) -> Result<Self> {
        let mut by_name = HashMap::new();
        let mut unknown = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            let name = h.trim();
            if by_name.insert(name.to_string(), i).is_some() {
                return Err(Error::MalformedHeader {
                    file: file.to_string(),
                    detail: format!("duplicate column `{name}`"),
                });
            }
            if !required.contains(&name) && !optional.contains(&name) {
                unknown.push(name.to_string());
            }
        }
        let missing: Vec<&str> =
            required.iter().copied().filter(|c| !by_name.contains_key(*c)).collect();
        if !missing.is_empty() || !unknown.is_empty() {
            let mut detail = String::new();
            if !missing.is_empty() {
                detail.push_str(&format!("missing column(s) {missing:?}"));
            }
            if !unknown.is_empty() {
                if !detail.is_empty() {
                    detail.push_str("; ");
                }
                detail.push_str(&format!("unknown column(s) {unknown:?}"));
            }
            return Err(Error::MalformedHeader { file: file.to_string(), detail });
        }
        Ok(HeaderIndex { by_name })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str) -> &'r str {
        self.by_name
            .get(name)
            .and_then(|&i| record.get(i))
            .map(str::trim)
            .unwrap_or("")
    }

    fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }
}

struct RowCtx<'a> {
    row: usize,
    errors: &'a mut Vec<RowError>,
}

impl RowCtx<'_> {
    fn fail<T>(&mut self, column: &str, message: String) -> Option<T> {
        self.errors.push(RowError { row: self.row, column: column.to_string(), message });
        None
    }

    fn required<T>(&mut self, column: &str, cell: &str, parsed: Option<T>) -> Option<T> {
        if cell.is_empty() {
            return self.fail(column, "value required but cell is empty".into());
        }
        match parsed {
            Some(v) => Some(v),
            None => self.fail(column, format!("cannot parse `{cell}`")),
        }
    }
}

fn parse_bool(cell: &str) -> Option<bool> {
    match cell.to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

fn parse_date(cell: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(cell, "%Y-%m-%d").ok()
}

fn parse_datetime(cell: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(cell, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(cell, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn parse_gender(cell: &str) -> Option<Gender> {
    match cell.to_ascii_lowercase().as_str() {
        "female" => Some(Gender::Female),
        "male" => Some(Gender::Male),
        _ => None,
    }
}

fn parse_reason(cell: &str) -> Option<DiscontinuationReason> {
    match cell {
        "hepatotoxicity_grade3" => Some(DiscontinuationReason::HepatotoxicityGrade3),
        "hepatotoxicity_grade4" => Some(DiscontinuationReason::HepatotoxicityGrade4),
        "other" => Some(DiscontinuationReason::Other),
        _ => None,
    }
}

fn opt_f64(ctx: &mut RowCtx, column: &str, cell: &str, nonnegative: bool) -> Option<Option<f64>> {
    if cell.is_empty() {
        return Some(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() && (!nonnegative || v >= 0.0) => Some(Some(v)),
        Ok(v) => ctx.fail(column, format!("value {v} out of range")),
        Err(_) => ctx.fail(column, format!("cannot parse `{cell}` as a number")),
    }
}

fn opt_auditc(ctx: &mut RowCtx, column: &str, cell: &str) -> Option<Option<u8>> {
    if cell.is_empty() {
        return Some(None);
    }
    match cell.parse::<u8>() {
        Ok(v) if v <= 12 => Some(Some(v)),
        Ok(v) => ctx.fail(column, format!("AUDIT-C score must be in 0..=12, got {v}")),
        Err(_) => ctx.fail(column, format!("cannot parse `{cell}` as an AUDIT-C score")),
    }
}

fn opt_count(ctx: &mut RowCtx, column: &str, cell: &str) -> Option<Option<i64>> {
    if cell.is_empty() {
        return Some(None);
    }
    match cell.parse::<i64>() {
        Ok(v) if v >= 0 => Some(Some(v)),
        Ok(v) => ctx.fail(column, format!("count must be non-negative, got {v}")),
        Err(_) => ctx.fail(column, format!("cannot parse `{cell}` as a count")),
    }
}

/// `true`/`false`, or numeric copies/mL compared against the detection limit.
fn opt_detectable(ctx: &mut RowCtx, column: &str, cell: &str, lod: f64) -> Option<Option<bool>> {
    if cell.is_empty() {
        return Some(None);
    }
    match cell.to_ascii_lowercase().as_str() {
        "true" => return Some(Some(true)),
        "false" => return Some(Some(false)),
        _ => {}
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Some(Some(v >= lod)),
        _ => ctx.fail(column, format!("cannot parse `{cell}` as true/false or copies/mL")),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => Error::MalformedHeader { file: path.display().to_string(), detail: e.to_string() },
        })
}

pub fn load_participants_csv(path: &Path, config: &AnalysisConfig) -> Result<Vec<ParticipantRecord>> {
    let file = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader { file: file.clone(), detail: e.to_string() })?
        .clone();
    let idx = HeaderIndex::build(&file, &headers, &PARTICIPANT_COLUMNS, &[])?;

    let lod = config.cutoffs.vl_limit_of_detection;
    let mut errors: Vec<RowError> = Vec::new();
    let mut out = Vec::new();
    let mut first_row_of: HashMap<String, usize> = HashMap::new();

    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { row, column: "<record>".into(), message: e.to_string() });
                continue;
            }
        };
        let mut ctx = RowCtx { row, errors: &mut errors };
        let parsed = parse_participant(&mut ctx, &idx, &rec, lod, config);
        if let Some(p) = parsed {
            if let Some(first) = first_row_of.insert(p.participant_id.clone(), row) {
                errors.push(RowError {
                    row,
                    column: "participant_id".into(),
                    message: format!("duplicate participant_id `{}` (first at row {first})", p.participant_id),
                });
            } else {
                out.push(p);
            }
        }
    }

    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::RowErrors { file, errors })
    }
}

fn parse_participant(
    ctx: &mut RowCtx,
    idx: &HeaderIndex,
    rec: &csv::StringRecord,
    lod: f64,
    config: &AnalysisConfig,
) -> Option<ParticipantRecord> {
    let id_cell = idx.get(rec, "participant_id");
    let participant_id = ctx.required("participant_id", id_cell, (!id_cell.is_empty()).then(|| id_cell.to_string()));

    let site_cell = idx.get(rec, "site");
    let site = ctx.required("site", site_cell, (!site_cell.is_empty()).then(|| site_cell.to_string()));
    let site = site.and_then(|s| {
        if !config.sites.is_empty() && !config.sites.iter().any(|c| c == &s) {
            ctx.fail("site", format!("site `{s}` is not in the configured site list"))
        } else {
            Some(s)
        }
    });

    let gender_cell = idx.get(rec, "gender");
    let gender = ctx.required("gender", gender_cell, parse_gender(gender_cell));

    let arm_cell = idx.get(rec, "arm");
    let arm = ctx
        .required("arm", arm_cell, arm_cell.parse::<i64>().ok())
        .and_then(|a| {
            if (1..=4).contains(&a) {
                Some(a as u8)
            } else {
                ctx.fail("arm", format!("arm must be in 1..=4, got {a}"))
            }
        });

    let enrollment = ctx.required("enrollment_date", idx.get(rec, "enrollment_date"), parse_date(idx.get(rec, "enrollment_date")));
    let scheduled = ctx.required(
        "scheduled_inh_completion_date",
        idx.get(rec, "scheduled_inh_completion_date"),
        parse_date(idx.get(rec, "scheduled_inh_completion_date")),
    );

    let discontinued = ctx.required("discontinued_inh", idx.get(rec, "discontinued_inh"), parse_bool(idx.get(rec, "discontinued_inh")));

    let disc_date_cell = idx.get(rec, "discontinuation_date");
    let discontinuation_date = if disc_date_cell.is_empty() {
        Some(None)
    } else {
        match parse_date(disc_date_cell) {
            Some(d) => Some(Some(d)),
            None => ctx.fail("discontinuation_date", format!("cannot parse `{disc_date_cell}` as a date")),
        }
    };

    let reason_cell = idx.get(rec, "discontinuation_reason");
    let discontinuation_reason = if reason_cell.is_empty() {
        Some(None)
    } else {
        match parse_reason(reason_cell) {
            Some(r) => Some(Some(r)),
            None => ctx.fail(
                "discontinuation_reason",
                format!("expected hepatotoxicity_grade3, hepatotoxicity_grade4, or other; got `{reason_cell}`"),
            ),
        }
    };

    let doses_cell = idx.get(rec, "prescribed_doses");
    let prescribed_doses = if doses_cell.is_empty() {
        Some(180)
    } else {
        match doses_cell.parse::<u32>() {
            Ok(v) if (1..=180).contains(&v) => Some(v),
            Ok(v) => ctx.fail("prescribed_doses", format!("prescribed_doses must be in 1..=180, got {v}")),
            Err(_) => ctx.fail("prescribed_doses", format!("cannot parse `{doses_cell}`")),
        }
    };

    let mut visits = [false; 3];
    let mut visits_ok = true;
    for (slot, col) in ["visit3_attended", "visit6_attended", "visit12_attended"].iter().enumerate() {
        match ctx.required(col, idx.get(rec, col), parse_bool(idx.get(rec, col))) {
            Some(v) => visits[slot] = v,
            None => visits_ok = false,
        }
    }

    let peth_0 = opt_f64(ctx, "peth_0", idx.get(rec, "peth_0"), true);
    let peth_3 = opt_f64(ctx, "peth_3", idx.get(rec, "peth_3"), true);
    let peth_6 = opt_f64(ctx, "peth_6", idx.get(rec, "peth_6"), true);
    let peth_12 = opt_f64(ctx, "peth_12", idx.get(rec, "peth_12"), true);

    let auditc_0 = opt_auditc(ctx, "auditc_0", idx.get(rec, "auditc_0"));
    let auditc_3 = opt_auditc(ctx, "auditc_3", idx.get(rec, "auditc_3"));
    let auditc_6 = opt_auditc(ctx, "auditc_6", idx.get(rec, "auditc_6"));

    let vl6 = opt_detectable(ctx, "vl6_detectable", idx.get(rec, "vl6_detectable"), lod);
    let vl12 = opt_detectable(ctx, "vl12_detectable", idx.get(rec, "vl12_detectable"), lod);

    let active_tb = ctx.required("active_tb", idx.get(rec, "active_tb"), parse_bool(idx.get(rec, "active_tb")));

    let drink_days_30 = opt_count(ctx, "drink_days_30", idx.get(rec, "drink_days_30"));
    let heavy_days_14 = opt_count(ctx, "heavy_days_14", idx.get(rec, "heavy_days_14"));
    let timepref_score = opt_f64(ctx, "timepref_score", idx.get(rec, "timepref_score"), false);
    let riskpref_score = opt_f64(ctx, "riskpref_score", idx.get(rec, "riskpref_score"), false);
    let readiness_score = opt_f64(ctx, "readiness_score", idx.get(rec, "readiness_score"), false);

    Some(ParticipantRecord {
        participant_id: participant_id?,
        site: site?,
        gender: gender?,
        arm: arm?,
        enrollment_date: enrollment?,
        scheduled_inh_completion_date: scheduled?,
        discontinued_inh: discontinued?,
        discontinuation_date: discontinuation_date?,
        discontinuation_reason: discontinuation_reason?,
        prescribed_doses: prescribed_doses?,
        visit_attended: if visits_ok { visits } else { return None },
        peth: [peth_0?, peth_3?, peth_6?, peth_12?],
        auditc: [auditc_0?, auditc_3?, auditc_6?],
        viral_load_detectable: [vl6?, vl12?],
        active_tb: active_tb?,
        drink_days_30: drink_days_30?,
        heavy_days_14: heavy_days_14?,
        timepref_score: timepref_score?,
        riskpref_score: riskpref_score?,
        readiness_score: readiness_score?,
    })
}

pub fn load_mems_csv(path: &Path) -> Result<Vec<MemsEvent>> {
    let file = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader { file: file.clone(), detail: e.to_string() })?
        .clone();
    let idx = HeaderIndex::build(&file, &headers, &MEMS_COLUMNS, &[])?;

    let mut errors = Vec::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { row, column: "<record>".into(), message: e.to_string() });
                continue;
            }
        };
        let mut ctx = RowCtx { row, errors: &mut errors };
        let id_cell = idx.get(&rec, "participant_id");
        let id = ctx.required("participant_id", id_cell, (!id_cell.is_empty()).then(|| id_cell.to_string()));
        let ts_cell = idx.get(&rec, "opening_timestamp");
        let ts = ctx.required("opening_timestamp", ts_cell, parse_datetime(ts_cell));
        if let (Some(participant_id), Some(opening_timestamp)) = (id, ts) {
            out.push(MemsEvent { participant_id, opening_timestamp });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::RowErrors { file, errors })
    }
}

pub fn load_screened_csv(path: &Path) -> Result<Vec<ScreenedRecord>> {
    let file = path.display().to_string();
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader { file: file.clone(), detail: e.to_string() })?
        .clone();
    let mut optional: Vec<&str> = vec!["gender"];
    optional.extend(SCREENING_COLUMNS);
    let idx = HeaderIndex::build(&file, &headers, &["screen_id"], &optional)?;

    let present: Vec<&str> = SCREENING_COLUMNS.iter().copied().filter(|c| idx.contains(c)).collect();

    let mut errors = Vec::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { row, column: "<record>".into(), message: e.to_string() });
                continue;
            }
        };
        let mut ctx = RowCtx { row, errors: &mut errors };
        let id_cell = idx.get(&rec, "screen_id");
        let screen_id = ctx.required("screen_id", id_cell, (!id_cell.is_empty()).then(|| id_cell.to_string()));
        let gender = if idx.contains("gender") {
            let cell = idx.get(&rec, "gender");
            if cell.is_empty() {
                Some(None)
            } else {
                match parse_gender(cell) {
                    Some(g) => Some(Some(g)),
                    None => ctx.fail("gender", format!("cannot parse `{cell}`")),
                }
            }
        } else {
            Some(None)
        };
        let mut values = BTreeMap::new();
        let mut values_ok = true;
        for col in &present {
            match opt_f64(&mut ctx, col, idx.get(&rec, col), false) {
                Some(v) => {
                    values.insert(col.to_string(), v);
                }
                None => values_ok = false,
            }
        }
        if let (Some(screen_id), Some(gender), true) = (screen_id, gender, values_ok) {
            out.push(ScreenedRecord { screen_id, gender, values });
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::RowErrors { file, errors })
    }
}

/// Load and join the dataset, returning the validation report instead of
/// gating on it. Malformed rows and failed joins still fail the load; only
/// dataset-level validation findings are deferred to the caller.
pub fn load_trial_data_lenient(
    participants_path: &Path,
    mems_path: &Path,
    screened_path: Option<&Path>,
    config: &AnalysisConfig,
) -> Result<(TrialDataset, ValidationReport)> {
    let participants = load_participants_csv(participants_path, config)?;
    let mems_events = load_mems_csv(mems_path)?;

    // Orphan MEMS events are join failures, reported with their row numbers.
    let known: std::collections::HashSet<&str> =
        participants.iter().map(|p| p.participant_id.as_str()).collect();
    let orphans: Vec<RowError> = mems_events
        .iter()
        .enumerate()
        .filter(|(_, e)| !known.contains(e.participant_id.as_str()))
        .map(|(i, e)| RowError {
            row: i + 1,
            column: "participant_id".into(),
            message: format!("unknown participant_id `{}`", e.participant_id),
        })
        .collect();
    if !orphans.is_empty() {
        return Err(Error::RowErrors { file: mems_path.display().to_string(), errors: orphans });
    }

    let screened_declined = match screened_path {
        Some(p) => Some(load_screened_csv(p)?),
        None => None,
    };

    let dataset = TrialDataset { participants, mems_events, screened_declined };
    let report = super::validate(&dataset);
    Ok((dataset, report))
}

/// Load, join, and validate the full dataset. Hard validation errors fail the
/// load; warnings are returned for the report.
pub fn load_trial_data(
    participants_path: &Path,
    mems_path: &Path,
    screened_path: Option<&Path>,
    config: &AnalysisConfig,
) -> Result<(TrialDataset, ValidationReport)> {
    let (dataset, report) = load_trial_data_lenient(participants_path, mems_path, screened_path, config)?;
    if !report.is_ok() {
        return Err(Error::ValidationFailed(report.errors.len()));
    }
    Ok((dataset, report))
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Canonical participants.csv rendering; `load_participants_csv` of the output
/// reproduces the input records exactly.
pub fn write_participants_csv(participants: &[ParticipantRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PARTICIPANT_COLUMNS).expect("in-memory write");
    for p in participants {
        let fields: Vec<String> = vec![
            p.participant_id.clone(),
            p.site.clone(),
            p.gender.as_str().to_string(),
            p.arm.to_string(),
            p.enrollment_date.to_string(),
            p.scheduled_inh_completion_date.to_string(),
            p.discontinued_inh.to_string(),
            fmt_opt(p.discontinuation_date),
            p.discontinuation_reason.map(|r| r.as_str().to_string()).unwrap_or_default(),
            p.prescribed_doses.to_string(),
            p.visit_attended[0].to_string(),
            p.visit_attended[1].to_string(),
            p.visit_attended[2].to_string(),
            fmt_opt_f64(p.peth[0]),
            fmt_opt_f64(p.peth[1]),
            fmt_opt_f64(p.peth[2]),
            fmt_opt_f64(p.peth[3]),
            fmt_opt(p.auditc[0]),
            fmt_opt(p.auditc[1]),
            fmt_opt(p.auditc[2]),
            fmt_opt(p.viral_load_detectable[0]),
            fmt_opt(p.viral_load_detectable[1]),
            p.active_tb.to_string(),
            fmt_opt(p.drink_days_30),
            fmt_opt(p.heavy_days_14),
            fmt_opt_f64(p.timepref_score),
            fmt_opt_f64(p.riskpref_score),
            fmt_opt_f64(p.readiness_score),
        ];
        w.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

pub fn write_mems_csv(events: &[MemsEvent]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MEMS_COLUMNS).expect("in-memory write");
    for e in events {
        w.write_record(&[
            e.participant_id.clone(),
            e.opening_timestamp.format("%Y-%m-%dT%H:%M:%S").to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

pub fn write_screened_csv(screened: &[ScreenedRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut cols: Vec<&str> = vec!["screen_id", "gender"];
    cols.extend(SCREENING_COLUMNS);
    w.write_record(&cols).expect("in-memory write");
    for s in screened {
        let mut fields = vec![
            s.screen_id.clone(),
            s.gender.map(|g| g.as_str().to_string()).unwrap_or_default(),
        ];
        for col in SCREENING_COLUMNS {
            fields.push(fmt_opt_f64(s.values.get(col).copied().flatten()));
        }
        w.write_record(&fields).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const HEADER: &str = "participant_id,site,gender,arm,enrollment_date,scheduled_inh_completion_date,discontinued_inh,discontinuation_date,discontinuation_reason,prescribed_doses,visit3_attended,visit6_attended,visit12_attended,peth_0,peth_3,peth_6,peth_12,auditc_0,auditc_3,auditc_6,vl6_detectable,vl12_detectable,active_tb,drink_days_30,heavy_days_14,timepref_score,riskpref_score,readiness_score";

    fn row(id: &str, arm: &str) -> String {
        format!("{id},site_a,female,{arm},2019-01-10,2019-07-09,false,,,180,true,true,true,120,20,10,15,6,2,1,false,false,false,12,4,0.5,0.3,7")
    }

    #[test]
    fn well_formed_file_parses_all_rows() {
        let content = format!("{HEADER}\n{}\n{}\n{}\n{}\n", row("p1", "1"), row("p2", "2"), row("p3", "3"), row("p4", "4"));
        let f = write_temp(&content);
        let got = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got[1].arm, 2);
        assert_eq!(got[0].peth[2], Some(10.0));
    }

    #[test]
    fn arm_out_of_range_names_row_and_constraint() {
        let content = format!("{HEADER}\n{}\n{}\n", row("p1", "1"), row("p2", "5"));
        let f = write_temp(&content);
        let err = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap_err();
        match err {
            Error::RowErrors { errors, .. } => {
                assert_eq!(errors.len(), 1);
                assert_eq!(errors[0].row, 2);
                assert_eq!(errors[0].column, "arm");
                assert!(errors[0].message.contains("1..=4"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_id_reported_with_rows() {
        let content = format!("{HEADER}\n{}\n{}\n", row("p1", "1"), row("p1", "2"));
        let f = write_temp(&content);
        let err = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate participant_id"));
    }

    #[test]
    fn missing_column_is_malformed_header() {
        let content = "participant_id,site\np1,site_a\n";
        let f = write_temp(content);
        let err = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }));
    }

    #[test]
    fn orphan_mems_event_fails_join() {
        let pf = write_temp(&format!("{HEADER}\n{}\n", row("p1", "1")));
        let mf = write_temp("participant_id,opening_timestamp\np9,2019-01-11T09:00:00\n");
        let err = load_trial_data(pf.path(), mf.path(), None, &AnalysisConfig::default()).unwrap_err();
        assert!(err.to_string().contains("unknown participant_id `p9`"));
    }

    #[test]
    fn numeric_viral_load_converted_with_lod() {
        let base = row("p1", "1");
        // vl6 = 20 copies (below LOD 50 -> undetectable), vl12 = 1000 -> detectable
        let modified = base.replace(",false,false,false,", ",20,1000,false,");
        let content = format!("{HEADER}\n{modified}\n");
        let f = write_temp(&content);
        let got = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap();
        assert_eq!(got[0].viral_load_detectable, [Some(false), Some(true)]);
    }

    #[test]
    fn configured_site_list_is_enforced() {
        let content = format!("{HEADER}\n{}\n", row("p1", "1"));
        let f = write_temp(&content);
        let cfg =
            AnalysisConfig { sites: vec!["elsewhere".to_string()], ..AnalysisConfig::default() };
        let err = load_participants_csv(f.path(), &cfg).unwrap_err();
        assert!(err.to_string().contains("site"));
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let content = format!("{HEADER}\n{}\n{}\n", row("p1", "1"), row("p2", "4"));
        let f = write_temp(&content);
        let first = load_participants_csv(f.path(), &AnalysisConfig::default()).unwrap();
        let rendered = write_participants_csv(&first);
        let f2 = write_temp(&rendered);
        let second = load_participants_csv(f2.path(), &AnalysisConfig::default()).unwrap();
        assert_eq!(first, second);
        assert_eq!(rendered, write_participants_csv(&second));
    }
}
