//! Report serialization: canonical JSON, human-readable markdown, and a
//! fixed set of CSV tables.

use serde_json::Value;

use crate::describe::{GroupComparisonTable, VariableSummary};
use crate::error::{Error, Result};
use crate::standardize::MarginalEstimate;
use crate::stats::TestResult;

use super::{AnalysisPayload, AnalysisReport, AnalysisStatus};

/// Pretty-printed JSON with a trailing newline. Serialization of a non-finite
/// number would silently produce JSON `null`, so the rendered document is
/// checked and any null is rejected with its path (every optional field in
/// the report types is skipped when absent, never written as null).
pub(crate) fn render_json(report: &AnalysisReport) -> Result<String> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::InvalidInput(format!("report serialization failed: {e}")))?;
    let value: Value = serde_json::from_str(&text).expect("serde_json output must parse");
    check_no_nulls(&value, "report")?;
    Ok(text + "\n")
}

fn check_no_nulls(value: &Value, path: &str) -> Result<()> {
    match value {
        Value::Null => Err(Error::InvalidInput(format!(
            "non-finite number at {path} (serialized as JSON null)"
        ))),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| check_no_nulls(v, &format!("{path}[{i}]"))),
        Value::Object(map) => {
            map.iter().try_for_each(|(k, v)| check_no_nulls(v, &format!("{path}.{k}")))
        }
        _ => Ok(()),
    }
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        "<0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

fn fmt_test(t: &TestResult) -> String {
    format!("{} = {:.4}, df = {}, p = {}", t.method, t.statistic, t.df, fmt_p(t.p_value))
}

fn summary_cell(s: &VariableSummary) -> String {
    match s {
        VariableSummary::Continuous { n, mean, sd, p0, p50, p100, .. } => {
            match (mean, sd, p0, p50, p100) {
                (Some(m), Some(s), Some(lo), Some(med), Some(hi)) => {
                    format!("n={n}, mean {m:.2} (sd {s:.2}), median {med:.2} [{lo:.2}, {hi:.2}]")
                }
                (Some(m), _, _, _, _) => format!("n={n}, mean {m:.2}"),
                _ => format!("n={n}"),
            }
        }
        VariableSummary::Categorical { n, levels } => {
            let cells: Vec<String> = levels
                .iter()
                .map(|(level, count, prop)| format!("{level}: {count} ({:.1}%)", prop * 100.0))
                .collect();
            format!("n={n}; {}", cells.join("; "))
        }
    }
}

fn push_marginal(out: &mut String, est: &MarginalEstimate) {
    out.push_str(&format!(
        "- risk({} = 1): {:.4}; risk({} = 0): {:.4}\n",
        est.factor, est.risk1, est.factor, est.risk0
    ));
    out.push_str(&format!(
        "- risk difference: {:.4} (se {:.4}, ci {:.4} to {:.4}, p {})\n",
        est.rd,
        est.se_rd,
        est.ci_rd.0,
        est.ci_rd.1,
        fmt_p(est.p_rd)
    ));
    match (est.rr, est.ci_rr, est.p_rr) {
        (Some(rr), Some(ci), Some(p)) => out.push_str(&format!(
            "- risk ratio: {:.4} (ci {:.4} to {:.4}, p {})\n",
            rr,
            ci.0,
            ci.1,
            fmt_p(p)
        )),
        _ => out.push_str("- risk ratio: not estimable (a counterfactual risk is zero)\n"),
    }
    out.push_str(&format!("- n: {}; model columns: {}\n", est.n, est.model_columns.join(", ")));
}

fn marginal_row(label: &str, est: &MarginalEstimate) -> String {
    let rr = match (est.rr, est.ci_rr) {
        (Some(rr), Some(ci)) => format!("{:.4} ({:.4}, {:.4})", rr, ci.0, ci.1),
        _ => "-".to_string(),
    };
    format!(
        "| {label} | {:.4} ({:.4}, {:.4}) | {} | {rr} | {} |\n",
        est.rd,
        est.ci_rd.0,
        est.ci_rd.1,
        fmt_p(est.p_rd),
        est.n
    )
}

fn push_comparison(out: &mut String, t: &GroupComparisonTable) {
    out.push_str(&format!(
        "| variable | {} (n={}) | {} (n={}) | test | p |\n|---|---|---|---|---|\n",
        t.label_a, t.n_a, t.label_b, t.n_b
    ));
    for row in &t.rows {
        let (test, p) = match (&row.test, &row.note) {
            (Some(test), _) => {
                (format!("{} = {:.4}", test.method, test.statistic), fmt_p(test.p_value))
            }
            (None, Some(note)) => (note.clone(), "-".to_string()),
            (None, None) => ("-".to_string(), "-".to_string()),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            row.column,
            summary_cell(&row.a),
            summary_cell(&row.b),
            test,
            p
        ));
    }
}

fn push_payload(out: &mut String, payload: &AnalysisPayload) {
    match payload {
        AnalysisPayload::NotProduced => {}
        AnalysisPayload::Descriptive(t) => {
            out.push_str(&format!(
                "| variable | overall (n={}) | arm 1 (n={}) | arm 2 (n={}) | arm 3 (n={}) | arm 4 (n={}) |\n",
                t.n_overall, t.n_by_arm[0], t.n_by_arm[1], t.n_by_arm[2], t.n_by_arm[3]
            ));
            out.push_str("|---|---|---|---|---|---|\n");
            for row in &t.rows {
                let arms: Vec<String> = row.by_arm.iter().map(summary_cell).collect();
                out.push_str(&format!(
                    "| {} | {} | {} |\n",
                    row.variable,
                    summary_cell(&row.overall),
                    arms.join(" | ")
                ));
            }
        }
        AnalysisPayload::TimepointProportions { rows } => {
            out.push_str(
                "| month | arm | peth measured | peth below threshold | audit-c measured | audit-c below cutoff |\n|---|---|---|---|---|---|\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:.4} | {} | {:.4} |\n",
                    r.month,
                    r.arm,
                    r.n_measured_peth,
                    r.peth_below_threshold,
                    r.n_measured_auditc,
                    r.auditc_below_cutoff
                ));
            }
        }
        AnalysisPayload::GroupComparison(t) => push_comparison(out, t),
        AnalysisPayload::Marginal(est) => push_marginal(out, est),
        AnalysisPayload::Interaction(rep) => {
            out.push_str(&format!("- interaction test: {}\n", fmt_test(&rep.lrt)));
            out.push_str(&format!(
                "- significant at {}: {}\n",
                rep.significance_level,
                if rep.significant { "yes" } else { "no" }
            ));
            out.push_str(&format!("- {}\n", rep.note));
            if !rep.stratified.is_empty() {
                out.push_str(
                    "\n| contrast | rd (ci) | p | rr (ci) | n |\n|---|---|---|---|---|\n",
                );
                for s in &rep.stratified {
                    out.push_str(&marginal_row(&s.label, &s.estimate));
                }
            }
        }
        AnalysisPayload::HepatotoxContrasts(rep) => {
            out.push_str("- events/n by arm: ");
            let cells: Vec<String> = (0..4)
                .map(|i| format!("arm {}: {}/{}", i + 1, rep.events_by_arm[i], rep.n_by_arm[i]))
                .collect();
            out.push_str(&cells.join("; "));
            out.push('\n');
            out.push_str(&format!(
                "- model: {}\n",
                if rep.separate_fits {
                    "separate fit per contrast".to_string()
                } else {
                    format!("shared fit ({})", rep.model_columns.join(", "))
                }
            ));
            out.push_str("\n| contrast | rd (ci) | p | rr (ci) | n |\n|---|---|---|---|---|\n");
            for c in &rep.contrasts {
                match (&c.estimate, &c.error) {
                    (Some(est), _) => out.push_str(&marginal_row(&c.label, est)),
                    (None, Some(err)) => {
                        out.push_str(&format!("| {} | failed: {} | - | - | - |\n", c.label, err))
                    }
                    (None, None) => out.push_str(&format!("| {} | - | - | - | - |\n", c.label)),
                }
            }
        }
        AnalysisPayload::Linear(est) => {
            out.push_str(&format!(
                "- coefficient for {}: {:.4} (se {:.4}, ci {:.4} to {:.4}, p {})\n",
                est.factor,
                est.coefficient,
                est.se,
                est.ci.0,
                est.ci.1,
                fmt_p(est.p_value)
            ));
            out.push_str(&format!(
                "- df: {}; n: {}; residual variance: {:.4}\n",
                est.df, est.n, est.residual_variance
            ));
            if est.covariates.is_empty() {
                out.push_str("- baseline covariates: none\n");
            } else {
                out.push_str(&format!("- baseline covariates: {}\n", est.covariates.join(", ")));
            }
            if let Some(t) = &est.residual_normality {
                out.push_str(&format!("- residual normality: {}\n", fmt_test(t)));
            }
        }
        AnalysisPayload::Moderation(rep) => {
            out.push_str(&format!("- moderator: {}\n", rep.moderator));
            out.push_str(&format!("- interaction test: {}\n", fmt_test(&rep.lrt)));
            out.push_str(&format!(
                "- significant at {}: {}\n",
                rep.significance_level,
                if rep.significant { "yes" } else { "no" }
            ));
            if rep.n_missing_moderator > 0 {
                out.push_str(&format!(
                    "- rows dropped for missing moderator: {}\n",
                    rep.n_missing_moderator
                ));
            }
            if let Some(note) = &rep.note {
                out.push_str(&format!("- {note}\n"));
            }
            if !rep.strata.is_empty() {
                out.push_str("\n| stratum | rd (ci) | p | rr (ci) | n |\n|---|---|---|---|---|\n");
                for s in &rep.strata {
                    match (&s.estimate, &s.error) {
                        (Some(est), _) => out.push_str(&marginal_row(&s.label, est)),
                        (None, Some(err)) => out.push_str(&format!(
                            "| {} | failed: {} | - | - | - |\n",
                            s.label, err
                        )),
                        (None, None) => {
                            out.push_str(&format!("| {} | - | - | - | - |\n", s.label))
                        }
                    }
                }
            }
        }
        AnalysisPayload::Ipw(a) => {
            push_marginal(out, &a.estimate);
            out.push_str(&format!(
                "- weights: min {:.4}, max {:.4}, {} truncated at floor {}\n",
                a.weights.min, a.weights.max, a.weights.n_truncated, a.weights.floor
            ));
            out.push_str(&format!(
                "- outcome missingness: {:.4}; missingness model: {}\n",
                a.missing_fraction,
                a.missingness_model_columns.join(", ")
            ));
        }
        AnalysisPayload::WorstCase(rep) => {
            out.push_str(&format!("- imputed as failure: {}\n", rep.n_imputed));
            if let (Some(c), Some(i)) =
                (rep.success_proportion_complete, rep.success_proportion_imputed)
            {
                out.push_str(&format!(
                    "- success proportion: {c:.4} complete-case, {i:.4} after imputation\n"
                ));
            }
            push_marginal(out, &rep.estimate);
        }
    }
}

/// Human-readable markdown rendering of the full report.
pub(crate) fn render_markdown(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let ok = report
        .analyses
        .iter()
        .filter(|a| a.status == AnalysisStatus::Ok)
        .count();
    let skipped = report
        .analyses
        .iter()
        .filter(|a| a.status == AnalysisStatus::Skipped)
        .count();
    out.push_str("# Trial analysis report\n\n");
    out.push_str(&format!("- software version: {}\n", report.software_version));
    out.push_str(&format!("- dataset fingerprint: {}\n", report.dataset_fingerprint));
    out.push_str(&format!("- participants: {}\n", report.n_participants));
    out.push_str(&format!(
        "- analyses: {} total, {ok} ok, {skipped} skipped, {} failed\n",
        report.analyses.len(),
        report.failed_count()
    ));

    let mut last_section = None;
    for rec in &report.analyses {
        if last_section != Some(rec.section) {
            out.push_str(&format!("\n## {}\n", rec.section.as_str()));
            last_section = Some(rec.section);
        }
        out.push_str(&format!("\n### {}\n\n", rec.name));
        out.push_str(&format!("- status: {}\n", rec.status.as_str()));
        if let Some(outcome) = &rec.outcome {
            out.push_str(&format!("- outcome: {outcome}\n"));
        }
        if let Some(factor) = &rec.factor {
            out.push_str(&format!("- factor: {factor}\n"));
        }
        out.push_str(&format!("- population: {}\n", rec.population));
        if let Some(n) = rec.n_used {
            out.push_str(&format!("- n used: {n}\n"));
        }
        if let Some(n) = rec.n_missing {
            out.push_str(&format!("- n missing: {n}\n"));
        }
        if let Some(note) = &rec.note {
            out.push_str(&format!("- note: {note}\n"));
        }
        if let Some(err) = &rec.error {
            out.push_str(&format!("- error: {err}\n"));
        }
        if rec.result != AnalysisPayload::NotProduced {
            out.push('\n');
            push_payload(&mut out, &rec.result);
        }
    }
    out
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer error: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv not utf-8: {e}")))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn opt_count(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_text(x: &Option<String>) -> String {
    x.clone().unwrap_or_default()
}

struct EstimateRow<'a> {
    analysis: &'a str,
    label: &'a str,
    est: &'a MarginalEstimate,
}

fn estimate_record(row: &EstimateRow) -> Vec<String> {
    let est = row.est;
    vec![
        row.analysis.to_string(),
        row.label.to_string(),
        num(est.risk1),
        num(est.risk0),
        num(est.rd),
        num(est.se_rd),
        num(est.ci_rd.0),
        num(est.ci_rd.1),
        num(est.p_rd),
        opt_num(est.rr),
        opt_num(est.se_log_rr),
        opt_num(est.ci_rr.map(|c| c.0)),
        opt_num(est.ci_rr.map(|c| c.1)),
        opt_num(est.p_rr),
        est.n.to_string(),
    ]
}

fn test_record(analysis: &str, test_name: &str, t: &TestResult) -> Vec<String> {
    vec![
        analysis.to_string(),
        test_name.to_string(),
        num(t.statistic),
        num(t.df),
        num(t.p_value),
        t.method.clone(),
        opt_text(&t.note),
    ]
}

fn summary_record(
    analysis: &str,
    variable: &str,
    group: &str,
    s: &VariableSummary,
) -> Vec<Vec<String>> {
    let base = |kind: &str, n: usize| {
        vec![
            analysis.to_string(),
            variable.to_string(),
            group.to_string(),
            kind.to_string(),
            n.to_string(),
        ]
    };
    match s {
        VariableSummary::Continuous { n, mean, sd, p0, p25, p50, p75, p100 } => {
            let mut row = base("continuous", *n);
            for v in [mean, sd, p0, p25, p50, p75, p100] {
                row.push(opt_num(*v));
            }
            row.extend([String::new(), String::new(), String::new()]);
            vec![row]
        }
        VariableSummary::Categorical { n, levels } => levels
            .iter()
            .map(|(level, count, prop)| {
                let mut row = base("categorical", *n);
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.extend([level.clone(), count.to_string(), num(*prop)]);
                row
            })
            .collect(),
    }
}

fn comparison_records(analysis: &str, t: &GroupComparisonTable) -> Vec<Vec<String>> {
    t.rows
        .iter()
        .map(|row| {
            let mut rec = vec![
                analysis.to_string(),
                row.column.clone(),
                t.label_a.clone(),
                t.n_a.to_string(),
                t.label_b.clone(),
                t.n_b.to_string(),
            ];
            match &row.test {
                Some(test) => rec.extend([
                    num(test.statistic),
                    num(test.df),
                    num(test.p_value),
                    test.method.clone(),
                    opt_text(&test.note),
                ]),
                None => {
                    rec.extend([String::new(), String::new(), String::new(), String::new()]);
                    rec.push(opt_text(&row.note));
                }
            }
            rec
        })
        .collect()
}

/// The report as a fixed set of CSV tables, as (file name, contents) pairs.
/// Every file is always present so downstream consumers see a stable set;
/// tables with no applicable rows contain only the header.
pub(crate) fn csv_tables(report: &AnalysisReport) -> Result<Vec<(String, String)>> {
    let mut analyses = csv::Writer::from_writer(Vec::new());
    analyses.write_record([
        "name",
        "section",
        "outcome",
        "factor",
        "population",
        "status",
        "n_used",
        "n_missing",
        "error",
        "note",
    ])?;

    let mut estimates = csv::Writer::from_writer(Vec::new());
    estimates.write_record([
        "analysis",
        "label",
        "risk1",
        "risk0",
        "rd",
        "se_rd",
        "ci_rd_low",
        "ci_rd_high",
        "p_rd",
        "rr",
        "se_log_rr",
        "ci_rr_low",
        "ci_rr_high",
        "p_rr",
        "n",
    ])?;

    let mut tests = csv::Writer::from_writer(Vec::new());
    tests.write_record(["analysis", "test", "statistic", "df", "p_value", "method", "note"])?;

    let mut linear = csv::Writer::from_writer(Vec::new());
    linear.write_record([
        "analysis",
        "outcome",
        "factor",
        "coefficient",
        "se",
        "ci_low",
        "ci_high",
        "p_value",
        "df",
        "n",
        "residual_variance",
        "covariates",
    ])?;

    let mut descriptive = csv::Writer::from_writer(Vec::new());
    descriptive.write_record([
        "analysis",
        "variable",
        "group",
        "kind",
        "n",
        "mean",
        "sd",
        "p0",
        "p25",
        "p50",
        "p75",
        "p100",
        "level",
        "count",
        "proportion",
    ])?;

    let mut comparisons = csv::Writer::from_writer(Vec::new());
    comparisons.write_record([
        "analysis",
        "column",
        "label_a",
        "n_a",
        "label_b",
        "n_b",
        "statistic",
        "df",
        "p_value",
        "method",
        "note",
    ])?;

    let mut timepoints = csv::Writer::from_writer(Vec::new());
    timepoints.write_record([
        "analysis",
        "month",
        "arm",
        "n_measured_peth",
        "peth_below_threshold",
        "n_measured_auditc",
        "auditc_below_cutoff",
    ])?;

    for rec in &report.analyses {
        analyses.write_record([
            rec.name.clone(),
            rec.section.as_str().to_string(),
            opt_text(&rec.outcome),
            opt_text(&rec.factor),
            rec.population.clone(),
            rec.status.as_str().to_string(),
            opt_count(rec.n_used),
            opt_count(rec.n_missing),
            opt_text(&rec.error),
            opt_text(&rec.note),
        ])?;

        let name = rec.name.as_str();
        match &rec.result {
            AnalysisPayload::NotProduced => {}
            AnalysisPayload::Descriptive(t) => {
                for row in &t.rows {
                    for out in summary_record(name, &row.variable, "overall", &row.overall) {
                        descriptive.write_record(&out)?;
                    }
                    for (i, s) in row.by_arm.iter().enumerate() {
                        for out in summary_record(name, &row.variable, &format!("arm_{}", i + 1), s)
                        {
                            descriptive.write_record(&out)?;
                        }
                    }
                }
            }
            AnalysisPayload::TimepointProportions { rows } => {
                for r in rows {
                    timepoints.write_record([
                        name.to_string(),
                        r.month.to_string(),
                        r.arm.to_string(),
                        r.n_measured_peth.to_string(),
                        num(r.peth_below_threshold),
                        r.n_measured_auditc.to_string(),
                        num(r.auditc_below_cutoff),
                    ])?;
                }
            }
            AnalysisPayload::GroupComparison(t) => {
                for out in comparison_records(name, t) {
                    comparisons.write_record(&out)?;
                }
            }
            AnalysisPayload::Marginal(est) => {
                estimates.write_record(estimate_record(&EstimateRow {
                    analysis: name,
                    label: &est.factor,
                    est,
                }))?;
            }
            AnalysisPayload::Interaction(rep) => {
                tests.write_record(test_record(name, "interaction_lrt", &rep.lrt))?;
                for s in &rep.stratified {
                    estimates.write_record(estimate_record(&EstimateRow {
                        analysis: name,
                        label: &s.label,
                        est: &s.estimate,
                    }))?;
                }
            }
            AnalysisPayload::HepatotoxContrasts(rep) => {
                for c in &rep.contrasts {
                    if let Some(est) = &c.estimate {
                        estimates.write_record(estimate_record(&EstimateRow {
                            analysis: name,
                            label: &c.label,
                            est,
                        }))?;
                    }
                }
            }
            AnalysisPayload::Linear(est) => {
                linear.write_record([
                    name.to_string(),
                    est.outcome.clone(),
                    est.factor.clone(),
                    num(est.coefficient),
                    num(est.se),
                    num(est.ci.0),
                    num(est.ci.1),
                    num(est.p_value),
                    num(est.df),
                    est.n.to_string(),
                    num(est.residual_variance),
                    est.covariates.join(";"),
                ])?;
                if let Some(t) = &est.residual_normality {
                    tests.write_record(test_record(name, "residual_normality", t))?;
                }
            }
            AnalysisPayload::Moderation(rep) => {
                tests.write_record(test_record(name, "moderator_lrt", &rep.lrt))?;
                for s in &rep.strata {
                    if let Some(est) = &s.estimate {
                        estimates.write_record(estimate_record(&EstimateRow {
                            analysis: name,
                            label: &s.label,
                            est,
                        }))?;
                    }
                }
            }
            AnalysisPayload::Ipw(a) => {
                estimates.write_record(estimate_record(&EstimateRow {
                    analysis: name,
                    label: "ipw_weighted",
                    est: &a.estimate,
                }))?;
            }
            AnalysisPayload::WorstCase(rep) => {
                estimates.write_record(estimate_record(&EstimateRow {
                    analysis: name,
                    label: "worst_case_imputed",
                    est: &rep.estimate,
                }))?;
            }
        }
    }

    Ok(vec![
        ("analyses.csv".to_string(), finish_csv(analyses)?),
        ("estimates.csv".to_string(), finish_csv(estimates)?),
        ("tests.csv".to_string(), finish_csv(tests)?),
        ("linear.csv".to_string(), finish_csv(linear)?),
        ("descriptive.csv".to_string(), finish_csv(descriptive)?),
        ("comparisons.csv".to_string(), finish_csv(comparisons)?),
        ("timepoints.csv".to_string(), finish_csv(timepoints)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnalysisConfig;

    fn empty_report() -> AnalysisReport {
        AnalysisReport {
            software_version: "0.0.0".to_string(),
            dataset_fingerprint: "00".repeat(32),
            n_participants: 0,
            config_echo: AnalysisConfig::plan_defaults(),
            analyses: Vec::new(),
        }
    }

    #[test]
    fn empty_report_renders_in_every_format() {
        let report = empty_report();
        let json = render_json(&report).unwrap();
        assert!(json.contains("\"analyses\": []"));
        let md = render_markdown(&report);
        assert!(md.starts_with("# Trial analysis report"));
        let tables = csv_tables(&report).unwrap();
        assert_eq!(tables.len(), 7);
        for (name, text) in &tables {
            assert_eq!(text.lines().count(), 1, "{name} should be header-only");
        }
    }

    #[test]
    fn p_value_formatting_floors_small_values() {
        assert_eq!(fmt_p(0.5), "0.5000");
        assert_eq!(fmt_p(0.00009), "<0.0001");
        assert_eq!(fmt_p(0.0001), "0.0001");
    }
}
