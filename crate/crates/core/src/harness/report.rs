use std::fmt::Write as _;

use super::pareto::{mark_dominated, ParetoPoint};
use super::summary::RunSummary;

const CSV_HEADER: &str = "config,n,skipped,coverage_all_rate,follow_up_rate,meds_rate,education_rate,monitoring_rate,\
brier,ece,mean_latency_s,episodes_per_min,pass,fail,fail_rate,coverage_violations,mean_drift_l1,drift_warnings,\
high_conf_errors,avg_confidence,pareto_dominated";

fn r3(x: f64) -> String {
    format!("{x:.3}")
}

fn r2(x: f64) -> String {
    format!("{x:.2}")
}

fn coverage_violations(s: &RunSummary) -> usize {
    s.violation_counts.get("coverage").copied().unwrap_or(0)
}

fn dominance(summaries: &[RunSummary]) -> Vec<ParetoPoint> {
    mark_dominated(&summaries.iter().map(ParetoPoint::from_summary).collect::<Vec<_>>())
}

/// One row per configuration covering both quality and reliability columns.
pub fn comparison_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (s, p) in summaries.iter().zip(dominance(summaries)) {
        let cells = [
            s.config_name.as_str().to_string(),
            s.n.to_string(),
            s.skipped.to_string(),
            r3(s.coverage_all_rate),
            r3(s.follow_up_rate),
            r3(s.meds_rate),
            r3(s.education_rate),
            r3(s.monitoring_rate),
            r3(s.brier),
            r3(s.ece),
            r2(s.mean_latency_s),
            r2(s.episodes_per_min),
            s.pass_count.to_string(),
            s.fail_count.to_string(),
            r3(s.fail_rate),
            coverage_violations(s).to_string(),
            r3(s.mean_drift_l1),
            s.drift_warning_count.to_string(),
            s.high_conf_error_count.to_string(),
            r3(s.avg_confidence),
            p.dominated.to_string(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn md_table(out: &mut String, header: &[&str], rows: impl Iterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", header.iter().map(|_| "---|").collect::<String>());
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
}

/// Quality table, reliability table and the Pareto frontier.
pub fn comparison_markdown(summaries: &[RunSummary]) -> String {
    let mut out = String::from("## Plan quality and throughput\n\n");
    md_table(
        &mut out,
        &["Config", "N", "Cover.", "F/Up", "Meds", "Edu.", "Monitor", "Brier", "ECE", "Lat. (s)", "Ep./min"],
        summaries.iter().map(|s| {
            vec![
                s.config_name.title().to_string(),
                s.n.to_string(),
                r3(s.coverage_all_rate),
                r3(s.follow_up_rate),
                r3(s.meds_rate),
                r3(s.education_rate),
                r3(s.monitoring_rate),
                r3(s.brier),
                r3(s.ece),
                r2(s.mean_latency_s),
                r2(s.episodes_per_min),
            ]
        }),
    );
    out.push_str("\n## Audit outcomes\n\n");
    md_table(
        &mut out,
        &["Config", "N", "Pass", "Fail", "Fail Rate", "Cov. Viol.", "Drift (L1)", "HC Err", "Avg. Conf."],
        summaries.iter().map(|s| {
            vec![
                s.config_name.title().to_string(),
                s.n.to_string(),
                s.pass_count.to_string(),
                s.fail_count.to_string(),
                r3(s.fail_rate),
                coverage_violations(s).to_string(),
                r3(s.mean_drift_l1),
                s.high_conf_error_count.to_string(),
                r3(s.avg_confidence),
            ]
        }),
    );
    out.push_str("\n## Coverage vs latency\n\n");
    md_table(
        &mut out,
        &["Config", "Cover.", "Lat. (s)", "Frontier"],
        summaries.iter().zip(dominance(summaries)).map(|(s, p)| {
            vec![
                s.config_name.title().to_string(),
                r3(p.coverage_all_rate),
                r2(p.mean_latency_s),
                if p.dominated { "no" } else { "yes" }.to_string(),
            ]
        }),
    );
    out
}
