//! Text renderings of replay results: a key/value summary, the per-query
//! decision log, and fixed-width comparison tables.

use std::fmt::Write as _;

use safeload_core::pipeline::{BuildSummary, Toggles};
use safeload_core::sim::{
    compute_metrics, AblationRow, Confusion, Metrics, ReplayReport, SweepCell,
};
use safeload_core::types::ConfusionClass;
use safeload_core::workload::WorkloadProfile;
use safeload_core::DecisionSource;

use crate::traceio::parse_finite;

pub const DECISION_LOG_HEADER: &str =
    "query_id,verdict,source,confidence,cost_charged,outcome_class";

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn toggles_line(t: &Toggles) -> String {
    format!(
        "rule_filter={} correction={} local_models={} quota={}",
        on_off(t.rule_filter),
        on_off(t.correction),
        on_off(t.local_models),
        on_off(t.quota)
    )
}

fn metric(out: &mut String, name: &str, value: f64, undefined: bool) {
    let _ = write!(out, "{name} {value}");
    if undefined {
        out.push_str(" undefined");
    }
    out.push('\n');
}

/// `summary.txt`: everything in the report except the decision log.
pub fn render_summary(report: &ReplayReport) -> String {
    let mut out = String::from("format safeload-report/1\n");
    let c = &report.confusion;
    let m = &report.metrics;
    let _ = writeln!(out, "toggles {}", toggles_line(&report.toggles));
    let _ = writeln!(out, "feedback {}", report.feedback.as_str());
    let _ = writeln!(out, "records {}", c.total());
    let _ = writeln!(out, "tp {}\nfp {}\nfn {}\ntn {}", c.tp, c.fp, c.fn_, c.tn);
    metric(&mut out, "accuracy", m.accuracy, m.accuracy_undefined);
    metric(&mut out, "precision", m.precision, m.precision_undefined);
    metric(&mut out, "recall", m.recall, m.recall_undefined);
    metric(&mut out, "f1", m.f1, m.f1_undefined);
    let cost = &report.cost;
    let _ = writeln!(out, "fn_wasted_cpu_h {}", cost.fn_wasted_cpu_h);
    let _ = writeln!(out, "fp_serverless_cpu_h {}", cost.fp_serverless_cpu_h);
    let _ = writeln!(out, "tp_serverless_cpu_h {}", cost.tp_serverless_cpu_h);
    let _ = writeln!(out, "monetary_cost_usd {}", cost.monetary_cost_usd);
    for s in DecisionSource::ALL {
        let _ = writeln!(out, "source {} {}", s.as_str(), report.source_count(s));
    }
    let _ = writeln!(out, "quota_accepted {}", report.quota_accepted);
    let _ = writeln!(out, "index_evicted {}", report.index_evicted);
    for (cluster, s) in &report.per_cluster {
        let k = &s.confusion;
        let _ = writeln!(
            out,
            "cluster {cluster} tp={} fp={} fn={} tn={} index={} daily_quota={} remaining={} fnc={} utilization={}",
            k.tp,
            k.fp,
            k.fn_,
            k.tn,
            s.index_size,
            s.daily_quota,
            s.remaining,
            s.fnc,
            s.utilization()
        );
    }
    out
}

/// `decisions.csv`, one row per replayed query in arrival order.
pub fn render_decision_log(report: &ReplayReport) -> String {
    let mut out = String::with_capacity(64 * (report.log.len() + 1));
    out.push_str(DECISION_LOG_HEADER);
    out.push('\n');
    for e in &report.log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.query_id,
            e.verdict.as_str(),
            e.source.as_str(),
            e.confidence,
            e.cost_charged,
            e.outcome.as_str()
        );
    }
    out
}

/// One row of a parsed decision log.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedDecision {
    pub query_id: String,
    pub source: DecisionSource,
    pub confidence: f64,
    pub cost_charged: f64,
    pub outcome: ConfusionClass,
}

#[derive(Debug, thiserror::Error)]
#[error("decision log line {line}: {detail}")]
pub struct LogError {
    pub line: usize,
    pub detail: String,
}

fn parse_source(s: &str) -> Option<DecisionSource> {
    DecisionSource::ALL.into_iter().find(|d| d.as_str() == s)
}

fn parse_outcome(s: &str) -> Option<ConfusionClass> {
    [
        ConfusionClass::Tp,
        ConfusionClass::Fp,
        ConfusionClass::Fn,
        ConfusionClass::Tn,
    ]
    .into_iter()
    .find(|c| c.as_str() == s)
}

pub fn parse_decision_log(text: &str) -> Result<Vec<LoggedDecision>, LogError> {
    let mut lines = text.lines();
    if lines.next() != Some(DECISION_LOG_HEADER) {
        return Err(LogError {
            line: 1,
            detail: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in lines.enumerate() {
        let line = i + 2;
        let bad = |detail: &str| LogError {
            line,
            detail: detail.into(),
        };
        let f: Vec<&str> = row.split(',').collect();
        let [id, verdict, source, confidence, cost, outcome] = f.as_slice() else {
            return Err(bad("expected 6 fields"));
        };
        let outcome = parse_outcome(outcome).ok_or_else(|| bad("bad outcome_class"))?;
        let offload = matches!(outcome, ConfusionClass::Tp | ConfusionClass::Fp);
        let verdict_ok = match *verdict {
            "offload" => offload,
            "admit" => !offload,
            _ => false,
        };
        if !verdict_ok {
            return Err(bad("verdict disagrees with outcome_class"));
        }
        out.push(LoggedDecision {
            query_id: id.to_string(),
            source: parse_source(source).ok_or_else(|| bad("bad source"))?,
            confidence: parse_finite(confidence).ok_or_else(|| bad("bad confidence"))?,
            cost_charged: parse_finite(cost).ok_or_else(|| bad("bad cost_charged"))?,
            outcome,
        });
    }
    Ok(out)
}

/// Confusion counts recounted from a decision log.
pub fn recount(log: &[LoggedDecision]) -> Confusion {
    let mut c = Confusion::default();
    for d in log {
        c.add(d.outcome);
    }
    c
}

fn table_header(out: &mut String, first: &str) {
    let _ = writeln!(
        out,
        "{first:<18} {:>8} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9} {:>9}",
        "TP", "FP", "FN", "TN", "Accuracy", "Precision", "Recall", "F1"
    );
}

fn table_row(out: &mut String, name: &str, c: &Confusion, m: &Metrics) {
    let _ = writeln!(
        out,
        "{name:<18} {:>8} {:>8} {:>8} {:>8} {:>10.6} {:>9.4} {:>9.4} {:>9.4}",
        c.tp, c.fp, c.fn_, c.tn, m.accuracy, m.precision, m.recall, m.f1
    );
}

/// Classification table over named confusion matrices.
pub fn render_metrics_table(rows: &[(String, Confusion)]) -> String {
    let mut out = String::new();
    table_header(&mut out, "method");
    for (name, c) in rows {
        table_row(&mut out, name, c, &compute_metrics(c.tp, c.fp, c.fn_, c.tn));
    }
    out
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    table_header(&mut out, "variant");
    for r in rows {
        table_row(
            &mut out,
            r.variant.label(),
            &r.report.confusion,
            &r.report.metrics,
        );
    }
    out
}

pub fn render_sweep(cells: &[SweepCell]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>10} {:>10} {:>9} {:>10} {:>9} {:>9} {:>9}",
        "gamma", "beta", "accepted", "Accuracy", "Precision", "Recall", "F1"
    );
    for c in cells {
        let m = &c.report.metrics;
        let _ = writeln!(
            out,
            "{:>10} {:>10} {:>9} {:>10.6} {:>9.4} {:>9.4} {:>9.4}",
            c.gamma, c.beta, c.report.quota_accepted, m.accuracy, m.precision, m.recall, m.f1
        );
    }
    out
}

pub fn render_build_summary(s: &BuildSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "records {}", s.records);
    let _ = writeln!(out, "positives {}", s.positives);
    let _ = writeln!(out, "rule {}", s.rule.rule);
    for (i, p) in s.rule.base.picks.iter().enumerate() {
        let _ = writeln!(
            out,
            "base_rule {i} {} positive_retention={} negative_retention={}{}",
            p.rule,
            p.positive_retention,
            p.negative_retention,
            if p.relaxed { " relaxed" } else { "" }
        );
    }
    let v = &s.rule.validation;
    let _ = writeln!(
        out,
        "validation positive_retention={} negative_retention={} feasible={}{}",
        v.positive_retention,
        v.negative_retention,
        s.rule.feasible,
        if s.validation_fallback {
            " fallback=whole_day"
        } else {
            ""
        }
    );
    let _ = writeln!(
        out,
        "expressions_evaluated {}",
        s.rule.expressions_evaluated
    );
    let _ = writeln!(out, "survivors {}", s.survivors);
    let _ = writeln!(out, "survivor_positives {}", s.survivor_positives);
    out
}

pub fn render_profile(p: &WorkloadProfile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "records {}", p.records);
    let _ = writeln!(out, "mo {}", p.mo);
    let _ = writeln!(out, "imbalance {}", p.imbalance_label());
    let _ = writeln!(out, "repetition_rate {}", p.repetition_rate());
    for (day, n) in &p.records_per_day {
        let mo = p.mo_per_day.get(day).copied().unwrap_or(0);
        let _ = writeln!(out, "day {day} records={n} mo={mo}");
    }
    for (cluster, mo) in &p.mo_per_cluster {
        let _ = writeln!(out, "cluster {cluster} mo={mo}");
    }
    out
}
