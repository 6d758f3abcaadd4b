//! Deterministic replay of a labeled trace through a pipeline.
//!
//! Decisions and feedback share one timeline. Each admitted query reports
//! back when it completes; at equal timestamps decisions go first, and ties
//! within a kind are broken by query id. Labels stand in for execution: an
//! admitted MO query fails, anything else succeeds.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

use super::metrics::{compute_cost, Confusion, CostBreakdown, CostModel, Metrics};
use crate::error::{Error, Result};
use crate::math::round;
use crate::pipeline::{ArtifactBundle, Pipeline, StageCounters, Toggles};
use crate::types::{
    check_sorted, classify_outcome, ConfusionClass, Decision, DecisionSource, Label, Observed,
    Outcome, QueryRecord, Verdict,
};

/// When a false negative becomes known to the pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FeedbackTiming {
    /// When the query finishes: arrival plus its CPU time.
    #[default]
    Completion,
    /// Right after its own decision.
    Immediate,
}

impl FeedbackTiming {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackTiming::Completion => "completion",
            FeedbackTiming::Immediate => "immediate",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReplayConfig {
    pub toggles: Toggles,
    pub cost: CostModel,
    pub feedback: FeedbackTiming,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub query_id: String,
    pub cluster_id: String,
    pub arrival_ms: u64,
    pub verdict: Verdict,
    pub source: DecisionSource,
    pub confidence: f64,
    pub cost_charged: f64,
    pub outcome: ConfusionClass,
    pub cpu_time_s: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClusterSummary {
    pub confusion: Confusion,
    pub index_size: usize,
    pub daily_quota: f64,
    pub remaining: f64,
    pub fnc: u64,
}

impl ClusterSummary {
    pub fn utilization(&self) -> f64 {
        if self.daily_quota > 0.0 {
            (self.daily_quota - self.remaining) / self.daily_quota
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayReport {
    pub toggles: Toggles,
    pub feedback: FeedbackTiming,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub cost: CostBreakdown,
    pub per_cluster: BTreeMap<String, ClusterSummary>,
    /// Decisions per source, indexed by `DecisionSource::index`.
    pub sources: [u64; 4],
    /// Positive predictions the quota accepted.
    pub quota_accepted: u64,
    pub index_evicted: u64,
    pub counters: StageCounters,
    pub log: Vec<LogEntry>,
}

impl ReplayReport {
    pub fn source_count(&self, source: DecisionSource) -> u64 {
        self.sources[source.index()]
    }
}

pub fn replay(
    trace: &[QueryRecord],
    bundle: &ArtifactBundle,
    config: &ReplayConfig,
) -> Result<ReplayReport> {
    config.cost.validate()?;
    check_sorted(trace)?;
    let dimension = bundle.schema.dimension();
    if let Some(r) = trace.iter().find(|r| r.features.len() != dimension) {
        return Err(Error::SchemaMismatch {
            bundle: dimension,
            expected: r.features.len(),
        });
    }
    let mut pipeline = Pipeline::from_bundle(bundle, config.toggles)?;

    let mut decisions: Vec<Decision> = Vec::with_capacity(trace.len());
    let mut pending: BinaryHeap<Reverse<(u64, &str, usize)>> = BinaryHeap::new();
    let mut log = Vec::with_capacity(trace.len());
    let mut confusion = Confusion::default();
    let mut per_cluster: BTreeMap<String, ClusterSummary> = BTreeMap::new();
    let mut sources = [0u64; 4];
    let mut quota_accepted = 0;
    let (mut fn_cpu, mut tp_cpu, mut fp_cpu) = (0.0, 0.0, 0.0);

    let apply =
        |pipeline: &mut Pipeline, decisions: &[Decision], at: u64, i: usize| -> Result<()> {
            let r = &trace[i];
            let outcome = Outcome {
                query_id: r.query_id.clone(),
                observed: if r.label == Label::Mo {
                    Observed::MoFailed
                } else {
                    Observed::Succeeded
                },
                completed_ms: at,
            };
            pipeline.feedback(&decisions[i], &outcome, r)
        };

    for (i, r) in trace.iter().enumerate() {
        while let Some(&Reverse((at, _, j))) = pending.peek() {
            if at >= r.arrival_ms {
                break;
            }
            pending.pop();
            apply(&mut pipeline, &decisions, at, j)?;
        }

        let d = pipeline.decide(r)?;
        let class = classify_outcome(d.verdict(), r.label);
        confusion.add(class);
        per_cluster
            .entry(r.cluster_id.clone())
            .or_default()
            .confusion
            .add(class);
        sources[d.source().index()] += 1;
        if d.verdict() == Verdict::Offload && config.toggles.quota {
            quota_accepted += 1;
        }
        match class {
            ConfusionClass::Fn => fn_cpu += r.cpu_time_s,
            ConfusionClass::Tp => tp_cpu += r.cpu_time_s,
            ConfusionClass::Fp => fp_cpu += r.cpu_time_s,
            ConfusionClass::Tn => {}
        }
        log.push(LogEntry {
            query_id: r.query_id.clone(),
            cluster_id: r.cluster_id.clone(),
            arrival_ms: r.arrival_ms,
            verdict: d.verdict(),
            source: d.source(),
            confidence: d.confidence(),
            cost_charged: d.quota_cost_charged(),
            outcome: class,
            cpu_time_s: r.cpu_time_s,
        });
        if d.verdict() == Verdict::Admit {
            let done = match config.feedback {
                FeedbackTiming::Completion => r
                    .arrival_ms
                    .saturating_add(round(r.cpu_time_s * 1000.0) as u64),
                FeedbackTiming::Immediate => r.arrival_ms,
            };
            pending.push(Reverse((done, r.query_id.as_str(), i)));
        }
        decisions.push(d);
    }
    while let Some(Reverse((at, _, j))) = pending.pop() {
        apply(&mut pipeline, &decisions, at, j)?;
    }

    for (cluster, state) in pipeline.ledger().clusters() {
        let entry = per_cluster.entry(cluster.into()).or_default();
        entry.daily_quota = state.daily_quota;
        entry.remaining = state.remaining;
        entry.fnc = state.fnc;
    }
    for (cluster, size) in pipeline.index().sizes() {
        per_cluster.entry(cluster.into()).or_default().index_size = size;
    }

    Ok(ReplayReport {
        toggles: config.toggles,
        feedback: config.feedback,
        metrics: confusion.metrics(),
        confusion,
        cost: compute_cost(fn_cpu, tp_cpu, fp_cpu, &config.cost),
        per_cluster,
        sources,
        quota_accepted,
        index_evicted: pipeline.index().evicted(),
        counters: pipeline.counters(),
        log,
    })
}
