//! Wall-clock cost of the online decision path.

use std::time::Instant;

use safeload_core::pipeline::{ArtifactBundle, Pipeline, Toggles};
use safeload_core::{DecisionSource, Label, Observed, Outcome, QueryRecord, Result};

/// Mean decision latency by the stage that settled the query.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Latency {
    pub rule_decisions: u64,
    pub rule_mean_ns: f64,
    /// Decisions that went through the model (including quota clamps).
    pub model_decisions: u64,
    pub model_mean_ns: f64,
}

/// Times `decide` on every record. False negatives are fed back right
/// away (untimed) so the correction index grows as it would online.
pub fn measure(bundle: &ArtifactBundle, trace: &[QueryRecord]) -> Result<Latency> {
    let mut pipeline = Pipeline::from_bundle(bundle, Toggles::ALL_ON)?;
    let (mut rule_ns, mut model_ns) = (0u128, 0u128);
    let mut out = Latency::default();
    for r in trace {
        let start = Instant::now();
        let d = pipeline.decide(r)?;
        let ns = start.elapsed().as_nanos();
        match d.source() {
            DecisionSource::RuleFilter => {
                rule_ns += ns;
                out.rule_decisions += 1;
            }
            DecisionSource::Model | DecisionSource::QuotaClamp => {
                model_ns += ns;
                out.model_decisions += 1;
            }
            DecisionSource::CorrectionIndex => {}
        }
        let outcome = Outcome {
            query_id: r.query_id.clone(),
            observed: if r.label == Label::Mo {
                Observed::MoFailed
            } else {
                Observed::Succeeded
            },
            completed_ms: r.arrival_ms,
        };
        pipeline.feedback(&d, &outcome, r)?;
    }
    let mean = |total: u128, n: u64| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    out.rule_mean_ns = mean(rule_ns, out.rule_decisions);
    out.model_mean_ns = mean(model_ns, out.model_decisions);
    Ok(out)
}
