//! Records, verdicts and outcomes shared by every stage.
//!
//! "Positive" always means memory-overloading (`Label::Mo`) on the ground
//! truth side and `Verdict::Offload` on the decision side.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::schema::FeatureVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Mo,
    NonMo,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Mo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Admit,
    Offload,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Admit => "admit",
            Verdict::Offload => "offload",
        }
    }
}

/// Pipeline stage that produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DecisionSource {
    RuleFilter,
    CorrectionIndex,
    Model,
    QuotaClamp,
}

impl DecisionSource {
    pub const ALL: [DecisionSource; 4] = [
        DecisionSource::RuleFilter,
        DecisionSource::CorrectionIndex,
        DecisionSource::Model,
        DecisionSource::QuotaClamp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionSource::RuleFilter => "rule_filter",
            DecisionSource::CorrectionIndex => "correction_index",
            DecisionSource::Model => "model",
            DecisionSource::QuotaClamp => "quota_clamp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Admission decision for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    verdict: Verdict,
    source: DecisionSource,
    confidence: f64,
    quota_cost_charged: f64,
}

impl Decision {
    pub fn admit(source: DecisionSource, confidence: f64) -> Self {
        Self {
            verdict: Verdict::Admit,
            source,
            confidence,
            quota_cost_charged: 0.0,
        }
    }

    /// The rule filter never offloads, so `source` must not be `RuleFilter`.
    pub fn offload(source: DecisionSource, confidence: f64, cost: f64) -> Self {
        debug_assert!(source != DecisionSource::RuleFilter);
        debug_assert!(cost >= 0.0);
        Self {
            verdict: Verdict::Offload,
            source,
            confidence,
            quota_cost_charged: cost,
        }
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn source(&self) -> DecisionSource {
        self.source
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn quota_cost_charged(&self) -> f64 {
        self.quota_cost_charged
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConfusionClass {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl ConfusionClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfusionClass::Tp => "TP",
            ConfusionClass::Fp => "FP",
            ConfusionClass::Fn => "FN",
            ConfusionClass::Tn => "TN",
        }
    }
}

pub fn classify_outcome(verdict: Verdict, label: Label) -> ConfusionClass {
    match (verdict, label) {
        (Verdict::Offload, Label::Mo) => ConfusionClass::Tp,
        (Verdict::Offload, Label::NonMo) => ConfusionClass::Fp,
        (Verdict::Admit, Label::Mo) => ConfusionClass::Fn,
        (Verdict::Admit, Label::NonMo) => ConfusionClass::Tn,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observed {
    MoFailed,
    Succeeded,
}

/// What happened to an admitted query on its provisioned cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub query_id: String,
    pub observed: Observed,
    pub completed_ms: u64,
}

/// One labeled query arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub query_id: String,
    pub arrival_ms: u64,
    pub cluster_id: String,
    pub features: FeatureVector,
    pub cpu_time_s: f64,
    pub label: Label,
}

impl QueryRecord {
    pub fn new(
        query_id: impl Into<String>,
        arrival_ms: u64,
        cluster_id: impl Into<String>,
        features: FeatureVector,
        cpu_time_s: f64,
        label: Label,
    ) -> Result<Self> {
        let record = Self {
            query_id: query_id.into(),
            arrival_ms,
            cluster_id: cluster_id.into(),
            features,
            cpu_time_s,
            label,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        validate_id(&self.query_id)?;
        validate_id(&self.cluster_id)?;
        if !(self.cpu_time_s.is_finite() && self.cpu_time_s >= 0.0) {
            return Err(Error::InvalidRecord(alloc::format!(
                "{}: cpu_time_s must be finite and nonnegative",
                self.query_id
            )));
        }
        Ok(())
    }

    /// Ordering key of the replay timeline.
    pub fn order_key(&self) -> (u64, &str) {
        (self.arrival_ms, self.query_id.as_str())
    }
}

/// Identifiers are restricted to `[A-Za-z0-9_-]+` so traces need no quoting.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidId(id.into()))
    }
}

/// Checks that records follow `(arrival_ms, query_id)` ascending order.
pub fn check_sorted(records: &[QueryRecord]) -> Result<()> {
    for (i, pair) in records.windows(2).enumerate() {
        if pair[1].order_key() < pair[0].order_key() {
            return Err(Error::Order(i + 1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_table_is_exhaustive() {
        assert_eq!(
            classify_outcome(Verdict::Offload, Label::Mo),
            ConfusionClass::Tp
        );
        assert_eq!(
            classify_outcome(Verdict::Offload, Label::NonMo),
            ConfusionClass::Fp
        );
        assert_eq!(
            classify_outcome(Verdict::Admit, Label::Mo),
            ConfusionClass::Fn
        );
        assert_eq!(
            classify_outcome(Verdict::Admit, Label::NonMo),
            ConfusionClass::Tn
        );
    }

    #[test]
    fn ids_are_restricted() {
        assert!(validate_id("c01-d1_000042").is_ok());
        assert!(validate_id("").is_err());
        assert!(validate_id("a,b").is_err());
        assert!(validate_id("naïve").is_err());
    }

    #[test]
    fn negative_cpu_rejected() {
        let v = FeatureVector::new(alloc::vec![0.0]).unwrap();
        assert!(QueryRecord::new("q", 0, "c", v.clone(), -1.0, Label::Mo).is_err());
        assert!(QueryRecord::new("q", 0, "c", v, 0.0, Label::Mo).is_ok());
    }

    #[test]
    fn admit_never_charges() {
        let d = Decision::admit(DecisionSource::Model, 0.3);
        assert_eq!(d.quota_cost_charged(), 0.0);
        assert_eq!(d.verdict(), Verdict::Admit);
    }
}
