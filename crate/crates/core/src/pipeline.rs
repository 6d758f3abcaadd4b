//! The online decision path and its offline build.
//!
//! `decide` runs rule filter → correction lookup → model → quota gate and
//! stops at the first stage that settles the query. `feedback` feeds
//! observed false negatives back into the correction index and the quota
//! ledger.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::correction::CorrectionIndex;
use crate::error::{Error, Result};
use crate::model::{train_hybrid, HybridRouter, TrainConfig, DEFAULT_LOCAL_THRESHOLD};
use crate::quota::{Acceptance, QuotaLedger, QuotaParams};
use crate::rules::{
    generate_rule, split_validation, DiscriminativeRule, RuleConfig, RuleGeneration,
};
use crate::schema::FeatureSchema;
use crate::types::{
    check_sorted, Decision, DecisionSource, Label, Observed, Outcome, QueryRecord, Verdict,
};

/// Model confidence at or above which a query is a candidate positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Which stages are active. The model itself is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Toggles {
    pub rule_filter: bool,
    pub correction: bool,
    pub local_models: bool,
    pub quota: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::ALL_ON
    }
}

impl Toggles {
    pub const ALL_ON: Toggles = Toggles {
        rule_filter: true,
        correction: true,
        local_models: true,
        quota: true,
    };

    /// Thresholded global-model scoring and nothing else.
    pub const MODEL_ONLY: Toggles = Toggles {
        rule_filter: false,
        correction: false,
        local_models: false,
        quota: false,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuotaSnapshot {
    pub params: QuotaParams,
    /// MO counts of the day the bundle was trained on, used at the next reset.
    pub prev_day_mo: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub trace_digest: [u8; 32],
    pub build_timestamp_ms: u64,
    pub seed: u64,
}

/// Everything the online path needs, produced offline.
#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactBundle {
    pub schema: FeatureSchema,
    pub rule: DiscriminativeRule,
    pub router: HybridRouter,
    pub quota: QuotaSnapshot,
    pub provenance: Provenance,
    /// Carried-over false negatives; empty for a fresh build.
    pub index: CorrectionIndex,
}

impl ArtifactBundle {
    pub fn check(&self) -> Result<()> {
        let dimension = self.schema.dimension();
        if self.router.dimension() != dimension {
            return Err(Error::SchemaMismatch {
                bundle: self.router.dimension(),
                expected: dimension,
            });
        }
        self.rule.check_dimension(dimension)?;
        self.quota.params.validate()
    }

    /// Fails unless the bundle was built for `dimension` features.
    pub fn expect_dimension(&self, dimension: usize) -> Result<()> {
        if self.schema.dimension() == dimension {
            Ok(())
        } else {
            Err(Error::SchemaMismatch {
                bundle: self.schema.dimension(),
                expected: dimension,
            })
        }
    }
}

/// How often each stage did work; a filtered query touches only the rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub rule_evaluations: u64,
    pub index_lookups: u64,
    pub model_scores: u64,
    pub quota_calls: u64,
    pub feedback_applied: u64,
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    rule: DiscriminativeRule,
    router: HybridRouter,
    index: CorrectionIndex,
    ledger: QuotaLedger,
    params: QuotaParams,
    toggles: Toggles,
    dimension: usize,
    counters: StageCounters,
}

impl Pipeline {
    /// Starts a replay day: quota reset from the bundle's previous-day counts.
    pub fn from_bundle(bundle: &ArtifactBundle, toggles: Toggles) -> Result<Self> {
        bundle.check()?;
        let mut ledger = QuotaLedger::new();
        ledger.daily_reset(&bundle.quota.prev_day_mo, &bundle.quota.params);
        Ok(Self {
            rule: bundle.rule.clone(),
            router: bundle.router.clone(),
            index: bundle.index.clone(),
            ledger,
            params: bundle.quota.params,
            toggles,
            dimension: bundle.schema.dimension(),
            counters: StageCounters::default(),
        })
    }

    pub fn toggles(&self) -> Toggles {
        self.toggles
    }

    pub fn index(&self) -> &CorrectionIndex {
        &self.index
    }

    pub fn ledger(&self) -> &QuotaLedger {
        &self.ledger
    }

    pub fn router(&self) -> &HybridRouter {
        &self.router
    }

    pub fn params(&self) -> &QuotaParams {
        &self.params
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    pub fn decide(&mut self, record: &QueryRecord) -> Result<Decision> {
        let x = record.features.as_slice();
        if x.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                found: x.len(),
            });
        }
        let cluster = record.cluster_id.as_str();

        if self.toggles.rule_filter {
            self.counters.rule_evaluations += 1;
            if !self.rule.eval(x) {
                return Ok(Decision::admit(DecisionSource::RuleFilter, 0.0));
            }
        }

        let mut corrected = false;
        if self.toggles.correction {
            self.counters.index_lookups += 1;
            corrected = self.index.lookup(cluster, &record.features)?.is_some();
        }
        let (source, confidence) = if corrected {
            (DecisionSource::CorrectionIndex, 1.0)
        } else {
            self.counters.model_scores += 1;
            let p = if self.toggles.local_models {
                self.router.route_score(cluster, x)?
            } else {
                self.router.global_score(x)?
            };
            (DecisionSource::Model, p)
        };
        if source == DecisionSource::Model && confidence < DECISION_THRESHOLD {
            return Ok(Decision::admit(source, confidence));
        }

        if !self.toggles.quota {
            return Ok(Decision::offload(source, confidence, 0.0));
        }
        self.counters.quota_calls += 1;
        Ok(
            match self.ledger.try_accept(cluster, confidence, &self.params)? {
                Acceptance::Accepted(cost) => Decision::offload(source, confidence, cost),
                Acceptance::Rejected(_) => Decision::admit(DecisionSource::QuotaClamp, confidence),
            },
        )
    }

    /// Applies what happened to an admitted query. Offloaded queries have
    /// no feedback path and are ignored.
    pub fn feedback(
        &mut self,
        decision: &Decision,
        outcome: &Outcome,
        record: &QueryRecord,
    ) -> Result<()> {
        if decision.verdict() == Verdict::Offload || outcome.observed == Observed::Succeeded {
            return Ok(());
        }
        self.counters.feedback_applied += 1;
        self.index.insert_fn(
            &record.cluster_id,
            record.features.clone(),
            outcome.completed_ms,
        )?;
        self.ledger
            .record_false_negative(&record.cluster_id, &self.params);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildConfig {
    pub rule: RuleConfig,
    pub train: TrainConfig,
    pub local_threshold: usize,
    pub quota: QuotaParams,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            rule: RuleConfig::default(),
            train: TrainConfig::default(),
            local_threshold: DEFAULT_LOCAL_THRESHOLD,
            quota: QuotaParams::default(),
            seed: 0,
        }
    }
}

/// What the build saw, for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildSummary {
    pub rule: RuleGeneration,
    /// Validation slice lacked a class, so the whole day was used instead.
    pub validation_fallback: bool,
    pub records: usize,
    pub positives: usize,
    pub survivors: usize,
    pub survivor_positives: usize,
}

impl BuildSummary {
    /// Negatives per positive before the rule filter.
    pub fn raw_imbalance(&self) -> f64 {
        (self.records - self.positives) as f64 / self.positives as f64
    }

    /// Negatives per positive among the records the model is trained on.
    pub fn survivor_imbalance(&self) -> f64 {
        (self.survivors - self.survivor_positives) as f64 / self.survivor_positives as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOutput {
    pub bundle: ArtifactBundle,
    pub summary: BuildSummary,
}

/// SHA-256 over the canonical content of a trace.
pub fn trace_digest(records: &[QueryRecord]) -> [u8; 32] {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.query_id.as_bytes());
        h.update([0]);
        h.update(r.arrival_ms.to_le_bytes());
        h.update(r.cluster_id.as_bytes());
        h.update([0, r.label.is_positive() as u8]);
        h.update(r.cpu_time_s.to_bits().to_le_bytes());
        h.update((r.features.len() as u64).to_le_bytes());
        for v in r.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}

/// MO count per cluster; clusters without MO queries appear with 0.
pub fn mo_counts(records: &[QueryRecord]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.cluster_id.clone()).or_insert(0) += (r.label == Label::Mo) as u64;
    }
    counts
}

fn has_both_classes(records: &[QueryRecord]) -> bool {
    records.iter().any(|r| r.label.is_positive()) && records.iter().any(|r| !r.label.is_positive())
}

pub fn build_pipeline(
    training: &[QueryRecord],
    schema: &FeatureSchema,
    config: &BuildConfig,
) -> Result<BuildOutput> {
    config.quota.validate()?;
    config.train.validate()?;
    check_sorted(training)?;
    if let Some(r) = training
        .iter()
        .find(|r| r.features.len() != schema.dimension())
    {
        return Err(Error::Dimension {
            expected: schema.dimension(),
            found: r.features.len(),
        });
    }
    let positives = training.iter().filter(|r| r.label.is_positive()).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }

    let (fit, validation) = split_validation(training);
    let validation_fallback = !has_both_classes(fit) || !has_both_classes(validation);
    let generation = if validation_fallback {
        generate_rule(training, training, schema, &config.rule)?
    } else {
        generate_rule(fit, validation, schema, &config.rule)?
    };

    let survivors: Vec<QueryRecord> = training
        .iter()
        .filter(|r| generation.rule.eval(r.features.as_slice()))
        .cloned()
        .collect();
    let survivor_positives = survivors.iter().filter(|r| r.label.is_positive()).count();
    let router = train_hybrid(&survivors, &config.train, config.local_threshold)?;

    let bundle = ArtifactBundle {
        schema: schema.clone(),
        rule: generation.rule.clone(),
        router,
        quota: QuotaSnapshot {
            params: config.quota,
            prev_day_mo: mo_counts(training),
        },
        provenance: Provenance {
            trace_digest: trace_digest(training),
            build_timestamp_ms: training.iter().map(|r| r.arrival_ms).max().unwrap_or(0),
            seed: config.seed,
        },
        index: CorrectionIndex::default(),
    };
    Ok(BuildOutput {
        bundle,
        summary: BuildSummary {
            rule: generation,
            validation_fallback,
            records: training.len(),
            positives,
            survivors: survivors.len(),
            survivor_positives,
        },
    })
}
