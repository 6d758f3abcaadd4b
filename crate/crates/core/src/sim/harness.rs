//! Ablation table and quota-parameter sweep over a fixed bundle.

use alloc::vec::Vec;

use super::replay::{replay, ReplayConfig, ReplayReport};
use crate::error::{Error, Result};
use crate::pipeline::{build_pipeline, ArtifactBundle, BuildConfig, BuildOutput, Toggles};
use crate::schema::FeatureSchema;
use crate::types::QueryRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoRuleFilter,
    NoLocalModels,
    NoCorrection,
    NoQuota,
    ModelOnly,
}

impl Variant {
    /// Row order of the ablation table.
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoRuleFilter,
        Variant::NoLocalModels,
        Variant::NoCorrection,
        Variant::NoQuota,
        Variant::ModelOnly,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRuleFilter => "no_rule_filter",
            Variant::NoLocalModels => "no_local_models",
            Variant::NoCorrection => "no_correction",
            Variant::NoQuota => "no_quota",
            Variant::ModelOnly => "model_only",
        }
    }

    pub fn toggles(self) -> Toggles {
        let on = Toggles::ALL_ON;
        match self {
            Variant::Full => on,
            Variant::NoRuleFilter => Toggles {
                rule_filter: false,
                ..on
            },
            Variant::NoLocalModels => Toggles {
                local_models: false,
                ..on
            },
            Variant::NoCorrection => Toggles {
                correction: false,
                ..on
            },
            Variant::NoQuota => Toggles { quota: false, ..on },
            Variant::ModelOnly => Toggles::MODEL_ONLY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: ReplayReport,
}

/// Replays `test_day` once per variant against the same bundle.
pub fn run_ablation(
    bundle: &ArtifactBundle,
    test_day: &[QueryRecord],
    config: &ReplayConfig,
) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .iter()
        .map(|&variant| {
            let cfg = ReplayConfig {
                toggles: variant.toggles(),
                ..*config
            };
            Ok(AblationRow {
                variant,
                report: replay(test_day, bundle, &cfg)?,
            })
        })
        .collect()
}

/// Builds on the first day, then ablates on the second.
pub fn run_ablation_on_days(
    train_day: &[QueryRecord],
    test_day: &[QueryRecord],
    schema: &FeatureSchema,
    build: &BuildConfig,
    config: &ReplayConfig,
) -> Result<(BuildOutput, Vec<AblationRow>)> {
    let built = build_pipeline(train_day, schema, build)?;
    let rows = run_ablation(&built.bundle, test_day, config)?;
    Ok((built, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub gamma: f64,
    pub beta: f64,
    pub report: ReplayReport,
}

/// One replay per `(gamma, beta)` pair, gamma-major, everything else fixed.
pub fn sweep_params(
    bundle: &ArtifactBundle,
    test_day: &[QueryRecord],
    gammas: &[f64],
    betas: &[f64],
    config: &ReplayConfig,
) -> Result<Vec<SweepCell>> {
    if gammas.is_empty() || betas.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one gamma and one beta".into(),
        ));
    }
    let mut cells = Vec::with_capacity(gammas.len() * betas.len());
    for &gamma in gammas {
        for &beta in betas {
            let mut cell_bundle = bundle.clone();
            cell_bundle.quota.params.gamma = gamma;
            cell_bundle.quota.params.beta = beta;
            cell_bundle.quota.params.validate()?;
            cells.push(SweepCell {
                gamma,
                beta,
                report: replay(test_day, &cell_bundle, config)?,
            });
        }
    }
    Ok(cells)
}
