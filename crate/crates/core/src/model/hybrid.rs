//! Global model plus per-cluster local models for data-rich clusters.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::gbdt::{train_records, TrainConfig, TreeEnsemble};
use crate::error::{Error, Result};
use crate::types::QueryRecord;

pub const DEFAULT_LOCAL_THRESHOLD: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct HybridRouter {
    global: TreeEnsemble,
    locals: BTreeMap<String, TreeEnsemble>,
    local_threshold: usize,
    /// Clusters that qualified for a local model whose training failed.
    fallbacks: BTreeMap<String, Error>,
}

impl HybridRouter {
    pub fn new(
        global: TreeEnsemble,
        locals: BTreeMap<String, TreeEnsemble>,
        local_threshold: usize,
    ) -> Result<Self> {
        if let Some(bad) = locals
            .values()
            .find(|m| m.dimension() != global.dimension())
        {
            return Err(Error::Dimension {
                expected: global.dimension(),
                found: bad.dimension(),
            });
        }
        Ok(Self {
            global,
            locals,
            local_threshold,
            fallbacks: BTreeMap::new(),
        })
    }

    pub fn global(&self) -> &TreeEnsemble {
        &self.global
    }

    pub fn locals(&self) -> &BTreeMap<String, TreeEnsemble> {
        &self.locals
    }

    pub fn local_threshold(&self) -> usize {
        self.local_threshold
    }

    pub fn fallbacks(&self) -> &BTreeMap<String, Error> {
        &self.fallbacks
    }

    pub fn dimension(&self) -> usize {
        self.global.dimension()
    }

    pub fn remove_local(&mut self, cluster: &str) -> Option<TreeEnsemble> {
        self.locals.remove(cluster)
    }

    /// The cluster's local score if it has a local model, else the global score.
    pub fn route_score(&self, cluster: &str, features: &[f64]) -> Result<f64> {
        self.locals
            .get(cluster)
            .unwrap_or(&self.global)
            .score(features)
    }

    pub fn global_score(&self, features: &[f64]) -> Result<f64> {
        self.global.score(features)
    }
}

/// Trains the global model on every record and a local model for each
/// cluster with more than `local_threshold` positives.
pub fn train_hybrid(
    records: &[QueryRecord],
    config: &TrainConfig,
    local_threshold: usize,
) -> Result<HybridRouter> {
    let global = train_records(records, config)?;
    let mut by_cluster: BTreeMap<&str, Vec<QueryRecord>> = BTreeMap::new();
    for r in records {
        by_cluster.entry(&r.cluster_id).or_default().push(r.clone());
    }
    let mut locals = BTreeMap::new();
    let mut fallbacks = BTreeMap::new();
    for (cluster, rs) in by_cluster {
        let positives = rs.iter().filter(|r| r.label.is_positive()).count();
        if positives <= local_threshold {
            continue;
        }
        match train_records(&rs, config) {
            Ok(model) => {
                locals.insert(cluster.into(), model);
            }
            Err(e) => {
                fallbacks.insert(cluster.into(), e);
            }
        }
    }
    let mut router = HybridRouter::new(global, locals, local_threshold)?;
    router.fallbacks = fallbacks;
    Ok(router)
}
