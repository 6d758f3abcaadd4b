//! Per-cluster index of false-negative feature vectors.
//!
//! A query whose features are (almost) parallel to a vector that already
//! slipped through as a false negative on the same cluster is treated as MO
//! without asking the model. Search is exact and exhaustive.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::schema::FeatureVector;

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.9999;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / sqrt(na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(cosine_with_norms(a, b, dot(a, a), dot(b, b)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub features: FeatureVector,
    pub inserted_ms: u64,
    norm_sq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match<'a> {
    pub similarity: f64,
    pub entry: &'a IndexEntry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionIndex {
    threshold: f64,
    capacity: Option<usize>,
    dimension: Option<usize>,
    clusters: BTreeMap<String, VecDeque<IndexEntry>>,
    evicted: u64,
}

impl Default for CorrectionIndex {
    fn default() -> Self {
        Self::new(DEFAULT_SIMILARITY_THRESHOLD, None).expect("default threshold is valid")
    }
}

impl CorrectionIndex {
    /// `capacity` bounds each cluster's entries (FIFO eviction); `None` is unbounded.
    pub fn new(threshold: f64, capacity: Option<usize>) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "similarity threshold {threshold} outside (0, 1]"
            )));
        }
        if capacity == Some(0) {
            return Err(Error::Config("index capacity must be positive".into()));
        }
        Ok(Self {
            threshold,
            capacity,
            dimension: None,
            clusters: BTreeMap::new(),
            evicted: 0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    fn check_dimension(&self, features: &FeatureVector) -> Result<()> {
        match self.dimension {
            Some(d) if d != features.len() => Err(Error::Dimension {
                expected: d,
                found: features.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn insert_fn(
        &mut self,
        cluster: &str,
        features: FeatureVector,
        timestamp_ms: u64,
    ) -> Result<()> {
        self.check_dimension(&features)?;
        self.dimension = Some(features.len());
        let norm_sq = dot(features.as_slice(), features.as_slice());
        let entries = self.clusters.entry(cluster.into()).or_default();
        entries.push_back(IndexEntry {
            features,
            inserted_ms: timestamp_ms,
            norm_sq,
        });
        if let Some(cap) = self.capacity {
            while entries.len() > cap {
                entries.pop_front();
                self.evicted += 1;
            }
        }
        Ok(())
    }

    /// Best stored match for the cluster if it reaches the threshold.
    /// Ties go to the earliest insertion.
    pub fn lookup(&self, cluster: &str, features: &FeatureVector) -> Result<Option<Match<'_>>> {
        self.check_dimension(features)?;
        let Some(entries) = self.clusters.get(cluster) else {
            return Ok(None);
        };
        let q = features.as_slice();
        let nq = dot(q, q);
        let mut best: Option<Match<'_>> = None;
        for entry in entries {
            let similarity = cosine_with_norms(q, entry.features.as_slice(), nq, entry.norm_sq);
            if best.is_none_or(|b| similarity > b.similarity) {
                best = Some(Match { similarity, entry });
            }
        }
        Ok(best.filter(|m| m.similarity >= self.threshold))
    }

    pub fn len(&self, cluster: &str) -> usize {
        self.clusters.get(cluster).map_or(0, VecDeque::len)
    }

    pub fn total_len(&self) -> usize {
        self.clusters.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn sizes(&self) -> impl Iterator<Item = (&str, usize)> {
        self.clusters.iter().map(|(k, v)| (k.as_str(), v.len()))
    }

    /// Stored entries of a cluster, oldest first.
    pub fn entries(&self, cluster: &str) -> impl Iterator<Item = &IndexEntry> {
        self.clusters.get(cluster).into_iter().flatten()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn clear(&mut self) {
        self.clusters.clear();
        self.dimension = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 2.0, 2.0], &[2.0, 4.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let diag = cosine(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((diag - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn self_match_is_exact() {
        let mut idx = CorrectionIndex::default();
        let v = fv(&[3.0, 1e7, 0.25, 42.0]);
        idx.insert_fn("a", v.clone(), 5).unwrap();
        let m = idx.lookup("a", &v).unwrap().unwrap();
        assert_eq!(m.similarity, 1.0);
        assert_eq!(m.entry.inserted_ms, 5);
    }

    #[test]
    fn fifo_eviction() {
        let mut idx = CorrectionIndex::new(0.9999, Some(2)).unwrap();
        let v1 = fv(&[1.0, 0.0, 0.0]);
        idx.insert_fn("a", v1.clone(), 1).unwrap();
        idx.insert_fn("a", fv(&[0.0, 1.0, 0.0]), 2).unwrap();
        idx.insert_fn("a", fv(&[0.0, 0.0, 1.0]), 3).unwrap();
        assert_eq!(idx.len("a"), 2);
        assert!(idx.lookup("a", &v1).unwrap().is_none());
        assert_eq!(idx.evicted(), 1);
    }

    #[test]
    fn scoped_per_cluster() {
        let mut idx = CorrectionIndex::default();
        let v = fv(&[1.0, 2.0]);
        idx.insert_fn("a", v.clone(), 0).unwrap();
        assert!(idx.lookup("b", &v).unwrap().is_none());
    }

    #[test]
    fn near_parallel_and_orthogonal() {
        let mut idx = CorrectionIndex::default();
        let mut base = vec![0.0; 8];
        base[0] = 1.0;
        idx.insert_fn("a", fv(&base), 0).unwrap();
        let mut q = base.clone();
        q[1] = 1.0;
        assert!(idx.lookup("a", &fv(&q)).unwrap().is_none());
        let scaled: Vec<f64> = base.iter().map(|x| x * (1.0 + 1e-9)).collect();
        assert_eq!(
            idx.lookup("a", &fv(&scaled)).unwrap().unwrap().similarity,
            1.0
        );
    }

    #[test]
    fn zero_query_never_matches() {
        let mut idx = CorrectionIndex::new(1e-12, None).unwrap();
        idx.insert_fn("a", fv(&[1.0, 1.0]), 0).unwrap();
        assert!(idx.lookup("a", &fv(&[0.0, 0.0])).unwrap().is_none());
    }

    #[test]
    fn ties_go_to_earliest() {
        let mut idx = CorrectionIndex::default();
        idx.insert_fn("a", fv(&[1.0, 1.0]), 10).unwrap();
        idx.insert_fn("a", fv(&[2.0, 2.0]), 20).unwrap();
        let m = idx.lookup("a", &fv(&[1.0, 1.0])).unwrap().unwrap();
        assert_eq!(m.entry.inserted_ms, 10);
    }

    #[test]
    fn invalid_settings_rejected() {
        assert!(CorrectionIndex::new(0.0, None).is_err());
        assert!(CorrectionIndex::new(1.5, None).is_err());
        assert!(CorrectionIndex::new(0.5, Some(0)).is_err());
    }

    proptest! {
        #[test]
        fn scaling_by_power_of_two_is_invariant(
            v in proptest::collection::vec(0.0f64..1e6, 6),
            stored in proptest::collection::vec(proptest::collection::vec(0.0f64..1e6, 6), 1..6),
            k in -20i32..20,
        ) {
            let mut idx = CorrectionIndex::new(0.5, None).unwrap();
            for (i, s) in stored.iter().enumerate() {
                idx.insert_fn("c", fv(s), i as u64).unwrap();
            }
            let scale = 2f64.powi(k);
            let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
            let a = idx.lookup("c", &fv(&v)).unwrap().map(|m| (m.similarity, m.entry.inserted_ms));
            let b = idx.lookup("c", &fv(&scaled)).unwrap().map(|m| (m.similarity, m.entry.inserted_ms));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn cosine_bounded_and_symmetric(
            a in proptest::collection::vec(-1e3f64..1e3, 5),
            b in proptest::collection::vec(-1e3f64..1e3, 5),
        ) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
        }
    }
}
