//! Feature layout: how the 163 (by default) feature slots are grouped.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 163;

/// The seven feature groups of the query/cluster feature taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureGroup {
    OperatorCount,
    OperatorCardinality,
    MemoryIntensive,
    ExecutionConfig,
    ResourceMetrics,
    ClusterConfig,
    OomIndicator,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::OperatorCount,
        FeatureGroup::OperatorCardinality,
        FeatureGroup::MemoryIntensive,
        FeatureGroup::ExecutionConfig,
        FeatureGroup::ResourceMetrics,
        FeatureGroup::ClusterConfig,
        FeatureGroup::OomIndicator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::OperatorCount => "operator_count",
            FeatureGroup::OperatorCardinality => "operator_cardinality",
            FeatureGroup::MemoryIntensive => "memory_intensive",
            FeatureGroup::ExecutionConfig => "execution_config",
            FeatureGroup::ResourceMetrics => "resource_metrics",
            FeatureGroup::ClusterConfig => "cluster_config",
            FeatureGroup::OomIndicator => "oom_indicator",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    pub fn is_query_level(self) -> bool {
        matches!(
            self,
            FeatureGroup::OperatorCount
                | FeatureGroup::OperatorCardinality
                | FeatureGroup::MemoryIntensive
                | FeatureGroup::ExecutionConfig
        )
    }

    /// Width of the group in the default layout.
    pub fn default_len(self) -> usize {
        match self {
            FeatureGroup::OperatorCount => 23,
            FeatureGroup::OperatorCardinality => 104,
            FeatureGroup::MemoryIntensive => 19,
            FeatureGroup::ExecutionConfig => 2,
            FeatureGroup::ResourceMetrics => 8,
            FeatureGroup::ClusterConfig => 6,
            FeatureGroup::OomIndicator => 1,
        }
    }

    /// Groups whose features feed the single-feature rule library.
    pub const RULE_GROUPS: [FeatureGroup; 3] = [
        FeatureGroup::OperatorCount,
        FeatureGroup::OperatorCardinality,
        FeatureGroup::OomIndicator,
    ];
}

/// Partition of `[0, dimension)` into named feature groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    dimension: usize,
    groups: Vec<(FeatureGroup, Range<usize>)>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        let sizes: Vec<(FeatureGroup, usize)> = FeatureGroup::ALL
            .iter()
            .map(|&g| (g, g.default_len()))
            .collect();
        Self::from_sizes(&sizes).expect("default layout is valid")
    }
}

impl FeatureSchema {
    /// Lays the groups out contiguously in the given order.
    pub fn from_sizes(sizes: &[(FeatureGroup, usize)]) -> Result<Self> {
        let mut start = 0;
        let mut groups = Vec::with_capacity(sizes.len());
        for &(group, len) in sizes {
            groups.push((group, start..start + len));
            start += len;
        }
        Self::from_ranges(groups)
    }

    pub fn from_ranges(mut groups: Vec<(FeatureGroup, Range<usize>)>) -> Result<Self> {
        groups.sort_by_key(|(g, r)| (r.start, r.end, *g));
        let mut cursor = 0;
        for (i, (group, range)) in groups.iter().enumerate() {
            if groups[..i].iter().any(|(g, _)| g == group) {
                return Err(Error::InvalidSchema(format!(
                    "group {} listed twice",
                    group.name()
                )));
            }
            if range.start != cursor || range.end < range.start {
                return Err(Error::InvalidSchema(format!(
                    "group {} range {}..{} leaves a gap or overlaps",
                    group.name(),
                    range.start,
                    range.end
                )));
            }
            cursor = range.end;
        }
        if cursor == 0 {
            return Err(Error::InvalidSchema("dimension must be positive".into()));
        }
        Ok(Self {
            dimension: cursor,
            groups,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn groups(&self) -> &[(FeatureGroup, Range<usize>)] {
        &self.groups
    }

    pub fn range(&self, group: FeatureGroup) -> Option<Range<usize>> {
        self.groups
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, r)| r.clone())
    }

    pub fn group_of(&self, index: usize) -> Option<FeatureGroup> {
        self.groups
            .iter()
            .find(|(_, r)| r.contains(&index))
            .map(|(g, _)| *g)
    }

    /// Span covered by the query-level groups.
    pub fn query_level_range(&self) -> Range<usize> {
        self.span(|g| g.is_query_level())
    }

    pub fn cluster_level_range(&self) -> Range<usize> {
        self.span(|g| !g.is_query_level())
    }

    fn span(&self, pick: impl Fn(FeatureGroup) -> bool) -> Range<usize> {
        let picked = self
            .groups
            .iter()
            .filter(|(g, r)| pick(*g) && !r.is_empty());
        let start = picked.clone().map(|(_, r)| r.start).min().unwrap_or(0);
        let end = picked.map(|(_, r)| r.end).max().unwrap_or(0);
        start..end
    }

    /// Builds a vector checked against this schema.
    pub fn vector(&self, values: Vec<f64>) -> Result<FeatureVector> {
        if values.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                found: values.len(),
            });
        }
        FeatureVector::new(values)
    }
}

/// Immutable, finite feature vector. Clones share storage.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Arc<[f64]>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values.into()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when both handles point at the same allocation.
    pub fn shares_storage(&self, other: &FeatureVector) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Bitwise equality (distinguishes `0.0` from `-0.0`).
    pub fn bitwise_eq(&self, other: &FeatureVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(other.0.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl core::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_layout_matches_group_widths() {
        let schema = FeatureSchema::default();
        assert_eq!(schema.dimension(), 163);
        assert_eq!(schema.range(FeatureGroup::OperatorCount), Some(0..23));
        assert_eq!(
            schema.range(FeatureGroup::OperatorCardinality),
            Some(23..127)
        );
        assert_eq!(schema.range(FeatureGroup::OomIndicator), Some(162..163));
        assert_eq!(schema.query_level_range(), 0..148);
        assert_eq!(schema.cluster_level_range(), 148..163);
        assert_eq!(schema.group_of(52), Some(FeatureGroup::OperatorCardinality));
        assert_eq!(schema.group_of(163), None);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let err = FeatureSchema::from_ranges(vec![
            (FeatureGroup::OperatorCount, 0..3),
            (FeatureGroup::OomIndicator, 2..4),
        ]);
        assert!(matches!(err, Err(Error::InvalidSchema(_))));
        let gap = FeatureSchema::from_ranges(vec![
            (FeatureGroup::OperatorCount, 0..3),
            (FeatureGroup::OomIndicator, 4..5),
        ]);
        assert!(gap.is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(
            FeatureVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
        let schema = FeatureSchema::default();
        assert!(matches!(
            schema.vector(vec![0.0; 10]),
            Err(Error::Dimension {
                expected: 163,
                found: 10
            })
        ));
    }
}
