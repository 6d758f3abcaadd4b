//! Self-tuning per-cluster quota.
//!
//! Each positive prediction must pay `max(1 + γ·H(p) − β·FNC, c_min)` out of
//! the cluster's remaining daily quota; when it cannot, the prediction is
//! flipped to negative. Uncertain predictions pay more, and clusters that
//! have recently let MO queries through pay less.
//!
//! Charged amounts and quotas live on a 2⁻³² grid so that the used quota is
//! always exactly the sum of charged costs, whatever the summation order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;

use crate::error::{Error, Result};
use crate::math::{ceil, floor, log2};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuotaParams {
    pub gamma: f64,
    pub beta: f64,
    pub c_min: f64,
    /// Daily quota per MO query seen on the previous day.
    pub daily_multiplier: f64,
    pub min_daily_quota: f64,
}

impl Default for QuotaParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 0.5,
            c_min: 0.1,
            daily_multiplier: 2.0,
            min_daily_quota: 5.0,
        }
    }
}

impl QuotaParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str| {
            Err(Error::Config(alloc::format!(
                "quota parameter {name} out of range"
            )))
        };
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad("gamma");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta");
        }
        if !(self.c_min.is_finite() && self.c_min > 0.0) {
            return bad("c_min");
        }
        if !(self.daily_multiplier.is_finite() && self.daily_multiplier > 0.0) {
            return bad("daily_multiplier");
        }
        if !(self.min_daily_quota.is_finite() && self.min_daily_quota >= 0.0) {
            return bad("min_daily_quota");
        }
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(p))
    }
}

/// Binary entropy in bits, with `0·log2(0) = 0`.
pub fn entropy(p: f64) -> Result<f64> {
    check_probability(p)?;
    let term = |x: f64| if x > 0.0 { -x * log2(x) } else { 0.0 };
    Ok(term(p) + term(1.0 - p))
}

pub fn quota_cost(p: f64, fnc: u64, params: &QuotaParams) -> Result<f64> {
    let h = entropy(p)?;
    let cost = 1.0 + params.gamma * h - params.beta * fnc as f64;
    Ok(cost.max(params.c_min))
}

const GRID: f64 = 4294967296.0; // 2^32
/// Keeps quantities below 2^21 so the 2^-32 grid fits in a mantissa.
const QUOTA_CAP: f64 = 2097152.0;

/// Rounds up so the charge never drops below the floor.
fn charge_amount(cost: f64) -> f64 {
    (ceil(cost * GRID) / GRID).min(QUOTA_CAP)
}

fn quota_amount(q: f64) -> f64 {
    (floor(q * GRID) / GRID).min(QUOTA_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Acceptance {
    Accepted(f64),
    Rejected(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterQuota {
    pub daily_quota: f64,
    pub remaining: f64,
    pub fnc: u64,
    pub accepted: u64,
    pub rejected: u64,
}

impl ClusterQuota {
    fn fresh(daily_quota: f64) -> Self {
        Self {
            daily_quota,
            remaining: daily_quota,
            fnc: 0,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn used(&self) -> f64 {
        self.daily_quota - self.remaining
    }

    /// Used share of the daily quota; 0 for an empty quota.
    pub fn utilization(&self) -> f64 {
        if self.daily_quota > 0.0 {
            self.used() / self.daily_quota
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuotaLedger {
    clusters: BTreeMap<String, ClusterQuota>,
    auto_initialized: BTreeSet<String>,
}

impl QuotaLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cluster: &str) -> Option<&ClusterQuota> {
        self.clusters.get(cluster)
    }

    pub fn clusters(&self) -> impl Iterator<Item = (&str, &ClusterQuota)> {
        self.clusters.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Clusters that were first seen at decision time rather than at reset.
    pub fn auto_initialized(&self) -> impl Iterator<Item = &str> {
        self.auto_initialized.iter().map(String::as_str)
    }

    fn entry(&mut self, cluster: &str, params: &QuotaParams) -> &mut ClusterQuota {
        if !self.clusters.contains_key(cluster) {
            self.auto_initialized.insert(cluster.into());
            self.clusters.insert(
                cluster.into(),
                ClusterQuota::fresh(quota_amount(params.min_daily_quota)),
            );
        }
        self.clusters.get_mut(cluster).unwrap()
    }

    /// Charges a positive prediction against the cluster's quota.
    pub fn try_accept(
        &mut self,
        cluster: &str,
        p: f64,
        params: &QuotaParams,
    ) -> Result<Acceptance> {
        check_probability(p)?;
        let fnc = self.clusters.get(cluster).map_or(0, |c| c.fnc);
        let cost = charge_amount(quota_cost(p, fnc, params)?);
        let entry = self.entry(cluster, params);
        if entry.remaining >= cost {
            entry.remaining -= cost;
            entry.accepted += 1;
            Ok(Acceptance::Accepted(cost))
        } else {
            Ok(Acceptance::Rejected(cost))
        }
    }

    pub fn record_false_negative(&mut self, cluster: &str, params: &QuotaParams) {
        self.entry(cluster, params).fnc += 1;
    }

    /// Starts a new quota window. Clusters missing from `prev_day_mo` are
    /// treated as having had no MO queries.
    pub fn daily_reset(&mut self, prev_day_mo: &BTreeMap<String, u64>, params: &QuotaParams) {
        for cluster in prev_day_mo.keys() {
            self.clusters
                .entry(cluster.clone())
                .or_insert_with(|| ClusterQuota::fresh(0.0));
        }
        for (cluster, state) in self.clusters.iter_mut() {
            let count = prev_day_mo.get(cluster).copied().unwrap_or(0);
            let quota = (params.daily_multiplier * count as f64).max(params.min_daily_quota);
            *state = ClusterQuota::fresh(quota_amount(quota));
        }
        self.auto_initialized.clear();
    }

    /// FNV-1a over the full ledger state, bit-for-bit.
    pub fn state_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, c) in &self.clusters {
            feed(name.as_bytes());
            feed(&[0]);
            feed(&c.daily_quota.to_bits().to_le_bytes());
            feed(&c.remaining.to_bits().to_le_bytes());
            feed(&c.fnc.to_le_bytes());
            feed(&c.accepted.to_le_bytes());
        }
        for name in &self.auto_initialized {
            feed(name.as_bytes());
            feed(&[1]);
        }
        h
    }
}
