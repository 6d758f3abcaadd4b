//! Seeded synthetic workload with the structure of production MO traffic.
//!
//! MO queries concentrate in a few "hot" clusters that already had OOM
//! failures the day before, always join (or window) over large scans, and
//! need more memory than the cluster has free. They arrive in small
//! incidents: a failing query and its near-identical retries. Most non-MO
//! traffic repeats earlier queries exactly. Hard negatives look like MO to
//! the rule (joins, big scans, hot cluster) but fit in memory.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::correction::cosine;
use crate::error::{Error, Result};
use crate::math::{exp, ln, round};
use crate::rules::{DiscriminativeRule, RuleExpr, SingleFeatureRule};
use crate::schema::{FeatureVector, DEFAULT_DIMENSION};
use crate::types::{Label, QueryRecord};

/// 2025-01-01T00:00:00Z; day `d` of a generated workload starts `d` days later.
pub const EPOCH_BASE_MS: u64 = 1_735_689_600_000;
pub const DAY_MS: u64 = 86_400_000;

/// Feature indices of the default layout the generator writes.
pub mod layout {
    /// Operator counts, one slot per operator type.
    pub const TABLE_SCAN_COUNT: usize = 0;
    pub const FILTER_COUNT: usize = 1;
    pub const PROJECT_COUNT: usize = 2;
    pub const HASH_AGG_COUNT: usize = 3;
    pub const SORT_COUNT: usize = 5;
    pub const LIMIT_COUNT: usize = 7;
    pub const EXCHANGE_COUNT: usize = 8;
    pub const WINDOW_COUNT: usize = 11;
    pub const SUBQUERY_COUNT: usize = 13;
    pub const JOIN_COUNT: usize = 18;

    pub const CARD_START: usize = 23;
    pub const CARD_OPERATORS: usize = 26;
    /// Per-operator cardinality metrics: rows, bytes, peak rows, peak bytes.
    pub const METRICS: usize = 4;
    pub const CARD_FILTER: usize = 0;
    pub const CARD_PROJECT: usize = 1;
    pub const CARD_HASH_AGG: usize = 2;
    pub const CARD_SORT: usize = 4;
    pub const CARD_EXCHANGE: usize = 6;
    pub const CARD_TABLE_SCAN: usize = 7;
    pub const CARD_HASH_JOIN: usize = 8;
    pub const CARD_WINDOW: usize = 10;

    pub const fn card(operator: usize, metric: usize) -> usize {
        CARD_START + operator * METRICS + metric
    }

    pub const SCAN_BYTES: usize = card(CARD_TABLE_SCAN, 1);
    pub const WINDOW_ROWS: usize = card(CARD_WINDOW, 0);

    pub const MEM_START: usize = 127;
    pub const MEM_LEN: usize = 19;
    /// Leading memory features that are noisy estimates of true demand.
    pub const MEM_INFORMATIVE: usize = 7;

    pub const DOP: usize = 146;
    pub const QUERY_MEM_LIMIT_GB: usize = 147;

    pub const CPU_UTIL: usize = 148;
    pub const MEM_UTIL: usize = 149;
    pub const IO_UTIL: usize = 150;
    pub const NET_UTIL: usize = 151;
    pub const RUNNING: usize = 152;
    pub const QUEUED: usize = 153;
    pub const CACHE_HIT: usize = 154;
    pub const SPILL_RATE: usize = 155;

    pub const NODES: usize = 156;
    pub const CORES_PER_NODE: usize = 157;
    pub const MEM_PER_NODE_GB: usize = 158;
    pub const TOTAL_MEM_GB: usize = 159;
    pub const STORAGE_TB: usize = 160;
    pub const ENGINE_VERSION: usize = 161;

    pub const PREV_OOM: usize = 162;

    const _: () = assert!(SCAN_BYTES == 52 && WINDOW_ROWS == 63);
}

/// `(join > 1 OR window > 0) AND scan_bytes > 1 MiB AND prev_oom > 0`,
/// the structure every generated MO query is planted with.
pub fn planted_rule() -> DiscriminativeRule {
    let leaf = |f, t| {
        RuleExpr::Leaf(SingleFeatureRule {
            feature: f,
            threshold: t,
        })
    };
    DiscriminativeRule::new(RuleExpr::And(vec![
        RuleExpr::Or(vec![
            leaf(layout::JOIN_COUNT, 1.0),
            leaf(layout::WINDOW_ROWS, 0.0),
        ]),
        leaf(layout::SCAN_BYTES, 1_048_576.0),
        leaf(layout::PREV_OOM, 0.0),
    ]))
    .expect("planted rule is well formed")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_clusters: usize,
    pub queries_per_cluster: usize,
    /// Target fraction of MO queries per day.
    pub mo_ratio: f64,
    /// Probability that a non-MO query exactly repeats an earlier one.
    pub repeat_rate: f64,
    /// Records per MO incident: the failing query and its retries.
    pub mo_group_size: usize,
    /// Fraction of non-MO queries built to pass the planted rule.
    pub hard_negative_rate: f64,
    pub days: usize,
    pub mean_cpu_mo_s: f64,
    pub mean_cpu_non_mo_s: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_clusters: 20,
            queries_per_cluster: 10_000,
            mo_ratio: 0.002,
            repeat_rate: 0.8,
            mo_group_size: 3,
            hard_negative_rate: 0.01,
            days: 2,
            mean_cpu_mo_s: 2000.0,
            mean_cpu_non_mo_s: 8.0,
        }
    }
}

const HOT_FRACTION: f64 = 0.3;
const LEAD_HOT_SHARE: f64 = 0.4;
const MO_CPU_CAP_S: f64 = 7200.0;
const RETRY_GAP_MS: (u64, u64) = (60_000, 900_000);
const GROUP_NOISE: f64 = 0.002;
const GROUP_MIN_COSINE: f64 = 0.9999;
const COUNT_JITTER: f64 = 0.05;
const SCAN_PEAK_SHARE: f64 = 0.6;
// share of MO incidents the memory estimates do not give away
const MISESTIMATED_RATE: f64 = 0.15;
/// Keeps an incident's worst-case retry chain inside one day.
pub const MAX_GROUP_SIZE: usize = 10;
const ESTIMATE_BIAS_SIGMA: f64 = 0.0;
const RESERVED_SIGMA: f64 = 1.0;
const GIB: f64 = 1073741824.0;
const MIB: f64 = 1048576.0;

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("generator: {what}")));
        if self.n_clusters == 0 || self.queries_per_cluster == 0 || self.days == 0 {
            return bad("clusters, queries per cluster and days must be positive");
        }
        if !(self.mo_ratio > 0.0 && self.mo_ratio < 1.0) {
            return bad("mo_ratio must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.repeat_rate) {
            return bad("repeat_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.hard_negative_rate) {
            return bad("hard_negative_rate must lie in [0, 1]");
        }
        if self.mo_group_size == 0 || self.mo_group_size > MAX_GROUP_SIZE {
            return bad("mo_group_size must lie in [1, 10]");
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.mean_cpu_mo_s) || !positive(self.mean_cpu_non_mo_s) {
            return bad("mean CPU times must be positive");
        }
        let hot = self.hot_clusters();
        let mo = self.daily_mo();
        if mo as f64 > 0.5 * (hot * self.queries_per_cluster) as f64 {
            return bad("MO queries would exceed half of the hot clusters' traffic");
        }
        Ok(())
    }

    pub fn hot_clusters(&self) -> usize {
        (round(HOT_FRACTION * self.n_clusters as f64) as usize).clamp(1, self.n_clusters)
    }

    pub fn daily_mo(&self) -> usize {
        (round(self.mo_ratio * (self.n_clusters * self.queries_per_cluster) as f64) as usize).max(1)
    }
}

pub fn cluster_id(cluster: usize) -> String {
    format!("c{cluster:02}")
}

#[derive(Clone, Copy, Debug)]
struct ClusterStatic {
    nodes: f64,
    cores_per_node: f64,
    mem_per_node_gb: f64,
    storage_tb: f64,
    version: f64,
    dop: f64,
    query_mem_limit_gb: f64,
    cpu_util: f64,
    mem_util: f64,
    io_util: f64,
    net_util: f64,
    cache_hit: f64,
    /// Multiplicative skew of this cluster's memory estimator.
    estimate_bias: f64,
    /// This cluster's engine build reports its memory estimates in the
    /// second block of memory slots instead of the first.
    alt_estimator: bool,
}

impl ClusterStatic {
    fn total_mem_gb(&self) -> f64 {
        self.nodes * self.mem_per_node_gb
    }
}

fn draw_cluster(rng: &mut ChaCha8Rng) -> ClusterStatic {
    let nodes = rng.random_range(2..=48) as f64;
    let mem_per_node_gb = [64.0, 128.0, 256.0, 512.0][rng.random_range(0..4)];
    ClusterStatic {
        nodes,
        cores_per_node: [16.0, 32.0, 64.0][rng.random_range(0..3)],
        mem_per_node_gb,
        storage_tb: round(nodes * rng.random_range(2.0..8.0)),
        version: rng.random_range(3..=7) as f64,
        dop: [8.0, 16.0, 32.0, 64.0][rng.random_range(0..4)],
        query_mem_limit_gb: mem_per_node_gb * 0.5,
        cpu_util: rng.random_range(0.2..0.7),
        mem_util: rng.random_range(0.3..0.6),
        io_util: rng.random_range(0.1..0.5),
        net_util: rng.random_range(0.1..0.5),
        cache_hit: rng.random_range(0.5..0.95),
        estimate_bias: lognormal(rng, 1.0, ESTIMATE_BIAS_SIGMA),
        alt_estimator: false,
    }
}

/// Splits `total` by `weights` with largest remainders (ties to lower index).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&x| x as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Per-day MO counts per cluster, for days `-1..days` (index 0 is day −1).
fn mo_schedule(config: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let hot = config.hot_clusters();
    let base: Vec<f64> = (0..hot)
        .map(|i| match (hot, i) {
            (1, _) => 1.0,
            (_, 0) => LEAD_HOT_SHARE,
            _ => (1.0 - LEAD_HOT_SHARE) / (hot - 1) as f64,
        })
        .collect();
    (0..=config.days)
        .map(|_| {
            let weights: Vec<f64> = base
                .iter()
                .map(|w| w * rng.random_range(0.9..1.1))
                .collect();
            let mut counts = apportion(config.daily_mo(), &weights);
            counts.resize(config.n_clusters, 0);
            counts
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Mo,
    /// MO query whose optimizer estimates look like an ordinary heavy query.
    MoMisestimated,
    Hard,
    Regular,
}

struct DayContext<'a> {
    cluster: &'a ClusterStatic,
    mem_util: f64,
    cpu_util: f64,
    prev_oom: f64,
}

fn lognormal(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    LogNormal::new(ln(median), sigma)
        .expect("valid lognormal")
        .sample(rng)
}

fn jitter(rng: &mut ChaCha8Rng, x: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    (x + sd * (rng.random::<f64>() * 2.0 - 1.0) * 1.7320508075688772).clamp(lo, hi)
}

/// Memory demand relative to the memory the cluster has free.
fn demand_ratio(kind: Kind, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        Kind::Mo => lognormal(rng, 3.0, 0.35),
        Kind::Hard | Kind::MoMisestimated => lognormal(rng, 0.2, 0.5),
        Kind::Regular => lognormal(rng, 0.05, 1.0),
    }
}

const MEM_SCALE: [f64; layout::MEM_INFORMATIVE] = [1.0, 0.6, 0.3, 0.2, 0.5, 0.8, 0.4];
const MEM_NOISE: [f64; layout::MEM_INFORMATIVE] = [0.15, 0.2, 0.25, 0.25, 0.22, 0.18, 0.25];

fn query_features(kind: Kind, ctx: &DayContext<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use layout::*;
    let mut v = vec![0.0; DEFAULT_DIMENSION];
    let c = ctx.cluster;

    // operator structure
    let joins: u32 = match kind {
        Kind::Mo | Kind::MoMisestimated if rng.random::<f64>() < 0.8 => rng.random_range(2..=6),
        Kind::Mo | Kind::MoMisestimated => 1,
        Kind::Hard => rng.random_range(2..=4),
        Kind::Regular => {
            let u: f64 = rng.random();
            if u < 0.5 {
                0
            } else if u < 0.8 {
                1
            } else if u < 0.92 {
                2
            } else if u < 0.97 {
                3
            } else {
                rng.random_range(4..=6)
            }
        }
    };
    let windows: u32 = match kind {
        Kind::Mo | Kind::MoMisestimated if joins == 1 => rng.random_range(1..=2),
        Kind::Mo | Kind::MoMisestimated => (rng.random::<f64>() < 0.15) as u32,
        Kind::Hard => (rng.random::<f64>() < 0.1) as u32,
        Kind::Regular => (rng.random::<f64>() < 0.05) as u32,
    };
    let subqueries = (rng.random::<f64>() < 0.1) as u32;
    let aggs: u32 = rng.random_range(0..=2);
    let scans = joins + 1 + subqueries;
    v[TABLE_SCAN_COUNT] = scans as f64;
    v[FILTER_COUNT] = rng.random_range(0..=4) as f64;
    v[PROJECT_COUNT] = rng.random_range(1..=3) as f64;
    v[HASH_AGG_COUNT] = aggs as f64;
    v[SORT_COUNT] = rng.random_range(0..=1) as f64;
    v[LIMIT_COUNT] = rng.random_range(0..=1) as f64;
    v[EXCHANGE_COUNT] = (joins + aggs) as f64;
    v[WINDOW_COUNT] = windows as f64;
    v[SUBQUERY_COUNT] = subqueries as f64;
    v[JOIN_COUNT] = joins as f64;
    for slot in [4, 6, 9, 10, 12, 14, 15, 16, 17, 19, 20, 21, 22] {
        if rng.random::<f64>() < 0.08 {
            v[slot] = rng.random_range(1..=2) as f64;
        }
    }

    // table scan sizes; non-MO scans are either small (< 1 MiB) or big (>= 64 MiB)
    let scan_bytes = match kind {
        Kind::Mo | Kind::MoMisestimated => lognormal(rng, 256.0 * MIB, 1.0).max(8.0 * MIB),
        Kind::Hard => lognormal(rng, 256.0 * MIB, 1.2).max(64.0 * MIB),
        Kind::Regular if rng.random::<f64>() < 0.94 => {
            exp(rng.random_range(ln(1024.0)..ln(0.9 * MIB)))
        }
        Kind::Regular => lognormal(rng, 256.0 * MIB, 1.2).max(64.0 * MIB),
    };
    // columnar scans of narrow rows occasionally emit many rows from few bytes
    let row_width = if rng.random::<f64>() < 0.03 {
        rng.random_range(0.01..1.0)
    } else {
        rng.random_range(50.0..500.0)
    };
    let scan_rows = round(scan_bytes / row_width);
    // the largest table dominates: its share of the scan is fixed
    let peak_share = SCAN_PEAK_SHARE;
    v[card(CARD_TABLE_SCAN, 0)] = scan_rows;
    v[SCAN_BYTES] = round(scan_bytes);
    v[card(CARD_TABLE_SCAN, 2)] = round(scan_rows * peak_share);
    v[card(CARD_TABLE_SCAN, 3)] = round(scan_bytes * peak_share);

    let fill = |rng: &mut ChaCha8Rng, v: &mut Vec<f64>, op: usize, present: bool| {
        if !present {
            return;
        }
        let rows = round(lognormal(rng, 1e6, 2.0));
        let bytes = round(rows * rng.random_range(20.0..400.0));
        let peak = rng.random_range(0.3..1.0);
        v[card(op, 0)] = rows;
        v[card(op, 1)] = bytes;
        v[card(op, 2)] = round(rows * peak);
        v[card(op, 3)] = round(bytes * peak);
    };
    let (has_filter, has_sort) = (v[FILTER_COUNT] > 0.0, v[SORT_COUNT] > 0.0);
    fill(rng, &mut v, CARD_FILTER, has_filter);
    fill(rng, &mut v, CARD_PROJECT, true);
    fill(rng, &mut v, CARD_HASH_AGG, aggs > 0);
    fill(rng, &mut v, CARD_SORT, has_sort);
    fill(rng, &mut v, CARD_EXCHANGE, joins + aggs > 0);
    fill(rng, &mut v, CARD_HASH_JOIN, joins > 0);
    fill(rng, &mut v, CARD_WINDOW, windows > 0);
    for op in [
        3, 5, 9, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25,
    ] {
        let present = rng.random::<f64>() < 0.05;
        fill(rng, &mut v, op, present);
    }

    // memory estimates: noisy views of the true demand
    let mem_util = jitter(rng, ctx.mem_util, 0.03, 0.05, 0.9);
    let available = c.total_mem_gb() * GIB * (1.0 - mem_util);
    let demand = demand_ratio(kind, rng) * available * c.estimate_bias;
    if c.alt_estimator {
        // newer build: estimates move to the second block, and the legacy
        // slots report reserved memory, unrelated to this query
        for k in 0..MEM_INFORMATIVE {
            v[MEM_START + MEM_INFORMATIVE + k] =
                round(demand * MEM_SCALE[k] * lognormal(rng, 1.0, MEM_NOISE[k]));
            v[MEM_START + k] =
                round(available * MEM_SCALE[k] * lognormal(rng, 1.0, RESERVED_SIGMA));
        }
    } else {
        // legacy build: the second block does not exist and stays zero
        for k in 0..MEM_INFORMATIVE {
            v[MEM_START + k] = round(demand * MEM_SCALE[k] * lognormal(rng, 1.0, MEM_NOISE[k]));
        }
    }
    for k in 2 * MEM_INFORMATIVE..MEM_LEN {
        if rng.random::<f64>() < 0.5 {
            v[MEM_START + k] = round(lognormal(rng, 1e8, 1.5));
        }
    }

    v[DOP] = c.dop;
    v[QUERY_MEM_LIMIT_GB] = c.query_mem_limit_gb;

    v[CPU_UTIL] = jitter(rng, ctx.cpu_util, 0.05, 0.01, 0.99);
    v[MEM_UTIL] = mem_util;
    v[IO_UTIL] = jitter(rng, c.io_util, 0.05, 0.01, 0.99);
    v[NET_UTIL] = jitter(rng, c.net_util, 0.05, 0.01, 0.99);
    v[RUNNING] = rng.random_range(1..=50) as f64;
    v[QUEUED] = rng.random_range(0..=10) as f64;
    v[CACHE_HIT] = jitter(rng, c.cache_hit, 0.03, 0.0, 1.0);
    v[SPILL_RATE] = rng.random_range(0.0..0.1);

    v[NODES] = c.nodes;
    v[CORES_PER_NODE] = c.cores_per_node;
    v[MEM_PER_NODE_GB] = c.mem_per_node_gb;
    v[TOTAL_MEM_GB] = c.total_mem_gb();
    v[STORAGE_TB] = c.storage_tb;
    v[ENGINE_VERSION] = c.version;

    v[PREV_OOM] = ctx.prev_oom;
    v
}

/// A retry of `base`: sizes perturbed multiplicatively, structure unchanged.
fn near_duplicate(base: &FeatureVector, rng: &mut ChaCha8Rng) -> FeatureVector {
    let mut v = base.as_slice().to_vec();
    let noise = LogNormal::new(0.0, GROUP_NOISE).expect("valid lognormal");
    for x in &mut v[layout::CARD_START..layout::MEM_START + layout::MEM_LEN] {
        *x *= noise.sample(rng);
    }
    // the planted join and window counts stay put
    for (i, x) in v[..layout::CARD_START].iter_mut().enumerate() {
        if i != layout::JOIN_COUNT
            && i != layout::WINDOW_COUNT
            && rng.random::<f64>() < COUNT_JITTER
        {
            *x = (*x + if rng.random::<bool>() { 1.0 } else { -1.0 }).max(0.0);
        }
    }
    FeatureVector::new(v).expect("finite")
}

struct Pending {
    arrival_ms: u64,
    kind: Kind,
    features: Option<FeatureVector>,
    cpu_time_s: f64,
}

fn cluster_day(
    config: &GenConfig,
    ctx: &DayContext<'_>,
    mo: usize,
    hard: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Pending> {
    let n = config.queries_per_cluster;
    let non_mo = n - mo;
    let hard = hard.min(non_mo);
    let mut kinds: Vec<Kind> = (0..non_mo)
        .map(|i| if i < hard { Kind::Hard } else { Kind::Regular })
        .collect();
    kinds.shuffle(rng);
    let mut times: Vec<u64> = (0..non_mo).map(|_| rng.random_range(0..DAY_MS)).collect();
    times.sort_unstable();
    let mut out: Vec<Pending> = times
        .into_iter()
        .zip(kinds)
        .map(|(arrival_ms, kind)| Pending {
            arrival_ms,
            kind,
            features: None,
            cpu_time_s: 0.0,
        })
        .collect();

    // MO incidents
    let g = config.mo_group_size;
    let mo_cpu = Exp::new(1.0 / config.mean_cpu_mo_s).expect("positive rate");
    let mut left = mo;
    while left > 0 {
        let size = left.min(g);
        left -= size;
        let kind = if rng.random::<f64>() < MISESTIMATED_RATE {
            Kind::MoMisestimated
        } else {
            Kind::Mo
        };
        let base = FeatureVector::new(query_features(kind, ctx, rng)).expect("finite");
        let base_cpu = mo_cpu.sample(rng).clamp(1.0, MO_CPU_CAP_S);
        let cpus: Vec<f64> = (0..size)
            .map(|_| (base_cpu * rng.random_range(0.97..1.03)).min(MO_CPU_CAP_S))
            .collect();
        // each retry arrives a few minutes after the previous attempt failed
        let offsets: Vec<u64> = cpus[..size - 1]
            .iter()
            .map(|&c| round(c * 1000.0) as u64 + rng.random_range(RETRY_GAP_MS.0..=RETRY_GAP_MS.1))
            .collect();
        let span: u64 = offsets.iter().sum();
        let mut at = rng.random_range(0..DAY_MS - span);
        let mut members: Vec<FeatureVector> = Vec::with_capacity(size);
        for (k, &cpu) in cpus.iter().enumerate() {
            let features = if k == 0 {
                base.clone()
            } else {
                let candidate = near_duplicate(&base, rng);
                let close = members.iter().all(|m| {
                    cosine(m.as_slice(), candidate.as_slice()).expect("same dimension")
                        >= GROUP_MIN_COSINE
                });
                if close {
                    candidate
                } else {
                    base.clone()
                }
            };
            members.push(features.clone());
            out.push(Pending {
                arrival_ms: at,
                kind: Kind::Mo,
                features: Some(features),
                cpu_time_s: cpu,
            });
            if let Some(&step) = offsets.get(k) {
                at += step;
            }
        }
    }
    out.sort_by_key(|p| p.arrival_ms);

    // non-MO queries: a set of distinct templates, each run at least once,
    // the remaining slots filled uniformly so no template dominates
    let regular_cpu = Exp::new(1.0 / config.mean_cpu_non_mo_s).expect("positive rate");
    let hard_cpu = Exp::new(1.0 / (config.mean_cpu_non_mo_s * 8.0)).expect("positive rate");
    for kind in [Kind::Hard, Kind::Regular] {
        let slots: Vec<usize> = (0..out.len()).filter(|&i| out[i].kind == kind).collect();
        if slots.is_empty() {
            continue;
        }
        let distinct =
            (round((1.0 - config.repeat_rate) * slots.len() as f64) as usize).clamp(1, slots.len());
        let templates: Vec<FeatureVector> = (0..distinct)
            .map(|_| FeatureVector::new(query_features(kind, ctx, rng)).expect("finite"))
            .collect();
        let mut pick: Vec<usize> = (0..slots.len())
            .map(|j| {
                if j < distinct {
                    j
                } else {
                    rng.random_range(0..distinct)
                }
            })
            .collect();
        pick.shuffle(rng);
        let cpu = if kind == Kind::Hard {
            hard_cpu
        } else {
            regular_cpu
        };
        for (&slot, &t) in slots.iter().zip(&pick) {
            out[slot].features = Some(templates[t].clone());
            out[slot].cpu_time_s = cpu.sample(rng);
        }
    }
    out
}

/// One trace per day, each sorted by `(arrival_ms, query_id)`.
pub fn generate(config: &GenConfig) -> Result<Vec<Vec<QueryRecord>>> {
    config.validate()?;
    let mut static_rng = ChaCha8Rng::seed_from_u64(config.seed);
    static_rng.set_stream(u64::MAX);
    let hot = config.hot_clusters();
    let mut clusters: Vec<ClusterStatic> = (0..config.n_clusters)
        .map(|_| draw_cluster(&mut static_rng))
        .collect();
    // the hot clusters come from one provisioning template and differ in
    // load and estimator calibration; the lead one runs a newer engine build
    let template = clusters[0];
    clusters[0].alt_estimator = true;
    clusters[0].version = template.version + 1.0;
    for c in &mut clusters[1..hot] {
        *c = ClusterStatic {
            cpu_util: c.cpu_util,
            mem_util: c.mem_util,
            io_util: c.io_util,
            net_util: c.net_util,
            cache_hit: c.cache_hit,
            estimate_bias: c.estimate_bias,
            ..template
        };
    }
    let mut schedule_rng = ChaCha8Rng::seed_from_u64(config.seed);
    schedule_rng.set_stream(u64::MAX - 1);
    let schedule = mo_schedule(config, &mut schedule_rng);

    let mut days = Vec::with_capacity(config.days);
    for day in 0..config.days {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(day as u64);
        let mo_today = &schedule[day + 1];
        let mo_yesterday = &schedule[day];
        let non_mo_total: usize = mo_today
            .iter()
            .map(|&m| config.queries_per_cluster - m)
            .sum();
        let hard_total = round(config.hard_negative_rate * non_mo_total as f64) as usize;
        let hard_split = apportion(hard_total, &vec![1.0; hot]);
        let day_start = EPOCH_BASE_MS + day as u64 * DAY_MS;

        let mut records = Vec::with_capacity(config.n_clusters * config.queries_per_cluster);
        for (c, cluster) in clusters.iter().enumerate() {
            let is_hot = c < hot;
            let ctx = DayContext {
                cluster,
                mem_util: jitter(&mut rng, cluster.mem_util, 0.03, 0.05, 0.9),
                cpu_util: jitter(&mut rng, cluster.cpu_util, 0.05, 0.01, 0.99),
                prev_oom: if is_hot {
                    mo_yesterday[c].max(1) as f64
                } else {
                    0.0
                },
            };
            let hard = if is_hot { hard_split[c] } else { 0 };
            let pending = cluster_day(config, &ctx, mo_today[c], hard, &mut rng);
            let id = cluster_id(c);
            for (seq, p) in pending.into_iter().enumerate() {
                records.push(QueryRecord {
                    query_id: format!("{id}-d{day}-{seq:06}"),
                    arrival_ms: day_start + p.arrival_ms,
                    cluster_id: id.clone(),
                    features: p.features.expect("features assigned"),
                    cpu_time_s: p.cpu_time_s,
                    label: if p.kind == Kind::Mo {
                        Label::Mo
                    } else {
                        Label::NonMo
                    },
                });
            }
        }
        records.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        days.push(records);
    }
    Ok(days)
}

/// Summary statistics of a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadProfile {
    pub records: usize,
    pub mo: usize,
    /// MO count per UTC day number.
    pub mo_per_day: BTreeMap<u64, usize>,
    pub records_per_day: BTreeMap<u64, usize>,
    pub mo_per_cluster: BTreeMap<String, usize>,
    /// Records whose feature vector exactly equals an earlier record's.
    pub repeated: usize,
}

impl WorkloadProfile {
    pub fn repetition_rate(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.repeated as f64 / self.records as f64
        }
    }

    /// Non-MO queries per MO query, rounded; `None` without MO queries.
    pub fn imbalance(&self) -> Option<u64> {
        (self.mo > 0).then(|| round((self.records - self.mo) as f64 / self.mo as f64) as u64)
    }

    pub fn imbalance_label(&self) -> String {
        match self.imbalance() {
            Some(n) => format!("1:{n}"),
            None => String::from("n/a"),
        }
    }
}

fn bits_hash(v: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in v {
        h ^= x.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
    }
    h
}

pub fn describe(trace: &[QueryRecord]) -> WorkloadProfile {
    let mut profile = WorkloadProfile {
        records: trace.len(),
        mo: 0,
        mo_per_day: BTreeMap::new(),
        records_per_day: BTreeMap::new(),
        mo_per_cluster: BTreeMap::new(),
        repeated: 0,
    };
    let mut seen: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in trace.iter().enumerate() {
        let day = r.arrival_ms / DAY_MS;
        *profile.records_per_day.entry(day).or_default() += 1;
        let mo_here = profile
            .mo_per_cluster
            .entry(r.cluster_id.clone())
            .or_default();
        if r.label.is_positive() {
            profile.mo += 1;
            *mo_here += 1;
            *profile.mo_per_day.entry(day).or_default() += 1;
        }
        let bucket = seen.entry(bits_hash(r.features.as_slice())).or_default();
        if bucket
            .iter()
            .any(|&j| trace[j].features.bitwise_eq(&r.features))
        {
            profile.repeated += 1;
        } else {
            bucket.push(i);
        }
    }
    profile
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            n_clusters: 10,
            queries_per_cluster: 5000,
            days: 1,
            seed: 7,
            ..GenConfig::default()
        }
    }

    #[test]
    fn mo_count_within_tolerance() {
        let day = &generate(&small()).unwrap()[0];
        let mo = day.iter().filter(|r| r.label.is_positive()).count();
        assert!((80..=120).contains(&mo), "{mo}");
        assert_eq!(day.len(), 50_000);
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let other = generate(&GenConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn planted_rule_holds_for_mo() {
        let rule = planted_rule();
        assert_eq!(
            rule.to_string(),
            "AND(OR(GT(18,1),GT(63,0)),GT(52,1048576),GT(162,0))"
        );
        let day = &generate(&small()).unwrap()[0];
        for r in day.iter().filter(|r| r.label.is_positive()) {
            assert!(rule.eval(r.features.as_slice()), "{}", r.query_id);
        }
    }

    #[test]
    fn sorted_and_ids_unique() {
        let day = &generate(&small()).unwrap()[0];
        crate::types::check_sorted(day).unwrap();
        let mut ids: Vec<&str> = day.iter().map(|r| r.query_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), day.len());
    }

    #[test]
    fn bad_configs_rejected() {
        for cfg in [
            GenConfig {
                mo_ratio: 0.0,
                ..small()
            },
            GenConfig {
                mo_ratio: 1.0,
                ..small()
            },
            GenConfig {
                repeat_rate: 1.5,
                ..small()
            },
            GenConfig {
                mo_group_size: 0,
                ..small()
            },
            GenConfig {
                n_clusters: 0,
                ..small()
            },
            GenConfig {
                hard_negative_rate: -0.1,
                ..small()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), [4, 3, 3]);
        assert_eq!(
            apportion(400, &[0.4, 0.12, 0.12, 0.12, 0.12, 0.12])
                .iter()
                .sum::<usize>(),
            400
        );
        assert_eq!(apportion(0, &[1.0]), [0]);
    }

    fn record(id: &str, v: &[f64], label: Label) -> QueryRecord {
        QueryRecord::new(
            id,
            0,
            "c",
            FeatureVector::new(v.to_vec()).unwrap(),
            1.0,
            label,
        )
        .unwrap()
    }

    #[test]
    fn profile_counts() {
        let mut trace = Vec::new();
        for i in 0..1000 {
            let label = if i < 2 { Label::Mo } else { Label::NonMo };
            trace.push(record(&format!("q{i}"), &[i as f64], label));
        }
        let p = describe(&trace);
        assert_eq!(p.imbalance_label(), "1:499");
        assert_eq!(p.repetition_rate(), 0.0);

        let dup: Vec<QueryRecord> = (0..4)
            .map(|i| record(&format!("d{i}"), &[1.0, 2.0], Label::NonMo))
            .collect();
        assert_eq!(describe(&dup).repetition_rate(), 0.75);
        assert_eq!(describe(&dup).imbalance_label(), "n/a");
    }
}
