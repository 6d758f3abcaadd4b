//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed
//! whether or not it passes. A failed criterion is reported, not fatal,
//! unless `SAFELOAD_ACCEPTANCE_STRICT=1` is set; a panic outside a
//! criterion still fails the target.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeload::bundle::{load_bundle, save_bundle};
use safeload::traceio::{parse_trace, render_trace};
use safeload_core::correction::{cosine, CorrectionIndex};
use safeload_core::model::{
    logistic_grad_hess, logistic_loss, root_split, train_logged, ClassWeight, TrainConfig,
    TreeEnsemble,
};
use safeload_core::pipeline::{build_pipeline, ArtifactBundle, BuildConfig, Pipeline, Toggles};
use safeload_core::quota::{entropy, quota_cost, Acceptance, QuotaLedger, QuotaParams};
use safeload_core::rules::{generate_rule, rule_stats, DiscriminativeRule, RuleConfig};
use safeload_core::sim::{
    compute_metrics, run_ablation, sweep_params, AblationRow, ReplayConfig, Variant,
};
use safeload_core::workload::{generate, GenConfig};
use safeload_core::{FeatureGroup, FeatureSchema, FeatureVector, Label, QueryRecord};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Default two-day workload, its bundle and ablation rows, per seed.
struct SeedRun {
    seed: u64,
    day1: Vec<QueryRecord>,
    day2: Vec<QueryRecord>,
    bundle: ArtifactBundle,
    rows: Vec<AblationRow>,
}

const SEEDS: u64 = 10;

fn seed_runs() -> Vec<SeedRun> {
    (0..SEEDS)
        .map(|seed| {
            let mut days = generate(&GenConfig {
                seed,
                ..GenConfig::default()
            })
            .expect("generate");
            let day2 = days.pop().unwrap();
            let day1 = days.pop().unwrap();
            let built = build_pipeline(
                &day1,
                &FeatureSchema::default(),
                &BuildConfig {
                    seed,
                    ..BuildConfig::default()
                },
            )
            .expect("build");
            let rows =
                run_ablation(&built.bundle, &day2, &ReplayConfig::default()).expect("ablate");
            SeedRun {
                seed,
                day1,
                day2,
                bundle: built.bundle,
                rows,
            }
        })
        .collect()
}

fn row(run: &SeedRun, v: Variant) -> &AblationRow {
    run.rows.iter().find(|r| r.variant == v).unwrap()
}

// 1
fn metric_arithmetic() -> Outcome {
    let close = |a: f64, b: f64, dp: i32| (a - b).abs() <= 0.5 * 10f64.powi(-dp);
    let g1 = compute_metrics(2203, 512, 305, 50_853_048);
    let g2 = compute_metrics(2076, 481, 255, 48_818_865);
    let ok = close(g1.precision, 0.8114, 4)
        && close(g1.recall, 0.8784, 4)
        && close(g1.f1, 0.8436, 4)
        && close(g1.accuracy, 0.999984, 6)
        && close(g2.precision, 0.8119, 4)
        && close(g2.recall, 0.8906, 4)
        && close(g2.f1, 0.8494, 4)
        && close(g2.accuracy, 0.999985, 6);
    check(
        ok,
        format!(
            "G1 p={:.4} r={:.4} f1={:.4} acc={:.6}; G2 p={:.4} r={:.4} f1={:.4} acc={:.6}",
            g1.precision,
            g1.recall,
            g1.f1,
            g1.accuracy,
            g2.precision,
            g2.recall,
            g2.f1,
            g2.accuracy
        ),
    )
}

// 2
fn entropy_and_cost() -> Outcome {
    let d = QuotaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let symmetric = (0..1000).all(|_| {
        let p: f64 = rng.random();
        (entropy(p).unwrap() - entropy(1.0 - p).unwrap()).abs() < 1e-12
    });
    let endpoints = entropy(0.0).unwrap() == 0.0 && entropy(1.0).unwrap() == 0.0;
    let half = entropy(0.5).unwrap() == 1.0;
    let unit = quota_cost(1.0, 0, &d).unwrap() == 1.0;
    let c99 = quota_cost(0.99, 0, &d).unwrap();
    let floored = quota_cost(1.0, 4, &d).unwrap();
    let floor_engaged = (0..20).all(|fnc| {
        let raw = 1.0 + d.gamma * entropy(0.7).unwrap() - d.beta * fnc as f64;
        let c = quota_cost(0.7, fnc, &d).unwrap();
        if raw < d.c_min {
            c == d.c_min
        } else {
            (c - raw).abs() < 1e-12
        }
    });
    let ok = symmetric
        && endpoints
        && half
        && unit
        && (c99 - 1.080793).abs() < 1e-6
        && (floored - 0.1).abs() < 1e-6
        && floor_engaged;
    check(
        ok,
        format!(
            "symmetric={symmetric} endpoints={endpoints} H(0.5)=1:{half} cost(1,0)=1:{unit} cost(0.99)={c99:.6} cost(1,fnc=4)={floored} floor={floor_engaged}"
        ),
    )
}

fn toy_record(id: usize, values: Vec<f64>, positive: bool) -> QueryRecord {
    QueryRecord::new(
        format!("q{id}"),
        id as u64,
        "c",
        FeatureVector::new(values).unwrap(),
        1.0,
        if positive { Label::Mo } else { Label::NonMo },
    )
    .unwrap()
}

fn toy_set(rng: &mut ChaCha8Rng, dim: usize) -> Vec<QueryRecord> {
    loop {
        let n = rng.random_range(2..=10);
        let set: Vec<QueryRecord> = (0..n)
            .map(|i| {
                let v = (0..dim).map(|_| rng.random_range(0..4) as f64).collect();
                toy_record(i, v, rng.random::<f64>() < 0.4)
            })
            .collect();
        let pos = set.iter().filter(|r| r.label.is_positive()).count();
        if pos > 0 && pos < set.len() {
            return set;
        }
    }
}

/// Truth tables (over 4 variables) of every AND/OR expression with at most
/// four leaves, variables reusable, mapped to their fewest leaves.
fn realizable_tables() -> BTreeMap<u16, usize> {
    let var = |i: usize| {
        (0..16u16)
            .filter(|a| a >> i & 1 == 1)
            .fold(0u16, |t, a| t | 1 << a)
    };
    let mut by_size: Vec<BTreeSet<u16>> = vec![BTreeSet::new(); 5];
    by_size[1] = (0..4).map(var).collect();
    for k in 2..=4 {
        let mut next = BTreeSet::new();
        for i in 1..k {
            for &f in &by_size[i] {
                for &g in &by_size[k - i] {
                    next.insert(f & g);
                    next.insert(f | g);
                }
            }
        }
        by_size[k] = next;
    }
    let mut best = BTreeMap::new();
    for (k, tables) in by_size.iter().enumerate().skip(1) {
        for &t in tables {
            best.entry(t).or_insert(k);
        }
    }
    best
}

// 3
fn rule_oracle() -> Outcome {
    let schema = FeatureSchema::from_sizes(&[
        (FeatureGroup::OperatorCount, 2),
        (FeatureGroup::OperatorCardinality, 2),
        (FeatureGroup::ExecutionConfig, 1),
        (FeatureGroup::OomIndicator, 1),
    ])
    .unwrap();
    let config = RuleConfig::default();
    let tables = realizable_tables();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let train = toy_set(&mut rng, schema.dimension());
        let validation = toy_set(&mut rng, schema.dimension());
        let generated = generate_rule(&train, &validation, &schema, &config)
            .map_err(|e| format!("case {case}: {e}"))?;
        let base = generated.base.rules();
        let positives = validation.iter().filter(|r| r.label.is_positive()).count();
        // (infeasible?, -filtered or -kept..., leaves): smaller is better
        let key = |pos: usize, neg: usize, leaves: usize| {
            let feasible = pos as f64 / positives as f64 >= config.positive_retention_bound;
            if feasible {
                (0, neg as i64, -(pos as i64), leaves)
            } else {
                (1, -(pos as i64), neg as i64, leaves)
            }
        };
        let oracle = tables
            .iter()
            .map(|(&table, &leaves)| {
                let (mut pos, mut neg) = (0, 0);
                for r in &validation {
                    let a = base.iter().enumerate().fold(0usize, |acc, (i, b)| {
                        acc | (b.matches(r.features.as_slice()) as usize) << i
                    });
                    if table >> a & 1 == 1 {
                        if r.label.is_positive() {
                            pos += 1;
                        } else {
                            neg += 1;
                        }
                    }
                }
                key(pos, neg, leaves)
            })
            .min()
            .unwrap();
        let stats = rule_stats(&generated.rule, &validation);
        let chosen = key(
            stats.positives_matched,
            stats.negatives_matched,
            generated.rule.leaf_count(),
        );
        if chosen != oracle {
            return Err(format!(
                "case {case}: chose {} with {chosen:?}, oracle optimum {oracle:?}",
                generated.rule
            ));
        }
    }
    Ok(format!(
        "1000 instances match the brute-force optimum over {} realizable truth tables",
        tables.len()
    ))
}

fn brute_root_split(
    rows: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    cfg: &TrainConfig,
) -> Option<f64> {
    let g: f64 = grad.iter().sum();
    let h: f64 = hess.iter().sum();
    let lam = cfg.lambda;
    let score = |gs: f64, hs: f64| gs * gs / (hs + lam);
    let mut best: Option<f64> = None;
    for f in 0..rows[0].len() {
        let values: BTreeSet<u64> = rows.iter().map(|r| r[f].to_bits()).collect();
        for &v in &values {
            let v = f64::from_bits(v);
            let (mut gl, mut hl) = (0.0, 0.0);
            for (i, r) in rows.iter().enumerate() {
                if r[f] <= v {
                    gl += grad[i];
                    hl += hess[i];
                }
            }
            let (gr, hr) = (g - gl, h - hl);
            let nonempty = rows.iter().any(|r| r[f] > v);
            if !nonempty || hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(g, h));
            if gain > 0.0 && best.is_none_or(|b| gain > b) {
                best = Some(gain);
            }
        }
    }
    best
}

fn partition_gain(
    rows: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    lam: f64,
    f: usize,
    t: f64,
) -> f64 {
    let (g, h): (f64, f64) = (grad.iter().sum(), hess.iter().sum());
    let (mut gl, mut hl) = (0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        if r[f] < t {
            gl += grad[i];
            hl += hess[i];
        }
    }
    let s = |gs: f64, hs: f64| gs * gs / (hs + lam);
    0.5 * (s(gl, hl) + s(g - gl, h - hl) - s(g, h))
}

// 4
fn trainer_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = TrainConfig {
        min_child_weight: 0.3,
        ..TrainConfig::default()
    };
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
    for case in 0..500 {
        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(0..5) as f64 * 0.5)
                    .collect()
            })
            .collect();
        let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hess: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.25)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let greedy = root_split(&refs, &grad, &hess, &cfg);
        let brute = brute_root_split(&rows, &grad, &hess, &cfg);
        let ok = match (greedy, brute) {
            (None, None) => true,
            (Some(s), Some(b)) => {
                rel(s.gain, b)
                    && rel(
                        partition_gain(&rows, &grad, &hess, cfg.lambda, s.feature, s.threshold),
                        b,
                    )
            }
            _ => false,
        };
        if !ok {
            return Err(format!(
                "split case {case}: greedy {greedy:?} brute {brute:?}"
            ));
        }
    }

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..=240 {
        let m = -6.0 + k as f64 * 0.05;
        for y in [true, false] {
            let (g, hs) = logistic_grad_hess(m, y);
            let fd_g = (logistic_loss(m + h, y) - logistic_loss(m - h, y)) / (2.0 * h);
            let fd_h =
                (logistic_grad_hess(m + h, y).0 - logistic_grad_hess(m - h, y).0) / (2.0 * h);
            worst = worst
                .max((fd_g - g).abs() / g.abs())
                .max((fd_h - hs).abs() / hs.abs());
        }
    }
    if worst > 1e-6 {
        return Err(format!("finite differences off by {worst:e}"));
    }

    for case in 0..20 {
        let n = 60;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<bool> = rows
            .iter()
            .map(|r| r[0] + 0.5 * r[1] + rng.random_range(-0.3..0.3) > 0.2)
            .collect();
        if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
            continue;
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let out = train_logged(&refs, &labels, &TrainConfig::default()).unwrap();
        if let Some(w) = out.losses.windows(2).position(|w| w[1] > w[0] + 1e-9) {
            return Err(format!("loss rose in case {case} round {}", w + 1));
        }
    }

    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![i as f64, (i * 7 % 13) as f64])
        .collect();
    let labels: Vec<bool> = rows.iter().map(|r| r[0] >= 25.0).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let fit = train_logged(
        &refs,
        &labels,
        &TrainConfig {
            rounds: 100,
            learning_rate: 0.3,
            positive_class_weight: ClassWeight::Fixed(1.0),
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .ensemble;
    let correct = refs
        .iter()
        .zip(&labels)
        .filter(|(r, &y)| (fit.score(r).unwrap() >= 0.5) == y)
        .count();
    check(
        correct == rows.len(),
        format!(
            "500 split oracles; grad/hess rel err {worst:.1e}; loss monotone; separable accuracy {}/{}",
            correct,
            rows.len()
        ),
    )
}

fn brute_lookup(entries: &[(Vec<f64>, u64)], q: &[f64], threshold: f64) -> Option<(f64, u64)> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut best: Option<(f64, u64)> = None;
    for (v, at) in entries {
        let (nq, nv) = (norm(q), norm(v));
        if nq == 0.0 || nv == 0.0 {
            continue;
        }
        let s = q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nq * nv);
        if s >= threshold && best.is_none_or(|(b, _)| s > b) {
            best = Some((s, *at));
        }
    }
    best
}

// 5
fn correction_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 12;
    let random_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(0.0..100.0)).collect()
    };
    let fv = |v: &[f64]| FeatureVector::new(v.to_vec()).unwrap();

    let mut index = CorrectionIndex::default();
    let base = random_vec(&mut rng);
    index.insert_fn("a", fv(&base), 0).unwrap();
    let self_sim = index.lookup("a", &fv(&base)).unwrap().map(|m| m.similarity);
    let scaled: Vec<f64> = base.iter().map(|x| x * 37.5).collect();
    let scale_sim = index
        .lookup("a", &fv(&scaled))
        .unwrap()
        .map(|m| m.similarity);
    let scoped = index.lookup("b", &fv(&base)).unwrap().is_none();
    let zero = index.lookup("a", &fv(&vec![0.0; dim])).unwrap().is_none()
        && cosine(&vec![0.0; dim], &base).unwrap() == 0.0;
    if self_sim != Some(1.0)
        || scale_sim.is_none_or(|s| (s - 1.0).abs() > 1e-12)
        || !scoped
        || !zero
    {
        return Err(format!(
            "self {self_sim:?} scaled {scale_sim:?} scoped {scoped} zero {zero}"
        ));
    }

    let threshold = 0.9999;
    let mut index = CorrectionIndex::new(threshold, None).unwrap();
    let mut stored: BTreeMap<&str, Vec<(Vec<f64>, u64)>> = BTreeMap::new();
    let clusters = ["x", "y", "z"];
    let mut hits = 0;
    for at in 0..300 {
        let c = clusters[rng.random_range(0..3)];
        let v = random_vec(&mut rng);
        index.insert_fn(c, fv(&v), at).unwrap();
        stored.entry(c).or_default().push((v, at));
    }
    for lookup in 0..1000 {
        let c = clusters[rng.random_range(0..3)];
        let pool = &stored[c];
        let q: Vec<f64> = if rng.random::<f64>() < 0.5 {
            let (v, _) = &pool[rng.random_range(0..pool.len())];
            let eps = if rng.random::<f64>() < 0.5 {
                1e-4
            } else {
                2e-2
            };
            v.iter()
                .map(|x| x * (1.0 + rng.random_range(-eps..eps)))
                .collect()
        } else {
            random_vec(&mut rng)
        };
        let got = index
            .lookup(c, &fv(&q))
            .unwrap()
            .map(|m| (m.similarity, m.entry.inserted_ms));
        let want = brute_lookup(pool, &q, threshold);
        let same = match (got, want) {
            (None, None) => true,
            (Some((s, a)), Some((t, b))) => a == b && (s - t).abs() < 1e-12,
            _ => false,
        };
        if !same {
            return Err(format!(
                "lookup {lookup}: index {got:?} brute force {want:?}"
            ));
        }
        hits += got.is_some() as usize;
    }
    Ok(format!(
        "self-match 1.0, scaling invariant, scoped, zero never matches; 1000 lookups ({hits} hits) agree with brute force"
    ))
}

// 6
fn quota_conservation(run: &SeedRun) -> Outcome {
    let mut charged: BTreeMap<&str, f64> = BTreeMap::new();
    let full = &row(run, Variant::Full).report;
    for e in &full.log {
        *charged.entry(e.cluster_id.as_str()).or_insert(0.0) += e.cost_charged;
    }
    for (cluster, s) in &full.per_cluster {
        let used = s.daily_quota - s.remaining;
        let sum = charged.get(cluster.as_str()).copied().unwrap_or(0.0);
        if used != sum {
            return Err(format!("{cluster}: used {used} but log charges {sum}"));
        }
    }

    let params = QuotaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ledger = QuotaLedger::new();
    ledger.daily_reset(
        &[("a".to_string(), 3), ("b".to_string(), 1)].into(),
        &params,
    );
    let mut rejected = 0;
    for _ in 0..2000 {
        let cluster = if rng.random::<f64>() < 0.5 { "a" } else { "b" };
        if rng.random::<f64>() < 0.05 {
            ledger.record_false_negative(cluster, &params);
            continue;
        }
        let before = ledger.state_digest();
        let p = rng.random_range(0.5..=1.0);
        if let Acceptance::Rejected(_) = ledger.try_accept(cluster, p, &params).unwrap() {
            rejected += 1;
            if ledger.state_digest() != before {
                return Err("rejected call changed the ledger".into());
            }
        }
    }
    check(
        rejected > 0,
        format!(
            "{} clusters reconcile exactly with the decision log; {rejected} rejections left the ledger digest unchanged",
            full.per_cluster.len()
        ),
    )
}

// 7
fn directional(runs: &[SeedRun]) -> Outcome {
    let mut passed = 0;
    let mut failed = Vec::new();
    for run in runs {
        let f1 = |v| row(run, v).report.metrics.f1;
        let precision = |v| row(run, v).report.metrics.precision;
        let full = f1(Variant::Full);
        let ok = [
            Variant::NoRuleFilter,
            Variant::NoLocalModels,
            Variant::NoCorrection,
            Variant::NoQuota,
        ]
        .iter()
        .all(|&v| full >= f1(v))
            && precision(Variant::NoQuota) <= precision(Variant::Full)
            && full >= 0.80
            && f1(Variant::ModelOnly) <= full;
        if ok {
            passed += 1;
        } else {
            let all: Vec<String> = Variant::ALL
                .iter()
                .map(|&v| format!("{:.4}", f1(v)))
                .collect();
            failed.push(format!("seed {} f1 [{}]", run.seed, all.join(" ")));
        }
    }
    let f1s: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}", row(r, Variant::Full).report.metrics.f1))
        .collect();
    check(
        passed >= 9,
        format!(
            "ordering holds on {passed}/{} seeds (full F1 {}){}",
            runs.len(),
            f1s.join(" "),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failed.join(", "))
            }
        ),
    )
}

// 8
fn rule_retention(runs: &[SeedRun]) -> Outcome {
    let stats: Vec<_> = runs
        .iter()
        .map(|r| rule_stats(&r.bundle.rule, &r.day2))
        .collect();
    let pinned = &stats[0];
    let min_pos = stats
        .iter()
        .map(|s| s.positive_retention)
        .fold(1.0, f64::min);
    let min_filter = stats.iter().map(|s| s.filtering_rate()).fold(1.0, f64::min);
    check(
        pinned.positive_retention >= 0.95 && pinned.filtering_rate() >= 0.90,
        format!(
            "seed 0 rule {}: positive retention {:.4}, filtering {:.4} (all seeds: min retention {min_pos:.4}, min filtering {min_filter:.4})",
            runs[0].bundle.rule,
            pinned.positive_retention,
            pinned.filtering_rate()
        ),
    )
}

// 9
fn correction_efficacy(runs: &[SeedRun]) -> Outcome {
    let gains: Vec<(u64, f64, f64)> = runs
        .iter()
        .map(|r| {
            (
                r.seed,
                row(r, Variant::Full).report.metrics.recall,
                row(r, Variant::NoCorrection).report.metrics.recall,
            )
        })
        .collect();
    let passed = gains.iter().filter(|(_, on, off)| on > off).count();
    let detail: Vec<String> = gains
        .iter()
        .map(|(s, on, off)| format!("{s}:{off:.3}->{on:.3}"))
        .collect();
    check(
        passed >= 9,
        format!(
            "recall rises on {passed}/{} seeds [{}]",
            runs.len(),
            detail.join(" ")
        ),
    )
}

// 10
fn sensitivity(run: &SeedRun) -> Outcome {
    let gammas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    let cells = sweep_params(
        &run.bundle,
        &run.day2,
        &gammas,
        &[0.5],
        &ReplayConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let accepted: Vec<u64> = cells.iter().map(|c| c.report.quota_accepted).collect();
    let betas = [0.0005, 0.005, 0.05, 0.5, 1.0, 2.0];
    let beta_cells = sweep_params(
        &run.bundle,
        &run.day2,
        &[1.0],
        &betas,
        &ReplayConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    // The same positive verdicts pushed through a bare ledger, with no
    // false-negative feedback: isolates the cost function from the loop.
    let full = &cells[0].report.log;
    let open_loop: Vec<u64> = gammas
        .iter()
        .map(|&gamma| {
            let params = QuotaParams {
                gamma,
                ..run.bundle.quota.params
            };
            let mut ledger = QuotaLedger::new();
            ledger.daily_reset(&run.bundle.quota.prev_day_mo, &params);
            full.iter()
                .filter(|e| e.cost_charged > 0.0)
                .filter(|e| {
                    matches!(
                        ledger.try_accept(&e.cluster_id, e.confidence, &params),
                        Ok(Acceptance::Accepted(_))
                    )
                })
                .count() as u64
        })
        .collect();
    check(
        accepted.windows(2).all(|w| w[1] <= w[0]) && beta_cells.len() == 6,
        format!(
            "accepted by gamma {accepted:?}; open-loop ledger {open_loop:?}; beta grid gave {} reports",
            beta_cells.len()
        ),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = safeload::cli::run(
        std::iter::once("safeload").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.insert(rel, std::fs::read(&entry).unwrap());
    }
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files.sort();
    files
}

// 11
fn determinism_and_round_trips(run: &SeedRun) -> Outcome {
    let mut chains = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = tmp.path();
        let p = |s: &str| root.join(s).display().to_string();
        let steps: [Vec<String>; 3] = [
            vec![
                "gen",
                "--seed",
                "7",
                "--out",
                &p("days"),
                "--clusters",
                "8",
                "--per-cluster",
                "4000",
                "--mo-ratio",
                "0.005",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            vec![
                "build",
                "--seed",
                "7",
                "--trace",
                &p("days/day-0.csv"),
                "--out",
                &p("bundle"),
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            vec![
                "replay",
                "--bundle",
                &p("bundle"),
                "--trace",
                &p("days/day-1.csv"),
                "--out",
                &p("report"),
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        ];
        for step in &steps {
            let args: Vec<&str> = step.iter().map(String::as_str).collect();
            if run_cli(&args) != 0 {
                return Err(format!("`{}` failed", step[0]));
            }
        }
        chains.push(dir_bytes(root));
    }
    if chains[0] != chains[1] {
        return Err("gen -> build -> replay outputs differ between runs".into());
    }

    let text = render_trace(&run.day2[..2000], 163);
    let parsed = parse_trace(&text).map_err(|e| e.to_string())?;
    let trace_ok = parsed == run.day2[..2000] && render_trace(&parsed, 163) == text;

    let rule_text = run.bundle.rule.to_string();
    let rule_ok = rule_text
        .parse::<DiscriminativeRule>()
        .is_ok_and(|r| r == run.bundle.rule);

    let model_text = run.bundle.router.global().to_string();
    let model_ok = model_text
        .parse::<TreeEnsemble>()
        .is_ok_and(|m| m == *run.bundle.router.global());

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_bundle(&run.bundle, tmp.path()).map_err(|e| e.to_string())?;
    let loaded = load_bundle(tmp.path(), Some(163)).map_err(|e| e.to_string())?;
    let same_decisions = {
        let mut a = Pipeline::from_bundle(&run.bundle, Toggles::ALL_ON).unwrap();
        let mut b = Pipeline::from_bundle(&loaded, Toggles::ALL_ON).unwrap();
        run.day2
            .iter()
            .all(|r| a.decide(r).unwrap() == b.decide(r).unwrap())
    };
    let first = dir_bytes(tmp.path());
    let tmp2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_bundle(&loaded, tmp2.path()).map_err(|e| e.to_string())?;
    let bundle_ok = same_decisions && dir_bytes(tmp2.path()) == first;

    check(
        trace_ok && rule_ok && model_ok && bundle_ok,
        format!(
            "chain reproducible ({} files); trace {trace_ok} rule {rule_ok} model {model_ok} bundle {bundle_ok}",
            chains[0].len()
        ),
    )
}

// 12
fn throughput(run: &SeedRun) -> Outcome {
    let latency = safeload::latency::measure(&run.bundle, &run.day2).map_err(|e| e.to_string())?;
    check(
        latency.rule_mean_ns < 5_000.0 && latency.model_mean_ns < 1_000_000.0,
        format!(
            "rule stage {:.0} ns over {} decisions; model path {:.1} us over {} decisions",
            latency.rule_mean_ns,
            latency.rule_decisions,
            latency.model_mean_ns / 1000.0,
            latency.model_decisions
        ),
    )
}

fn main() {
    let started = Instant::now();
    let runs = seed_runs();
    let seed0 = &runs[0];
    let _ = &seed0.day1;
    let criteria: Vec<Criterion<'_>> = vec![
        ("metric arithmetic", Box::new(metric_arithmetic)),
        ("entropy and quota cost", Box::new(entropy_and_cost)),
        ("rule-engine oracle", Box::new(rule_oracle)),
        ("trainer oracles", Box::new(trainer_oracles)),
        (
            "correction-index properties",
            Box::new(correction_properties),
        ),
        ("quota conservation", Box::new(|| quota_conservation(seed0))),
        (
            "directional pipeline replication",
            Box::new(|| directional(&runs)),
        ),
        ("rule retention", Box::new(|| rule_retention(&runs))),
        (
            "correction efficacy",
            Box::new(|| correction_efficacy(&runs)),
        ),
        ("sensitivity sweep", Box::new(|| sensitivity(seed0))),
        (
            "determinism and round-trips",
            Box::new(|| determinism_and_round_trips(seed0)),
        ),
        ("online-path throughput", Box::new(|| throughput(seed0))),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {status} {name} ({:.1}s): {detail}",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria.len() - failures,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failures > 0 && std::env::var_os("SAFELOAD_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
