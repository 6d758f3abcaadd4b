//! Discriminative rule filtering.
//!
//! Offline, a library of single-feature threshold rules is built from the
//! positive samples of the training day, four base rules are picked from it,
//! and every AND/OR combination of the four is scored on a validation slice.
//! Online, a query that does not match the chosen rule is admitted without
//! consulting any later stage.
//!
//! All predicates are strict `value > threshold`; there is no negation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::schema::{FeatureGroup, FeatureSchema, FeatureVector};
use crate::types::QueryRecord;

/// `features[feature] > threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingleFeatureRule {
    pub feature: usize,
    pub threshold: f64,
}

impl SingleFeatureRule {
    pub fn new(feature: usize, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidRule(format!(
                "threshold {threshold} is not finite"
            )));
        }
        Ok(Self { feature, threshold })
    }

    #[inline]
    pub fn matches(&self, features: &[f64]) -> bool {
        features[self.feature] > self.threshold
    }
}

impl fmt::Display for SingleFeatureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GT({},{})", self.feature, self.threshold)
    }
}

/// Expression tree over single-feature leaves. Connectives are n-ary.
#[derive(Clone, Debug, PartialEq)]
pub enum RuleExpr {
    Leaf(SingleFeatureRule),
    And(Vec<RuleExpr>),
    Or(Vec<RuleExpr>),
}

impl RuleExpr {
    fn eval(&self, features: &[f64]) -> bool {
        match self {
            RuleExpr::Leaf(rule) => rule.matches(features),
            RuleExpr::And(children) => children.iter().all(|c| c.eval(features)),
            RuleExpr::Or(children) => children.iter().any(|c| c.eval(features)),
        }
    }

    fn leaf_count(&self) -> usize {
        match self {
            RuleExpr::Leaf(_) => 1,
            RuleExpr::And(c) | RuleExpr::Or(c) => c.iter().map(RuleExpr::leaf_count).sum(),
        }
    }

    fn for_each_leaf(&self, f: &mut impl FnMut(&SingleFeatureRule)) {
        match self {
            RuleExpr::Leaf(rule) => f(rule),
            RuleExpr::And(c) | RuleExpr::Or(c) => c.iter().for_each(|e| e.for_each_leaf(f)),
        }
    }

    /// Merges nested connectives of the same kind and unwraps singletons.
    fn flatten(self) -> Result<RuleExpr> {
        let (is_and, children) = match self {
            leaf @ RuleExpr::Leaf(_) => return Ok(leaf),
            RuleExpr::And(c) => (true, c),
            RuleExpr::Or(c) => (false, c),
        };
        if children.is_empty() {
            return Err(Error::InvalidRule("connective without operands".into()));
        }
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match (is_and, child.flatten()?) {
                (true, RuleExpr::And(inner)) | (false, RuleExpr::Or(inner)) => flat.extend(inner),
                (_, other) => flat.push(other),
            }
        }
        if flat.len() == 1 {
            return Ok(flat.pop().unwrap());
        }
        Ok(if is_and {
            RuleExpr::And(flat)
        } else {
            RuleExpr::Or(flat)
        })
    }
}

impl fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, children) = match self {
            RuleExpr::Leaf(rule) => return rule.fmt(f),
            RuleExpr::And(c) => ("AND", c),
            RuleExpr::Or(c) => ("OR", c),
        };
        f.write_str(name)?;
        f.write_str("(")?;
        for (i, child) in children.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            child.fmt(f)?;
        }
        f.write_str(")")
    }
}

/// A flattened AND/OR combination of one to four single-feature rules.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminativeRule {
    root: RuleExpr,
}

impl DiscriminativeRule {
    pub const MAX_LEAVES: usize = 4;

    pub fn new(root: RuleExpr) -> Result<Self> {
        let root = root.flatten()?;
        let leaves = root.leaf_count();
        if leaves == 0 || leaves > Self::MAX_LEAVES {
            return Err(Error::InvalidRule(format!(
                "rule has {leaves} leaves, allowed 1..={}",
                Self::MAX_LEAVES
            )));
        }
        Ok(Self { root })
    }

    pub fn single(rule: SingleFeatureRule) -> Self {
        Self {
            root: RuleExpr::Leaf(rule),
        }
    }

    pub fn root(&self) -> &RuleExpr {
        &self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn leaves(&self) -> Vec<SingleFeatureRule> {
        let mut out = Vec::new();
        self.root.for_each_leaf(&mut |r| out.push(*r));
        out
    }

    /// `true` means "potential MO, forward to the model".
    #[inline]
    pub fn eval(&self, features: &[f64]) -> bool {
        self.root.eval(features)
    }

    pub fn check_dimension(&self, dimension: usize) -> Result<()> {
        match self.leaves().iter().map(|l| l.feature).max() {
            Some(max) if max >= dimension => Err(Error::Dimension {
                expected: dimension,
                found: max + 1,
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DiscriminativeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for DiscriminativeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parser = RuleParser {
            src: s.trim().as_bytes(),
            pos: 0,
        };
        let expr = parser.expr()?;
        if parser.pos != parser.src.len() {
            return Err(parser.error("trailing input"));
        }
        Self::new(expr)
    }
}

struct RuleParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl RuleParser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::Syntax {
            what: "rule",
            detail: format!("{what} at byte {}", self.pos),
        }
    }

    fn eat(&mut self, byte: u8) -> Result<()> {
        if self.src.get(self.pos) == Some(&byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected '{}'", byte as char)))
        }
    }

    fn word(&mut self) -> &[u8] {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_uppercase() {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn number(&mut self) -> Result<&str> {
        let start = self.pos;
        while self.pos < self.src.len() && !matches!(self.src[self.pos], b',' | b')') {
            self.pos += 1;
        }
        core::str::from_utf8(&self.src[start..self.pos]).map_err(|_| self.error("invalid utf-8"))
    }

    fn expr(&mut self) -> Result<RuleExpr> {
        let word = self.word();
        match word {
            b"GT" => {
                self.eat(b'(')?;
                let feature = self
                    .number()?
                    .parse::<usize>()
                    .map_err(|_| self.error("bad feature index"))?;
                self.eat(b',')?;
                let threshold = self
                    .number()?
                    .parse::<f64>()
                    .map_err(|_| self.error("bad threshold"))?;
                self.eat(b')')?;
                Ok(RuleExpr::Leaf(SingleFeatureRule::new(feature, threshold)?))
            }
            b"AND" | b"OR" => {
                let is_and = word == b"AND";
                self.eat(b'(')?;
                let mut children = vec![self.expr()?];
                while self.src.get(self.pos) == Some(&b',') {
                    self.pos += 1;
                    children.push(self.expr()?);
                }
                self.eat(b')')?;
                Ok(if is_and {
                    RuleExpr::And(children)
                } else {
                    RuleExpr::Or(children)
                })
            }
            _ => Err(self.error("expected GT, AND or OR")),
        }
    }
}

pub fn eval_rule(rule: &DiscriminativeRule, features: &FeatureVector) -> bool {
    rule.eval(features.as_slice())
}

/// Fractions of positive and negative samples a rule matches ("retains").
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleStats {
    pub positive_retention: f64,
    pub negative_retention: f64,
    pub positives_matched: usize,
    pub positives: usize,
    pub negatives_matched: usize,
    pub negatives: usize,
}

impl RuleStats {
    fn from_counts(pos_hit: usize, pos: usize, neg_hit: usize, neg: usize) -> Self {
        let frac = |hit: usize, total: usize| {
            if total == 0 {
                1.0
            } else {
                hit as f64 / total as f64
            }
        };
        Self {
            positive_retention: frac(pos_hit, pos),
            negative_retention: frac(neg_hit, neg),
            positives_matched: pos_hit,
            positives: pos,
            negatives_matched: neg_hit,
            negatives: neg,
        }
    }

    /// A class was absent; its retention was reported as 1.0.
    pub fn degenerate(&self) -> bool {
        self.positives == 0 || self.negatives == 0
    }

    pub fn filtering_rate(&self) -> f64 {
        1.0 - self.negative_retention
    }
}

pub fn rule_stats(rule: &DiscriminativeRule, records: &[QueryRecord]) -> RuleStats {
    let (mut pos, mut pos_hit, mut neg, mut neg_hit) = (0, 0, 0, 0);
    for r in records {
        let hit = rule.eval(r.features.as_slice());
        if r.label.is_positive() {
            pos += 1;
            pos_hit += hit as usize;
        } else {
            neg += 1;
            neg_hit += hit as usize;
        }
    }
    RuleStats::from_counts(pos_hit, pos, neg_hit, neg)
}

/// Retention bounds for base-rule selection and rule generation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleConfig {
    /// Minimum positive retention of a per-group base rule and of the final rule.
    pub positive_retention_bound: f64,
    /// Maximum (exclusive) negative retention of the high-precision rule.
    pub negative_retention_bound: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            positive_retention_bound: 0.95,
            negative_retention_bound: 0.03,
        }
    }
}

/// Candidate thresholds: 0 plus every distinct value the feature takes on
/// a positive sample, for each feature in the rule groups.
pub fn build_candidate_rules(
    records: &[QueryRecord],
    schema: &FeatureSchema,
) -> Result<Vec<SingleFeatureRule>> {
    let positives: Vec<&[f64]> = records
        .iter()
        .filter(|r| r.label.is_positive())
        .map(|r| r.features.as_slice())
        .collect();
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut out = Vec::new();
    for group in FeatureGroup::RULE_GROUPS {
        let Some(range) = schema.range(group) else {
            continue;
        };
        for feature in range {
            let mut values: Vec<f64> = positives.iter().map(|v| v[feature]).collect();
            values.push(0.0);
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| a == b);
            out.extend(
                values
                    .into_iter()
                    .map(|threshold| SingleFeatureRule { feature, threshold }),
            );
        }
    }
    Ok(out)
}

/// One of the four base rules with its training-set retention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasePick {
    pub rule: SingleFeatureRule,
    pub positive_retention: f64,
    pub negative_retention: f64,
    /// No candidate met the retention bound; the best available was used.
    pub relaxed: bool,
}

/// Per-group high-retention rules (operator count, operator cardinality,
/// OOM indicator) followed by the high-precision rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseRules {
    pub picks: [BasePick; 4],
}

impl BaseRules {
    pub fn rules(&self) -> [SingleFeatureRule; 4] {
        self.picks.map(|p| p.rule)
    }
}

/// Sorted per-class values of one feature, for counting `value > t` quickly.
struct Column {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

fn count_above(sorted: &[f64], threshold: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= threshold)
}

#[derive(Clone, Copy)]
struct Scored {
    rule: SingleFeatureRule,
    pos: f64,
    neg: f64,
}

fn score_candidates(candidates: &[SingleFeatureRule], records: &[QueryRecord]) -> Vec<Scored> {
    let mut columns: BTreeMap<usize, Column> = BTreeMap::new();
    for c in candidates {
        columns.entry(c.feature).or_insert_with(|| {
            let mut col = Column {
                pos: Vec::new(),
                neg: Vec::new(),
            };
            for r in records {
                let v = r.features[c.feature];
                if r.label.is_positive() {
                    col.pos.push(v);
                } else {
                    col.neg.push(v);
                }
            }
            col.pos.sort_by(f64::total_cmp);
            col.neg.sort_by(f64::total_cmp);
            col
        });
    }
    candidates
        .iter()
        .map(|&rule| {
            let col = &columns[&rule.feature];
            let stats = RuleStats::from_counts(
                count_above(&col.pos, rule.threshold),
                col.pos.len(),
                count_above(&col.neg, rule.threshold),
                col.neg.len(),
            );
            Scored {
                rule,
                pos: stats.positive_retention,
                neg: stats.negative_retention,
            }
        })
        .collect()
}

fn index_then_threshold(a: &Scored, b: &Scored) -> Ordering {
    a.rule
        .feature
        .cmp(&b.rule.feature)
        .then(a.rule.threshold.total_cmp(&b.rule.threshold))
}

fn pick_best(
    scored: &[Scored],
    feasible: impl Fn(&Scored) -> bool,
    rank: impl Fn(&Scored, &Scored) -> Ordering,
    fallback: impl Fn(&Scored, &Scored) -> Ordering,
) -> Option<BasePick> {
    let best_by = |pool: &mut dyn Iterator<Item = &Scored>,
                   cmp: &dyn Fn(&Scored, &Scored) -> Ordering| {
        pool.min_by(|a, b| cmp(a, b).then_with(|| index_then_threshold(a, b)))
            .copied()
    };
    let strict = best_by(&mut scored.iter().filter(|s| feasible(s)), &rank);
    let (best, relaxed) = match strict {
        Some(s) => (s, false),
        None => (best_by(&mut scored.iter(), &fallback)?, true),
    };
    Some(BasePick {
        rule: best.rule,
        positive_retention: best.pos,
        negative_retention: best.neg,
        relaxed,
    })
}

/// Picks the four base rules on the training records.
pub fn select_base_rules(
    candidates: &[SingleFeatureRule],
    records: &[QueryRecord],
    schema: &FeatureSchema,
    config: &RuleConfig,
) -> Result<BaseRules> {
    if !records.iter().any(|r| r.label.is_positive()) {
        return Err(Error::NoPositives);
    }
    let scored = score_candidates(candidates, records);
    let by_neg_asc = |a: &Scored, b: &Scored| a.neg.total_cmp(&b.neg);
    let by_pos_desc = |a: &Scored, b: &Scored| b.pos.total_cmp(&a.pos);

    let mut picks = Vec::with_capacity(4);
    for group in FeatureGroup::RULE_GROUPS {
        let in_group: Vec<Scored> = scored
            .iter()
            .filter(|s| schema.group_of(s.rule.feature) == Some(group))
            .copied()
            .collect();
        let pick = pick_best(
            &in_group,
            |s| s.pos >= config.positive_retention_bound,
            by_neg_asc,
            |a, b| by_pos_desc(a, b).then(by_neg_asc(a, b)),
        )
        .ok_or_else(|| {
            Error::InvalidSchema(format!("no rule candidates in group {}", group.name()))
        })?;
        picks.push(pick);
    }
    let precise = pick_best(
        &scored,
        |s| s.neg < config.negative_retention_bound,
        |a, b| by_pos_desc(a, b).then(by_neg_asc(a, b)),
        |a, b| by_neg_asc(a, b).then(by_pos_desc(a, b)),
    )
    .ok_or_else(|| Error::InvalidRule("empty candidate list".into()))?;
    picks.push(precise);
    Ok(BaseRules {
        picks: [picks[0], picks[1], picks[2], picks[3]],
    })
}

/// Boolean formula over base-rule indices.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Formula {
    Var(usize),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn eval(&self, assignment: u32) -> bool {
        match self {
            Formula::Var(i) => assignment >> i & 1 == 1,
            Formula::And(c) => c.iter().all(|f| f.eval(assignment)),
            Formula::Or(c) => c.iter().any(|f| f.eval(assignment)),
        }
    }

    /// Bit `a` is set iff the formula holds under variable assignment `a`.
    pub(crate) fn truth_table(&self, vars: usize) -> u64 {
        (0..1u32 << vars)
            .filter(|&a| self.eval(a))
            .fold(0, |acc, a| acc | 1 << a)
    }

    fn instantiate(&self, base: &[SingleFeatureRule]) -> RuleExpr {
        match self {
            Formula::Var(i) => RuleExpr::Leaf(base[*i]),
            Formula::And(c) => RuleExpr::And(c.iter().map(|f| f.instantiate(base)).collect()),
            Formula::Or(c) => RuleExpr::Or(c.iter().map(|f| f.instantiate(base)).collect()),
        }
    }
}

/// Partitions of the bits of `mask` into at least two blocks, each block
/// listed by its lowest bit so every partition appears once.
fn set_partitions(mask: u32) -> Vec<Vec<u32>> {
    fn rec(rest: u32, acc: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest == 0 {
            out.push(acc.clone());
            return;
        }
        let low = rest & rest.wrapping_neg();
        let others = rest & !low;
        // every subset of `others` joins `low` in the next block
        let mut sub = others;
        loop {
            acc.push(low | sub);
            rec(others & !sub, acc, out);
            acc.pop();
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & others;
        }
    }
    let mut out = Vec::new();
    rec(mask, &mut Vec::new(), &mut out);
    out.retain(|p| p.len() >= 2);
    out
}

/// Every flattened AND/OR formula using each variable of `mask` exactly
/// once, whose top connective differs from `parent`.
fn formulas_over(mask: u32, parent: Option<bool>) -> Vec<Formula> {
    if mask.count_ones() == 1 {
        return vec![Formula::Var(mask.trailing_zeros() as usize)];
    }
    let mut out = Vec::new();
    for is_and in [true, false] {
        if parent == Some(is_and) {
            continue;
        }
        for partition in set_partitions(mask) {
            let mut combos: Vec<Vec<Formula>> = vec![Vec::new()];
            for &block in &partition {
                let options = formulas_over(block, Some(is_and));
                combos = combos
                    .into_iter()
                    .flat_map(|prefix| {
                        options.iter().map(move |opt| {
                            let mut next = prefix.clone();
                            next.push(opt.clone());
                            next
                        })
                    })
                    .collect();
            }
            out.extend(combos.into_iter().map(|children| {
                if is_and {
                    Formula::And(children)
                } else {
                    Formula::Or(children)
                }
            }));
        }
    }
    out
}

/// All distinct flattened expressions over nonempty subsets of `vars` variables.
pub(crate) fn enumerate_formulas(vars: usize) -> Vec<Formula> {
    (1..1u32 << vars)
        .flat_map(|mask| formulas_over(mask, None))
        .collect()
}

/// Result of offline rule generation.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleGeneration {
    pub rule: DiscriminativeRule,
    pub base: BaseRules,
    /// Retention of `rule` on the validation records.
    pub validation: RuleStats,
    /// Whether `rule` met the positive-retention bound on validation.
    pub feasible: bool,
    pub expressions_evaluated: usize,
}

struct Candidate {
    rule: DiscriminativeRule,
    text: String,
    leaves: usize,
    pos: usize,
    neg: usize,
    feasible: bool,
}

/// Lexicographic objective. Among expressions that keep at least the
/// retention bound of positives: filter the most negatives, then keep the
/// most positives. Without any such expression: keep the most positives,
/// then filter the most negatives. Ties: fewer leaves, then smaller text.
fn objective_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.feasible
        .cmp(&a.feasible)
        .then_with(|| {
            if a.feasible {
                a.neg.cmp(&b.neg).then(b.pos.cmp(&a.pos))
            } else {
                b.pos.cmp(&a.pos).then(a.neg.cmp(&b.neg))
            }
        })
        .then(a.leaves.cmp(&b.leaves))
        .then_with(|| a.text.cmp(&b.text))
}

/// The last fifth of a time-sorted training day serves as validation.
pub fn split_validation(records: &[QueryRecord]) -> (&[QueryRecord], &[QueryRecord]) {
    let cut = records.len() - records.len() / 5;
    records.split_at(cut)
}

fn require_both_classes(records: &[QueryRecord]) -> Result<()> {
    if !records.iter().any(|r| r.label.is_positive()) {
        return Err(Error::NoPositives);
    }
    if records.iter().all(|r| r.label.is_positive()) {
        return Err(Error::NoNegatives);
    }
    Ok(())
}

pub fn generate_rule(
    training: &[QueryRecord],
    validation: &[QueryRecord],
    schema: &FeatureSchema,
    config: &RuleConfig,
) -> Result<RuleGeneration> {
    require_both_classes(training)?;
    require_both_classes(validation)?;
    let candidates = build_candidate_rules(training, schema)?;
    let base = select_base_rules(&candidates, training, schema, config)?;
    let rules = base.rules();

    // Histogram validation records by which base rules they match.
    let mut pos_by_assignment = [0usize; 16];
    let mut neg_by_assignment = [0usize; 16];
    for r in validation {
        let v = r.features.as_slice();
        let a = rules.iter().enumerate().fold(0usize, |acc, (i, rule)| {
            acc | (rule.matches(v) as usize) << i
        });
        if r.label.is_positive() {
            pos_by_assignment[a] += 1;
        } else {
            neg_by_assignment[a] += 1;
        }
    }
    let positives: usize = pos_by_assignment.iter().sum();
    let negatives: usize = neg_by_assignment.iter().sum();

    let formulas = enumerate_formulas(rules.len());
    let mut best: Option<Candidate> = None;
    for formula in &formulas {
        let table = formula.truth_table(rules.len());
        let (mut pos, mut neg) = (0, 0);
        for a in 0..16 {
            if table >> a & 1 == 1 {
                pos += pos_by_assignment[a];
                neg += neg_by_assignment[a];
            }
        }
        let rule = DiscriminativeRule::new(formula.instantiate(&rules))?;
        let candidate = Candidate {
            text: rule.to_string(),
            leaves: rule.leaf_count(),
            rule,
            pos,
            neg,
            feasible: pos as f64 / positives as f64 >= config.positive_retention_bound,
        };
        if best
            .as_ref()
            .is_none_or(|b| objective_order(&candidate, b) == Ordering::Less)
        {
            best = Some(candidate);
        }
    }
    let best = best.expect("at least four formulas");
    Ok(RuleGeneration {
        validation: RuleStats::from_counts(best.pos, positives, best.neg, negatives),
        feasible: best.feasible,
        rule: best.rule,
        base,
        expressions_evaluated: formulas.len(),
    })
}
