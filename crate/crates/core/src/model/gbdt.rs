//! Second-order gradient boosting on logistic loss with exact greedy splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{ln, sigmoid, softplus};
use crate::types::QueryRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassWeight {
    /// `N_neg / N_pos`, clamped to `[1, 1000]`.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub positive_class_weight: ClassWeight,
    /// Recorded for provenance; training itself draws no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            learning_rate: 0.05,
            max_depth: 5,
            min_child_weight: 1.0,
            lambda: 1.0,
            positive_class_weight: ClassWeight::Auto,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Production setting: 500 rounds, otherwise identical.
    pub fn production() -> Self {
        Self {
            rounds: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.rounds == 0 {
            return bad("rounds must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.min_child_weight.is_finite() && self.min_child_weight >= 0.0) {
            return bad("min_child_weight must be nonnegative");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if let ClassWeight::Fixed(w) = self.positive_class_weight {
            if !(w.is_finite() && w > 0.0) {
                return bad("positive_class_weight must be positive");
            }
        }
        Ok(())
    }

    pub fn resolve_class_weight(&self, positives: usize, negatives: usize) -> f64 {
        match self.positive_class_weight {
            ClassWeight::Fixed(w) => w,
            ClassWeight::Auto => (negatives as f64 / positives as f64).clamp(1.0, 1000.0),
        }
    }
}

/// Preorder node. The left child of a split at `i` is `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Samples go left when `x[feature] < threshold`.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(w) => return w,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature] < threshold { i + 1 } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf(_) => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, right);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    dimension: usize,
    base_score: f64,
    trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn constant(dimension: usize, base_score: f64) -> Self {
        Self {
            dimension,
            base_score,
            trees: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    #[inline]
    fn margin_unchecked(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |m, t| m + t.predict(x))
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.margin_unchecked(x))
    }

    /// Confidence in `[0, 1]` that the sample is positive.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.margin(x)?))
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dimension {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dimension,
                found: x.len(),
            })
        }
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf(_) => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Per-sample logistic loss `ln(1 + e^m) − y·m`.
pub fn logistic_loss(margin: f64, positive: bool) -> f64 {
    softplus(margin) - if positive { margin } else { 0.0 }
}

/// First and second derivative of [`logistic_loss`] in the margin.
pub fn logistic_grad_hess(margin: f64, positive: bool) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - if positive { 1.0 } else { 0.0 }, p * (1.0 - p))
}

/// A trained ensemble plus the weighted mean training loss before the
/// first round and after each round.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub ensemble: TreeEnsemble,
    pub losses: Vec<f64>,
    pub positive_weight: f64,
}

pub fn train(rows: &[&[f64]], labels: &[bool], config: &TrainConfig) -> Result<TreeEnsemble> {
    train_logged(rows, labels, config).map(|o| o.ensemble)
}

pub fn train_records(records: &[QueryRecord], config: &TrainConfig) -> Result<TreeEnsemble> {
    let rows: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label.is_positive()).collect();
    train(&rows, &labels, config)
}

pub fn train_logged(rows: &[&[f64]], labels: &[bool], config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::Dimension {
            expected: rows.len(),
            found: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    let dimension = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dimension) {
        return Err(Error::Dimension {
            expected: dimension,
            found: bad.len(),
        });
    }

    let w_pos = config.resolve_class_weight(positives, negatives);
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { w_pos } else { 1.0 })
        .collect();
    let base_score = ln(w_pos * positives as f64 / negatives as f64);
    let mut margins = vec![base_score; rows.len()];
    let total_weight: f64 = weights.iter().sum();
    let loss = |margins: &[f64]| -> f64 {
        margins
            .iter()
            .zip(labels)
            .zip(&weights)
            .map(|((&m, &y), &w)| w * logistic_loss(m, y))
            .sum::<f64>()
            / total_weight
    };

    let presorted: Vec<Vec<u32>> = (0..dimension)
        .map(|f| {
            let mut idx: Vec<u32> = (0..rows.len() as u32).collect();
            idx.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]));
            idx
        })
        .collect();

    let mut losses = Vec::with_capacity(config.rounds + 1);
    losses.push(loss(&margins));
    let mut trees = Vec::with_capacity(config.rounds);
    let mut grad = vec![0.0; rows.len()];
    let mut hess = vec![0.0; rows.len()];
    for _ in 0..config.rounds {
        for i in 0..rows.len() {
            let (g, h) = logistic_grad_hess(margins[i], labels[i]);
            grad[i] = weights[i] * g;
            hess[i] = weights[i] * h;
        }
        let builder = TreeBuilder {
            rows,
            grad: &grad,
            hess: &hess,
            config,
        };
        let mut nodes = Vec::new();
        builder.grow(presorted.clone(), 0, &mut nodes);
        let tree = Tree { nodes };
        for (m, row) in margins.iter_mut().zip(rows) {
            *m += tree.predict(row);
        }
        trees.push(tree);
        losses.push(loss(&margins));
    }

    Ok(TrainOutput {
        ensemble: TreeEnsemble {
            dimension,
            base_score,
            trees,
        },
        losses,
        positive_weight: w_pos,
    })
}

/// Best split found at a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Gain of splitting a node with totals `(g, h)` into `(gl, hl)` and the rest.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    let gr = g - gl;
    let hr = h - hl;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

/// Midpoint of two distinct neighbouring values, never equal to the lower one.
pub fn split_threshold(a: f64, b: f64) -> f64 {
    let gap = b - a;
    let mid = if gap.is_finite() {
        a + gap / 2.0
    } else {
        a / 2.0 + b / 2.0
    };
    if mid > a && mid <= b && mid.is_finite() {
        mid
    } else {
        b
    }
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a TrainConfig,
}

impl TreeBuilder<'_> {
    fn totals(&self, samples: &[u32]) -> (f64, f64) {
        samples.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i as usize], h + self.hess[i as usize])
        })
    }

    /// Scans features in ascending order and thresholds in ascending order;
    /// only a strictly better gain replaces the incumbent.
    fn best_split(&self, sorted: &[Vec<u32>], g: f64, h: f64) -> Option<SplitChoice> {
        let lambda = self.config.lambda;
        let mcw = self.config.min_child_weight;
        let mut best: Option<SplitChoice> = None;
        for (feature, list) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..list.len().saturating_sub(1) {
                let i = list[k] as usize;
                gl += self.grad[i];
                hl += self.hess[i];
                let a = self.rows[i][feature];
                let b = self.rows[list[k + 1] as usize][feature];
                if a == b || hl < mcw || h - hl < mcw {
                    continue;
                }
                let gain = split_gain(gl, hl, g, h, lambda);
                if gain > best.map_or(0.0, |s| s.gain) {
                    best = Some(SplitChoice {
                        feature,
                        threshold: split_threshold(a, b),
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&self, sorted: Vec<Vec<u32>>, depth: usize, nodes: &mut Vec<Node>) {
        let (g, h) = self.totals(&sorted[0]);
        let split = if depth < self.config.max_depth {
            self.best_split(&sorted, g, h)
        } else {
            None
        };
        let Some(split) = split else {
            nodes.push(Node::Leaf(
                -g / (h + self.config.lambda) * self.config.learning_rate,
            ));
            return;
        };
        let goes_left = |i: u32| self.rows[i as usize][split.feature] < split.threshold;
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| goes_left(i));
            left.push(l);
            right.push(r);
        }
        let at = nodes.len();
        nodes.push(Node::Leaf(0.0));
        self.grow(left, depth + 1, nodes);
        let right_at = nodes.len();
        self.grow(right, depth + 1, nodes);
        nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            right: right_at,
        };
    }
}

/// Best root split for the given gradients, exposed for oracle tests.
pub fn root_split(
    rows: &[&[f64]],
    grad: &[f64],
    hess: &[f64],
    config: &TrainConfig,
) -> Option<SplitChoice> {
    let dimension = rows.first().map_or(0, |r| r.len());
    let sorted: Vec<Vec<u32>> = (0..dimension)
        .map(|f| {
            let mut idx: Vec<u32> = (0..rows.len() as u32).collect();
            idx.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]));
            idx
        })
        .collect();
    let builder = TreeBuilder {
        rows,
        grad,
        hess,
        config,
    };
    let (g, h) = builder.totals(sorted.first()?);
    builder.best_split(&sorted, g, h)
}

pub const MODEL_FORMAT: &str = "safeload-gbdt/1";

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tree")?;
        for node in &self.nodes {
            match node {
                Node::Split {
                    feature, threshold, ..
                } => write!(f, " ({feature},{threshold})")?,
                Node::Leaf(w) => write!(f, " leaf({w})")?,
            }
        }
        Ok(())
    }
}

impl fmt::Display for TreeEnsemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "format {MODEL_FORMAT}")?;
        writeln!(f, "dimension {}", self.dimension)?;
        writeln!(f, "base_score {}", self.base_score)?;
        writeln!(f, "trees {}", self.trees.len())?;
        for tree in &self.trees {
            writeln!(f, "{tree}")?;
        }
        Ok(())
    }
}

fn model_error(detail: String) -> Error {
    Error::Syntax {
        what: "model",
        detail,
    }
}

fn parse_float(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| model_error(format!("bad number {s:?}")))
}

fn parse_tree(line: &str, dimension: usize) -> Result<Tree> {
    let mut tokens = line.split(' ');
    if tokens.next() != Some("tree") {
        return Err(model_error(format!("expected tree line, got {line:?}")));
    }
    // (index of split awaiting its right child, whether its left subtree is done)
    let mut nodes = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    let mut complete = false;
    for token in tokens {
        if complete {
            return Err(model_error("tokens after a complete tree".into()));
        }
        if let Some(body) = token
            .strip_prefix("leaf(")
            .and_then(|t| t.strip_suffix(')'))
        {
            nodes.push(Node::Leaf(parse_float(body)?));
            // a finished subtree closes splits whose right child is this one
            loop {
                match open.pop() {
                    None => {
                        complete = true;
                        break;
                    }
                    Some(at) => {
                        let next = nodes.len();
                        match &mut nodes[at] {
                            Node::Split { right, .. } if *right == 0 => {
                                *right = next;
                                open.push(at);
                                break;
                            }
                            _ => continue,
                        }
                    }
                }
            }
        } else if let Some(body) = token.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
            let (f, t) = body
                .split_once(',')
                .ok_or_else(|| model_error(format!("bad split {token:?}")))?;
            let feature: usize = f
                .parse()
                .map_err(|_| model_error(format!("bad feature {f:?}")))?;
            if feature >= dimension {
                return Err(Error::InvalidModel(format!(
                    "split on feature {feature} beyond dimension {dimension}"
                )));
            }
            open.push(nodes.len());
            nodes.push(Node::Split {
                feature,
                threshold: parse_float(t)?,
                right: 0,
            });
        } else {
            return Err(model_error(format!("bad token {token:?}")));
        }
    }
    if !complete {
        return Err(model_error("truncated tree".into()));
    }
    Ok(Tree { nodes })
}

fn header<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    lines
        .next()
        .and_then(|l| l.strip_prefix(key))
        .and_then(|l| l.strip_prefix(' '))
        .ok_or_else(|| model_error(format!("missing {key} line")))
}

impl FromStr for TreeEnsemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let format = header(&mut lines, "format")?;
        if format != MODEL_FORMAT {
            return Err(model_error(format!("unsupported format {format:?}")));
        }
        let dimension: usize = header(&mut lines, "dimension")?
            .parse()
            .map_err(|_| model_error("bad dimension".into()))?;
        if dimension == 0 {
            return Err(model_error("dimension must be positive".into()));
        }
        let base_score = parse_float(header(&mut lines, "base_score")?)?;
        let count: usize = header(&mut lines, "trees")?
            .parse()
            .map_err(|_| model_error("bad tree count".into()))?;
        let trees = lines
            .by_ref()
            .take(count)
            .map(|l| parse_tree(l, dimension))
            .collect::<Result<Vec<_>>>()?;
        if trees.len() != count {
            return Err(model_error(format!(
                "expected {count} trees, found {}",
                trees.len()
            )));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(model_error("trailing content".into()));
        }
        Ok(Self {
            dimension,
            base_score,
            trees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn loose() -> TrainConfig {
        TrainConfig {
            min_child_weight: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_ensemble_scores_half() {
        let e = TreeEnsemble::constant(3, 0.0);
        assert_eq!(e.score(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(
            e.score(&[1.0]),
            Err(Error::Dimension {
                expected: 3,
                found: 1
            })
        ));
    }

    #[test]
    fn two_point_stump() {
        let rows: [&[f64]; 2] = [&[0.0], &[1.0]];
        let cfg = TrainConfig {
            rounds: 1,
            max_depth: 1,
            ..loose()
        };
        let e = train(&rows, &[false, true], &cfg).unwrap();
        // equal class sizes: base score 0, g = (0.5, -0.5), h = 0.25 each
        assert_eq!(e.base_score(), 0.0);
        let tree = &e.trees()[0];
        assert_eq!(
            tree.nodes()[0],
            Node::Split {
                feature: 0,
                threshold: 0.5,
                right: 2
            }
        );
        let w = 0.5 / (0.25 + 1.0) * 0.05;
        assert_eq!(tree.nodes()[1], Node::Leaf(-w));
        assert_eq!(tree.nodes()[2], Node::Leaf(w));
        assert!(e.score(&[1.0]).unwrap() > e.score(&[0.0]).unwrap());
    }

    #[test]
    fn separable_points_fit() {
        let rows: [&[f64]; 4] = [&[0.0, 5.0], &[1.0, 3.0], &[2.0, 9.0], &[3.0, 1.0]];
        let labels = [false, false, true, true];
        let cfg = TrainConfig {
            rounds: 10,
            ..loose()
        };
        let e = train(&rows, &labels, &cfg).unwrap();
        for (r, &y) in rows.iter().zip(&labels) {
            assert_eq!(e.score(r).unwrap() >= 0.5, y);
        }
    }

    #[test]
    fn single_class_rejected() {
        let rows: [&[f64]; 2] = [&[0.0], &[1.0]];
        assert_eq!(
            train(&rows, &[true, true], &loose()),
            Err(Error::SingleClass)
        );
    }

    #[test]
    fn threshold_between_neighbours() {
        assert_eq!(split_threshold(1.0, 2.0), 1.5);
        let a: f64 = 1.0;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_eq!(split_threshold(a, b), b);
        assert_eq!(split_threshold(-f64::MAX, f64::MAX), 0.0);
    }

    #[test]
    fn auto_weight_clamped() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.resolve_class_weight(10, 5), 1.0);
        assert_eq!(cfg.resolve_class_weight(1, 5000), 1000.0);
        assert_eq!(cfg.resolve_class_weight(4, 100), 25.0);
    }

    #[test]
    fn text_round_trip() {
        let rows: [&[f64]; 6] = [
            &[0.1, 7.0],
            &[0.3, 1.0],
            &[0.2, 2.0],
            &[0.9, 8.5],
            &[0.7, 3.3],
            &[0.8, 0.1],
        ];
        let labels = [false, false, true, true, false, true];
        let e = train(
            &rows,
            &labels,
            &TrainConfig {
                rounds: 5,
                ..loose()
            },
        )
        .unwrap();
        let text = e.to_string();
        assert!(text.starts_with("format safeload-gbdt/1\ndimension 2\n"));
        let back: TreeEnsemble = text.parse().unwrap();
        assert_eq!(back, e);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn malformed_models_rejected() {
        let good = "format safeload-gbdt/1\ndimension 2\nbase_score 0\ntrees 1\ntree (1,0.5) leaf(1) leaf(-1)\n";
        assert!(good.parse::<TreeEnsemble>().is_ok());
        for bad in [
            "",
            "format other/1\ndimension 2\nbase_score 0\ntrees 0\n",
            "format safeload-gbdt/1\ndimension 2\nbase_score 0\ntrees 1\ntree (1,0.5) leaf(1)\n",
            "format safeload-gbdt/1\ndimension 2\nbase_score 0\ntrees 1\ntree (2,0.5) leaf(1) leaf(1)\n",
            "format safeload-gbdt/1\ndimension 2\nbase_score 0\ntrees 2\ntree leaf(1)\n",
            "format safeload-gbdt/1\ndimension 2\nbase_score NaN\ntrees 0\n",
            "format safeload-gbdt/1\ndimension 2\nbase_score 0\ntrees 1\ntree leaf(1) leaf(2)\n",
        ] {
            assert!(bad.parse::<TreeEnsemble>().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn nested_tree_parses_in_preorder() {
        let text = "format safeload-gbdt/1\ndimension 3\nbase_score 0.5\ntrees 1\n\
                    tree (0,1) (1,2) leaf(1) leaf(2) (2,3) leaf(3) leaf(4)\n";
        let e: TreeEnsemble = text.parse().unwrap();
        assert_eq!(e.trees()[0].depth(), 2);
        let m = |x: &[f64]| e.margin(x).unwrap() - 0.5;
        assert_eq!(m(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(m(&[0.0, 5.0, 0.0]), 2.0);
        assert_eq!(m(&[5.0, 0.0, 0.0]), 3.0);
        assert_eq!(m(&[5.0, 0.0, 5.0]), 4.0);
        assert_eq!(e.to_string(), text.replace("                    ", ""));
    }
}
