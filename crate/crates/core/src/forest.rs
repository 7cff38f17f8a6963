//! From-scratch random-forest classifier over vortex descriptors.
//!
//! Each tree is a CART-style binary decision tree grown on a bootstrap
//! resample, choosing splits by Gini impurity reduction over a small random
//! subset of features per node (midpoint thresholds between adjacent
//! distinct observed values). The forest predicts by majority vote and
//! reports the positive-vote fraction as a score.
//!
//! Determinism: one public seed expands to per-tree random streams via the
//! stream counter of the ChaCha generator, so training is reproducible
//! bit-for-bit regardless of thread scheduling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{VortexDescriptor, FEATURE_LAYOUT};
use crate::evaluation::Metrics;
use crate::{Error, Result};

/// On-disk model format revision.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum samples on each side of every split.
    pub min_leaf: usize,
    /// Features drawn uniformly (without replacement) at each node.
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: 3,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be ≥ 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidParameter("max_depth must be ≥ 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidParameter("min_leaf must be ≥ 1".into()));
        }
        if !(1..=8).contains(&self.features_per_split) {
            return Err(Error::InvalidParameter(
                "features_per_split must be in 1..=8".into(),
            ));
        }
        Ok(())
    }
}

/// One decision-tree node. `feature` indexes into the model's feature list;
/// points route left when `x[feature] ≤ threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        pos: u64,
        neg: u64,
    },
}

impl Node {
    /// The leaf reached by `x`; non-finite feature values route right.
    fn leaf_for(&self, x: &[f64]) -> (u64, u64) {
        match self {
            Node::Leaf { pos, neg } => (*pos, *neg),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.leaf_for(x)
                } else {
                    right.leaf_for(x)
                }
            }
        }
    }

    /// Positive vote of this tree: leaf ties go to the positive class.
    fn vote(&self, x: &[f64]) -> bool {
        let (pos, neg) = self.leaf_for(x);
        pos >= neg
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        match self {
            Node::Leaf { .. } => Ok(()),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= n_features {
                    return Err(Error::Serialization(format!(
                        "split feature index {feature} outside 0..{n_features}"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::Serialization(format!(
                        "non-finite split threshold {threshold}"
                    )));
                }
                left.validate(n_features)?;
                right.validate(n_features)
            }
        }
    }
}

/// A trained forest, self-describing enough to be persisted and reloaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    /// Descriptor layout tag the model was trained against.
    pub feature_layout: String,
    /// Descriptor feature indices this model consumes, in tree order.
    pub feature_indices: Vec<usize>,
    pub config: ForestConfig,
    pub trees: Vec<Node>,
    /// Out-of-bag accuracy estimate from training, when computable.
    pub oob_accuracy: Option<f64>,
}

impl Forest {
    fn check_layout(&self) -> Result<()> {
        if self.feature_layout != FEATURE_LAYOUT {
            return Err(Error::LayoutMismatch {
                model: self.feature_layout.clone(),
                runtime: FEATURE_LAYOUT.to_string(),
            });
        }
        Ok(())
    }

    fn project(&self, x: &VortexDescriptor) -> Vec<f64> {
        let features = x.features();
        self.feature_indices.iter().map(|&i| features[i]).collect()
    }
}

/// Trains on the full 8-feature layout.
pub fn train(samples: &[VortexDescriptor], labels: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    train_subset(samples, labels, cfg, &[0, 1, 2, 3, 4, 5, 6, 7])
}

/// Trains a forest that only consumes the given descriptor features (used
/// for feature-ablation studies). The per-node feature draw is capped at the
/// subset size.
pub fn train_subset(
    samples: &[VortexDescriptor],
    labels: &[bool],
    cfg: &ForestConfig,
    feature_indices: &[usize],
) -> Result<Forest> {
    cfg.validate()?;
    if samples.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData(
            "training needs at least 2 samples".into(),
        ));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::InsufficientData(
            "training needs both classes present".into(),
        ));
    }
    if feature_indices.is_empty() || feature_indices.iter().any(|&i| i >= 8) {
        return Err(Error::InvalidParameter(format!(
            "feature indices {feature_indices:?} must be non-empty and within 0..8"
        )));
    }

    let matrix: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let f = s.features();
            feature_indices.iter().map(|&i| f[i]).collect()
        })
        .collect();
    for (row, s) in matrix.iter().zip(samples) {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite feature in descriptor {}",
                s.region_id
            )));
        }
    }

    let n = matrix.len();
    let n_feats = feature_indices.len();
    let per_split = cfg.features_per_split.min(n_feats);

    let grown: Vec<(Node, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64 + 1);
            let bag: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            for &i in &bag {
                in_bag[i] = true;
            }
            let root = grow(&matrix, labels, bag, 0, cfg, per_split, n_feats, &mut rng);
            (root, in_bag)
        })
        .collect();

    // Out-of-bag estimate: classify each sample with the trees that never
    // saw it, then score the majority votes.
    let (mut correct, mut counted) = (0u64, 0u64);
    for i in 0..n {
        let (mut votes_pos, mut votes) = (0u64, 0u64);
        for (tree, in_bag) in &grown {
            if !in_bag[i] {
                votes += 1;
                if tree.vote(&matrix[i]) {
                    votes_pos += 1;
                }
            }
        }
        if votes > 0 {
            counted += 1;
            let predicted = (votes_pos as f64 / votes as f64) >= 0.5;
            if predicted == labels[i] {
                correct += 1;
            }
        }
    }
    let oob_accuracy = (counted > 0).then(|| correct as f64 / counted as f64);

    Ok(Forest {
        format_version: MODEL_FORMAT_VERSION,
        feature_layout: FEATURE_LAYOUT.to_string(),
        feature_indices: feature_indices.to_vec(),
        config: cfg.clone(),
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    matrix: &[Vec<f64>],
    labels: &[bool],
    indices: Vec<usize>,
    depth: usize,
    cfg: &ForestConfig,
    per_split: usize,
    n_feats: usize,
    rng: &mut ChaCha8Rng,
) -> Node {
    let pos = indices.iter().filter(|&&i| labels[i]).count() as u64;
    let neg = indices.len() as u64 - pos;
    let leaf = Node::Leaf { pos, neg };
    if depth >= cfg.max_depth || pos == 0 || neg == 0 || indices.len() < 2 * cfg.min_leaf {
        return leaf;
    }

    let drawn = rand::seq::index::sample(rng, n_feats, per_split);
    let parent_cost = indices.len() as f64 * gini(pos, neg);

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(indices.len());
    for f in drawn.iter() {
        sorted.clear();
        sorted.extend(indices.iter().map(|&i| (matrix[i][f], labels[i])));
        sorted.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).expect("features are finite"));

        let total_pos = pos;
        let (mut left_n, mut left_pos) = (0u64, 0u64);
        for w in 0..sorted.len() - 1 {
            left_n += 1;
            if sorted[w].1 {
                left_pos += 1;
            }
            if sorted[w].0 == sorted[w + 1].0 {
                continue; // not a boundary between distinct values
            }
            let right_n = indices.len() as u64 - left_n;
            if left_n < cfg.min_leaf as u64 || right_n < cfg.min_leaf as u64 {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let cost = left_n as f64 * gini(left_pos, left_n - left_pos)
                + right_n as f64 * gini(right_pos, right_n - right_pos);
            let gain = parent_cost - cost;
            if gain > 0.0 && best.map_or(true, |(g, _, _)| gain > g) {
                let threshold = 0.5 * (sorted[w].0 + sorted[w + 1].0);
                best = Some((gain, f, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return leaf;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| matrix[i][feature] <= threshold);
    let left = grow(matrix, labels, left_idx, depth + 1, cfg, per_split, n_feats, rng);
    let right = grow(matrix, labels, right_idx, depth + 1, cfg, per_split, n_feats, rng);
    Node::Split {
        feature,
        threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn gini(pos: u64, neg: u64) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    let q = neg as f64 / n;
    1.0 - p * p - q * q
}

/// Classifies one descriptor: the label and the fraction of trees voting
/// positive. A score of exactly 0.5 resolves to the positive class.
pub fn predict(f: &Forest, x: &VortexDescriptor) -> Result<(bool, f64)> {
    f.check_layout()?;
    if f.trees.is_empty() {
        return Err(Error::InvalidParameter("forest holds no trees".into()));
    }
    let row = f.project(x);
    let votes = f.trees.iter().filter(|t| t.vote(&row)).count();
    let score = votes as f64 / f.trees.len() as f64;
    Ok((score >= 0.5, score))
}

/// Serializes a forest as self-describing JSON.
pub fn save_model(f: &Forest, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(f).map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads and validates a forest saved by [`save_model`].
pub fn load_model(path: &Path) -> Result<Forest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let forest: Forest =
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
    if forest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "model format {} unsupported; this build reads format {}",
            forest.format_version, MODEL_FORMAT_VERSION
        )));
    }
    if forest.trees.is_empty() {
        return Err(Error::Serialization("model holds no trees".into()));
    }
    for tree in &forest.trees {
        tree.validate(forest.feature_indices.len())?;
    }
    Ok(forest)
}

/// Stratified fold assignment: indices of each fold's *test* set. Both
/// classes are shuffled with the seed and dealt round-robin, so every fold
/// receives its share of each class; requires each class to have at least
/// `k` members.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter("cross-validation needs k ≥ 2".into()));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::InsufficientData(format!(
            "stratified {k}-fold needs ≥ {k} samples per class (have {} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (j, i) in pos.into_iter().chain(neg).enumerate() {
        folds[j % k].push(i);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Per-fold and pooled metrics of a cross-validation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_metrics: Vec<Metrics>,
    /// Confusion counts pooled over all folds.
    pub pooled: Metrics,
    /// Arithmetic means of the per-fold ratios, over folds where defined.
    pub mean_overall: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Stratified k-fold cross-validation on the full feature layout.
pub fn cross_validate(
    samples: &[VortexDescriptor],
    labels: &[bool],
    k: usize,
    cfg: &ForestConfig,
) -> Result<CvReport> {
    cross_validate_subset(samples, labels, k, cfg, &[0, 1, 2, 3, 4, 5, 6, 7])
}

/// Cross-validation restricted to a feature subset. Folds depend only on
/// `labels`, `k`, and `cfg.seed`, so runs with different subsets but one
/// seed are evaluated on identical splits.
pub fn cross_validate_subset(
    samples: &[VortexDescriptor],
    labels: &[bool],
    k: usize,
    cfg: &ForestConfig,
    feature_indices: &[usize],
) -> Result<CvReport> {
    if samples.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let folds = stratified_folds(labels, k, cfg.seed)?;
    let mut fold_metrics = Vec::with_capacity(k);
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for fold in &folds {
        let in_fold = {
            let mut mask = vec![false; samples.len()];
            for &i in fold {
                mask[i] = true;
            }
            mask
        };
        let (mut train_x, mut train_y) = (Vec::new(), Vec::new());
        for i in 0..samples.len() {
            if !in_fold[i] {
                train_x.push(samples[i].clone());
                train_y.push(labels[i]);
            }
        }
        let model = train_subset(&train_x, &train_y, cfg, feature_indices)?;
        let (mut ftp, mut ftn, mut ffp, mut ffn) = (0u64, 0u64, 0u64, 0u64);
        for &i in fold {
            let (pred, _) = predict(&model, &samples[i])?;
            match (pred, labels[i]) {
                (true, true) => ftp += 1,
                (false, false) => ftn += 1,
                (true, false) => ffp += 1,
                (false, true) => ffn += 1,
            }
        }
        fold_metrics.push(Metrics::from_counts(ftp, ftn, ffp, ffn));
        tp += ftp;
        tn += ftn;
        fp += ffp;
        fn_ += ffn;
    }
    Ok(CvReport {
        mean_overall: mean_of(fold_metrics.iter().map(|m| m.overall)),
        mean_sensitivity: mean_of(fold_metrics.iter().map(|m| m.sensitivity)),
        mean_specificity: mean_of(fold_metrics.iter().map(|m| m.specificity)),
        fold_metrics,
        pooled: Metrics::from_counts(tp, tn, fp, fn_),
    })
}
