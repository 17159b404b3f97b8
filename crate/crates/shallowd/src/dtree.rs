//! C4.5-style decision tree learner and predictor: gain-ratio splits over
//! categorical features, binary threshold splits for integer features, and
//! pessimistic-error pruning. Used by the connective detector, the sense
//! labeler, and the argument trimmer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel categorical value for features absent from an instance.
pub const ABSENT: &str = "<ABSENT>";

#[derive(Debug, Error)]
pub enum DtError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("feature {feature:?} mixes categorical and integer values")]
    MixedFeatureKinds { feature: String },
    #[error("model serialization: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("unsupported model version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureValue {
    Cat(String),
    Int(i64),
}

impl FeatureValue {
    pub fn cat<S: Into<String>>(value: S) -> Self {
        FeatureValue::Cat(value.into())
    }
}

/// One training example: named feature values plus a class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub features: BTreeMap<String, FeatureValue>,
    pub label: String,
}

impl Instance {
    pub fn new(label: &str) -> Self {
        Instance {
            features: BTreeMap::new(),
            label: label.to_owned(),
        }
    }

    pub fn with(mut self, name: &str, value: FeatureValue) -> Self {
        self.features.insert(name.to_owned(), value);
        self
    }
}

pub type FeatureMap = BTreeMap<String, FeatureValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TreeNode {
    Leaf {
        counts: BTreeMap<String, u64>,
    },
    CatSplit {
        feature: String,
        branches: BTreeMap<String, TreeNode>,
        /// Branch value receiving unseen feature values; the branch that
        /// held the most training instances.
        default: String,
    },
    IntSplit {
        feature: String,
        threshold: f64,
        le: Box<TreeNode>,
        gt: Box<TreeNode>,
        /// Whether a non-integer value routes to the `le` side.
        default_le: bool,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub min_leaf: usize,
    /// Pruning confidence in (0, 1]; values >= 1.0 disable pruning.
    pub confidence: f64,
    pub max_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            min_leaf: 2,
            confidence: 0.25,
            max_depth: usize::MAX,
        }
    }
}

/// A trained tree plus the class alphabet seen at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub version: u32,
    pub classes: Vec<String>,
    pub root: TreeNode,
}

const MODEL_VERSION: u32 = 1;

impl DecisionTree {
    /// Builds a constant classifier; handy for stub models.
    pub fn constant(label: &str) -> Self {
        let mut counts = BTreeMap::new();
        counts.insert(label.to_owned(), 1);
        DecisionTree {
            version: MODEL_VERSION,
            classes: vec![label.to_owned()],
            root: TreeNode::Leaf { counts },
        }
    }

    pub fn predict(&self, features: &FeatureMap) -> (String, BTreeMap<String, f64>) {
        let counts = leaf_counts(&self.root, features);
        let label = counts
            .iter()
            .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then_with(|| lb.cmp(la)))
            .map(|(l, _)| l.clone())
            .expect("leaf counts non-empty");
        let total: u64 = counts.values().sum();
        let k = self.classes.len() as f64;
        let distribution = self
            .classes
            .iter()
            .map(|class| {
                let count = counts.get(class).copied().unwrap_or(0) as f64;
                (class.clone(), (count + 1.0) / (total as f64 + k))
            })
            .collect();
        (label, distribution)
    }

    pub fn to_json(&self) -> Result<String, DtError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DtError> {
        let tree: DecisionTree = serde_json::from_str(text)?;
        if tree.version != MODEL_VERSION {
            return Err(DtError::Version(tree.version));
        }
        Ok(tree)
    }
}

fn leaf_counts<'a>(node: &'a TreeNode, features: &FeatureMap) -> &'a BTreeMap<String, u64> {
    match node {
        TreeNode::Leaf { counts } => counts,
        TreeNode::CatSplit {
            feature,
            branches,
            default,
        } => {
            let value = match features.get(feature) {
                Some(FeatureValue::Cat(v)) => v.as_str(),
                Some(FeatureValue::Int(_)) | None => ABSENT,
            };
            let branch = branches
                .get(value)
                .or_else(|| branches.get(default))
                .expect("default branch present");
            leaf_counts(branch, features)
        }
        TreeNode::IntSplit {
            feature,
            threshold,
            le,
            gt,
            default_le,
        } => match features.get(feature) {
            Some(FeatureValue::Int(v)) => {
                if (*v as f64) <= *threshold {
                    leaf_counts(le, features)
                } else {
                    leaf_counts(gt, features)
                }
            }
            _ => {
                if *default_le {
                    leaf_counts(le, features)
                } else {
                    leaf_counts(gt, features)
                }
            }
        },
    }
}

fn entropy(counts: &BTreeMap<&str, usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn label_entropy(data: &[&Instance]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for instance in data {
        *counts.entry(instance.label.as_str()).or_insert(0) += 1;
    }
    entropy(&counts, data.len())
}

fn partition_entropy(groups: &[Vec<&Instance>]) -> (f64, f64) {
    let total: usize = groups.iter().map(Vec::len).sum();
    let n = total as f64;
    let mut conditional = 0.0;
    let mut split_info = 0.0;
    for group in groups {
        if group.is_empty() {
            continue;
        }
        let w = group.len() as f64 / n;
        conditional += w * label_entropy(group);
        split_info -= w * w.log2();
    }
    (conditional, split_info)
}

fn feature_value<'a>(instance: &'a Instance, feature: &str) -> &'a str {
    match instance.features.get(feature) {
        Some(FeatureValue::Cat(v)) => v.as_str(),
        _ => ABSENT,
    }
}

enum SplitPlan<'a> {
    Cat {
        groups: BTreeMap<&'a str, Vec<&'a Instance>>,
    },
    Int {
        threshold: f64,
        le: Vec<&'a Instance>,
        gt: Vec<&'a Instance>,
    },
}

/// Evaluates the best split on one feature, returning the gain ratio and the
/// induced partition; `None` when the feature cannot partition the data.
fn evaluate_feature<'a>(
    data: &[&'a Instance],
    feature: &str,
    is_int: bool,
) -> Option<(f64, SplitPlan<'a>)> {
    let base = label_entropy(data);
    if is_int {
        let mut values: Vec<i64> = data
            .iter()
            .filter_map(|i| match i.features.get(feature) {
                Some(FeatureValue::Int(v)) => Some(*v),
                _ => None,
            })
            .collect();
        values.sort_unstable();
        values.dedup();
        if values.len() < 2 {
            return None;
        }
        let mut best: Option<(f64, SplitPlan)> = None;
        for pair in values.windows(2) {
            let threshold = (pair[0] as f64 + pair[1] as f64) / 2.0;
            let (le, gt): (Vec<&Instance>, Vec<&Instance>) =
                data.iter().partition(|i| match i.features.get(feature) {
                    Some(FeatureValue::Int(v)) => (*v as f64) <= threshold,
                    _ => true,
                });
            if le.is_empty() || gt.is_empty() {
                continue;
            }
            let (conditional, split_info) = partition_entropy(&[le.clone(), gt.clone()]);
            let gain = base - conditional;
            let ratio = if split_info > 0.0 {
                gain / split_info
            } else {
                0.0
            };
            if best.as_ref().map(|(r, _)| ratio > *r).unwrap_or(true) {
                best = Some((ratio, SplitPlan::Int { threshold, le, gt }));
            }
        }
        best
    } else {
        let mut groups: BTreeMap<&str, Vec<&Instance>> = BTreeMap::new();
        for instance in data {
            groups
                .entry(feature_value(instance, feature))
                .or_default()
                .push(instance);
        }
        if groups.len() < 2 {
            return None;
        }
        let group_vec: Vec<Vec<&Instance>> = groups.values().cloned().collect();
        let (conditional, split_info) = partition_entropy(&group_vec);
        let gain = base - conditional;
        let ratio = if split_info > 0.0 {
            gain / split_info
        } else {
            0.0
        };
        Some((ratio, SplitPlan::Cat { groups }))
    }
}

/// Gain ratio of splitting `data` on `feature`: information gain divided by
/// split entropy, 0 when the split entropy is 0 or the feature cannot split.
/// Integer features report their best binary-threshold ratio.
pub fn gain_ratio(data: &[Instance], feature: &str) -> f64 {
    let refs: Vec<&Instance> = data.iter().collect();
    let is_int = data
        .iter()
        .any(|i| matches!(i.features.get(feature), Some(FeatureValue::Int(_))));
    evaluate_feature(&refs, feature, is_int)
        .map(|(ratio, _)| ratio)
        .unwrap_or(0.0)
}

fn count_labels(data: &[&Instance]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for instance in data {
        *counts.entry(instance.label.clone()).or_insert(0) += 1;
    }
    counts
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// |relative error| < 1.15e-9).
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Extra errors added to the observed count `e` out of `n` at the upper
/// confidence limit, following C4.5's pessimistic estimate.
fn add_errs(n: f64, e: f64, confidence: f64) -> f64 {
    if e < 1.0 {
        let base = n * (1.0 - confidence.powf(1.0 / n));
        if e == 0.0 {
            return base;
        }
        return base + e * (add_errs(n, 1.0, confidence) - base);
    }
    if e + 0.5 >= n {
        return (n - e).max(0.0);
    }
    let z = normal_quantile(1.0 - confidence);
    let f = (e + 0.5) / n;
    let r = (f + z * z / (2.0 * n) + z * (f / n - f * f / n + z * z / (4.0 * n * n)).sqrt())
        / (1.0 + z * z / n);
    r * n - e
}

fn pessimistic_errors(counts: &BTreeMap<String, u64>, confidence: f64) -> f64 {
    let n: u64 = counts.values().sum();
    let max = counts.values().copied().max().unwrap_or(0);
    let e = (n - max) as f64;
    e + add_errs(n as f64, e, confidence)
}

struct Builder {
    config: TrainConfig,
    int_features: Vec<String>,
    cat_features: Vec<String>,
}

impl Builder {
    /// Builds a subtree and returns it with its pessimistic error estimate.
    fn build(&self, data: &[&Instance], depth: usize) -> (TreeNode, f64) {
        let counts = count_labels(data);
        let prune = self.config.confidence < 1.0;
        let leaf_est = if prune {
            pessimistic_errors(&counts, self.config.confidence)
        } else {
            0.0
        };
        let as_leaf = (
            TreeNode::Leaf {
                counts: counts.clone(),
            },
            leaf_est,
        );

        if counts.len() <= 1 || data.len() < self.config.min_leaf || depth >= self.config.max_depth
        {
            return as_leaf;
        }

        // Pick the valid split with the best gain ratio; feature-name order
        // breaks ties. Zero-gain splits are still taken when the node is
        // impure, so conflict-free data always separates.
        let mut best: Option<(f64, &str, SplitPlan)> = None;
        for feature in &self.cat_features {
            if let Some((ratio, plan)) = evaluate_feature(data, feature, false) {
                if best.as_ref().map(|(r, _, _)| ratio > *r).unwrap_or(true) {
                    best = Some((ratio, feature, plan));
                }
            }
        }
        for feature in &self.int_features {
            if let Some((ratio, plan)) = evaluate_feature(data, feature, true) {
                if best.as_ref().map(|(r, _, _)| ratio > *r).unwrap_or(true) {
                    best = Some((ratio, feature, plan));
                }
            }
        }

        let Some((_, feature, plan)) = best else {
            return as_leaf;
        };

        let (node, subtree_est) = match plan {
            SplitPlan::Cat { groups } => {
                let mut branches = BTreeMap::new();
                let mut est = 0.0;
                let mut default = String::new();
                let mut default_mass = 0usize;
                for (value, group) in &groups {
                    let (child, child_est) = self.build(group, depth + 1);
                    est += child_est;
                    if group.len() > default_mass {
                        default_mass = group.len();
                        default = (*value).to_owned();
                    }
                    branches.insert((*value).to_owned(), child);
                }
                (
                    TreeNode::CatSplit {
                        feature: feature.to_owned(),
                        branches,
                        default,
                    },
                    est,
                )
            }
            SplitPlan::Int { threshold, le, gt } => {
                let (le_node, le_est) = self.build(&le, depth + 1);
                let (gt_node, gt_est) = self.build(&gt, depth + 1);
                (
                    TreeNode::IntSplit {
                        feature: feature.to_owned(),
                        threshold,
                        le: Box::new(le_node),
                        gt: Box::new(gt_node),
                        default_le: le.len() >= gt.len(),
                    },
                    le_est + gt_est,
                )
            }
        };

        if prune && leaf_est <= subtree_est {
            return as_leaf;
        }
        (node, subtree_est)
    }
}

/// Trains a C4.5-style tree: recursive gain-ratio splitting with multiway
/// categorical branches and binary integer thresholds, then pessimistic
/// pruning at the configured confidence (disabled when `confidence >= 1`).
pub fn train_c45(data: &[Instance], config: &TrainConfig) -> Result<DecisionTree, DtError> {
    if data.is_empty() {
        return Err(DtError::EmptyDataset);
    }

    let mut int_features = std::collections::BTreeSet::new();
    let mut cat_features = std::collections::BTreeSet::new();
    for instance in data {
        for (name, value) in &instance.features {
            match value {
                FeatureValue::Int(_) => int_features.insert(name.clone()),
                FeatureValue::Cat(_) => cat_features.insert(name.clone()),
            };
        }
    }
    if let Some(mixed) = int_features.intersection(&cat_features).next() {
        return Err(DtError::MixedFeatureKinds {
            feature: mixed.clone(),
        });
    }

    let mut classes: Vec<String> = data.iter().map(|i| i.label.clone()).collect();
    classes.sort();
    classes.dedup();

    let builder = Builder {
        config: *config,
        int_features: int_features.into_iter().collect(),
        cat_features: cat_features.into_iter().collect(),
    };
    let refs: Vec<&Instance> = data.iter().collect();
    let (root, _) = builder.build(&refs, 0);
    Ok(DecisionTree {
        version: MODEL_VERSION,
        classes,
        root,
    })
}
