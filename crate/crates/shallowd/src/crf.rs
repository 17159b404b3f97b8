//! Linear-chain conditional random field over feature-bag observation
//! sequences. Inference runs in log space; training minimizes L2-regularized
//! negative conditional log-likelihood with seeded mini-batch gradient
//! descent.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feature key injected into every observation so no bag is empty.
pub const BIAS_FEATURE: &str = "bias";

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("gold sequence length {gold} does not match observation length {seq}")]
    LengthMismatch { gold: usize, seq: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("model serialization: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("unsupported model version {0}")]
    Version(u32),
}

/// One observation sequence: a sorted feature-key bag per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrfSequence {
    observations: Vec<Vec<String>>,
}

impl CrfSequence {
    /// Builds a sequence, deduplicating each bag and injecting the bias
    /// feature.
    pub fn new(bags: Vec<Vec<String>>) -> Self {
        let observations = bags
            .into_iter()
            .map(|mut bag| {
                bag.push(BIAS_FEATURE.to_owned());
                bag.sort();
                bag.dedup();
                bag
            })
            .collect();
        CrfSequence { observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn bags(&self) -> &[Vec<String>] {
        &self.observations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    version: u32,
    labels: Vec<String>,
    features: Vec<String>,
    #[serde(skip)]
    feature_index: BTreeMap<String, usize>,
    /// Indexed `[feature * n_labels + label]`.
    emission: Vec<f64>,
    /// Indexed `[from * n_labels + to]`.
    transition: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

const MODEL_VERSION: u32 = 1;

impl CrfModel {
    /// Zero-weight model over the given labels and feature vocabulary.
    pub fn new(labels: Vec<String>, features: Vec<String>) -> Self {
        let n = labels.len();
        let feature_index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        CrfModel {
            version: MODEL_VERSION,
            labels,
            features: features.clone(),
            feature_index,
            emission: vec![0.0; features.len() * n],
            transition: vec![0.0; n * n],
            start: vec![0.0; n],
            end: vec![0.0; n],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn feature_index(&self, feature: &str) -> Option<usize> {
        self.feature_index.get(feature).copied()
    }

    pub fn set_emission(&mut self, feature: &str, label: &str, weight: f64) {
        let f = self.feature_index(feature).expect("known feature");
        let y = self.label_index(label).expect("known label");
        self.emission[f * self.labels.len() + y] = weight;
    }

    pub fn set_transition(&mut self, from: &str, to: &str, weight: f64) {
        let a = self.label_index(from).expect("known label");
        let b = self.label_index(to).expect("known label");
        self.transition[a * self.labels.len() + b] = weight;
    }

    pub fn set_start(&mut self, label: &str, weight: f64) {
        let y = self.label_index(label).expect("known label");
        self.start[y] = weight;
    }

    pub fn set_end(&mut self, label: &str, weight: f64) {
        let y = self.label_index(label).expect("known label");
        self.end[y] = weight;
    }

    pub fn emission(&self, feature: &str, label: &str) -> f64 {
        let f = self.feature_index(feature).expect("known feature");
        let y = self.label_index(label).expect("known label");
        self.emission[f * self.labels.len() + y]
    }

    pub fn transition(&self, from: &str, to: &str) -> f64 {
        let a = self.label_index(from).expect("known label");
        let b = self.label_index(to).expect("known label");
        self.transition[a * self.labels.len() + b]
    }

    pub fn start_weight(&self, label: &str) -> f64 {
        self.start[self.label_index(label).expect("known label")]
    }

    pub fn end_weight(&self, label: &str) -> f64 {
        self.end[self.label_index(label).expect("known label")]
    }

    /// Maps bags to known feature indices; unseen features are dropped.
    fn index_sequence(&self, seq: &CrfSequence) -> Vec<Vec<usize>> {
        seq.bags()
            .iter()
            .map(|bag| bag.iter().filter_map(|f| self.feature_index(f)).collect())
            .collect()
    }

    /// Per-position unnormalized log scores, with start and end weights
    /// folded into the first and last positions.
    fn node_scores(&self, indexed: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let n = self.labels.len();
        let t_len = indexed.len();
        let mut scores = vec![vec![0.0; n]; t_len];
        for (t, bag) in indexed.iter().enumerate() {
            for y in 0..n {
                let mut s = 0.0;
                for &f in bag {
                    s += self.emission[f * n + y];
                }
                if t == 0 {
                    s += self.start[y];
                }
                if t + 1 == t_len {
                    s += self.end[y];
                }
                scores[t][y] = s;
            }
        }
        scores
    }

    fn trans(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.labels.len() + to]
    }

    /// Model score of a full label sequence.
    pub fn score(&self, seq: &CrfSequence, labels: &[usize]) -> f64 {
        assert_eq!(seq.len(), labels.len());
        let indexed = self.index_sequence(seq);
        let node = self.node_scores(&indexed);
        let mut total = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            total += node[t][y];
            if t > 0 {
                total += self.trans(labels[t - 1], y);
            }
        }
        total
    }

    pub fn to_json(&self) -> Result<String, CrfError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CrfError> {
        let mut model: CrfModel = serde_json::from_str(text)?;
        if model.version != MODEL_VERSION {
            return Err(CrfError::Version(model.version));
        }
        model.feature_index = model
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        Ok(model)
    }
}

/// Marginal quantities from the forward-backward pass.
#[derive(Debug, Clone)]
pub struct Posteriors {
    pub log_z: f64,
    /// `[position][label]`, each row summing to 1.
    pub node_marginals: Vec<Vec<f64>>,
    /// `[position][from * n_labels + to]` for adjacent pairs.
    pub edge_marginals: Vec<Vec<f64>>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sum-product inference in log space.
pub fn forward_backward(model: &CrfModel, seq: &CrfSequence) -> Posteriors {
    assert!(!seq.is_empty(), "sequence must be non-empty");
    let n = model.labels().len();
    let t_len = seq.len();
    let indexed = model.index_sequence(seq);
    let node = model.node_scores(&indexed);

    let mut alpha = vec![vec![0.0; n]; t_len];
    alpha[0].clone_from_slice(&node[0]);
    let mut scratch = vec![0.0; n];
    for t in 1..t_len {
        for y in 0..n {
            for (prev, slot) in scratch.iter_mut().enumerate() {
                *slot = alpha[t - 1][prev] + model.trans(prev, y);
            }
            alpha[t][y] = node[t][y] + log_sum_exp(&scratch);
        }
    }
    let log_z = log_sum_exp(&alpha[t_len - 1]);

    let mut beta = vec![vec![0.0; n]; t_len];
    for t in (0..t_len - 1).rev() {
        for y in 0..n {
            for (next, slot) in scratch.iter_mut().enumerate() {
                *slot = model.trans(y, next) + node[t + 1][next] + beta[t + 1][next];
            }
            beta[t][y] = log_sum_exp(&scratch);
        }
    }

    let node_marginals = (0..t_len)
        .map(|t| {
            (0..n)
                .map(|y| (alpha[t][y] + beta[t][y] - log_z).exp())
                .collect()
        })
        .collect();
    let edge_marginals = (0..t_len.saturating_sub(1))
        .map(|t| {
            let mut edges = vec![0.0; n * n];
            for from in 0..n {
                for to in 0..n {
                    edges[from * n + to] = (alpha[t][from]
                        + model.trans(from, to)
                        + node[t + 1][to]
                        + beta[t + 1][to]
                        - log_z)
                        .exp();
                }
            }
            edges
        })
        .collect();

    Posteriors {
        log_z,
        node_marginals,
        edge_marginals,
    }
}

/// Max-product decoding. Ties break toward the earlier label in the model's
/// label order at every backpointer.
pub fn viterbi(model: &CrfModel, seq: &CrfSequence) -> (Vec<usize>, f64) {
    assert!(!seq.is_empty(), "sequence must be non-empty");
    let n = model.labels().len();
    let t_len = seq.len();
    let indexed = model.index_sequence(seq);
    let node = model.node_scores(&indexed);

    let mut delta = vec![vec![0.0; n]; t_len];
    let mut back = vec![vec![0usize; n]; t_len];
    delta[0].clone_from_slice(&node[0]);
    for t in 1..t_len {
        for y in 0..n {
            let mut best_prev = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for prev in 0..n {
                let score = delta[t - 1][prev] + model.trans(prev, y);
                if score > best_score {
                    best_score = score;
                    best_prev = prev;
                }
            }
            delta[t][y] = node[t][y] + best_score;
            back[t][y] = best_prev;
        }
    }

    let mut best_last = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for y in 0..n {
        if delta[t_len - 1][y] > best_score {
            best_score = delta[t_len - 1][y];
            best_last = y;
        }
    }
    let mut labels = vec![0usize; t_len];
    labels[t_len - 1] = best_last;
    for t in (1..t_len).rev() {
        labels[t - 1] = back[t][labels[t]];
    }
    (labels, best_score)
}

/// Gradient with the same layout as the model weights.
#[derive(Debug, Clone)]
pub struct CrfGradient {
    pub emission: Vec<f64>,
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl CrfGradient {
    fn zeros_like(model: &CrfModel) -> Self {
        CrfGradient {
            emission: vec![0.0; model.emission.len()],
            transition: vec![0.0; model.transition.len()],
            start: vec![0.0; model.start.len()],
            end: vec![0.0; model.end.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self
            .emission
            .iter()
            .chain(&self.transition)
            .chain(&self.start)
            .chain(&self.end)
            .map(|v| v * v)
            .sum();
        sq.sqrt()
    }
}

fn squared_norm(model: &CrfModel) -> f64 {
    model
        .emission
        .iter()
        .chain(&model.transition)
        .chain(&model.start)
        .chain(&model.end)
        .map(|w| w * w)
        .sum()
}

/// Negative conditional log-likelihood of the gold labeling plus an L2
/// penalty, with its gradient: expected feature counts minus empirical
/// counts plus `lambda * w`.
pub fn nll_and_gradient(
    model: &CrfModel,
    seq: &CrfSequence,
    gold: &[usize],
    lambda: f64,
) -> Result<(f64, CrfGradient), CrfError> {
    if gold.len() != seq.len() {
        return Err(CrfError::LengthMismatch {
            gold: gold.len(),
            seq: seq.len(),
        });
    }
    let n = model.labels().len();
    let indexed = model.index_sequence(seq);
    let post = forward_backward(model, seq);
    let value = post.log_z - model.score(seq, gold) + lambda / 2.0 * squared_norm(model);

    let mut grad = CrfGradient::zeros_like(model);
    for (t, bag) in indexed.iter().enumerate() {
        for y in 0..n {
            let p = post.node_marginals[t][y];
            for &f in bag {
                grad.emission[f * n + y] += p;
            }
        }
        for &f in bag {
            grad.emission[f * n + gold[t]] -= 1.0;
        }
    }
    for y in 0..n {
        grad.start[y] += post.node_marginals[0][y];
        grad.end[y] += post.node_marginals[seq.len() - 1][y];
    }
    grad.start[gold[0]] -= 1.0;
    grad.end[*gold.last().expect("non-empty gold")] -= 1.0;
    for t in 0..seq.len().saturating_sub(1) {
        for from in 0..n {
            for to in 0..n {
                grad.transition[from * n + to] += post.edge_marginals[t][from * n + to];
            }
        }
        grad.transition[gold[t] * n + gold[t + 1]] -= 1.0;
    }
    if lambda != 0.0 {
        for (g, w) in grad.emission.iter_mut().zip(&model.emission) {
            *g += lambda * w;
        }
        for (g, w) in grad.transition.iter_mut().zip(&model.transition) {
            *g += lambda * w;
        }
        for (g, w) in grad.start.iter_mut().zip(&model.start) {
            *g += lambda * w;
        }
        for (g, w) in grad.end.iter_mut().zip(&model.end) {
            *g += lambda * w;
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CrfTrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub step: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CrfTrainConfig {
    fn default() -> Self {
        CrfTrainConfig {
            lambda: 0.1,
            epochs: 50,
            step: 0.1,
            batch_size: 8,
            seed: 0,
        }
    }
}

fn mean_nll(model: &CrfModel, data: &[(CrfSequence, Vec<usize>)], lambda: f64) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(seq, gold)| {
            let post = forward_backward(model, seq);
            post.log_z - model.score(seq, gold)
        })
        .sum();
    total / data.len() as f64 + lambda / 2.0 * squared_norm(model)
}

/// Trains a CRF by seeded mini-batch gradient descent on the mean
/// regularized NLL. The feature vocabulary is frozen from the training
/// sequences; the returned model is the epoch snapshot with the lowest mean
/// objective, so the final objective never exceeds the initial one.
pub fn train_crf(
    data: &[(CrfSequence, Vec<String>)],
    labels: &[String],
    config: &CrfTrainConfig,
) -> Result<CrfModel, CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyDataset);
    }
    let mut features: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (seq, _) in data {
        for bag in seq.bags() {
            for feature in bag {
                if seen.insert(feature.clone()) {
                    features.push(feature.clone());
                }
            }
        }
    }

    let mut model = CrfModel::new(labels.to_vec(), features);
    let indexed_gold: Vec<(CrfSequence, Vec<usize>)> = data
        .iter()
        .map(|(seq, gold)| {
            let gold_idx = gold
                .iter()
                .map(|label| {
                    model
                        .label_index(label)
                        .ok_or_else(|| CrfError::UnknownLabel(label.clone()))
                })
                .collect::<Result<Vec<usize>, CrfError>>()?;
            if gold_idx.len() != seq.len() {
                return Err(CrfError::LengthMismatch {
                    gold: gold_idx.len(),
                    seq: seq.len(),
                });
            }
            Ok((seq.clone(), gold_idx))
        })
        .collect::<Result<_, CrfError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..indexed_gold.len()).collect();
    let batch = config.batch_size.max(1);

    let mut best_model = model.clone();
    let mut best_nll = mean_nll(&model, &indexed_gold, config.lambda);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad = CrfGradient::zeros_like(&model);
            for &idx in chunk {
                let (seq, gold) = &indexed_gold[idx];
                let (_, g) = nll_and_gradient(&model, seq, gold, 0.0)?;
                for (a, b) in grad.emission.iter_mut().zip(&g.emission) {
                    *a += b;
                }
                for (a, b) in grad.transition.iter_mut().zip(&g.transition) {
                    *a += b;
                }
                for (a, b) in grad.start.iter_mut().zip(&g.start) {
                    *a += b;
                }
                for (a, b) in grad.end.iter_mut().zip(&g.end) {
                    *a += b;
                }
            }
            let scale = config.step / chunk.len() as f64;
            let decay = config.step * config.lambda;
            for (w, g) in model.emission.iter_mut().zip(&grad.emission) {
                *w -= scale * g + decay * *w;
            }
            for (w, g) in model.transition.iter_mut().zip(&grad.transition) {
                *w -= scale * g + decay * *w;
            }
            for (w, g) in model.start.iter_mut().zip(&grad.start) {
                *w -= scale * g + decay * *w;
            }
            for (w, g) in model.end.iter_mut().zip(&grad.end) {
                *w -= scale * g + decay * *w;
            }
        }
        let nll = mean_nll(&model, &indexed_gold, config.lambda);
        if nll < best_nll {
            best_nll = nll;
            best_model = model.clone();
        }
    }
    Ok(best_model)
}
