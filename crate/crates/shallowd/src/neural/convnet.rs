//! The convolutional sentence-pair classifier: embedded input matrix, one
//! narrow-convolution filter bank per width, max-over-time pooling, dropout,
//! and a softmax output layer, trained with Adam.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{DiscourseInput, EmbeddingMatrix};
use super::{elu, elu_grad, NeuralError};

/// One bank of narrow-convolution filters sharing a width.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub width: usize,
    /// `n_filters x width x dim`.
    pub weights: Array3<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    /// `n_classes x pooled_features`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetConfig {
    pub widths: Vec<usize>,
    pub n_filters: usize,
    pub alpha_elu: f64,
    pub dropout_p: f64,
    pub limit1: usize,
    pub limit2: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            widths: vec![3, 4, 5],
            n_filters: 128,
            alpha_elu: 1.0,
            dropout_p: 0.5,
            limit1: 60,
            limit2: 61,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModel {
    pub embedding: EmbeddingMatrix,
    pub banks: Vec<FilterBank>,
    pub output: OutputLayer,
    pub classes: Vec<String>,
    pub alpha_elu: f64,
    pub dropout_p: f64,
    pub limit1: usize,
    pub limit2: usize,
}

impl ConvNetModel {
    /// Builds a model with Glorot-uniform filter and output weights drawn
    /// from the seeded generator; the embedding is owned by the model.
    pub fn new(
        embedding: EmbeddingMatrix,
        classes: Vec<String>,
        config: &NetConfig,
    ) -> Result<Self, NeuralError> {
        if classes.len() < 2 {
            return Err(NeuralError::Shape(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(NeuralError::Shape(format!(
                "dropout probability {} outside [0, 1)",
                config.dropout_p
            )));
        }
        let input_len = config.limit1 + config.limit2;
        for &width in &config.widths {
            if width == 0 || width > input_len {
                return Err(NeuralError::Shape(format!(
                    "filter width {width} invalid for input length {input_len}"
                )));
            }
        }
        let dim = embedding.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let banks = config
            .widths
            .iter()
            .map(|&width| {
                let fan_in = (width * dim) as f64;
                let bound = (6.0 / (fan_in + 1.0)).sqrt();
                let weights = Array3::from_shape_fn((config.n_filters, width, dim), |_| {
                    rng.gen_range(-bound..=bound)
                });
                FilterBank {
                    width,
                    weights,
                    bias: Array1::zeros(config.n_filters),
                }
            })
            .collect::<Vec<_>>();
        let pooled = config.widths.len() * config.n_filters;
        let out_bound = (6.0 / (pooled + classes.len()) as f64).sqrt();
        let output = OutputLayer {
            weights: Array2::from_shape_fn((classes.len(), pooled), |_| {
                rng.gen_range(-out_bound..=out_bound)
            }),
            bias: Array1::zeros(classes.len()),
        };
        Ok(ConvNetModel {
            embedding,
            banks,
            output,
            classes,
            alpha_elu: config.alpha_elu,
            dropout_p: config.dropout_p,
            limit1: config.limit1,
            limit2: config.limit2,
        })
    }

    pub fn input_len(&self) -> usize {
        self.limit1 + self.limit2
    }

    pub fn n_filters(&self) -> usize {
        self.banks.first().map(|b| b.bias.len()).unwrap_or(0)
    }

    pub fn pooled_len(&self) -> usize {
        self.banks.len() * self.n_filters()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass result with the cache needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Vec<f64>,
    indices: Vec<usize>,
    q: Array2<f64>,
    /// Pre-activation feature maps, one `n_filters x map_len` matrix per bank.
    preact: Vec<Array2<f64>>,
    /// Argmax position per (bank, filter).
    argmax: Vec<Vec<usize>>,
    /// Pooled features after dropout.
    u_dropped: Vec<f64>,
    /// Per-feature dropout factor: 0 for dropped, 1/(1-p) for survivors,
    /// 1 in eval mode.
    mask_scale: Vec<f64>,
}

impl Forward {
    /// Pooled feature vector after dropout (the softmax input).
    pub fn features(&self) -> &[f64] {
        &self.u_dropped
    }
}

/// Dot product over four fixed-order accumulator lanes; the lane layout is
/// part of the numeric contract, so results are reproducible.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let quads = a.len() / 4;
    let mut lanes = [0.0f64; 4];
    for i in 0..quads {
        let j = i * 4;
        lanes[0] += a[j] * b[j];
        lanes[1] += a[j + 1] * b[j + 1];
        lanes[2] += a[j + 2] * b[j + 2];
        lanes[3] += a[j + 3] * b[j + 3];
    }
    let mut sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for j in quads * 4..a.len() {
        sum += a[j] * b[j];
    }
    sum
}

/// Narrow convolution of a single filter over the embedded input, followed
/// by ELU: `map_len = l - w + 1` outputs.
pub fn conv_forward(
    q: &Array2<f64>,
    filter: &ArrayView2<'_, f64>,
    bias: f64,
    alpha: f64,
) -> Result<Vec<f64>, NeuralError> {
    let (l, d) = q.dim();
    let (w, fd) = filter.dim();
    if fd != d {
        return Err(NeuralError::Shape(format!(
            "filter dim {fd} does not match embedding dim {d}"
        )));
    }
    if w > l {
        return Err(NeuralError::Shape(format!(
            "filter width {w} exceeds input length {l}"
        )));
    }
    let q_flat = q.as_slice().expect("standard layout");
    let f_flat = filter.to_owned();
    let f_flat = f_flat.as_slice().expect("standard layout");
    let window = w * d;
    let mut map = Vec::with_capacity(l - w + 1);
    for i in 0..=(l - w) {
        let src = &q_flat[i * d..i * d + window];
        map.push(elu(dot(src, f_flat) + bias, alpha));
    }
    Ok(map)
}

/// Maximum of a feature map and its first-maximal position.
pub fn max_over_time(map: &[f64]) -> Result<(f64, usize), NeuralError> {
    if map.is_empty() {
        return Err(NeuralError::Shape("empty feature map".into()));
    }
    let mut best = 0usize;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    Ok((map[best], best))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Full forward pass: embed, convolve per bank, pool, dropout (train mode),
/// affine, softmax.
pub fn forward<R: Rng>(
    model: &ConvNetModel,
    input: &DiscourseInput,
    mode: Mode,
    rng: &mut R,
) -> Result<Forward, NeuralError> {
    let l = model.input_len();
    if input.len() != l {
        return Err(NeuralError::Shape(format!(
            "input length {} does not match model length {l}",
            input.len()
        )));
    }
    let d = model.embedding.dim();
    let mut q = Array2::<f64>::zeros((l, d));
    for (i, &row) in input.indices.iter().enumerate() {
        q.row_mut(i).assign(&model.embedding.row(row));
    }
    let q_flat = q.as_slice().expect("standard layout");

    let n_f = model.n_filters();
    let mut preact = Vec::with_capacity(model.banks.len());
    let mut argmax = Vec::with_capacity(model.banks.len());
    let mut pooled = Vec::with_capacity(model.pooled_len());
    for bank in &model.banks {
        let w = bank.width;
        let map_len = l - w + 1;
        let window = w * d;
        let bank_flat = bank.weights.as_slice().expect("standard layout");
        let mut maps = Array2::<f64>::zeros((n_f, map_len));
        let mut maxima = Vec::with_capacity(n_f);
        for f in 0..n_f {
            let filter = &bank_flat[f * window..(f + 1) * window];
            let bias = bank.bias[f];
            let mut best_pos = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for i in 0..map_len {
                let src = &q_flat[i * d..i * d + window];
                let pre = dot(src, filter) + bias;
                maps[(f, i)] = pre;
                let value = elu(pre, model.alpha_elu);
                if value > best_val {
                    best_val = value;
                    best_pos = i;
                }
            }
            maxima.push(best_pos);
            pooled.push(best_val);
        }
        preact.push(maps);
        argmax.push(maxima);
    }

    let mask_scale: Vec<f64> = match mode {
        Mode::Eval => vec![1.0; pooled.len()],
        Mode::Train => {
            let p = model.dropout_p;
            if p == 0.0 {
                vec![1.0; pooled.len()]
            } else {
                let scale = 1.0 / (1.0 - p);
                pooled
                    .iter()
                    .map(|_| if rng.gen_bool(p) { 0.0 } else { scale })
                    .collect()
            }
        }
    };
    let u_dropped: Vec<f64> = pooled
        .iter()
        .zip(&mask_scale)
        .map(|(&u, &m)| u * m)
        .collect();

    let k = model.classes.len();
    let mut logits = vec![0.0; k];
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = model.output.weights.row(c);
        *logit = model.output.bias[c] + row.iter().zip(&u_dropped).map(|(w, u)| w * u).sum::<f64>();
    }
    let probs = softmax(&logits);

    Ok(Forward {
        probs,
        indices: input.indices.clone(),
        q,
        preact,
        argmax,
        u_dropped,
        mask_scale,
    })
}

/// Eval-mode class distribution; a pure function of model and input.
pub fn predict(model: &ConvNetModel, input: &DiscourseInput) -> Result<Vec<f64>, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(forward(model, input, Mode::Eval, &mut rng)?.probs)
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: Array2<f64>,
    pub banks: Vec<(Array3<f64>, Array1<f64>)>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl Gradients {
    fn zeros_like(model: &ConvNetModel) -> Self {
        Gradients {
            embedding: Array2::zeros(model.embedding.vectors().dim()),
            banks: model
                .banks
                .iter()
                .map(|b| (Array3::zeros(b.weights.dim()), Array1::zeros(b.bias.dim())))
                .collect(),
            output_weights: Array2::zeros(model.output.weights.dim()),
            output_bias: Array1::zeros(model.output.bias.dim()),
        }
    }

    fn scale(&mut self, factor: f64) {
        self.embedding.mapv_inplace(|v| v * factor);
        for (w, b) in &mut self.banks {
            w.mapv_inplace(|v| v * factor);
            b.mapv_inplace(|v| v * factor);
        }
        self.output_weights.mapv_inplace(|v| v * factor);
        self.output_bias.mapv_inplace(|v| v * factor);
    }
}

/// Per-chunk gradient accumulator: dense filter and output gradients plus
/// sparse embedding rows, so parallel workers stay lightweight.
struct PartialGrads {
    loss: f64,
    banks: Vec<(Array3<f64>, Array1<f64>)>,
    output_weights: Array2<f64>,
    output_bias: Array1<f64>,
    emb_rows: std::collections::BTreeMap<usize, Vec<f64>>,
}

impl PartialGrads {
    fn zeros_like(model: &ConvNetModel) -> Self {
        PartialGrads {
            loss: 0.0,
            banks: model
                .banks
                .iter()
                .map(|b| (Array3::zeros(b.weights.dim()), Array1::zeros(b.bias.dim())))
                .collect(),
            output_weights: Array2::zeros(model.output.weights.dim()),
            output_bias: Array1::zeros(model.output.bias.dim()),
            emb_rows: std::collections::BTreeMap::new(),
        }
    }
}

/// Backpropagates one example's cross-entropy loss into the accumulator.
fn accumulate_backward(model: &ConvNetModel, pass: &Forward, class: usize, grads: &mut PartialGrads) {
    let k = model.classes.len();
    let n_f = model.n_filters();
    let d = model.embedding.dim();

    let mut dlogits = pass.probs.clone();
    dlogits[class] -= 1.0;

    let pooled_len = pass.u_dropped.len();
    let mut du = vec![0.0; pooled_len];
    for c in 0..k {
        let g = dlogits[c];
        grads.output_bias[c] += g;
        let w_row = model.output.weights.row(c);
        for j in 0..pooled_len {
            grads.output_weights[(c, j)] += g * pass.u_dropped[j];
            du[j] += g * w_row[j];
        }
    }
    // Through dropout.
    for (g, &m) in du.iter_mut().zip(&pass.mask_scale) {
        *g *= m;
    }

    let mut dq = Array2::<f64>::zeros(pass.q.dim());
    for (bi, bank) in model.banks.iter().enumerate() {
        let w = bank.width;
        let (bank_grad, bias_grad) = &mut grads.banks[bi];
        for f in 0..n_f {
            let g = du[bi * n_f + f];
            if g == 0.0 {
                continue;
            }
            let pos = pass.argmax[bi][f];
            let pre = pass.preact[bi][(f, pos)];
            let dpre = g * elu_grad(pre, model.alpha_elu);
            bias_grad[f] += dpre;
            for j in 0..w {
                for c in 0..d {
                    bank_grad[(f, j, c)] += dpre * pass.q[(pos + j, c)];
                    dq[(pos + j, c)] += dpre * bank.weights[(f, j, c)];
                }
            }
        }
    }

    let pad = model.embedding.pad_index();
    for (i, &row) in pass.indices.iter().enumerate() {
        if row == pad {
            continue;
        }
        let slot = grads
            .emb_rows
            .entry(row)
            .or_insert_with(|| vec![0.0; d]);
        for c in 0..d {
            slot[c] += dq[(i, c)];
        }
    }
}

/// Examples per work unit when fanning a batch out over threads.
const GRADIENT_CHUNK: usize = 4;
/// Examples per work unit for forward-only evaluation.
const EVAL_CHUNK: usize = 64;

fn worker_count() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Runs `work(chunk_index)` over all chunks, fanning out over threads when
/// useful, and returns the results in chunk order. Chunk boundaries are
/// fixed by the chunk size, so the reduction order (and therefore every
/// floating-point result) is independent of the thread count.
fn run_chunked<T, F>(n_chunks: usize, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = worker_count().min(n_chunks);
    if n_chunks <= 1 || workers <= 1 {
        return (0..n_chunks).map(work).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<T>>> =
        (0..n_chunks).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if index >= n_chunks {
                    break;
                }
                let result = work(index);
                *slots[index].lock().expect("unpoisoned slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("unpoisoned slot")
                .expect("chunk completed")
        })
        .collect()
}

/// Mean cross-entropy loss and mean parameter gradients over a batch. The
/// padding row's embedding gradient is always zero. Per-example work fans
/// out over fixed-size chunks merged in index order, so the result is
/// bitwise deterministic for any thread count; with dropout active, each
/// example's mask stream is seeded from the caller's generator in batch
/// order.
pub fn batch_gradients<R: Rng>(
    model: &ConvNetModel,
    batch: &[(DiscourseInput, usize)],
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Gradients), NeuralError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let mask_seeds: Option<Vec<u64>> = match mode {
        Mode::Train if model.dropout_p > 0.0 => Some(batch.iter().map(|_| rng.gen()).collect()),
        _ => None,
    };

    let chunks: Vec<&[(DiscourseInput, usize)]> = batch.chunks(GRADIENT_CHUNK).collect();
    let partials = run_chunked(chunks.len(), |chunk_index| {
        let chunk = chunks[chunk_index];
        let mut partial = PartialGrads::zeros_like(model);
        for (offset, (input, class)) in chunk.iter().enumerate() {
            let example = chunk_index * GRADIENT_CHUNK + offset;
            let seed = mask_seeds.as_ref().map(|s| s[example]).unwrap_or(0);
            let mut example_rng = ChaCha8Rng::seed_from_u64(seed);
            let pass = forward(model, input, mode, &mut example_rng)?;
            partial.loss += -pass.probs[*class].max(1e-300).ln();
            accumulate_backward(model, &pass, *class, &mut partial);
        }
        Ok::<PartialGrads, NeuralError>(partial)
    });

    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for partial in partials {
        let partial = partial?;
        loss += partial.loss;
        for ((gw, gb), (pw, pb)) in grads.banks.iter_mut().zip(&partial.banks) {
            *gw += pw;
            *gb += pb;
        }
        grads.output_weights += &partial.output_weights;
        grads.output_bias += &partial.output_bias;
        for (row, values) in &partial.emb_rows {
            for (c, value) in values.iter().enumerate() {
                grads.embedding[(*row, c)] += value;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((loss * inv, grads))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment buffers over all model parameters, in the fixed
/// order embedding, banks, output.
#[derive(Debug, Clone)]
pub struct AdamState {
    params: AdamParams,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(model: &ConvNetModel, params: AdamParams) -> Self {
        let size = model.embedding.vectors().len()
            + model
                .banks
                .iter()
                .map(|b| b.weights.len() + b.bias.len())
                .sum::<usize>()
            + model.output.weights.len()
            + model.output.bias.len();
        AdamState {
            params,
            t: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    /// One Adam update with bias correction.
    pub fn update(&mut self, model: &mut ConvNetModel, grads: &Gradients) {
        self.t += 1;
        let AdamParams {
            step,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut offset = 0usize;
        let apply = |weights: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..weights.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                weights[i] -= step * m_hat / (v_hat.sqrt() + epsilon);
            }
        };

        let emb = model
            .embedding
            .vectors_mut()
            .as_slice_mut()
            .expect("standard layout");
        let g = grads.embedding.as_slice().expect("standard layout");
        apply(
            emb,
            g,
            &mut self.m[offset..offset + g.len()],
            &mut self.v[offset..offset + g.len()],
        );
        offset += g.len();

        for (bank, (gw, gb)) in model.banks.iter_mut().zip(&grads.banks) {
            let w = bank.weights.as_slice_mut().expect("standard layout");
            let g = gw.as_slice().expect("standard layout");
            apply(
                w,
                g,
                &mut self.m[offset..offset + g.len()],
                &mut self.v[offset..offset + g.len()],
            );
            offset += g.len();
            let b = bank.bias.as_slice_mut().expect("standard layout");
            let g = gb.as_slice().expect("standard layout");
            apply(
                b,
                g,
                &mut self.m[offset..offset + g.len()],
                &mut self.v[offset..offset + g.len()],
            );
            offset += g.len();
        }

        let w = model
            .output
            .weights
            .as_slice_mut()
            .expect("standard layout");
        let g = grads.output_weights.as_slice().expect("standard layout");
        apply(
            w,
            g,
            &mut self.m[offset..offset + g.len()],
            &mut self.v[offset..offset + g.len()],
        );
        offset += g.len();
        let b = model.output.bias.as_slice_mut().expect("standard layout");
        let g = grads.output_bias.as_slice().expect("standard layout");
        apply(
            b,
            g,
            &mut self.m[offset..offset + g.len()],
            &mut self.v[offset..offset + g.len()],
        );
    }
}

/// One training step: backpropagate the batch in train mode and apply a
/// single Adam update. Returns the mean cross-entropy loss.
pub fn train_step<R: Rng>(
    model: &mut ConvNetModel,
    batch: &[(DiscourseInput, usize)],
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<f64, NeuralError> {
    let (loss, grads) = batch_gradients(model, batch, Mode::Train, rng)?;
    adam.update(model, &grads);
    Ok(loss)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamParams,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 20,
            adam: AdamParams::default(),
            seed: 0,
            early_stop_patience: 5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NeuralError> {
        let AdamParams {
            step,
            beta1,
            beta2,
            epsilon,
        } = self.adam;
        if self.batch_size == 0
            || self.epochs == 0
            || step <= 0.0
            || epsilon <= 0.0
            || !(0.0..1.0).contains(&beta1)
            || beta1 == 0.0
            || !(0.0..1.0).contains(&beta2)
            || beta2 == 0.0
        {
            return Err(NeuralError::Shape(format!(
                "invalid training configuration: batch {}, epochs {}, step {step}, \
                 betas ({beta1}, {beta2}), epsilon {epsilon}",
                self.batch_size, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub best_epoch: usize,
}

fn mean_eval_loss(
    model: &ConvNetModel,
    data: &[(DiscourseInput, usize)],
) -> Result<f64, NeuralError> {
    let chunks: Vec<&[(DiscourseInput, usize)]> = data.chunks(EVAL_CHUNK).collect();
    let sums = run_chunked(chunks.len(), |chunk_index| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut total = 0.0;
        for (input, class) in chunks[chunk_index] {
            let pass = forward(model, input, Mode::Eval, &mut rng)?;
            total += -pass.probs[*class].max(1e-300).ln();
        }
        Ok::<f64, NeuralError>(total)
    });
    let mut total = 0.0;
    for sum in sums {
        total += sum?;
    }
    Ok(total / data.len() as f64)
}

/// Trains with seeded per-epoch shuffling and early stopping on the dev
/// loss; the model is left at the best-dev snapshot. An empty dev set falls
/// back to evaluating on the training data.
pub fn train(
    model: &mut ConvNetModel,
    dataset: &[(DiscourseInput, usize)],
    dev_set: &[(DiscourseInput, usize)],
    config: &TrainConfig,
) -> Result<TrainHistory, NeuralError> {
    assert!(!dataset.is_empty(), "dataset must be non-empty");
    config.validate()?;
    let dev: &[(DiscourseInput, usize)] = if dev_set.is_empty() { dataset } else { dev_set };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model, config.adam);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        dev_loss: Vec::new(),
        best_epoch: 0,
    };
    let mut best_loss = f64::INFINITY;
    let mut best_model = model.clone();
    let mut since_improve = 0usize;

    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<(DiscourseInput, usize)> =
                chunk.iter().map(|&i| dataset[i].clone()).collect();
            epoch_loss += train_step(model, &batch, &mut adam, &mut rng)?;
            batches += 1;
        }
        history.train_loss.push(epoch_loss / batches as f64);

        let dev_loss = mean_eval_loss(model, dev)?;
        history.dev_loss.push(dev_loss);
        if dev_loss < best_loss {
            best_loss = dev_loss;
            best_model = model.clone();
            history.best_epoch = epoch;
            since_improve = 0;
        } else {
            since_improve += 1;
        }
        if since_improve >= config.early_stop_patience {
            break;
        }
    }
    *model = best_model;
    Ok(history)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    classes: Vec<String>,
    widths: Vec<usize>,
    n_filters: usize,
    dim: usize,
    vocab: Vec<String>,
    alpha_elu: f64,
    dropout_p: f64,
    limit1: usize,
    limit2: usize,
    tensors: Vec<(String, Vec<usize>)>,
}

const MAGIC: &[u8; 4] = b"SDCN";
const CONTAINER_VERSION: u32 = 1;

impl ConvNetModel {
    /// Serializes to the binary container: magic, version, a JSON manifest
    /// of shapes and hyperparameters, then little-endian f32 tensor data in
    /// manifest order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        tensors.push((
            "embedding".into(),
            self.embedding.vectors().shape().to_vec(),
            self.embedding.vectors().iter().copied().collect(),
        ));
        for (i, bank) in self.banks.iter().enumerate() {
            tensors.push((
                format!("bank{i}.weights"),
                bank.weights.shape().to_vec(),
                bank.weights.iter().copied().collect(),
            ));
            tensors.push((
                format!("bank{i}.bias"),
                bank.bias.shape().to_vec(),
                bank.bias.iter().copied().collect(),
            ));
        }
        tensors.push((
            "output.weights".into(),
            self.output.weights.shape().to_vec(),
            self.output.weights.iter().copied().collect(),
        ));
        tensors.push((
            "output.bias".into(),
            self.output.bias.shape().to_vec(),
            self.output.bias.iter().copied().collect(),
        ));

        let manifest = Manifest {
            version: CONTAINER_VERSION,
            classes: self.classes.clone(),
            widths: self.banks.iter().map(|b| b.width).collect(),
            n_filters: self.n_filters(),
            dim: self.embedding.dim(),
            vocab: self.embedding.words().to_vec(),
            alpha_elu: self.alpha_elu,
            dropout_p: self.dropout_p,
            limit1: self.limit1,
            limit2: self.limit2,
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| (name.clone(), shape.clone()))
                .collect(),
        };
        let manifest_bytes = serde_json::to_vec(&manifest).expect("serializable manifest");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest_bytes);
        for (_, _, data) in &tensors {
            for &value in data {
                out.extend_from_slice(&(value as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(NeuralError::Container("bad magic".into()));
        }
        let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        if version != CONTAINER_VERSION {
            return Err(NeuralError::Version(version));
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() < 16 + manifest_len {
            return Err(NeuralError::Container("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + manifest_len])
            .map_err(|e| NeuralError::Container(e.to_string()))?;

        let mut pos = 16 + manifest_len;
        let mut read_tensor = |shape: &[usize]| -> Result<Vec<f64>, NeuralError> {
            let count: usize = shape.iter().product();
            let byte_len = count * 4;
            if pos + byte_len > bytes.len() {
                return Err(NeuralError::Container("truncated tensor data".into()));
            }
            let data: Vec<f64> = bytes[pos..pos + byte_len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos += byte_len;
            Ok(data)
        };

        let mut tensor_iter = manifest.tensors.iter();
        let mut next_shape = |name: &str| -> Result<Vec<usize>, NeuralError> {
            let (n, shape) = tensor_iter
                .next()
                .ok_or_else(|| NeuralError::Container("missing tensor entry".into()))?;
            if n != name {
                return Err(NeuralError::Container(format!(
                    "expected tensor {name}, found {n}"
                )));
            }
            Ok(shape.clone())
        };

        let emb_shape = next_shape("embedding")?;
        let emb_data = read_tensor(&emb_shape)?;
        let vectors = Array2::from_shape_vec((emb_shape[0], emb_shape[1]), emb_data)
            .map_err(|e| NeuralError::Container(e.to_string()))?;
        let embedding = EmbeddingMatrix::from_rows(manifest.vocab.clone(), vectors)?;

        let mut banks = Vec::with_capacity(manifest.widths.len());
        for (i, &width) in manifest.widths.iter().enumerate() {
            let w_shape = next_shape(&format!("bank{i}.weights"))?;
            let w_data = read_tensor(&w_shape)?;
            let weights = Array3::from_shape_vec((w_shape[0], w_shape[1], w_shape[2]), w_data)
                .map_err(|e| NeuralError::Container(e.to_string()))?;
            let b_shape = next_shape(&format!("bank{i}.bias"))?;
            let b_data = read_tensor(&b_shape)?;
            banks.push(FilterBank {
                width,
                weights,
                bias: Array1::from_vec(b_data),
            });
        }

        let ow_shape = next_shape("output.weights")?;
        let ow_data = read_tensor(&ow_shape)?;
        let output_weights = Array2::from_shape_vec((ow_shape[0], ow_shape[1]), ow_data)
            .map_err(|e| NeuralError::Container(e.to_string()))?;
        let ob_shape = next_shape("output.bias")?;
        let ob_data = read_tensor(&ob_shape)?;

        Ok(ConvNetModel {
            embedding,
            banks,
            output: OutputLayer {
                weights: output_weights,
                bias: Array1::from_vec(ob_data),
            },
            classes: manifest.classes,
            alpha_elu: manifest.alpha_elu,
            dropout_p: manifest.dropout_p,
            limit1: manifest.limit1,
            limit2: manifest.limit2,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
