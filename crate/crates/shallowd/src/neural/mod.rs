//! Minimal neural kit for the convolutional sentence-pair classifiers:
//! embedding lookup, narrow convolution, ELU, max-over-time pooling,
//! dropout, softmax with cross-entropy, Adam, and full backpropagation.

mod convnet;
mod embedding;

pub use convnet::{
    batch_gradients, conv_forward, forward, max_over_time, predict, train, train_step, AdamParams,
    AdamState, ConvNetModel, FilterBank, Forward, Gradients, Mode, NetConfig, OutputLayer,
    TrainConfig, TrainHistory,
};
pub use embedding::{
    build_input, load_embeddings, parse_embeddings, DiscourseInput, EmbeddingMatrix, OOV_WORD,
    PAD_WORD,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding format: {0}")]
    EmbeddingFormat(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found} (entry {entry})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        entry: usize,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("model container: {0}")]
    Container(String),
    #[error("unsupported model version {0}")]
    Version(u32),
}

/// Exponential linear unit: `x` for positive inputs, `alpha * (exp(x) - 1)`
/// otherwise.
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * (x.exp() - 1.0)
    }
}

/// Derivative of [`elu`] with respect to its input.
pub fn elu_grad(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0, 1.0), 0.0);
        assert_eq!(elu(2.0, 1.0), 2.0);
        let expected = (-1.0f64).exp() - 1.0;
        assert!((elu(-1.0, 1.0) - expected).abs() < 1e-15);
        assert!((elu(-1.0, 1.0) - -0.63212).abs() < 1e-5);
    }

    #[test]
    fn elu_continuous_and_monotone() {
        let alpha = 1.0;
        let mut previous = f64::NEG_INFINITY;
        let mut x = -6.0;
        while x <= 6.0 {
            let y = elu(x, alpha);
            assert!(y >= previous, "not monotone at {x}");
            previous = y;
            x += 0.01;
        }
        // Continuity at 0: both branches meet.
        assert!((elu(-1e-12, alpha) - elu(1e-12, alpha)).abs() < 1e-11);
    }
}
