//! Feed-forward head: ReLU hidden layers then a linear layer whose rows are
//! the per-definition weight vectors `w_k`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{softmax, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `out × in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Dense {
            weight: Matrix::uniform(output, input, bound, rng),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        self.weight.matvec_acc(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams<T> {
    pub hidden: Vec<Dense<T>>,
    pub output: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct FfnTrace<T> {
    /// Input to each layer, hidden layers first then the output layer.
    activations: Vec<Vec<T>>,
    pub logits: Vec<T>,
}

impl<T: Scalar> FfnParams<T> {
    pub fn init<R: Rng>(input: usize, widths: &[usize], classes: usize, rng: &mut R) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(widths);
        let hidden = dims
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        FfnParams {
            hidden,
            output: Dense::init(*dims.last().expect("nonempty"), classes, rng),
        }
    }

    pub fn zeros(input: usize, widths: &[usize], classes: usize) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(widths);
        FfnParams {
            hidden: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            output: Dense::zeros(*dims.last().expect("nonempty"), classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).input_dim()
    }

    pub fn classes(&self) -> usize {
        self.output.output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.hidden.iter().map(Dense::output_dim).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut dim = self.input_dim();
        for layer in self.hidden.iter().chain(std::iter::once(&self.output)) {
            if layer.input_dim() != dim || layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape(
                    "feed-forward layer dimensions do not chain".into(),
                ));
            }
            dim = layer.output_dim();
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> FfnTrace<T> {
        let mut activations = Vec::with_capacity(self.hidden.len() + 1);
        let mut cur = x.to_vec();
        for layer in &self.hidden {
            let mut next = layer.apply(&cur);
            next.iter_mut().for_each(|v| *v = v.max(T::zero()));
            activations.push(cur);
            cur = next;
        }
        let logits = self.output.apply(&cur);
        activations.push(cur);
        FfnTrace {
            activations,
            logits,
        }
    }

    /// Accumulates parameter gradients for upstream `d_logits` and returns `dx`.
    pub fn backward(
        &self,
        trace: &FfnTrace<T>,
        d_logits: &[T],
        grads: &mut FfnParams<T>,
    ) -> Vec<T> {
        let n = self.hidden.len();
        let mut delta = d_logits.to_vec();
        let layers = self.hidden.iter().chain(std::iter::once(&self.output));
        let grad_layers = grads
            .hidden
            .iter_mut()
            .chain(std::iter::once(&mut grads.output));
        let mut pairs: Vec<(&Dense<T>, &mut Dense<T>)> = layers.zip(grad_layers).collect();
        for idx in (0..=n).rev() {
            let (layer, grad) = &mut pairs[idx];
            let input = &trace.activations[idx];
            grad.weight.outer_acc(&delta, input);
            for (b, &d) in grad.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            let mut d_in = vec![T::zero(); layer.input_dim()];
            layer.weight.tmatvec_acc(&delta, &mut d_in);
            if idx > 0 {
                // input of layer idx is the ReLU output of layer idx-1
                for (d, &a) in d_in.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// `p_k ∝ exp(w_kᵀ FFN(h))`
pub fn classify<T: Scalar>(h: &[T], ffn: &FfnParams<T>) -> Vec<T> {
    softmax(&ffn.forward(h).logits)
}
