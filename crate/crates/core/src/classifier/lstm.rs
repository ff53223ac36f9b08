//! Unidirectional LSTM cell and the bidirectional encoder built from two of them.
//!
//! Gate rows are stacked `[input; forget; cell; output]`, each `H` rows tall:
//!
//! ```text
//! z = W_x x_t + W_h h_{t-1} + b
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```

use rand::Rng;

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T> {
    /// `4H × D`
    pub w_x: Matrix<T>,
    /// `4H × H`
    pub w_h: Matrix<T>,
    /// `4H`
    pub bias: Vec<T>,
}

/// Everything the backward pass needs from one forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace<T> {
    inputs: Vec<Vec<T>>,
    /// post-activation gates per step, `4H`
    gates: Vec<Vec<T>>,
    cells: Vec<Vec<T>>,
    pub hidden: Vec<Vec<T>>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LstmCell {
            w_x: Matrix::zeros(4 * hidden, input_dim),
            w_h: Matrix::zeros(4 * hidden, hidden),
            bias: vec![T::zero(); 4 * hidden],
        }
    }

    /// Uniform `±1/√H` weights, zero bias except the forget gate at 1.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = vec![T::zero(); 4 * hidden];
        for b in &mut bias[hidden..2 * hidden] {
            *b = T::one();
        }
        LstmCell {
            w_x: Matrix::uniform(4 * hidden, input_dim, bound, rng),
            w_h: Matrix::uniform(4 * hidden, hidden, bound, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    /// Runs the recurrence over `inputs` in the order given, from zero state.
    pub fn run(&self, inputs: &[&[T]]) -> LstmTrace<T> {
        let h = self.hidden();
        let mut trace = LstmTrace {
            inputs: Vec::with_capacity(inputs.len()),
            gates: Vec::with_capacity(inputs.len()),
            cells: Vec::with_capacity(inputs.len()),
            hidden: Vec::with_capacity(inputs.len()),
        };
        let zero = vec![T::zero(); h];
        for x in inputs {
            let h_prev = trace.hidden.last().unwrap_or(&zero);
            let c_prev = trace.cells.last().unwrap_or(&zero);
            let mut z = self.bias.clone();
            self.w_x.matvec_acc(x, &mut z);
            self.w_h.matvec_acc(h_prev, &mut z);
            for (k, v) in z.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
            let (i, rest) = z.split_at(h);
            let (f, rest) = rest.split_at(h);
            let (g, o) = rest.split_at(h);
            let c: Vec<T> = (0..h).map(|u| f[u] * c_prev[u] + i[u] * g[u]).collect();
            let hid: Vec<T> = (0..h).map(|u| o[u] * c[u].tanh()).collect();
            trace.inputs.push(x.to_vec());
            trace.gates.push(z);
            trace.cells.push(c);
            trace.hidden.push(hid);
        }
        trace
    }

    /// Backpropagates `d_hidden[t]` (gradient w.r.t. each emitted state)
    /// through the trace. Accumulates into `grads` and returns the gradient
    /// w.r.t. each input.
    pub fn backward(
        &self,
        trace: &LstmTrace<T>,
        d_hidden: &[Vec<T>],
        grads: &mut LstmCell<T>,
    ) -> Vec<Vec<T>> {
        let h = self.hidden();
        let steps = trace.hidden.len();
        let zero = vec![T::zero(); h];
        let mut d_inputs = vec![vec![T::zero(); self.input_dim()]; steps];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let c = &trace.cells[t];
            let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zero };
            let h_prev = if t > 0 { &trace.hidden[t - 1] } else { &zero };
            for u in 0..h {
                let (i, f, g, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
                let dh = d_hidden[t][u] + dh_next[u];
                let tc = c[u].tanh();
                let d_o = dh * tc;
                let dc = dh * o * (T::one() - tc * tc) + dc_next[u];
                dz[u] = dc * g * i * (T::one() - i);
                dz[h + u] = dc * c_prev[u] * f * (T::one() - f);
                dz[2 * h + u] = dc * i * (T::one() - g * g);
                dz[3 * h + u] = d_o * o * (T::one() - o);
                dc_next[u] = dc * f;
            }
            grads.w_x.outer_acc(&dz, &trace.inputs[t]);
            grads.w_h.outer_acc(&dz, h_prev);
            for (b, &d) in grads.bias.iter_mut().zip(&dz) {
                *b += d;
            }
            self.w_x.tmatvec_acc(&dz, &mut d_inputs[t]);
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            self.w_h.tmatvec_acc(&dz, &mut dh_next);
        }
        d_inputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams<T> {
    pub forward: LstmCell<T>,
    pub backward: LstmCell<T>,
}

/// Per-position `[forward ; backward]` states, `L × 2H`.
pub type BiLstmStates<T> = Matrix<T>;

impl<T: Scalar> BiLstmParams<T> {
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstmParams {
            forward: LstmCell::init(input_dim, hidden, rng),
            backward: LstmCell::init(input_dim, hidden, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward: LstmCell::zeros(input_dim, hidden),
            backward: LstmCell::zeros(input_dim, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    fn check(&self, e: &EmbeddingSequence<T>) -> Result<()> {
        if e.dim() != self.input_dim() {
            return Err(Error::Shape(format!(
                "embedding dimension {} but encoder expects {}",
                e.dim(),
                self.input_dim()
            )));
        }
        if e.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        Ok(())
    }
}

/// Full bidirectional pass over every position.
pub fn bilstm_forward<T: Scalar>(
    e: &EmbeddingSequence<T>,
    params: &BiLstmParams<T>,
) -> Result<BiLstmStates<T>> {
    params.check(e)?;
    let rows: Vec<&[T]> = (0..e.len()).map(|i| e.row(i)).collect();
    let fwd = params.forward.run(&rows);
    let rev: Vec<&[T]> = rows.iter().rev().copied().collect();
    let bwd = params.backward.run(&rev);
    let l = e.len();
    let states: Vec<Vec<T>> = (0..l)
        .map(|t| [fwd.hidden[t].as_slice(), bwd.hidden[l - 1 - t].as_slice()].concat())
        .collect();
    Matrix::from_rows(&states)
}

/// Traces for the state at one position: the forward cell only needs
/// `0..=a`, the backward cell only `a..L`.
#[derive(Debug, Clone)]
pub struct PositionTrace<T> {
    position: usize,
    len: usize,
    forward: LstmTrace<T>,
    backward: LstmTrace<T>,
}

/// The concatenated state `h_a` at `position` without computing other positions' outputs.
pub fn bilstm_at<T: Scalar>(
    e: &EmbeddingSequence<T>,
    params: &BiLstmParams<T>,
    position: usize,
) -> Result<(Vec<T>, PositionTrace<T>)> {
    params.check(e)?;
    if position >= e.len() {
        return Err(Error::PositionOutOfRange {
            position,
            len: e.len(),
        });
    }
    let left: Vec<&[T]> = (0..=position).map(|i| e.row(i)).collect();
    let right: Vec<&[T]> = (position..e.len()).rev().map(|i| e.row(i)).collect();
    let forward = params.forward.run(&left);
    let backward = params.backward.run(&right);
    let h_a = [
        forward.hidden.last().expect("nonempty").as_slice(),
        backward.hidden.last().expect("nonempty").as_slice(),
    ]
    .concat();
    Ok((
        h_a,
        PositionTrace {
            position,
            len: e.len(),
            forward,
            backward,
        },
    ))
}

/// Backward pass for [`bilstm_at`]. Returns `dE` (`L × D`).
pub fn bilstm_at_backward<T: Scalar>(
    params: &BiLstmParams<T>,
    trace: &PositionTrace<T>,
    d_h: &[T],
    grads: &mut BiLstmParams<T>,
) -> Matrix<T> {
    let h = params.hidden();
    let (d_fwd, d_bwd) = d_h.split_at(h);
    let upstream = |steps: usize, last: &[T]| {
        let mut d = vec![vec![T::zero(); h]; steps];
        d[steps - 1].copy_from_slice(last);
        d
    };
    let n_left = trace.position + 1;
    let n_right = trace.len - trace.position;
    let dx_left =
        params
            .forward
            .backward(&trace.forward, &upstream(n_left, d_fwd), &mut grads.forward);
    let dx_right = params.backward.backward(
        &trace.backward,
        &upstream(n_right, d_bwd),
        &mut grads.backward,
    );
    let mut d_e = Matrix::zeros(trace.len, params.input_dim());
    for (t, dx) in dx_left.iter().enumerate() {
        d_e.row_mut(t).copy_from_slice(dx);
    }
    // right trace step s corresponds to position L-1-s
    for (s, dx) in dx_right.iter().enumerate() {
        for (o, &v) in d_e.row_mut(trace.len - 1 - s).iter_mut().zip(dx) {
            *o += v;
        }
    }
    d_e
}
