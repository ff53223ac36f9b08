use crate::embedding::MixingParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::ffn::{Dense, FfnParams};
use super::lstm::{BiLstmParams, LstmCell};

/// Every trainable parameter of one classifier. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub mixing: Option<MixingParams<T>>,
    pub table: Option<Matrix<T>>,
    pub encoder: Option<BiLstmParams<T>>,
    pub head: FfnParams<T>,
}

/// Named view of one parameter block.
#[derive(Debug)]
pub struct ParamBlock<'a, T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [T],
}

fn cell_zeros<T: Scalar>(c: &LstmCell<T>) -> LstmCell<T> {
    LstmCell::zeros(c.input_dim(), c.hidden())
}

fn dense_blocks<'a, T: Scalar>(prefix: &str, d: &'a Dense<T>, out: &mut Vec<ParamBlock<'a, T>>) {
    out.push(ParamBlock {
        name: format!("{prefix}.weight"),
        rows: d.weight.rows(),
        cols: d.weight.cols(),
        values: d.weight.as_slice(),
    });
    out.push(ParamBlock {
        name: format!("{prefix}.bias"),
        rows: 1,
        cols: d.bias.len(),
        values: &d.bias,
    });
}

fn cell_blocks<'a, T: Scalar>(prefix: &str, c: &'a LstmCell<T>, out: &mut Vec<ParamBlock<'a, T>>) {
    for (name, m) in [("w_x", &c.w_x), ("w_h", &c.w_h)] {
        out.push(ParamBlock {
            name: format!("{prefix}.{name}"),
            rows: m.rows(),
            cols: m.cols(),
            values: m.as_slice(),
        });
    }
    out.push(ParamBlock {
        name: format!("{prefix}.bias"),
        rows: 1,
        cols: c.bias.len(),
        values: &c.bias,
    });
}

impl<T: Scalar> Weights<T> {
    pub fn zeros_like(&self) -> Self {
        Weights {
            mixing: self.mixing.map(|_| MixingParams {
                raw: [T::zero(); 3],
                gamma: T::zero(),
            }),
            table: self
                .table
                .as_ref()
                .map(|t| Matrix::zeros(t.rows(), t.cols())),
            encoder: self.encoder.as_ref().map(|e| BiLstmParams {
                forward: cell_zeros(&e.forward),
                backward: cell_zeros(&e.backward),
            }),
            head: FfnParams::zeros(
                self.head.input_dim(),
                &self.head.widths(),
                self.head.classes(),
            ),
        }
    }

    /// Blocks in a fixed order; this order is also the on-disk order.
    pub fn blocks(&self) -> Vec<ParamBlock<'_, T>> {
        let mut out = Vec::new();
        if let Some(m) = &self.mixing {
            out.push(ParamBlock {
                name: "mix.raw".into(),
                rows: 1,
                cols: 3,
                values: &m.raw,
            });
            out.push(ParamBlock {
                name: "mix.gamma".into(),
                rows: 1,
                cols: 1,
                values: std::slice::from_ref(&m.gamma),
            });
        }
        if let Some(t) = &self.table {
            out.push(ParamBlock {
                name: "embed.table".into(),
                rows: t.rows(),
                cols: t.cols(),
                values: t.as_slice(),
            });
        }
        if let Some(e) = &self.encoder {
            cell_blocks("lstm.fwd", &e.forward, &mut out);
            cell_blocks("lstm.bwd", &e.backward, &mut out);
        }
        for (i, d) in self.head.hidden.iter().enumerate() {
            dense_blocks(&format!("ffn.hidden{i}"), d, &mut out);
        }
        dense_blocks("ffn.output", &self.head.output, &mut out);
        out
    }

    /// Mutable slices in the same order as [`Weights::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let Weights {
            mixing,
            table,
            encoder,
            head,
        } = self;
        let mut out: Vec<&mut [T]> = Vec::new();
        if let Some(m) = mixing {
            out.push(&mut m.raw);
            out.push(std::slice::from_mut(&mut m.gamma));
        }
        if let Some(t) = table {
            out.push(t.as_mut_slice());
        }
        if let Some(e) = encoder {
            for c in [&mut e.forward, &mut e.backward] {
                let LstmCell { w_x, w_h, bias } = c;
                out.push(w_x.as_mut_slice());
                out.push(w_h.as_mut_slice());
                out.push(bias);
            }
        }
        let FfnParams { hidden, output } = head;
        for d in hidden.iter_mut().chain(std::iter::once(output)) {
            let Dense { weight, bias } = d;
            out.push(weight.as_mut_slice());
            out.push(bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn global_norm(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Elementwise `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Weights<T>) -> Result<()> {
        let src = other.blocks();
        let dst = self.blocks_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("parameter block count differs".into()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            if d.len() != s.values.len() {
                return Err(Error::Shape(format!("block {} differs in size", s.name)));
            }
            d.iter_mut().zip(s.values).for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Weights<T>, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm > max_norm && norm > T::zero() {
        grads.scale(max_norm / norm);
    }
    norm
}
