//! Multi-width 1D convolution over a token embedding matrix followed by ReLU
//! and max-pooling over time.

use crate::error::{Error, Result};
use crate::nn::tensor::dot;
use crate::nn::Tensor;

/// Kernels for one width are stored as `filters × (width · E)`: a filter row
/// is applied to a contiguous window of `width` embedding rows.
#[derive(Debug, Clone)]
pub struct ConvBank<'a> {
    pub widths: Vec<usize>,
    pub kernels: Vec<&'a Tensor>,
    pub biases: Vec<&'a Tensor>,
}

impl<'a> ConvBank<'a> {
    pub fn output_dim(&self) -> usize {
        self.kernels.iter().map(|k| k.rows()).sum()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.widths.len() != self.kernels.len() || self.widths.len() != self.biases.len() {
            return Err(Error::Internal("conv bank widths/kernels/biases disagree".into()));
        }
        for ((&w, k), b) in self.widths.iter().zip(&self.kernels).zip(&self.biases) {
            if k.shape().len() != 2 || k.cols() != w * embed_dim {
                return Err(Error::Dimension {
                    op: "conv1d(kernel, embeddings)",
                    left: k.shape().to_vec(),
                    right: vec![w, embed_dim],
                });
            }
            if b.numel() != k.rows() {
                return Err(Error::Dimension {
                    op: "conv1d(kernel, bias)",
                    left: k.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Winning window per output component, `None` when the ReLU clipped it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvCache {
    argmax: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ConvGrads {
    pub fn zeros(bank: &ConvBank<'_>) -> Self {
        Self {
            kernels: bank.kernels.iter().map(|k| vec![0.0; k.numel()]).collect(),
            biases: bank.biases.iter().map(|b| vec![0.0; b.numel()]).collect(),
        }
    }
}

/// `embeds` is `n × E`. Output has one component per filter, grouped by width
/// in bank order. Ties in the max are resolved to the earliest window.
pub fn conv1d_maxpool(embeds: &Tensor, bank: &ConvBank<'_>) -> Result<(Tensor, ConvCache)> {
    let e = embeds.cols();
    bank.validate(e)?;
    let n = embeds.rows();
    if n < bank.max_width() {
        return Err(Error::Internal(format!(
            "note of {n} tokens is shorter than conv width {}; padding should prevent this",
            bank.max_width()
        )));
    }
    let x = embeds.values();
    let mut out = Vec::with_capacity(bank.output_dim());
    let mut argmax = Vec::with_capacity(bank.output_dim());
    for ((&w, kernel), bias) in bank.widths.iter().zip(&bank.kernels).zip(&bank.biases) {
        let span = w * e;
        for f in 0..kernel.rows() {
            let row = kernel.row(f);
            let b = bias.values()[f];
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..=(n - w) {
                let a = dot(row, &x[j * e..j * e + span]) + b;
                if a > best {
                    best = a;
                    best_j = j;
                }
            }
            if best > 0.0 {
                out.push(best);
                argmax.push(Some(best_j));
            } else {
                out.push(0.0);
                argmax.push(None);
            }
        }
    }
    Ok((Tensor::vector(out), ConvCache { argmax }))
}

/// Routes `grad_out` to the kernel and bias of each winning window only.
pub fn conv1d_maxpool_backward(
    embeds: &Tensor,
    bank: &ConvBank<'_>,
    cache: &ConvCache,
    grad_out: &[f64],
    grads: &mut ConvGrads,
    mut grad_embeds: Option<&mut [f64]>,
) {
    let e = embeds.cols();
    let x = embeds.values();
    let mut k = 0;
    for (wi, (&w, kernel)) in bank.widths.iter().zip(&bank.kernels).enumerate() {
        let span = w * e;
        for f in 0..kernel.rows() {
            let g = grad_out[k];
            if let (Some(j), true) = (cache.argmax[k], g != 0.0) {
                let window = &x[j * e..j * e + span];
                let gk = &mut grads.kernels[wi][f * span..(f + 1) * span];
                for (a, &v) in gk.iter_mut().zip(window) {
                    *a += g * v;
                }
                grads.biases[wi][f] += g;
                if let Some(ge) = grad_embeds.as_deref_mut() {
                    for (a, &kv) in ge[j * e..j * e + span].iter_mut().zip(kernel.row(f)) {
                        *a += g * kv;
                    }
                }
            }
            k += 1;
        }
    }
}
