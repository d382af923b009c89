use crate::error::{Error, Result};
use crate::nn::tensor::{add_matvec, add_outer, add_transposed_matvec};
use crate::nn::Tensor;

fn check_shapes(input_len: usize, weight: &Tensor, bias: &Tensor) -> Result<()> {
    if weight.shape().len() != 2 || weight.cols() != input_len {
        return Err(Error::Dimension {
            op: "dense(weight, input)",
            left: weight.shape().to_vec(),
            right: vec![input_len],
        });
    }
    if bias.numel() != weight.rows() {
        return Err(Error::Dimension {
            op: "dense(weight, bias)",
            left: weight.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    Ok(())
}

/// Affine map `W x + b`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    Ok(Tensor::vector(dense_slice(input.values(), weight, bias)?))
}

pub(crate) fn dense_slice(input: &[f64], weight: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    check_shapes(input.len(), weight, bias)?;
    let mut out = bias.values().to_vec();
    add_matvec(&mut out, weight.values(), input);
    Ok(out)
}

/// Gradient accumulators for one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros(weight: &Tensor) -> Self {
        Self {
            weight: vec![0.0; weight.numel()],
            bias: vec![0.0; weight.rows()],
        }
    }
}

/// Accumulates weight/bias gradients into `grads` and adds the input gradient
/// into `grad_input`.
pub fn dense_backward(
    input: &[f64],
    weight: &Tensor,
    grad_out: &[f64],
    grads: &mut DenseGrads,
    grad_input: Option<&mut [f64]>,
) {
    add_outer(&mut grads.weight, grad_out, input);
    for (b, g) in grads.bias.iter_mut().zip(grad_out) {
        *b += g;
    }
    if let Some(gi) = grad_input {
        add_transposed_matvec(gi, weight.values(), grad_out);
    }
}
