//! Vanilla LSTM cell (no peepholes) with backpropagation through time.
//!
//! Gate pre-activations are stacked as `[input; forget; candidate; output]`,
//! each block `H` rows tall, so `w_ih` is `4H × D`, `w_hh` is `4H × H` and
//! `bias` has length `4H`.

use crate::error::{Error, Result};
use crate::nn::activation::sigmoid;
use crate::nn::tensor::{add_matvec, add_outer, add_transposed_matvec};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub bias: &'a Tensor,
}

impl<'a> LstmParams<'a> {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.cols()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.w_hh.shape() != [4 * h, h] {
            return Err(Error::Dimension {
                op: "lstm(w_hh)",
                left: self.w_hh.shape().to_vec(),
                right: vec![4 * h, h],
            });
        }
        if self.w_ih.rows() != 4 * h || self.w_ih.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "lstm(w_ih)",
                left: self.w_ih.shape().to_vec(),
                right: vec![4 * h, self.input_size()],
            });
        }
        if self.bias.numel() != 4 * h {
            return Err(Error::Dimension {
                op: "lstm(bias)",
                left: self.bias.shape().to_vec(),
                right: vec![4 * h],
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[hidden_size]),
            cell: Tensor::zeros(&[hidden_size]),
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i; f; g; o]`.
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
}

impl LstmStepCache {
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn cell(&self) -> &[f64] {
        &self.cell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmGrads {
    pub fn zeros(params: &LstmParams<'_>) -> Self {
        Self {
            w_ih: vec![0.0; params.w_ih.numel()],
            w_hh: vec![0.0; params.w_hh.numel()],
            bias: vec![0.0; params.bias.numel()],
        }
    }
}

/// One LSTM step: `(x_t, h_{t-1}, c_{t-1}) -> (h_t, c_t)`.
pub fn lstm_cell_step(x: &Tensor, prev: &LstmState, params: &LstmParams<'_>) -> Result<LstmState> {
    params.validate()?;
    let h = params.hidden_size();
    if x.numel() != params.input_size() {
        return Err(Error::Dimension {
            op: "lstm(input)",
            left: params.w_ih.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if prev.hidden.numel() != h || prev.cell.numel() != h {
        return Err(Error::Dimension {
            op: "lstm(state)",
            left: prev.hidden.shape().to_vec(),
            right: vec![h],
        });
    }
    let cache = step_cached(x.values(), prev.hidden.values(), prev.cell.values(), params);
    Ok(LstmState {
        hidden: Tensor::vector(cache.hidden),
        cell: Tensor::vector(cache.cell),
    })
}

pub(crate) fn step_cached(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams<'_>,
) -> LstmStepCache {
    let h = h_prev.len();
    let mut gates = params.bias.values().to_vec();
    add_matvec(&mut gates, params.w_ih.values(), x);
    add_matvec(&mut gates, params.w_hh.values(), h_prev);
    for (k, a) in gates.iter_mut().enumerate() {
        *a = if (2 * h..3 * h).contains(&k) {
            a.tanh()
        } else {
            sigmoid(*a)
        };
    }
    let mut cell = vec![0.0; h];
    let mut tanh_cell = vec![0.0; h];
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
        cell[j] = f * c_prev[j] + i * g;
        tanh_cell[j] = cell[j].tanh();
        hidden[j] = o * tanh_cell[j];
    }
    LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        cell,
        tanh_cell,
        hidden,
    }
}

/// Backward through one step. `dh`/`dc` are the total gradients arriving at
/// this step's outputs; returns `(dh_prev, dc_prev)` and optionally writes the
/// input gradient into `dx`.
pub fn lstm_step_backward(
    cache: &LstmStepCache,
    params: &LstmParams<'_>,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmGrads,
    dx: Option<&mut [f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let h = dh.len();
    let g = &cache.gates;
    let mut da = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for j in 0..h {
        let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
        let tc = cache.tanh_cell[j];
        let d_o = dh[j] * tc;
        let d_cell = dc[j] + dh[j] * o * (1.0 - tc * tc);
        let d_i = d_cell * cand;
        let d_g = d_cell * i;
        let d_f = d_cell * cache.c_prev[j];
        dc_prev[j] = d_cell * f;
        da[j] = d_i * i * (1.0 - i);
        da[h + j] = d_f * f * (1.0 - f);
        da[2 * h + j] = d_g * (1.0 - cand * cand);
        da[3 * h + j] = d_o * o * (1.0 - o);
    }
    add_outer(&mut grads.w_ih, &da, &cache.x);
    add_outer(&mut grads.w_hh, &da, &cache.h_prev);
    for (b, d) in grads.bias.iter_mut().zip(&da) {
        *b += d;
    }
    let mut dh_prev = vec![0.0; h];
    add_transposed_matvec(&mut dh_prev, params.w_hh.values(), &da);
    if let Some(dx) = dx {
        add_transposed_matvec(dx, params.w_ih.values(), &da);
    }
    (dh_prev, dc_prev)
}

/// Runs the cell over every row of `inputs` (shape `T × D`) from a zero state.
pub fn lstm_sequence(inputs: &Tensor, steps: usize, params: &LstmParams<'_>) -> Result<Vec<LstmStepCache>> {
    params.validate()?;
    if inputs.cols() != params.input_size() || steps > inputs.rows() {
        return Err(Error::Dimension {
            op: "lstm_sequence",
            left: inputs.shape().to_vec(),
            right: vec![steps, params.input_size()],
        });
    }
    let h = params.hidden_size();
    let mut caches: Vec<LstmStepCache> = Vec::with_capacity(steps);
    let zeros = vec![0.0; h];
    for t in 0..steps {
        let (hp, cp) = match caches.last() {
            Some(c) => (c.hidden.as_slice(), c.cell.as_slice()),
            None => (zeros.as_slice(), zeros.as_slice()),
        };
        let next = step_cached(inputs.row(t), hp, cp, params);
        caches.push(next);
    }
    Ok(caches)
}

/// Backpropagation through time. `dh_steps[t]` is the external gradient on
/// `h_t` (e.g. from a prediction head); empty slices mean no contribution.
pub fn lstm_sequence_backward(
    caches: &[LstmStepCache],
    params: &LstmParams<'_>,
    dh_steps: &[Vec<f64>],
    grads: &mut LstmGrads,
) {
    let h = params.hidden_size();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..caches.len()).rev() {
        if let Some(ext) = dh_steps.get(t).filter(|v| !v.is_empty()) {
            for (a, b) in dh_next.iter_mut().zip(ext) {
                *a += b;
            }
        }
        if dh_next.iter().all(|&v| v == 0.0) && dc_next.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (dh_prev, dc_prev) = lstm_step_backward(&caches[t], params, &dh_next, &dc_next, grads, None);
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
}
