use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross entropy of a sigmoid output.
///
/// The gradient with respect to the pre-sigmoid logit is `prob - label`.
pub fn binary_ce(prob: f64, label: u8) -> Result<f64> {
    if label > 1 {
        return Err(Error::Validation(format!("binary label must be 0 or 1, got {label}")));
    }
    let p = clamp_prob(prob);
    Ok(if label == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// Categorical cross entropy of a softmax output.
///
/// The gradient with respect to the logits is `probs - onehot(label)`.
pub fn multiclass_ce(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Validation(format!(
            "class label {label} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-clamp_prob(probs[label]).ln())
}

pub(crate) fn binary_ce_logit_grad(prob: f64, label: u8) -> f64 {
    prob - f64::from(label)
}

pub(crate) fn multiclass_ce_logit_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}
