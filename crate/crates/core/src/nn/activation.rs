use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Vec<f64>);

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(rate)?;
        let keep = 1.0 / (1.0 - rate);
        Ok(Self(
            (0..len)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        ))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.0).map(|(a, m)| a * m).collect()
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        x.iter_mut().zip(&self.0).for_each(|(a, m)| *a *= m);
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout. At inference, or with `rate == 0`, returns the input
/// unchanged and no mask.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<DropoutMask>)> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let mask = DropoutMask::sample(input.numel(), rate, rng)?;
    let out = Tensor::new(input.shape().to_vec(), mask.apply(input.values()))?;
    Ok((out, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for x in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn softmax_normalized() {
        let p = softmax(&[1000.0, 1001.0, -3.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let (y, m) = dropout(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, m) = dropout(&x, 0.7, false, &mut rng).unwrap();
        assert_eq!(y.values(), x.values());
        assert!(m.is_none());
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::vector(vec![1.0; 1_000_000]);
        let (y, _) = dropout(&x, 0.2, true, &mut rng).unwrap();
        let n = y.numel() as f64;
        let mean = y.values().iter().sum::<f64>() / n;
        let zeros = y.values().iter().filter(|&&v| v == 0.0).count() as f64 / n;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((zeros - 0.2).abs() < 0.01, "zero fraction {zeros}");
    }
}
