use crate::error::{Error, Result};
use crate::nn::{Gradients, ParamStore};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central differences of `loss` for every scalar
/// in `store`.
pub fn finite_difference_check<F>(
    store: &ParamStore,
    analytic: &Gradients,
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut per_param = Vec::with_capacity(names.len());
    let mut max_rel_error: f64 = 0.0;
    let mut coords_checked = 0;
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?
            .to_vec();
        let n = store.get(&name)?.numel();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = probe.get(&name)?.values()[i];
            probe.get_mut(&name)?.values_mut()[i] = orig + h;
            let plus = loss(&probe)?;
            probe.get_mut(&name)?.values_mut()[i] = orig - h;
            let minus = loss(&probe)?;
            probe.get_mut(&name)?.values_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing {name}[{i}]: {plus} / {minus}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grad[i], numeric));
            coords_checked += 1;
        }
        max_rel_error = max_rel_error.max(worst);
        per_param.push((name, worst));
    }
    Ok(GradCheckReport {
        max_rel_error,
        per_param,
        coords_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5, -0.5])).unwrap();
        let f = |s: &ParamStore| -> Result<f64> {
            let w = s.get("w")?.values();
            Ok(w[0] * w[0] + 3.0 * w[1])
        };
        let mut good = Gradients::new();
        good.add("w", &[3.0, 3.0]);
        let r = finite_difference_check(&store, &good, 1e-5, f).unwrap();
        assert!(r.passes(1e-8), "{r:?}");
        assert_eq!(r.coords_checked, 2);

        let mut bad = Gradients::new();
        bad.add("w", &[3.0, 2.0]);
        let r = finite_difference_check(&store, &bad, 1e-5, f).unwrap();
        assert!(!r.passes(1e-5));
    }

    #[test]
    fn non_finite_loss_is_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.0])).unwrap();
        let mut g = Gradients::new();
        g.add("w", &[0.0]);
        let r = finite_difference_check(&store, &g, 1e-5, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
