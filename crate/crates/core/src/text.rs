//! Fixed-size features from clinical notes and their alignment to hourly
//! predictions.

use crate::data::{ClinicalNote, EmbeddingTable, PAD_INDEX};
use crate::error::{Error, Result};
use crate::nn::{conv1d_maxpool, ConvBank, ConvCache, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NoteFeature {
    pub chart_time: usize,
    pub vector: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig {
    lambda: f64,
}

impl DecayConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Validation(format!(
                "decay lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Right-pads with the zero-embedding index up to `min_len` tokens.
pub fn pad_tokens(ids: &[usize], min_len: usize) -> Vec<usize> {
    let mut out = ids.to_vec();
    if out.len() < min_len {
        out.resize(min_len, PAD_INDEX);
    }
    out
}

/// Joins notes in chart-time order into one stay-level document.
pub fn concat_notes(notes: &[ClinicalNote]) -> Result<ClinicalNote> {
    if notes.is_empty() {
        return Err(Error::Validation("cannot concatenate an empty note list".into()));
    }
    let mut order: Vec<&ClinicalNote> = notes.iter().collect();
    order.sort_by_key(|n| n.chart_time);
    let chart_time = order.last().map(|n| n.chart_time).unwrap_or(1);
    let token_ids = order.iter().flat_map(|n| n.token_ids.iter().copied()).collect();
    Ok(ClinicalNote {
        chart_time,
        token_ids,
    })
}

/// `exp(-λ (t - ct))`. Notes from the future are rejected.
pub fn decay_weight(t: usize, ct: usize, lambda: f64) -> Result<f64> {
    if ct > t {
        return Err(Error::Validation(format!(
            "note charted at hour {ct} is not visible at hour {t}"
        )));
    }
    Ok((-lambda * (t - ct) as f64).exp())
}

/// Per-note coefficients `w(t, i) / M` over the notes visible at `t`
/// (`chart_time <= t`), returned as `(note index, coefficient)`.
///
/// The divisor is the number of visible notes, not the sum of weights, so a
/// lone stale note is attenuated rather than renormalized.
pub fn decay_coefficients(chart_times: &[usize], t: usize, lambda: f64) -> Vec<(usize, f64)> {
    let visible: Vec<usize> = (0..chart_times.len())
        .filter(|&i| chart_times[i] <= t)
        .collect();
    let m = visible.len() as f64;
    visible
        .into_iter()
        .map(|i| (i, (-lambda * (t - chart_times[i]) as f64).exp() / m))
        .collect()
}

/// Decayed mean of the features charted at or before `t`; the zero vector
/// of length `dim` when none are visible.
pub fn aggregate_note_features(features: &[NoteFeature], t: usize, lambda: f64, dim: usize) -> Tensor {
    let times: Vec<usize> = features.iter().map(|f| f.chart_time).collect();
    let mut out = vec![0.0; dim];
    for (i, c) in decay_coefficients(&times, t, lambda) {
        for (o, v) in out.iter_mut().zip(features[i].vector.values()) {
            *o += c * v;
        }
    }
    Tensor::vector(out)
}

/// Embeds a (padded) note and runs the convolutional extractor over it.
pub fn extract_note_feature(
    note: &ClinicalNote,
    table: &EmbeddingTable,
    bank: &ConvBank<'_>,
) -> Result<(NoteFeature, Tensor, ConvCache)> {
    let ids = pad_tokens(&note.token_ids, bank.max_width());
    let embeds = table.embed(&ids);
    let (vector, cache) = conv1d_maxpool(&embeds, bank)?;
    Ok((
        NoteFeature {
            chart_time: note.chart_time,
            vector,
        },
        embeds,
        cache,
    ))
}

/// Mean token embedding. OOV tokens count toward the denominator with a zero
/// vector; an empty sequence yields the zero vector.
pub fn avg_word_embedding(ids: &[usize], table: &EmbeddingTable) -> Tensor {
    let e = table.dim();
    let mut out = vec![0.0; e];
    if ids.is_empty() {
        return Tensor::vector(out);
    }
    for &id in ids {
        let id = if id < table.len() { id } else { PAD_INDEX };
        for (o, v) in out.iter_mut().zip(table.vectors().row(id)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Tensor::vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn feature(ct: usize, v: Vec<f64>) -> NoteFeature {
        NoteFeature {
            chart_time: ct,
            vector: Tensor::vector(v),
        }
    }

    fn note(ct: usize, ids: Vec<usize>) -> ClinicalNote {
        ClinicalNote {
            chart_time: ct,
            token_ids: ids,
        }
    }

    #[test]
    fn decay_reference_values() {
        assert_eq!(decay_weight(7, 7, 0.3).unwrap(), 1.0);
        assert_eq!(decay_weight(500, 2, 0.0).unwrap(), 1.0);
        assert!((decay_weight(110, 10, 0.01).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(decay_weight(3, 4, 0.01).is_err());
    }

    #[test]
    fn aggregate_two_identical_fresh_notes() {
        let f = vec![feature(4, vec![0.5, -2.0]), feature(4, vec![0.5, -2.0])];
        assert_eq!(aggregate_note_features(&f, 4, 0.01, 2).values(), &[0.5, -2.0]);
    }

    #[test]
    fn aggregate_without_visible_notes_is_zero() {
        let f = vec![feature(9, vec![1.0, 1.0, 1.0])];
        assert_eq!(aggregate_note_features(&f, 8, 0.01, 3).values(), &[0.0; 3]);
        assert_eq!(aggregate_note_features(&[], 8, 0.01, 3).values(), &[0.0; 3]);
    }

    #[test]
    fn aggregate_mixed_gaps() {
        let f = vec![feature(1, vec![1.0, 0.0]), feature(101, vec![0.0, 1.0])];
        let z = aggregate_note_features(&f, 101, 0.01, 2);
        let expected_first = (-1f64).exp() / 2.0;
        assert!((z.values()[0] - expected_first).abs() < 1e-15);
        assert!((z.values()[0] - 0.18394).abs() < 1e-5);
        assert_eq!(z.values()[1], 0.5);
    }

    #[test]
    fn concat_orders_by_chart_time() {
        assert_eq!(concat_notes(&[note(3, vec![4, 5])]).unwrap().token_ids, vec![4, 5]);
        let joined = concat_notes(&[note(1, vec![1, 2]), note(2, vec![3])]).unwrap();
        assert_eq!(joined.token_ids, vec![1, 2, 3]);
        let joined = concat_notes(&[note(5, vec![9]), note(2, vec![7, 8])]).unwrap();
        assert_eq!(joined.token_ids, vec![7, 8, 9]);
        assert!(concat_notes(&[]).is_err());
    }

    #[test]
    fn average_embedding() {
        let vocab = HashMap::from([("u".to_string(), 1), ("v".to_string(), 2)]);
        let vectors = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 3.0, 5.0, -1.0]).unwrap();
        let table = EmbeddingTable::new(vocab, vectors).unwrap();
        assert_eq!(avg_word_embedding(&[1], &table).values(), &[1.0, 3.0]);
        assert_eq!(avg_word_embedding(&[1, 2], &table).values(), &[3.0, 1.0]);
        assert_eq!(avg_word_embedding(&[0, 0], &table).values(), &[0.0, 0.0]);
        assert_eq!(avg_word_embedding(&[], &table).values(), &[0.0, 0.0]);
        // OOV is counted in the denominator
        assert_eq!(avg_word_embedding(&[1, 0], &table).values(), &[0.5, 1.5]);
    }

    #[test]
    fn padding() {
        assert_eq!(pad_tokens(&[], 3), vec![0, 0, 0]);
        assert_eq!(pad_tokens(&[5, 6, 7, 8], 3), vec![5, 6, 7, 8]);
    }
}
