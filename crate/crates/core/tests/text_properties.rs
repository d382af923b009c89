use std::collections::HashMap;

use proptest::prelude::*;

use notefusion::data::{bucketize_los, ClinicalNote, EmbeddingTable, Task};
use notefusion::model::{ModelConfig, Variant};
use notefusion::nn::{ConvBank, Tensor};
use notefusion::text::{
    aggregate_note_features, avg_word_embedding, DecayConfig, concat_notes, decay_coefficients, decay_weight,
    extract_note_feature, pad_tokens, NoteFeature,
};

fn features(times: &[usize], dim: usize) -> Vec<NoteFeature> {
    times
        .iter()
        .enumerate()
        .map(|(i, &ct)| NoteFeature {
            chart_time: ct,
            vector: Tensor::vector((0..dim).map(|k| (i * dim + k) as f64 * 0.25 - 1.0).collect()),
        })
        .collect()
}

proptest! {
    #[test]
    fn coefficients_are_causal_and_decay(
        mut times in prop::collection::vec(1usize..100, 0..10),
        t in 1usize..120,
        lambda in 0.0f64..3.0,
    ) {
        times.sort_unstable();
        let coeffs = decay_coefficients(&times, t, lambda);
        let m = times.iter().filter(|&&ct| ct <= t).count();
        prop_assert_eq!(coeffs.len(), m);
        for &(i, c) in &coeffs {
            prop_assert!(times[i] <= t);
            let expected = (-lambda * (t - times[i]) as f64).exp() / m as f64;
            prop_assert!((c - expected).abs() <= 1e-15);
            prop_assert!(c > 0.0 && c <= 1.0 / m as f64);
        }
        // Older notes never outweigh newer ones.
        for w in coeffs.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn zero_lambda_is_the_plain_mean(
        mut times in prop::collection::vec(1usize..50, 1..8),
        dim in 1usize..5,
    ) {
        times.sort_unstable();
        let feats = features(&times, dim);
        let t = *times.last().unwrap();
        let z = aggregate_note_features(&feats, t, 0.0, dim);
        for k in 0..dim {
            let mean: f64 = feats.iter().map(|f| f.vector.values()[k] / feats.len() as f64).sum();
            prop_assert!((z.values()[k] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn weight_is_one_at_zero_gap(t in 0usize..10_000, lambda in 0.0f64..100.0) {
        prop_assert_eq!(decay_weight(t, t, lambda).unwrap(), 1.0);
    }

    #[test]
    fn buckets_are_monotone(a in 0.0f64..2000.0, b in 0.0f64..2000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucketize_los(lo).unwrap() <= bucketize_los(hi).unwrap());
    }
}

#[test]
fn huge_lambda_keeps_only_the_latest_notes() {
    let feats = features(&[2, 5, 9, 9], 3);
    let z = aggregate_note_features(&feats, 9, 1e6, 3);
    // Both hour-9 notes survive with weight 1/4 each.
    for k in 0..3 {
        let want = (feats[2].vector.values()[k] + feats[3].vector.values()[k]) / 4.0;
        assert_eq!(z.values()[k], want);
    }
}

#[test]
fn decay_rejects_future_notes_and_negative_lambda() {
    assert!(decay_weight(3, 4, 0.1).is_err());
    assert!(DecayConfig::new(-0.1).is_err());
    assert!(DecayConfig::new(f64::NAN).is_err());
    assert!((decay_weight(10, 4, 0.5).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
}

#[test]
fn no_visible_notes_gives_zeros() {
    let feats = features(&[20, 30], 4);
    assert_eq!(aggregate_note_features(&feats, 19, 0.01, 4).values(), &[0.0; 4]);
    assert_eq!(aggregate_note_features(&[], 5, 0.01, 2).values(), &[0.0; 2]);
}

#[test]
fn every_bucket_is_reachable() {
    let mut seen = [false; 10];
    for h in 0..800 {
        seen[bucketize_los(h as f64).unwrap()] = true;
    }
    assert!(seen.iter().all(|&s| s));
    assert!(bucketize_los(-1.0).is_err());
    assert!(bucketize_los(f64::NAN).is_err());
}

#[test]
fn text_feature_widths() {
    let ihm = ModelConfig::for_task(Task::Ihm, Variant::MultimodalCnn, 17, 200);
    assert_eq!(ihm.text_dim(), 768);
    let decomp = ModelConfig::for_task(Task::Decomp, Variant::TextOnly, 17, 200);
    assert_eq!(decomp.text_dim(), 384);
    let avg = ModelConfig::for_task(Task::Los, Variant::MultimodalAvgwe, 17, 200);
    assert_eq!(avg.text_dim(), 200);
    assert_eq!(ModelConfig::for_task(Task::Los, Variant::Baseline, 17, 200).text_dim(), 0);
}

fn table() -> EmbeddingTable {
    let vocab: HashMap<String, usize> = [("a", 1), ("b", 2)].iter().map(|(w, i)| (w.to_string(), *i)).collect();
    let vectors = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, -1.0, 0.5, 2.0]).unwrap();
    EmbeddingTable::new(vocab, vectors).unwrap()
}

fn bank_params() -> (Vec<Tensor>, Vec<Tensor>) {
    let k2 = Tensor::matrix(2, 4, vec![1.0, 0.5, -1.0, 0.2, -0.3, 0.1, 0.7, -0.9]).unwrap();
    let k3 = Tensor::matrix(1, 6, vec![0.4, -0.2, 0.3, 0.3, -0.5, 1.0]).unwrap();
    (vec![k2, k3], vec![Tensor::vector(vec![0.25, -0.5]), Tensor::vector(vec![0.75])])
}

#[test]
fn all_oov_note_gives_relu_of_bias() {
    let table = table();
    let (kernels, biases) = bank_params();
    let bank = ConvBank {
        widths: vec![2, 3],
        kernels: kernels.iter().collect(),
        biases: biases.iter().collect(),
    };
    let note = ClinicalNote {
        chart_time: 1,
        token_ids: vec![0, 0, 0, 0, 0],
    };
    let (f, _, _) = extract_note_feature(&note, &table, &bank).unwrap();
    assert_eq!(f.vector.values(), &[0.25, 0.0, 0.75]);
}

#[test]
fn identical_notes_give_identical_features() {
    let table = table();
    let (kernels, biases) = bank_params();
    let bank = ConvBank {
        widths: vec![2, 3],
        kernels: kernels.iter().collect(),
        biases: biases.iter().collect(),
    };
    let a = ClinicalNote {
        chart_time: 2,
        token_ids: vec![1, 2, 2, 1, 0, 2],
    };
    let b = ClinicalNote { chart_time: 30, ..a.clone() };
    let fa = extract_note_feature(&a, &table, &bank).unwrap().0;
    let fb = extract_note_feature(&b, &table, &bank).unwrap().0;
    assert_eq!(fa.vector, fb.vector);
    assert_eq!((fa.chart_time, fb.chart_time), (2, 30));
}

#[test]
fn short_notes_are_padded_to_the_widest_filter() {
    assert_eq!(pad_tokens(&[2], 3), vec![2, 0, 0]);
    assert_eq!(pad_tokens(&[1, 2, 1, 2], 3), vec![1, 2, 1, 2]);
}

#[test]
fn average_embedding_counts_oov_in_denominator() {
    let table = table();
    let v = avg_word_embedding(&[1, 2, 0, 0], &table);
    assert_eq!(v.values(), &[1.5 / 4.0, 1.0 / 4.0]);
    assert_eq!(avg_word_embedding(&[], &table).values(), &[0.0, 0.0]);
}

#[test]
fn concatenation_keeps_token_order() {
    let notes = vec![
        ClinicalNote {
            chart_time: 1,
            token_ids: vec![1, 2],
        },
        ClinicalNote {
            chart_time: 7,
            token_ids: vec![2],
        },
    ];
    let doc = concat_notes(&notes).unwrap();
    assert_eq!(doc.token_ids, vec![1, 2, 2]);
    assert_eq!(doc.chart_time, 7);
}
