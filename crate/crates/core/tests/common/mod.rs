//! Helpers shared by the integration tests: brute-force metric oracles and
//! small fixtures.

#![allow(dead_code)]

use std::path::Path;

use notefusion::data::{ClinicalNote, Episode, EpisodeLabels};
use notefusion::ingest::{generate_synthetic, Dataset, SignalPlan, SyntheticConfig};
use notefusion::nn::Tensor;
use notefusion::train::ModelOverrides;

/// Fraction of (positive, negative) pairs ordered correctly, ties counted
/// half.
pub fn oracle_auroc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut good = 0.0;
    let mut total = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                total += 1.0;
                good += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    good / total
}

/// Step-wise area under the precision-recall curve: each distinct score is a
/// threshold, precision weighted by the recall it adds.
pub fn oracle_aucpr(labels: &[u8], scores: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    cuts.dedup();
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for cut in cuts {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= cut).collect();
        let tp = predicted.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let recall = tp / positives;
        let precision = tp / predicted.len() as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
    }
    area
}

/// `1 - Σ w O / Σ w E` from an explicitly built confusion matrix.
pub fn oracle_kappa(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let n = truth.len() as f64;
    let mut o = vec![vec![0.0; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        o[t][p] += 1.0;
    }
    let rows: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..classes).map(|j| o.iter().map(|r| r[j]).sum()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..classes {
        for j in 0..classes {
            let w = (i as f64 - j as f64).abs() / (classes as f64 - 1.0);
            num += w * o[i][j];
            den += w * rows[i] * cols[j] / n;
        }
    }
    1.0 - num / den
}

/// Model size used for experiments on synthetic data.
pub fn desk_overrides() -> ModelOverrides {
    ModelOverrides {
        lstm_hidden: Some(16),
        filters_per_width: Some(16),
        ..ModelOverrides::default()
    }
}

pub fn synthetic_dataset(dir: &Path, patients: usize, plan: SignalPlan, seed: u64) -> Dataset {
    let cfg = SyntheticConfig {
        patients,
        signal_plan: plan,
        seed,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, dir).expect("synthetic data");
    Dataset::load(dir, 2000).expect("load synthetic data")
}

/// Hand-built episode; `series` is row-major `hours × dim`.
pub fn episode(
    hours: usize,
    dim: usize,
    series: Vec<f64>,
    notes: &[(usize, Vec<usize>)],
    mortality: Option<u8>,
    death_hour: Option<usize>,
) -> Episode {
    Episode {
        patient_id: "fixture".into(),
        timeseries: Tensor::matrix(hours, dim, series).unwrap(),
        notes: notes
            .iter()
            .map(|(ct, ids)| ClinicalNote {
                chart_time: *ct,
                token_ids: ids.clone(),
            })
            .collect(),
        labels: EpisodeLabels::derive(mortality, death_hour, hours).unwrap(),
    }
}
