//! Built-in verification: finite-difference gradient checks for every layer
//! and model variant, and brute-force oracles for the ranking and agreement
//! metrics.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ClinicalNote, EmbeddingTable, Episode, EpisodeLabels, Task};
use crate::error::{Error, Result};
use crate::metrics::{auroc, aucpr, linear_weighted_kappa, ScoredSet};
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::{
    conv1d_maxpool, conv1d_maxpool_backward, dense, dense_backward, finite_difference_check, lstm_sequence,
    lstm_sequence_backward, ConvBank, ConvGrads, DenseGrads, GradCheckReport, Gradients, LstmGrads, LstmParams,
    ParamStore, Tensor,
};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-5;
pub const METRIC_TOLERANCE: f64 = 1e-9;

/// Dimensions used by the model-level checks.
pub const TINY_FEATURES: usize = 3;
pub const TINY_HIDDEN: usize = 4;
pub const TINY_EMBEDDING: usize = 5;
pub const TINY_FILTERS: usize = 2;
pub const TINY_WIDTHS: [usize; 2] = [2, 3];
const TINY_VOCAB: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    /// Worst error observed.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckLine {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub lines: Vec<CheckLine>,
    pub seconds: f64,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * normal(rng)).collect()).expect("shape matches")
}

fn projection(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn project(r: &[f64], v: &[f64]) -> f64 {
    r.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn dense_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[2], 1.0);
    let r = projection(&mut rng, 3);
    let mut store = ParamStore::new();
    store.insert("w", random_tensor(&mut rng, &[3, 2], 1.0))?;
    store.insert("b", random_tensor(&mut rng, &[3], 1.0))?;
    let mut g = DenseGrads::zeros(store.get("w")?);
    dense_backward(x.values(), store.get("w")?, &r, &mut g, None);
    let mut grads = Gradients::new();
    grads.add("w", &g.weight);
    grads.add("b", &g.bias);
    finite_difference_check(&store, &grads, FD_STEP, |s| {
        Ok(project(&r, dense(&x, s.get("w")?, s.get("b")?)?.values()))
    })
}

/// Five chained LSTM steps with a projection of every hidden state as loss.
pub fn lstm_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let (d, h, steps) = (TINY_FEATURES, TINY_HIDDEN, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = random_tensor(&mut rng, &[steps, d], 1.0);
    let r: Vec<Vec<f64>> = (0..steps).map(|_| projection(&mut rng, h)).collect();
    let mut store = ParamStore::new();
    store.insert("w_ih", random_tensor(&mut rng, &[4 * h, d], 0.5))?;
    store.insert("w_hh", random_tensor(&mut rng, &[4 * h, h], 0.5))?;
    store.insert("bias", random_tensor(&mut rng, &[4 * h], 0.5))?;
    let params = |s: &ParamStore| -> Result<(Tensor, Tensor, Tensor)> {
        Ok((s.get("w_ih")?.clone(), s.get("w_hh")?.clone(), s.get("bias")?.clone()))
    };
    let loss = |s: &ParamStore| -> Result<f64> {
        let (a, b, c) = params(s)?;
        let p = LstmParams { w_ih: &a, w_hh: &b, bias: &c };
        let caches = lstm_sequence(&inputs, steps, &p)?;
        Ok(caches.iter().zip(&r).map(|(c, r)| project(r, c.hidden())).sum())
    };
    let (a, b, c) = params(&store)?;
    let p = LstmParams { w_ih: &a, w_hh: &b, bias: &c };
    let caches = lstm_sequence(&inputs, steps, &p)?;
    let mut g = LstmGrads::zeros(&p);
    lstm_sequence_backward(&caches, &p, &r, &mut g);
    let mut grads = Gradients::new();
    grads.add("w_ih", &g.w_ih);
    grads.add("w_hh", &g.w_hh);
    grads.add("bias", &g.bias);
    finite_difference_check(&store, &grads, FD_STEP, loss)
}

/// Convolution + max-pool over random (tie-free) embeddings.
pub fn conv_gradient_check(seed: u64) -> Result<GradCheckReport> {
    let (e, n) = (TINY_EMBEDDING, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeds = random_tensor(&mut rng, &[n, e], 1.0);
    let r = projection(&mut rng, TINY_FILTERS * TINY_WIDTHS.len());
    let mut store = ParamStore::new();
    for w in TINY_WIDTHS {
        store.insert(format!("k{w}"), random_tensor(&mut rng, &[TINY_FILTERS, w * e], 0.5))?;
        // Positive biases keep most outputs away from the ReLU kink.
        let bias = Tensor::vector((0..TINY_FILTERS).map(|_| 0.5 + rng.gen::<f64>()).collect());
        store.insert(format!("b{w}"), bias)?;
    }
    let bank = |s: &ParamStore| -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut k = Vec::new();
        let mut b = Vec::new();
        for w in TINY_WIDTHS {
            k.push(s.get(&format!("k{w}"))?.clone());
            b.push(s.get(&format!("b{w}"))?.clone());
        }
        Ok((k, b))
    };
    let view = |k: &[Tensor], b: &[Tensor]| -> Result<f64> {
        let bank = ConvBank {
            widths: TINY_WIDTHS.to_vec(),
            kernels: k.iter().collect(),
            biases: b.iter().collect(),
        };
        Ok(project(&r, conv1d_maxpool(&embeds, &bank)?.0.values()))
    };
    let (k, b) = bank(&store)?;
    let cb = ConvBank {
        widths: TINY_WIDTHS.to_vec(),
        kernels: k.iter().collect(),
        biases: b.iter().collect(),
    };
    let (_, cache) = conv1d_maxpool(&embeds, &cb)?;
    let mut g = ConvGrads::zeros(&cb);
    conv1d_maxpool_backward(&embeds, &cb, &cache, &r, &mut g, None);
    let mut grads = Gradients::new();
    for (i, w) in TINY_WIDTHS.iter().enumerate() {
        grads.add(&format!("k{w}"), &g.kernels[i]);
        grads.add(&format!("b{w}"), &g.biases[i]);
    }
    finite_difference_check(&store, &grads, FD_STEP, |s| {
        let (k, b) = bank(s)?;
        view(&k, &b)
    })
}

/// Vocabulary `w1..w{n}` with random vectors; row 0 is the padding row.
pub fn tiny_embedding_table(vocab_size: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; dim];
    values.extend((0..vocab_size * dim).map(|_| normal(&mut rng)));
    let vocab: HashMap<String, usize> = (1..=vocab_size).map(|i| (format!("w{i}"), i)).collect();
    let vectors = Tensor::matrix(vocab_size + 1, dim, values).expect("shape matches");
    EmbeddingTable::new(vocab, vectors).expect("valid table")
}

/// A small random episode admissible for `task`: 50 hours for mortality, 14
/// otherwise, with a few notes of random length (some shorter than the
/// widest filter).
pub fn tiny_episode(task: Task, feature_dim: usize, vocab_size: usize, seed: u64) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stay = if task == Task::Ihm { 50 } else { 14 };
    let timeseries = random_tensor(&mut rng, &[stay, feature_dim], 1.0);
    let mut times = vec![1, rng.gen_range(2..=6), rng.gen_range(7..=stay)];
    if task == Task::Ihm {
        times[2] = rng.gen_range(20..=48);
    }
    times.sort_unstable();
    let notes = times
        .into_iter()
        .enumerate()
        .map(|(k, chart_time)| {
            let len = if k == 0 { 2 } else { rng.gen_range(4..=9) };
            ClinicalNote {
                chart_time,
                token_ids: (0..len).map(|_| rng.gen_range(1..=vocab_size)).collect(),
            }
        })
        .collect();
    let labels = match task {
        Task::Ihm => EpisodeLabels::derive(Some(1), Some(stay), stay).expect("valid labels"),
        Task::Los => EpisodeLabels::derive(None, None, stay).expect("valid labels"),
        // Mixed positive and negative hours.
        Task::Decomp => EpisodeLabels {
            mortality: None,
            decompensation: (5..=stay).map(|t| u8::from(t % 3 == 0)).collect(),
            los_bucket: None,
        },
    };
    Episode {
        patient_id: format!("tiny-{task}-{seed}"),
        timeseries,
        notes,
        labels,
    }
}

pub fn tiny_config(task: Task, variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::for_task(task, variant, TINY_FEATURES, TINY_EMBEDDING);
    c.lstm_hidden = TINY_HIDDEN;
    c.filters_per_width = TINY_FILTERS;
    c.conv_widths = TINY_WIDTHS.to_vec();
    c.decay_lambda = 0.1;
    c
}

/// Full-model check with dropout active under a fixed mask seed.
pub fn model_gradient_check(task: Task, variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let config = tiny_config(task, variant);
    let table = tiny_embedding_table(TINY_VOCAB, TINY_EMBEDDING, seed);
    let episode = tiny_episode(task, TINY_FEATURES, TINY_VOCAB, seed + 1);
    let mut model = Model::init(config.clone(), seed + 2)?;
    // Non-zero biases so every parameter receives gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in names {
        for v in model.params_mut().get_mut(&name)?.values_mut() {
            *v += 0.1 * normal(&mut rng);
        }
    }
    let mask_seed = seed + 4;
    let (_, grads) = model.loss_and_gradients(&episode, &table, Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)))?;
    finite_difference_check(model.params(), &grads, FD_STEP, |s| {
        let m = Model::from_parts(config.clone(), s.clone())?;
        Ok(m.loss_and_gradients(&episode, &table, Some(&mut ChaCha8Rng::seed_from_u64(mask_seed)))?.0)
    })
}

/// Probability over all positive/negative pairs, ties half.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Sum of `(R_k - R_{k-1}) P_k` over every distinct score used as threshold.
pub fn threshold_aucpr(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for tau in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= tau {
                if l == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / total_pos;
        if tp + fp > 0.0 {
            ap += (recall - prev_recall) * tp / (tp + fp);
        }
        prev_recall = recall;
    }
    ap
}

/// `1 - mean w(t_n, p_n) / mean over all (a, b) of w(t_a, p_b)`.
pub fn direct_kappa(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let w = |i: usize, j: usize| i.abs_diff(j) as f64 / (classes - 1) as f64;
    let n = truth.len() as f64;
    let observed: f64 = truth.iter().zip(pred).map(|(&t, &p)| w(t, p)).sum::<f64>() / n;
    let mut expected = 0.0;
    for &t in truth {
        for &p in pred {
            expected += w(t, p);
        }
    }
    1.0 - observed / (expected / (n * n))
}

fn random_binary_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=50);
    let tied = rng.gen_bool(0.5);
    let scores: Vec<f64> = (0..n)
        .map(|_| if tied { f64::from(rng.gen_range(0..5)) / 4.0 } else { rng.gen() })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}

/// Largest disagreement between the library metrics and the brute-force
/// oracles over `instances` random cases per metric.
pub fn metric_oracle_errors(instances: usize, seed: u64) -> Result<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..instances {
        let (s, l) = random_binary_instance(&mut rng);
        let set = ScoredSet::new(s.clone(), l.clone())?;
        worst[0] = worst[0].max((auroc(&set)? - pairwise_auroc(&s, &l)).abs());
        let (s, l) = random_binary_instance(&mut rng);
        let set = ScoredSet::new(s.clone(), l.clone())?;
        worst[1] = worst[1].max((aucpr(&set)? - threshold_aucpr(&s, &l)).abs());
    }
    let mut done = 0;
    while done < instances {
        let n = rng.gen_range(2..=50);
        let c = rng.gen_range(2..=10);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.gen_bool(0.5) { t } else { rng.gen_range(0..c) })
            .collect();
        match linear_weighted_kappa(&truth, &pred, c) {
            Ok(k) => {
                worst[2] = worst[2].max((k - direct_kappa(&truth, &pred, c)).abs());
                done += 1;
            }
            Err(Error::UndefinedMetric(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(worst)
}

/// Every check; `quick` trims the number of metric instances.
pub fn run_selfcheck(quick: bool) -> Result<SelfCheckReport> {
    let start = Instant::now();
    let mut lines = Vec::new();
    let layer = |name: &str, r: GradCheckReport| CheckLine::new(format!("grad {name}"), r.max_rel_error, GRAD_TOLERANCE);
    lines.push(layer("dense", dense_gradient_check(11)?));
    lines.push(layer("lstm (5 steps)", lstm_gradient_check(12)?));
    lines.push(layer("conv1d+maxpool", conv_gradient_check(13)?));
    for task in Task::ALL {
        for variant in Variant::ALL {
            let r = model_gradient_check(task, variant, 100)?;
            lines.push(layer(&format!("{task}/{variant}"), r));
        }
    }
    let instances = if quick { 40 } else { 200 };
    let [a, p, k] = metric_oracle_errors(instances, 7)?;
    lines.push(CheckLine::new(format!("auroc vs pairwise ({instances} cases)"), a, METRIC_TOLERANCE));
    lines.push(CheckLine::new(format!("aucpr vs thresholds ({instances} cases)"), p, METRIC_TOLERANCE));
    lines.push(CheckLine::new(format!("kappa vs direct ({instances} cases)"), k, METRIC_TOLERANCE));
    Ok(SelfCheckReport {
        lines,
        seconds: start.elapsed().as_secs_f64(),
    })
}
