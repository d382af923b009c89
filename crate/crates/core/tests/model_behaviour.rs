mod common;

use std::collections::HashMap;

use notefusion::data::{EmbeddingTable, Task};
use notefusion::model::{compute_loss, names, Model, ModelConfig, Variant};
use notefusion::nn::Tensor;
use notefusion::selfcheck::{model_gradient_check, FD_STEP, GRAD_TOLERANCE};

use common::episode;

const DIM: usize = 3;

fn table() -> EmbeddingTable {
    let words = ["alpha", "beta", "gamma", "delta"];
    let vocab: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.to_string(), i + 1)).collect();
    let mut vectors = vec![0.0; 5 * 4];
    for (i, v) in vectors.iter_mut().enumerate().skip(4) {
        *v = ((i * 7 % 11) as f64 - 5.0) / 5.0;
    }
    EmbeddingTable::new(vocab, Tensor::matrix(5, 4, vectors).unwrap()).unwrap()
}

fn series(hours: usize, offset: f64) -> Vec<f64> {
    (0..hours * DIM).map(|i| ((i as f64) * 0.37 + offset).sin()).collect()
}

fn small_config(task: Task, variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::for_task(task, variant, DIM, 4);
    c.lstm_hidden = 5;
    c.filters_per_width = 3;
    c.conv_widths = vec![2, 3];
    c
}

fn zeroed(mut m: Model) -> Model {
    let names: Vec<String> = m.params().names().map(str::to_string).collect();
    for n in names {
        m.params_mut().get_mut(&n).unwrap().values_mut().fill(0.0);
    }
    m
}

#[test]
fn zero_weights_predict_chance() {
    let table = table();
    let ihm = episode(50, DIM, series(50, 0.0), &[(3, vec![1, 2])], Some(1), None);
    let los = episode(12, DIM, series(12, 0.0), &[(2, vec![3])], Some(0), None);
    for variant in Variant::ALL {
        let m = zeroed(Model::init(small_config(Task::Ihm, variant), 1).unwrap());
        let p = m.predict(&ihm, &table).unwrap();
        assert_eq!(p.outputs, vec![vec![0.5]]);
        assert!((compute_loss(&p, &ihm, Task::Ihm).unwrap() - 2f64.ln()).abs() < 1e-12);

        let m = zeroed(Model::init(small_config(Task::Los, variant), 1).unwrap());
        let p = m.predict(&los, &table).unwrap();
        for o in &p.outputs {
            assert!(o.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        }
        assert!((compute_loss(&p, &los, Task::Los).unwrap() - 10f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn confident_correct_head_has_near_zero_loss() {
    let table = table();
    let ep = episode(50, DIM, series(50, 0.0), &[(3, vec![1])], Some(1), None);
    let mut m = zeroed(Model::init(small_config(Task::Ihm, Variant::Baseline), 1).unwrap());
    m.params_mut().get_mut(names::HEAD_BIAS).unwrap().values_mut()[0] = 40.0;
    let p = m.predict(&ep, &table).unwrap();
    // Probabilities are clamped to [1e-7, 1 - 1e-7] before the log.
    assert!(compute_loss(&p, &ep, Task::Ihm).unwrap() < 2e-7);
}

#[test]
fn hourly_tasks_predict_from_hour_five() {
    let table = table();
    let ep = episode(10, DIM, series(10, 0.0), &[(1, vec![1]), (6, vec![2, 3])], Some(0), None);
    for task in [Task::Decomp, Task::Los] {
        for variant in Variant::ALL {
            let m = Model::init(small_config(task, variant), 3).unwrap();
            let p = m.predict(&ep, &table).unwrap();
            assert_eq!(p.hours, vec![5, 6, 7, 8, 9, 10]);
            if task == Task::Los {
                for o in &p.outputs {
                    assert_eq!(o.len(), 10);
                    assert!((o.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(o.iter().all(|&v| v > 0.0));
                }
            }
        }
    }
}

#[test]
fn zero_series_head_ignores_the_series() {
    let table = table();
    let notes = [(1, vec![1, 2]), (4, vec![4]), (7, vec![3, 3, 1])];
    let a = episode(12, DIM, series(12, 0.0), &notes, Some(0), None);
    let b = episode(12, DIM, series(12, 2.5), &notes, Some(0), None);
    for variant in [Variant::MultimodalCnn, Variant::MultimodalAvgwe] {
        let mut m = Model::init(small_config(Task::Decomp, variant), 4).unwrap();
        m.params_mut().get_mut(names::HEAD_W_SERIES).unwrap().values_mut().fill(0.0);
        assert_eq!(m.predict(&a, &table).unwrap(), m.predict(&b, &table).unwrap());
    }
    // The baseline, in turn, never looks at the notes.
    let m = Model::init(small_config(Task::Decomp, Variant::Baseline), 4).unwrap();
    let c = episode(12, DIM, series(12, 0.0), &[(2, vec![4, 4, 4])], Some(0), None);
    assert_eq!(m.predict(&a, &table).unwrap(), m.predict(&c, &table).unwrap());
}

#[test]
fn later_notes_do_not_change_earlier_predictions() {
    let table = table();
    let early = [(1, vec![1, 2]), (5, vec![3])];
    let a = episode(14, DIM, series(14, 0.0), &early, Some(0), None);
    let mut late = early.to_vec();
    late.push((9, vec![4, 2, 2, 1]));
    let b = episode(14, DIM, series(14, 0.0), &late, Some(0), None);
    for task in [Task::Decomp, Task::Los] {
        for variant in [Variant::MultimodalCnn, Variant::MultimodalAvgwe, Variant::TextOnly] {
            let m = Model::init(small_config(task, variant), 5).unwrap();
            let pa = m.predict(&a, &table).unwrap();
            let pb = m.predict(&b, &table).unwrap();
            // Hours 5..=8 precede the extra note.
            assert_eq!(pa.outputs[..4], pb.outputs[..4]);
            assert_ne!(pa.outputs[4..], pb.outputs[4..]);
        }
    }
}

#[test]
fn mortality_ignores_notes_after_hour_48() {
    let table = table();
    let a = episode(60, DIM, series(60, 0.0), &[(10, vec![1, 2])], Some(0), None);
    let b = episode(60, DIM, series(60, 0.0), &[(10, vec![1, 2]), (49, vec![4, 4])], Some(0), None);
    let m = Model::init(small_config(Task::Ihm, Variant::MultimodalCnn), 6).unwrap();
    assert_eq!(m.predict(&a, &table).unwrap(), m.predict(&b, &table).unwrap());
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line LSTM with two hidden units and a logistic head.
fn scalar_lstm_ihm(m: &Model, xs: &[f64], hours: usize) -> f64 {
    let p = m.params();
    let wih = p.get(names::LSTM_W_IH).unwrap().values();
    let whh = p.get(names::LSTM_W_HH).unwrap().values();
    let b = p.get(names::LSTM_BIAS).unwrap().values();
    let (mut h0, mut h1, mut c0, mut c1) = (0.0, 0.0, 0.0, 0.0);
    for t in 0..hours {
        let x = &xs[t * 3..t * 3 + 3];
        let pre = |row: usize| {
            b[row] + wih[row * 3] * x[0] + wih[row * 3 + 1] * x[1] + wih[row * 3 + 2] * x[2]
                + whh[row * 2] * h0
                + whh[row * 2 + 1] * h1
        };
        let (i0, i1) = (sigmoid(pre(0)), sigmoid(pre(1)));
        let (f0, f1) = (sigmoid(pre(2)), sigmoid(pre(3)));
        let (g0, g1) = (pre(4).tanh(), pre(5).tanh());
        let (o0, o1) = (sigmoid(pre(6)), sigmoid(pre(7)));
        c0 = f0 * c0 + i0 * g0;
        c1 = f1 * c1 + i1 * g1;
        h0 = o0 * c0.tanh();
        h1 = o1 * c1.tanh();
    }
    let w = p.get(names::HEAD_W_SERIES).unwrap().values();
    let hb = p.get(names::HEAD_BIAS).unwrap().values();
    sigmoid(w[0] * h0 + w[1] * h1 + hb[0])
}

#[test]
fn baseline_matches_hand_written_lstm() {
    let table = table();
    let xs = series(55, 0.3);
    let ep = episode(55, DIM, xs.clone(), &[(2, vec![1])], Some(1), None);
    let mut cfg = small_config(Task::Ihm, Variant::Baseline);
    cfg.lstm_hidden = 2;
    for seed in 0..5 {
        let m = Model::init(cfg.clone(), seed).unwrap();
        let got = m.predict(&ep, &table).unwrap().outputs[0][0];
        let want = scalar_lstm_ihm(&m, &xs, 48);
        assert!((got - want).abs() < 1e-10, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn init_is_seeded_with_unit_forget_bias() {
    let cfg = small_config(Task::Decomp, Variant::MultimodalCnn);
    let a = Model::init(cfg.clone(), 9).unwrap();
    assert_eq!(a, Model::init(cfg.clone(), 9).unwrap());
    assert_ne!(a, Model::init(cfg, 10).unwrap());
    let bias = a.params().get(names::LSTM_BIAS).unwrap().values();
    let h = 5;
    assert!(bias[h..2 * h].iter().all(|&b| b == 1.0));
    assert!(bias[..h].iter().chain(&bias[2 * h..]).all(|&b| b == 0.0));
}

#[test]
fn parameter_sets_follow_the_variant() {
    let has = |v, name: &str| Model::init(small_config(Task::Los, v), 0).unwrap().params().contains(name);
    assert!(has(Variant::Baseline, names::LSTM_W_IH) && !has(Variant::Baseline, names::HEAD_W_TEXT));
    assert!(!has(Variant::TextOnly, names::LSTM_W_IH) && has(Variant::TextOnly, &names::conv_kernel(3)));
    assert!(!has(Variant::MultimodalAvgwe, &names::conv_kernel(2)));
    assert!(has(Variant::MultimodalAvgwe, names::HEAD_W_TEXT));
    assert!(has(Variant::MultimodalCnn, &names::conv_bias(2)) && has(Variant::MultimodalCnn, names::HEAD_W_SERIES));
}

#[test]
fn gradients_match_finite_differences() {
    assert_eq!(FD_STEP, 1e-5);
    for task in Task::ALL {
        for variant in Variant::ALL {
            let report = model_gradient_check(task, variant, 77).unwrap();
            assert!(
                report.passes(GRAD_TOLERANCE),
                "{task}/{variant}: {:?}",
                report.per_param
            );
            assert!(report.coords_checked > 0);
        }
    }
}

#[test]
fn rejects_mismatched_feature_width() {
    let table = table();
    let ep = episode(50, 2, vec![0.0; 100], &[(3, vec![1])], Some(0), None);
    let m = Model::init(small_config(Task::Ihm, Variant::Baseline), 0).unwrap();
    assert!(m.predict(&ep, &table).is_err());
}
