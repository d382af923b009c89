//! Mini-batch training with Adam, model selection on validation data, pooled
//! evaluation and multi-seed experiments.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, Episode, Task, LOS_BUCKETS};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};
use crate::metrics::{aggregate_seeds, auroc, aucpr, linear_weighted_kappa, ScoredSet};
use crate::model::{compute_loss, Model, ModelConfig, Variant};
use crate::nn::{AdamConfig, Gradients, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Validation("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub selected_epoch: usize,
}

/// Pooled metrics over every prediction of a set of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: Task,
    pub predictions: usize,
    pub loss: f64,
    pub auroc: Option<f64>,
    pub aucpr: Option<f64>,
    pub kappa: Option<f64>,
}

impl Evaluation {
    /// AUCPR for the binary tasks, kappa for length of stay.
    pub fn primary_metric(&self) -> Option<f64> {
        match self.task {
            Task::Ihm | Task::Decomp => self.aucpr,
            Task::Los => self.kappa,
        }
    }

    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.auroc {
            out.push(("auroc", v));
        }
        if let Some(v) = self.aucpr {
            out.push(("aucpr", v));
        }
        if let Some(v) = self.kappa {
            out.push(("kappa", v));
        }
        out
    }
}

pub fn evaluate(model: &Model, episodes: &[&Episode], table: &EmbeddingTable) -> Result<Evaluation> {
    let task = model.config().task;
    if episodes.is_empty() {
        return Err(Error::Validation(format!("no {task} episodes to evaluate")));
    }
    let mut scored = ScoredSet::default();
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    for ep in episodes {
        model.check_episode(ep)?;
        let p = model.predict(ep, table)?;
        loss += compute_loss(&p, ep, task)?;
        match task {
            Task::Ihm => scored.extend(&p.binary_scores(), &[ep.labels.mortality.unwrap_or(0)]),
            Task::Decomp => scored.extend(&p.binary_scores(), &ep.labels.decompensation),
            Task::Los => {
                pred.extend(p.argmax_classes());
                truth.extend(ep.labels.los_bucket.as_deref().unwrap_or_default());
            }
        }
    }
    let loss = loss / episodes.len() as f64;
    Ok(match task {
        Task::Ihm | Task::Decomp => Evaluation {
            task,
            predictions: scored.len(),
            loss,
            auroc: auroc(&scored).ok(),
            aucpr: aucpr(&scored).ok(),
            kappa: None,
        },
        Task::Los => Evaluation {
            task,
            predictions: pred.len(),
            loss,
            auroc: None,
            aucpr: None,
            kappa: linear_weighted_kappa(&truth, &pred, LOS_BUCKETS).ok(),
        },
    })
}

/// Higher is better. Falls back to negative loss if the metric is undefined.
fn selection_score(e: &Evaluation) -> f64 {
    e.primary_metric().unwrap_or(-e.loss)
}

/// Trains a fresh model seeded with `cfg.seed`. Weights from the epoch with
/// the best validation score are returned (earliest on ties); without
/// validation data, the final weights.
pub fn train(
    model_config: ModelConfig,
    train_set: &[&Episode],
    val_set: &[&Episode],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let mut model = Model::init(model_config, cfg.seed)?;
    for ep in train_set.iter().chain(val_set) {
        model.check_episode(ep)?;
    }
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let weight_decay = model.config().weight_decay;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = Gradients::zeros_like(model.params());
            for &i in batch {
                let (loss, g) = model.loss_and_gradients(train_set[i], table, Some(&mut rng))?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {loss} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                total += loss;
                grads.merge(&g);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, batch {}", b + 1)));
            }
            grads.clip_global_norm(cfg.clip_norm);
            let params = model.params_mut();
            params.set_gradients(&grads)?;
            params.adam_update(&adam, weight_decay)?;
        }
        let train_loss = total / train_set.len() as f64;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&model, val_set, table)?)
        };
        let val_metric = val.as_ref().and_then(Evaluation::primary_metric);
        debug!("epoch {epoch}: train loss {train_loss:.5}, val {val_metric:?}");
        if let Some(v) = &val {
            let score = selection_score(v);
            if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                best = Some((score, epoch, model.params().clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
        });
    }

    let selected_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome {
        model,
        history,
        selected_epoch,
    })
}

/// Hyperparameters applied on top of the per-task defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub lstm_hidden: Option<usize>,
    pub filters_per_width: Option<usize>,
    pub conv_widths: Option<Vec<usize>>,
    pub decay_lambda: Option<f64>,
    pub dropout: Option<f64>,
    pub weight_decay: Option<f64>,
}

impl ModelOverrides {
    pub fn apply(&self, mut c: ModelConfig) -> ModelConfig {
        if let Some(v) = self.lstm_hidden {
            c.lstm_hidden = v;
        }
        if let Some(v) = self.filters_per_width {
            c.filters_per_width = v;
        }
        if let Some(v) = &self.conv_widths {
            c.conv_widths = v.clone();
        }
        if let Some(v) = self.decay_lambda {
            c.decay_lambda = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        c
    }
}

/// One training run with its test-set results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub test: Evaluation,
}

pub fn run_once(
    dataset: &Dataset,
    task: Task,
    variant: Variant,
    overrides: &ModelOverrides,
    cfg: &TrainConfig,
) -> Result<(Model, RunRecord)> {
    let (train_set, _) = dataset.select(task, Split::Train);
    let (val_set, _) = dataset.select(task, Split::Val);
    let (test_set, _) = dataset.select(task, Split::Test);
    let base = ModelConfig::for_task(task, variant, dataset.feature_dim(), dataset.table.dim());
    let outcome = train(overrides.apply(base), &train_set, &val_set, &dataset.table, cfg)?;
    let test = evaluate(&outcome.model, &test_set, &dataset.table)?;
    info!(
        "{task}/{variant} seed {}: epoch {} selected, test {:?}",
        cfg.seed,
        outcome.selected_epoch,
        test.metrics()
    );
    let record = RunRecord {
        task,
        variant,
        seed: cfg.seed,
        history: outcome.history,
        selected_epoch: outcome.selected_epoch,
        test,
    };
    Ok((outcome.model, record))
}

/// Mean and spread of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: Task,
    pub variant: Variant,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: Vec<Task>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub model: ModelOverrides,
}

/// Every task × variant × seed; one row per task, variant and metric.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<(Vec<ResultRow>, Vec<RunRecord>)> {
    if cfg.seeds.is_empty() {
        return Err(Error::Validation("at least one seed is required".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &task in &cfg.tasks {
        for &variant in &cfg.variants {
            let mut per_seed = Vec::new();
            for &seed in &cfg.seeds {
                let tc = TrainConfig { seed, ..cfg.train.clone() };
                let (_, record) = run_once(dataset, task, variant, &cfg.model, &tc)?;
                per_seed.push(record.test.clone());
                runs.push(record);
            }
            let names: Vec<&str> = per_seed[0].metrics().iter().map(|(n, _)| *n).collect();
            for name in names {
                let values: Vec<f64> = per_seed
                    .iter()
                    .map(|e| e.metrics().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v))
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::UndefinedMetric(format!("{task}/{variant}: {name} undefined for some seed")))?;
                let report = aggregate_seeds(&values)?;
                rows.push(ResultRow {
                    task,
                    variant,
                    metric: name.to_string(),
                    seeds: cfg.seeds.clone(),
                    values,
                    mean: report.mean,
                    std: report.std,
                });
            }
        }
    }
    Ok((rows, runs))
}
