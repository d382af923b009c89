//! Time-series baseline, multimodal and text-only predictors for the three
//! ICU tasks.
//!
//! Every variant shares one head of the form
//! `logits = W_series · h_t + W_text · z_t + b`, with whichever of the two
//! inputs the variant uses. For mortality the head reads `h_48` and the
//! features of all notes charted by hour 48 concatenated into one document.
//! For the hourly tasks `z_t` is the decay-weighted mean of per-note features
//! visible at `t`.

pub mod checkpoint;
pub mod config;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{names, ModelConfig, TextEncoder, Variant};

use crate::data::{validate_episode, EmbeddingTable, Episode, Task, FIRST_PREDICTION_HOUR, IHM_HOURS};
use crate::error::{Error, Result};
use crate::nn::loss::{binary_ce_logit_grad, multiclass_ce_logit_grad};
use crate::nn::tensor::{add_matvec, add_outer, add_transposed_matvec};
use crate::nn::{
    binary_ce, conv1d_maxpool_backward, lstm_sequence, lstm_sequence_backward, multiclass_ce, sigmoid, softmax,
    ConvBank, ConvCache, ConvGrads, DropoutMask, Gradients, LstmGrads, LstmParams, LstmStepCache, ParamStore,
    Tensor,
};
use crate::text::{avg_word_embedding, concat_notes, decay_coefficients, extract_note_feature};

/// Model outputs for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    pub task: Task,
    /// 1-based hour of each prediction.
    pub hours: Vec<usize>,
    /// One probability (binary tasks) or a distribution over buckets (LOS)
    /// per prediction hour.
    pub outputs: Vec<Vec<f64>>,
}

impl PredictionSeries {
    /// Positive-class probabilities for binary tasks.
    pub fn binary_scores(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o[0]).collect()
    }

    /// Most probable bucket per hour.
    pub fn argmax_classes(&self) -> Vec<usize> {
        self.outputs
            .iter()
            .map(|o| {
                o.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }
}

/// Task loss: cross entropy at hour 48 for mortality, mean cross entropy over
/// the predicted hours otherwise.
pub fn compute_loss(predictions: &PredictionSeries, episode: &Episode, task: Task) -> Result<f64> {
    let per_step = targets(episode, task)?;
    if per_step.len() != predictions.outputs.len() {
        return Err(Error::Internal(format!(
            "{} predictions for {} labels",
            predictions.outputs.len(),
            per_step.len()
        )));
    }
    let n = per_step.len() as f64;
    let mut total = 0.0;
    for (out, target) in predictions.outputs.iter().zip(&per_step) {
        total += match task {
            Task::Ihm | Task::Decomp => binary_ce(out[0], *target as u8)?,
            Task::Los => multiclass_ce(out, *target)?,
        };
    }
    Ok(total / n)
}

fn targets(episode: &Episode, task: Task) -> Result<Vec<usize>> {
    match task {
        Task::Ihm => episode
            .labels
            .mortality
            .map(|m| vec![usize::from(m)])
            .ok_or_else(|| Error::Validation(format!("{}: mortality label missing", episode.patient_id))),
        Task::Decomp => Ok(episode.labels.decompensation.iter().map(|&d| usize::from(d)).collect()),
        Task::Los => episode
            .labels
            .los_bucket
            .clone()
            .ok_or_else(|| Error::Validation(format!("{}: no length-of-stay labels", episode.patient_id))),
    }
}

/// Configuration plus trained weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

struct Weights<'a> {
    lstm: Option<LstmParams<'a>>,
    conv: Option<ConvBank<'a>>,
    w_series: Option<&'a Tensor>,
    w_text: Option<&'a Tensor>,
    bias: &'a Tensor,
}

enum TextCache {
    None,
    /// Stay-level document (mortality).
    Document(Option<NoteCache>),
    /// One entry per note (hourly tasks).
    PerNote(Vec<Option<NoteCache>>),
}

/// Conv intermediates needed for backward; `None` for averaged embeddings.
struct NoteCache {
    embeds: Tensor,
    conv: ConvCache,
}

struct StepCache {
    hour: usize,
    series_in: Vec<f64>,
    series_mask: Option<DropoutMask>,
    text_in: Vec<f64>,
    text_mask: Option<DropoutMask>,
    /// `(note index, w(t,i)/M)` for hourly tasks.
    coeffs: Vec<(usize, f64)>,
    probs: Vec<f64>,
}

struct Pass {
    lstm: Vec<LstmStepCache>,
    text: TextCache,
    steps: Vec<StepCache>,
}

impl Model {
    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            let mut t = Tensor::zeros(&shape);
            if shape.len() == 2 {
                let (fan_out, fan_in) = (shape[0], shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                t.values_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..limit));
            } else if name == names::LSTM_BIAS {
                let h = config.lstm_hidden;
                t.values_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
            params.insert(name, t)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing weights after checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters for {}/{}, found {}",
                expected.len(),
                config.task,
                config.variant,
                params.len()
            )));
        }
        for (name, shape) in expected {
            let t = params
                .get(&name)
                .map_err(|_| Error::Validation(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension {
                    op: "model parameter",
                    left: t.shape().to_vec(),
                    right: shape,
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, ParamStore) {
        (self.config, self.params)
    }

    /// Inference-mode forward pass (no dropout).
    pub fn predict(&self, episode: &Episode, table: &EmbeddingTable) -> Result<PredictionSeries> {
        Self::predict_with(&self.config, &self.params, episode, table)
    }

    /// Forward pass with an explicit parameter store; used by gradient checks.
    pub fn predict_with(
        config: &ModelConfig,
        params: &ParamStore,
        episode: &Episode,
        table: &EmbeddingTable,
    ) -> Result<PredictionSeries> {
        let w = weights(config, params)?;
        let pass = run(config, &w, episode, table, None)?;
        Ok(series_of(config.task, &pass))
    }

    /// Loss and parameter gradients for one episode. With `rng`, dropout is
    /// active.
    pub fn loss_and_gradients(
        &self,
        episode: &Episode,
        table: &EmbeddingTable,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let config = &self.config;
        let w = weights(config, &self.params)?;
        let pass = run(config, &w, episode, table, rng)?;
        let preds = series_of(config.task, &pass);
        let loss = compute_loss(&preds, episode, config.task)?;
        let per_step = targets(episode, config.task)?;
        let n = per_step.len() as f64;
        let dlogits: Vec<Vec<f64>> = pass
            .steps
            .iter()
            .zip(&per_step)
            .map(|(s, &y)| {
                let mut g = match config.task {
                    Task::Ihm | Task::Decomp => vec![binary_ce_logit_grad(s.probs[0], y as u8)],
                    Task::Los => multiclass_ce_logit_grad(&s.probs, y),
                };
                g.iter_mut().for_each(|v| *v /= n);
                g
            })
            .collect();
        let grads = backward(config, &w, episode, &pass, &dlogits)?;
        Ok((loss, grads))
    }

    /// Checks that the episode is admissible for this model's task.
    pub fn check_episode(&self, episode: &Episode) -> Result<()> {
        let v = validate_episode(episode, self.config.task);
        if !v.is_empty() {
            let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
            return Err(Error::Validation(format!("{}: {}", episode.patient_id, msgs.join("; "))));
        }
        if episode.feature_dim() != self.config.feature_dim {
            return Err(Error::Dimension {
                op: "episode features",
                left: vec![episode.stay_hours(), episode.feature_dim()],
                right: vec![self.config.feature_dim],
            });
        }
        Ok(())
    }
}

fn weights<'a>(config: &ModelConfig, params: &'a ParamStore) -> Result<Weights<'a>> {
    let lstm = if config.variant.uses_series() {
        Some(LstmParams {
            w_ih: params.get(names::LSTM_W_IH)?,
            w_hh: params.get(names::LSTM_W_HH)?,
            bias: params.get(names::LSTM_BIAS)?,
        })
    } else {
        None
    };
    let conv = if config.variant.text_encoder() == Some(TextEncoder::Cnn) {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for &w in &config.conv_widths {
            kernels.push(params.get(&names::conv_kernel(w))?);
            biases.push(params.get(&names::conv_bias(w))?);
        }
        Some(ConvBank {
            widths: config.conv_widths.clone(),
            kernels,
            biases,
        })
    } else {
        None
    };
    Ok(Weights {
        lstm,
        conv,
        w_series: if config.variant.uses_series() {
            Some(params.get(names::HEAD_W_SERIES)?)
        } else {
            None
        },
        w_text: if config.variant.text_encoder().is_some() {
            Some(params.get(names::HEAD_W_TEXT)?)
        } else {
            None
        },
        bias: params.get(names::HEAD_BIAS)?,
    })
}

fn encode_note(
    encoder: TextEncoder,
    ids: &[usize],
    chart_time: usize,
    table: &EmbeddingTable,
    conv: Option<&ConvBank<'_>>,
) -> Result<(Vec<f64>, Option<NoteCache>)> {
    match encoder {
        TextEncoder::AvgWordEmbedding => Ok((avg_word_embedding(ids, table).into_values(), None)),
        TextEncoder::Cnn => {
            let bank = conv.ok_or_else(|| Error::Internal("conv weights missing".into()))?;
            let note = crate::data::ClinicalNote {
                chart_time,
                token_ids: ids.to_vec(),
            };
            let (feature, embeds, cache) = extract_note_feature(&note, table, bank)?;
            Ok((feature.vector.into_values(), Some(NoteCache { embeds, conv: cache })))
        }
    }
}

fn run(
    config: &ModelConfig,
    w: &Weights<'_>,
    episode: &Episode,
    table: &EmbeddingTable,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Pass> {
    let task = config.task;
    let stay = episode.stay_hours();
    let horizon = match task {
        Task::Ihm => {
            if stay < IHM_HOURS {
                return Err(Error::Validation(format!(
                    "{}: stay shorter than {IHM_HOURS}h ({stay}h)",
                    episode.patient_id
                )));
            }
            IHM_HOURS
        }
        Task::Decomp | Task::Los => stay,
    };
    let pred_hours: Vec<usize> = match task {
        Task::Ihm => vec![IHM_HOURS],
        _ => (FIRST_PREDICTION_HOUR..=stay).collect(),
    };

    let lstm = match &w.lstm {
        Some(p) => {
            if episode.feature_dim() != p.input_size() {
                return Err(Error::Dimension {
                    op: "episode features",
                    left: episode.timeseries.shape().to_vec(),
                    right: vec![p.input_size()],
                });
            }
            lstm_sequence(&episode.timeseries, horizon, p)?
        }
        None => Vec::new(),
    };

    let text_dim = config.text_dim();
    let mut doc_feature: Vec<f64> = Vec::new();
    let mut note_features: Vec<Vec<f64>> = Vec::new();
    let chart_times: Vec<usize> = episode.notes.iter().map(|n| n.chart_time).collect();
    let text = match config.variant.text_encoder() {
        None => TextCache::None,
        Some(enc) if task == Task::Ihm => {
            let visible: Vec<_> = episode
                .notes
                .iter()
                .filter(|n| n.chart_time <= IHM_HOURS)
                .cloned()
                .collect();
            let doc = concat_notes(&visible)
                .map_err(|_| Error::Validation(format!("{}: no notes charted by hour {IHM_HOURS}", episode.patient_id)))?;
            let (z, cache) = encode_note(enc, &doc.token_ids, doc.chart_time, table, w.conv.as_ref())?;
            doc_feature = z;
            TextCache::Document(cache)
        }
        Some(enc) => {
            let mut caches = Vec::with_capacity(episode.notes.len());
            for n in &episode.notes {
                let (z, cache) = encode_note(enc, &n.token_ids, n.chart_time, table, w.conv.as_ref())?;
                note_features.push(z);
                caches.push(cache);
            }
            TextCache::PerNote(caches)
        }
    };

    let rate = config.dropout;
    let mut steps = Vec::with_capacity(pred_hours.len());
    for &hour in &pred_hours {
        let mut logits = w.bias.values().to_vec();

        let (series_in, series_mask) = match (&w.w_series, lstm.get(hour - 1)) {
            (Some(ws), Some(cache)) => {
                let mut h = cache.hidden().to_vec();
                let mask = match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => Some(DropoutMask::sample(h.len(), rate, r)?),
                    _ => None,
                };
                if let Some(m) = &mask {
                    m.apply_in_place(&mut h);
                }
                add_matvec(&mut logits, ws.values(), &h);
                (h, mask)
            }
            _ => (Vec::new(), None),
        };

        let mut coeffs = Vec::new();
        let (text_in, text_mask) = match &w.w_text {
            Some(wt) => {
                let mut z = match &text {
                    TextCache::Document(_) => doc_feature.clone(),
                    TextCache::PerNote(_) => {
                        coeffs = decay_coefficients(&chart_times, hour, config.decay_lambda);
                        let mut z = vec![0.0; text_dim];
                        for &(i, c) in &coeffs {
                            for (o, v) in z.iter_mut().zip(&note_features[i]) {
                                *o += c * v;
                            }
                        }
                        z
                    }
                    TextCache::None => return Err(Error::Internal("text head without text features".into())),
                };
                let mask = match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => Some(DropoutMask::sample(z.len(), rate, r)?),
                    _ => None,
                };
                if let Some(m) = &mask {
                    m.apply_in_place(&mut z);
                }
                add_matvec(&mut logits, wt.values(), &z);
                (z, mask)
            }
            None => (Vec::new(), None),
        };

        let probs = match task {
            Task::Ihm | Task::Decomp => vec![sigmoid(logits[0])],
            Task::Los => softmax(&logits),
        };
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: prediction at hour {hour}",
                episode.patient_id
            )));
        }
        steps.push(StepCache {
            hour,
            series_in,
            series_mask,
            text_in,
            text_mask,
            coeffs,
            probs,
        });
    }
    Ok(Pass { lstm, text, steps })
}

fn series_of(task: Task, pass: &Pass) -> PredictionSeries {
    PredictionSeries {
        task,
        hours: pass.steps.iter().map(|s| s.hour).collect(),
        outputs: pass.steps.iter().map(|s| s.probs.clone()).collect(),
    }
}

fn backward(
    config: &ModelConfig,
    w: &Weights<'_>,
    episode: &Episode,
    pass: &Pass,
    dlogits: &[Vec<f64>],
) -> Result<Gradients> {
    let c = config.task.num_outputs();
    let text_dim = config.text_dim();
    let mut grads = Gradients::new();

    let mut d_bias = vec![0.0; c];
    let mut d_w_series = w.w_series.map(|t| vec![0.0; t.numel()]);
    let mut d_w_text = w.w_text.map(|t| vec![0.0; t.numel()]);
    let mut dh_steps: Vec<Vec<f64>> = vec![Vec::new(); pass.lstm.len()];
    let mut d_doc = vec![0.0; text_dim];
    let n_notes = episode.notes.len();
    let mut d_notes: Vec<Vec<f64>> = match &pass.text {
        TextCache::PerNote(_) => vec![vec![0.0; text_dim]; n_notes],
        _ => Vec::new(),
    };

    for (step, dl) in pass.steps.iter().zip(dlogits) {
        for (b, g) in d_bias.iter_mut().zip(dl) {
            *b += g;
        }
        if let (Some(ws), Some(dws)) = (w.w_series, d_w_series.as_mut()) {
            add_outer(dws, dl, &step.series_in);
            let mut dh = vec![0.0; ws.cols()];
            add_transposed_matvec(&mut dh, ws.values(), dl);
            if let Some(m) = &step.series_mask {
                m.apply_in_place(&mut dh);
            }
            let slot = &mut dh_steps[step.hour - 1];
            if slot.is_empty() {
                *slot = dh;
            } else {
                slot.iter_mut().zip(&dh).for_each(|(a, b)| *a += b);
            }
        }
        if let (Some(wt), Some(dwt)) = (w.w_text, d_w_text.as_mut()) {
            add_outer(dwt, dl, &step.text_in);
            let mut dz = vec![0.0; text_dim];
            add_transposed_matvec(&mut dz, wt.values(), dl);
            if let Some(m) = &step.text_mask {
                m.apply_in_place(&mut dz);
            }
            match &pass.text {
                TextCache::Document(_) => d_doc.iter_mut().zip(&dz).for_each(|(a, b)| *a += b),
                TextCache::PerNote(_) => {
                    for &(i, coef) in &step.coeffs {
                        d_notes[i].iter_mut().zip(&dz).for_each(|(a, b)| *a += coef * b);
                    }
                }
                TextCache::None => {}
            }
        }
    }

    grads.add(names::HEAD_BIAS, &d_bias);
    if let Some(g) = d_w_series {
        grads.add(names::HEAD_W_SERIES, &g);
    }
    if let Some(g) = d_w_text {
        grads.add(names::HEAD_W_TEXT, &g);
    }

    if let Some(bank) = &w.conv {
        let mut cg = ConvGrads::zeros(bank);
        match &pass.text {
            TextCache::Document(Some(nc)) => {
                conv1d_maxpool_backward(&nc.embeds, bank, &nc.conv, &d_doc, &mut cg, None);
            }
            TextCache::PerNote(caches) => {
                for (nc, dz) in caches.iter().zip(&d_notes) {
                    if let Some(nc) = nc {
                        conv1d_maxpool_backward(&nc.embeds, bank, &nc.conv, dz, &mut cg, None);
                    }
                }
            }
            _ => return Err(Error::Internal("conv weights without conv cache".into())),
        }
        for (k, &width) in config.conv_widths.iter().enumerate() {
            grads.add(&names::conv_kernel(width), &cg.kernels[k]);
            grads.add(&names::conv_bias(width), &cg.biases[k]);
        }
    }

    if let Some(p) = &w.lstm {
        let mut lg = LstmGrads::zeros(p);
        lstm_sequence_backward(&pass.lstm, p, &dh_steps, &mut lg);
        grads.add(names::LSTM_W_IH, &lg.w_ih);
        grads.add(names::LSTM_W_HH, &lg.w_hh);
        grads.add(names::LSTM_BIAS, &lg.bias);
    }
    Ok(grads)
}
