//! Synthetic ICU datasets in the on-disk benchmark layout.
//!
//! Each patient has four independent latent factors: a mortality factor and a
//! stay-length factor expressed in the time series, and the same pair
//! expressed only in note wording. The signal plan decides how strongly each
//! factor drives the labels, so a plan can force information to live in one
//! modality.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::ingest::dataset::{assign_splits, DatasetManifest, ManifestEntry, DEFAULT_TEST_FRACTION, DEFAULT_VAL_FRACTION};
use crate::ingest::embeddings::write_embeddings;
use crate::ingest::episode_io::{write_raw_episode, LabelsRecord, NoteRecord, RawEpisode, LABELS_FILE, NOTES_FILE, TIMESERIES_FILE};
use crate::nn::sigmoid;

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalPlan {
    /// Outcome risk split between the time series and the notes.
    Mixed,
    /// Outcomes depend only on note content.
    NotesOnly,
    /// Outcomes depend mostly on the time series.
    SeriesHeavy,
}

impl SignalPlan {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalPlan::Mixed => "mixed",
            SignalPlan::NotesOnly => "notes-only",
            SignalPlan::SeriesHeavy => "series-heavy",
        }
    }

    fn weights(self) -> PlanWeights {
        match self {
            SignalPlan::Mixed => PlanWeights {
                risk_series: 1.2,
                risk_notes: 2.0,
                stay_series: 0.55,
                stay_notes: 0.55,
                terminal_series: 0.4,
                terminal_notes: 2.0,
            },
            SignalPlan::NotesOnly => PlanWeights {
                risk_series: 0.0,
                risk_notes: 2.2,
                stay_series: 0.0,
                stay_notes: 0.8,
                terminal_series: 0.0,
                terminal_notes: 1.5,
            },
            SignalPlan::SeriesHeavy => PlanWeights {
                risk_series: 2.2,
                risk_notes: 0.3,
                stay_series: 0.8,
                stay_notes: 0.1,
                terminal_series: 1.5,
                terminal_notes: 0.0,
            },
        }
    }
}

impl fmt::Display for SignalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(SignalPlan::Mixed),
            "notes-only" => Ok(SignalPlan::NotesOnly),
            "series-heavy" => Ok(SignalPlan::SeriesHeavy),
            other => Err(Error::Validation(format!(
                "unknown signal plan `{other}` (expected mixed, notes-only or series-heavy)"
            ))),
        }
    }
}

struct PlanWeights {
    risk_series: f64,
    risk_notes: f64,
    stay_series: f64,
    stay_notes: f64,
    terminal_series: f64,
    terminal_notes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub patients: usize,
    /// At least 3: drift, terminal and stay channels come first.
    pub feature_dim: usize,
    pub embedding_dim: usize,
    pub signal_plan: SignalPlan,
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction: f64,
    /// Probability that a cell is written empty.
    pub missing_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            patients: 100,
            feature_dim: 6,
            embedding_dim: 16,
            signal_plan: SignalPlan::Mixed,
            seed: 1,
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction: DEFAULT_VAL_FRACTION,
            missing_rate: 0.05,
        }
    }
}

const FILLER: &[&str] = &[
    "patient", "seen", "and", "examined", "overnight", "the", "with", "on", "plan", "continue", "monitor",
    "pain", "controlled", "vitals", "reviewed", "labs", "pending", "family", "updated", "at", "bedside",
    "tolerating", "diet", "lines", "intact", "skin", "no", "acute", "events", "nursing", "note", "assessment",
    "resp", "cv", "neuro", "gi", "renal", "meds", "given", "per", "orders", "iv", "fluids", "urine",
    "output", "adequate", "chest", "xray", "reviewed", "awake",
];
/// Filler words left out of the embedding file to exercise OOV handling.
const OOV: &[&str] = &["qshift", "pt", "w"];
/// Ordered from least to most severe.
const SEVERITY_WORDS: &[&str] = &[
    "thriving", "comfortable", "stable", "guarded", "concerning", "worsening", "deteriorating", "crashing",
];
/// Ordered from shortest to longest expected stay.
const STAY_WORDS: &[&str] = &["brief", "routine", "uncomplicated", "extended", "prolonged", "protracted"];
const TERMINAL_WORDS: &[&str] = &["critical", "palliative", "unresponsive"];

fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = FILLER
        .iter()
        .chain(SEVERITY_WORDS)
        .chain(STAY_WORDS)
        .chain(TERMINAL_WORDS)
        .map(|s| s.to_string())
        .collect();
    v.sort();
    v.dedup();
    v
}

/// Position of `word` on a graded scale mapped to [-1, 1].
fn scale_position(word: &str, scale: &[&str]) -> Option<f64> {
    let k = scale.iter().position(|w| *w == word)?;
    Some(2.0 * k as f64 / (scale.len() - 1) as f64 - 1.0)
}

/// Random vectors, except that graded words lie along a shared direction per
/// scale so their embeddings carry their rank.
fn embedding_vectors(rng: &mut ChaCha8Rng, vocab: &[String], dim: usize) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
    let direction = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| noise.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let severity = direction(rng);
    let stay = direction(rng);
    vocab
        .iter()
        .map(|w| {
            let graded = scale_position(w, SEVERITY_WORDS)
                .map(|p| (p, &severity))
                .or_else(|| scale_position(w, STAY_WORDS).map(|p| (p, &stay)));
            let spread = if graded.is_some() { 0.3 } else { 1.0 };
            let mut v: Vec<f64> = (0..dim).map(|_| spread * noise.sample(rng)).collect();
            if let Some((p, dir)) = graded {
                v.iter_mut().zip(dir).for_each(|(x, d)| *x += 1.5 * p * d);
            }
            v
        })
        .collect()
}

struct Latents {
    risk_series: f64,
    risk_notes: f64,
    stay_series: f64,
    stay_notes: f64,
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|p| p.sample(rng) as usize).unwrap_or(0)
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// Word on a graded scale whose rank tracks `latent`.
fn graded_word<'a>(rng: &mut ChaCha8Rng, scale: &[&'a str], latent: f64) -> &'a str {
    let mid = (scale.len() - 1) as f64 / 2.0;
    let jitter: f64 = Normal::new(0.0, 0.5).expect("valid normal").sample(rng);
    let k = (mid + 1.3 * latent + jitter).round().clamp(0.0, (scale.len() - 1) as f64);
    scale[k as usize]
}

fn note_text(rng: &mut ChaCha8Rng, z: &Latents, w: &PlanWeights, terminal: bool) -> String {
    let mut words: Vec<&str> = Vec::new();
    let filler = rng.gen_range(12..=30);
    for _ in 0..filler {
        if rng.gen::<f64>() < 0.05 {
            words.push(pick(rng, OOV));
        } else {
            words.push(pick(rng, FILLER));
        }
    }
    for _ in 0..rng.gen_range(1..=2) {
        words.push(graded_word(rng, SEVERITY_WORDS, z.risk_notes));
    }
    for _ in 0..rng.gen_range(1..=2) {
        words.push(graded_word(rng, STAY_WORDS, z.stay_notes));
    }
    if terminal {
        for _ in 0..poisson(rng, 2.0 * w.terminal_notes) {
            words.push(pick(rng, TERMINAL_WORDS));
        }
    }
    words.shuffle(rng);
    let mut text = words.join(" ");
    if let Some(first) = text.get(..1) {
        text = first.to_uppercase() + &text[1..];
    }
    text.push('.');
    text
}

fn generate_patient(rng: &mut ChaCha8Rng, id: String, cfg: &SyntheticConfig, feature_names: &[String]) -> RawEpisode {
    let w = cfg.signal_plan.weights();
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let z = Latents {
        risk_series: std.sample(rng),
        risk_notes: std.sample(rng),
        stay_series: std.sample(rng),
        stay_notes: std.sample(rng),
    };

    let log_stay = (60.0f64).ln()
        + w.stay_series * z.stay_series
        + w.stay_notes * z.stay_notes
        + 0.25 * std.sample(rng);
    let stay = (log_stay.exp().round() as usize).clamp(6, 480);
    let risk = w.risk_series * z.risk_series + w.risk_notes * z.risk_notes - 2.0;
    let dies = rng.gen::<f64>() < sigmoid(risk);
    let death_hour = dies.then_some(stay);

    let d = cfg.feature_dim;
    let mut ar = vec![0.0; d];
    let mut rows = Vec::with_capacity(stay);
    for t in 1..=stay {
        let in_terminal = dies && t + 24 > stay;
        let mut row = Vec::with_capacity(d);
        for (j, state) in ar.iter_mut().enumerate() {
            let v = match j {
                0 => z.risk_series * (0.4 + 0.015 * t.min(96) as f64) + 0.8 * std.sample(rng),
                1 => std.sample(rng) + if in_terminal { 1.2 * w.terminal_series } else { 0.0 },
                2 => 0.8 * z.stay_series + 0.8 * std.sample(rng),
                _ => {
                    *state = 0.8 * *state + 0.6 * std.sample(rng);
                    *state
                }
            };
            let missing = t > 1 && rng.gen::<f64>() < cfg.missing_rate;
            row.push(if missing { None } else { Some(v) });
        }
        rows.push(row);
    }

    let mut notes = Vec::new();
    let gap = Exp::new(1.0f64 / 10.0).expect("valid rate");
    let mut hour = f64::from(rng.gen_range(-6..=1)) + 0.5 * f64::from(rng.gen_range(0..2));
    if hour <= 0.0 && rng.gen::<f64>() < 0.3 {
        let earlier = hour - 1.0 - f64::from(rng.gen_range(0..12));
        notes.push(NoteRecord {
            hour: Some(earlier),
            text: note_text(rng, &z, &w, false),
        });
    }
    while hour <= stay as f64 {
        let terminal = dies && hour + 24.0 > stay as f64;
        notes.push(NoteRecord {
            hour: Some(hour),
            text: note_text(rng, &z, &w, terminal),
        });
        hour += 1.0 + (gap.sample(rng) * 4.0).round() / 4.0;
    }

    RawEpisode {
        patient_id: id,
        feature_names: feature_names.to_vec(),
        rows,
        notes,
        labels: LabelsRecord {
            mortality: (stay >= crate::data::IHM_HOURS).then_some(u8::from(dies)),
            death_hour,
            total_stay_hours: stay,
        },
    }
}

/// Writes a complete dataset (episodes, embeddings, manifest) under `out`.
/// The output is a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig, out: &Path) -> Result<DatasetManifest> {
    if cfg.feature_dim < 3 {
        return Err(Error::Validation("synthetic data needs at least 3 features".into()));
    }
    if cfg.patients == 0 || cfg.embedding_dim == 0 {
        return Err(Error::Validation("patients and embedding_dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fs::create_dir_all(out.join("episodes")).map_err(|e| Error::io(out, e))?;

    let vocab = vocabulary();
    let vectors = embedding_vectors(&mut rng, &vocab, cfg.embedding_dim);
    write_embeddings(&out.join(EMBEDDINGS_FILE), &vocab, &vectors)?;

    let mut feature_names = vec!["drift".to_string(), "terminal".to_string(), "stay".to_string()];
    feature_names.extend((3..cfg.feature_dim).map(|j| format!("aux{}", j - 2)));

    let ids: Vec<String> = (1..=cfg.patients).map(|i| format!("p{i:05}")).collect();
    let splits = assign_splits(&ids, cfg.test_fraction, cfg.val_fraction, cfg.seed);
    let mut entries = Vec::with_capacity(ids.len());
    for id in &ids {
        let raw = generate_patient(&mut rng, id.clone(), cfg, &feature_names);
        let rel = format!("episodes/{id}");
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_raw_episode(&dir, &raw)?;
        entries.push(ManifestEntry {
            patient_id: id.clone(),
            timeseries: format!("{rel}/{TIMESERIES_FILE}"),
            notes: format!("{rel}/{NOTES_FILE}"),
            labels: format!("{rel}/{LABELS_FILE}"),
            split: splits[id],
        });
    }
    let manifest = DatasetManifest {
        normal_values: vec![0.0; feature_names.len()],
        feature_names,
        embeddings: EMBEDDINGS_FILE.to_string(),
        signal_plan: Some(cfg.signal_plan.as_str().to_string()),
        seed: Some(cfg.seed),
        episodes: entries,
    };
    manifest.write(out)?;
    Ok(manifest)
}
