//! ICU episodes, task labels and the frozen word-embedding table.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// In-hospital mortality is predicted from the first two days of data.
pub const IHM_HOURS: usize = 48;
/// Sequential tasks predict at every hour after the first four.
pub const FIRST_PREDICTION_HOUR: usize = 5;
/// Decompensation horizon.
pub const DECOMP_WINDOW_HOURS: usize = 24;
pub const LOS_BUCKETS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ihm,
    Decomp,
    Los,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ihm, Task::Decomp, Task::Los];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ihm => "ihm",
            Task::Decomp => "decomp",
            Task::Los => "los",
        }
    }

    /// Width of the prediction head.
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Ihm | Task::Decomp => 1,
            Task::Los => LOS_BUCKETS,
        }
    }

    pub fn is_sequential(self) -> bool {
        !matches!(self, Task::Ihm)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ihm" => Ok(Task::Ihm),
            "decomp" => Ok(Task::Decomp),
            "los" => Ok(Task::Los),
            other => Err(Error::Validation(format!(
                "unknown task `{other}` (expected ihm, decomp or los)"
            ))),
        }
    }
}

/// Maps remaining stay (hours) to one of ten buckets: one per day for the
/// first eight days, then 8–14 days, then 14+ days.
pub fn bucketize_los(remaining_hours: f64) -> Result<usize> {
    if !(remaining_hours >= 0.0) {
        return Err(Error::Validation(format!(
            "remaining stay must be non-negative, got {remaining_hours}"
        )));
    }
    let days = remaining_hours / 24.0;
    Ok(if days < 8.0 {
        days.floor() as usize
    } else if days < 14.0 {
        8
    } else {
        9
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClinicalNote {
    /// 1-based hour the note was charted.
    pub chart_time: usize,
    pub token_ids: Vec<usize>,
}

/// Labels for all three tasks. Sequential labels cover hours
/// `FIRST_PREDICTION_HOUR..=T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeLabels {
    pub mortality: Option<u8>,
    pub decompensation: Vec<u8>,
    /// `None` when the patient died in the ICU; such stays are excluded from
    /// length-of-stay training.
    pub los_bucket: Option<Vec<usize>>,
}

impl EpisodeLabels {
    /// Derives hourly labels from the death hour and the stay length.
    ///
    /// `d_t = 1` iff death falls in `(t, t + 24]`; `l_t` buckets `T - t`.
    pub fn derive(mortality: Option<u8>, death_hour: Option<usize>, stay_hours: usize) -> Result<Self> {
        if let Some(m) = mortality {
            if m > 1 {
                return Err(Error::Validation(format!("mortality label must be 0 or 1, got {m}")));
            }
        }
        let hours = FIRST_PREDICTION_HOUR..=stay_hours;
        let decompensation = hours
            .clone()
            .map(|t| match death_hour {
                Some(d) => u8::from(d > t && d <= t + DECOMP_WINDOW_HOURS),
                None => 0,
            })
            .collect();
        let los_bucket = match death_hour {
            Some(_) => None,
            None => Some(
                hours
                    .map(|t| bucketize_los((stay_hours - t) as f64))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(Self {
            mortality,
            decompensation,
            los_bucket,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub patient_id: String,
    /// `T × D`, one row per hour.
    pub timeseries: Tensor,
    /// Sorted by chart time.
    pub notes: Vec<ClinicalNote>,
    pub labels: EpisodeLabels,
}

impl Episode {
    pub fn stay_hours(&self) -> usize {
        self.timeseries.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.timeseries.cols()
    }

    /// Number of hourly predictions for sequential tasks.
    pub fn num_prediction_steps(&self) -> usize {
        self.stay_hours().saturating_sub(FIRST_PREDICTION_HOUR - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ShortStay { hours: usize, required: usize },
    NoNotes,
    NoNotesBeforeCutoff { cutoff: usize },
    NoteOutOfRange { index: usize, chart_time: usize, stay_hours: usize },
    NotesUnsorted { index: usize },
    EmptyNote { index: usize },
    MissingMortality,
    DiedInIcu,
    LabelLength { task: Task, expected: usize, found: usize },
    NonFiniteFeature,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShortStay { hours, required } => {
                write!(f, "stay shorter than {required}h ({hours}h)")
            }
            Violation::NoNotes => f.write_str("patient without notes"),
            Violation::NoNotesBeforeCutoff { cutoff } => {
                write!(f, "no notes charted within the first {cutoff}h")
            }
            Violation::NoteOutOfRange {
                index,
                chart_time,
                stay_hours,
            } => write!(
                f,
                "note {index} charted at hour {chart_time}, outside 1..={stay_hours}"
            ),
            Violation::NotesUnsorted { index } => {
                write!(f, "note {index} charted before its predecessor")
            }
            Violation::EmptyNote { index } => write!(f, "note {index} has no tokens"),
            Violation::MissingMortality => f.write_str("mortality label missing"),
            Violation::DiedInIcu => f.write_str("died in ICU (excluded from length of stay)"),
            Violation::LabelLength {
                task,
                expected,
                found,
            } => write!(f, "{task} labels: expected {expected}, found {found}"),
            Violation::NonFiniteFeature => f.write_str("non-finite time-series value"),
        }
    }
}

/// Checks the structural invariants plus the requirements of `task`.
/// Never fails; an empty list means the episode is usable.
pub fn validate_episode(e: &Episode, task: Task) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = e.stay_hours();
    if e.timeseries.values().iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFiniteFeature);
    }
    if e.notes.is_empty() {
        out.push(Violation::NoNotes);
    }
    for (i, n) in e.notes.iter().enumerate() {
        if n.chart_time < 1 || n.chart_time > t {
            out.push(Violation::NoteOutOfRange {
                index: i,
                chart_time: n.chart_time,
                stay_hours: t,
            });
        }
        if i > 0 && n.chart_time < e.notes[i - 1].chart_time {
            out.push(Violation::NotesUnsorted { index: i });
        }
        if n.token_ids.is_empty() {
            out.push(Violation::EmptyNote { index: i });
        }
    }
    let steps = e.num_prediction_steps();
    match task {
        Task::Ihm => {
            if t < IHM_HOURS {
                out.push(Violation::ShortStay {
                    hours: t,
                    required: IHM_HOURS,
                });
            }
            if e.labels.mortality.is_none() {
                out.push(Violation::MissingMortality);
            }
            if !e.notes.is_empty() && e.notes[0].chart_time > IHM_HOURS {
                out.push(Violation::NoNotesBeforeCutoff { cutoff: IHM_HOURS });
            }
        }
        Task::Decomp | Task::Los => {
            if steps == 0 {
                out.push(Violation::ShortStay {
                    hours: t,
                    required: FIRST_PREDICTION_HOUR,
                });
            }
            let found = match task {
                Task::Decomp => Some(e.labels.decompensation.len()),
                _ => e.labels.los_bucket.as_ref().map(Vec::len),
            };
            match found {
                None => out.push(Violation::DiedInIcu),
                Some(found) if found != steps => out.push(Violation::LabelLength {
                    task,
                    expected: steps,
                    found,
                }),
                Some(_) => {}
            }
        }
    }
    out
}

/// Frozen word vectors. Row 0 is the all-zero vector used for padding and
/// out-of-vocabulary tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    vectors: Tensor,
}

pub const PAD_INDEX: usize = 0;

impl EmbeddingTable {
    /// `vectors` must include the reserved zero row at index 0.
    pub fn new(vocab: HashMap<String, usize>, vectors: Tensor) -> Result<Self> {
        if vectors.shape().len() != 2 {
            return Err(Error::Validation("embedding matrix must be 2-D".into()));
        }
        if vectors.row(PAD_INDEX).iter().any(|&v| v != 0.0) {
            return Err(Error::Validation("embedding row 0 must be the zero vector".into()));
        }
        if let Some((tok, &idx)) = vocab
            .iter()
            .find(|(_, &i)| i == PAD_INDEX || i >= vectors.rows())
        {
            return Err(Error::Validation(format!(
                "token `{tok}` maps to invalid row {idx}"
            )));
        }
        Ok(Self { vocab, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Rows including the reserved one.
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(PAD_INDEX)
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vocab(&self) -> &HashMap<String, usize> {
        &self.vocab
    }

    /// Looks up `ids` into an `n × E` matrix; unknown ids map to the zero row.
    pub fn embed(&self, ids: &[usize]) -> Tensor {
        let e = self.dim();
        let mut values = Vec::with_capacity(ids.len().max(1) * e);
        for &id in ids {
            let id = if id < self.len() { id } else { PAD_INDEX };
            values.extend_from_slice(self.vectors.row(id));
        }
        if ids.is_empty() {
            values.resize(e, 0.0);
            return Tensor::matrix(1, e, values).expect("shape matches");
        }
        Tensor::matrix(ids.len(), e, values).expect("shape matches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(hours: usize, note_times: &[usize], mortality: Option<u8>, death: Option<usize>) -> Episode {
        Episode {
            patient_id: "p".into(),
            timeseries: Tensor::zeros(&[hours, 2]),
            notes: note_times
                .iter()
                .map(|&c| ClinicalNote {
                    chart_time: c,
                    token_ids: vec![1, 2],
                })
                .collect(),
            labels: EpisodeLabels::derive(mortality, death, hours).unwrap(),
        }
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(bucketize_los(12.0).unwrap(), 0);
        assert_eq!(bucketize_los(25.0).unwrap(), 1);
        assert_eq!(bucketize_los(15.0 * 24.0).unwrap(), 9);
        assert!(bucketize_los(-1.0).is_err());
        assert!(bucketize_los(f64::NAN).is_err());
    }

    #[test]
    fn ihm_valid_episode() {
        assert!(validate_episode(&episode(48, &[1], Some(0), None), Task::Ihm).is_empty());
    }

    #[test]
    fn ihm_short_stay() {
        let v = validate_episode(&episode(47, &[1], Some(0), None), Task::Ihm);
        assert!(v.iter().any(|x| x.to_string().contains("stay shorter than 48h")), "{v:?}");
    }

    #[test]
    fn no_notes() {
        let v = validate_episode(&episode(60, &[], Some(0), None), Task::Decomp);
        assert!(v.iter().any(|x| x.to_string() == "patient without notes"));
    }

    #[test]
    fn unsorted_and_out_of_range_notes() {
        let v = validate_episode(&episode(10, &[5, 3, 11], None, None), Task::Decomp);
        assert!(v.contains(&Violation::NotesUnsorted { index: 1 }));
        assert!(v.iter().any(|x| matches!(x, Violation::NoteOutOfRange { index: 2, .. })));
    }

    #[test]
    fn los_excludes_deaths() {
        let e = episode(30, &[1], None, Some(30));
        assert!(validate_episode(&e, Task::Los).contains(&Violation::DiedInIcu));
        assert!(validate_episode(&e, Task::Decomp).is_empty());
    }

    #[test]
    fn derived_labels() {
        let l = EpisodeLabels::derive(Some(1), Some(30), 30).unwrap();
        // hours 5..=30; positive iff 30 in (t, t+24] i.e. t in 6..=29
        assert_eq!(l.decompensation.len(), 26);
        assert_eq!(l.decompensation[0], 0);
        assert!(l.decompensation[1..25].iter().all(|&d| d == 1));
        assert_eq!(l.decompensation[25], 0);
        assert!(l.los_bucket.is_none());

        let l = EpisodeLabels::derive(Some(0), None, 53).unwrap();
        let los = l.los_bucket.unwrap();
        assert_eq!(los.len(), 49);
        assert_eq!(los[0], 2); // 48h remaining at t=5
        assert_eq!(*los.last().unwrap(), 0);
    }

    #[test]
    fn embedding_lookup_zero_for_oov() {
        let vocab = HashMap::from([("a".to_string(), 1), ("b".to_string(), 2)]);
        let vectors = Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = EmbeddingTable::new(vocab, vectors).unwrap();
        assert_eq!(t.index_of("zzz"), PAD_INDEX);
        let m = t.embed(&[2, 0, 1]);
        assert_eq!(m.values(), &[3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
    }
}
