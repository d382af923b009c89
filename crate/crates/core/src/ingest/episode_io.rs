//! On-disk episode files: hourly CSV, JSON-lines notes and a JSON label file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ClinicalNote, EmbeddingTable, Episode, EpisodeLabels, PAD_INDEX};
use crate::error::{Error, Result};
use crate::ingest::tokenize::tokenize;
use crate::nn::Tensor;

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const NOTES_FILE: &str = "notes.jsonl";
pub const LABELS_FILE: &str = "labels.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteRecord {
    /// Hours since admission; non-positive values predate the stay.
    #[serde(default)]
    pub hour: Option<f64>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsRecord {
    pub mortality: Option<u8>,
    pub death_hour: Option<usize>,
    pub total_stay_hours: usize,
}

/// File contents before cleaning and tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpisode {
    pub patient_id: String,
    pub feature_names: Vec<String>,
    /// One row per hour, `None` for an empty cell.
    pub rows: Vec<Vec<Option<f64>>>,
    pub notes: Vec<NoteRecord>,
    pub labels: LabelsRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Tokens kept per note.
    pub max_note_tokens: usize,
    /// Fallback per feature when no earlier observation exists.
    pub normal_values: Vec<f64>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_note_tokens: 2000,
            normal_values: Vec::new(),
        }
    }
}

pub fn read_timeseries(path: &Path) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.get(0) != Some("hour") {
        return Err(Error::parse(path, 1, "first column must be `hour`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if record.len() != names.len() + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", names.len() + 1, record.len()),
            ));
        }
        let hour: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad hour `{}`", &record[0])))?;
        if hour != rows.len() + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected hour {}, found {hour}", rows.len() + 1),
            ));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| Error::parse(path, line, format!("bad value `{cell}`")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn read_notes(path: &Path) -> Result<Vec<NoteRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut notes = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NoteRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        notes.push(rec);
    }
    Ok(notes)
}

pub fn read_labels(path: &Path) -> Result<LabelsRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

pub fn read_raw_episode(patient_id: &str, timeseries: &Path, notes: &Path, labels: &Path) -> Result<RawEpisode> {
    let (feature_names, rows) = read_timeseries(timeseries)?;
    Ok(RawEpisode {
        patient_id: patient_id.to_string(),
        feature_names,
        rows,
        notes: read_notes(notes)?,
        labels: read_labels(labels)?,
    })
}

/// Writes the three files into `dir`, which must exist.
pub fn write_raw_episode(dir: &Path, raw: &RawEpisode) -> Result<()> {
    let ts_path = dir.join(TIMESERIES_FILE);
    let mut w = csv::Writer::from_path(&ts_path).map_err(|e| Error::parse(&ts_path, 0, e.to_string()))?;
    let csv_err = |e: csv::Error| Error::parse(&ts_path, 0, e.to_string());
    let mut header = vec!["hour".to_string()];
    header.extend(raw.feature_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in raw.rows.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&ts_path, e))?;

    let notes_path = dir.join(NOTES_FILE);
    let file = File::create(&notes_path).map_err(|e| Error::io(&notes_path, e))?;
    let mut nw = BufWriter::new(file);
    for n in &raw.notes {
        writeln!(nw, "{}", serde_json::to_string(n)?).map_err(|e| Error::io(&notes_path, e))?;
    }
    nw.flush().map_err(|e| Error::io(&notes_path, e))?;

    let labels_path = dir.join(LABELS_FILE);
    fs::write(&labels_path, serde_json::to_string(&raw.labels)? + "\n").map_err(|e| Error::io(&labels_path, e))
}

/// Cleans a raw episode: forward-fills missing values, tokenizes notes,
/// merges pre-admission notes into one note at hour 1 and derives labels.
///
/// Notes without a chart time, or charted after the stay ends, are dropped
/// with a warning.
pub fn assemble_episode(raw: &RawEpisode, table: &EmbeddingTable, opts: &IngestOptions) -> Result<Episode> {
    let t = raw.rows.len();
    let d = raw.feature_names.len();
    if t == 0 || d == 0 {
        return Err(Error::Validation(format!("{}: empty time series", raw.patient_id)));
    }
    if raw.labels.total_stay_hours != t {
        return Err(Error::Validation(format!(
            "{}: labels say {}h but time series has {t} rows",
            raw.patient_id, raw.labels.total_stay_hours
        )));
    }
    if let Some(dh) = raw.labels.death_hour {
        if dh == 0 || dh > t {
            return Err(Error::Validation(format!(
                "{}: death hour {dh} outside 1..={t}",
                raw.patient_id
            )));
        }
    }

    let mut values = Vec::with_capacity(t * d);
    let mut last: Vec<f64> = (0..d)
        .map(|j| opts.normal_values.get(j).copied().unwrap_or(0.0))
        .collect();
    for row in &raw.rows {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                last[j] = *v;
            }
        }
        values.extend_from_slice(&last);
    }
    let timeseries = Tensor::matrix(t, d, values)?;

    let mut timed: Vec<(f64, &str)> = Vec::with_capacity(raw.notes.len());
    for (i, n) in raw.notes.iter().enumerate() {
        match n.hour {
            Some(h) if h.is_finite() => timed.push((h, &n.text)),
            _ => warn!("{}: note {i} has no chart time, dropped", raw.patient_id),
        }
    }
    timed.sort_by(|a, b| a.0.total_cmp(&b.0));

    let finish = |mut ids: Vec<usize>| {
        ids.truncate(opts.max_note_tokens);
        if ids.is_empty() {
            ids.push(PAD_INDEX);
        }
        ids
    };
    let mut notes = Vec::new();
    let pre: Vec<usize> = timed
        .iter()
        .filter(|(h, _)| *h <= 0.0)
        .flat_map(|(_, text)| tokenize(text, table))
        .collect();
    if timed.iter().any(|(h, _)| *h <= 0.0) {
        notes.push(ClinicalNote {
            chart_time: 1,
            token_ids: finish(pre),
        });
    }
    for &(h, text) in timed.iter().filter(|(h, _)| *h > 0.0) {
        let chart_time = h.ceil() as usize;
        if chart_time > t {
            warn!("{}: note at hour {h} after end of stay, dropped", raw.patient_id);
            continue;
        }
        notes.push(ClinicalNote {
            chart_time,
            token_ids: finish(tokenize(text, table)),
        });
    }

    let labels = EpisodeLabels::derive(raw.labels.mortality, raw.labels.death_hour, t)?;
    Ok(Episode {
        patient_id: raw.patient_id.clone(),
        timeseries,
        notes,
        labels,
    })
}

pub fn read_episode(
    patient_id: &str,
    timeseries: &Path,
    notes: &Path,
    labels: &Path,
    table: &EmbeddingTable,
    opts: &IngestOptions,
) -> Result<Episode> {
    assemble_episode(&read_raw_episode(patient_id, timeseries, notes, labels)?, table, opts)
}
