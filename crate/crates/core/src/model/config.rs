use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};

/// Which inputs feed the prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Time-series LSTM only.
    Baseline,
    /// LSTM plus convolutional note features.
    MultimodalCnn,
    /// LSTM plus averaged word embeddings.
    MultimodalAvgwe,
    /// Convolutional note features only.
    TextOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextEncoder {
    Cnn,
    AvgWordEmbedding,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::TextOnly,
        Variant::MultimodalAvgwe,
        Variant::MultimodalCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::MultimodalCnn => "multimodal_cnn",
            Variant::MultimodalAvgwe => "multimodal_avgwe",
            Variant::TextOnly => "text_only",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline (No Text)",
            Variant::TextOnly => "Text-Only",
            Variant::MultimodalAvgwe => "MultiModal - Avg WE",
            Variant::MultimodalCnn => "MultiModal - 1DCNN",
        }
    }

    pub fn uses_series(self) -> bool {
        !matches!(self, Variant::TextOnly)
    }

    pub fn text_encoder(self) -> Option<TextEncoder> {
        match self {
            Variant::Baseline => None,
            Variant::MultimodalCnn | Variant::TextOnly => Some(TextEncoder::Cnn),
            Variant::MultimodalAvgwe => Some(TextEncoder::AvgWordEmbedding),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown variant `{s}` (expected baseline, multimodal_cnn, multimodal_avgwe or text_only)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub variant: Variant,
    pub lstm_hidden: usize,
    pub conv_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub decay_lambda: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub embedding_dim: usize,
    pub feature_dim: usize,
}

impl ModelConfig {
    /// Published settings: 256 LSTM units and 256 filters per width for
    /// mortality, 64 units and 128 filters for the hourly tasks.
    pub fn for_task(task: Task, variant: Variant, feature_dim: usize, embedding_dim: usize) -> Self {
        let (lstm_hidden, filters_per_width) = match task {
            Task::Ihm => (256, 256),
            Task::Decomp | Task::Los => (64, 128),
        };
        Self {
            task,
            variant,
            lstm_hidden,
            conv_widths: vec![2, 3, 4],
            filters_per_width,
            decay_lambda: 0.01,
            dropout: 0.2,
            weight_decay: 0.01,
            embedding_dim,
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.variant.uses_series() && self.lstm_hidden == 0 {
            return fail("lstm_hidden must be positive".into());
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if self.variant.text_encoder().is_some() && self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if self.variant.text_encoder() == Some(TextEncoder::Cnn) {
            if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
                return fail(format!("invalid conv widths {:?}", self.conv_widths));
            }
            let mut sorted = self.conv_widths.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.conv_widths.len() {
                return fail(format!("duplicate conv widths {:?}", self.conv_widths));
            }
            if self.filters_per_width == 0 {
                return fail("filters_per_width must be positive".into());
            }
        }
        if !(self.decay_lambda >= 0.0) || !self.decay_lambda.is_finite() {
            return fail(format!("decay_lambda must be non-negative, got {}", self.decay_lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    /// Length of the text feature vector fed to the head (0 without text).
    pub fn text_dim(&self) -> usize {
        match self.variant.text_encoder() {
            None => 0,
            Some(TextEncoder::Cnn) => self.conv_widths.len() * self.filters_per_width,
            Some(TextEncoder::AvgWordEmbedding) => self.embedding_dim,
        }
    }

    /// Every parameter the variant owns with its shape.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.lstm_hidden;
        let c = self.task.num_outputs();
        let mut out = Vec::new();
        if self.variant.uses_series() {
            out.push((names::LSTM_W_IH.into(), vec![4 * h, self.feature_dim]));
            out.push((names::LSTM_W_HH.into(), vec![4 * h, h]));
            out.push((names::LSTM_BIAS.into(), vec![4 * h]));
            out.push((names::HEAD_W_SERIES.into(), vec![c, h]));
        }
        if self.variant.text_encoder() == Some(TextEncoder::Cnn) {
            for &w in &self.conv_widths {
                out.push((
                    names::conv_kernel(w),
                    vec![self.filters_per_width, w * self.embedding_dim],
                ));
                out.push((names::conv_bias(w), vec![self.filters_per_width]));
            }
        }
        if self.variant.text_encoder().is_some() {
            out.push((names::HEAD_W_TEXT.into(), vec![c, self.text_dim()]));
        }
        out.push((names::HEAD_BIAS.into(), vec![c]));
        out
    }
}

pub mod names {
    pub const LSTM_W_IH: &str = "lstm.w_ih";
    pub const LSTM_W_HH: &str = "lstm.w_hh";
    pub const LSTM_BIAS: &str = "lstm.bias";
    pub const HEAD_W_SERIES: &str = "head.w_series";
    pub const HEAD_W_TEXT: &str = "head.w_text";
    pub const HEAD_BIAS: &str = "head.bias";

    pub fn conv_kernel(width: usize) -> String {
        format!("conv.w{width}.kernel")
    }

    pub fn conv_bias(width: usize) -> String {
        format!("conv.w{width}.bias")
    }
}
