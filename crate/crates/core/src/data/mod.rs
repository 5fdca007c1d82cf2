//! Series ingestion, the synthetic catchment, preprocessing, and windowing.

mod csv;
mod preprocess;
mod synth;
mod windows;

use chrono::NaiveDateTime;
use thiserror::Error;

pub use self::csv::{load_csv, parse_csv, write_csv, CSV_HEADER};
pub use preprocess::{
    expm1_inverse, log_transform_flow, prepare_splits, standardize, ChannelSeries, ChannelStats,
    PreparedData, PreprocStats, SplitConfig,
};
pub use synth::{linear_reservoir, synth_catchment, CatchmentConfig};
pub use windows::{
    compute_start_token, filter_flat_windows, make_windows, Provenance, WindowBatch, FLAT_STD_THRESHOLD,
    WINDOW_LEN,
};

/// Sampling interval of every series, in seconds.
pub const STEP_SECONDS: i64 = 300;

pub const PRECIPITATION: &str = "precipitation_mm";
pub const TEMPERATURE: &str = "temperature_c";
pub const FLOW: &str = "flow";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("channel {0} has zero variance and cannot be standardized")]
    DegenerateChannel(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A 5-minute multichannel series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub timestamps: Vec<NaiveDateTime>,
    pub precipitation_mm: Vec<f64>,
    pub temperature_c: Vec<f64>,
    pub flow: Vec<f64>,
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Checks equal channel lengths, uniform spacing and non-negativity.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.precipitation_mm.len() != n || self.temperature_c.len() != n || self.flow.len() != n {
            return Err(DataError::Format("channels have different lengths".into()));
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if (w[1] - w[0]).num_seconds() != STEP_SECONDS {
                return Err(DataError::Format(format!(
                    "spacing between samples {} and {} is not {} s",
                    i,
                    i + 1,
                    STEP_SECONDS
                )));
            }
        }
        if let Some(i) = self.precipitation_mm.iter().position(|&p| !(p >= 0.0)) {
            return Err(DataError::Domain(format!("precipitation at sample {i} is negative")));
        }
        if let Some(i) = self.flow.iter().position(|&q| !(q >= 0.0)) {
            return Err(DataError::Domain(format!("flow at sample {i} is negative")));
        }
        Ok(())
    }

    /// Contiguous sub-range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> SeriesDataset {
        SeriesDataset {
            timestamps: self.timestamps[start..end].to_vec(),
            precipitation_mm: self.precipitation_mm[start..end].to_vec(),
            temperature_c: self.temperature_c[start..end].to_vec(),
            flow: self.flow[start..end].to_vec(),
        }
    }

    /// Named channels in the order given.
    pub fn channels(&self, names: &[&str]) -> Result<ChannelSeries> {
        let mut values = Vec::with_capacity(names.len());
        for &name in names {
            values.push(match name {
                PRECIPITATION => self.precipitation_mm.clone(),
                TEMPERATURE => self.temperature_c.clone(),
                FLOW => self.flow.clone(),
                other => return Err(DataError::Config(format!("unknown channel {other}"))),
            });
        }
        Ok(ChannelSeries {
            names: names.iter().map(|s| s.to_string()).collect(),
            log1p: vec![false; names.len()],
            values,
        })
    }
}
