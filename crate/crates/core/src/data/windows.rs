use std::collections::BTreeMap;

use super::{ChannelSeries, DataError, Result, PRECIPITATION};
use crate::tensor::Tensor;

/// Steps per window (24 × 5 min = 2 h).
pub const WINDOW_LEN: usize = 24;

/// Windows whose precipitation sample standard deviation is at or below this are flat.
pub const FLAT_STD_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
    Oversampled,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Oversampled => "oversampled",
        }
    }
}

/// `count` windows of `window_len` steps over named channels, stored
/// `[count, window_len, channels]` row-major, with a provenance tag per window.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    data: Tensor,
    channels: Vec<String>,
    provenance: Vec<Provenance>,
}

impl WindowBatch {
    pub fn new(data: Tensor, channels: Vec<String>, provenance: Vec<Provenance>) -> Result<Self> {
        let shape = data.shape();
        if shape.len() != 3 || shape[2] != channels.len() || shape[0] != provenance.len() {
            return Err(DataError::Size(format!(
                "window tensor {:?} does not match {} channels and {} provenance tags",
                shape,
                channels.len(),
                provenance.len()
            )));
        }
        Ok(Self {
            data: data.detach(),
            channels,
            provenance,
        })
    }

    pub fn empty(window_len: usize, channels: Vec<String>) -> Self {
        let c = channels.len();
        Self {
            data: Tensor::zeros(&[0, window_len, c]),
            channels,
            provenance: Vec::new(),
        }
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn window_len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn provenance_counts(&self) -> BTreeMap<Provenance, usize> {
        let mut counts = BTreeMap::new();
        for &p in &self.provenance {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::Config(format!("batch has no channel {name}")))
    }

    fn stride(&self) -> usize {
        self.window_len() * self.num_channels()
    }

    /// Flat `[window_len × channels]` values of window `i`.
    pub fn window(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data.values()[i * s..(i + 1) * s]
    }

    /// The `window_len` values of one channel in window `i`.
    pub fn window_channel(&self, i: usize, channel: usize) -> Vec<f64> {
        self.window(i)
            .iter()
            .skip(channel)
            .step_by(self.num_channels())
            .copied()
            .collect()
    }

    /// Every value of `channel` across all windows and steps.
    pub fn channel_values(&self, channel: usize) -> Vec<f64> {
        self.data
            .values()
            .iter()
            .skip(channel)
            .step_by(self.num_channels())
            .copied()
            .collect()
    }

    /// Windows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> WindowBatch {
        let mut values = Vec::with_capacity(indices.len() * self.stride());
        for &i in indices {
            values.extend_from_slice(self.window(i));
        }
        WindowBatch {
            data: Tensor::new(vec![indices.len(), self.window_len(), self.num_channels()], values)
                .expect("selected windows fit"),
            channels: self.channels.clone(),
            provenance: indices.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn with_provenance(mut self, p: Provenance) -> WindowBatch {
        self.provenance = vec![p; self.count()];
        self
    }

    pub fn concat(&self, other: &WindowBatch) -> Result<WindowBatch> {
        if other.channels != self.channels || other.window_len() != self.window_len() {
            return Err(DataError::Size("cannot concatenate batches with different layouts".into()));
        }
        let mut values = self.data.to_vec();
        values.extend_from_slice(other.data.values());
        let mut provenance = self.provenance.clone();
        provenance.extend_from_slice(&other.provenance);
        WindowBatch::new(
            Tensor::new(
                vec![self.count() + other.count(), self.window_len(), self.num_channels()],
                values,
            )
            .expect("concatenated windows fit"),
            self.channels.clone(),
            provenance,
        )
    }
}

/// Rolling windows of `window_len` steps every `stride` steps; all tagged real.
pub fn make_windows(series: &ChannelSeries, window_len: usize, stride: usize) -> Result<WindowBatch> {
    if window_len == 0 || stride == 0 {
        return Err(DataError::Config("window length and stride must be positive".into()));
    }
    let n = series.len();
    if n < window_len {
        return Err(DataError::Size(format!(
            "series of {n} steps is shorter than one {window_len}-step window"
        )));
    }
    let c = series.values.len();
    let count = (n - window_len) / stride + 1;
    let mut values = Vec::with_capacity(count * window_len * c);
    for w in 0..count {
        let start = w * stride;
        for t in start..start + window_len {
            for ch in &series.values {
                values.push(ch[t]);
            }
        }
    }
    WindowBatch::new(
        Tensor::new(vec![count, window_len, c], values).expect("window buffer fits"),
        series.names.clone(),
        vec![Provenance::Real; count],
    )
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Drops windows whose precipitation channel does not vary; order is kept.
pub fn filter_flat_windows(batch: &WindowBatch) -> Result<WindowBatch> {
    let rain = batch.channel_index(PRECIPITATION)?;
    let keep: Vec<usize> = (0..batch.count())
        .filter(|&i| sample_std(&batch.window_channel(i, rain)) > FLAT_STD_THRESHOLD)
        .collect();
    Ok(batch.select(&keep))
}

/// Per-channel mean over every window and step.
pub fn compute_start_token(batch: &WindowBatch) -> Result<Tensor> {
    if batch.is_empty() {
        return Err(DataError::Size("start token needs at least one window".into()));
    }
    let n = (batch.count() * batch.window_len()) as f64;
    let means = (0..batch.num_channels())
        .map(|c| batch.channel_values(c).iter().sum::<f64>() / n)
        .collect();
    Ok(Tensor::from_vec(means))
}
