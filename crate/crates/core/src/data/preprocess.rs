use super::{
    filter_flat_windows, make_windows, DataError, Result, SeriesDataset, WindowBatch, FLOW, PRECIPITATION,
    WINDOW_LEN,
};

/// Named channel columns of equal length, with a flag per channel recording
/// whether `log1p` has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    pub names: Vec<String>,
    pub log1p: Vec<bool>,
    pub values: Vec<Vec<f64>>,
}

impl ChannelSeries {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| DataError::Config(format!("series has no channel {name}")))
    }
}

/// `flow ← log1p(flow)`; the flow channel is flagged so inverses know to apply `expm1`.
pub fn log_transform_flow(data: &ChannelSeries) -> Result<ChannelSeries> {
    let c = data.index(FLOW)?;
    if data.log1p[c] {
        return Err(DataError::Config("flow channel is already log-transformed".into()));
    }
    if let Some(i) = data.values[c].iter().position(|&q| !(q >= 0.0)) {
        return Err(DataError::Domain(format!("flow at sample {i} is negative")));
    }
    let mut out = data.clone();
    out.values[c] = data.values[c].iter().map(|q| q.ln_1p()).collect();
    out.log1p[c] = true;
    Ok(out)
}

pub fn expm1_inverse(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.exp_m1()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub log1p: bool,
}

/// Per-channel standardization statistics, fitted once on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocStats {
    pub channels: Vec<ChannelStats>,
}

impl PreprocStats {
    pub fn channel(&self, name: &str) -> Result<&ChannelStats> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| DataError::Config(format!("no statistics for channel {name}")))
    }

    /// Standardized value back to data units (undoing `log1p` where flagged).
    pub fn to_physical(&self, channel: usize, value: f64) -> f64 {
        let s = &self.channels[channel];
        let v = value * s.std + s.mean;
        if s.log1p {
            v.exp_m1()
        } else {
            v
        }
    }

    /// Undoes standardization only; `log1p` flags carry over.
    pub fn inverse_standardize(&self, data: &ChannelSeries) -> Result<ChannelSeries> {
        self.check_layout(data)?;
        let values = data
            .values
            .iter()
            .zip(&self.channels)
            .map(|(v, s)| v.iter().map(|x| x * s.std + s.mean).collect())
            .collect();
        Ok(ChannelSeries {
            values,
            ..data.clone()
        })
    }

    /// Full inverse to data units: un-standardize, then `expm1` on log channels.
    pub fn to_physical_series(&self, data: &ChannelSeries) -> Result<ChannelSeries> {
        let mut out = self.inverse_standardize(data)?;
        for (c, s) in self.channels.iter().enumerate() {
            if s.log1p {
                out.values[c] = expm1_inverse(&out.values[c]);
                out.log1p[c] = false;
            }
        }
        Ok(out)
    }

    fn check_layout(&self, data: &ChannelSeries) -> Result<()> {
        let same_names = data.names.len() == self.channels.len()
            && data.names.iter().zip(&self.channels).all(|(n, s)| *n == s.name);
        if !same_names {
            return Err(DataError::Config(format!(
                "statistics cover {:?}, data has {:?}",
                self.channels.iter().map(|c| &c.name).collect::<Vec<_>>(),
                data.names
            )));
        }
        if data.log1p.iter().zip(&self.channels).any(|(&l, s)| l != s.log1p) {
            return Err(DataError::Config("log-transform flags differ from the fitted statistics".into()));
        }
        Ok(())
    }

    /// FNV-1a over names, flags and the bit patterns of every statistic.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for c in &self.channels {
            eat(c.name.as_bytes());
            eat(&[u8::from(c.log1p)]);
            eat(&c.mean.to_bits().to_le_bytes());
            eat(&c.std.to_bits().to_le_bytes());
        }
        h
    }
}

fn fit_channel(name: &str, v: &[f64], log1p: bool) -> Result<ChannelStats> {
    if v.is_empty() {
        return Err(DataError::Size(format!("channel {name} is empty")));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(DataError::DegenerateChannel(name.to_string()));
    }
    Ok(ChannelStats {
        name: name.to_string(),
        mean,
        std,
        log1p,
    })
}

/// `x' = (x − μ)/σ` per channel with population σ. With `stats` the stored
/// values are reused (test-split path); otherwise they are fitted on `data`.
pub fn standardize(data: &ChannelSeries, stats: Option<&PreprocStats>) -> Result<(ChannelSeries, PreprocStats)> {
    let stats = match stats {
        Some(s) => {
            s.check_layout(data)?;
            s.clone()
        }
        None => PreprocStats {
            channels: data
                .names
                .iter()
                .zip(&data.values)
                .zip(&data.log1p)
                .map(|((n, v), &l)| fit_channel(n, v, l))
                .collect::<Result<_>>()?,
        },
    };
    let values = data
        .values
        .iter()
        .zip(&stats.channels)
        .map(|(v, s)| v.iter().map(|x| (x - s.mean) / s.std).collect())
        .collect();
    Ok((
        ChannelSeries {
            values,
            ..data.clone()
        },
        stats,
    ))
}

/// Chronological split sizes, in windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    pub train_windows: usize,
    pub test_windows: usize,
    pub stride: usize,
}

impl SplitConfig {
    pub fn region_len(&self, windows: usize) -> usize {
        if windows == 0 {
            0
        } else {
            (windows - 1) * self.stride + WINDOW_LEN
        }
    }

    pub fn required_len(&self) -> usize {
        self.region_len(self.train_windows) + self.region_len(self.test_windows)
    }
}

/// Output of the preprocessing pipeline.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stats: PreprocStats,
    /// Every window of the training region.
    pub train: WindowBatch,
    /// Training windows with varying precipitation: the GAN corpus.
    pub wet_train: WindowBatch,
    /// Every window of the held-out region, standardized with training statistics.
    pub test: WindowBatch,
}

/// log1p(flow) → standardize (fit on the training region) → windows → flat filter.
///
/// The training region is the first `region_len(train_windows)` steps and the
/// test region immediately follows it, so no step is shared between splits.
pub fn prepare_splits(dataset: &SeriesDataset, split: &SplitConfig) -> Result<PreparedData> {
    dataset.validate()?;
    if split.train_windows == 0 || split.stride == 0 {
        return Err(DataError::Config("need at least one training window and a positive stride".into()));
    }
    let need = split.required_len();
    if dataset.len() < need {
        return Err(DataError::Size(format!(
            "{} train and {} test windows need {} steps, series has {}",
            split.train_windows,
            split.test_windows,
            need,
            dataset.len()
        )));
    }
    let train_end = split.region_len(split.train_windows);
    let channels = [PRECIPITATION, FLOW];

    let train_raw = log_transform_flow(&dataset.slice(0, train_end).channels(&channels)?)?;
    let (train_std, stats) = standardize(&train_raw, None)?;
    let train = make_windows(&train_std, WINDOW_LEN, split.stride)?;
    let wet_train = filter_flat_windows(&train)?;

    let test = if split.test_windows > 0 {
        let test_raw = log_transform_flow(&dataset.slice(train_end, need).channels(&channels)?)?;
        let (test_std, _) = standardize(&test_raw, Some(&stats))?;
        make_windows(&test_std, WINDOW_LEN, split.stride)?
    } else {
        WindowBatch::empty(WINDOW_LEN, channels.iter().map(|s| s.to_string()).collect())
    };
    Ok(PreparedData {
        stats,
        train,
        wet_train,
        test,
    })
}
