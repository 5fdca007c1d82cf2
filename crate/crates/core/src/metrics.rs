//! Histogram divergences for generated windows and error metrics for flow forecasts.

use thiserror::Error;

use crate::data::WindowBatch;

pub const DEFAULT_BINS: usize = 50;
/// Additive mass per bin so every probability is positive.
pub const SMOOTHING: f64 = 1e-10;
pub const PEAK_QUANTILE: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("size error: {0}")]
    Size(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Equal-width histogram with ε-smoothed probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    probabilities: Vec<f64>,
}

impl Histogram {
    /// Builds a histogram directly from bin counts over `edges` (`counts.len() + 1` edges).
    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 || edges.len() != counts.len() + 1 {
            return Err(MetricError::Size(format!(
                "{} edges cannot bound {} bins (need at least 2 bins)",
                edges.len(),
                counts.len()
            )));
        }
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + counts.len() as f64 * SMOOTHING;
        let probabilities = counts.iter().map(|&c| (c as f64 + SMOOTHING) / denom).collect();
        Ok(Self {
            edges,
            counts,
            probabilities,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check_compatible(&self, other: &Histogram) -> Result<()> {
        let same = self.edges.len() == other.edges.len()
            && self.edges.iter().zip(&other.edges).all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            Ok(())
        } else {
            Err(MetricError::Contract("histograms have different bin edges".into()))
        }
    }
}

/// Counts `values` into `bins` equal-width bins over `range`.
///
/// A value equal to the upper edge lands in the last bin. A zero-width range
/// is widened to one unit centred on its value.
pub fn histogram_estimate(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    if values.is_empty() {
        return Err(MetricError::Size("cannot estimate a histogram from no values".into()));
    }
    if bins < 2 {
        return Err(MetricError::Size(format!("need at least 2 bins, got {bins}")));
    }
    let (mut lo, mut hi) = range;
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(MetricError::Contract(format!("invalid range [{lo}, {hi}]")));
    }
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            return Err(MetricError::Contract(format!("value {v} outside range [{lo}, {hi}]")));
        }
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Histogram::from_counts(edges, counts)
}

/// Joint min/max of two samples.
pub fn joint_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// `Σ p·ln(p/q)` in nats.
pub fn kld(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    Ok(kld_probs(&p.probabilities, &q.probabilities))
}

fn kld_probs(p: &[f64], q: &[f64]) -> f64 {
    // Rounding can leave a few ulps below zero when p ≈ q.
    p.iter().zip(q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum::<f64>().max(0.0)
}

/// `½·KLD(P‖M) + ½·KLD(Q‖M)` with `M = ½(P + Q)`, bounded by ln 2.
pub fn jsd_histograms(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    let m: Vec<f64> = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Ok(0.5 * kld_probs(&p.probabilities, &m) + 0.5 * kld_probs(&q.probabilities, &m))
}

/// JSD between two point sets, binned over their joint range.
pub fn jsd_values(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Size("JSD needs two non-empty samples".into()));
    }
    let range = joint_range(a, b);
    jsd_histograms(&histogram_estimate(a, bins, range)?, &histogram_estimate(b, bins, range)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsdReport {
    pub channels: Vec<String>,
    pub per_channel: Vec<f64>,
    pub mean: f64,
}

/// Per-channel marginal JSD between two window batches; time order within
/// windows is ignored.
pub fn jsd(real: &WindowBatch, fake: &WindowBatch, bins: usize) -> Result<JsdReport> {
    if real.is_empty() || fake.is_empty() {
        return Err(MetricError::Size("JSD needs two non-empty batches".into()));
    }
    if real.channels() != fake.channels() {
        return Err(MetricError::Contract(format!(
            "channel mismatch: {:?} vs {:?}",
            real.channels(),
            fake.channels()
        )));
    }
    let per_channel = (0..real.num_channels())
        .map(|c| jsd_values(&real.channel_values(c), &fake.channel_values(c), bins))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_channel.iter().sum::<f64>() / per_channel.len() as f64;
    Ok(JsdReport {
        channels: real.channels().to_vec(),
        per_channel,
        mean,
    })
}

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<()> {
    if pred.len() != obs.len() {
        return Err(MetricError::Shape(format!("{} predictions for {} observations", pred.len(), obs.len())));
    }
    if pred.is_empty() {
        return Err(MetricError::Size("no values to compare".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    Ok(pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum::<f64>() / pred.len() as f64)
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricError::Size("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MetricError::Contract(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Ok(match sorted.get(i + 1) {
        Some(&next) if frac > 0.0 => sorted[i] + frac * (next - sorted[i]),
        _ => sorted[i],
    })
}

/// Forecast errors split by an observed-flow threshold. `None` marks a metric
/// whose mask is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakMetrics {
    pub threshold: f64,
    pub mae: f64,
    pub peak_count: usize,
    pub dry_count: usize,
    pub peak_mae: Option<f64>,
    pub dry_mae: Option<f64>,
    /// Mean signed error on peak steps; negative means underestimation.
    pub peak_bias: Option<f64>,
}

/// Steps whose observation exceeds the `quantile` of `obs` are peaks; all others are dry.
pub fn peak_event_metrics(pred: &[f64], obs: &[f64], quantile_level: f64) -> Result<PeakMetrics> {
    check_pair(pred, obs)?;
    let threshold = quantile(obs, quantile_level)?;
    let (mut peak_abs, mut peak_signed, mut dry_abs) = (0.0, 0.0, 0.0);
    let (mut peak_count, mut dry_count) = (0usize, 0usize);
    for (&p, &o) in pred.iter().zip(obs) {
        if o > threshold {
            peak_abs += (p - o).abs();
            peak_signed += p - o;
            peak_count += 1;
        } else {
            dry_abs += (p - o).abs();
            dry_count += 1;
        }
    }
    let avg = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(PeakMetrics {
        threshold,
        mae: mae(pred, obs)?,
        peak_count,
        dry_count,
        peak_mae: avg(peak_abs, peak_count),
        dry_mae: avg(dry_abs, dry_count),
        peak_bias: avg(peak_signed, peak_count),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bin(counts: [u64; 2]) -> Histogram {
        Histogram::from_counts(vec![0.0, 0.5, 1.0], counts.to_vec()).unwrap()
    }

    #[test]
    fn kld_hand_cases() {
        let p = two_bin([1, 1]);
        let q = two_bin([1, 3]);
        // independent evaluation of Σ p ln(p/q)
        let forward = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let reverse = 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        assert!((kld(&p, &q).unwrap() - forward).abs() < 1e-9);
        assert!((kld(&p, &q).unwrap() - 0.1438).abs() < 1e-4);
        assert!((kld(&q, &p).unwrap() - reverse).abs() < 1e-9);
        assert!((kld(&q, &p).unwrap() - 0.1308).abs() < 1e-4);
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_edges_rejected() {
        let p = two_bin([1, 1]);
        let q = Histogram::from_counts(vec![0.0, 0.4, 1.0], vec![1, 1]).unwrap();
        assert!(matches!(kld(&p, &q), Err(MetricError::Contract(_))));
    }

    #[test]
    fn histogram_edges_and_smoothing() {
        let h = histogram_estimate(&[0.0, 0.25, 1.0, 1.0], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts(), &[1, 1, 0, 2]);
        let sum: f64 = h.probabilities().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(h.probabilities().iter().all(|&p| p > 0.0));
        assert!(histogram_estimate(&[], 4, (0.0, 1.0)).is_err());
        assert!(histogram_estimate(&[2.0], 4, (0.0, 1.0)).is_err());
    }

    #[test]
    fn point_mass_histogram() {
        let h = histogram_estimate(&[0.3; 100], DEFAULT_BINS, (0.0, 1.0)).unwrap();
        let top = h.probabilities().iter().cloned().fold(0.0, f64::max);
        assert!((top - 1.0).abs() < 1e-8);
        assert_eq!(h.probabilities().iter().filter(|&&p| p < 1e-9).count(), DEFAULT_BINS - 1);
    }

    #[test]
    fn jsd_extremes() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        assert!(jsd_values(&a, &a, DEFAULT_BINS).unwrap().abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        let d = jsd_values(&a, &b, DEFAULT_BINS).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-8, "{d}");
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(MetricError::Shape(_))));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&[7.0], 0.95).unwrap(), 7.0);
        assert_eq!(quantile(&[0.0, 10.0], 1.0).unwrap(), 10.0);
    }

    #[test]
    fn peak_metrics_examples() {
        let obs: Vec<f64> = (0..100).map(f64::from).collect();
        let pred: Vec<f64> = obs.iter().map(|&o| if o > 94.05 { o - 2.0 } else { o + 0.5 }).collect();
        let m = peak_event_metrics(&pred, &obs, PEAK_QUANTILE).unwrap();
        assert_eq!(m.peak_count, 5);
        assert_eq!(m.peak_count + m.dry_count, 100);
        assert_eq!(m.peak_bias, Some(-2.0));
        assert_eq!(m.peak_mae, Some(2.0));
        assert_eq!(m.dry_mae, Some(0.5));

        let flat = vec![1.0; 10];
        let m = peak_event_metrics(&[1.5; 10], &flat, PEAK_QUANTILE).unwrap();
        assert_eq!(m.peak_mae, None);
        assert_eq!(m.peak_bias, None);
        assert_eq!(m.dry_mae, Some(m.mae));
    }
}
