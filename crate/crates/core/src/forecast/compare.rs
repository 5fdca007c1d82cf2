use super::{split_channels, ForecastError, ForecastModel, Result};
use crate::data::{PreprocStats, Provenance, WindowBatch, FLOW, WINDOW_LEN};
use crate::metrics::{mae, peak_event_metrics, quantile, PeakMetrics};

/// Metrics of one model over the whole test set, in physical flow units.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub name: String,
    pub metrics: PeakMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowError {
    pub window: usize,
    pub model: String,
    pub mae: f64,
    pub max_observed: f64,
    pub max_predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ModelRow>,
    pub per_window: Vec<WindowError>,
    pub threshold: f64,
}

impl Comparison {
    pub fn row(&self, name: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Augmented model beats the oversampling baseline on peaks.
    pub fn gan_beats_oversample_on_peaks(&self) -> Option<bool> {
        let gan = self.row("gan")?.metrics.peak_mae?;
        let over = self.row("oversample")?.metrics.peak_mae?;
        Some(gan < over)
    }

    /// Plain training is at least as good as both balanced variants in dry weather.
    pub fn plain_best_in_dry_weather(&self) -> Option<bool> {
        let plain = self.row("plain")?.metrics.dry_mae?;
        let gan = self.row("gan")?.metrics.dry_mae?;
        let over = self.row("oversample")?.metrics.dry_mae?;
        Some(plain <= gan && plain <= over)
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
        let mut s = format!("peak threshold (flow units): {:.4}\n", self.threshold);
        s.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
            "model", "mae", "dry_mae", "peak_mae", "peak_bias", "peaks", "dry"
        ));
        for r in &self.rows {
            let m = &r.metrics;
            s.push_str(&format!(
                "{:<12} {:>10.4} {:>10} {:>10} {:>10} {:>8} {:>8}\n",
                r.name,
                m.mae,
                fmt(m.dry_mae),
                fmt(m.peak_mae),
                fmt(m.peak_bias),
                m.peak_count,
                m.dry_count
            ));
        }
        let verdict = |v: Option<bool>| v.map_or("undefined", |b| if b { "yes" } else { "no" });
        s.push_str(&format!(
            "gan peak_mae < oversample peak_mae: {}\n",
            verdict(self.gan_beats_oversample_on_peaks())
        ));
        s.push_str(&format!(
            "plain dry_mae <= balanced variants: {}\n",
            verdict(self.plain_best_in_dry_weather())
        ));
        s
    }

    pub fn per_window_csv(&self) -> String {
        let mut s = String::from("window,model,mae,max_observed,max_predicted\n");
        for e in &self.per_window {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.window, e.model, e.mae, e.max_observed, e.max_predicted
            ));
        }
        s
    }
}

/// Evaluates every model on the same real test windows. Predictions and
/// observations are mapped back to flow units with the training statistics
/// before scoring; peaks are steps above the `quantile_level` of observed flow.
pub fn compare_experiments(
    models: &[(&str, &ForecastModel)],
    test: &WindowBatch,
    stats: &PreprocStats,
    quantile_level: f64,
) -> Result<Comparison> {
    if test.is_empty() || test.provenance().iter().any(|&p| p != Provenance::Real) {
        return Err(ForecastError::Config("test set must be non-empty and contain only real windows".into()));
    }
    let stat_ch = stats
        .channels
        .iter()
        .position(|c| c.name == FLOW)
        .ok_or_else(|| ForecastError::Config("statistics have no flow channel".into()))?;
    let (rain, flow) = split_channels(test)?;
    let obs: Vec<f64> = flow.values().iter().map(|&v| stats.to_physical(stat_ch, v)).collect();
    let threshold = quantile(&obs, quantile_level)?;

    let mut rows = Vec::new();
    let mut per_window = Vec::new();
    for &(name, model) in models {
        let mut pred = Vec::with_capacity(obs.len());
        for chunk in rain.values().chunks(512 * WINDOW_LEN) {
            let n = chunk.len() / WINDOW_LEN;
            let r = crate::tensor::Tensor::new(vec![n, WINDOW_LEN], chunk.to_vec())?;
            pred.extend(model.forward(&r)?.values().iter().map(|&v| stats.to_physical(stat_ch, v)));
        }
        let metrics = peak_event_metrics(&pred, &obs, quantile_level)?;
        for (w, (p, o)) in pred.chunks(WINDOW_LEN).zip(obs.chunks(WINDOW_LEN)).enumerate() {
            per_window.push(WindowError {
                window: w,
                model: name.to_string(),
                mae: mae(p, o)?,
                max_observed: o.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                max_predicted: p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }
        rows.push(ModelRow {
            name: name.to_string(),
            metrics,
        });
    }
    Ok(Comparison {
        rows,
        per_window,
        threshold,
    })
}
