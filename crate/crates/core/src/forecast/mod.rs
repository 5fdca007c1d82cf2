//! Window-to-window rainfall→flow forecaster, training-set augmentation and
//! the plain / oversample / GAN comparison.

mod compare;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{filter_flat_windows, DataError, Provenance, WindowBatch, FLOW, PRECIPITATION, WINDOW_LEN};
use crate::gan::{GanError, GanModel};
use crate::metrics::MetricError;
use crate::nn::{attached, AdamConfig, AdamState, GruStack, LinearLayer, NnError, Parameters};
use crate::tensor::{backward, Tape, Tensor, TensorError};

pub use compare::{compare_experiments, Comparison, ModelRow, WindowError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite training loss at epoch {epoch}, batch {batch} (last finite loss {last_loss:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        last_loss: Option<f64>,
    },
}

impl From<TensorError> for ForecastError {
    fn from(e: TensorError) -> Self {
        ForecastError::Nn(NnError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, ForecastError>;

/// Recurrent cell used by the forecaster; stored in checkpoints.
pub const CELL_KIND: &str = "gru";

/// GRU stack over the rainfall sequence with a per-step dense head to flow.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub gru: GruStack,
    pub head: LinearLayer,
}

impl ForecastModel {
    pub fn new<R: Rng + ?Sized>(hidden: usize, layers: usize, rng: &mut R) -> Self {
        Self {
            gru: GruStack::new(1, hidden, layers, rng),
            head: LinearLayer::new(hidden, 1, rng),
        }
    }

    /// `rain: [batch, 24]` → flow `[batch, 24]`, both in preprocessed units.
    pub fn forward(&self, rain: &Tensor) -> Result<Tensor> {
        let batch = match rain.shape() {
            &[b, WINDOW_LEN] => b,
            other => {
                return Err(TensorError::Shape(format!("rainfall input must be [batch, {WINDOW_LEN}], got {other:?}")).into())
            }
        };
        let hidden = self.gru.hidden_size();
        let h0 = vec![Tensor::zeros(&[batch, hidden]); self.gru.num_layers()];
        let x = rain.reshape(&[batch, WINDOW_LEN, 1])?;
        let (seq, _) = self.gru.prepare(batch)?.forward(&x, &h0)?;
        let flat = seq.reshape(&[batch * WINDOW_LEN, hidden])?;
        Ok(self.head.forward(&flat)?.reshape(&[batch, WINDOW_LEN])?)
    }
}

impl Parameters for ForecastModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .gru
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("gru.{n}"), t))
            .collect();
        out.extend(self.head.named_params().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.gru.params_mut();
        out.extend(self.head.params_mut());
        out
    }
}

/// One 24-step rainfall window (`[24]` or `[batch, 24]`) to flow of the same shape.
pub fn predict(model: &ForecastModel, rain: &Tensor) -> Result<Tensor> {
    match rain.shape() {
        &[WINDOW_LEN] => Ok(model.forward(&rain.reshape(&[1, WINDOW_LEN])?)?.reshape(&[WINDOW_LEN])?),
        &[_, WINDOW_LEN] => model.forward(rain),
        other => Err(TensorError::Shape(format!("rainfall window must have {WINDOW_LEN} steps, got {other:?}")).into()),
    }
}

/// `(rain, flow)` tensors `[count, 24]` from a window batch.
pub fn split_channels(batch: &WindowBatch) -> Result<(Tensor, Tensor)> {
    let (p, q) = (batch.channel_index(PRECIPITATION)?, batch.channel_index(FLOW)?);
    let n = batch.count();
    let take = |c: usize| -> Result<Tensor> {
        let mut v = Vec::with_capacity(n * WINDOW_LEN);
        for i in 0..n {
            v.extend(batch.window_channel(i, c));
        }
        Ok(Tensor::new(vec![n, WINDOW_LEN], v)?)
    };
    Ok((take(p)?, take(q)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentationMode {
    None,
    Oversample,
    Gan,
}

impl AugmentationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationMode::None => "none",
            AugmentationMode::Oversample => "oversample",
            AugmentationMode::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "plain" => Some(Self::None),
            "oversample" => Some(Self::Oversample),
            "gan" => Some(Self::Gan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentationPlan {
    pub mode: AugmentationMode,
    pub added_window_count: usize,
}

impl AugmentationPlan {
    pub fn new(mode: AugmentationMode) -> Self {
        Self {
            mode,
            added_window_count: 8000,
        }
    }
}

/// Real windows plus the plan's additions, shuffled by `seed`. Mode `none`
/// returns the real batch unchanged. GAN windows are generated in the
/// preprocessed space the generator was trained in.
pub fn build_training_set(
    real: &WindowBatch,
    plan: &AugmentationPlan,
    generator: Option<&GanModel>,
    seed: u64,
) -> Result<WindowBatch> {
    if real.provenance().iter().any(|&p| p != Provenance::Real) {
        return Err(ForecastError::Config("training pool must contain only real windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let added = match plan.mode {
        AugmentationMode::None => return Ok(real.clone()),
        AugmentationMode::Oversample => {
            let wet = filter_flat_windows(real)?;
            if wet.is_empty() {
                return Err(ForecastError::Config("no wet windows to oversample".into()));
            }
            let idx: Vec<usize> = (0..plan.added_window_count)
                .map(|_| rng.random_range(0..wet.count()))
                .collect();
            wet.select(&idx).with_provenance(Provenance::Oversampled)
        }
        AugmentationMode::Gan => {
            let gan = generator.ok_or_else(|| ForecastError::Config("gan mode needs a generator checkpoint".into()))?;
            if gan.channels != real.channels() {
                return Err(ForecastError::Config(format!(
                    "generator channels {:?} differ from data channels {:?}",
                    gan.channels,
                    real.channels()
                )));
            }
            gan.generate(plan.added_window_count, rng.random())?
        }
    };
    let all = real.concat(&added)?;
    let mut order: Vec<usize> = (0..all.count()).collect();
    order.shuffle(&mut rng);
    Ok(all.select(&order))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub hidden: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            adam: AdamConfig::FORECASTER,
            seed: 0,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ForecastError::Config("sizes, batch and epoch count must be positive".into()));
        }
        self.adam.validate()?;
        Ok(())
    }

    pub fn init_model(&self) -> ForecastModel {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        ForecastModel::new(self.hidden, self.layers, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    /// Best validation MAE up to and including this epoch.
    pub best_val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedForecaster {
    /// Parameters from the epoch with the lowest validation MAE.
    pub model: ForecastModel,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Mean absolute error of `model` over a whole batch, in preprocessed units.
pub fn evaluate_mae(model: &ForecastModel, windows: &WindowBatch) -> Result<f64> {
    let (rain, flow) = split_channels(windows)?;
    let chunk = 512;
    let n = windows.count();
    let mut total = 0.0;
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let r = rows(&rain, start, end)?;
        let pred = model.forward(&r)?;
        let obs = &flow.values()[start * WINDOW_LEN..end * WINDOW_LEN];
        total += pred.values().iter().zip(obs).map(|(p, o)| (p - o).abs()).sum::<f64>();
    }
    Ok(total / (n * WINDOW_LEN) as f64)
}

fn rows(t: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let w = t.shape()[1];
    Ok(Tensor::new(vec![end - start, w], t.values()[start * w..end * w].to_vec())?)
}

fn gather(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let w = t.shape()[1];
    let mut v = Vec::with_capacity(idx.len() * w);
    for &i in idx {
        v.extend_from_slice(&t.values()[i * w..(i + 1) * w]);
    }
    Ok(Tensor::new(vec![idx.len(), w], v)?)
}

/// Minimizes MAE with Adam over shuffled mini-batches, keeping the
/// parameters with the best validation MAE and stopping after `patience`
/// epochs without improvement.
pub fn train_forecaster(
    model: ForecastModel,
    train: &WindowBatch,
    validation: &WindowBatch,
    config: &ForecastConfig,
) -> Result<TrainedForecaster> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(ForecastError::Config("training and validation sets must be non-empty".into()));
    }
    let (rain, flow) = split_channels(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0f0c_a57e);
    let mut model = model;
    model.detach_all();
    let mut opt = AdamState::new(config.adam, &model.params())?;
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..train.count()).collect();
    let mut last_loss = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let tape = Tape::new();
            let m = attached(&model, &tape);
            let pred = m.forward(&gather(&rain, idx)?)?;
            let loss = pred.sub(&gather(&flow, idx)?)?.abs()?.mean_all()?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(ForecastError::NonFinite {
                    epoch,
                    batch: b,
                    last_loss,
                });
            }
            last_loss = Some(value);
            let grads = backward(&loss, &m.params(), false)?;
            opt.step(&mut model.params_mut(), &grads).map_err(|e| match e {
                NnError::NonFiniteGradient { .. } => ForecastError::NonFinite {
                    epoch,
                    batch: b,
                    last_loss,
                },
                other => other.into(),
            })?;
            sum += value * idx.len() as f64;
            seen += idx.len();
        }
        let val_mae = evaluate_mae(&model, validation)?;
        if val_mae < best.0 {
            best = (val_mae, model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        curve.push(EpochRecord {
            epoch,
            train_mae: sum / seen as f64,
            val_mae,
            best_val_mae: best.0,
        });
        if stale >= config.patience {
            break;
        }
    }
    Ok(TrainedForecaster {
        model: best.1,
        curve,
        best_epoch: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, ChannelSeries};

    fn toy_batch(n: usize, seed: u64) -> WindowBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n + WINDOW_LEN - 1;
        let rain: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.2) { rng.random_range(0.0..2.0) } else { 0.0 })
            .collect();
        let flow: Vec<f64> = rain.iter().map(|r| 0.5 * r + 0.1).collect();
        let s = ChannelSeries {
            names: vec![PRECIPITATION.into(), FLOW.into()],
            log1p: vec![false, false],
            values: vec![rain, flow],
        };
        make_windows(&s, WINDOW_LEN, 1).unwrap()
    }

    #[test]
    fn predict_shapes_and_determinism() {
        let model = ForecastConfig { hidden: 4, layers: 2, ..Default::default() }.init_model();
        let rain = Tensor::full(&[WINDOW_LEN], 0.3);
        let a = predict(&model, &rain).unwrap();
        assert_eq!(a.shape(), &[WINDOW_LEN]);
        assert!(a.bit_eq(&predict(&model, &rain).unwrap()));
        assert!(predict(&model, &Tensor::zeros(&[23])).is_err());
        let mut zero = model.clone();
        zero.fill(0.0);
        assert!(predict(&zero, &rain).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn augmentation_counts_and_provenance() {
        let real = toy_batch(200, 1);
        let none = build_training_set(&real, &AugmentationPlan::new(AugmentationMode::None), None, 3).unwrap();
        assert!(none.data().bit_eq(real.data()));
        let plan = AugmentationPlan {
            mode: AugmentationMode::Oversample,
            added_window_count: 50,
        };
        let over = build_training_set(&real, &plan, None, 3).unwrap();
        assert_eq!(over.count(), 250);
        assert_eq!(over.provenance_counts()[&Provenance::Oversampled], 50);
        for i in (0..over.count()).filter(|&i| over.provenance()[i] == Provenance::Oversampled) {
            let w = over.window(i);
            assert!((0..real.count()).any(|j| real.window(j) == w));
        }
        let gan = AugmentationPlan {
            mode: AugmentationMode::Gan,
            added_window_count: 10,
        };
        assert!(matches!(build_training_set(&real, &gan, None, 3), Err(ForecastError::Config(_))));
    }

    #[test]
    fn learns_constant_zero_target() {
        let mut real = toy_batch(128, 2);
        let zeroed: Vec<f64> = real
            .data()
            .values()
            .chunks(2)
            .flat_map(|c| [c[0], 0.0])
            .collect();
        real = WindowBatch::new(
            Tensor::new(real.data().shape().to_vec(), zeroed).unwrap(),
            real.channels().to_vec(),
            real.provenance().to_vec(),
        )
        .unwrap();
        let cfg = ForecastConfig {
            hidden: 4,
            layers: 1,
            batch_size: 32,
            max_epochs: 40,
            patience: 40,
            ..Default::default()
        };
        let out = train_forecaster(cfg.init_model(), &real, &real, &cfg).unwrap();
        assert!(out.curve.last().unwrap().best_val_mae < 0.05, "{:?}", out.curve.last());
        for w in out.curve.windows(2) {
            assert!(w[1].best_val_mae <= w[0].best_val_mae);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let real = toy_batch(64, 4);
        let cfg = ForecastConfig {
            hidden: 3,
            layers: 1,
            batch_size: 16,
            max_epochs: 2,
            ..Default::default()
        };
        let a = train_forecaster(cfg.init_model(), &real, &real, &cfg).unwrap();
        let b = train_forecaster(cfg.init_model(), &real, &real, &cfg).unwrap();
        for (x, y) in a.model.params().iter().zip(b.model.params()) {
            assert!(x.bit_eq(y));
        }
    }
}
