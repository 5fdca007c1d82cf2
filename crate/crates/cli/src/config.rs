//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;
use tsgan_core::data::{CatchmentConfig, SplitConfig};
use tsgan_core::forecast::{AugmentationMode, AugmentationPlan, ForecastConfig};
use tsgan_core::gan::GanTrainConfig;
use tsgan_core::nn::AdamConfig;

/// Search-space bounds for GRU depth and width.
pub const LAYER_BOUNDS: (usize, usize) = (1, 4);
pub const HIDDEN_BOUNDS: (usize, usize) = (32, 512);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,

    pub data_length: usize,
    pub data_wet_start_prob: f64,
    pub data_wet_stay_prob: f64,
    pub data_rain_mean_mm: f64,
    pub data_alpha: f64,
    pub data_beta: f64,
    pub data_base_flow: f64,
    pub data_base_amplitude: f64,
    pub data_flow_noise: f64,

    pub split_train_windows: usize,
    pub split_test_windows: usize,
    pub split_stride: usize,

    pub gan_lambda_gp: f64,
    pub gan_critic_iters: usize,
    pub gan_batch_size: usize,
    pub gan_steps: usize,
    pub gan_generator_layers: usize,
    pub gan_generator_hidden: usize,
    pub gan_critic_layers: usize,
    pub gan_critic_hidden: usize,
    pub gan_generator_lr: f64,
    pub gan_critic_lr: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,
    pub gan_eval_every: usize,
    pub gan_eval_samples: usize,
    pub gan_checkpoint_every: usize,

    pub forecast_hidden: usize,
    pub forecast_layers: usize,
    pub forecast_batch_size: usize,
    pub forecast_max_epochs: usize,
    pub forecast_patience: usize,
    pub forecast_lr: f64,
    pub forecast_beta1: f64,
    pub forecast_beta2: f64,
    pub forecast_validation_fraction: f64,

    pub augment_mode: AugmentationMode,
    pub augment_count: usize,

    pub eval_bins: usize,
    pub eval_peak_quantile: f64,

    pub tune_trials: usize,
    pub tune_rungs: usize,
    pub tune_eta: usize,
    pub tune_budget: usize,
    pub tune_min_layers: usize,
    pub tune_max_layers: usize,
    pub tune_min_hidden: usize,
    pub tune_max_hidden: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CatchmentConfig::default();
        let g = GanTrainConfig::default();
        let f = ForecastConfig::default();
        Self {
            seed: 0,
            data_length: c.length,
            data_wet_start_prob: c.wet_start_prob,
            data_wet_stay_prob: c.wet_stay_prob,
            data_rain_mean_mm: c.rain_mean_mm,
            data_alpha: c.alpha,
            data_beta: c.beta,
            data_base_flow: c.base_flow,
            data_base_amplitude: c.base_amplitude,
            data_flow_noise: c.flow_noise,
            split_train_windows: 38_000,
            split_test_windows: 13_000,
            split_stride: 1,
            gan_lambda_gp: g.lambda_gp,
            gan_critic_iters: g.critic_iters_per_gen,
            gan_batch_size: g.batch_size,
            gan_steps: g.total_generator_steps,
            gan_generator_layers: g.generator_layers,
            gan_generator_hidden: g.generator_hidden,
            gan_critic_layers: g.critic_layers,
            gan_critic_hidden: g.critic_hidden,
            gan_generator_lr: g.generator_adam.learning_rate,
            gan_critic_lr: g.critic_adam.learning_rate,
            gan_beta1: g.generator_adam.beta1,
            gan_beta2: g.generator_adam.beta2,
            gan_eval_every: g.eval_every,
            gan_eval_samples: g.eval_samples,
            gan_checkpoint_every: g.checkpoint_every,
            forecast_hidden: f.hidden,
            forecast_layers: f.layers,
            forecast_batch_size: f.batch_size,
            forecast_max_epochs: f.max_epochs,
            forecast_patience: f.patience,
            forecast_lr: f.adam.learning_rate,
            forecast_beta1: f.adam.beta1,
            forecast_beta2: f.adam.beta2,
            forecast_validation_fraction: 0.1,
            augment_mode: AugmentationMode::Gan,
            augment_count: 8000,
            eval_bins: g.bins,
            eval_peak_quantile: tsgan_core::metrics::PEAK_QUANTILE,
            tune_trials: 9,
            tune_rungs: 2,
            tune_eta: 3,
            tune_budget: 200,
            tune_min_layers: LAYER_BOUNDS.0,
            tune_max_layers: LAYER_BOUNDS.1,
            tune_min_hidden: HIDDEN_BOUNDS.0,
            tune_max_hidden: HIDDEN_BOUNDS.1,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

macro_rules! keys {
    ($( $key:literal => $field:ident ),* $(,)?) => {
        /// Every accepted key, in serialization order.
        pub const KEYS: &[&str] = &[$($key,)* "augment.mode"];

        fn set_numeric(&mut self, key: &str, value: &str) -> Result<bool> {
            match key {
                $($key => self.$field = parse_num(key, value)?,)*
                _ => return Ok(false),
            }
            Ok(true)
        }

        fn get_numeric(&self, key: &str) -> Option<String> {
            match key {
                $($key => Some(self.$field.to_string()),)*
                _ => None,
            }
        }
    };
}

impl RunConfig {
    keys! {
        "seed" => seed,
        "data.length" => data_length,
        "data.wet_start_prob" => data_wet_start_prob,
        "data.wet_stay_prob" => data_wet_stay_prob,
        "data.rain_mean_mm" => data_rain_mean_mm,
        "data.alpha" => data_alpha,
        "data.beta" => data_beta,
        "data.base_flow" => data_base_flow,
        "data.base_amplitude" => data_base_amplitude,
        "data.flow_noise" => data_flow_noise,
        "split.train_windows" => split_train_windows,
        "split.test_windows" => split_test_windows,
        "split.stride" => split_stride,
        "gan.lambda_gp" => gan_lambda_gp,
        "gan.critic_iters" => gan_critic_iters,
        "gan.batch_size" => gan_batch_size,
        "gan.steps" => gan_steps,
        "gan.generator_layers" => gan_generator_layers,
        "gan.generator_hidden" => gan_generator_hidden,
        "gan.critic_layers" => gan_critic_layers,
        "gan.critic_hidden" => gan_critic_hidden,
        "gan.generator_lr" => gan_generator_lr,
        "gan.critic_lr" => gan_critic_lr,
        "gan.beta1" => gan_beta1,
        "gan.beta2" => gan_beta2,
        "gan.eval_every" => gan_eval_every,
        "gan.eval_samples" => gan_eval_samples,
        "gan.checkpoint_every" => gan_checkpoint_every,
        "forecast.hidden" => forecast_hidden,
        "forecast.layers" => forecast_layers,
        "forecast.batch_size" => forecast_batch_size,
        "forecast.max_epochs" => forecast_max_epochs,
        "forecast.patience" => forecast_patience,
        "forecast.lr" => forecast_lr,
        "forecast.beta1" => forecast_beta1,
        "forecast.beta2" => forecast_beta2,
        "forecast.validation_fraction" => forecast_validation_fraction,
        "augment.count" => augment_count,
        "eval.bins" => eval_bins,
        "eval.peak_quantile" => eval_peak_quantile,
        "tune.trials" => tune_trials,
        "tune.rungs" => tune_rungs,
        "tune.eta" => tune_eta,
        "tune.budget" => tune_budget,
        "tune.min_layers" => tune_min_layers,
        "tune.max_layers" => tune_max_layers,
        "tune.min_hidden" => tune_min_hidden,
        "tune.max_hidden" => tune_max_hidden,
    }

    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "augment.mode" {
            self.augment_mode = AugmentationMode::parse(value).ok_or_else(|| ConfigError::Value {
                key: key.into(),
                value: value.into(),
                reason: "expected none, oversample or gan".into(),
            })?;
            return Ok(());
        }
        if self.set_numeric(key, value)? {
            Ok(())
        } else {
            Err(ConfigError::UnknownKey(key.into()))
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if key == "augment.mode" {
            return Some(self.augment_mode.as_str().into());
        }
        self.get_numeric(key)
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            message: format!("override `{assignment}` is not `key=value`"),
        })?;
        self.set(key.trim(), value.trim())
    }

    /// Every key in canonical order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let within = |name: &str, v: usize, (lo, hi): (usize, usize)| -> Result<()> {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} = {v} outside [{lo}, {hi}]")))
            }
        };
        within("gan.generator_layers", self.gan_generator_layers, LAYER_BOUNDS)?;
        within("gan.critic_layers", self.gan_critic_layers, LAYER_BOUNDS)?;
        within("gan.generator_hidden", self.gan_generator_hidden, HIDDEN_BOUNDS)?;
        within("gan.critic_hidden", self.gan_critic_hidden, HIDDEN_BOUNDS)?;
        within("tune.min_layers", self.tune_min_layers, LAYER_BOUNDS)?;
        within("tune.max_layers", self.tune_max_layers, (self.tune_min_layers, LAYER_BOUNDS.1))?;
        within("tune.min_hidden", self.tune_min_hidden, HIDDEN_BOUNDS)?;
        within("tune.max_hidden", self.tune_max_hidden, (self.tune_min_hidden, HIDDEN_BOUNDS.1))?;
        if !(self.forecast_validation_fraction > 0.0 && self.forecast_validation_fraction < 1.0) {
            return bad("forecast.validation_fraction must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.eval_peak_quantile) {
            return bad("eval.peak_quantile must lie in [0, 1]".into());
        }
        if self.tune_trials == 0 || self.tune_rungs == 0 || self.tune_eta < 2 {
            return bad("tune needs trials ≥ 1, rungs ≥ 1 and eta ≥ 2".into());
        }
        self.catchment().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gan_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.forecast_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.split_stride == 0 || self.split_train_windows == 0 {
            return bad("split.stride and split.train_windows must be positive".into());
        }
        Ok(())
    }

    pub fn catchment(&self) -> CatchmentConfig {
        CatchmentConfig {
            length: self.data_length,
            wet_start_prob: self.data_wet_start_prob,
            wet_stay_prob: self.data_wet_stay_prob,
            rain_mean_mm: self.data_rain_mean_mm,
            alpha: self.data_alpha,
            beta: self.data_beta,
            base_flow: self.data_base_flow,
            base_amplitude: self.data_base_amplitude,
            flow_noise: self.data_flow_noise,
            ..CatchmentConfig::default()
        }
    }

    pub fn split(&self) -> SplitConfig {
        SplitConfig {
            train_windows: self.split_train_windows,
            test_windows: self.split_test_windows,
            stride: self.split_stride,
        }
    }

    pub fn gan_config(&self) -> GanTrainConfig {
        let adam = |lr| AdamConfig {
            learning_rate: lr,
            beta1: self.gan_beta1,
            beta2: self.gan_beta2,
            epsilon: AdamConfig::GAN.epsilon,
        };
        GanTrainConfig {
            lambda_gp: self.gan_lambda_gp,
            critic_iters_per_gen: self.gan_critic_iters,
            batch_size: self.gan_batch_size,
            total_generator_steps: self.gan_steps,
            seed: self.seed,
            generator_layers: self.gan_generator_layers,
            generator_hidden: self.gan_generator_hidden,
            critic_layers: self.gan_critic_layers,
            critic_hidden: self.gan_critic_hidden,
            generator_adam: adam(self.gan_generator_lr),
            critic_adam: adam(self.gan_critic_lr),
            eval_every: self.gan_eval_every,
            eval_samples: self.gan_eval_samples,
            bins: self.eval_bins,
            checkpoint_every: self.gan_checkpoint_every,
            ..GanTrainConfig::default()
        }
    }

    pub fn forecast_config(&self) -> ForecastConfig {
        ForecastConfig {
            hidden: self.forecast_hidden,
            layers: self.forecast_layers,
            batch_size: self.forecast_batch_size,
            max_epochs: self.forecast_max_epochs,
            patience: self.forecast_patience,
            adam: AdamConfig {
                learning_rate: self.forecast_lr,
                beta1: self.forecast_beta1,
                beta2: self.forecast_beta2,
                epsilon: AdamConfig::FORECASTER.epsilon,
            },
            seed: self.seed,
        }
    }

    pub fn augmentation(&self) -> AugmentationPlan {
        AugmentationPlan {
            mode: self.augment_mode,
            added_window_count: self.augment_count,
        }
    }
}
