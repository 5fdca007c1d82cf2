//! Synthetic catchment: Markov-chain storms routed through a linear reservoir.

use std::f64::consts::PI;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{DataError, Result, SeriesDataset, STEP_SECONDS};

/// Steps per day at 5-minute resolution.
const DAY: f64 = 288.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CatchmentConfig {
    pub length: usize,
    pub start: NaiveDateTime,
    /// Probability of a dry step turning wet.
    pub wet_start_prob: f64,
    /// Probability of a wet step staying wet.
    pub wet_stay_prob: f64,
    /// Mean of the exponential rain intensity on wet steps, mm per step.
    pub rain_mean_mm: f64,
    /// Reservoir retention coefficient, `[0, 1)`.
    pub alpha: f64,
    /// Rain-to-flow gain.
    pub beta: f64,
    /// Mean base inflow per step; steady dry flow is `base_flow / (1 − alpha)`.
    pub base_flow: f64,
    /// Relative diurnal amplitude of the base inflow, `[0, 1]`.
    pub base_amplitude: f64,
    /// Standard deviation of multiplicative log-normal noise on observed flow.
    pub flow_noise: f64,
    pub temperature_mean: f64,
    pub temperature_amplitude: f64,
}

impl Default for CatchmentConfig {
    fn default() -> Self {
        Self {
            length: 100_000,
            start: NaiveDate::from_ymd_opt(2017, 6, 1)
                .and_then(|d| d.and_hms_opt(0, 0, 0))
                .expect("valid date"),
            wet_start_prob: 0.004,
            wet_stay_prob: 0.92,
            rain_mean_mm: 0.35,
            alpha: 0.95,
            beta: 4.0,
            base_flow: 1.0,
            base_amplitude: 0.4,
            flow_noise: 0.02,
            temperature_mean: 12.0,
            temperature_amplitude: 6.0,
        }
    }
}

impl CatchmentConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(DataError::Config(format!(
                "reservoir coefficient alpha = {} must lie in [0, 1)",
                self.alpha
            )));
        }
        if !prob(self.wet_start_prob) || !prob(self.wet_stay_prob) {
            return Err(DataError::Config("Markov transition probabilities must lie in [0, 1]".into()));
        }
        if !(self.rain_mean_mm > 0.0) || self.beta < 0.0 || self.base_flow < 0.0 {
            return Err(DataError::Config("rain mean must be positive; beta and base flow non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.base_amplitude) {
            return Err(DataError::Config("base amplitude must lie in [0, 1]".into()));
        }
        if !(self.flow_noise >= 0.0) {
            return Err(DataError::Config("flow noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Diurnal base inflow at step `t`; never negative.
    pub fn base_inflow(&self, t: usize) -> f64 {
        self.base_flow * (1.0 + self.base_amplitude * (2.0 * PI * t as f64 / DAY).sin())
    }
}

/// `Q_t = α·Q_{t−1} + β·P_t + B_t` for `t = 1..=n`, starting from `q0`.
pub fn linear_reservoir(alpha: f64, beta: f64, q0: f64, precipitation: &[f64], base: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(DataError::Config(format!("alpha = {alpha} must lie in [0, 1)")));
    }
    if precipitation.len() != base.len() {
        return Err(DataError::Size("precipitation and base inflow lengths differ".into()));
    }
    let mut q = q0;
    Ok(precipitation
        .iter()
        .zip(base)
        .map(|(&p, &b)| {
            q = alpha * q + beta * p + b;
            q
        })
        .collect())
}

/// Deterministic synthetic series for `seed`.
pub fn synth_catchment(config: &CatchmentConfig, seed: u64) -> Result<SeriesDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intensity = Exp::new(1.0 / config.rain_mean_mm).map_err(|e| DataError::Config(e.to_string()))?;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = config.length;

    let mut precipitation = Vec::with_capacity(n);
    let mut wet = false;
    for _ in 0..n {
        wet = if wet {
            rng.random_bool(config.wet_stay_prob)
        } else {
            rng.random_bool(config.wet_start_prob)
        };
        precipitation.push(if wet { intensity.sample(&mut rng) } else { 0.0 });
    }

    let base: Vec<f64> = (0..n).map(|t| config.base_inflow(t)).collect();
    let q0 = config.base_flow / (1.0 - config.alpha);
    let routed = linear_reservoir(config.alpha, config.beta, q0, &precipitation, &base)?;
    let flow: Vec<f64> = routed
        .iter()
        .map(|&q| q * (config.flow_noise * noise.sample(&mut rng)).exp())
        .collect();

    let temperature_c: Vec<f64> = (0..n)
        .map(|t| {
            let season = (2.0 * PI * t as f64 / (DAY * 365.0)).sin();
            let diurnal = (2.0 * PI * (t as f64 / DAY - 0.25)).sin();
            config.temperature_mean
                + config.temperature_amplitude * season
                + 3.0 * diurnal
                + 0.3 * noise.sample(&mut rng)
        })
        .collect();

    let timestamps = (0..n)
        .map(|t| config.start + TimeDelta::seconds(STEP_SECONDS * t as i64))
        .collect();
    Ok(SeriesDataset {
        timestamps,
        precipitation_mm: precipitation,
        temperature_c,
        flow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_decay_without_inputs() {
        let q = linear_reservoir(0.9, 1.0, 10.0, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((q[0] - 9.0).abs() < 1e-12);
        assert!((q[1] - 8.1).abs() < 1e-12);
    }

    #[test]
    fn constant_base_converges_to_fixed_point() {
        let (alpha, b) = (0.8, 2.5);
        let n = 400;
        let q = linear_reservoir(alpha, 1.0, 0.0, &vec![0.0; n], &vec![b; n]).unwrap();
        // Q* = b / (1 − α); error after n steps is α^n·Q*.
        assert!((q[n - 1] - b / (1.0 - alpha)).abs() < 1e-9);
    }

    #[test]
    fn unstable_alpha_rejected() {
        assert!(matches!(linear_reservoir(1.0, 1.0, 0.0, &[1.0], &[0.0]), Err(DataError::Config(_))));
        let cfg = CatchmentConfig { alpha: -0.1, ..Default::default() };
        assert!(matches!(synth_catchment(&cfg, 1), Err(DataError::Config(_))));
    }

    #[test]
    fn deterministic_per_seed_and_valid() {
        let cfg = CatchmentConfig { length: 5000, ..Default::default() };
        let a = synth_catchment(&cfg, 3).unwrap();
        let b = synth_catchment(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_catchment(&cfg, 4).unwrap();
        assert_ne!(a.precipitation_mm, c.precipitation_mm);
        a.validate().unwrap();
        assert!(a.precipitation_mm.iter().any(|&p| p > 0.0));
        assert!(a.precipitation_mm.iter().filter(|&&p| p == 0.0).count() > a.len() / 2);
    }

    #[test]
    fn flow_is_right_skewed() {
        let cfg = CatchmentConfig { length: 50_000, ..Default::default() };
        let ds = synth_catchment(&cfg, 8).unwrap();
        let n = ds.flow.len() as f64;
        let mean = ds.flow.iter().sum::<f64>() / n;
        let var = ds.flow.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
        let skew = ds.flow.iter().map(|q| (q - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        assert!(skew > 0.5, "skewness {skew}");
    }
}
