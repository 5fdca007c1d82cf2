//! One-channel regression bound: a small WGAN-GP on sine-plus-noise windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tsgan_core::data::{make_windows, standardize, ChannelSeries};
use tsgan_core::gan::{train_gan, GanTrainConfig, TrainHook};
use tsgan_core::metrics::JsdReport;

struct Last(Option<f64>);

impl TrainHook for Last {
    fn on_eval(&mut self, _step: usize, report: &JsdReport) {
        self.0 = Some(report.mean);
    }
}

#[test]
fn sine_plus_noise_reaches_low_jsd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let n = 6000;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let values: Vec<f64> = (0..n)
        .map(|t| (t as f64 * 0.2 + phase).sin() + noise.sample(&mut rng))
        .collect();
    let series = ChannelSeries {
        names: vec!["signal".into()],
        log1p: vec![false],
        values: vec![values],
    };
    let (std, _) = standardize(&series, None).unwrap();
    let windows = make_windows(&std, 24, 1).unwrap();
    let config = GanTrainConfig {
        generator_layers: 1,
        generator_hidden: 32,
        critic_layers: 1,
        critic_hidden: 32,
        total_generator_steps: 2000,
        eval_every: 500,
        seed: 2,
        ..Default::default()
    };
    let mut last = Last(None);
    train_gan(config, &windows, &mut last).unwrap();
    let jsd = last.0.unwrap();
    assert!(jsd < 0.15, "final marginal jsd {jsd}");
}
