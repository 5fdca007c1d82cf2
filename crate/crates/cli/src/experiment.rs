//! End-to-end desk-scale pipeline: synthetic catchment, splits, GAN,
//! three forecaster arms and their comparison.

use tsgan_core::data::{filter_flat_windows, prepare_splits, synth_catchment, PreparedData, SeriesDataset, WindowBatch, WINDOW_LEN};
use tsgan_core::forecast::{
    build_training_set, compare_experiments, train_forecaster, AugmentationMode, AugmentationPlan, Comparison,
    TrainedForecaster,
};
use tsgan_core::gan::{train_gan, GanModel, TrainHook, TrainLog};

use crate::config::RunConfig;
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

/// Arm names in report order.
pub const ARMS: [(&str, AugmentationMode); 3] = [
    ("plain", AugmentationMode::None),
    ("oversample", AugmentationMode::Oversample),
    ("gan", AugmentationMode::Gan),
];

/// Prepared splits with a chronological validation tail carved off the training region.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub data: PreparedData,
    /// Training windows that precede the validation tail.
    pub pool: WindowBatch,
    pub validation: WindowBatch,
    /// Windows of `pool` with varying precipitation.
    pub wet_pool: WindowBatch,
}

/// Splits `train` into a leading pool and a trailing validation block of
/// `fraction` of the windows. Windows overlapping the validation block are
/// dropped from the pool.
pub fn carve_validation(train: &WindowBatch, fraction: f64, stride: usize) -> Result<(WindowBatch, WindowBatch)> {
    let n = train.count();
    let n_val = ((n as f64 * fraction).round() as usize).max(1);
    let gap = (WINDOW_LEN - 1).div_ceil(stride.max(1));
    if n_val + gap >= n {
        return Err(HarnessError::Config(format!(
            "{n} training windows cannot hold a validation block of {n_val} plus a {gap}-window gap"
        )));
    }
    let pool: Vec<usize> = (0..n - n_val - gap).collect();
    let val: Vec<usize> = (n - n_val..n).collect();
    Ok((train.select(&pool), train.select(&val)))
}

pub fn build_corpus(config: &RunConfig) -> Result<Corpus> {
    build_corpus_from(config, &synth_catchment(&config.catchment(), config.seed)?)
}

pub fn build_corpus_from(config: &RunConfig, series: &SeriesDataset) -> Result<Corpus> {
    let data = prepare_splits(series, &config.split())?;
    let (pool, validation) = carve_validation(&data.train, config.forecast_validation_fraction, config.split_stride)?;
    let wet_pool = filter_flat_windows(&pool)?;
    Ok(Corpus {
        data,
        pool,
        validation,
        wet_pool,
    })
}

pub fn train_gan_on(config: &RunConfig, corpus: &Corpus, hook: &mut dyn TrainHook) -> Result<(GanModel, TrainLog)> {
    if corpus.wet_pool.is_empty() {
        return Err(HarnessError::Config("training pool has no wet windows".into()));
    }
    Ok(train_gan(config.gan_config(), &corpus.wet_pool, hook)?)
}

/// Trains one forecaster arm. `seed` drives initialization, augmentation and batching.
pub fn train_arm(
    config: &RunConfig,
    corpus: &Corpus,
    mode: AugmentationMode,
    gan: Option<&GanModel>,
    seed: u64,
) -> Result<TrainedForecaster> {
    let plan = AugmentationPlan {
        mode,
        added_window_count: config.augment_count,
    };
    let train = build_training_set(&corpus.pool, &plan, gan, seed)?;
    let fc = tsgan_core::forecast::ForecastConfig {
        seed,
        ..config.forecast_config()
    };
    Ok(train_forecaster(fc.init_model(), &train, &corpus.validation, &fc)?)
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub comparison: Comparison,
}

impl SeedResult {
    /// GAN beats oversampling on peaks and plain training wins in dry weather.
    pub fn ordering_holds(&self) -> bool {
        self.comparison.gan_beats_oversample_on_peaks() == Some(true)
            && self.comparison.plain_best_in_dry_weather() == Some(true)
    }
}

/// Trains all three arms for `seed` against a shared generator and compares them on the test split.
pub fn run_seed(config: &RunConfig, corpus: &Corpus, gan: &GanModel, seed: u64) -> Result<SeedResult> {
    let mut trained = Vec::new();
    for (name, mode) in ARMS {
        trained.push((name, train_arm(config, corpus, mode, Some(gan), seed)?));
    }
    let models: Vec<(&str, &tsgan_core::forecast::ForecastModel)> =
        trained.iter().map(|(n, t)| (*n, &t.model)).collect();
    let comparison = compare_experiments(&models, &corpus.data.test, &corpus.data.stats, config.eval_peak_quantile)?;
    Ok(SeedResult { seed, comparison })
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub gan_log: TrainLog,
    pub seeds: Vec<SeedResult>,
}

impl ExperimentReport {
    pub fn seeds_with_ordering(&self) -> usize {
        self.seeds.iter().filter(|s| s.ordering_holds()).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.seeds {
            s.push_str(&format!("seed {}\n{}", r.seed, r.comparison.to_text()));
        }
        s.push_str(&format!(
            "ordering holds on {} of {} seeds\n",
            self.seeds_with_ordering(),
            self.seeds.len()
        ));
        s
    }
}

/// One GAN on the training pool, then the three arms for each seed.
pub fn run_experiment(config: &RunConfig, seeds: &[u64], hook: &mut dyn TrainHook) -> Result<ExperimentReport> {
    let corpus = build_corpus(config)?;
    let (gan, gan_log) = train_gan_on(config, &corpus, hook)?;
    let seeds = seeds
        .iter()
        .map(|&s| run_seed(config, &corpus, &gan, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { gan_log, seeds })
}
