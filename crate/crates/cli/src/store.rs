//! Conversions between trained models and checkpoints.

use tsgan_core::data::PreprocStats;
use tsgan_core::forecast::{ForecastModel, CELL_KIND};
use tsgan_core::gan::GanModel;
use tsgan_core::nn::{Parameters, INIT_SCHEME};
use tsgan_core::tensor::Tensor;

use crate::checkpoint::{Checkpoint, CheckpointError, Result};
use crate::config::RunConfig;

pub const KIND_PREPARED: &str = "prepared";
pub const KIND_GAN: &str = "gan";
pub const KIND_FORECASTER: &str = "forecaster";

fn base(config: &RunConfig, kind: &str) -> Checkpoint {
    Checkpoint::new(config)
        .with_meta("kind", kind)
        .with_meta("init", INIT_SCHEME)
        .with_meta("rng", format!("chacha8 seed={}", config.seed))
}

/// Everything needed to resume GAN training: parameters, optimizer moments,
/// counters, the RNG position and the preprocessing statistics.
pub fn gan_checkpoint(config: &RunConfig, model: &GanModel, stats: &PreprocStats) -> Checkpoint {
    let mut ck = base(config, KIND_GAN).with_meta("channels", model.channels.join(","));
    for (name, t) in model.state_tensors() {
        ck.push(name, t);
    }
    ck.put_stats(stats);
    ck
}

pub fn gan_from_checkpoint(ck: &Checkpoint) -> Result<(GanModel, PreprocStats)> {
    ck.expect_kind(KIND_GAN)?;
    let config = ck.run_config()?;
    let channels = ck.meta("channels")?.split(',').map(str::to_string).collect();
    let model = GanModel::from_state(config.gan_config(), channels, &ck.tensor_map())
        .map_err(|e| CheckpointError::Content(e.to_string()))?;
    Ok((model, ck.stats()?))
}

pub fn forecaster_checkpoint(config: &RunConfig, model: &ForecastModel, stats: &PreprocStats, mode: &str) -> Checkpoint {
    let mut ck = base(config, KIND_FORECASTER)
        .with_meta("cell", CELL_KIND)
        .with_meta("augment", mode);
    for (name, t) in model.named_params() {
        ck.push(format!("model.{name}"), t.clone());
    }
    ck.put_stats(stats);
    ck
}

pub fn forecaster_from_checkpoint(ck: &Checkpoint) -> Result<(ForecastModel, PreprocStats)> {
    ck.expect_kind(KIND_FORECASTER)?;
    let cell = ck.meta("cell")?;
    if cell != CELL_KIND {
        return Err(CheckpointError::Content(format!("unsupported cell kind {cell}")));
    }
    let config = ck.run_config()?.forecast_config();
    let mut model = config.init_model();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let src = ck.tensor(&format!("model.{name}"))?;
        if src.shape() != slot.shape() {
            return Err(CheckpointError::Content(format!(
                "model.{name} has shape {:?}, expected {:?}",
                src.shape(),
                slot.shape()
            )));
        }
        *slot = src.detach();
    }
    Ok((model, ck.stats()?))
}

/// Preprocessing statistics on their own.
pub fn prepared_checkpoint(config: &RunConfig, stats: &PreprocStats, counts: [usize; 3]) -> Checkpoint {
    let mut ck = base(config, KIND_PREPARED);
    ck.put_stats(stats);
    ck.push(
        "windows.counts",
        Tensor::from_vec(counts.iter().map(|&c| c as f64).collect()),
    );
    ck
}
