use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{critic_loss, generate_window, generator_loss, CriticParams, GanError, GeneratorParams, Result};
use crate::data::{compute_start_token, Provenance, WindowBatch, WINDOW_LEN};
use crate::metrics::{jsd, JsdReport, DEFAULT_BINS};
use crate::nn::{attached, AdamConfig, AdamState, NnError, Parameters};
use crate::tensor::{backward, Tape, Tensor};

/// Mixed into the seed for the evaluation noise stream, which is kept apart
/// from the training stream so evaluation frequency never alters training.
const EVAL_STREAM: u64 = 0x5eed_e7a1;

#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub lambda_gp: f64,
    pub critic_iters_per_gen: usize,
    pub batch_size: usize,
    pub total_generator_steps: usize,
    pub window_len: usize,
    pub seed: u64,
    pub generator_layers: usize,
    pub generator_hidden: usize,
    pub critic_layers: usize,
    pub critic_hidden: usize,
    pub generator_adam: AdamConfig,
    pub critic_adam: AdamConfig,
    /// Generator steps between JSD evaluations; 0 disables evaluation.
    pub eval_every: usize,
    pub eval_samples: usize,
    pub bins: usize,
    /// Generator steps between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            critic_iters_per_gen: 5,
            batch_size: 64,
            total_generator_steps: 2000,
            window_len: WINDOW_LEN,
            seed: 0,
            generator_layers: 3,
            generator_hidden: 450,
            critic_layers: 3,
            critic_hidden: 120,
            generator_adam: AdamConfig::GAN,
            critic_adam: AdamConfig::GAN,
            eval_every: 50,
            eval_samples: 256,
            bins: DEFAULT_BINS,
            checkpoint_every: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GanError::Config(m));
        if !(self.lambda_gp > 0.0 && self.lambda_gp.is_finite()) {
            return fail(format!("lambda_gp must be positive, got {}", self.lambda_gp));
        }
        if self.critic_iters_per_gen == 0 || self.batch_size == 0 {
            return fail("critic iterations and batch size must be at least 1".into());
        }
        if self.window_len != WINDOW_LEN {
            return fail(format!("window length is fixed at {WINDOW_LEN}"));
        }
        if self.generator_layers == 0 || self.generator_hidden == 0 || self.critic_layers == 0 || self.critic_hidden == 0 {
            return fail("network sizes must be positive".into());
        }
        if self.eval_every > 0 && self.eval_samples == 0 {
            return fail("evaluation needs at least one generated window".into());
        }
        if self.bins < 2 {
            return fail("histograms need at least 2 bins".into());
        }
        self.generator_adam.validate()?;
        self.critic_adam.validate()?;
        Ok(())
    }
}

/// Generator, critic, optimizer states and the training RNG.
#[derive(Debug, Clone)]
pub struct GanModel {
    pub config: GanTrainConfig,
    pub channels: Vec<String>,
    pub generator: GeneratorParams,
    pub critic: CriticParams,
    pub generator_opt: AdamState,
    pub critic_opt: AdamState,
    pub generator_steps: usize,
    pub critic_updates: usize,
    rng: ChaCha8Rng,
}

impl GanModel {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: GanTrainConfig, channels: Vec<String>, start_token: Tensor) -> Result<Self> {
        config.validate()?;
        if start_token.shape() != [channels.len()] || !start_token.is_finite() {
            return Err(GanError::Config(format!(
                "start token {:?} does not match {} channels",
                start_token.shape(),
                channels.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = GeneratorParams::new(start_token, config.generator_hidden, config.generator_layers, &mut rng);
        let critic = CriticParams::new(channels.len(), config.critic_hidden, config.critic_layers, &mut rng);
        let generator_opt = AdamState::new(config.generator_adam, &generator.params())?;
        let critic_opt = AdamState::new(config.critic_adam, &critic.params())?;
        Ok(Self {
            config,
            channels,
            generator,
            critic,
            generator_opt,
            critic_opt,
            generator_steps: 0,
            critic_updates: 0,
            rng,
        })
    }

    /// Every tensor needed to resume training bit-exactly, keyed by name.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let mut push_module = |prefix: &str, named: Vec<(String, &Tensor)>, opt: &AdamState| {
            for (i, (name, t)) in named.iter().enumerate() {
                out.push((format!("{prefix}.{name}"), (*t).clone()));
                out.push((format!("{prefix}_opt.m.{name}"), opt.first_moment[i].clone()));
                out.push((format!("{prefix}_opt.v.{name}"), opt.second_moment[i].clone()));
            }
        };
        push_module("generator", self.generator.named_params(), &self.generator_opt);
        push_module("critic", self.critic.named_params(), &self.critic_opt);
        out.push(("generator.start_token".into(), self.generator.start_token.clone()));
        let counter = |v: u64| Tensor::scalar(v as f64);
        out.push(("counters.generator_steps".into(), counter(self.generator_steps as u64)));
        out.push(("counters.critic_updates".into(), counter(self.critic_updates as u64)));
        out.push(("counters.generator_opt_steps".into(), counter(self.generator_opt.step_count)));
        out.push(("counters.critic_opt_steps".into(), counter(self.critic_opt.step_count)));
        out.push(("counters.rng_word_pos".into(), counter(self.rng.get_word_pos() as u64)));
        out
    }

    /// Rebuilds a model from `state_tensors` output.
    pub fn from_state(config: GanTrainConfig, channels: Vec<String>, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let get = |name: &str| lookup(tensors, name);
        let mut model = GanModel::new(config, channels, get("generator.start_token")?.clone())?;
        fn load<M: Parameters>(
            prefix: &str,
            module: &mut M,
            opt: &mut AdamState,
            tensors: &BTreeMap<String, Tensor>,
        ) -> Result<()> {
            let names: Vec<String> = module.named_params().into_iter().map(|(n, _)| n).collect();
            for (i, (name, slot)) in names.iter().zip(module.params_mut()).enumerate() {
                let take = |key: String, dst: &mut Tensor| -> Result<()> {
                    let src = lookup(tensors, &key)?;
                    if src.shape() != dst.shape() {
                        return Err(GanError::Config(format!(
                            "{key} has shape {:?}, model expects {:?}",
                            src.shape(),
                            dst.shape()
                        )));
                    }
                    *dst = src.detach();
                    Ok(())
                };
                take(format!("{prefix}.{name}"), slot)?;
                take(format!("{prefix}_opt.m.{name}"), &mut opt.first_moment[i])?;
                take(format!("{prefix}_opt.v.{name}"), &mut opt.second_moment[i])?;
            }
            Ok(())
        }
        load("generator", &mut model.generator, &mut model.generator_opt, tensors)?;
        load("critic", &mut model.critic, &mut model.critic_opt, tensors)?;
        let counter = |name: &str| -> Result<u64> {
            let t = get(name)?;
            let v = if t.numel() == 1 { t.values()[0] } else { f64::NAN };
            if !(v >= 0.0 && v.fract() == 0.0 && v < 9.0e15) {
                return Err(GanError::Config(format!("counter {name} is not a non-negative integer")));
            }
            Ok(v as u64)
        };
        model.generator_steps = counter("counters.generator_steps")? as usize;
        model.critic_updates = counter("counters.critic_updates")? as usize;
        model.generator_opt.step_count = counter("counters.generator_opt_steps")?;
        model.critic_opt.step_count = counter("counters.critic_opt_steps")?;
        model.rng.set_word_pos(u128::from(counter("counters.rng_word_pos")?));
        Ok(model)
    }

    /// `count` windows from an independent noise stream seeded by `seed`.
    pub fn generate(&self, count: usize, seed: u64) -> Result<WindowBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = Vec::new();
        let chunk = 256;
        let mut done = 0;
        while done < count {
            let n = chunk.min(count - done);
            let z = self.generator.sample_noise(n, &mut rng);
            parts.push(generate_window(&self.generator, &z)?);
            done += n;
        }
        let data = if parts.is_empty() {
            Tensor::zeros(&[0, WINDOW_LEN, self.channels.len()])
        } else {
            concat_rows(&parts).map_err(NnError::from)?
        };
        Ok(WindowBatch::new(data, self.channels.clone(), vec![Provenance::Synthetic; count])?)
    }
}

fn lookup<'a>(tensors: &'a BTreeMap<String, Tensor>, name: &str) -> Result<&'a Tensor> {
    tensors
        .get(name)
        .ok_or_else(|| GanError::Config(format!("checkpoint lacks tensor {name}")))
}

fn concat_rows(parts: &[Tensor]) -> crate::tensor::Result<Tensor> {
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    let values = parts.iter().flat_map(|p| p.values().iter().copied()).collect();
    Tensor::new(shape, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub critic_loss: f64,
    pub gradient_penalty: f64,
    pub wasserstein: f64,
    pub generator_loss: f64,
    pub jsd: Option<f64>,
}

/// Append-only per-generator-step record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    /// `(step, jsd)` for every evaluated step.
    pub fn jsd_curve(&self) -> Vec<(usize, f64)> {
        self.entries.iter().filter_map(|e| e.jsd.map(|j| (e.step, j))).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,critic_loss,gradient_penalty,wasserstein,generator_loss,jsd\n");
        for e in &self.entries {
            let jsd = e.jsd.map(|j| j.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.step, e.critic_loss, e.gradient_penalty, e.wasserstein, e.generator_loss, jsd
            ));
        }
        s
    }
}

/// Callbacks for periodic evaluation and checkpointing.
pub trait TrainHook {
    fn on_eval(&mut self, _step: usize, _report: &JsdReport) {}

    /// Persists `model`; returns a reference (such as a path) to what was written.
    fn on_checkpoint(&mut self, _step: usize, _model: &GanModel) -> std::result::Result<Option<String>, String> {
        Ok(None)
    }
}

pub struct NoHook;

impl TrainHook for NoHook {}

/// Alternating critic and generator updates over a model that can be resumed.
pub struct GanTrainer {
    pub model: GanModel,
    pub log: TrainLog,
    last_checkpoint: Option<String>,
}

fn sample_batch(data: &WindowBatch, batch: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..data.count())).collect();
    data.select(&idx).data().clone()
}

impl GanTrainer {
    pub fn new(model: GanModel) -> Self {
        Self {
            model,
            log: TrainLog::default(),
            last_checkpoint: None,
        }
    }

    pub fn last_checkpoint(&self) -> Option<&str> {
        self.last_checkpoint.as_deref()
    }

    fn non_finite(&self, what: &str) -> GanError {
        GanError::NonFinite {
            what: what.into(),
            step: self.model.generator_steps,
            last_checkpoint: self.last_checkpoint.clone(),
        }
    }

    fn check_data(&self, data: &WindowBatch) -> Result<()> {
        if data.is_empty() || data.channels() != self.model.channels.as_slice() || data.window_len() != WINDOW_LEN {
            return Err(GanError::Config(format!(
                "training data must be non-empty {WINDOW_LEN}-step windows over {:?}",
                self.model.channels
            )));
        }
        Ok(())
    }

    fn optimizer_error(&self, e: NnError, what: &str) -> GanError {
        match e {
            NnError::NonFiniteGradient { .. } => self.non_finite(what),
            other => other.into(),
        }
    }

    /// One critic update on a fresh real batch and freshly generated fakes.
    /// Returns `(loss, penalty, wasserstein estimate)`.
    pub fn critic_step(&mut self, data: &WindowBatch) -> Result<(f64, f64, f64)> {
        let m = &mut self.model;
        let batch = m.config.batch_size;
        let real = sample_batch(data, batch, &mut m.rng);
        let z = m.generator.sample_noise(batch, &mut m.rng);
        let fake = generate_window(&m.generator, &z)?;
        let tape = Tape::new();
        let critic = attached(&m.critic, &tape);
        let loss = critic_loss(&critic, &real, &fake, m.config.lambda_gp, &mut m.rng)?;
        let value = loss.total.item();
        if !value.is_finite() {
            return Err(self.non_finite("critic loss"));
        }
        let grads = backward(&loss.total, &critic.params(), false).map_err(NnError::from)?;
        let m = &mut self.model;
        if let Err(e) = m.critic_opt.step(&mut m.critic.params_mut(), &grads) {
            return Err(self.optimizer_error(e, "critic gradient"));
        }
        self.model.critic_updates += 1;
        Ok((value, loss.penalty, loss.wasserstein))
    }

    /// One generator update against the current critic. Returns the loss.
    pub fn generator_step(&mut self) -> Result<f64> {
        let m = &mut self.model;
        let tape = Tape::new();
        let gen = attached(&m.generator, &tape);
        let z = m.generator.sample_noise(m.config.batch_size, &mut m.rng);
        let fake = generate_window(&gen, &z)?;
        let loss = generator_loss(&m.critic, &fake)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(self.non_finite("generator loss"));
        }
        let grads = backward(&loss, &gen.params(), false).map_err(NnError::from)?;
        let m = &mut self.model;
        if let Err(e) = m.generator_opt.step(&mut m.generator.params_mut(), &grads) {
            return Err(self.optimizer_error(e, "generator gradient"));
        }
        self.model.generator_steps += 1;
        Ok(value)
    }

    /// Marginal JSD of `eval_samples` generated windows against `data`,
    /// using noise that depends only on the seed.
    pub fn evaluate(&self, data: &WindowBatch) -> Result<JsdReport> {
        let cfg = &self.model.config;
        let fake = self.model.generate(cfg.eval_samples, cfg.seed ^ EVAL_STREAM)?;
        Ok(jsd(data, &fake, cfg.bins)?)
    }

    /// `critic_iters_per_gen` critic updates followed by one generator update.
    pub fn train_step(&mut self, data: &WindowBatch, hook: &mut dyn TrainHook) -> Result<&LogEntry> {
        self.check_data(data)?;
        let mut critic = (0.0, 0.0, 0.0);
        for _ in 0..self.model.config.critic_iters_per_gen {
            critic = self.critic_step(data)?;
        }
        let generator_loss = self.generator_step()?;
        let step = self.model.generator_steps;
        let cfg = &self.model.config;
        let jsd = if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
            let report = self.evaluate(data)?;
            hook.on_eval(step, &report);
            Some(report.mean)
        } else {
            None
        };
        let cfg = &self.model.config;
        if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every) {
            if let Some(label) = hook.on_checkpoint(step, &self.model).map_err(GanError::Hook)? {
                self.last_checkpoint = Some(label);
            }
        }
        self.log.push(LogEntry {
            step,
            critic_loss: critic.0,
            gradient_penalty: critic.1,
            wasserstein: critic.2,
            generator_loss,
            jsd,
        });
        Ok(self.log.entries.last().expect("just pushed"))
    }

    /// Runs `steps` more generator steps.
    pub fn run(&mut self, data: &WindowBatch, steps: usize, hook: &mut dyn TrainHook) -> Result<()> {
        for _ in 0..steps {
            self.train_step(data, hook)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (GanModel, TrainLog) {
        (self.model, self.log)
    }
}

/// Trains a fresh model on variation-filtered windows for
/// `config.total_generator_steps` generator steps. The start token is the
/// per-channel mean of `data`.
pub fn train_gan(config: GanTrainConfig, data: &WindowBatch, hook: &mut dyn TrainHook) -> Result<(GanModel, TrainLog)> {
    let start_token = compute_start_token(data)?;
    let steps = config.total_generator_steps;
    let model = GanModel::new(config, data.channels().to_vec(), start_token)?;
    let mut trainer = GanTrainer::new(model);
    trainer.run(data, steps, hook)?;
    Ok(trainer.into_parts())
}
