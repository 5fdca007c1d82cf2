//! Autoregressive GRU generator, GRU critic and the WGAN-GP objective.

mod train;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::data::{DataError, WINDOW_LEN};
use crate::metrics::MetricError;
use crate::nn::{GruStack, LinearLayer, NnError, Parameters};
use crate::tensor::{backward, Tape, Tensor, TensorError};

pub use train::{
    train_gan, GanModel, GanTrainConfig, GanTrainer, LogEntry, NoHook, TrainHook, TrainLog,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GanError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at generator step {step}; last good checkpoint: {}", last_checkpoint.as_deref().unwrap_or("none"))]
    NonFinite {
        what: String,
        step: usize,
        last_checkpoint: Option<String>,
    },
    #[error("hook failed: {0}")]
    Hook(String),
}

impl From<TensorError> for GanError {
    fn from(e: TensorError) -> Self {
        GanError::Nn(NnError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, GanError>;

/// Maps `[batch, steps, channels]` windows to one unbounded score per window.
pub trait Critic {
    fn score(&self, windows: &Tensor) -> Result<Tensor>;

    /// Tape holding the critic's parameters, if they are attached.
    fn tape(&self) -> Option<Tape>;
}

/// GRU over the window; the top layer's final state feeds a scalar head.
#[derive(Debug, Clone)]
pub struct CriticParams {
    pub gru: GruStack,
    pub score_head: LinearLayer,
}

impl CriticParams {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        Self {
            gru: GruStack::new(channels, hidden, layers, rng),
            score_head: LinearLayer::new(hidden, 1, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.gru.input_size()
    }
}

impl Critic for CriticParams {
    fn score(&self, windows: &Tensor) -> Result<Tensor> {
        let batch = windows.shape().first().copied().unwrap_or(0);
        let h0 = vec![Tensor::zeros(&[batch, self.gru.hidden_size()]); self.gru.num_layers()];
        let (_, last) = self.gru.prepare(batch)?.forward(windows, &h0)?;
        let top = last.last().expect("stack has layers");
        Ok(self.score_head.forward(top)?.reshape(&[batch])?)
    }

    fn tape(&self) -> Option<Tape> {
        self.score_head.weight.tape().cloned()
    }
}

impl Parameters for CriticParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .gru
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("gru.{n}"), t))
            .collect();
        out.extend(self.score_head.named_params().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.gru.params_mut();
        out.extend(self.score_head.params_mut());
        out
    }
}

/// `D(x) = ⟨w, vec(x)⟩ + b`. Its input gradient is `w` everywhere, so the
/// gradient penalty has a closed form.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    /// Flattened `[steps · channels]` weight.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearCritic {
    pub fn new(weight: Tensor, bias: f64) -> Self {
        Self {
            weight,
            bias: Tensor::scalar(bias),
        }
    }

    pub fn weight_norm(&self) -> f64 {
        self.weight.values().iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

impl Critic for LinearCritic {
    fn score(&self, windows: &Tensor) -> Result<Tensor> {
        let batch = windows.shape().first().copied().unwrap_or(0);
        let width = self.weight.numel();
        if windows.numel() != batch * width {
            return Err(TensorError::Shape(format!(
                "linear critic expects {width} values per window, got shape {:?}",
                windows.shape()
            ))
            .into());
        }
        let flat = windows.reshape(&[batch, width])?;
        let w = self.weight.reshape(&[width, 1])?;
        Ok(flat.matmul(&w)?.reshape(&[batch])?.add(&self.bias)?)
    }

    fn tape(&self) -> Option<Tape> {
        self.weight.tape().cloned()
    }
}

impl Parameters for LinearCritic {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Start-token-driven autoregressive generator. The noise vector is split
/// into one initial hidden state per GRU layer.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub gru: GruStack,
    pub output_head: LinearLayer,
    /// Per-channel mean of the training windows; a data statistic, not trained.
    pub start_token: Tensor,
}

impl GeneratorParams {
    pub fn new<R: Rng + ?Sized>(start_token: Tensor, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let channels = start_token.numel();
        Self {
            gru: GruStack::new(channels, hidden, layers, rng),
            output_head: LinearLayer::new(hidden, channels, rng),
            start_token,
        }
    }

    pub fn channels(&self) -> usize {
        self.output_head.output_size()
    }

    pub fn noise_dim(&self) -> usize {
        self.gru.num_layers() * self.gru.hidden_size()
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Tensor {
        let values = (0..batch * self.noise_dim()).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::new(vec![batch, self.noise_dim()], values).expect("noise shape")
    }
}

impl Parameters for GeneratorParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .gru
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("gru.{n}"), t))
            .collect();
        out.extend(self.output_head.named_params().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.gru.params_mut();
        out.extend(self.output_head.params_mut());
        out
    }
}

/// Generates `[batch, 24, channels]` windows from `z: [batch, layers · hidden]`.
///
/// Step 0 consumes the start token; each produced step is fed back as the
/// next input. The start token is not part of the output.
pub fn generate_window(gen: &GeneratorParams, z: &Tensor) -> Result<Tensor> {
    generate_steps(gen, z, WINDOW_LEN)
}

pub fn generate_steps(gen: &GeneratorParams, z: &Tensor, steps: usize) -> Result<Tensor> {
    let (layers, hidden) = (gen.gru.num_layers(), gen.gru.hidden_size());
    let batch = match z.shape() {
        &[b, d] if d == gen.noise_dim() => b,
        other => {
            return Err(TensorError::Shape(format!(
                "noise must be [batch, {}], got {other:?}",
                gen.noise_dim()
            ))
            .into())
        }
    };
    let z = z.reshape(&[batch, layers, hidden])?;
    let mut h = (0..layers).map(|l| z.select(1, l)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut x = gen.start_token.expand(&[0], &[batch, gen.channels()])?;
    let gru = gen.gru.prepare(batch)?;
    let mut outs = Vec::with_capacity(steps);
    for _ in 0..steps {
        h = gru.step(&x, &h)?;
        x = gen.output_head.forward(h.last().expect("stack has layers"))?;
        outs.push(x.clone());
    }
    Ok(Tensor::stack(&outs, 1)?)
}

/// Added under the square root of the per-sample gradient norm so that its
/// derivative stays finite when a critic's input gradient vanishes.
pub const NORM_FLOOR: f64 = 1e-16;

/// `mean_i (‖∇x̂ D(x̂_i)‖₂ − 1)²` with `x̂_i = u_i·real_i + (1 − u_i)·fake_i`,
/// one `u_i ~ U(0, 1)` per sample. The result is differentiable with respect
/// to the critic's parameters.
pub fn gradient_penalty<C: Critic, R: Rng + ?Sized>(critic: &C, real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<Tensor> {
    if real.shape() != fake.shape() || real.rank() != 3 {
        return Err(TensorError::Shape(format!(
            "real {:?} and fake {:?} must be equal [batch, steps, channels] shapes",
            real.shape(),
            fake.shape()
        ))
        .into());
    }
    let batch = real.shape()[0];
    let u: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
    let (r, f) = (real.values(), fake.values());
    let per = real.numel() / batch.max(1);
    let mixed: Vec<f64> = (0..real.numel())
        .map(|k| {
            let ui = u[k / per];
            ui * r[k] + (1.0 - ui) * f[k]
        })
        .collect();
    let tape = critic.tape().unwrap_or_default();
    let x_hat = tape.leaf(&Tensor::new(real.shape().to_vec(), mixed)?);
    let scores = critic.score(&x_hat)?.sum_all()?;
    let grad = backward(&scores, &[&x_hat], true)?.remove(0);
    if !grad.is_finite() {
        return Err(GanError::NonFinite {
            what: "critic input gradient".into(),
            step: 0,
            last_checkpoint: None,
        });
    }
    let norm = grad.square()?.sum_axes(&[1, 2])?.add_scalar(NORM_FLOOR)?.sqrt()?;
    Ok(norm.add_scalar(-1.0)?.square()?.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub total: Tensor,
    pub penalty: f64,
    /// `mean D(real) − mean D(fake)`.
    pub wasserstein: f64,
}

/// `mean D(fake) − mean D(real) + λ·penalty`. `fake` is treated as a constant.
pub fn critic_loss<C: Critic, R: Rng + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    lambda_gp: f64,
    rng: &mut R,
) -> Result<CriticLoss> {
    let fake = fake.detach();
    let d_fake = critic.score(&fake)?.mean_all()?;
    let d_real = critic.score(&real.detach())?.mean_all()?;
    let penalty = gradient_penalty(critic, real, &fake, rng)?;
    let total = d_fake.sub(&d_real)?.add(&penalty.mul_scalar(lambda_gp)?)?;
    Ok(CriticLoss {
        wasserstein: d_real.item() - d_fake.item(),
        penalty: penalty.item(),
        total,
    })
}

/// `−mean D(fake)`.
pub fn generator_loss<C: Critic>(critic: &C, fake: &Tensor) -> Result<Tensor> {
    Ok(critic.score(fake)?.mean_all()?.neg()?)
}
