//! Fully connected and GRU layers, fan-in initialization, and Adam.

mod adam;
mod gru;
mod linear;

use rand::Rng;
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError};

pub use adam::{AdamConfig, AdamState};
pub use gru::{gru_forward, GruLayer, GruStack, PreparedGru};
pub use linear::{linear_forward, LinearLayer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// A collection of named parameter tensors with a fixed traversal order.
pub trait Parameters {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Registers every parameter as a fresh leaf on `tape`, in place.
    fn attach_to(&mut self, tape: &Tape) {
        for p in self.params_mut() {
            *p = tape.leaf(p);
        }
    }

    fn detach_all(&mut self) {
        for p in self.params_mut() {
            *p = p.detach();
        }
    }

    fn fill(&mut self, value: f64) {
        for p in self.params_mut() {
            *p = Tensor::full(p.shape(), value);
        }
    }
}

/// A copy of `module` whose parameters are leaves on `tape`.
pub fn attached<M: Parameters + Clone>(module: &M, tape: &Tape) -> M {
    let mut m = module.clone();
    m.attach_to(tape);
    m
}

/// Weights drawn from Uniform(−1/√fan_in, 1/√fan_in).
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape and length agree")
}

/// Name of the initialization scheme, recorded in checkpoints.
pub const INIT_SCHEME: &str = "uniform_fan_in";
