use super::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// WGAN-GP training defaults.
    pub const GAN: AdamConfig = AdamConfig {
        learning_rate: 1e-4,
        beta1: 0.0,
        beta2: 0.9,
        epsilon: 1e-8,
    };

    /// Forecaster defaults.
    pub const FORECASTER: AdamConfig = AdamConfig {
        learning_rate: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(NnError::Config(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.epsilon > 0.0) {
            return Err(NnError::Config("Adam learning rate and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moments for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    /// Applies one bias-corrected update. Nothing is modified when any gradient
    /// is non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NnError::Config(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[index].shape() {
                return Err(NnError::Config(format!(
                    "gradient {index} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient { index });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m_old = self.first_moment[i].values();
            let v_old = self.second_moment[i].values();
            let n = g.numel();
            let (mut m, mut v, mut out) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for k in 0..n {
                let gk = g.values()[k];
                let mk = b1 * m_old[k] + (1.0 - b1) * gk;
                let vk = b2 * v_old[k] + (1.0 - b2) * gk * gk;
                let m_hat = mk / c1;
                let v_hat = vk / c2;
                out.push(p.values()[k] - lr * m_hat / (v_hat.sqrt() + eps));
                m.push(mk);
                v.push(vk);
            }
            let shape = p.shape().to_vec();
            self.first_moment[i] = Tensor::new(shape.clone(), m)?;
            self.second_moment[i] = Tensor::new(shape.clone(), v)?;
            **p = Tensor::new(shape, out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(config: AdamConfig, p0: f64, g: f64) -> f64 {
        let mut p = Tensor::from_vec(vec![p0]);
        let mut state = AdamState::new(config, &[&p]).unwrap();
        state.step(&mut [&mut p], &[Tensor::from_vec(vec![g])]).unwrap();
        assert_eq!(state.step_count, 1);
        p.item() - p0
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::from_vec(vec![0.3, -1.2]);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::GAN, &[&p]).unwrap();
        state.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_gan_defaults() {
        // m̂ = g, v̂ = g², Δ = −lr·g/(|g| + ε)
        let delta = one_step(AdamConfig::GAN, 0.0, 2.0);
        let expect = -1e-4 * 2.0 / (2.0 + 1e-8);
        assert!((delta - expect).abs() < 1e-16, "{delta}");
    }

    #[test]
    fn first_step_forecaster_defaults() {
        let delta = one_step(AdamConfig::FORECASTER, 1.0, 1.0);
        assert!((delta + 1e-3).abs() < 1e-10, "{delta}");
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        for g in [0.7, -3.0] {
            let mut p = Tensor::from_vec(vec![0.0]);
            let mut state = AdamState::new(AdamConfig::FORECASTER, &[&p]).unwrap();
            let mut prev = 0.0;
            for _ in 0..500 {
                state.step(&mut [&mut p], &[Tensor::from_vec(vec![g])]).unwrap();
                let now = p.item();
                assert!((now - prev) * g < 0.0);
                prev = now;
            }
        }
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let mut q = Tensor::from_vec(vec![3.0]);
        let mut state = AdamState::new(AdamConfig::GAN, &[&p, &q]).unwrap();
        let err = state
            .step(&mut [&mut p, &mut q], &[Tensor::from_vec(vec![0.1, 0.2]), Tensor::from_vec(vec![f64::NAN])])
            .unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { index: 1 });
        assert_eq!(state.step_count, 0);
        assert_eq!(p.values(), &[1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_betas() {
        let cfg = AdamConfig { beta1: 1.0, ..AdamConfig::GAN };
        assert!(AdamState::new(cfg, &[]).is_err());
    }
}
