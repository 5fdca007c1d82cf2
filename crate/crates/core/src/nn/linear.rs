use rand::Rng;

use super::{uniform_fan_in, NnError, Parameters, Result};
use crate::tensor::Tensor;

/// `y = x·Wᵀ + b` with `W: [out × in]` and `b: [out]`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform_fan_in(&[output, input], input, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(NnError::Config(format!(
                "linear layer needs weight [out, in] and bias [out], got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.input_size() {
            return Err(NnError::Tensor(crate::tensor::TensorError::Shape(format!(
                "linear layer expects [batch, {}], got {:?}",
                self.input_size(),
                x.shape()
            ))));
        }
        let batch = x.shape()[0];
        let bias = self.bias.expand(&[0], &[batch, self.output_size()])?;
        Ok(x.matmul_t(&self.weight, false, true)?.add(&bias)?)
    }
}

/// Free-function form of [`LinearLayer::forward`].
pub fn linear_forward(layer: &LinearLayer, x: &Tensor) -> Result<Tensor> {
    layer.forward(x)
}

impl Parameters for LinearLayer {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_weight_passes_input_through() {
        let layer = LinearLayer::from_parts(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), Tensor::zeros(&[2])).unwrap();
        let x = t(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 3.0, 0.0]);
        assert_eq!(layer.forward(&x).unwrap().values(), x.values());
    }

    #[test]
    fn zero_weight_yields_bias_rows() {
        let layer = LinearLayer::from_parts(Tensor::zeros(&[3, 2]), Tensor::from_vec(vec![1.0, -1.0, 2.5])).unwrap();
        let x = t(&[2, 2], &[9.0, 8.0, 7.0, 6.0]);
        assert_eq!(layer.forward(&x).unwrap().values(), &[1.0, -1.0, 2.5, 1.0, -1.0, 2.5]);
    }

    #[test]
    fn hand_computed_affine_map() {
        let layer = LinearLayer::from_parts(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        let y = linear_forward(&layer, &t(&[1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.values(), &[4.0, 8.0]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let layer = LinearLayer::from_parts(Tensor::zeros(&[2, 3]), Tensor::zeros(&[2])).unwrap();
        let err = layer.forward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, NnError::Tensor(TensorError::Shape(_))));
    }
}
