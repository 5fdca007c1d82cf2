use rand::Rng;

use super::{uniform_fan_in, NnError, Parameters, Result};
use crate::tensor::{Tensor, TensorError};

/// One GRU layer in the reset-before-candidate-recurrence form:
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ∘ (W_hn h + b_hn))
/// h' = (1 − z) ∘ n + z ∘ h
/// ```
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub w_ir: Tensor,
    pub w_iz: Tensor,
    pub w_in: Tensor,
    pub w_hr: Tensor,
    pub w_hz: Tensor,
    pub w_hn: Tensor,
    pub b_ir: Tensor,
    pub b_iz: Tensor,
    pub b_in: Tensor,
    pub b_hr: Tensor,
    pub b_hz: Tensor,
    pub b_hn: Tensor,
}

impl GruLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut wi = || uniform_fan_in(&[hidden, input], input, rng);
        let (w_ir, w_iz, w_in) = (wi(), wi(), wi());
        let mut wh = || uniform_fan_in(&[hidden, hidden], hidden, rng);
        let (w_hr, w_hz, w_hn) = (wh(), wh(), wh());
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_ir,
            w_iz,
            w_in,
            w_hr,
            w_hz,
            w_hn,
            b_ir: b(),
            b_iz: b(),
            b_in: b(),
            b_hr: b(),
            b_hz: b(),
            b_hn: b(),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ir.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_ir.shape()[0]
    }

    fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_size(), self.input_size());
        let ok = [&self.w_ir, &self.w_iz, &self.w_in].iter().all(|w| w.shape() == [h, i])
            && [&self.w_hr, &self.w_hz, &self.w_hn].iter().all(|w| w.shape() == [h, h])
            && [&self.b_ir, &self.b_iz, &self.b_in, &self.b_hr, &self.b_hz, &self.b_hn]
                .iter()
                .all(|b| b.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("inconsistent GRU layer shapes (hidden {h}, input {i})")))
        }
    }
}

impl Parameters for GruLayer {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_ir".into(), &self.w_ir),
            ("w_iz".into(), &self.w_iz),
            ("w_in".into(), &self.w_in),
            ("w_hr".into(), &self.w_hr),
            ("w_hz".into(), &self.w_hz),
            ("w_hn".into(), &self.w_hn),
            ("b_ir".into(), &self.b_ir),
            ("b_iz".into(), &self.b_iz),
            ("b_in".into(), &self.b_in),
            ("b_hr".into(), &self.b_hr),
            ("b_hz".into(), &self.b_hz),
            ("b_hn".into(), &self.b_hn),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_ir,
            &mut self.w_iz,
            &mut self.w_in,
            &mut self.w_hr,
            &mut self.w_hz,
            &mut self.w_hn,
            &mut self.b_ir,
            &mut self.b_iz,
            &mut self.b_in,
            &mut self.b_hr,
            &mut self.b_hz,
            &mut self.b_hn,
        ]
    }
}

/// Stacked GRU layers; layer `l > 0` consumes the hidden sequence of layer `l − 1`.
#[derive(Debug, Clone)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, num_layers: usize, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|l| GruLayer::new(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<GruLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| NnError::Config("a GRU stack needs at least one layer".into()))?;
        let hidden = first.hidden_size();
        for (l, layer) in layers.iter().enumerate() {
            layer.validate()?;
            if layer.hidden_size() != hidden || (l > 0 && layer.input_size() != hidden) {
                return Err(NnError::Config(format!("layer {l} does not chain with hidden size {hidden}")));
            }
        }
        Ok(Self { layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    /// Expands biases once for a given batch size so recurrent steps reuse them.
    pub fn prepare(&self, batch: usize) -> Result<PreparedGru<'_>> {
        let hidden = self.hidden_size();
        let shape = [batch, hidden];
        let biases = self
            .layers
            .iter()
            .map(|l| {
                Ok(LayerBias {
                    r: l.b_ir.add(&l.b_hr)?.expand(&[0], &shape)?,
                    z: l.b_iz.add(&l.b_hz)?.expand(&[0], &shape)?,
                    n_in: l.b_in.expand(&[0], &shape)?,
                    n_hid: l.b_hn.expand(&[0], &shape)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedGru {
            stack: self,
            batch,
            biases,
        })
    }

    /// Zero initial state `[layers, batch, hidden]`.
    pub fn zero_state(&self, batch: usize) -> Tensor {
        Tensor::zeros(&[self.num_layers(), batch, self.hidden_size()])
    }
}

impl Parameters for GruStack {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer
                    .named_params()
                    .into_iter()
                    .map(move |(n, t)| (format!("layer{l}.{n}"), t))
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

struct LayerBias {
    r: Tensor,
    z: Tensor,
    n_in: Tensor,
    n_hid: Tensor,
}

/// A GRU stack bound to one batch size.
pub struct PreparedGru<'a> {
    stack: &'a GruStack,
    batch: usize,
    biases: Vec<LayerBias>,
}

impl PreparedGru<'_> {
    fn cell(&self, l: usize, gx: [&Tensor; 3], h: &Tensor) -> Result<Tensor> {
        let layer = &self.stack.layers[l];
        let bias = &self.biases[l];
        let r = gx[0].add(&h.matmul_t(&layer.w_hr, false, true)?)?.add(&bias.r)?.sigmoid()?;
        let z = gx[1].add(&h.matmul_t(&layer.w_hz, false, true)?)?.add(&bias.z)?.sigmoid()?;
        let recur = h.matmul_t(&layer.w_hn, false, true)?.add(&bias.n_hid)?;
        let n = gx[2].add(&bias.n_in)?.add(&r.mul(&recur)?)?.tanh()?;
        // (1 − z)∘n + z∘h
        Ok(z.neg()?.add_scalar(1.0)?.mul(&n)?.add(&z.mul(h)?)?)
    }

    fn check_state(&self, h: &[Tensor]) -> Result<()> {
        let expect = [self.batch, self.stack.hidden_size()];
        if h.len() != self.stack.num_layers() || h.iter().any(|t| t.shape() != expect) {
            return Err(NnError::Tensor(TensorError::Shape(format!(
                "expected {} hidden states of shape {:?}",
                self.stack.num_layers(),
                expect
            ))));
        }
        Ok(())
    }

    /// One time step through every layer. `x: [batch, input]`, `h[l]: [batch, hidden]`.
    pub fn step(&self, x: &Tensor, h: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_state(h)?;
        let mut input = x.clone();
        let mut next = Vec::with_capacity(h.len());
        for (l, layer) in self.stack.layers.iter().enumerate() {
            let gr = input.matmul_t(&layer.w_ir, false, true)?;
            let gz = input.matmul_t(&layer.w_iz, false, true)?;
            let gn = input.matmul_t(&layer.w_in, false, true)?;
            let hl = self.cell(l, [&gr, &gz, &gn], &h[l])?;
            input = hl.clone();
            next.push(hl);
        }
        Ok(next)
    }

    /// Full-sequence pass. Steps are kept as separate `[batch, width]`
    /// tensors between layers and stacked once at the end.
    pub fn forward(&self, inputs: &Tensor, h0: &[Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
        self.check_state(h0)?;
        let [batch, steps, width] = match inputs.shape() {
            &[b, s, w] => [b, s, w],
            other => {
                return Err(NnError::Tensor(TensorError::Shape(format!(
                    "GRU input must be [batch, steps, features], got {other:?}"
                ))))
            }
        };
        if batch != self.batch || width != self.stack.input_size() || steps == 0 {
            return Err(NnError::Tensor(TensorError::Shape(format!(
                "GRU expects [{}, steps > 0, {}], got {:?}",
                self.batch,
                self.stack.input_size(),
                inputs.shape()
            ))));
        }
        let mut xs = (0..steps)
            .map(|t| inputs.select(1, t))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut last = Vec::with_capacity(h0.len());
        for (l, layer) in self.stack.layers.iter().enumerate() {
            let mut h = h0[l].clone();
            for x in xs.iter_mut() {
                let gr = x.matmul_t(&layer.w_ir, false, true)?;
                let gz = x.matmul_t(&layer.w_iz, false, true)?;
                let gn = x.matmul_t(&layer.w_in, false, true)?;
                h = self.cell(l, [&gr, &gz, &gn], &h)?;
                *x = h.clone();
            }
            last.push(h);
        }
        Ok((Tensor::stack(&xs, 1)?, last))
    }
}

/// Runs `stack` over `inputs: [batch, steps, in]` from `h0: [layers, batch, hidden]`,
/// returning the top layer's hidden sequence and the final state of every layer.
pub fn gru_forward(stack: &GruStack, inputs: &Tensor, h0: &Tensor) -> Result<(Tensor, Tensor)> {
    let expect = [stack.num_layers(), inputs.shape().first().copied().unwrap_or(0), stack.hidden_size()];
    if h0.shape() != expect {
        return Err(NnError::Tensor(TensorError::Shape(format!(
            "initial state must be {:?}, got {:?}",
            expect,
            h0.shape()
        ))));
    }
    let h: Vec<Tensor> = (0..stack.num_layers())
        .map(|l| h0.select(0, l))
        .collect::<std::result::Result<_, _>>()?;
    let prepared = stack.prepare(expect[1])?;
    let (outputs, last) = prepared.forward(inputs, &h)?;
    Ok((outputs, Tensor::stack(&last, 0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_gradient_error, FD_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_parameters_stay_at_zero() {
        let mut stack = GruStack::new(2, 5, 2, &mut ChaCha8Rng::seed_from_u64(0));
        stack.fill(0.0);
        let x = Tensor::new(vec![3, 4, 2], (0..24).map(|v| v as f64 * 0.3 - 2.0).collect()).unwrap();
        let (out, last) = gru_forward(&stack, &x, &stack.zero_state(3)).unwrap();
        assert_eq!(out.shape(), &[3, 4, 5]);
        assert!(out.values().iter().all(|&v| v == 0.0));
        assert!(last.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn table_sized_generator_stack_shapes() {
        let stack = GruStack::new(2, 450, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::zeros(&[2, 24, 2]);
        let (out, last) = gru_forward(&stack, &x, &stack.zero_state(2)).unwrap();
        assert_eq!(out.shape(), &[2, 24, 450]);
        assert_eq!(last.shape(), &[3, 2, 450]);
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        let s = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
        let b = |v: f64| Tensor::from_vec(vec![v]);
        let layer = GruLayer {
            w_ir: s(0.5),
            w_iz: s(-0.3),
            w_in: s(0.8),
            w_hr: s(0.2),
            w_hz: s(0.7),
            w_hn: s(-0.6),
            b_ir: b(0.1),
            b_iz: b(-0.2),
            b_in: b(0.05),
            b_hr: b(0.3),
            b_hz: b(0.0),
            b_hn: b(-0.1),
        };
        let stack = GruStack::from_layers(vec![layer]).unwrap();
        let (x, h) = (1.2, -0.4);
        let r = sig(0.5 * x + 0.1 + 0.2 * h + 0.3);
        let z = sig(-0.3 * x - 0.2 + 0.7 * h + 0.0);
        let n = (0.8 * x + 0.05 + r * (-0.6 * h - 0.1)).tanh();
        let expect = (1.0 - z) * n + z * h;
        let (out, _) = gru_forward(
            &stack,
            &Tensor::new(vec![1, 1, 1], vec![x]).unwrap(),
            &Tensor::new(vec![1, 1, 1], vec![h]).unwrap(),
        )
        .unwrap();
        assert!((out.item() - expect).abs() < 1e-15, "{} vs {}", out.item(), expect);
    }

    #[test]
    fn saturated_update_gate_copies_initial_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut stack = GruStack::new(3, 4, 2, &mut rng);
        for layer in &mut stack.layers {
            layer.b_iz = Tensor::full(&[4], 40.0);
        }
        let h0 = uniform_fan_in(&[2, 2, 4], 1, &mut rng);
        let x = uniform_fan_in(&[2, 6, 3], 1, &mut rng);
        let (out, last) = gru_forward(&stack, &x, &h0).unwrap();
        for (a, b) in last.values().iter().zip(h0.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let top0: Vec<f64> = h0.select(0, 1).unwrap().to_vec();
        let final_top = out.select(1, 5).unwrap();
        for (a, b) in final_top.values().iter().zip(&top0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(input, hidden, layers, steps, batch) in &[(1, 1, 1, 1, 1), (2, 3, 2, 3, 2), (3, 4, 1, 3, 1)] {
            let stack = GruStack::new(input, hidden, layers, &mut rng);
            let x = uniform_fan_in(&[batch, steps, input], 1, &mut rng);
            let h0 = uniform_fan_in(&[layers, batch, hidden], 1, &mut rng);
            let w = uniform_fan_in(&[batch, steps, hidden], 1, &mut rng);
            let n_params = stack.params().len();
            let mut inputs: Vec<Tensor> = stack.params().into_iter().cloned().collect();
            inputs.push(h0);
            inputs.push(x);
            let template = stack.clone();
            let f = move |v: &[Tensor]| -> crate::tensor::Result<Tensor> {
                let mut s = template.clone();
                for (p, val) in s.params_mut().into_iter().zip(&v[..n_params]) {
                    *p = val.clone();
                }
                let (out, last) = gru_forward(&s, &v[n_params + 1], &v[n_params])
                    .map_err(|e| match e {
                        NnError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                out.mul(&w)?.sum_all()?.add(&last.square()?.sum_all()?)
            };
            let err = max_gradient_error(&f, &inputs, FD_STEP).unwrap();
            assert!(err < 1e-5, "config {:?}: {err}", (input, hidden, layers, steps));
        }
    }

    #[test]
    fn shape_errors() {
        let stack = GruStack::new(2, 3, 1, &mut ChaCha8Rng::seed_from_u64(0));
        let bad = Tensor::zeros(&[1, 4, 3]);
        assert!(gru_forward(&stack, &bad, &stack.zero_state(1)).is_err());
        let x = Tensor::zeros(&[1, 4, 2]);
        assert!(gru_forward(&stack, &x, &stack.zero_state(2)).is_err());
    }
}
