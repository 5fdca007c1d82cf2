//! Central finite-difference checks of the reverse-mode engine.
//!
//! The numeric side only ever evaluates the function forward; it never calls
//! into the VJP code it is checking. Functions under test may use
//! [`backward`] with `create_graph` internally (the gradient-penalty pattern),
//! so every evaluation happens on a fresh tape with the inputs as leaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{backward, Result, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FIRST_ORDER_TOL: f64 = 1e-5;
pub const SECOND_ORDER_TOL: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, 1)`: relative for large values, absolute near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub type ScalarFn<'a> = dyn Fn(&[Tensor]) -> Result<Tensor> + 'a;

fn evaluate(f: &ScalarFn, inputs: &[Tensor]) -> Result<f64> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    Ok(f(&leaves)?.item())
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradient(f: &ScalarFn, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&leaves)?;
    let refs: Vec<&Tensor> = leaves.iter().collect();
    backward(&loss, &refs, false)
}

/// Central differences of `f` with respect to every input element.
pub fn numeric_gradient(f: &ScalarFn, inputs: &[Tensor], step: f64) -> Result<Vec<Vec<f64>>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(x.numel());
        for k in 0..x.numel() {
            let probe = |delta: f64| -> Result<f64> {
                let mut v = x.to_vec();
                v[k] += delta;
                let mut shifted = inputs.to_vec();
                shifted[i] = Tensor::new(x.shape().to_vec(), v)?;
                evaluate(f, &shifted)
            };
            let plus = probe(step)?;
            let minus = probe(-step)?;
            g.push((plus - minus) / (2.0 * step));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest [`relative_error`] between analytic and numeric gradients.
pub fn max_gradient_error(f: &ScalarFn, inputs: &[Tensor], step: f64) -> Result<f64> {
    let analytic = analytic_gradient(f, inputs)?;
    let numeric = numeric_gradient(f, inputs, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .flat_map(|(a, n)| a.values().iter().zip(n).map(|(&a, &n)| relative_error(a, n)))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches length")
}

fn random_shape(rng: &mut ChaCha8Rng, max_rank: usize) -> Vec<usize> {
    let rank = rng.random_range(1..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=5)).collect()
}

/// Away from the kink of `abs` and from zero denominators.
fn nonzero_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches length")
}

/// Weighted sum `Σ w ⊙ y` so every output element carries a distinct cotangent.
fn weighted(y: &Tensor, w: &Tensor) -> Result<Tensor> {
    y.mul(w)?.sum_all()
}

struct Case {
    inputs: Vec<Tensor>,
    f: Box<ScalarFn<'static>>,
}

fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng, 3);
    let n_out = |s: &[usize]| s.to_vec();
    let w_for = |rng: &mut ChaCha8Rng, s: &[usize]| uniform_tensor(rng, s, -2.0, 2.0);
    macro_rules! unary {
        ($lo:expr, $hi:expr, $body:expr) => {{
            let x = uniform_tensor(rng, &shape, $lo, $hi);
            let w = w_for(rng, &n_out(&shape));
            Case {
                inputs: vec![x],
                f: Box::new(move |v: &[Tensor]| weighted(&$body(&v[0])?, &w)),
            }
        }};
    }
    macro_rules! binary {
        ($b:expr, $body:expr) => {{
            let x = uniform_tensor(rng, &shape, -2.0, 2.0);
            let y = $b;
            let w = w_for(rng, &shape);
            Case {
                inputs: vec![x, y],
                f: Box::new(move |v: &[Tensor]| weighted(&$body(&v[0], &v[1])?, &w)),
            }
        }};
    }
    match name {
        "add" => binary!(uniform_tensor(rng, &shape, -2.0, 2.0), |a: &Tensor, b| a.add(b)),
        "sub" => binary!(uniform_tensor(rng, &shape, -2.0, 2.0), |a: &Tensor, b| a.sub(b)),
        "mul" => binary!(uniform_tensor(rng, &shape, -2.0, 2.0), |a: &Tensor, b| a.mul(b)),
        "div" => binary!(nonzero_tensor(rng, &shape, 0.5, 2.0), |a: &Tensor, b| a.div(b)),
        "mul_scalar_broadcast" => {
            binary!(uniform_tensor(rng, &[], -2.0, 2.0), |a: &Tensor, b| a.mul(b))
        }
        "div_scalar_broadcast" => {
            binary!(nonzero_tensor(rng, &[1], 0.5, 2.0), |a: &Tensor, b| a.div(b))
        }
        "sub_scalar_broadcast" => {
            binary!(uniform_tensor(rng, &[], -2.0, 2.0), |a: &Tensor, b: &Tensor| b.sub(a))
        }
        "neg" => unary!(-2.0, 2.0, |x: &Tensor| x.neg()),
        "tanh" => unary!(-2.0, 2.0, |x: &Tensor| x.tanh()),
        "sigmoid" => unary!(-2.0, 2.0, |x: &Tensor| x.sigmoid()),
        "exp" => unary!(-2.0, 2.0, |x: &Tensor| x.exp()),
        "log1p" => unary!(-0.9, 2.0, |x: &Tensor| x.log1p()),
        "square" => unary!(-2.0, 2.0, |x: &Tensor| x.square()),
        "sqrt" => unary!(0.1, 2.0, |x: &Tensor| x.sqrt()),
        "abs" => {
            let x = nonzero_tensor(rng, &shape, 0.05, 2.0);
            let w = w_for(rng, &shape);
            Case {
                inputs: vec![x],
                f: Box::new(move |v: &[Tensor]| weighted(&v[0].abs()?, &w)),
            }
        }
        "add_scalar" => unary!(-2.0, 2.0, |x: &Tensor| x.add_scalar(0.75)),
        "mul_scalar" => unary!(-2.0, 2.0, |x: &Tensor| x.mul_scalar(-1.5)),
        "div_scalar" => unary!(-2.0, 2.0, |x: &Tensor| x.div_scalar(3.0)),
        "matmul" => {
            let (m, k, n) = (
                rng.random_range(1..=5),
                rng.random_range(1..=5),
                rng.random_range(1..=5),
            );
            let ta = rng.random_bool(0.5);
            let tb = rng.random_bool(0.5);
            let a = uniform_tensor(rng, &if ta { [k, m] } else { [m, k] }, -2.0, 2.0);
            let b = uniform_tensor(rng, &if tb { [n, k] } else { [k, n] }, -2.0, 2.0);
            let w = w_for(rng, &[m, n]);
            Case {
                inputs: vec![a, b],
                f: Box::new(move |v: &[Tensor]| weighted(&v[0].matmul_t(&v[1], ta, tb)?, &w)),
            }
        }
        "sum" | "mean" => {
            let x = uniform_tensor(rng, &shape, -2.0, 2.0);
            let axes: Vec<usize> = (0..shape.len()).filter(|_| rng.random_bool(0.5)).collect();
            let out: Vec<usize> = shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &s)| s)
                .collect();
            let w = w_for(rng, &out);
            let mean = name == "mean";
            Case {
                inputs: vec![x],
                f: Box::new(move |v: &[Tensor]| {
                    let r = if mean { v[0].mean_axes(&axes)? } else { v[0].sum_axes(&axes)? };
                    weighted(&r, &w)
                }),
            }
        }
        "expand" => {
            let full = random_shape(rng, 3);
            let axes: Vec<usize> = (0..full.len()).filter(|_| rng.random_bool(0.5)).collect();
            let reduced: Vec<usize> = full
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &s)| s)
                .collect();
            let x = uniform_tensor(rng, &reduced, -2.0, 2.0);
            let w = w_for(rng, &full);
            Case {
                inputs: vec![x],
                f: Box::new(move |v: &[Tensor]| weighted(&v[0].expand(&axes, &full)?, &w)),
            }
        }
        "reshape" => {
            let x = uniform_tensor(rng, &shape, -2.0, 2.0);
            let flat = vec![x.numel()];
            let w = w_for(rng, &flat);
            Case {
                inputs: vec![x],
                f: Box::new(move |v: &[Tensor]| weighted(&v[0].tanh()?.reshape(&flat)?, &w)),
            }
        }
        "select" | "unselect" => {
            let axis = rng.random_range(0..shape.len());
            let index = rng.random_range(0..shape[axis]);
            let x = uniform_tensor(rng, &shape, -2.0, 2.0);
            let mut reduced = shape.clone();
            reduced.remove(axis);
            if name == "select" {
                let w = w_for(rng, &reduced);
                Case {
                    inputs: vec![x],
                    f: Box::new(move |v: &[Tensor]| weighted(&v[0].select(axis, index)?, &w)),
                }
            } else {
                let len = shape[axis];
                let x = uniform_tensor(rng, &reduced, -2.0, 2.0);
                let w = w_for(rng, &shape);
                Case {
                    inputs: vec![x],
                    f: Box::new(move |v: &[Tensor]| {
                        weighted(&v[0].unselect(axis, index, len)?, &w)
                    }),
                }
            }
        }
        "stack" => {
            let parts = rng.random_range(1..=4);
            let axis = rng.random_range(0..=shape.len());
            let inputs: Vec<Tensor> = (0..parts)
                .map(|_| uniform_tensor(rng, &shape, -2.0, 2.0))
                .collect();
            let mut out = shape.clone();
            out.insert(axis, parts);
            let w = w_for(rng, &out);
            Case {
                inputs,
                f: Box::new(move |v: &[Tensor]| weighted(&Tensor::stack(v, axis)?, &w)),
            }
        }
        other => panic!("no gradient check case for primitive {other}"),
    }
}

/// Every differentiable primitive exercised by [`primitive_suite`].
pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "mul_scalar_broadcast",
    "div_scalar_broadcast",
    "sub_scalar_broadcast",
    "neg",
    "tanh",
    "sigmoid",
    "exp",
    "log1p",
    "square",
    "sqrt",
    "abs",
    "add_scalar",
    "mul_scalar",
    "div_scalar",
    "matmul",
    "sum",
    "mean",
    "expand",
    "reshape",
    "select",
    "unselect",
    "stack",
];

/// First-order checks: `cases` random small tensors per primitive.
pub fn primitive_suite(seed: u64, cases: usize) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(PRIMITIVES.len());
    for &name in PRIMITIVES {
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let case = primitive_case(name, &mut rng);
            worst = worst.max(max_gradient_error(&*case.f, &case.inputs, FD_STEP)?);
        }
        reports.push(CheckReport {
            name: name.to_string(),
            cases,
            max_rel_error: worst,
            tolerance: FIRST_ORDER_TOL,
        });
    }
    Ok(reports)
}

/// `(‖∂ Σ critic(x) / ∂x‖₂ − 1)²` with the inner gradient kept on the graph.
pub fn norm_penalty(x: &Tensor, critic: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let score = critic(x)?.sum_all()?;
    let g = backward(&score, &[x], true)?.remove(0);
    g.square()?.sum_all()?.sqrt()?.add_scalar(-1.0)?.square()
}

/// Second-order checks of compositions that differentiate through a gradient.
pub fn second_order_suite(seed: u64, cases: usize) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // h(x) = Σ (∂ Σ x² / ∂x)²
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let shape = random_shape(&mut rng, 2);
        let x = uniform_tensor(&mut rng, &shape, -2.0, 2.0);
        let f = |v: &[Tensor]| -> Result<Tensor> {
            let inner = v[0].square()?.sum_all()?;
            let g = backward(&inner, &[&v[0]], true)?.remove(0);
            g.square()?.sum_all()
        };
        worst = worst.max(max_gradient_error(&f, &[x], FD_STEP)?);
    }
    reports.push(CheckReport {
        name: "squared_gradient".into(),
        cases,
        max_rel_error: worst,
        tolerance: SECOND_ORDER_TOL,
    });

    // Gradient-norm penalty of a two-layer tanh/sigmoid critic, differentiated
    // with respect to the critic weights and the evaluation point.
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let batch = rng.random_range(1..=3);
        let features = rng.random_range(1..=4);
        let hidden = rng.random_range(1..=4);
        let x = uniform_tensor(&mut rng, &[batch, features], -2.0, 2.0);
        let w1 = uniform_tensor(&mut rng, &[features, hidden], -1.0, 1.0);
        let b1 = uniform_tensor(&mut rng, &[], -0.5, 0.5);
        let w2 = uniform_tensor(&mut rng, &[hidden, 1], -2.0, 2.0);
        let f = |v: &[Tensor]| -> Result<Tensor> {
            let (w1, b1, w2) = (&v[1], &v[2], &v[3]);
            norm_penalty(&v[0], |x| {
                x.matmul(w1)?.add(b1)?.tanh()?.matmul(w2)?.sigmoid()
            })
        };
        worst = worst.max(max_gradient_error(&f, &[x, w1, b1, w2], FD_STEP)?);
    }
    reports.push(CheckReport {
        name: "gradient_norm_penalty".into(),
        cases,
        max_rel_error: worst,
        tolerance: SECOND_ORDER_TOL,
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_pass_matches_finite_difference_at_point() {
        let f = |v: &[Tensor]| -> Result<Tensor> {
            let inner = v[0].square()?.sum_all()?;
            let g = backward(&inner, &[&v[0]], true)?.remove(0);
            g.square()?.sum_all()
        };
        let x = Tensor::from_vec(vec![0.7]);
        let analytic = analytic_gradient(&f, &[x.clone()]).unwrap()[0].item();
        let numeric = numeric_gradient(&f, &[x], FD_STEP).unwrap()[0][0];
        // 8x at 0.7
        assert!((numeric - 5.6).abs() / 5.6 < 1e-5);
        assert!(relative_error(analytic, numeric) < 1e-5);
    }

    #[test]
    fn primitives_pass_small_suite() {
        for r in primitive_suite(3, 5).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn second_order_small_suite() {
        for r in second_order_suite(5, 5).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // A function whose "analytic" path is broken by detaching part of it.
        let f = |v: &[Tensor]| -> Result<Tensor> {
            let d = v[0].detach();
            v[0].mul(&d)?.sum_all()
        };
        let x = Tensor::from_vec(vec![1.5, -0.5]);
        assert!(max_gradient_error(&f, &[x], FD_STEP).unwrap() > 0.1);
    }
}
