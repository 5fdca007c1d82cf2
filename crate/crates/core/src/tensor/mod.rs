//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! Tensors are immutable values. A tensor is either detached (a plain value)
//! or attached to a [`Tape`]; any op with at least one attached operand is
//! recorded. Broadcasting is limited to identical shapes and single-element
//! operands, so layer code reshapes and expands explicitly.

mod kernels;
mod tape;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use kernels::Op;
pub use tape::{backward, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract error: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone)]
pub(crate) struct Var {
    pub(crate) tape: Tape,
    pub(crate) index: usize,
}

#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    var: Option<Var>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let head = &self.data[..self.data.len().min(SHOWN)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("values", &head)
            .field("truncated", &(self.data.len() > SHOWN))
            .field("attached", &self.var.is_some())
            .finish()
    }
}

/// Elementwise primitives accepted by [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Log1p,
    Square,
    Sqrt,
    Abs,
    AddScalar(f64),
    MulScalar(f64),
    DivScalar(f64),
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }

    fn op(self) -> Op {
        match self {
            Self::Add => Op::Add,
            Self::Sub => Op::Sub,
            Self::Mul => Op::Mul,
            Self::Div => Op::Div,
            Self::Neg => Op::Neg,
            Self::Tanh => Op::Tanh,
            Self::Sigmoid => Op::Sigmoid,
            Self::Exp => Op::Exp,
            Self::Log1p => Op::Log1p,
            Self::Square => Op::Square,
            Self::Sqrt => Op::Sqrt,
            Self::Abs => Op::Abs,
            Self::AddScalar(c) => Op::AddScalar(c),
            Self::MulScalar(c) => Op::MulScalar(c),
            Self::DivScalar(c) => Op::DivScalar(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Applies an elementwise primitive. Binary ops require `b`; unary ops reject it.
pub fn elementwise(kind: ElementwiseOp, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    match (kind.is_binary(), b) {
        (true, Some(b)) => apply(kind.op(), &[a, b]),
        (false, None) => apply(kind.op(), &[a]),
        (true, None) => Err(TensorError::Contract(format!("{kind:?} needs two operands"))),
        (false, Some(_)) => Err(TensorError::Contract(format!("{kind:?} takes one operand"))),
    }
}

/// Sums or averages over `axes`, removing them. An empty axis list is a no-op.
pub fn reduce(kind: ReduceOp, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    match kind {
        ReduceOp::Sum => a.sum_axes(axes),
        ReduceOp::Mean => a.mean_axes(axes),
    }
}

fn apply(op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let views: Vec<kernels::View> = inputs
        .iter()
        .map(|t| kernels::View {
            shape: &t.shape,
            data: &t.data,
        })
        .collect();
    let (shape, data) = kernels::forward(&op, &views)?;
    let data = Arc::new(data);

    let mut tape: Option<&Tape> = None;
    for t in inputs {
        if let Some(v) = &t.var {
            match tape {
                None => tape = Some(&v.tape),
                Some(existing) if !existing.same(&v.tape) => {
                    return Err(TensorError::Contract(format!(
                        "{} mixes tensors from different tapes",
                        op.name()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    let var = tape.map(|tape| {
        let saved = inputs
            .iter()
            .map(|t| tape::Saved {
                shape: t.shape.clone(),
                data: t.data.clone(),
                index: t.var.as_ref().map(|v| v.index),
            })
            .collect();
        let index = tape.push(tape::Record {
            op,
            inputs: saved,
            shape: shape.clone(),
            data: data.clone(),
        });
        Var {
            tape: tape.clone(),
            index,
        }
    });
    Ok(Tensor { shape, data, var })
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            var: None,
        })
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data: Arc::new(data),
            var: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
            var: None,
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; shape.iter().product()]),
            var: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_attached(&self) -> bool {
        self.var.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.var.as_ref().map(|v| &v.tape)
    }

    /// Same values, no tape participation.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            var: None,
        }
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        apply(Op::Add, &[self, other])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        apply(Op::Sub, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        apply(Op::Mul, &[self, other])
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        apply(Op::Div, &[self, other])
    }

    pub fn neg(&self) -> Result<Tensor> {
        apply(Op::Neg, &[self])
    }

    pub fn tanh(&self) -> Result<Tensor> {
        apply(Op::Tanh, &[self])
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        apply(Op::Sigmoid, &[self])
    }

    pub fn exp(&self) -> Result<Tensor> {
        apply(Op::Exp, &[self])
    }

    pub fn log1p(&self) -> Result<Tensor> {
        apply(Op::Log1p, &[self])
    }

    pub fn square(&self) -> Result<Tensor> {
        apply(Op::Square, &[self])
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        apply(Op::Sqrt, &[self])
    }

    pub fn abs(&self) -> Result<Tensor> {
        apply(Op::Abs, &[self])
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        apply(Op::AddScalar(c), &[self])
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Tensor> {
        apply(Op::MulScalar(c), &[self])
    }

    pub fn div_scalar(&self, c: f64) -> Result<Tensor> {
        apply(Op::DivScalar(c), &[self])
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` optionally transposes a matrix.
    pub fn matmul_t(&self, other: &Tensor, transpose_self: bool, transpose_other: bool) -> Result<Tensor> {
        apply(
            Op::MatMul {
                ta: transpose_self,
                tb: transpose_other,
            },
            &[self, other],
        )
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        apply(Op::Sum { axes: axes.to_vec() }, &[self])
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.sum_axes(&axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let sum = self.sum_axes(axes)?;
        if axes.is_empty() {
            return Ok(sum);
        }
        let count: usize = axes.iter().map(|&a| self.shape[a]).product();
        sum.div_scalar(count as f64)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.mean_axes(&axes)
    }

    /// Inserts `axes` into this tensor's shape by repetition, producing `shape`.
    pub fn expand(&self, axes: &[usize], shape: &[usize]) -> Result<Tensor> {
        apply(
            Op::Expand {
                axes: axes.to_vec(),
                shape: shape.to_vec(),
            },
            &[self],
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        apply(
            Op::Reshape {
                shape: shape.to_vec(),
            },
            &[self],
        )
    }

    /// Slice at `index` along `axis`, removing that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        apply(Op::Select { axis, index }, &[self])
    }

    /// Inverse of [`Tensor::select`]: embeds this tensor at `index` of a new
    /// zero-filled axis of length `len`.
    pub fn unselect(&self, axis: usize, index: usize, len: usize) -> Result<Tensor> {
        apply(Op::Unselect { axis, index, len }, &[self])
    }

    /// Stacks equally shaped tensors along a new axis.
    pub fn stack(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = tensors.iter().collect();
        apply(Op::Stack { axis }, &refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().values(), &[4.0, 6.0]);
        assert_eq!(Tensor::from_vec(vec![0.0]).tanh().unwrap().values(), &[0.0]);
        assert_eq!(Tensor::from_vec(vec![0.0]).sigmoid().unwrap().values(), &[0.5]);
        let via_generic = elementwise(ElementwiseOp::Add, &a, Some(&b)).unwrap();
        assert!(via_generic.bit_eq(&a.add(&b).unwrap()));
    }

    #[test]
    fn generic_entry_point_checks_arity() {
        let a = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            elementwise(ElementwiseOp::Mul, &a, None),
            Err(TensorError::Contract(_))
        ));
        assert!(matches!(
            elementwise(ElementwiseOp::Tanh, &a, Some(&a)),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn scalar_broadcast_only() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = Tensor::scalar(10.0);
        assert_eq!(a.mul(&s).unwrap().values(), &[10.0, 20.0, 30.0, 40.0]);
        assert_eq!(s.sub(&a).unwrap().shape(), &[2, 2]);
        let row = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(matches!(a.add(&row), Err(TensorError::Shape(_))));
    }

    #[test]
    fn domain_violations() {
        let x = Tensor::from_vec(vec![0.5, -1.0]);
        assert!(matches!(x.log1p(), Err(TensorError::Domain { op: "log1p", .. })));
        assert!(matches!(
            Tensor::from_vec(vec![-0.1]).sqrt(),
            Err(TensorError::Domain { .. })
        ));
        assert!(matches!(
            Tensor::from_vec(vec![1.0]).div(&Tensor::from_vec(vec![0.0])),
            Err(TensorError::Domain { .. })
        ));
        assert!(matches!(
            Tensor::from_vec(vec![1000.0]).exp(),
            Err(TensorError::Domain { .. })
        ));
    }

    #[test]
    fn matmul_examples() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a.matmul(&eye).unwrap().values(), a.values());
        let row = t(&[1, 2], &[1.0, 2.0]);
        let col = t(&[2, 1], &[3.0, 4.0]);
        let p = row.matmul(&col).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.values(), &[11.0]);
        let z = Tensor::zeros(&[2, 3]);
        let any = t(&[3, 5], &(0..15).map(|v| v as f64 - 7.0).collect::<Vec<_>>());
        let zz = z.matmul(&any).unwrap();
        assert_eq!(zz.shape(), &[2, 5]);
        assert!(zz.values().iter().all(|&v| v == 0.0));
        assert!(matches!(row.matmul(&row), Err(TensorError::Shape(_))));
    }

    #[test]
    fn transposed_matmul_agrees_with_explicit_layout() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let at = t(&[3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let b = t(&[2, 2], &[1.0, -1.0, 2.0, 0.5]);
        let direct = at.matmul(&b).unwrap();
        let viat = a.matmul_t(&b, true, false).unwrap();
        assert_eq!(direct.values(), viat.values());
        let bt = t(&[2, 2], &[1.0, 2.0, -1.0, 0.5]);
        assert_eq!(
            at.matmul_t(&bt, false, true).unwrap().values(),
            direct.values()
        );
    }

    #[test]
    fn reduce_examples() {
        let x = Tensor::from_vec(vec![2.0, 4.0, 6.0]);
        assert_eq!(reduce(ReduceOp::Mean, &x, &[0]).unwrap().item(), 4.0);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!(reduce(ReduceOp::Sum, &m, &[]).unwrap().bit_eq(&m));
        assert_eq!(m.sum_axes(&[0]).unwrap().values(), &[4.0, 6.0]);
        assert_eq!(m.sum_axes(&[1]).unwrap().values(), &[3.0, 7.0]);
        assert!(matches!(m.sum_axes(&[2]), Err(TensorError::Shape(_))));
    }

    #[test]
    fn middle_axis_reduction_and_expand_are_adjoint_shapes() {
        let x = t(&[2, 3, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let s = x.sum_axes(&[1]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.values(), &[6.0, 9.0, 24.0, 27.0]);
        let e = s.expand(&[1], &[2, 3, 2]).unwrap();
        assert_eq!(e.shape(), &[2, 3, 2]);
        assert_eq!(&e.values()[..4], &[6.0, 9.0, 6.0, 9.0]);
    }

    #[test]
    fn select_stack_roundtrip() {
        let x = t(&[2, 3, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let slices: Vec<Tensor> = (0..3).map(|i| x.select(1, i).unwrap()).collect();
        assert_eq!(slices[1].values(), &[2.0, 3.0, 8.0, 9.0]);
        let back = Tensor::stack(&slices, 1).unwrap();
        assert!(back.bit_eq(&x));
        let u = slices[2].unselect(1, 2, 3).unwrap();
        assert_eq!(u.values()[4..6], [4.0, 5.0]);
        assert_eq!(u.values()[0..4], [0.0; 4]);
    }

    #[test]
    fn mean_is_sum_over_n_for_powers_of_two() {
        let v: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let x = Tensor::from_vec(v);
        let sum = x.sum_all().unwrap().item();
        assert_eq!(x.mean_all().unwrap().item().to_bits(), (sum / 64.0).to_bits());
    }

    #[test]
    fn backward_first_order_examples() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let loss = x.square().unwrap().sum_all().unwrap();
        let g = backward(&loss, &[&x], false).unwrap();
        assert_eq!(g[0].values(), &[2.0, -4.0, 6.0]);

        let tape = Tape::new();
        let w = tape.leaf(&Tensor::from_vec(vec![0.3]));
        let x = Tensor::from_vec(vec![5.0]);
        let loss = w.mul(&x).unwrap().sum_all().unwrap();
        let g = backward(&loss, &[&w], false).unwrap();
        assert_eq!(g[0].values(), &[5.0]);
    }

    #[test]
    fn backward_second_order_example() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![0.7]));
        let inner = x.square().unwrap().sum_all().unwrap();
        let dx = backward(&inner, &[&x], true).unwrap().remove(0);
        assert!(dx.is_attached());
        let h = dx.square().unwrap().sum_all().unwrap();
        let dh = backward(&h, &[&x], false).unwrap();
        assert!((dh[0].item() - 5.6).abs() < 1e-12);
    }

    #[test]
    fn backward_contracts() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]));
        let y = x.square().unwrap();
        assert!(matches!(backward(&y, &[&x], false), Err(TensorError::Contract(_))));

        let detached = Tensor::from_vec(vec![4.0, 4.0, 4.0]);
        let loss = y.sum_all().unwrap();
        let g = backward(&loss, &[&x, &detached], false).unwrap();
        assert_eq!(g[1].shape(), &[3]);
        assert!(g[1].values().iter().all(|&v| v == 0.0));

        let other = Tape::new().leaf(&Tensor::scalar(1.0));
        assert!(matches!(x.add(&other), Err(TensorError::Contract(_))));
    }

    #[test]
    fn gradient_with_respect_to_intermediate() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![0.5, -0.25]));
        let y = x.tanh().unwrap();
        let loss = y.mul_scalar(3.0).unwrap().sum_all().unwrap();
        let g = backward(&loss, &[&y, &x], false).unwrap();
        assert_eq!(g[0].values(), &[3.0, 3.0]);
        let expect: Vec<f64> = x.values().iter().map(|v| 3.0 * (1.0 - v.tanh().powi(2))).collect();
        for (a, b) in g[1].values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn replay_reproduces_outputs() {
        let tape = Tape::new();
        let a = tape.leaf(&t(&[2, 3], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
        let b = tape.leaf(&t(&[3, 2], &[1.0, 0.5, -0.5, 2.0, 0.25, -1.0]));
        let h = a.matmul(&b).unwrap().tanh().unwrap().sigmoid().unwrap();
        let loss = h.square().unwrap().mean_all().unwrap();
        backward(&loss, &[&a, &b], true).unwrap();
        assert!(tape.len() > 6);
        assert!(tape.replay_matches().unwrap());
    }
}
