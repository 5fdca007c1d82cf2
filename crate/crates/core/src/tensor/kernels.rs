//! Forward kernels and vector-Jacobian products for every recorded primitive.
//!
//! Forward kernels are pure functions of the input buffers, which is what makes
//! tape replay bit-exact. The VJPs are written in terms of ordinary [`Tensor`]
//! operations, so when the backward pass runs with `create_graph` the gradient
//! computation is itself recorded and can be differentiated again.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Leaf,
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
    MatMul { ta: bool, tb: bool },
    Sum { axes: Vec<usize> },
    Expand { axes: Vec<usize>, shape: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Select { axis: usize, index: usize },
    Unselect { axis: usize, index: usize, len: usize },
    Stack { axis: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log1p => "log1p",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Abs => "abs",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::DivScalar(_) => "div_scalar",
            Op::MatMul { .. } => "matmul",
            Op::Sum { .. } => "sum",
            Op::Expand { .. } => "expand",
            Op::Reshape { .. } => "reshape",
            Op::Select { .. } => "select",
            Op::Unselect { .. } => "unselect",
            Op::Stack { .. } => "stack",
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub shape: &'a [usize],
    pub data: &'a [f64],
}

pub(crate) type Buffer = (Vec<usize>, Vec<f64>);

fn shape_err(op: &Op, detail: impl Into<String>) -> TensorError {
    TensorError::Shape(format!("{}: {}", op.name(), detail.into()))
}

fn domain_err(op: &Op, detail: impl Into<String>) -> TensorError {
    TensorError::Domain {
        op: op.name(),
        detail: detail.into(),
    }
}

fn arity(op: &Op, inputs: &[View], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(TensorError::Contract(format!(
            "{} expects {} inputs, got {}",
            op.name(),
            n,
            inputs.len()
        )));
    }
    Ok(())
}

pub(crate) fn forward(op: &Op, inputs: &[View]) -> Result<Buffer> {
    match op {
        Op::Leaf => Err(TensorError::Contract("leaf records have no kernel".into())),
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if matches!(op, Op::Div) && b.data.contains(&0.0) {
                return Err(domain_err(op, "division by zero"));
            }
            let out = match op {
                Op::Add => binary(op, a, b, |x, y| x + y),
                Op::Sub => binary(op, a, b, |x, y| x - y),
                Op::Mul => binary(op, a, b, |x, y| x * y),
                _ => binary(op, a, b, |x, y| x / y),
            }?;
            check_finite(op, inputs, out)
        }
        Op::Neg
        | Op::Tanh
        | Op::Sigmoid
        | Op::Exp
        | Op::Log1p
        | Op::Square
        | Op::Sqrt
        | Op::Abs
        | Op::AddScalar(_)
        | Op::MulScalar(_)
        | Op::DivScalar(_) => {
            arity(op, inputs, 1)?;
            let a = inputs[0];
            match op {
                Op::Log1p => {
                    if let Some(v) = a.data.iter().find(|&&v| v <= -1.0) {
                        return Err(domain_err(op, format!("input {v} <= -1")));
                    }
                }
                Op::Sqrt => {
                    if let Some(v) = a.data.iter().find(|&&v| v < 0.0) {
                        return Err(domain_err(op, format!("input {v} < 0")));
                    }
                }
                Op::DivScalar(c) if *c == 0.0 => {
                    return Err(domain_err(op, "division by zero"));
                }
                _ => {}
            }
            let data: Vec<f64> = match op {
                Op::Neg => a.data.iter().map(|v| -v).collect(),
                Op::Tanh => a.data.iter().map(|v| v.tanh()).collect(),
                Op::Sigmoid => a.data.iter().map(|&v| sigmoid(v)).collect(),
                Op::Exp => a.data.iter().map(|v| v.exp()).collect(),
                Op::Log1p => a.data.iter().map(|v| v.ln_1p()).collect(),
                Op::Square => a.data.iter().map(|v| v * v).collect(),
                Op::Sqrt => a.data.iter().map(|v| v.sqrt()).collect(),
                Op::Abs => a.data.iter().map(|v| v.abs()).collect(),
                Op::AddScalar(c) => a.data.iter().map(|v| v + c).collect(),
                Op::MulScalar(c) => a.data.iter().map(|v| v * c).collect(),
                Op::DivScalar(c) => a.data.iter().map(|v| v / c).collect(),
                _ => unreachable!(),
            };
            check_finite(op, inputs, (a.shape.to_vec(), data))
        }
        Op::MatMul { ta, tb } => {
            arity(op, inputs, 2)?;
            matmul(op, inputs[0], inputs[1], *ta, *tb)
        }
        Op::Sum { axes } => {
            arity(op, inputs, 1)?;
            sum_axes(op, inputs[0], axes)
        }
        Op::Expand { axes, shape } => {
            arity(op, inputs, 1)?;
            expand(op, inputs[0], axes, shape)
        }
        Op::Reshape { shape } => {
            arity(op, inputs, 1)?;
            let a = inputs[0];
            if shape.iter().product::<usize>() != a.data.len() {
                return Err(shape_err(
                    op,
                    format!("cannot view {:?} as {:?}", a.shape, shape),
                ));
            }
            Ok((shape.clone(), a.data.to_vec()))
        }
        Op::Select { axis, index } => {
            arity(op, inputs, 1)?;
            select(op, inputs[0], *axis, *index)
        }
        Op::Unselect { axis, index, len } => {
            arity(op, inputs, 1)?;
            unselect(op, inputs[0], *axis, *index, *len)
        }
        Op::Stack { axis } => stack(op, inputs, *axis),
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_finite(op: &Op, inputs: &[View], out: Buffer) -> Result<Buffer> {
    let out_finite = out.1.iter().fold(true, |ok, x| ok & x.is_finite());
    if !out_finite && inputs.iter().all(|v| v.data.iter().all(|x| x.is_finite())) {
        return Err(domain_err(op, "result overflowed to a non-finite value"));
    }
    Ok(out)
}

fn binary(op: &Op, a: View, b: View, f: impl Fn(f64, f64) -> f64) -> Result<Buffer> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok((a.shape.to_vec(), data))
    } else if b.data.len() == 1 {
        let y = b.data[0];
        Ok((a.shape.to_vec(), a.data.iter().map(|&x| f(x, y)).collect()))
    } else if a.data.len() == 1 {
        let x = a.data[0];
        Ok((b.shape.to_vec(), b.data.iter().map(|&y| f(x, y)).collect()))
    } else {
        Err(shape_err(
            op,
            format!("shapes {:?} and {:?} do not broadcast", a.shape, b.shape),
        ))
    }
}

fn matmul(op: &Op, a: View, b: View, ta: bool, tb: bool) -> Result<Buffer> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(shape_err(
            op,
            format!("expected matrices, got {:?} and {:?}", a.shape, b.shape),
        ));
    }
    let (m, k) = if ta {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (k2, n) = if tb {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if k != k2 {
        return Err(shape_err(
            op,
            format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape,
                if ta { "^T" } else { "" },
                b.shape,
                if tb { "^T" } else { "" }
            ),
        ));
    }
    let mut c = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: the strides above describe exactly the m×k and k×n logical
        // matrices stored in `a.data` and `b.data`, and `c` holds m×n values.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                0.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok((vec![m, n], c))
}

fn normalize_axes(op: &Op, rank: usize, axes: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != axes.len() {
        return Err(shape_err(op, format!("repeated axis in {axes:?}")));
    }
    if let Some(&bad) = sorted.iter().find(|&&ax| ax >= rank) {
        return Err(shape_err(op, format!("axis {bad} out of range for rank {rank}")));
    }
    Ok(sorted)
}

/// Row-major strides of `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// For every dimension of `full`, the stride into the reduced buffer (0 for reduced axes).
fn reduced_strides(full: &[usize], axes: &[usize]) -> Vec<usize> {
    let kept: Vec<usize> = full
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &n)| n)
        .collect();
    let kept_strides = strides(&kept);
    let mut out = Vec::with_capacity(full.len());
    let mut k = 0;
    for d in 0..full.len() {
        if axes.contains(&d) {
            out.push(0);
        } else {
            out.push(kept_strides[k]);
            k += 1;
        }
    }
    out
}

/// Visits every element of `full` in row-major order, passing its offset into
/// the reduced buffer described by `rstrides`.
fn for_each_reduced(full: &[usize], rstrides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = full.iter().product();
    if total == 0 {
        return;
    }
    let rank = full.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for flat in 0..total {
        f(flat, off);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            off += rstrides[d];
            if idx[d] < full[d] {
                break;
            }
            off -= rstrides[d] * full[d];
            idx[d] = 0;
        }
    }
}

fn sum_axes(op: &Op, a: View, axes: &[usize]) -> Result<Buffer> {
    let axes = normalize_axes(op, a.shape.len(), axes)?;
    if axes.is_empty() {
        return Ok((a.shape.to_vec(), a.data.to_vec()));
    }
    let out_shape: Vec<usize> = a
        .shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &n)| n)
        .collect();
    let mut out = vec![0.0; out_shape.iter().product()];
    if axes.len() == a.shape.len() {
        out[0] = a.data.iter().sum();
        return Ok((out_shape, out));
    }
    let rs = reduced_strides(a.shape, &axes);
    for_each_reduced(a.shape, &rs, |flat, off| out[off] += a.data[flat]);
    Ok((out_shape, out))
}

fn expand(op: &Op, a: View, axes: &[usize], shape: &[usize]) -> Result<Buffer> {
    let axes = normalize_axes(op, shape.len(), axes)?;
    let expect: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &n)| n)
        .collect();
    if expect != a.shape {
        return Err(shape_err(
            op,
            format!(
                "cannot expand {:?} along {:?} to {:?}",
                a.shape, axes, shape
            ),
        ));
    }
    let lead = axes.iter().enumerate().all(|(i, &d)| i == d);
    if lead {
        // Leading axes only: the output is the input repeated end to end.
        let reps = shape[..axes.len()].iter().product::<usize>();
        let mut out = Vec::with_capacity(reps * a.data.len());
        for _ in 0..reps {
            out.extend_from_slice(a.data);
        }
        return Ok((shape.to_vec(), out));
    }
    let mut out = vec![0.0; shape.iter().product()];
    let rs = reduced_strides(shape, &axes);
    for_each_reduced(shape, &rs, |flat, off| out[flat] = a.data[off]);
    Ok((shape.to_vec(), out))
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

fn select(op: &Op, a: View, axis: usize, index: usize) -> Result<Buffer> {
    if axis >= a.shape.len() {
        return Err(shape_err(op, format!("axis {axis} out of range for {:?}", a.shape)));
    }
    let len = a.shape[axis];
    if index >= len {
        return Err(shape_err(op, format!("index {index} out of range for axis of length {len}")));
    }
    let (outer, inner) = split_at_axis(a.shape, axis);
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let start = (o * len + index) * inner;
        out.extend_from_slice(&a.data[start..start + inner]);
    }
    let mut shape = a.shape.to_vec();
    shape.remove(axis);
    Ok((shape, out))
}

fn unselect(op: &Op, a: View, axis: usize, index: usize, len: usize) -> Result<Buffer> {
    if axis > a.shape.len() || index >= len {
        return Err(shape_err(
            op,
            format!("cannot place {:?} at axis {axis} index {index} of {len}", a.shape),
        ));
    }
    let mut shape = a.shape.to_vec();
    shape.insert(axis, len);
    let (outer, inner) = split_at_axis(&shape, axis);
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        let dst = (o * len + index) * inner;
        out[dst..dst + inner].copy_from_slice(&a.data[o * inner..(o + 1) * inner]);
    }
    Ok((shape, out))
}

fn stack(op: &Op, inputs: &[View], axis: usize) -> Result<Buffer> {
    let first = inputs
        .first()
        .ok_or_else(|| shape_err(op, "nothing to stack"))?;
    if axis > first.shape.len() {
        return Err(shape_err(op, format!("axis {axis} out of range")));
    }
    if let Some(bad) = inputs.iter().find(|v| v.shape != first.shape) {
        return Err(shape_err(
            op,
            format!("mismatched shapes {:?} and {:?}", first.shape, bad.shape),
        ));
    }
    let n = inputs.len();
    let outer: usize = first.shape[..axis].iter().product();
    let inner: usize = first.shape[axis..].iter().product();
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for v in inputs {
            out.extend_from_slice(&v.data[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = first.shape.to_vec();
    shape.insert(axis, n);
    Ok((shape, out))
}

/// Reduces a broadcast gradient back to the shape of the operand it came from.
fn unbroadcast(g: Tensor, shape: &[usize]) -> Result<Tensor> {
    if g.shape() == shape {
        Ok(g)
    } else {
        g.sum_all()?.reshape(shape)
    }
}

/// Vector-Jacobian product: gradients with respect to each input given the
/// upstream gradient `g`. Entries for inputs with `needs[i] == false` are `None`.
pub(crate) fn vjp(
    op: &Op,
    inputs: &[Tensor],
    output: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let need = |i: usize| needs.get(i).copied().unwrap_or(false);
    let mut out: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match op {
        Op::Leaf => {}
        Op::Add | Op::Sub => {
            if need(0) {
                out[0] = Some(unbroadcast(g.clone(), inputs[0].shape())?);
            }
            if need(1) {
                let gb = if matches!(op, Op::Sub) { g.neg()? } else { g.clone() };
                out[1] = Some(unbroadcast(gb, inputs[1].shape())?);
            }
        }
        Op::Mul => {
            if need(0) {
                out[0] = Some(unbroadcast(g.mul(&inputs[1])?, inputs[0].shape())?);
            }
            if need(1) {
                out[1] = Some(unbroadcast(g.mul(&inputs[0])?, inputs[1].shape())?);
            }
        }
        Op::Div => {
            if need(0) {
                out[0] = Some(unbroadcast(g.div(&inputs[1])?, inputs[0].shape())?);
            }
            if need(1) {
                let gb = g.mul(output)?.div(&inputs[1])?.neg()?;
                out[1] = Some(unbroadcast(gb, inputs[1].shape())?);
            }
        }
        Op::Neg => out[0] = Some(g.neg()?),
        Op::Tanh => out[0] = Some(g.mul(&output.square()?.neg()?.add_scalar(1.0)?)?),
        Op::Sigmoid => {
            let slope = output.mul(&output.neg()?.add_scalar(1.0)?)?;
            out[0] = Some(g.mul(&slope)?);
        }
        Op::Exp => out[0] = Some(g.mul(output)?),
        Op::Log1p => out[0] = Some(g.div(&inputs[0].add_scalar(1.0)?)?),
        Op::Square => out[0] = Some(g.mul(&inputs[0].mul_scalar(2.0)?)?),
        Op::Sqrt => out[0] = Some(g.div(&output.mul_scalar(2.0)?)?),
        Op::Abs => {
            let sign: Vec<f64> = inputs[0].values().iter().map(|v| sign(*v)).collect();
            let sign = Tensor::new(inputs[0].shape().to_vec(), sign)?;
            out[0] = Some(g.mul(&sign)?);
        }
        Op::AddScalar(_) => out[0] = Some(g.clone()),
        Op::MulScalar(c) => out[0] = Some(g.mul_scalar(*c)?),
        Op::DivScalar(c) => out[0] = Some(g.div_scalar(*c)?),
        Op::MatMul { ta, tb } => {
            let (a, b) = (&inputs[0], &inputs[1]);
            let (ga, gb) = match (ta, tb) {
                (false, false) => ((g, b, false, true), (a, g, true, false)),
                (false, true) => ((g, b, false, false), (g, a, true, false)),
                (true, false) => ((b, g, false, true), (a, g, false, false)),
                (true, true) => ((b, g, true, true), (g, a, true, true)),
            };
            if need(0) {
                out[0] = Some(ga.0.matmul_t(ga.1, ga.2, ga.3)?);
            }
            if need(1) {
                out[1] = Some(gb.0.matmul_t(gb.1, gb.2, gb.3)?);
            }
        }
        Op::Sum { axes } => out[0] = Some(g.expand(axes, inputs[0].shape())?),
        Op::Expand { axes, .. } => out[0] = Some(g.sum_axes(axes)?),
        Op::Reshape { .. } => out[0] = Some(g.reshape(inputs[0].shape())?),
        Op::Select { axis, index } => {
            let len = inputs[0].shape()[*axis];
            out[0] = Some(g.unselect(*axis, *index, len)?);
        }
        Op::Unselect { axis, index, .. } => out[0] = Some(g.select(*axis, *index)?),
        Op::Stack { axis } => {
            for (j, slot) in out.iter_mut().enumerate() {
                if need(j) {
                    *slot = Some(g.select(*axis, j)?);
                }
            }
        }
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
