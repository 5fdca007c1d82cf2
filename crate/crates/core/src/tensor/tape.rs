use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use super::kernels::{self, Op, View};
use super::{Result, Tensor, TensorError, Var};

/// Snapshot of one operand as it was when an op was recorded.
#[derive(Debug, Clone)]
pub(crate) struct Saved {
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
    /// Tape position of the operand, or `None` for a detached constant.
    pub index: Option<usize>,
}

impl Saved {
    fn view(&self) -> View<'_> {
        View {
            shape: &self.shape,
            data: &self.data,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Record {
    pub op: Op,
    pub inputs: Vec<Saved>,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f64>>,
}

/// Append-only record of primitive operations.
///
/// Records are pushed as ops execute, so the tape is topologically ordered by
/// construction: every input of record `i` sits at an index below `i`. A tape
/// and the tensors attached to it belong to one thread of execution; records
/// hold only buffers and indices, never tensors, so dropping the last attached
/// tensor frees the whole graph.
#[derive(Clone, Default)]
pub struct Tape {
    records: Arc<Mutex<Vec<Record>>>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Vec<Record>> {
        // A poisoned tape still holds consistent records; ops never panic mid-push.
        self.records.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same(&self, other: &Tape) -> bool {
        Arc::ptr_eq(&self.records, &other.records)
    }

    /// Registers a copy of `t` as a new differentiable leaf on this tape.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let index = self.push(Record {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: t.shape.clone(),
            data: t.data.clone(),
        });
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            var: Some(Var {
                tape: self.clone(),
                index,
            }),
        }
    }

    pub(crate) fn push(&self, record: Record) -> usize {
        let mut records = self.lock();
        records.push(record);
        records.len() - 1
    }

    fn record(&self, index: usize) -> Record {
        self.lock()[index].clone()
    }

    /// Op names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.lock().iter().map(|r| r.op.name()).collect()
    }

    /// Re-executes every non-leaf record from its saved inputs and reports
    /// whether all outputs are reproduced bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let records = self.lock().clone();
        for rec in records.iter().filter(|r| r.op != Op::Leaf) {
            let views: Vec<View> = rec.inputs.iter().map(Saved::view).collect();
            let (shape, data) = kernels::forward(&rec.op, &views)?;
            let same_bits = data.len() == rec.data.len()
                && data
                    .iter()
                    .zip(rec.data.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if shape != rec.shape || !same_bits {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Reverse-mode gradient of a scalar `loss` with respect to each tensor in `wrt`.
///
/// Results come back in `wrt` order. A tensor in `wrt` that is detached, on a
/// different tape, or not an ancestor of `loss` receives a zero gradient of its
/// own shape. A detached loss yields zero gradients for everything.
///
/// With `create_graph` the gradient computation is recorded on the same tape,
/// so the returned tensors can be differentiated again.
pub fn backward(loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.numel() != 1 {
        return Err(TensorError::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let zeros = || wrt.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let Some(root_var) = &loss.var else {
        return Ok(zeros());
    };
    let tape = root_var.tape.clone();
    let root = root_var.index;

    let targets: Vec<Option<usize>> = wrt
        .iter()
        .map(|t| match &t.var {
            Some(v) if v.tape.same(&tape) && v.index <= root => Some(v.index),
            _ => None,
        })
        .collect();

    // needed[i]: record i depends on some requested tensor, so its gradient matters.
    let mut needed = vec![false; root + 1];
    for &i in targets.iter().flatten() {
        needed[i] = true;
    }
    {
        let records = tape.lock();
        for i in 0..=root {
            if !needed[i] {
                needed[i] = records[i]
                    .inputs
                    .iter()
                    .any(|s| s.index.is_some_and(|j| needed[j]));
            }
        }
    }
    if !needed[root] {
        return Ok(zeros());
    }

    let is_target: Vec<bool> = {
        let mut v = vec![false; root + 1];
        for &i in targets.iter().flatten() {
            v[i] = true;
        }
        v
    };
    let mut results: HashMap<usize, Tensor> = HashMap::new();
    let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
    grads[root] = Some(Tensor::ones(loss.shape()));

    let attach = |shape: &[usize], data: &Arc<Vec<f64>>, index: Option<usize>| Tensor {
        shape: shape.to_vec(),
        data: data.clone(),
        var: if create_graph {
            index.map(|index| Var {
                tape: tape.clone(),
                index,
            })
        } else {
            None
        },
    };

    for i in (0..=root).rev() {
        let Some(g) = grads[i].take() else { continue };
        if !needed[i] {
            continue;
        }
        if is_target[i] {
            results.insert(i, g.clone());
        }
        let rec = tape.record(i);
        if rec.op == Op::Leaf {
            continue;
        }
        let needs: Vec<bool> = rec
            .inputs
            .iter()
            .map(|s| s.index.is_some_and(|j| needed[j]))
            .collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let inputs: Vec<Tensor> = rec
            .inputs
            .iter()
            .map(|s| attach(&s.shape, &s.data, s.index))
            .collect();
        let output = attach(&rec.shape, &rec.data, Some(i));
        let g = if create_graph { g } else { g.detach() };
        let contributions = kernels::vjp(&rec.op, &inputs, &output, &g, &needs)?;
        for (saved, contribution) in rec.inputs.iter().zip(contributions) {
            let (Some(j), Some(c)) = (saved.index, contribution) else {
                continue;
            };
            grads[j] = Some(match grads[j].take() {
                Some(prev) => prev.add(&c)?,
                None => c,
            });
        }
    }

    Ok(wrt
        .iter()
        .zip(&targets)
        .map(|(t, idx)| {
            idx.and_then(|i| results.get(&i).cloned())
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}
