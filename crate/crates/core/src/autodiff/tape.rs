use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::tensor::{Scalar, Tensor};

/// Recorded operation of a node. Parent references are tape indices, always
/// lower than the index of the node that records them.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    /// `[m, n] + [n]`, the second operand added to every row.
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Affine { a: usize, scale: f64 },
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    SumAll(usize),
    Expand(usize),
    SumRows(usize),
    BroadcastRows(usize),
    SumCols(usize),
    BroadcastCols(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Softplus(usize),
    Sigmoid(usize),
    Reshape(usize),
    SliceRows { a: usize, start: usize },
    PadRows { a: usize, start: usize },
    ConcatRows(Rc<[usize]>),
}

impl Op {
    pub(crate) fn parents(&self, out: &mut Vec<usize>) {
        out.clear();
        match self {
            Op::Leaf => {}
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                out.push(*a);
                out.push(*b);
            }
            Op::MatMul { a, b, .. } => {
                out.push(*a);
                out.push(*b);
            }
            Op::Neg(a)
            | Op::Affine { a, .. }
            | Op::SumAll(a)
            | Op::Expand(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Reshape(a)
            | Op::SliceRows { a, .. }
            | Op::PadRows { a, .. } => out.push(*a),
            Op::ConcatRows(parts) => out.extend_from_slice(parts),
        }
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) level: u32,
    /// Side value kept for the backward rule (the sigmoid of a softplus input).
    pub(crate) aux: Option<Rc<Tensor<T>>>,
}

/// Evaluation counters accumulated on a tape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Model rows evaluated (one per sample per forward call).
    pub forward_evals: u64,
    /// Gradient passes that did not record a differentiable graph.
    pub first_order_passes: u64,
    /// Gradient passes that recorded their own graph (derivative-of-derivative).
    pub nested_passes: u64,
}

impl Counters {
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            forward_evals: self.forward_evals - earlier.forward_evals,
            first_order_passes: self.first_order_passes - earlier.first_order_passes,
            nested_passes: self.nested_passes - earlier.nested_passes,
        }
    }
}

/// Append-only Wengert list.
///
/// A gradient pass in [`GradMode::CreateGraph`] records its own operations
/// onto the same tape one level deeper than the output it differentiates, so
/// its results can be differentiated again. The level of a node is its
/// nesting depth: ordinary forward nodes sit at level 1.
///
/// A tape is confined to one thread.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    pub(crate) recording: Cell<bool>,
    pub(crate) level: Cell<u32>,
    counters: Cell<Counters>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Results are constants; cheapest.
    Detached,
    /// Results are recorded and can be differentiated again.
    CreateGraph,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) idx: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
            level: Cell::new(1),
            counters: Cell::new(Counters::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), Op::Leaf, true, self.level.get(), None)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), Op::Leaf, false, 0, None)
    }

    pub fn scalar(&self, x: f64) -> Var<'_, T> {
        self.constant(Tensor::scalar(T::from_f64_lossy(x)))
    }

    pub fn counters(&self) -> Counters {
        self.counters.get()
    }

    /// Record `rows` model evaluations.
    pub fn count_forward(&self, rows: usize) {
        let mut c = self.counters.get();
        c.forward_evals += rows as u64;
        self.counters.set(c);
    }

    pub(crate) fn count_pass(&self, mode: GradMode) {
        let mut c = self.counters.get();
        match mode {
            GradMode::Detached => c.first_order_passes += 1,
            GradMode::CreateGraph => c.nested_passes += 1,
        }
        self.counters.set(c);
    }

    pub(crate) fn constant_shared(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, false, 0, None)
    }

    fn push_node(
        &self,
        value: Rc<Tensor<T>>,
        op: Op,
        requires_grad: bool,
        level: u32,
        aux: Option<Rc<Tensor<T>>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            level,
            aux,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Record the result of an operation over `op`'s parents.
    pub(crate) fn record(&self, value: Tensor<T>, op: Op) -> Var<'_, T> {
        self.record_shared(Rc::new(value), op, None)
    }

    pub(crate) fn record_shared(&self, value: Rc<Tensor<T>>, op: Op, aux: Option<Rc<Tensor<T>>>) -> Var<'_, T> {
        let (requires_grad, level) = if self.recording.get() {
            let nodes = self.nodes.borrow();
            let mut parents = Vec::new();
            op.parents(&mut parents);
            let mut rg = false;
            let mut level = self.level.get();
            for &p in &parents {
                if nodes[p].requires_grad {
                    rg = true;
                    level = level.max(nodes[p].level);
                }
            }
            (rg, level)
        } else {
            (false, 0)
        };
        if requires_grad {
            self.push_node(value, op, true, level, aux)
        } else {
            self.push_node(value, Op::Leaf, false, 0, None)
        }
    }

    pub(crate) fn aux_of(&self, idx: usize) -> Option<Rc<Tensor<T>>> {
        self.nodes.borrow()[idx].aux.clone()
    }

    /// Deepest nesting level of any differentiable node on the tape.
    pub fn max_level(&self) -> u32 {
        self.nodes.borrow().iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub(crate) fn value_of(&self, idx: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[idx].value.clone()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.idx].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.idx].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.idx].requires_grad
    }

    /// Nesting depth of the graph that produced this node: 1 for plain
    /// forward computation, +1 for every enclosing graph-recording
    /// gradient pass; 0 for constants.
    pub fn level(&self) -> u32 {
        self.tape.nodes.borrow()[self.idx].level
    }
}
