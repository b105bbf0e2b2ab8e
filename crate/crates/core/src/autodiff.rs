//! Scalar reverse-mode differentiation on an append-only tape.
//!
//! Problems here are tens of claims with at most a few dozen features, so a
//! plain scalar tape (thousands of nodes per forward pass) is simpler and fast
//! enough; there is no tensor layer. Each node stores up to two parent links
//! with precomputed local partials; [`Tape::backward`] is a single reverse
//! sweep with additive accumulation over fan-out.
//!
//! Non-finite forward values poison the tape and surface as an error at
//! `backward` time rather than panicking mid-expression.

use core::cell::{Cell, RefCell};

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::math;

/// Operation that produced a node; carried in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Pow,
    Sigmoid,
    Max,
    Min,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("non-finite value produced by {op:?}")]
    NonFiniteValue { op: OpKind },
    #[error("non-finite gradient during backward sweep")]
    NonFiniteGradient,
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    value: f64,
    p0: u32,
    d0: f64,
    p1: u32,
    d1: f64,
}

/// Append-only arena of [`Node`]s; parents always precede children, so append
/// order is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    poison: Cell<Option<OpKind>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First op that produced a non-finite value, if any.
    pub fn poisoned(&self) -> Option<OpKind> {
        self.poison.get()
    }

    /// Fixed input data.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Const, value, NONE, 0.0, NONE, 0.0)
    }

    /// Parameter whose gradient will be read after `backward`.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.constant(value)
    }

    fn push(&self, op: OpKind, value: f64, p0: u32, d0: f64, p1: u32, d1: f64) -> Var<'_> {
        if !value.is_finite() && self.poison.get().is_none() {
            self.poison.set(Some(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node { value, p0, d0, p1, d1 });
        Var { tape: self, idx }
    }

    /// Derivative of `root` with respect to every node, by one reverse sweep.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AutodiffError> {
        debug_assert!(core::ptr::eq(root.tape, self));
        if let Some(op) = self.poison.get() {
            return Err(AutodiffError::NonFiniteValue { op });
        }
        let nodes = self.nodes.borrow();
        let mut grad = vec![0.0; nodes.len()];
        grad[root.idx as usize] = 1.0;
        for i in (0..=root.idx as usize).rev() {
            let g = grad[i];
            if g == 0.0 {
                continue;
            }
            let node = nodes[i];
            if node.p0 != NONE {
                grad[node.p0 as usize] += g * node.d0;
            }
            if node.p1 != NONE {
                grad[node.p1 as usize] += g * node.d1;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient);
        }
        Ok(Gradients { grad })
    }
}

/// Gradient of one root with respect to every tape node.
pub struct Gradients {
    grad: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.grad[v.idx as usize]
    }
}

/// Handle to a tape node. Cheap to copy; all arithmetic records new nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx as usize].value
    }

    pub fn exp(self) -> Var<'t> {
        let v = math::exp(self.value());
        self.tape.push(OpKind::Exp, v, self.idx, v, NONE, 0.0)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        self.tape.push(OpKind::Ln, math::ln(x), self.idx, 1.0 / x, NONE, 0.0)
    }

    pub fn powf(self, exponent: f64) -> Var<'t> {
        let x = self.value();
        let v = math::powf(x, exponent);
        let d = exponent * math::powf(x, exponent - 1.0);
        self.tape.push(OpKind::Pow, v, self.idx, d, NONE, 0.0)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = math::sigmoid(self.value());
        self.tape.push(OpKind::Sigmoid, s, self.idx, s * (1.0 - s), NONE, 0.0)
    }

    /// Subgradient convention: the left argument wins ties.
    pub fn max(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let left = a >= b;
        self.tape.push(
            OpKind::Max,
            if left { a } else { b },
            self.idx,
            if left { 1.0 } else { 0.0 },
            other.idx,
            if left { 0.0 } else { 1.0 },
        )
    }

    /// Subgradient convention: the left argument wins ties.
    pub fn min(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let left = a <= b;
        self.tape.push(
            OpKind::Min,
            if left { a } else { b },
            self.idx,
            if left { 1.0 } else { 0.0 },
            other.idx,
            if left { 0.0 } else { 1.0 },
        )
    }
}

impl<'t> core::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push(OpKind::Add, self.value() + rhs.value(), self.idx, 1.0, rhs.idx, 1.0)
    }
}

impl<'t> core::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.push(OpKind::Add, self.value() + rhs, self.idx, 1.0, NONE, 0.0)
    }
}

impl<'t> core::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .push(OpKind::Sub, self.value() - rhs.value(), self.idx, 1.0, rhs.idx, -1.0)
    }
}

impl<'t> core::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.push(OpKind::Sub, self.value() - rhs, self.idx, 1.0, NONE, 0.0)
    }
}

impl<'t> core::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.push(OpKind::Sub, self - rhs.value(), rhs.idx, -1.0, NONE, 0.0)
    }
}

impl<'t> core::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(OpKind::Mul, a * b, self.idx, b, rhs.idx, a)
    }
}

impl<'t> core::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.push(OpKind::Mul, self.value() * rhs, self.idx, rhs, NONE, 0.0)
    }
}

impl<'t> core::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape
            .push(OpKind::Div, a / b, self.idx, 1.0 / b, rhs.idx, -a / (b * b))
    }
}

impl<'t> core::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(OpKind::Div, self.value() / rhs, self.idx, 1.0 / rhs, NONE, 0.0)
    }
}

impl<'t> core::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(OpKind::Neg, -self.value(), self.idx, -1.0, NONE, 0.0)
    }
}

/// Central-difference check of `f`'s tape gradient at `params`.
///
/// Returns the maximum over coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn check_gradient<F>(f: F, params: &[f64], h: f64) -> Result<f64, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|&p| tape.leaf(p)).collect();
    let root = f(&tape, &leaves);
    let grads = tape.backward(root)?;
    let analytic: Vec<f64> = leaves.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |theta: &[f64]| -> Result<f64, AutodiffError> {
        let t = Tape::new();
        let vars: Vec<Var<'_>> = theta.iter().map(|&p| t.leaf(p)).collect();
        let out = f(&t, &vars).value();
        if let Some(op) = t.poisoned() {
            return Err(AutodiffError::NonFiniteValue { op });
        }
        Ok(out)
    };

    let mut theta = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        let original = theta[i];
        theta[i] = original + h;
        let plus = eval(&theta)?;
        theta[i] = original - h;
        let minus = eval(&theta)?;
        theta[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}
