//! Append-only scalar tape for reverse-mode differentiation.
//!
//! Every operation is evaluated eagerly when it is recorded, so the primal
//! value and the local partial derivatives of a node are cached at push time.
//! A reverse sweep then walks the tape once from the output node back to the
//! start, accumulating adjoints.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::AutodiffError;

/// Kind of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Variable,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Tanh,
    Square,
    PowInt(i32),
    /// Routes one of several candidates through unchanged. Only the chosen
    /// candidate is recorded as a parent.
    Select,
}

/// One entry of the tape. Parents always point at earlier nodes.
#[derive(Debug, Clone, Copy)]
pub struct TapeNode {
    pub op: OpKind,
    pub parents: [usize; 2],
    pub arity: u8,
    pub value: f64,
    pub partials: [f64; 2],
}

impl TapeNode {
    fn leaf(op: OpKind, value: f64) -> Self {
        Self {
            op,
            parents: [0; 2],
            arity: 0,
            value,
            partials: [0.0; 2],
        }
    }

    fn unary(op: OpKind, parent: usize, value: f64, partial: f64) -> Self {
        Self {
            op,
            parents: [parent, 0],
            arity: 1,
            value,
            partials: [partial, 0.0],
        }
    }

    fn binary(op: OpKind, parents: [usize; 2], value: f64, partials: [f64; 2]) -> Self {
        Self {
            op,
            parents,
            arity: 2,
            value,
            partials,
        }
    }
}

/// Recording context. Interior mutability lets [`Var`] handles stay `Copy`.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<TapeNode>>,
    fault: Cell<Option<usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// d(output)/d(var). Nodes recorded after the output have adjoint 0.
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoints.get(var.index).copied().unwrap_or(0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(capacity)),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node. Outstanding `Var`s must not be used afterwards; the
    /// borrow checker enforces this because `clear` takes `&mut self`.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.fault.set(None);
    }

    pub fn node(&self, var: Var<'_>) -> TapeNode {
        self.nodes.borrow()[var.index]
    }

    fn push(&self, node: TapeNode) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(node);
        Var { tape: self, index }
    }

    /// A trainable leaf.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(TapeNode::leaf(OpKind::Variable, value))
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(TapeNode::leaf(OpKind::Constant, value))
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn owns(&self, var: Var<'_>) -> bool {
        std::ptr::eq(self, var.tape) && var.index < self.len()
    }

    /// Primal value of `var`, or an error when a division by zero happened
    /// anywhere on the tape up to and including `var`.
    pub fn eval(&self, var: Var<'_>) -> Result<f64, AutodiffError> {
        if !self.owns(var) {
            return Err(AutodiffError::ForeignNode { index: var.index });
        }
        if let Some(node) = self.fault.get() {
            if node <= var.index {
                return Err(AutodiffError::SingularEvaluation { node });
            }
        }
        Ok(self.nodes.borrow()[var.index].value)
    }

    /// Reverse sweep from `output`. Does not modify the tape, so repeated
    /// calls return identical adjoints.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AutodiffError> {
        if !self.owns(output) {
            return Err(AutodiffError::ForeignNode {
                index: output.index,
            });
        }
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; output.index + 1];
        adjoints[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let adj = adjoints[i];
            if adj == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for p in 0..node.arity as usize {
                adjoints[node.parents[p]] += adj * node.partials[p];
            }
        }
        Ok(Gradients { adjoints })
    }

    /// Records a selection of `candidates[chosen]`. The gradient flows only to
    /// the chosen candidate.
    pub fn select<'t>(&'t self, candidates: &[Var<'t>], chosen: usize) -> Var<'t> {
        let parent = candidates[chosen];
        let value = parent.value();
        self.push(TapeNode::unary(OpKind::Select, parent.index, value, 1.0))
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.index].value
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn same_tape(self, other: Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value().tanh();
        self.tape
            .push(TapeNode::unary(OpKind::Tanh, self.index, t, 1.0 - t * t))
    }

    pub fn square(self) -> Var<'t> {
        let x = self.value();
        self.tape
            .push(TapeNode::unary(OpKind::Square, self.index, x * x, 2.0 * x))
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let x = self.value();
        let partial = if n == 0 {
            0.0
        } else {
            f64::from(n) * x.powi(n - 1)
        };
        self.tape
            .push(TapeNode::unary(OpKind::PowInt(n), self.index, x.powi(n), partial))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.push(TapeNode::binary(
            OpKind::Add,
            [self.index, rhs.index],
            self.value() + rhs.value(),
            [1.0, 1.0],
        ))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.push(TapeNode::binary(
            OpKind::Sub,
            [self.index, rhs.index],
            self.value() - rhs.value(),
            [1.0, -1.0],
        ))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(TapeNode::binary(
            OpKind::Mul,
            [self.index, rhs.index],
            a * b,
            [b, a],
        ))
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        let (a, b) = (self.value(), rhs.value());
        let tape = self.tape;
        if b == 0.0 && tape.fault.get().is_none() {
            tape.fault.set(Some(tape.len()));
        }
        tape.push(TapeNode::binary(
            OpKind::Div,
            [self.index, rhs.index],
            a / b,
            [1.0 / b, -a / (b * b)],
        ))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape
            .push(TapeNode::unary(OpKind::Neg, self.index, -self.value(), -1.0))
    }
}

// Mixed operations with plain constants fold the constant into the local
// partial instead of recording a constant node.

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(TapeNode::unary(OpKind::Add, self.index, self.value() + rhs, 1.0))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(TapeNode::unary(OpKind::Sub, self.index, self.value() - rhs, 1.0))
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape
            .push(TapeNode::unary(OpKind::Mul, self.index, self.value() * rhs, rhs))
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape
            .push(TapeNode::unary(OpKind::Sub, rhs.index, self - rhs.value(), -1.0))
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_basic_expressions() {
        let tape = Tape::new();
        let z = tape.var(0.0);
        assert_eq!(tape.eval(z.tanh()).unwrap(), 0.0);
        let three = tape.var(3.0);
        assert_eq!(tape.eval(three.square()).unwrap(), 9.0);
        let x = tape.var(1.5);
        assert_eq!(tape.eval(x * 2.0 + 1.0).unwrap(), 4.0);
    }

    #[test]
    fn backward_square_and_tanh() {
        let tape = Tape::new();
        let w = tape.var(3.0);
        let loss = w.square();
        assert_eq!(tape.backward(loss).unwrap().wrt(w), 6.0);

        let w0 = tape.var(0.0);
        let loss = w0.tanh();
        assert_eq!(tape.backward(loss).unwrap().wrt(w0), 1.0);
    }

    #[test]
    fn division_by_zero_is_reported() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(0.0);
        let before = a + b;
        let q = a / b;
        assert!(tape.eval(before).is_ok());
        assert!(matches!(
            tape.eval(q),
            Err(AutodiffError::SingularEvaluation { .. })
        ));
        assert!(tape.eval(q + a).is_err());
    }

    #[test]
    fn foreign_node_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let _ = t2.var(1.0);
        let _ = t2.var(2.0);
        let v = t2.var(3.0);
        let _ = t1.var(1.0);
        assert!(matches!(
            t1.backward(v),
            Err(AutodiffError::ForeignNode { .. })
        ));
    }

    #[test]
    fn select_routes_gradient_to_chosen_branch_only() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(5.0);
        let ca = a.square();
        let cb = b.square();
        let s = tape.select(&[ca, cb], 1);
        let g = tape.backward(s * 3.0).unwrap();
        assert_eq!(g.wrt(a), 0.0);
        assert_eq!(g.wrt(b), 30.0);
        assert_eq!(tape.node(s).op, OpKind::Select);
        assert_eq!(tape.node(s).arity, 1);
    }

    #[test]
    fn unused_nodes_have_zero_adjoint_and_backward_is_idempotent() {
        let tape = Tape::new();
        let x = tape.var(1.3);
        let y = tape.var(-0.4);
        let _unused = y.tanh();
        let out = (x * x).tanh() - x / (x + 2.0);
        let g1 = tape.backward(out).unwrap();
        let g2 = tape.backward(out).unwrap();
        assert_eq!(g1.wrt(y), 0.0);
        assert_eq!(g1.as_slice(), g2.as_slice());
    }

    #[test]
    fn parents_precede_children() {
        let tape = Tape::new();
        let x = tape.var(0.7);
        let y = tape.var(1.1);
        let _ = ((x * y).tanh() + y.powi(3) - (-x)) / (y + 1.0);
        let nodes = tape.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            for p in 0..n.arity as usize {
                assert!(n.parents[p] < i);
            }
        }
    }

    #[test]
    fn tape_grows_linearly() {
        let tape = Tape::new();
        let x = tape.var(0.1);
        let mut acc = x;
        for _ in 0..100 {
            acc = acc * x + 1.0;
        }
        // one var, then two nodes per iteration
        assert_eq!(tape.len(), 1 + 200);
        let _ = acc;
    }
}
