use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use super::scalar::{sigmoid_f64, softplus_f64};
use super::Scalar;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Append-only Wengert list for reverse-mode differentiation of scalar
/// programs. Nodes store parent indices and local partials; adjoints live in
/// a separate buffer so extracting a gradient never touches the recording.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    frozen: Cell<bool>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("len", &self.len())
            .field("frozen", &self.frozen.get())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            frozen: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stops further recording. Any later attempt to record panics.
    pub fn freeze(&self) {
        self.frozen.set(true);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.get()
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NONE, NONE],
            partials: [0.0, 0.0],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    fn push(&self, node: Node) -> usize {
        assert!(!self.frozen.get(), "recording on a frozen tape");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Replays the tape backwards from `root` and returns the adjoint of every
    /// recorded node.
    pub fn gradient(&self, root: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if root.idx == NONE {
            return Gradient { adjoints: adj };
        }
        adj[root.idx] = 1.0;
        for i in (0..=root.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for (p, d) in node.parents.iter().zip(node.partials) {
                if *p != NONE {
                    adj[*p] += a * d;
                }
            }
        }
        Gradient { adjoints: adj }
    }
}

/// Adjoints produced by [`Tape::gradient`].
#[derive(Debug, Clone)]
pub struct Gradient {
    adjoints: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == NONE {
            0.0
        } else {
            self.adjoints[v.idx]
        }
    }
}

/// A value on a [`Tape`]. Constants carry no tape and cost nothing to record.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: usize,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.idx == NONE {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant_value(val: f64) -> Self {
        Self {
            tape: None,
            idx: NONE,
            val,
        }
    }

    pub fn index(&self) -> Option<usize> {
        (self.idx != NONE).then_some(self.idx)
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        match self.tape {
            None => Self::constant_value(val),
            Some(tape) => {
                let idx = tape.push(Node {
                    parents: [self.idx, NONE],
                    partials: [partial, 0.0],
                });
                Self {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
        }
    }

    fn binary(self, rhs: Self, val: f64, dl: f64, dr: f64) -> Self {
        match self.tape.or(rhs.tape) {
            None => Self::constant_value(val),
            Some(tape) => {
                let idx = tape.push(Node {
                    parents: [self.idx, rhs.idx],
                    partials: [dl, dr],
                });
                Self {
                    tape: Some(tape),
                    idx,
                    val,
                }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl Scalar for Var<'_> {
    fn constant(c: f64) -> Self {
        Self::constant_value(c)
    }

    fn value(&self) -> f64 {
        self.val
    }

    fn tanh(self) -> Self {
        let y = self.val.tanh();
        self.unary(y, 1.0 - y * y)
    }

    fn exp(self) -> Self {
        let y = self.val.exp();
        self.unary(y, y)
    }

    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }

    fn sigmoid(self) -> Self {
        let s = sigmoid_f64(self.val);
        self.unary(s, s * (1.0 - s))
    }

    fn softplus(self) -> Self {
        self.unary(softplus_f64(self.val), sigmoid_f64(self.val))
    }

    fn max_const(self, c: f64) -> Self {
        if self.val > c {
            self.unary(self.val, 1.0)
        } else {
            Self::constant_value(c)
        }
    }
}
