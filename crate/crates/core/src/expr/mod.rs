//! Small symbolic kernel: polynomials and exponentials over named vector
//! variables, with exact differentiation.
//!
//! Expressions are immutable DAGs behind `Arc`, so subtrees are shared
//! freely between residual rows and their derivatives.

mod diff;
mod eval;
mod sexpr;
mod space;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

pub use diff::{derivative, differentiate, gradient, gradient_range};
pub use eval::{evaluate, Assignment, Point, Tape};
pub use sexpr::parse;
pub use space::VariableSpace;

/// Reference to component `index` of the vector variable `name`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub name: Arc<str>,
    pub index: usize,
}

impl VarRef {
    pub fn new(name: &str, index: usize) -> Self {
        VarRef { name: Arc::from(name), index }
    }

    fn mask_bit(&self) -> usize {
        // FNV-1a over the name, mixed with the index
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= (self.index as u64).wrapping_mul(0x9e3779b97f4a7c15);
        h = h.wrapping_mul(0x100000001b3);
        (h >> 56) as usize
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name, self.index)
    }
}

/// 256-bit over-approximation of the variables below a node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct Mask([u64; 4]);

impl Mask {
    fn of(v: &VarRef) -> Self {
        let b = v.mask_bit();
        let mut m = [0u64; 4];
        m[b / 64] = 1 << (b % 64);
        Mask(m)
    }

    fn union(&mut self, other: &Mask) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a |= *b;
        }
    }

    fn contains(&self, other: &Mask) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a & b == *b)
    }

    fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }
}

#[derive(Debug)]
pub enum Node {
    Const(f64),
    Var(VarRef),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Pow(Expr, u32),
    Exp(Expr),
    Neg(Expr),
}

#[derive(Debug)]
struct Inner {
    node: Node,
    mask: Mask,
}

#[derive(Clone, Debug)]
pub struct Expr(Arc<Inner>);

impl Expr {
    fn from_node(node: Node) -> Expr {
        let mut mask = Mask::default();
        match &node {
            Node::Const(_) => {}
            Node::Var(v) => mask = Mask::of(v),
            Node::Sum(xs) | Node::Product(xs) => {
                for x in xs {
                    mask.union(&x.0.mask);
                }
            }
            Node::Pow(x, _) | Node::Exp(x) | Node::Neg(x) => mask = x.0.mask,
        }
        Expr(Arc::new(Inner { node, mask }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn constant(c: f64) -> Expr {
        Expr::from_node(Node::Const(c))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(name: &str, index: usize) -> Expr {
        Expr::from_node(Node::Var(VarRef::new(name, index)))
    }

    pub fn from_var(v: VarRef) -> Expr {
        Expr::from_node(Node::Var(v))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Identity of the shared node, used for memoization.
    pub fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// False only if `v` certainly does not occur in the expression.
    pub fn may_depend_on(&self, v: &VarRef) -> bool {
        self.0.mask.contains(&Mask::of(v))
    }

    pub fn is_constant(&self) -> bool {
        self.0.mask.is_empty()
    }

    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        let mut c = 0.0;
        let mut out = Vec::new();
        for t in terms {
            match t.node() {
                Node::Const(v) => c += v,
                Node::Sum(inner) => {
                    for u in inner {
                        match u.node() {
                            Node::Const(v) => c += v,
                            _ => out.push(u.clone()),
                        }
                    }
                }
                _ => out.push(t),
            }
        }
        if out.is_empty() {
            return Expr::constant(c);
        }
        if c != 0.0 {
            out.push(Expr::constant(c));
        }
        if out.len() == 1 {
            return out.pop().unwrap();
        }
        Expr::from_node(Node::Sum(out))
    }

    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        let mut c = 1.0;
        let mut out = Vec::new();
        let push = |f: &Expr, c: &mut f64, out: &mut Vec<Expr>| match f.node() {
            Node::Const(v) => *c *= v,
            Node::Neg(x) => {
                *c = -*c;
                match x.node() {
                    Node::Const(v) => *c *= v,
                    _ => out.push(x.clone()),
                }
            }
            _ => out.push(f.clone()),
        };
        for f in factors {
            match f.node() {
                Node::Product(inner) => {
                    for u in inner {
                        push(u, &mut c, &mut out);
                    }
                }
                _ => push(&f, &mut c, &mut out),
            }
        }
        if c == 0.0 {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::constant(c);
        }
        if out.len() == 1 {
            let x = out.pop().unwrap();
            return if c == 1.0 {
                x
            } else if c == -1.0 {
                Expr::from_node(Node::Neg(x))
            } else {
                Expr::from_node(Node::Product(vec![Expr::constant(c), x]))
            };
        }
        if c == -1.0 {
            return Expr::from_node(Node::Neg(Expr::from_node(Node::Product(out))));
        }
        if c != 1.0 {
            out.insert(0, Expr::constant(c));
        }
        Expr::from_node(Node::Product(out))
    }

    pub fn pow(&self, n: u32) -> Expr {
        match (self.node(), n) {
            (_, 0) => Expr::one(),
            (_, 1) => self.clone(),
            (Node::Const(c), _) => Expr::constant(c.powi(n as i32)),
            (Node::Pow(x, m), _) => Expr::from_node(Node::Pow(x.clone(), m * n)),
            _ => Expr::from_node(Node::Pow(self.clone(), n)),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(c.exp()),
            _ => Expr::from_node(Node::Exp(self.clone())),
        }
    }

    pub fn scale(&self, c: f64) -> Expr {
        Expr::product([Expr::constant(c), self.clone()])
    }

    /// Linear form `Σ coef_j · x_j`, skipping zero coefficients.
    pub fn linear(coefs: &[f64], vars: &[Expr]) -> Expr {
        Expr::sum(
            coefs
                .iter()
                .zip(vars)
                .filter(|(c, _)| **c != 0.0)
                .map(|(c, x)| x.scale(*c)),
        )
    }

    /// Exact set of variables occurring in the expression.
    pub fn variables(&self) -> BTreeSet<VarRef> {
        let mut seen = HashSet::new();
        let mut out = BTreeSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if e.is_constant() || !seen.insert(e.id()) {
                continue;
            }
            match e.node() {
                Node::Const(_) => {}
                Node::Var(v) => {
                    out.insert(v.clone());
                }
                Node::Sum(xs) | Node::Product(xs) => stack.extend(xs.iter().cloned()),
                Node::Pow(x, _) | Node::Exp(x) | Node::Neg(x) => stack.push(x.clone()),
            }
        }
        out
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.id()) {
                continue;
            }
            match e.node() {
                Node::Const(_) | Node::Var(_) => {}
                Node::Sum(xs) | Node::Product(xs) => stack.extend(xs.iter().cloned()),
                Node::Pow(x, _) | Node::Exp(x) | Node::Neg(x) => stack.push(x.clone()),
            }
        }
        seen.len()
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::constant(c)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(x) => x.clone(),
            Node::Product(fs) if fs[0].as_const().is_some() => {
                let c = fs[0].as_const().unwrap();
                let mut rest = vec![Expr::constant(-c)];
                rest.extend(fs[1..].iter().cloned());
                Expr::product(rest)
            }
            _ => Expr::from_node(Node::Neg(self)),
        }
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -(self.clone())
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $body(self, rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $body(self, rhs.clone())
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $body(self.clone(), rhs)
            }
        }
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $body(self.clone(), rhs.clone())
            }
        }
        impl $tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $body(self, Expr::constant(rhs))
            }
        }
        impl $tr<f64> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $body(self.clone(), Expr::constant(rhs))
            }
        }
    };
}

binop!(Add, add, |a: Expr, b: Expr| Expr::sum([a, b]));
binop!(Sub, sub, |a: Expr, b: Expr| Expr::sum([a, -b]));
binop!(Mul, mul, |a: Expr, b: Expr| Expr::product([a, b]));

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        sexpr::write_sexpr(self, f)
    }
}
