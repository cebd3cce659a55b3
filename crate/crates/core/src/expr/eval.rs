use std::collections::HashMap;

use super::{Expr, Node, VarRef, VariableSpace};
use crate::{Error, Result};

/// Source of variable values.
pub trait Point {
    fn value(&self, v: &VarRef) -> Option<f64>;
}

impl Point for HashMap<VarRef, f64> {
    fn value(&self, v: &VarRef) -> Option<f64> {
        self.get(v).copied()
    }
}

/// Flat vector interpreted through a variable space.
pub struct Assignment<'a> {
    pub space: &'a VariableSpace,
    pub values: &'a [f64],
}

impl Point for Assignment<'_> {
    fn value(&self, v: &VarRef) -> Option<f64> {
        self.space.flat_index(v).and_then(|i| self.values.get(i).copied())
    }
}

pub fn evaluate<P: Point + ?Sized>(e: &Expr, point: &P) -> Result<f64> {
    let mut memo = HashMap::new();
    ev(e, point, &mut memo)
}

fn ev<P: Point + ?Sized>(e: &Expr, p: &P, memo: &mut HashMap<usize, f64>) -> Result<f64> {
    if let Node::Const(c) = e.node() {
        return Ok(*c);
    }
    if let Some(v) = memo.get(&e.id()) {
        return Ok(*v);
    }
    let r = match e.node() {
        Node::Const(c) => *c,
        Node::Var(v) => p.value(v).ok_or_else(|| Error::Evaluation(v.to_string()))?,
        Node::Sum(ts) => {
            let mut s = 0.0;
            for t in ts {
                s += ev(t, p, memo)?;
            }
            s
        }
        Node::Product(fs) => {
            let mut s = 1.0;
            for f in fs {
                s *= ev(f, p, memo)?;
            }
            s
        }
        Node::Pow(b, n) => ev(b, p, memo)?.powi(*n as i32),
        Node::Exp(a) => ev(a, p, memo)?.exp(),
        Node::Neg(a) => -ev(a, p, memo)?,
    };
    memo.insert(e.id(), r);
    Ok(r)
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Var(usize),
    Sum(u32, u32),
    Prod(u32, u32),
    Pow(u32, u32),
    Exp(u32),
    Neg(u32),
}

/// Linearized evaluation program for a batch of expressions. Shared nodes
/// are evaluated once per call.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    args: Vec<u32>,
    outputs: Vec<u32>,
    n_vars: usize,
}

impl Tape {
    pub fn compile(space: &VariableSpace, exprs: &[Expr]) -> Result<Tape> {
        let mut t = Tape { ops: Vec::new(), args: Vec::new(), outputs: Vec::new(), n_vars: space.total_dim() };
        let mut memo: HashMap<usize, u32> = HashMap::new();
        let mut consts: HashMap<u64, u32> = HashMap::new();
        for e in exprs {
            let slot = t.emit(e, space, &mut memo, &mut consts)?;
            t.outputs.push(slot);
        }
        Ok(t)
    }

    fn emit(
        &mut self,
        e: &Expr,
        space: &VariableSpace,
        memo: &mut HashMap<usize, u32>,
        consts: &mut HashMap<u64, u32>,
    ) -> Result<u32> {
        if let Node::Const(c) = e.node() {
            if let Some(&s) = consts.get(&c.to_bits()) {
                return Ok(s);
            }
            let s = self.push(Op::Const(*c));
            consts.insert(c.to_bits(), s);
            return Ok(s);
        }
        if let Some(&s) = memo.get(&e.id()) {
            return Ok(s);
        }
        let op = match e.node() {
            Node::Const(_) => unreachable!(),
            Node::Var(v) => {
                Op::Var(space.flat_index(v).ok_or_else(|| Error::Declaration(v.to_string()))?)
            }
            Node::Sum(xs) | Node::Product(xs) => {
                let kids = xs
                    .iter()
                    .map(|x| self.emit(x, space, memo, consts))
                    .collect::<Result<Vec<_>>>()?;
                let start = self.args.len() as u32;
                self.args.extend(kids);
                let len = xs.len() as u32;
                if matches!(e.node(), Node::Sum(_)) {
                    Op::Sum(start, len)
                } else {
                    Op::Prod(start, len)
                }
            }
            Node::Pow(x, n) => Op::Pow(self.emit(x, space, memo, consts)?, *n),
            Node::Exp(x) => Op::Exp(self.emit(x, space, memo, consts)?),
            Node::Neg(x) => Op::Neg(self.emit(x, space, memo, consts)?),
        };
        let s = self.push(op);
        memo.insert(e.id(), s);
        Ok(s)
    }

    fn push(&mut self, op: Op) -> u32 {
        self.ops.push(op);
        (self.ops.len() - 1) as u32
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn eval_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        assert_eq!(x.len(), self.n_vars, "tape input dimension");
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(i) => x[i],
                Op::Sum(s, l) => {
                    self.args[s as usize..(s + l) as usize].iter().map(|&a| scratch[a as usize]).sum()
                }
                Op::Prod(s, l) => {
                    self.args[s as usize..(s + l) as usize].iter().map(|&a| scratch[a as usize]).product()
                }
                Op::Pow(a, n) => scratch[a as usize].powi(n as i32),
                Op::Exp(a) => scratch[a as usize].exp(),
                Op::Neg(a) => -scratch[a as usize],
            };
            scratch.push(v);
        }
        for (o, &s) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[s as usize];
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs.len()];
        let mut scratch = Vec::new();
        self.eval_into(x, &mut scratch, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_values() {
        let p: HashMap<VarRef, f64> = HashMap::new();
        assert_eq!(evaluate(&Expr::constant(7.0), &p).unwrap(), 7.0);
        let x = Expr::var("x", 0);
        let e = (x - 1.0).pow(2);
        let p = HashMap::from([(VarRef::new("x", 0), 1.0)]);
        assert_eq!(evaluate(&e, &p).unwrap(), 0.0);
    }

    #[test]
    fn quartic_of_sum() {
        let z: Vec<Expr> = (0..4).map(|j| Expr::var("z", j)).collect();
        let e = Expr::sum(z).pow(4);
        let p: HashMap<VarRef, f64> = (0..4).map(|j| (VarRef::new("z", j), 1.0)).collect();
        assert_eq!(evaluate(&e, &p).unwrap(), 256.0);
    }

    #[test]
    fn missing_assignment() {
        let p: HashMap<VarRef, f64> = HashMap::new();
        assert!(matches!(evaluate(&Expr::var("x", 0), &p), Err(Error::Evaluation(_))));
    }

    #[test]
    fn tape_matches_tree() {
        let mut s = VariableSpace::new();
        s.declare("z", 3).unwrap();
        let z: Vec<Expr> = (0..3).map(|j| Expr::var("z", j)).collect();
        let shared = (&z[0] * &z[1]).exp();
        let es = vec![&shared + &z[2], &shared * &shared, Expr::constant(2.5), -z[1].pow(3)];
        let tape = Tape::compile(&s, &es).unwrap();
        let x = [0.3, -0.7, 1.1];
        let got = tape.eval(&x);
        for (e, g) in es.iter().zip(&got) {
            let want = evaluate(e, &Assignment { space: &s, values: &x }).unwrap();
            assert_eq!(want, *g);
        }
    }
}
