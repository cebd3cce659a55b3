use std::collections::HashMap;
use std::ops::Range;

use super::{Expr, Node, VarRef, VariableSpace};
use crate::{Error, Result};

/// Partial derivative of `e` with respect to `v`, without declaration checks.
pub fn derivative(e: &Expr, v: &VarRef) -> Expr {
    let mut memo = HashMap::new();
    d(e, v, &mut memo)
}

fn d(e: &Expr, v: &VarRef, memo: &mut HashMap<usize, Expr>) -> Expr {
    if !e.may_depend_on(v) {
        return Expr::zero();
    }
    if let Some(r) = memo.get(&e.id()) {
        return r.clone();
    }
    let r = match e.node() {
        Node::Const(_) => Expr::zero(),
        Node::Var(w) => {
            if w == v {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Node::Sum(ts) => Expr::sum(ts.iter().map(|t| d(t, v, memo))),
        Node::Product(fs) => {
            let mut terms = Vec::new();
            for i in 0..fs.len() {
                let di = d(&fs[i], v, memo);
                if di.is_zero() {
                    continue;
                }
                let mut f: Vec<Expr> = Vec::with_capacity(fs.len());
                f.extend(fs[..i].iter().cloned());
                f.extend(fs[i + 1..].iter().cloned());
                f.push(di);
                terms.push(Expr::product(f));
            }
            Expr::sum(terms)
        }
        Node::Pow(b, n) => {
            let db = d(b, v, memo);
            if db.is_zero() {
                Expr::zero()
            } else {
                Expr::product([Expr::constant(*n as f64), b.pow(n - 1), db])
            }
        }
        Node::Exp(a) => {
            let da = d(a, v, memo);
            Expr::product([e.clone(), da])
        }
        Node::Neg(a) => -d(a, v, memo),
    };
    memo.insert(e.id(), r.clone());
    r
}

/// Checked derivative: `v` must be declared in `space`.
pub fn differentiate(e: &Expr, v: &VarRef, space: &VariableSpace) -> Result<Expr> {
    if !space.contains(v) {
        return Err(Error::Declaration(v.to_string()));
    }
    Ok(derivative(e, v))
}

pub fn gradient(e: &Expr, block: &str, space: &VariableSpace) -> Result<Vec<Expr>> {
    let vars = space.vars(block)?;
    Ok(vars.iter().map(|v| derivative(e, v)).collect())
}

/// Gradient over the components `range` of `block`.
pub fn gradient_range(e: &Expr, block: &str, range: Range<usize>) -> Vec<Expr> {
    range.map(|j| derivative(e, &VarRef::new(block, j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::evaluate;
    use std::collections::HashMap;

    fn at(x: f64) -> HashMap<VarRef, f64> {
        HashMap::from([(VarRef::new("x", 0), x)])
    }

    #[test]
    fn power_rule() {
        let x = Expr::var("x", 0);
        let dx = derivative(&x.pow(2), &VarRef::new("x", 0));
        assert_eq!(evaluate(&dx, &at(3.0)).unwrap(), 6.0);
        assert!(derivative(&Expr::constant(4.0), &VarRef::new("x", 0)).is_zero());
    }

    #[test]
    fn exp_against_fd() {
        let x = Expr::var("x", 0);
        let e = (x * 2.0).exp();
        let de = derivative(&e, &VarRef::new("x", 0));
        assert_eq!(evaluate(&de, &at(0.0)).unwrap(), 2.0);
        let h = 1e-6;
        let fd = (evaluate(&e, &at(h)).unwrap() - evaluate(&e, &at(-h)).unwrap()) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-6);
    }

    #[test]
    fn undeclared_variable() {
        let mut s = VariableSpace::new();
        s.declare("x", 1).unwrap();
        let e = Expr::var("x", 0);
        assert!(differentiate(&e, &VarRef::new("y", 0), &s).is_err());
        assert!(gradient(&e, "y", &s).is_err());
    }

    #[test]
    fn bilinear_gradient() {
        let mut s = VariableSpace::new();
        s.declare("x", 2).unwrap();
        let e = Expr::var("x", 0) * Expr::var("x", 1);
        let g = gradient(&e, "x", &s).unwrap();
        let p = HashMap::from([(VarRef::new("x", 0), 2.0), (VarRef::new("x", 1), 5.0)]);
        assert_eq!(evaluate(&g[0], &p).unwrap(), 5.0);
        assert_eq!(evaluate(&g[1], &p).unwrap(), 2.0);
        let c = gradient(&Expr::constant(3.0), "x", &s).unwrap();
        assert!(c.iter().all(|g| g.is_zero()));
    }
}
