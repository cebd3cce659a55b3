//! Small hand-checkable games.

use crate::expr::{parse, Expr};
use crate::model::{GoopProblem, PlayerSpec, PRIMAL};

fn z(j: usize) -> Expr {
    Expr::var(PRIMAL, j)
}

/// One player, two variables, two levels: the inner level pulls `z₁` to 1,
/// the equality ties `z₂ = z₁`, the outer level would like `z₂ = 3`, and a
/// box of half-width 5 bounds both coordinates. Solution `(1, 1)`.
pub fn t1() -> GoopProblem {
    let p = |s: &str| parse(s).expect("fixture parses");
    GoopProblem::new(vec![PlayerSpec {
        n: 2,
        objectives: vec![p("(pow (sub (var z 1) 3) 2)"), p("(pow (sub (var z 0) 1) 2)")],
        h: vec![p("(sub (var z 1) (var z 0))")],
        g: vec![
            p("(sub 5 (var z 0))"),
            p("(add (var z 0) 5)"),
            p("(sub 5 (var z 1))"),
            p("(add (var z 1) 5)"),
        ],
    }])
    .expect("fixture is valid")
}

/// Single level, `J = Σ c_j z_j²` with the given curvatures, optional equalities.
pub fn diagonal_quadratic(curv: &[f64], h: Vec<Expr>) -> GoopProblem {
    let j = Expr::sum(curv.iter().enumerate().map(|(i, c)| z(i).pow(2).scale(*c)));
    GoopProblem::new(vec![PlayerSpec { n: curv.len(), objectives: vec![j], h, g: vec![] }]).expect("valid")
}

pub fn var(j: usize) -> Expr {
    z(j)
}
