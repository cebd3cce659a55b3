//! Problem instances: general expression-based games and the quadratic
//! special case with dense block data.

mod io;

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::expr::{Expr, VarRef, VariableSpace};
use crate::linalg::numerical_rank;
use crate::{Error, Result};

pub use io::{load_problem, parse_problem, ProblemInput};

/// Name of the joint primal block. Player `i` owns a contiguous range of it.
pub const PRIMAL: &str = "z";

#[derive(Clone, Debug)]
pub struct PlayerSpec {
    pub n: usize,
    /// `objectives[k-1]` is the level-k objective; the last entry is innermost.
    pub objectives: Vec<Expr>,
    /// Equality constraints `h(z) = 0`.
    pub h: Vec<Expr>,
    /// Inequality constraints `g(z) >= 0`.
    pub g: Vec<Expr>,
}

impl PlayerSpec {
    pub fn levels(&self) -> usize {
        self.objectives.len()
    }
    pub fn m_eq(&self) -> usize {
        self.h.len()
    }
    pub fn m_ineq(&self) -> usize {
        self.g.len()
    }
}

#[derive(Clone, Debug)]
pub struct GoopProblem {
    pub players: Vec<PlayerSpec>,
}

impl GoopProblem {
    pub fn new(players: Vec<PlayerSpec>) -> Result<Self> {
        let p = GoopProblem { players };
        p.validate()?;
        Ok(p)
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_total(&self) -> usize {
        self.players.iter().map(|p| p.n).sum()
    }

    pub fn player_range(&self, i: usize) -> Range<usize> {
        let start: usize = self.players[..i].iter().map(|p| p.n).sum();
        start..start + self.players[i].n
    }

    pub fn primal_vars(&self) -> Vec<VarRef> {
        (0..self.n_total()).map(|j| VarRef::new(PRIMAL, j)).collect()
    }

    pub fn primal_space(&self) -> VariableSpace {
        let mut s = VariableSpace::new();
        if self.n_total() > 0 {
            s.declare(PRIMAL, self.n_total()).expect("fresh space");
        }
        s
    }

    pub fn max_levels(&self) -> usize {
        self.players.iter().map(|p| p.levels()).max().unwrap_or(0)
    }

    /// Structural checks plus advisory warnings.
    pub fn validate(&self) -> Result<ValidationReport> {
        if self.players.is_empty() {
            return Err(Error::Model("no players".into()));
        }
        let n = self.n_total();
        let mut report = ValidationReport::asserted_defaults();
        for (i, p) in self.players.iter().enumerate() {
            if p.n == 0 {
                return Err(Error::Model(format!("player {i} has no decision variables")));
            }
            if p.objectives.is_empty() {
                return Err(Error::Model(format!("player {i} has no objectives")));
            }
            for e in p.objectives.iter().chain(&p.h).chain(&p.g) {
                for v in e.variables() {
                    if &*v.name != PRIMAL || v.index >= n {
                        return Err(Error::Model(format!("player {i}: expression references {v}")));
                    }
                }
            }
            if p.h.is_empty() && p.g.is_empty() {
                report.warnings.push(format!("player {i} has no constraints; compactness cannot hold"));
            }
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
    /// Standing assumptions that are not checked.
    pub asserted_by_user: Vec<String>,
}

impl ValidationReport {
    fn asserted_defaults() -> Self {
        ValidationReport {
            warnings: Vec::new(),
            asserted_by_user: vec![
                "compactness of the innermost feasible set".into(),
                "MPCC-LICQ".into(),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPlayer {
    pub n: usize,
    /// Level-k cost `½ zᵀ Q z + qᵀ z` over the joint `z`.
    pub quad: Vec<DMatrix<f64>>,
    pub lin: Vec<DVector<f64>>,
    /// `H z = h`
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// `G z >= g`
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadraticPlayer {
    pub fn levels(&self) -> usize {
        self.quad.len()
    }
    pub fn m_eq(&self) -> usize {
        self.eq_rhs.len()
    }
    pub fn m_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticGoop {
    pub players: Vec<QuadraticPlayer>,
}

pub const PSD_TOL: f64 = -1e-10;

impl QuadraticGoop {
    pub fn n_total(&self) -> usize {
        self.players.iter().map(|p| p.n).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.players.len());
        let mut acc = 0;
        for p in &self.players {
            o.push(acc);
            acc += p.n;
        }
        o
    }

    pub fn player_range(&self, i: usize) -> Range<usize> {
        let o = self.offsets()[i];
        o..o + self.players[i].n
    }

    pub fn max_levels(&self) -> usize {
        self.players.iter().map(|p| p.levels()).max().unwrap_or(0)
    }

    pub fn has_inequalities(&self) -> bool {
        self.players.iter().any(|p| p.m_ineq() > 0)
    }

    /// Block-diagonal matrix of the players' own equality blocks.
    pub fn eq_hat(&self) -> DMatrix<f64> {
        let m: usize = self.players.iter().map(|p| p.m_eq()).sum();
        let n = self.n_total();
        let mut out = DMatrix::zeros(m, n);
        let mut r = 0;
        for (i, p) in self.players.iter().enumerate() {
            let cols = self.player_range(i);
            out.view_mut((r, cols.start), (p.m_eq(), p.n))
                .copy_from(&p.eq_mat.view((0, cols.start), (p.m_eq(), p.n)));
            r += p.m_eq();
        }
        out
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        if self.players.is_empty() {
            return Err(Error::Model("no players".into()));
        }
        let n = self.n_total();
        let mut report = ValidationReport::asserted_defaults();
        for (i, p) in self.players.iter().enumerate() {
            if p.n == 0 || p.levels() == 0 {
                return Err(Error::Model(format!("player {i}: empty dimension or no levels")));
            }
            if p.lin.len() != p.levels() {
                return Err(Error::Model(format!("player {i}: {} Q blocks vs {} q vectors", p.levels(), p.lin.len())));
            }
            for (k, (qm, qv)) in p.quad.iter().zip(&p.lin).enumerate() {
                if qm.shape() != (n, n) || qv.len() != n {
                    return Err(Error::Model(format!("player {i} level {}: cost dimension mismatch", k + 1)));
                }
                if !qm.iter().chain(qv.iter()).all(|x| x.is_finite()) {
                    return Err(Error::Model(format!("player {i} level {}: non-finite cost", k + 1)));
                }
            }
            if p.eq_mat.shape() != (p.m_eq(), n) || p.ineq_mat.shape() != (p.m_ineq(), n) {
                return Err(Error::Model(format!("player {i}: constraint dimension mismatch")));
            }
            let own = self.player_range(i);
            for (k, qm) in p.quad.iter().enumerate() {
                let block = qm.view((own.start, own.start), (p.n, p.n)).clone_owned();
                let sym = (&block + block.transpose()) * 0.5;
                let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
                if min_eig < PSD_TOL {
                    report.warnings.push(format!(
                        "player {i} level {}: own Q block not PSD (min eigenvalue {min_eig:.3e})",
                        k + 1
                    ));
                }
            }
            if p.m_eq() + p.m_ineq() == 0 {
                report.warnings.push(format!("player {i} has no constraints; compactness cannot hold"));
            }
        }
        let hh = self.eq_hat();
        if hh.nrows() > 0 && numerical_rank(&hh, None)? < hh.nrows() {
            report.warnings.push("block-diagonal equality matrix is not full row rank".into());
        }
        Ok(report)
    }

    /// Appends zero-cost inner levels so every player has `k` levels.
    pub fn pad_levels(&self, k: usize) -> Result<QuadraticGoop> {
        if k < self.max_levels() {
            return Err(Error::Argument(format!("cannot pad to {k} levels; a player has {}", self.max_levels())));
        }
        let n = self.n_total();
        let mut out = self.clone();
        for p in &mut out.players {
            while p.quad.len() < k {
                p.quad.push(DMatrix::zeros(n, n));
                p.lin.push(DVector::zeros(n));
            }
        }
        Ok(out)
    }

    /// Expression form of the same game.
    pub fn lift(&self) -> Result<GoopProblem> {
        self.validate()?;
        let n = self.n_total();
        let z: Vec<Expr> = (0..n).map(|j| Expr::var(PRIMAL, j)).collect();
        let players = self
            .players
            .iter()
            .map(|p| PlayerSpec {
                n: p.n,
                objectives: p.quad.iter().zip(&p.lin).map(|(qm, qv)| quadratic_expr(qm, qv, &z)).collect(),
                h: affine_rows(&p.eq_mat, &p.eq_rhs, &z),
                g: affine_rows(&p.ineq_mat, &p.ineq_rhs, &z),
            })
            .collect();
        GoopProblem::new(players)
    }
}

/// `½ zᵀ Q z + qᵀ z`, using the symmetric part of `Q`.
pub fn quadratic_expr(qm: &DMatrix<f64>, qv: &DVector<f64>, z: &[Expr]) -> Expr {
    let n = z.len();
    let mut terms = Vec::new();
    for a in 0..n {
        if qm[(a, a)] != 0.0 {
            terms.push(Expr::product([Expr::constant(0.5 * qm[(a, a)]), z[a].pow(2)]));
        }
        for b in a + 1..n {
            let c = 0.5 * (qm[(a, b)] + qm[(b, a)]);
            if c != 0.0 {
                terms.push(Expr::product([Expr::constant(c), z[a].clone(), z[b].clone()]));
            }
        }
    }
    terms.push(Expr::linear(qv.as_slice(), z));
    Expr::sum(terms)
}

/// Rows `A z − b`.
pub fn affine_rows(a: &DMatrix<f64>, b: &DVector<f64>, z: &[Expr]) -> Vec<Expr> {
    (0..a.nrows())
        .map(|r| {
            let coefs: Vec<f64> = a.row(r).iter().cloned().collect();
            Expr::linear(&coefs, z) - b[r]
        })
        .collect()
}
