//! KKT systems of a game: the reduced relaxation, the complete nested
//! system, their slack-perturbed forms, and exact size counters.

mod candidate;
mod complete;
mod lift;
mod perturbed;
mod reduced;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::expr::{derivative, Expr, Node, Tape, VarRef, VariableSpace};
use crate::model::{GoopProblem, PRIMAL};
use crate::{Error, Result};

pub use candidate::Candidate;
pub use complete::{assemble_complete, assemble_complete_capped, DEFAULT_COMPLETE_CAP};
pub use lift::{lift_duals, lift_duals_between};
pub use perturbed::{assemble_perturbed, assemble_perturbed_complete, perturb};
pub use reduced::assemble_reduced;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Z,
    Lambda,
    Gamma,
    Psi,
    Phi,
    #[serde(rename = "s")]
    Slack,
}

impl Role {
    fn tag(self) -> &'static str {
        match self {
            Role::Z => "z",
            Role::Lambda => "lambda",
            Role::Gamma => "gamma",
            Role::Psi => "psi",
            Role::Phi => "phi",
            Role::Slack => "s",
        }
    }
}

/// Contiguous run of variables with one meaning.
///
/// `target` names the level whose rows the multiplier pairs with (for ψ the
/// stationarity rows of that level, for φ the products with that level's γ).
/// `induced` marks complete-system blocks that the reduced system has no
/// counterpart for.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub player: usize,
    pub level: usize,
    pub role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub induced: bool,
    pub offset: usize,
    pub length: usize,
    #[serde(skip)]
    pub name: String,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.length
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct VariableLayout {
    pub segments: Vec<Segment>,
    pub dim: usize,
}

impl VariableLayout {
    /// Layout holding only the primal segments, one per player.
    pub fn primal(p: &GoopProblem) -> Self {
        let mut l = VariableLayout::default();
        for (i, pl) in p.players.iter().enumerate() {
            l.segments.push(Segment {
                player: i,
                level: 0,
                role: Role::Z,
                target: None,
                induced: false,
                offset: l.dim,
                length: pl.n,
                name: PRIMAL.into(),
            });
            l.dim += pl.n;
        }
        l
    }

    /// Appends a segment and returns its variables (empty when `len == 0`).
    pub fn push(
        &mut self,
        player: usize,
        level: usize,
        role: Role,
        target: Option<usize>,
        induced: bool,
        len: usize,
    ) -> Vec<Expr> {
        if len == 0 {
            return Vec::new();
        }
        let name = format!("{}{}.{}.{}", role.tag(), if induced { "~" } else { "" }, player, self.segments.len());
        let vars = (0..len).map(|j| Expr::var(&name, j)).collect();
        self.segments.push(Segment { player, level, role, target, induced, offset: self.dim, length: len, name });
        self.dim += len;
        vars
    }

    /// Appends segments built elsewhere, reassigning offsets in order.
    pub fn append(&mut self, segs: Vec<Segment>) {
        for mut s in segs {
            s.offset = self.dim;
            self.dim += s.length;
            self.segments.push(s);
        }
    }

    pub fn find(&self, player: usize, level: usize, role: Role, target: Option<usize>, induced: bool) -> Option<&Segment> {
        self.segments.iter().find(|s| {
            s.player == player && s.level == level && s.role == role && s.target == target && s.induced == induced
        })
    }

    pub fn space(&self) -> VariableSpace {
        let mut s = VariableSpace::new();
        let n: usize = self.segments.iter().filter(|s| s.role == Role::Z).map(|s| s.length).sum();
        if n > 0 {
            s.declare(PRIMAL, n).expect("fresh space");
        }
        for seg in self.segments.iter().filter(|s| s.role != Role::Z) {
            s.declare(&seg.name, seg.length).expect("unique segment names");
        }
        s
    }

    pub fn primal_dim(&self) -> usize {
        self.segments.iter().filter(|s| s.role == Role::Z).map(|s| s.length).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Reduced,
    Complete,
    PerturbedReduced,
    PerturbedComplete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// Gradient of a level Lagrangian with respect to the player's own `z`.
    Stationarity,
    /// Gradient with respect to induced primals (complete system only).
    InducedStationarity,
    Equality,
    /// Products `a ⊙ b` with `a >= 0` a constraint and `b` a multiplier.
    Complementarity,
    /// `a − s` rows of a perturbed system.
    SlackDefinition,
    /// `s ⊙ b − ρ` rows of a perturbed system.
    SlackComplementarity,
}

#[derive(Clone, Debug)]
pub struct RowBlock {
    pub player: usize,
    pub level: usize,
    pub kind: RowKind,
    pub target: Option<usize>,
    pub induced: bool,
    pub rows: Range<usize>,
}

/// One complementarity product row `a(y) · y[mult]`.
#[derive(Clone, Debug)]
pub struct Pair {
    pub row: usize,
    pub a: Expr,
    pub mult: usize,
}

/// Perturbed pair: rows `a − s = 0` and `s · b − ρ = 0`.
#[derive(Clone, Debug)]
pub struct SlackPair {
    pub a: Expr,
    pub slack: usize,
    pub mult: usize,
    pub def_row: usize,
    pub comp_row: usize,
}

/// Level Lagrangian of one player (reduced system).
#[derive(Clone, Debug)]
pub struct LevelLagrangian {
    pub player: usize,
    pub level: usize,
    pub lagrangian: Expr,
}

#[derive(Debug)]
struct Compiled {
    f: Tape,
    g: Tape,
    jac_rows: Vec<usize>,
    jac_cols: Vec<usize>,
    jac: Tape,
}

#[derive(Clone, Debug)]
pub struct KktSystem {
    pub kind: SystemKind,
    pub layout: VariableLayout,
    pub space: VariableSpace,
    pub f: Vec<Expr>,
    pub g: Vec<Expr>,
    pub row_blocks: Vec<RowBlock>,
    pub pairs: Vec<Pair>,
    pub slack_pairs: Vec<SlackPair>,
    pub lagrangians: Vec<LevelLagrangian>,
    pub rho: f64,
    compiled: Arc<Compiled>,
}

impl KktSystem {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        kind: SystemKind,
        layout: VariableLayout,
        f: Vec<Expr>,
        g: Vec<Expr>,
        row_blocks: Vec<RowBlock>,
        pairs: Vec<Pair>,
        slack_pairs: Vec<SlackPair>,
        lagrangians: Vec<LevelLagrangian>,
        rho: f64,
    ) -> Result<KktSystem> {
        let space = layout.space();
        let mut jac_rows = Vec::new();
        let mut jac_cols = Vec::new();
        let mut jac_exprs = Vec::new();
        for (r, row) in f.iter().enumerate() {
            let mut cols: Vec<(usize, VarRef)> = row
                .variables()
                .into_iter()
                .map(|v| space.flat_index(&v).map(|c| (c, v.clone())).ok_or_else(|| Error::Declaration(v.to_string())))
                .collect::<Result<_>>()?;
            cols.sort_by_key(|(c, _)| *c);
            for (c, v) in cols {
                let d = derivative(row, &v);
                if !d.is_zero() {
                    jac_rows.push(r);
                    jac_cols.push(c);
                    jac_exprs.push(d);
                }
            }
        }
        let compiled = Compiled {
            f: Tape::compile(&space, &f)?,
            g: Tape::compile(&space, &g)?,
            jac: Tape::compile(&space, &jac_exprs)?,
            jac_rows,
            jac_cols,
        };
        Ok(KktSystem {
            kind,
            layout,
            space,
            f,
            g,
            row_blocks,
            pairs,
            slack_pairs,
            lagrangians,
            rho,
            compiled: Arc::new(compiled),
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_rows(&self) -> usize {
        self.f.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.g.len()
    }

    pub fn primal_dim(&self) -> usize {
        self.layout.primal_dim()
    }

    /// Dimension without slack variables, which are always laid out last.
    pub fn base_dim(&self) -> usize {
        self.dim() - self.slack_pairs.len()
    }

    /// Same system with a different perturbation parameter.
    pub fn with_rho(&self, rho: f64) -> Result<KktSystem> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Argument(format!("rho must be positive, got {rho}")));
        }
        let mut s = self.clone();
        s.rho = rho;
        Ok(s)
    }

    fn check_dim(&self, y: &[f64]) {
        assert_eq!(y.len(), self.dim(), "iterate dimension does not match the layout");
    }

    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        self.residual_at(y, self.rho)
    }

    /// Residual with the perturbation parameter overridden.
    pub fn residual_at(&self, y: &[f64], rho: f64) -> Vec<f64> {
        self.check_dim(y);
        let mut r = self.compiled.f.eval(y);
        for sp in &self.slack_pairs {
            r[sp.comp_row] -= rho;
        }
        r
    }

    pub fn residual_norm(&self, y: &[f64]) -> f64 {
        self.residual(y).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn inequality(&self, y: &[f64]) -> Vec<f64> {
        self.check_dim(y);
        self.compiled.g.eval(y)
    }

    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        self.check_dim(y);
        let vals = self.compiled.jac.eval(y);
        let mut j = DMatrix::zeros(self.n_rows(), self.dim());
        for ((&r, &c), v) in self.compiled.jac_rows.iter().zip(&self.compiled.jac_cols).zip(vals) {
            j[(r, c)] = v;
        }
        j
    }

    /// Number of structurally nonzero Jacobian entries.
    pub fn jacobian_nnz(&self) -> usize {
        self.compiled.jac_rows.len()
    }

    /// Max absolute difference between the analytic Jacobian and central differences.
    pub fn jacobian_fd_check(&self, y: &[f64], step: f64) -> f64 {
        let j = self.jacobian(y);
        let mut worst: f64 = 0.0;
        let mut yp = y.to_vec();
        for c in 0..self.dim() {
            let orig = yp[c];
            yp[c] = orig + step;
            let fp = self.residual(&yp);
            yp[c] = orig - step;
            let fm = self.residual(&yp);
            yp[c] = orig;
            for r in 0..self.n_rows() {
                let fd = (fp[r] - fm[r]) / (2.0 * step);
                worst = worst.max((fd - j[(r, c)]).abs());
            }
        }
        worst
    }

    pub fn primal<'a>(&self, y: &'a [f64]) -> &'a [f64] {
        &y[..self.primal_dim()]
    }

    pub fn segment_values<'a>(&self, seg: &Segment, y: &'a [f64]) -> &'a [f64] {
        &y[seg.range()]
    }

    /// Flat indices of every slack and pair multiplier, which must stay positive.
    pub fn positive_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.slack_pairs.iter().flat_map(|p| [p.slack, p.mult]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn blocks_of(&self, player: usize) -> impl Iterator<Item = &RowBlock> {
        self.row_blocks.iter().filter(move |b| b.player == player)
    }

    pub fn lagrangian(&self, player: usize, level: usize) -> Option<&Expr> {
        self.lagrangians.iter().find(|l| l.player == player && l.level == level).map(|l| &l.lagrangian)
    }
}

/// Flat index of a variable expression.
pub(crate) fn var_flat(space: &VariableSpace, e: &Expr) -> usize {
    match e.node() {
        Node::Var(v) => space.flat_index(v).expect("declared variable"),
        _ => unreachable!("expected a variable"),
    }
}

/// Sizes `(variables, F rows, G rows)` of one player's reduced system.
pub fn count_reduced(n: u64, m_eq: u64, m_ineq: u64, k: u64) -> (u64, u64, u64) {
    assert!(k >= 1, "at least one level");
    let vars = (1 + k * (k - 1) / 2) * n + k * m_eq + k * (k + 1) / 2 * m_ineq;
    (vars, k * n + m_eq + k * m_ineq, (k + 1) * m_ineq)
}

/// Sizes `(variables, F̄ rows, Ḡ rows)` of one player's complete system.
pub fn count_complete(n: u64, m_eq: u64, m_ineq: u64, k: u64) -> (u64, u64, u64) {
    assert!(k >= 1, "at least one level");
    let pow = |e: u64| 1u64.checked_shl(e as u32).unwrap_or(u64::MAX);
    let base = n + m_eq + k * m_ineq;
    let vars = pow(k - 1).saturating_mul(base);
    (vars, vars, pow(k).saturating_mul(m_ineq))
}

/// Per-player sums of the counters for a problem.
pub fn problem_counts(p: &GoopProblem, complete: bool) -> (u64, u64, u64) {
    p.players.iter().fold((0, 0, 0), |acc, pl| {
        let args = (pl.n as u64, pl.m_eq() as u64, pl.m_ineq() as u64, pl.levels() as u64);
        let c = if complete { count_complete(args.0, args.1, args.2, args.3) } else { count_reduced(args.0, args.1, args.2, args.3) };
        (acc.0.saturating_add(c.0), acc.1.saturating_add(c.1), acc.2.saturating_add(c.2))
    })
}
