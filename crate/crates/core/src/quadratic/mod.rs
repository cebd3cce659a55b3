//! Nested linear systems of quadratic games: the complete matrices `M̄_k`,
//! the reduced matrices `M_k`, the coupling blocks `R̄_k`, `R_k`, direct
//! solves of both, column-space checks, and active-set reduction of
//! inequality-constrained games.

mod active;
mod dump;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::kkt::{KktSystem, Role};
use crate::linalg::{col_space_residual, null_space_basis, pinv_solve};
use crate::model::QuadraticGoop;
use crate::{Error, Result};

pub use active::{
    active_set_reduce, reconstruct_inequality_multipliers, ActiveSetReduction, DEFAULT_ACT_TOL, DEFAULT_STRICT_TOL,
};
pub use dump::{write_matrix_csv, write_recursion_csv};

/// Meaning of a column of `M̄_k` (equivalently of a row of `R̄_k`).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ColTag {
    Z(usize),
    /// Multiplier owned by `level` for the row `row` of `M̄_{level+1}`, or
    /// for an equality row at the innermost level.
    Dual { level: usize, row: Arc<RowTag> },
}

/// Meaning of a row of `M̄_k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RowTag {
    /// Stationarity of the level Lagrangian in the variable `wrt`.
    Stat { level: usize, wrt: ColTag },
    Eq(usize),
}

impl ColTag {
    /// Columns the reduced system keeps: `z`, and multipliers of
    /// `z`-stationarity or equality rows.
    pub fn in_reduced(&self) -> bool {
        match self {
            ColTag::Z(_) => true,
            ColTag::Dual { row, .. } => row.in_reduced(),
        }
    }
}

impl RowTag {
    pub fn in_reduced(&self) -> bool {
        matches!(self, RowTag::Eq(_) | RowTag::Stat { wrt: ColTag::Z(_), .. })
    }
}

#[derive(Clone, Debug)]
pub struct LevelMatrices {
    pub level: usize,
    pub r_bar: DMatrix<f64>,
    /// First `n` rows of `R̄_k` with zero rows below, same shape as `R̄_k`.
    pub r: DMatrix<f64>,
    pub m_bar: DMatrix<f64>,
    /// Reduced matrix in the padded shape of `M̄_k`.
    pub m: DMatrix<f64>,
    /// Shared right-hand side `p_k = p̄_k`.
    pub p: DVector<f64>,
    pub rows: Vec<RowTag>,
    pub cols: Vec<ColTag>,
}

impl LevelMatrices {
    pub fn reduced_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&r| self.rows[r].in_reduced()).collect()
    }

    pub fn reduced_cols(&self) -> Vec<usize> {
        (0..self.cols.len()).filter(|&c| self.cols[c].in_reduced()).collect()
    }

    /// `M_k` with its structurally zero rows and columns removed.
    pub fn m_compact(&self) -> DMatrix<f64> {
        self.m.select_rows(&self.reduced_rows()).select_columns(&self.reduced_cols())
    }

    pub fn p_compact(&self) -> DVector<f64> {
        self.p.select_rows(&self.reduced_rows())
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticRecursion {
    /// The game after padding to a common number of levels.
    pub game: QuadraticGoop,
    pub n: usize,
    /// `levels[k-1]` holds level `k`.
    pub levels: Vec<LevelMatrices>,
}

impl QuadraticRecursion {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &LevelMatrices {
        &self.levels[k - 1]
    }

    pub fn owner_of_var(&self, j: usize) -> usize {
        let mut acc = 0;
        for (i, p) in self.game.players.iter().enumerate() {
            acc += p.n;
            if j < acc {
                return i;
            }
        }
        unreachable!("variable index in range")
    }

    fn owner_of_eq(&self, r: usize) -> (usize, usize) {
        let mut acc = 0;
        for (i, p) in self.game.players.iter().enumerate() {
            if r < acc + p.m_eq() {
                return (i, r - acc);
            }
            acc += p.m_eq();
        }
        unreachable!("equality index in range")
    }

    pub fn owner_of_row(&self, t: &RowTag) -> usize {
        match t {
            RowTag::Eq(r) => self.owner_of_eq(*r).0,
            RowTag::Stat { wrt, .. } => self.owner_of_col(wrt),
        }
    }

    pub fn owner_of_col(&self, t: &ColTag) -> usize {
        match t {
            ColTag::Z(j) => self.owner_of_var(*j),
            ColTag::Dual { row, .. } => self.owner_of_row(row),
        }
    }

    /// Flat index in the reduced KKT system of `game.lift()` for each
    /// compact column of `M_1`, with the sign that converts between the two:
    /// the recursion's multipliers are the negated KKT multipliers.
    pub fn reduced_kkt_map(&self, sys: &KktSystem) -> Result<Vec<(usize, f64)>> {
        let top = self.level(1);
        let offsets = self.game.offsets();
        let mut out = Vec::new();
        for c in top.reduced_cols() {
            let tag = &top.cols[c];
            let found = match tag {
                ColTag::Z(j) => Some((*j, 1.0)),
                ColTag::Dual { level, row } => match row.as_ref() {
                    RowTag::Eq(r) => {
                        let (pl, local) = self.owner_of_eq(*r);
                        sys.layout.find(pl, *level, Role::Lambda, None, false).map(|s| (s.offset + local, -1.0))
                    }
                    RowTag::Stat { level: target, wrt: ColTag::Z(j) } => {
                        let pl = self.owner_of_var(*j);
                        sys.layout
                            .find(pl, *level, Role::Psi, Some(*target), false)
                            .map(|s| (s.offset + j - offsets[pl], -1.0))
                    }
                    _ => None,
                },
            };
            out.push(found.ok_or_else(|| Error::Argument(format!("column {tag:?} has no counterpart in the KKT layout")))?);
        }
        Ok(out)
    }

    /// Innermost-level equality multipliers in the KKT sign convention,
    /// one per stacked equality row, read from a solution of either system.
    pub fn innermost_eq_multipliers(&self, kind: SystemChoice, v: &DVector<f64>) -> DVector<f64> {
        let top = self.level(1);
        let cols = match kind {
            SystemChoice::Reduced => top.reduced_cols(),
            SystemChoice::Complete => (0..top.cols.len()).collect(),
        };
        let kk = self.depth();
        let m: usize = self.game.players.iter().map(|p| p.m_eq()).sum();
        let mut out = DVector::zeros(m);
        for (x, &c) in v.iter().zip(&cols) {
            if let ColTag::Dual { level, row } = &top.cols[c] {
                if let (true, RowTag::Eq(r)) = (*level == kk, row.as_ref()) {
                    out[*r] = -x;
                }
            }
        }
        out
    }

    /// Iterate of the reduced KKT system built from a compact solution of
    /// `M_1 v = p`.
    pub fn to_reduced_kkt(&self, sys: &KktSystem, v: &DVector<f64>) -> Result<Vec<f64>> {
        let map = self.reduced_kkt_map(sys)?;
        if v.len() != map.len() {
            return Err(Error::Argument(format!("compact solution has length {}, expected {}", v.len(), map.len())));
        }
        let mut y = vec![0.0; sys.dim()];
        for (x, (idx, sign)) in v.iter().zip(map) {
            y[idx] = sign * x;
        }
        Ok(y)
    }
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Builds the level matrices for an equality-only game, padding players to
/// a common number of levels first.
pub fn build_recursion(p: &QuadraticGoop) -> Result<QuadraticRecursion> {
    p.validate()?;
    if p.has_inequalities() {
        return Err(Error::Precondition("inequality constraints present; reduce to an active set first".into()));
    }
    let kk = p.max_levels();
    let game = p.pad_levels(kk)?;
    let n = game.n_total();
    let offsets = game.offsets();
    let mut q = Vec::with_capacity(kk);
    let mut q_hat = Vec::with_capacity(kk);
    let mut lin = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut qk = DMatrix::zeros(n, n);
        let mut qh = DMatrix::zeros(n, n);
        let mut qv = DVector::zeros(n);
        for (i, pl) in game.players.iter().enumerate() {
            let s = sym(&pl.quad[k]);
            let o = offsets[i];
            qk.rows_mut(o, pl.n).copy_from(&s.rows(o, pl.n));
            qh.view_mut((o, o), (pl.n, pl.n)).copy_from(&s.view((o, o), (pl.n, pl.n)));
            qv.rows_mut(o, pl.n).copy_from(&(-pl.lin[k].rows(o, pl.n)));
        }
        q.push(qk);
        q_hat.push(qh);
        lin.push(qv);
    }
    let m: usize = game.players.iter().map(|pl| pl.m_eq()).sum();
    let mut h = DMatrix::zeros(m, n);
    let mut hv = DVector::zeros(m);
    let mut r0 = 0;
    for pl in &game.players {
        h.rows_mut(r0, pl.m_eq()).copy_from(&pl.eq_mat);
        hv.rows_mut(r0, pl.m_eq()).copy_from(&pl.eq_rhs);
        r0 += pl.m_eq();
    }
    let h_hat = game.eq_hat();

    // base level, where both systems coincide
    let d = n + m;
    let mut m_k = DMatrix::zeros(d, d);
    m_k.view_mut((0, 0), (n, n)).copy_from(&q[kk - 1]);
    m_k.view_mut((0, n), (n, m)).copy_from(&h_hat.transpose());
    m_k.view_mut((n, 0), (m, n)).copy_from(&h);
    let mut r_bar = DMatrix::zeros(d, d);
    r_bar.view_mut((0, 0), (n, n)).copy_from(&q_hat[kk - 1]);
    r_bar.view_mut((0, n), (n, m)).copy_from(&h_hat.transpose());
    r_bar.view_mut((n, 0), (m, n)).copy_from(&h_hat);
    let mut p_k = DVector::zeros(d);
    p_k.rows_mut(0, n).copy_from(&lin[kk - 1]);
    p_k.rows_mut(n, m).copy_from(&hv);
    let rows: Vec<RowTag> = (0..n)
        .map(|j| RowTag::Stat { level: kk, wrt: ColTag::Z(j) })
        .chain((0..m).map(RowTag::Eq))
        .collect();
    let cols: Vec<ColTag> = (0..n)
        .map(ColTag::Z)
        .chain((0..m).map(|r| ColTag::Dual { level: kk, row: Arc::new(RowTag::Eq(r)) }))
        .collect();
    let mut levels = vec![LevelMatrices {
        level: kk,
        r: first_rows(&r_bar, n),
        r_bar,
        m_bar: m_k.clone(),
        m: m_k,
        p: p_k,
        rows,
        cols,
    }];

    for k in (1..kk).rev() {
        let next = levels.last().expect("deeper level built");
        let d = next.m_bar.nrows();
        let mut r_bar = DMatrix::zeros(2 * d, 2 * d);
        r_bar.view_mut((0, 0), (n, n)).copy_from(&q_hat[k - 1]);
        r_bar.view_mut((0, d), (d, d)).copy_from(&next.r_bar);
        r_bar.view_mut((d, 0), (d, d)).copy_from(&next.r_bar);
        let mut m_bar = DMatrix::zeros(2 * d, 2 * d);
        m_bar.view_mut((0, 0), (n, n)).copy_from(&q[k - 1]);
        m_bar.view_mut((0, d), (d, d)).copy_from(&next.r_bar);
        m_bar.view_mut((d, 0), (d, d)).copy_from(&next.m_bar);
        let mut m_red = DMatrix::zeros(2 * d, 2 * d);
        m_red.view_mut((0, 0), (n, n)).copy_from(&q[k - 1]);
        m_red.view_mut((0, d), (d, d)).copy_from(&next.r);
        m_red.view_mut((d, 0), (d, d)).copy_from(&next.m);
        let mut p_k = DVector::zeros(2 * d);
        p_k.rows_mut(0, n).copy_from(&lin[k - 1]);
        p_k.rows_mut(d, d).copy_from(&next.p);
        let rows: Vec<RowTag> = next
            .cols
            .iter()
            .map(|c| RowTag::Stat { level: k, wrt: c.clone() })
            .chain(next.rows.iter().cloned())
            .collect();
        let cols: Vec<ColTag> = next
            .cols
            .iter()
            .cloned()
            .chain(next.rows.iter().map(|r| ColTag::Dual { level: k, row: Arc::new(r.clone()) }))
            .collect();
        levels.push(LevelMatrices { level: k, r: first_rows(&r_bar, n), r_bar, m_bar, m: m_red, p: p_k, rows, cols });
    }
    levels.reverse();
    Ok(QuadraticRecursion { game, n, levels })
}

fn first_rows(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    out.rows_mut(0, n).copy_from(&a.rows(0, n));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemChoice {
    Reduced,
    Complete,
}

#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub z: DVector<f64>,
    /// Minimum-norm solution; compact columns for the reduced system.
    pub v: DVector<f64>,
    /// `‖M v − p‖₂ / (1 + ‖p‖₂)`.
    pub residual: f64,
}

/// Relative residual above which `M v = p` is reported inconsistent.
pub const CONSISTENCY_TOL: f64 = 1e-8;

fn system(rec: &QuadraticRecursion, kind: SystemChoice) -> (DMatrix<f64>, DVector<f64>) {
    let top = rec.level(1);
    match kind {
        SystemChoice::Reduced => (top.m_compact(), top.p_compact()),
        SystemChoice::Complete => (top.m_bar.clone(), top.p.clone()),
    }
}

/// Minimum-norm solution of `M_1 v = p` or `M̄_1 v̄ = p̄`.
pub fn solve_linear(rec: &QuadraticRecursion, kind: SystemChoice) -> Result<LinearSolution> {
    let (a, b) = system(rec, kind);
    let v = pinv_solve(&a, &b, None)?;
    let residual = (&a * &v - &b).norm() / (1.0 + b.norm());
    if !(residual <= CONSISTENCY_TOL) {
        return Err(Error::NoKktPoint(residual));
    }
    Ok(LinearSolution { z: v.rows(0, rec.n).clone_owned(), v, residual })
}

/// Relative residual of the best completion of a fixed primal `z` in the
/// chosen system: `min_η ‖M^c η − (p − C z)‖ / (1 + ‖p‖)`.
pub fn primal_membership(rec: &QuadraticRecursion, kind: SystemChoice, z: &DVector<f64>) -> Result<f64> {
    let (a, b) = system(rec, kind);
    let n = rec.n;
    if z.len() != n {
        return Err(Error::Argument(format!("z has length {}, expected {n}", z.len())));
    }
    let rhs = &b - a.columns(0, n) * z;
    let rest = a.columns(n, a.ncols() - n).clone_owned();
    let eta = pinv_solve(&rest, &rhs, None)?;
    Ok((rest * eta - &rhs).norm() / (1.0 + b.norm()))
}

/// Whether the chosen system pins `z`: every null vector has a negligible
/// primal part.
pub fn primal_unique(rec: &QuadraticRecursion, kind: SystemChoice, tol: f64) -> Result<bool> {
    let (a, _) = system(rec, kind);
    let basis = null_space_basis(&a, None)?;
    Ok(basis.rows(0, rec.n).iter().all(|x| x.abs() <= tol))
}

#[derive(Clone, Debug, Serialize)]
pub struct InclusionCheck {
    pub level: usize,
    /// Projection residual of `Col(R_k)` onto `Col(R̄_k)`.
    pub r_residual: f64,
    /// Projection residual of `Col(M_k^c)` onto `Col(M̄_k^c)`; `None` at the base level.
    pub m_residual: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InclusionReport {
    pub levels: Vec<InclusionCheck>,
    pub worst: f64,
}

impl InclusionReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst <= tol
    }
}

/// Column-space inclusions of the reduced blocks in the complete ones at
/// every level. The `c` parts drop the shared first `n` columns.
pub fn verify_col_inclusions(rec: &QuadraticRecursion) -> Result<InclusionReport> {
    let n = rec.n;
    let kk = rec.depth();
    let mut levels = Vec::with_capacity(kk);
    let mut worst: f64 = 0.0;
    for lv in &rec.levels {
        let r_residual = col_space_residual(&lv.r_bar, &lv.r)?;
        let m_residual = if lv.level < kk {
            let w = lv.m.ncols() - n;
            Some(col_space_residual(&lv.m_bar.columns(n, w).clone_owned(), &lv.m.columns(n, w).clone_owned())?)
        } else {
            None
        };
        worst = worst.max(r_residual).max(m_residual.unwrap_or(0.0));
        levels.push(InclusionCheck { level: lv.level, r_residual, m_residual });
    }
    Ok(InclusionReport { levels, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuadraticPlayer;

    /// One player, n = 2, K = 2, Q₂ = I, Q₁ = diag(0, 1), H = [−1, 1].
    fn small() -> QuadraticGoop {
        QuadraticGoop {
            players: vec![QuadraticPlayer {
                n: 2,
                quad: vec![DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])), DMatrix::identity(2, 2)],
                lin: vec![DVector::from_vec(vec![0.0, -3.0]), DVector::from_vec(vec![-1.0, 0.0])],
                eq_mat: DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]),
                eq_rhs: DVector::zeros(1),
                ineq_mat: DMatrix::zeros(0, 2),
                ineq_rhs: DVector::zeros(0),
            }],
        }
    }

    #[test]
    fn small_instance_shapes() {
        let rec = build_recursion(&small()).unwrap();
        assert_eq!(rec.level(2).m_bar.shape(), (3, 3));
        assert_eq!(rec.level(1).m_bar.shape(), (6, 6));
        assert_eq!(rec.level(1).m_compact().shape(), (5, 6));
        for lv in &rec.levels {
            assert_eq!(lv.r_bar, lv.r_bar.transpose());
            assert_eq!(lv.m_bar.columns(0, 2), lv.m.columns(0, 2));
        }
    }

    #[test]
    fn small_instance_solves_agree() {
        let rec = build_recursion(&small()).unwrap();
        let a = solve_linear(&rec, SystemChoice::Reduced).unwrap();
        let b = solve_linear(&rec, SystemChoice::Complete).unwrap();
        assert!((&a.z - &b.z).norm() < 1e-9);
        // inner level: ½‖z‖² − z₁ on z₂ = z₁
        assert!((a.z[0] - 0.5).abs() < 1e-9 && (a.z[1] - 0.5).abs() < 1e-9, "{}", a.z);
    }

    #[test]
    fn single_level_is_base_case() {
        let mut g = small();
        g.players[0].quad.truncate(1);
        g.players[0].lin.truncate(1);
        let rec = build_recursion(&g).unwrap();
        assert_eq!(rec.level(1).m, rec.level(1).m_bar);
        let a = solve_linear(&rec, SystemChoice::Reduced).unwrap();
        let b = solve_linear(&rec, SystemChoice::Complete).unwrap();
        assert_eq!(a.z, b.z);
    }
}
