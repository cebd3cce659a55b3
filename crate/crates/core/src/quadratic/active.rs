use nalgebra::{DMatrix, DVector};

use crate::kkt::{KktSystem, Role, SystemKind};
use crate::linalg::numerical_rank;
use crate::model::QuadraticGoop;
use crate::{Error, Result};

pub const DEFAULT_ACT_TOL: f64 = 1e-6;
pub const DEFAULT_STRICT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ActiveSetReduction {
    /// Equality-only game: each player's active rows appended below `H`.
    pub problem: QuadraticGoop,
    /// Active inequality rows per player.
    pub active: Vec<Vec<usize>>,
    /// Whether every player's own block of `[H; G_A]` has full row rank.
    pub regular: bool,
    pub warnings: Vec<String>,
}

/// Replaces inequalities by the equalities active at `z_star`.
pub fn active_set_reduce(p: &QuadraticGoop, z_star: &[f64], act_tol: f64) -> Result<ActiveSetReduction> {
    p.validate()?;
    if z_star.len() != p.n_total() {
        return Err(Error::Argument(format!("z has length {}, expected {}", z_star.len(), p.n_total())));
    }
    let z = DVector::from_column_slice(z_star);
    let mut out = p.clone();
    let mut active = Vec::new();
    let mut warnings = Vec::new();
    let mut regular = true;
    for (i, pl) in out.players.iter_mut().enumerate() {
        let g = &pl.ineq_mat * &z - &pl.ineq_rhs;
        if let Some(r) = g.iter().position(|v| *v < -act_tol) {
            return Err(Error::Precondition(format!("player {i}: inequality {r} violated by {:.3e}", -g[r])));
        }
        let act: Vec<usize> = (0..g.len()).filter(|&r| g[r].abs() <= act_tol).collect();
        let m = pl.m_eq() + act.len();
        let mut h = DMatrix::zeros(m, pl.eq_mat.ncols());
        let mut hv = DVector::zeros(m);
        h.rows_mut(0, pl.m_eq()).copy_from(&pl.eq_mat);
        hv.rows_mut(0, pl.m_eq()).copy_from(&pl.eq_rhs);
        for (t, &r) in act.iter().enumerate() {
            h.row_mut(pl.m_eq() + t).copy_from(&pl.ineq_mat.row(r));
            hv[pl.m_eq() + t] = pl.ineq_rhs[r];
        }
        pl.eq_mat = h;
        pl.eq_rhs = hv;
        pl.ineq_mat = DMatrix::zeros(0, pl.eq_mat.ncols());
        pl.ineq_rhs = DVector::zeros(0);
        active.push(act);
    }
    for (i, pl) in out.players.iter().enumerate() {
        let own = out.player_range(i);
        let block = pl.eq_mat.columns(own.start, own.len()).clone_owned();
        if block.nrows() > 0 && numerical_rank(&block, None)? < block.nrows() {
            regular = false;
            warnings.push(format!("player {i}: active constraint block is not full row rank"));
        }
    }
    Ok(ActiveSetReduction { problem: out, active, regular, warnings })
}

fn segment<'a>(sys: &'a KktSystem, player: usize, level: usize, role: Role, target: Option<usize>) -> Option<std::ops::Range<usize>> {
    sys.layout.find(player, level, role, target, false).map(|s| s.range())
}

/// Builds a point of the inequality reduced system `ineq` from a solution
/// `y_eq` of the equality reduced system `eq` of the active-set game.
///
/// The innermost multipliers of the active rows become `γ_K`. At an outer
/// level a nonnegative multiplier becomes `γ_k` directly; a negative one is
/// carried by `φ_k` toward level `K` as `λ / γ_K`, leaving `γ_k = 0`.
pub fn reconstruct_inequality_multipliers(
    ineq: &KktSystem,
    eq: &KktSystem,
    y_eq: &[f64],
    active: &[Vec<usize>],
    strict_tol: f64,
) -> Result<Vec<f64>> {
    if ineq.kind != SystemKind::Reduced || eq.kind != SystemKind::Reduced {
        return Err(Error::Argument("reconstruction maps between reduced systems".into()));
    }
    if y_eq.len() != eq.dim() {
        return Err(Error::Argument(format!("point has length {}, expected {}", y_eq.len(), eq.dim())));
    }
    let players = ineq.layout.segments.iter().filter(|s| s.role == Role::Z).count();
    if active.len() != players {
        return Err(Error::Argument("one active set per player expected".into()));
    }
    let mut y = vec![0.0; ineq.dim()];
    for seg in ineq.layout.segments.iter().filter(|s| s.role == Role::Z || s.role == Role::Psi) {
        let src = if seg.role == Role::Z {
            eq.layout.segments.iter().find(|s| s.role == Role::Z && s.player == seg.player).map(|s| s.range())
        } else {
            segment(eq, seg.player, seg.level, Role::Psi, seg.target)
        };
        let src = src.ok_or_else(|| Error::Argument(format!("no counterpart for segment {}", seg.name)))?;
        y[seg.range()].copy_from_slice(&y_eq[src]);
    }
    for (i, act) in active.iter().enumerate() {
        let levels = ineq.layout.segments.iter().filter(|s| s.player == i).map(|s| s.level).max().unwrap_or(0);
        let m_eq = segment(ineq, i, levels, Role::Lambda, None).map_or(0, |r| r.len());
        let m_act = act.len();
        let lam = |k: usize| -> Result<Vec<f64>> {
            match segment(eq, i, k, Role::Lambda, None) {
                Some(r) if r.len() == m_eq + m_act => Ok(y_eq[r].to_vec()),
                None if m_eq + m_act == 0 => Ok(Vec::new()),
                _ => Err(Error::Argument(format!("player {i} level {k}: equality multipliers do not match"))),
            }
        };
        let inner = lam(levels)?;
        for (t, &r) in act.iter().enumerate() {
            if !(inner[m_eq + t] > strict_tol) {
                return Err(Error::Degenerate(format!(
                    "player {i}: innermost multiplier of active row {r} is {:.3e}",
                    inner[m_eq + t]
                )));
            }
        }
        for k in 1..=levels {
            let l = lam(k)?;
            if let Some(dst) = segment(ineq, i, k, Role::Lambda, None) {
                y[dst].copy_from_slice(&l[..m_eq]);
            }
            let Some(gam) = segment(ineq, i, k, Role::Gamma, None) else { continue };
            let phi = segment(ineq, i, k, Role::Phi, Some(levels));
            for (t, &r) in act.iter().enumerate() {
                let v = l[m_eq + t];
                if k == levels || v >= 0.0 {
                    y[gam.start + r] = v;
                } else {
                    let phi = phi.clone().expect("outer levels carry φ toward the innermost level");
                    y[phi.start + r] = v / inner[m_eq + t];
                }
            }
        }
    }
    Ok(y)
}
