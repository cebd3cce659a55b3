use super::{assemble_reduced, KktSystem, Role, SystemKind};
use crate::model::GoopProblem;
use crate::{Error, Result};

/// Maps a complete-system solution to reduced-system multipliers at the
/// same primal point. Only the multipliers of own-variable stationarity
/// rows, of `g ⊙ γ` products, of `h` and of `g` survive; everything tied to
/// induced primals is dropped.
pub fn lift_duals_between(reduced: &KktSystem, complete: &KktSystem, y: &[f64], tol: f64) -> Result<Vec<f64>> {
    if reduced.kind != SystemKind::Reduced || complete.kind != SystemKind::Complete {
        return Err(Error::Argument("lift_duals needs a reduced and a complete system".into()));
    }
    if y.len() != complete.dim() {
        return Err(Error::Argument(format!("point has {} entries, complete layout {}", y.len(), complete.dim())));
    }
    let fmax = complete.residual(y).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gmin = complete.inequality(y).iter().fold(f64::INFINITY, |m, &x| m.min(x));
    if !(fmax <= tol) || gmin < -tol {
        return Err(Error::Precondition(format!(
            "not a complete-system solution: |F| = {fmax:.3e}, min G = {gmin:.3e}"
        )));
    }
    let mut out = vec![0.0; reduced.dim()];
    for seg in &reduced.layout.segments {
        let src = match seg.role {
            Role::Z => complete.layout.segments.iter().find(|s| s.role == Role::Z && s.player == seg.player),
            Role::Psi | Role::Phi | Role::Lambda | Role::Gamma => {
                complete.layout.find(seg.player, seg.level, seg.role, seg.target, false)
            }
            Role::Slack => None,
        };
        if let Some(src) = src {
            if src.length != seg.length {
                return Err(Error::Argument(format!("segment length mismatch for {:?}", seg.role)));
            }
            out[seg.range()].copy_from_slice(&y[src.range()]);
        }
    }
    Ok(out)
}

pub fn lift_duals(p: &GoopProblem, complete: &KktSystem, y: &[f64], tol: f64) -> Result<Vec<f64>> {
    lift_duals_between(&assemble_reduced(p)?, complete, y, tol)
}
