use super::{var_flat, KktSystem, LevelLagrangian, Pair, RowBlock, RowKind, Role, SystemKind, VariableLayout};
use crate::expr::{derivative, Expr, VarRef};
use crate::model::{GoopProblem, PRIMAL};
use crate::Result;

struct LevelDuals {
    /// `(target level j, multipliers of ∇L_j)` for `j = k+1..K`
    psi: Vec<(usize, Vec<Expr>)>,
    /// `(target level j, multipliers of g ⊙ γ_j)` for `j = K, K-1, .., k+1`
    phi: Vec<(usize, Vec<Expr>)>,
    lambda: Vec<Expr>,
    gamma: Vec<Expr>,
}

fn dot(a: &[Expr], b: &[Expr]) -> Vec<Expr> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Reduced KKT system: level stationarity is imposed only in the player's
/// own primal variables.
pub fn assemble_reduced(p: &GoopProblem) -> Result<KktSystem> {
    p.validate()?;
    let mut layout = VariableLayout::primal(p);
    let mut duals: Vec<Vec<LevelDuals>> = Vec::new();
    for (i, pl) in p.players.iter().enumerate() {
        let kk = pl.levels();
        let mut per_level = Vec::new();
        for k in 1..=kk {
            let psi = (k + 1..=kk).map(|j| (j, layout.push(i, k, Role::Psi, Some(j), false, pl.n))).collect();
            let phi = (1..=kk - k)
                .map(|l| {
                    let j = kk - l + 1;
                    (j, layout.push(i, k, Role::Phi, Some(j), false, pl.m_ineq()))
                })
                .collect();
            let lambda = layout.push(i, k, Role::Lambda, None, false, pl.m_eq());
            let gamma = layout.push(i, k, Role::Gamma, None, false, pl.m_ineq());
            per_level.push(LevelDuals { psi, phi, lambda, gamma });
        }
        duals.push(per_level);
    }

    let mut f = Vec::new();
    let mut g = Vec::new();
    let mut blocks = Vec::new();
    let mut pairs = Vec::new();
    let mut lagrangians = Vec::new();
    let space = layout.space();
    for (i, pl) in p.players.iter().enumerate() {
        let kk = pl.levels();
        let own: Vec<VarRef> = p.player_range(i).map(|j| VarRef::new(PRIMAL, j)).collect();
        let d = &duals[i];
        // grads[k-1] = ∇_{z^i} L_k, built innermost first
        let mut grads: Vec<Vec<Expr>> = vec![Vec::new(); kk];
        for k in (1..=kk).rev() {
            let lv = &d[k - 1];
            let mut terms = vec![pl.objectives[k - 1].clone()];
            terms.extend(dot(&lv.lambda, &pl.h).into_iter().map(|t| -t));
            terms.extend(dot(&lv.gamma, &pl.g).into_iter().map(|t| -t));
            for (j, psi) in &lv.psi {
                terms.extend(dot(psi, &grads[j - 1]).into_iter().map(|t| -t));
            }
            for (j, phi) in &lv.phi {
                let gj = &d[j - 1].gamma;
                for r in 0..pl.m_ineq() {
                    terms.push(-Expr::product([phi[r].clone(), pl.g[r].clone(), gj[r].clone()]));
                }
            }
            let lag = Expr::sum(terms);
            grads[k - 1] = own.iter().map(|v| derivative(&lag, v)).collect();
            lagrangians.push(LevelLagrangian { player: i, level: k, lagrangian: lag });
        }
        for (k, gr) in grads.iter().enumerate() {
            let start = f.len();
            f.extend(gr.iter().cloned());
            blocks.push(RowBlock {
                player: i,
                level: k + 1,
                kind: RowKind::Stationarity,
                target: None,
                induced: false,
                rows: start..f.len(),
            });
        }
        if pl.m_eq() > 0 {
            let start = f.len();
            f.extend(pl.h.iter().cloned());
            blocks.push(RowBlock { player: i, level: kk, kind: RowKind::Equality, target: None, induced: false, rows: start..f.len() });
        }
        if pl.m_ineq() > 0 {
            for k in 1..=kk {
                let start = f.len();
                for (r, gam) in d[k - 1].gamma.iter().enumerate() {
                    let mult = var_flat(&space, gam);
                    pairs.push(Pair { row: f.len(), a: pl.g[r].clone(), mult });
                    f.push(&pl.g[r] * gam);
                }
                blocks.push(RowBlock {
                    player: i,
                    level: k,
                    kind: RowKind::Complementarity,
                    target: Some(k),
                    induced: false,
                    rows: start..f.len(),
                });
            }
        }
        g.extend(pl.g.iter().cloned());
        for lv in d {
            g.extend(lv.gamma.iter().cloned());
        }
    }
    KktSystem::build(SystemKind::Reduced, layout, f, g, blocks, pairs, Vec::new(), lagrangians, 0.0)
}
