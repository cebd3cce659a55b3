use std::collections::HashMap;

use super::{
    assemble_complete_capped, assemble_reduced, var_flat, KktSystem, RowBlock, RowKind, Role, SlackPair, SystemKind,
};
use crate::expr::Expr;
use crate::model::GoopProblem;
use crate::{Error, Result};

/// Replaces every complementarity row `a ⊙ b` by `a − s` and `s ⊙ b − ρ`.
///
/// Per player the rows are: the non-complementarity rows in their original
/// order, then all slack definitions, then all perturbed products.
pub fn perturb(base: &KktSystem, rho: f64) -> Result<KktSystem> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Argument(format!("rho must be positive, got {rho}")));
    }
    let kind = match base.kind {
        SystemKind::Reduced => SystemKind::PerturbedReduced,
        SystemKind::Complete => SystemKind::PerturbedComplete,
        other => return Err(Error::Argument(format!("{other:?} system is already perturbed"))),
    };
    let pair_of: HashMap<usize, usize> = base.pairs.iter().enumerate().map(|(j, p)| (p.row, j)).collect();
    let mut layout = base.layout.clone();
    // slack variables for every complementarity block, in block order
    let mut slack_vars: HashMap<usize, Vec<Expr>> = HashMap::new();
    for (bi, b) in base.row_blocks.iter().enumerate() {
        if b.kind == RowKind::Complementarity {
            let v = layout.push(b.player, b.level, Role::Slack, b.target, b.induced, b.rows.len());
            slack_vars.insert(bi, v);
        }
    }
    let space = layout.space();
    let players: Vec<usize> = {
        let mut v: Vec<usize> = base.row_blocks.iter().map(|b| b.player).collect();
        v.dedup();
        v
    };
    let mut f = Vec::new();
    let mut blocks = Vec::new();
    let mut slack_pairs = Vec::new();
    let mut g_s = Vec::new();
    let mut g_b = Vec::new();
    for &pl in &players {
        let mine: Vec<(usize, &RowBlock)> = base.row_blocks.iter().enumerate().filter(|(_, b)| b.player == pl).collect();
        for (_, b) in mine.iter().filter(|(_, b)| b.kind != RowKind::Complementarity) {
            let start = f.len();
            f.extend(b.rows.clone().map(|r| base.f[r].clone()));
            blocks.push(RowBlock { rows: start..f.len(), ..(*b).clone() });
        }
        let mut pending = Vec::new();
        for (bi, b) in mine.iter().filter(|(_, b)| b.kind == RowKind::Complementarity) {
            let s = &slack_vars[bi];
            let start = f.len();
            for (t, r) in b.rows.clone().enumerate() {
                let pair = &base.pairs[pair_of[&r]];
                pending.push((pair.a.clone(), s[t].clone(), pair.mult, f.len()));
                f.push(&pair.a - &s[t]);
            }
            blocks.push(RowBlock { kind: RowKind::SlackDefinition, rows: start..f.len(), ..(*b).clone() });
        }
        let mut j = 0;
        for (_, b) in mine.iter().filter(|(_, b)| b.kind == RowKind::Complementarity) {
            let start = f.len();
            for _ in b.rows.clone() {
                let (a, s, mult, def_row) = pending[j].clone();
                let bvar = Expr::from_var(space.var_at(mult).expect("multiplier index"));
                slack_pairs.push(SlackPair { a, slack: var_flat(&space, &s), mult, def_row, comp_row: f.len() });
                g_s.push(s.clone());
                g_b.push(bvar.clone());
                f.push(&s * &bvar);
                j += 1;
            }
            blocks.push(RowBlock { kind: RowKind::SlackComplementarity, rows: start..f.len(), ..(*b).clone() });
        }
    }
    let mut g = g_s;
    g.extend(g_b);
    KktSystem::build(kind, layout, f, g, blocks, Vec::new(), slack_pairs, base.lagrangians.clone(), rho)
}

/// Perturbed reduced system `K_ρ`.
pub fn assemble_perturbed(p: &GoopProblem, rho: f64) -> Result<KktSystem> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Argument(format!("rho must be positive, got {rho}")));
    }
    perturb(&assemble_reduced(p)?, rho)
}

/// The same perturbation applied to the complete system.
pub fn assemble_perturbed_complete(p: &GoopProblem, rho: f64, cap: u64) -> Result<KktSystem> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Argument(format!("rho must be positive, got {rho}")));
    }
    perturb(&assemble_complete_capped(p, cap)?, rho)
}
