use super::{problem_counts, var_flat, KktSystem, Pair, RowBlock, RowKind, Role, SystemKind, VariableLayout};
use crate::expr::{derivative, Expr, Node, VarRef};
use crate::model::{GoopProblem, PRIMAL};
use crate::{Error, Result};

pub const DEFAULT_COMPLETE_CAP: u64 = 100_000;

struct Block {
    kind: RowKind,
    level: usize,
    induced: bool,
    rows: Vec<Expr>,
    /// `(a, b)` per row for complementarity blocks
    pairs: Vec<(Expr, Expr)>,
}

fn var_ref(e: &Expr) -> VarRef {
    match e.node() {
        Node::Var(v) => v.clone(),
        _ => unreachable!("multiplier slots are variables"),
    }
}

fn weighted<'a>(mults: &'a [Expr], rows: &'a [Expr]) -> impl Iterator<Item = Expr> + 'a {
    mults.iter().zip(rows).map(|(m, r)| -(m * r))
}

pub fn assemble_complete(p: &GoopProblem) -> Result<KktSystem> {
    assemble_complete_capped(p, DEFAULT_COMPLETE_CAP)
}

/// Complete KKT system, refusing instances whose variable count exceeds `cap`.
pub fn assemble_complete_capped(p: &GoopProblem, cap: u64) -> Result<KktSystem> {
    p.validate()?;
    let vars = problem_counts(p, true).0;
    if vars > cap {
        return Err(Error::TooLarge { vars, cap });
    }
    let mut layout = VariableLayout::primal(p);
    let mut player_blocks = Vec::new();
    let mut player_g = Vec::new();
    for (i, pl) in p.players.iter().enumerate() {
        let kk = pl.levels();
        let own: Vec<VarRef> = p.player_range(i).map(|j| VarRef::new(PRIMAL, j)).collect();
        // segments are created innermost first and re-sorted by level afterwards
        let mut tmp = VariableLayout::default();
        let mut blocks: Vec<Block> = Vec::new();
        let mut below: Vec<Expr> = Vec::new();
        let mut deeper: Vec<VarRef> = Vec::new();
        for k in (1..=kk).rev() {
            let mut eta: Vec<Expr> = Vec::new();
            let mut terms = vec![pl.objectives[k - 1].clone()];
            if k == kk {
                let lam = tmp.push(i, k, Role::Lambda, None, false, pl.m_eq());
                let gam = tmp.push(i, k, Role::Gamma, None, false, pl.m_ineq());
                terms.extend(weighted(&lam, &pl.h));
                terms.extend(weighted(&gam, &pl.g));
                let lag = Expr::sum(terms);
                let stat = own.iter().map(|v| derivative(&lag, v)).collect();
                blocks.push(Block { kind: RowKind::Stationarity, level: k, induced: false, rows: stat, pairs: vec![] });
                blocks.push(Block { kind: RowKind::Equality, level: k, induced: false, rows: pl.h.clone(), pairs: vec![] });
                let pairs: Vec<(Expr, Expr)> = pl.g.iter().cloned().zip(gam.iter().cloned()).collect();
                let rows = pairs.iter().map(|(a, b)| a * b).collect();
                blocks.push(Block { kind: RowKind::Complementarity, level: k, induced: false, rows, pairs });
                below = gam.clone();
                eta.extend(lam);
                eta.extend(gam);
            } else {
                for b in blocks.iter().filter(|b| b.kind == RowKind::Stationarity || b.kind == RowKind::InducedStationarity) {
                    let psi = tmp.push(i, k, Role::Psi, Some(b.level), b.induced, b.rows.len());
                    terms.extend(weighted(&psi, &b.rows));
                    eta.extend(psi);
                }
                for b in blocks.iter().filter(|b| b.kind == RowKind::Complementarity) {
                    let phi = tmp.push(i, k, Role::Phi, Some(b.level), b.induced, b.rows.len());
                    terms.extend(weighted(&phi, &b.rows));
                    eta.extend(phi);
                }
                let lam = tmp.push(i, k, Role::Lambda, None, false, pl.m_eq());
                terms.extend(weighted(&lam, &pl.h));
                let gam1 = tmp.push(i, k, Role::Gamma, None, false, pl.m_ineq());
                terms.extend(weighted(&gam1, &pl.g));
                let gam2 = tmp.push(i, k, Role::Gamma, None, true, below.len());
                terms.extend(weighted(&gam2, &below));
                let lag = Expr::sum(terms);
                let stat = own.iter().map(|v| derivative(&lag, v)).collect();
                let ind = deeper.iter().map(|v| derivative(&lag, v)).collect();
                let p1: Vec<(Expr, Expr)> = pl.g.iter().cloned().zip(gam1.iter().cloned()).collect();
                let p2: Vec<(Expr, Expr)> = below.iter().cloned().zip(gam2.iter().cloned()).collect();
                let mut new_blocks = vec![
                    Block { kind: RowKind::Stationarity, level: k, induced: false, rows: stat, pairs: vec![] },
                    Block { kind: RowKind::InducedStationarity, level: k, induced: true, rows: ind, pairs: vec![] },
                    Block { kind: RowKind::Complementarity, level: k, induced: false, rows: p1.iter().map(|(a, b)| a * b).collect(), pairs: p1 },
                    Block { kind: RowKind::Complementarity, level: k, induced: true, rows: p2.iter().map(|(a, b)| a * b).collect(), pairs: p2 },
                ];
                new_blocks.retain(|b| !b.rows.is_empty());
                new_blocks.extend(blocks.drain(..));
                blocks = new_blocks;
                let mut nb = gam1.clone();
                nb.extend(gam2.iter().cloned());
                nb.extend(below.drain(..));
                below = nb;
                eta.extend(lam);
                eta.extend(gam1);
                eta.extend(gam2);
            }
            blocks.retain(|b| !b.rows.is_empty());
            let mut nd: Vec<VarRef> = eta.iter().map(var_ref).collect();
            nd.extend(deeper.drain(..));
            deeper = nd;
        }
        let mut segs = tmp.segments;
        segs.sort_by_key(|s| s.level);
        layout.append(segs);
        let mut g = pl.g.clone();
        g.extend(below);
        player_blocks.push(blocks);
        player_g.push(g);
    }

    let space = layout.space();
    let mut f = Vec::new();
    let mut row_blocks = Vec::new();
    let mut pairs = Vec::new();
    for (i, blocks) in player_blocks.into_iter().enumerate() {
        for b in blocks {
            let start = f.len();
            for (r, row) in b.rows.iter().enumerate() {
                if b.kind == RowKind::Complementarity {
                    let (a, m) = &b.pairs[r];
                    pairs.push(Pair { row: f.len(), a: a.clone(), mult: var_flat(&space, m) });
                }
                f.push(row.clone());
            }
            row_blocks.push(RowBlock {
                player: i,
                level: b.level,
                kind: b.kind,
                target: (b.kind == RowKind::Complementarity).then_some(b.level),
                induced: b.induced,
                rows: start..f.len(),
            });
        }
    }
    let g = player_g.into_iter().flatten().collect();
    KktSystem::build(SystemKind::Complete, layout, f, g, row_blocks, pairs, Vec::new(), Vec::new(), 0.0)
}
