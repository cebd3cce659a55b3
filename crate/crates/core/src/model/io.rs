//! JSON problem files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GoopProblem, PlayerSpec, QuadraticGoop, QuadraticPlayer};
use crate::expr::parse;
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct PlayerFile {
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    objectives: Vec<String>,
    #[serde(default)]
    h: Vec<String>,
    #[serde(default)]
    g: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Levels {
    Uniform(usize),
    PerPlayer(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
struct QuadraticFile {
    #[serde(rename = "N")]
    n_players: usize,
    n: Vec<usize>,
    levels: Levels,
    /// `[player][level]` → row-major `n×n`
    #[serde(rename = "Q")]
    quad: Vec<Vec<Vec<f64>>>,
    q: Vec<Vec<Vec<f64>>>,
    /// `[player]` → row-major `m_E×n`
    #[serde(rename = "H")]
    eq_mat: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    ineq_mat: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    players: Option<Vec<PlayerFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quadratic: Option<QuadraticFile>,
}

#[derive(Clone, Debug)]
pub enum ProblemInput {
    General(GoopProblem),
    Quadratic(QuadraticGoop),
}

impl ProblemInput {
    pub fn to_general(&self) -> Result<GoopProblem> {
        match self {
            ProblemInput::General(p) => Ok(p.clone()),
            ProblemInput::Quadratic(q) => q.lift(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            ProblemInput::General(p) => ProblemFile { players: Some(general_to_file(p)), quadratic: None },
            ProblemInput::Quadratic(q) => ProblemFile { players: None, quadratic: Some(quadratic_to_file(q)) },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

fn general_to_file(p: &GoopProblem) -> Vec<PlayerFile> {
    p.players
        .iter()
        .map(|pl| PlayerFile {
            n: pl.n,
            k: pl.levels(),
            objectives: pl.objectives.iter().map(|e| e.to_string()).collect(),
            h: pl.h.iter().map(|e| e.to_string()).collect(),
            g: pl.g.iter().map(|e| e.to_string()).collect(),
        })
        .collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn quadratic_to_file(q: &QuadraticGoop) -> QuadraticFile {
    QuadraticFile {
        n_players: q.players.len(),
        n: q.players.iter().map(|p| p.n).collect(),
        levels: Levels::PerPlayer(q.players.iter().map(|p| p.levels()).collect()),
        quad: q.players.iter().map(|p| p.quad.iter().map(row_major).collect()).collect(),
        q: q.players.iter().map(|p| p.lin.iter().map(|v| v.as_slice().to_vec()).collect()).collect(),
        eq_mat: q.players.iter().map(|p| row_major(&p.eq_mat)).collect(),
        h: q.players.iter().map(|p| p.eq_rhs.as_slice().to_vec()).collect(),
        ineq_mat: q.players.iter().map(|p| row_major(&p.ineq_mat)).collect(),
        g: q.players.iter().map(|p| p.ineq_rhs.as_slice().to_vec()).collect(),
    }
}

fn matrix(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Model(format!("{what}: expected {rows}x{cols} entries, got {}", data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn quadratic_from_file(f: QuadraticFile) -> Result<QuadraticGoop> {
    let np = f.n_players;
    let lens = [f.n.len(), f.quad.len(), f.q.len(), f.eq_mat.len(), f.h.len(), f.ineq_mat.len(), f.g.len()];
    if lens.iter().any(|&l| l != np) {
        return Err(Error::Model(format!("quadratic: per-player arrays must have length N={np}")));
    }
    let levels = match f.levels {
        Levels::Uniform(k) => vec![k; np],
        Levels::PerPlayer(v) if v.len() == np => v,
        Levels::PerPlayer(_) => return Err(Error::Model("levels: wrong length".into())),
    };
    let n: usize = f.n.iter().sum();
    let mut players = Vec::with_capacity(np);
    for i in 0..np {
        if f.quad[i].len() != levels[i] || f.q[i].len() != levels[i] {
            return Err(Error::Model(format!("player {i}: expected {} levels of Q and q", levels[i])));
        }
        let quad = f.quad[i]
            .iter()
            .enumerate()
            .map(|(k, d)| matrix(n, n, d, &format!("Q[{i}][{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let lin = f.q[i]
            .iter()
            .enumerate()
            .map(|(k, d)| {
                if d.len() == n {
                    Ok(DVector::from_column_slice(d))
                } else {
                    Err(Error::Model(format!("q[{i}][{k}]: expected {n} entries")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let me = f.h[i].len();
        let mi = f.g[i].len();
        players.push(QuadraticPlayer {
            n: f.n[i],
            quad,
            lin,
            eq_mat: matrix(me, n, &f.eq_mat[i], &format!("H[{i}]"))?,
            eq_rhs: DVector::from_column_slice(&f.h[i]),
            ineq_mat: matrix(mi, n, &f.ineq_mat[i], &format!("G[{i}]"))?,
            ineq_rhs: DVector::from_column_slice(&f.g[i]),
        });
    }
    let q = QuadraticGoop { players };
    q.validate()?;
    Ok(q)
}

fn general_from_file(ps: Vec<PlayerFile>) -> Result<GoopProblem> {
    let players = ps
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if p.objectives.len() != p.k {
                return Err(Error::Model(format!("player {i}: K={} but {} objectives", p.k, p.objectives.len())));
            }
            let parse_all = |v: &[String]| v.iter().map(|s| parse(s)).collect::<Result<Vec<_>>>();
            Ok(PlayerSpec { n: p.n, objectives: parse_all(&p.objectives)?, h: parse_all(&p.h)?, g: parse_all(&p.g)? })
        })
        .collect::<Result<Vec<_>>>()?;
    GoopProblem::new(players)
}

pub fn parse_problem(text: &str) -> Result<ProblemInput> {
    let f: ProblemFile = serde_json::from_str(text)?;
    match (f.players, f.quadratic) {
        (Some(ps), None) => Ok(ProblemInput::General(general_from_file(ps)?)),
        (None, Some(q)) => Ok(ProblemInput::Quadratic(quadratic_from_file(q)?)),
        _ => Err(Error::Model("problem file needs exactly one of \"players\" or \"quadratic\"".into())),
    }
}

pub fn load_problem(path: &Path) -> Result<ProblemInput> {
    parse_problem(&std::fs::read_to_string(path)?)
}
