//! Homotopy primal-dual interior-point solver over perturbed KKT systems.

mod tail;

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::expr::{evaluate, Assignment};
use crate::kkt::{assemble_perturbed, Candidate, KktSystem};
use crate::linalg::{default_rank_tol, pinv_solve, singular_values};
use crate::model::GoopProblem;
use crate::{Error, Result};

pub use tail::{fit_window, quadratic_tail_fit, trace_tail_fit, TailFit, TailVerdict, TAIL_FLOOR, TAIL_MIN_ORDER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rho0: f64,
    /// Contraction factor applied to ρ between outer steps.
    pub sigma: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Inner tolerance on `‖K_ρ(y)‖₂`; also the smallest admissible step.
    pub eps: f64,
    /// Number of ρ values in the schedule.
    pub outer_steps: usize,
    pub max_inner: usize,
    pub rank_tol: Option<f64>,
    /// Lower bound on initial slacks.
    pub floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rho0: 1.0,
            sigma: 0.1,
            beta: 0.5,
            eps: 1e-8,
            outer_steps: 11,
            max_inner: 200,
            rank_tol: None,
            floor: 1e-2,
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Argument(m.to_string()));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad("rho0 must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0,1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0,1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.outer_steps == 0 {
            return bad("outer_steps must be at least 1");
        }
        if !(self.floor > 0.0) {
            return bad("floor must be positive");
        }
        if let Some(t) = self.rank_tol {
            if !(t > 0.0) {
                return bad("rank_tol must be positive");
            }
        }
        Ok(())
    }

    /// The geometric schedule `ρ0, σρ0, σ²ρ0, ...`.
    pub fn schedule(&self) -> Vec<f64> {
        (0..self.outer_steps).map(|l| self.rho0 * self.sigma.powi(l as i32)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    LineSearchFailure,
    MaxIterations,
    NumericFailure,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::LineSearchFailure => "line-search-failure",
            Status::MaxIterations => "max-iterations",
            Status::NumericFailure => "numeric-failure",
        }
    }
}

/// One accepted iterate. `inner_iter = 0` is the point a ρ block starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub rho: f64,
    pub inner_iter: usize,
    pub residual: f64,
    /// Step that produced this iterate; zero for the block start.
    pub alpha: f64,
    pub min_s_gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub rho: f64,
    pub status: Status,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    /// Status of the last ρ block.
    pub status: Status,
    pub candidate: Candidate,
    /// Full iterate, slacks included.
    pub y: Vec<f64>,
    pub rho: f64,
    /// `‖K_ρ(y)‖₂` at the final ρ.
    pub residual: f64,
    /// `‖K_0(y)‖_∞`, the unperturbed residual.
    pub kkt_residual: f64,
    pub min_s_gamma: Option<f64>,
    /// Largest violation of `a ≥ 0` over the complementarity pairs.
    pub max_violation: f64,
    /// Ratio of extreme retained singular values of the final Jacobian.
    pub condition: Option<f64>,
    pub blocks: Vec<BlockSummary>,
    pub trace: Vec<TraceRow>,
    pub tail: TailFit,
    pub time_s: f64,
}

impl SolveReport {
    pub fn z(&self) -> &[f64] {
        &self.candidate.z
    }

    /// Residuals of one ρ block in iteration order.
    pub fn block_residuals(&self, block: usize) -> Vec<f64> {
        let rho = self.blocks[block].rho;
        self.trace.iter().filter(|t| t.rho == rho).map(|t| t.residual).collect()
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trace_csv(&self.trace, out)
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "rho,inner_iter,residual,alpha,min_s_gamma")?;
    for t in trace {
        let m = t.min_s_gamma.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{:e},{},{:e},{:e},{}", t.rho, t.inner_iter, t.residual, t.alpha, m)?;
    }
    Ok(())
}

fn norm2(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn min_s_gamma(sys: &KktSystem, y: &[f64]) -> Option<f64> {
    sys.slack_pairs.iter().map(|p| y[p.slack] * y[p.mult]).reduce(f64::min)
}

/// Start point for a perturbed system: `z0`, zero duals, `s = max(a, floor)`
/// and `γ = ρ/s` for every pair.
pub fn initialize(sys: &KktSystem, z0: &[f64], rho: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    if z0.len() != sys.primal_dim() {
        return Err(Error::Argument(format!("z0 has length {}, expected {}", z0.len(), sys.primal_dim())));
    }
    let mut y = vec![0.0; sys.dim()];
    y[..z0.len()].copy_from_slice(z0);
    // induced pairs read multipliers of deeper pairs, which come later
    for sp in sys.slack_pairs.iter().rev() {
        let a = evaluate(&sp.a, &Assignment { space: &sys.space, values: &y })?;
        if !a.is_finite() {
            return Err(Error::Numeric(format!("constraint value {a} at the start point")));
        }
        let s = a.max(opts.floor);
        y[sp.slack] = s;
        y[sp.mult] = rho / s;
    }
    Ok(y)
}

/// `Δy = −(∇K_ρ(y))⁺ K_ρ(y)`.
pub fn newton_step(sys: &KktSystem, y: &[f64], rho: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let r = DVector::from_vec(sys.residual_at(y, rho));
    let j = sys.jacobian(y);
    Ok(pinv_solve(&j, &(-r), opts.rank_tol)?.as_slice().to_vec())
}

/// Backtracking on `‖K_ρ‖₂` with strict positivity of the indices in
/// `positive`. Returns the accepted step size and point.
pub fn line_search(
    sys: &KktSystem,
    y: &[f64],
    dy: &[f64],
    rho: f64,
    positive: &[usize],
    opts: &SolverOptions,
) -> Option<(f64, Vec<f64>, f64)> {
    let merit = norm2(&sys.residual_at(y, rho));
    let mut alpha = 1.0;
    let mut trial = vec![0.0; y.len()];
    while alpha >= opts.eps {
        for (t, (a, d)) in trial.iter_mut().zip(y.iter().zip(dy)) {
            *t = a + alpha * d;
        }
        if positive.iter().all(|&i| trial[i] > 0.0) {
            let m = norm2(&sys.residual_at(&trial, rho));
            if m <= merit {
                return Some((alpha, trial, m));
            }
        }
        alpha *= opts.beta;
    }
    None
}

struct BlockOutcome {
    status: Status,
    iterations: usize,
    residual: f64,
}

fn run_block(
    sys: &KktSystem,
    y: &mut Vec<f64>,
    rho: f64,
    positive: &[usize],
    opts: &SolverOptions,
    trace: &mut Vec<TraceRow>,
) -> BlockOutcome {
    let mut residual = norm2(&sys.residual_at(y, rho));
    trace.push(TraceRow { rho, inner_iter: 0, residual, alpha: 0.0, min_s_gamma: min_s_gamma(sys, y) });
    let mut it = 0;
    loop {
        if residual <= opts.eps {
            return BlockOutcome { status: Status::Converged, iterations: it, residual };
        }
        if !residual.is_finite() {
            return BlockOutcome { status: Status::NumericFailure, iterations: it, residual };
        }
        if it >= opts.max_inner {
            return BlockOutcome { status: Status::MaxIterations, iterations: it, residual };
        }
        let dy = match newton_step(sys, y, rho, opts) {
            Ok(d) => d,
            Err(_) => return BlockOutcome { status: Status::NumericFailure, iterations: it, residual },
        };
        let Some((alpha, next, m)) = line_search(sys, y, &dy, rho, positive, opts) else {
            return BlockOutcome { status: Status::LineSearchFailure, iterations: it, residual };
        };
        it += 1;
        *y = next;
        residual = m;
        trace.push(TraceRow { rho, inner_iter: it, residual, alpha, min_s_gamma: min_s_gamma(sys, y) });
    }
}

fn condition(sys: &KktSystem, y: &[f64], opts: &SolverOptions) -> Option<f64> {
    let j = sys.jacobian(y);
    let s = singular_values(&j).ok()?;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = opts.rank_tol.unwrap_or_else(|| default_rank_tol(j.nrows(), j.ncols())) * smax;
    let smin = s.iter().cloned().filter(|v| *v > cut).fold(f64::INFINITY, f64::min);
    (smax > 0.0 && smin.is_finite()).then(|| smax / smin)
}

/// Runs the ρ schedule `rhos` on a perturbed system from `y0`, warm
/// starting each block from the previous one. Returns the report together
/// with the iterate at the end of every block.
pub fn solve_schedule(sys: &KktSystem, y0: Vec<f64>, rhos: &[f64], opts: &SolverOptions) -> Result<(SolveReport, Vec<Vec<f64>>)> {
    opts.check()?;
    if rhos.is_empty() || rhos.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Argument("schedule needs positive rho values".into()));
    }
    if y0.len() != sys.dim() {
        return Err(Error::Argument(format!("start point has length {}, expected {}", y0.len(), sys.dim())));
    }
    let positive = sys.positive_indices();
    if positive.iter().any(|&i| !(y0[i] > 0.0)) {
        return Err(Error::Argument("slacks and pair multipliers must start positive".into()));
    }
    let start = Instant::now();
    let mut y = y0;
    let mut trace = Vec::new();
    let mut blocks = Vec::new();
    let mut ends = Vec::new();
    for &rho in rhos {
        let out = run_block(sys, &mut y, rho, &positive, opts, &mut trace);
        blocks.push(BlockSummary { rho, status: out.status, iterations: out.iterations, residual: out.residual });
        ends.push(y.clone());
        if out.status == Status::NumericFailure {
            break;
        }
    }
    let time_s = start.elapsed().as_secs_f64();
    let last = blocks.last().expect("at least one block").clone();
    let tail_start = trace.iter().rposition(|t| t.inner_iter == 0).unwrap_or(0);
    let max_violation = sys
        .slack_pairs
        .iter()
        .map(|sp| evaluate(&sp.a, &Assignment { space: &sys.space, values: &y }).map(|a| (-a).max(0.0)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let kkt_residual = sys.residual_at(&y, 0.0).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let report = SolveReport {
        status: last.status,
        candidate: Candidate::from_iterate(sys, &y),
        rho: last.rho,
        residual: last.residual,
        kkt_residual,
        min_s_gamma: min_s_gamma(sys, &y),
        max_violation,
        condition: condition(sys, &y, opts),
        tail: trace_tail_fit(&trace[tail_start..]),
        y,
        blocks,
        trace,
        time_s,
    };
    Ok((report, ends))
}

/// Solves an already perturbed system from primal start `z0`.
pub fn solve_system(sys: &KktSystem, z0: &[f64], opts: &SolverOptions) -> Result<SolveReport> {
    opts.check()?;
    let y0 = initialize(sys, z0, opts.rho0, opts)?;
    Ok(solve_schedule(sys, y0, &opts.schedule(), opts)?.0)
}

/// Solves the perturbed reduced system of `p`.
pub fn solve(p: &GoopProblem, z0: &[f64], opts: &SolverOptions) -> Result<SolveReport> {
    opts.check()?;
    let sys = assemble_perturbed(p, opts.rho0)?;
    solve_system(&sys, z0, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralPathSample {
    pub rho: f64,
    /// `None` when the block did not converge.
    pub y: Option<Vec<f64>>,
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CentralPathStudy {
    pub samples: Vec<CentralPathSample>,
    /// Log-log slope of distance against ρ; `None` with fewer than two usable samples.
    pub slope: Option<f64>,
    pub report: SolveReport,
}

/// Follows the path through the given ρ values and measures each converged
/// iterate's distance to the one at the smallest ρ.
pub fn central_path_study(sys: &KktSystem, z0: &[f64], rhos: &[f64], opts: &SolverOptions) -> Result<CentralPathStudy> {
    opts.check()?;
    let mut rhos = rhos.to_vec();
    rhos.sort_by(|a, b| b.total_cmp(a));
    rhos.dedup();
    let first = *rhos.first().ok_or_else(|| Error::Argument("empty rho list".into()))?;
    let y0 = initialize(sys, z0, first, opts)?;
    let (report, ends) = solve_schedule(sys, y0, &rhos, opts)?;
    let ok: Vec<bool> = report.blocks.iter().map(|b| b.status == Status::Converged).collect();
    let reference = match (ok.last(), ends.last()) {
        (Some(true), Some(y)) if ends.len() == rhos.len() => Some(y.clone()),
        _ => None,
    };
    let mut samples = Vec::new();
    for (j, &rho) in rhos.iter().enumerate() {
        let y = (ok.get(j) == Some(&true)).then(|| ends[j].clone());
        let distance = match (&y, &reference) {
            (Some(y), Some(r)) => Some(norm2(&y.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<_>>())),
            _ => None,
        };
        samples.push(CentralPathSample { rho, y, distance });
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .take(samples.len().saturating_sub(1))
        .filter_map(|s| s.distance.filter(|d| *d > 10.0 * opts.eps).map(|d| (s.rho.log10(), d.log10())))
        .collect();
    let slope = tail::ls_slope(&pts);
    Ok(CentralPathStudy { samples, slope, report })
}
