//! Second-order certification of reduced KKT points, one player level at a time.
//!
//! The level-`k` subproblem of player `i` optimizes over its own `z` and
//! the multipliers of its deeper levels, subject to the deeper stationarity
//! rows, the equalities, the deeper complementarity products, `g ≥ 0` and
//! nonnegativity of the deeper `γ`. Its Lagrangian is the level Lagrangian
//! stored with the reduced system.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::expr::{derivative, evaluate, Assignment, Expr, Tape};
use crate::kkt::{assemble_reduced, Candidate, KktSystem, Role, RowKind, SystemKind};
use crate::linalg::null_space_basis;
use crate::model::GoopProblem;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoscOptions {
    /// Curvature margin.
    pub mu: f64,
    /// Directions drawn in the sampling stage.
    pub samples: usize,
    /// Activity and strictness threshold.
    pub act_tol: f64,
    /// Largest admissible dual-stationarity residual.
    pub stationarity_tol: f64,
    /// Largest admissible reduced-system residual at the candidate.
    pub residual_tol: f64,
    /// Distance of sampled directions from the critical cone.
    pub cone_eps: f64,
    /// Step scale of the perturbed points.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SoscOptions {
    fn default() -> Self {
        SoscOptions {
            mu: 1e-8,
            samples: 200,
            act_tol: 1e-6,
            stationarity_tol: 1e-6,
            residual_tol: 1e-6,
            cone_eps: 1e-3,
            delta: 1e-3,
            seed: 0,
        }
    }
}

/// Ordered from worst to best.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Violated,
    Indeterminate,
    Certified,
    CertifiedStrict,
}

impl Verdict {
    pub fn is_certified(self) -> bool {
        matches!(self, Verdict::Certified | Verdict::CertifiedStrict)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Violated => "violated",
            Verdict::Indeterminate => "indeterminate",
            Verdict::Certified => "certified",
            Verdict::CertifiedStrict => "certified-strict",
        }
    }
}

/// Rows of `g` active at a level, and those with a positive level multiplier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub player: usize,
    pub level: usize,
    pub active: Vec<usize>,
    pub strict: Vec<usize>,
}

/// Linearized cone of one level subproblem in the coordinates `vars`.
#[derive(Clone, Debug)]
pub struct ConeBasis {
    /// Flat indices of the subproblem variables.
    pub vars: Vec<usize>,
    /// Equality rows and strictly active inequality rows.
    pub equality_jacobian: DMatrix<f64>,
    /// Orthonormal columns spanning the lineality space.
    pub lineality: DMatrix<f64>,
    /// Gradients of weakly active inequalities, one per row; cone directions
    /// have nonnegative products with them.
    pub generators: DMatrix<f64>,
}

impl ConeBasis {
    /// Largest violation of the cone constraints by `d`.
    pub fn violation(&self, d: &DVector<f64>) -> f64 {
        let eq = if self.equality_jacobian.nrows() > 0 { (&self.equality_jacobian * d).amax() } else { 0.0 };
        let ineq = if self.generators.nrows() > 0 {
            (&self.generators * d).iter().fold(0.0f64, |m, v| m.max(-v))
        } else {
            0.0
        };
        eq.max(ineq)
    }
}

/// A cone direction with negative curvature at `candidate + alpha·delta·direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub vars: Vec<usize>,
    pub direction: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub curvature: f64,
    pub cone_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEvidence {
    pub player: usize,
    pub level: usize,
    pub verdict: Verdict,
    pub dual_stationarity: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub min_sampled_curvature: Option<f64>,
    pub cone_dim: usize,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub levels: Vec<LevelEvidence>,
    /// `(player, level)` pairs not examined because a deeper level was strict.
    pub skipped: Vec<(usize, usize)>,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict.is_certified()
    }

    pub fn level(&self, player: usize, level: usize) -> Option<&LevelEvidence> {
        self.levels.iter().find(|l| l.player == player && l.level == level)
    }
}

struct Subproblem {
    vars: Vec<usize>,
    lagrangian: Expr,
    equalities: Vec<Expr>,
    /// Inequality expressions with the flat index of their level multiplier.
    inequalities: Vec<(Expr, Option<usize>)>,
}

fn levels_of(sys: &KktSystem, player: usize) -> usize {
    sys.lagrangians.iter().filter(|l| l.player == player).map(|l| l.level).max().unwrap_or(0)
}

fn var_expr(sys: &KktSystem, flat: usize) -> Expr {
    Expr::from_var(sys.space.var_at(flat).expect("index inside the layout"))
}

/// `(g_r, flat index of γ_{level,r})` for the player's inequality rows.
fn level_pairs(sys: &KktSystem, player: usize, level: usize) -> Vec<(Expr, usize)> {
    sys.blocks_of(player)
        .filter(|b| b.kind == RowKind::Complementarity && b.level == level && !b.induced)
        .flat_map(|b| b.rows.clone())
        .filter_map(|row| sys.pairs.iter().find(|p| p.row == row).map(|p| (p.a.clone(), p.mult)))
        .collect()
}

fn subproblem(sys: &KktSystem, player: usize, level: usize) -> Result<Subproblem> {
    if sys.kind != SystemKind::Reduced {
        return Err(Error::Argument("certification works on the reduced system".into()));
    }
    let kk = levels_of(sys, player);
    if level == 0 || level > kk {
        return Err(Error::Argument(format!("player {player} has no level {level}")));
    }
    let lagrangian = sys.lagrangian(player, level).expect("one Lagrangian per level").clone();
    let mut vars: Vec<usize> = Vec::new();
    for seg in &sys.layout.segments {
        if seg.player != player || seg.induced {
            continue;
        }
        if seg.role == Role::Z || seg.level > level {
            vars.extend(seg.range());
        }
    }
    let mut equalities = Vec::new();
    for b in sys.blocks_of(player) {
        let keep = match b.kind {
            RowKind::Equality => true,
            RowKind::Stationarity | RowKind::Complementarity => b.level > level,
            _ => false,
        };
        if keep {
            equalities.extend(b.rows.clone().map(|r| sys.f[r].clone()));
        }
    }
    let mut inequalities: Vec<(Expr, Option<usize>)> =
        level_pairs(sys, player, level).into_iter().map(|(g, m)| (g, Some(m))).collect();
    for j in level + 1..=kk {
        for (_, m) in level_pairs(sys, player, j) {
            inequalities.push((var_expr(sys, m), None));
        }
    }
    Ok(Subproblem { vars, lagrangian, equalities, inequalities })
}

fn eval(sys: &KktSystem, e: &Expr, y: &[f64]) -> Result<f64> {
    evaluate(e, &Assignment { space: &sys.space, values: y })
}

fn gradient_rows(sys: &KktSystem, rows: &[&Expr], vars: &[usize], y: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows.len(), vars.len());
    for (r, e) in rows.iter().enumerate() {
        for (c, &v) in vars.iter().enumerate() {
            let var = sys.space.var_at(v).expect("index inside the layout");
            if e.may_depend_on(&var) {
                m[(r, c)] = eval(sys, &derivative(e, &var), y)?;
            }
        }
    }
    Ok(m)
}

/// Hessian of a scalar expression in the given coordinates, compiled once.
struct Hessian {
    n: usize,
    entries: Vec<(usize, usize)>,
    tape: Tape,
}

impl Hessian {
    fn new(sys: &KktSystem, e: &Expr, vars: &[usize]) -> Result<Hessian> {
        let refs: Vec<_> = vars.iter().map(|&v| sys.space.var_at(v).expect("index inside the layout")).collect();
        let mut entries = Vec::new();
        let mut exprs = Vec::new();
        for a in 0..vars.len() {
            if !e.may_depend_on(&refs[a]) {
                continue;
            }
            let da = derivative(e, &refs[a]);
            for b in a..vars.len() {
                if !da.may_depend_on(&refs[b]) {
                    continue;
                }
                let dab = derivative(&da, &refs[b]);
                if !dab.is_zero() {
                    entries.push((a, b));
                    exprs.push(dab);
                }
            }
        }
        Ok(Hessian { n: vars.len(), entries, tape: Tape::compile(&sys.space, &exprs)? })
    }

    fn at(&self, y: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (&(a, b), v) in self.entries.iter().zip(self.tape.eval(y)) {
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
        h
    }
}

fn shifted(y: &[f64], vars: &[usize], d: &DVector<f64>, step: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        out[v] += step * d[t];
    }
    out
}

fn curvature(h: &Hessian, y: &[f64], vars: &[usize], d: &DVector<f64>, step: f64) -> f64 {
    let hm = h.at(&shifted(y, vars, d, step));
    d.dot(&(hm * d))
}

fn check_point(sys: &KktSystem, y: &[f64]) -> Result<()> {
    if y.len() != sys.dim() {
        return Err(Error::Argument(format!("point has length {}, expected {}", y.len(), sys.dim())));
    }
    Ok(())
}

/// Active and strictly active `g` rows at every level of every player.
pub fn active_sets(sys: &KktSystem, y: &[f64], tol: f64) -> Result<Vec<ActiveSet>> {
    check_point(sys, y)?;
    let mut out = Vec::new();
    let players = sys.lagrangians.iter().map(|l| l.player + 1).max().unwrap_or(0);
    for i in 0..players {
        for k in 1..=levels_of(sys, i) {
            let mut active = Vec::new();
            let mut strict = Vec::new();
            for (r, (g, m)) in level_pairs(sys, i, k).iter().enumerate() {
                if eval(sys, g, y)?.abs() <= tol {
                    active.push(r);
                    if y[*m] > tol {
                        strict.push(r);
                    }
                }
            }
            out.push(ActiveSet { player: i, level: k, active, strict });
        }
    }
    Ok(out)
}

/// `‖∇_η L_k‖_∞` over the multipliers of the player's deeper levels.
pub fn check_dual_stationarity(sys: &KktSystem, y: &[f64], player: usize, level: usize) -> Result<f64> {
    check_point(sys, y)?;
    let sp = subproblem(sys, player, level)?;
    let mut worst: f64 = 0.0;
    for &v in &sp.vars {
        let var = sys.space.var_at(v).expect("index inside the layout");
        if &*var.name == crate::model::PRIMAL {
            continue;
        }
        if sp.lagrangian.may_depend_on(&var) {
            worst = worst.max(eval(sys, &derivative(&sp.lagrangian, &var), y)?.abs());
        }
    }
    Ok(worst)
}

/// Linearized cone of the level subproblem at `y`.
pub fn cone_basis(sys: &KktSystem, y: &[f64], player: usize, level: usize, tol: f64) -> Result<ConeBasis> {
    check_point(sys, y)?;
    let sp = subproblem(sys, player, level)?;
    cone_of(sys, &sp, y, tol)
}

fn cone_of(sys: &KktSystem, sp: &Subproblem, y: &[f64], tol: f64) -> Result<ConeBasis> {
    let mut eq_rows: Vec<&Expr> = sp.equalities.iter().collect();
    let mut weak: Vec<&Expr> = Vec::new();
    for (g, m) in &sp.inequalities {
        if eval(sys, g, y)?.abs() > tol {
            continue;
        }
        match m {
            Some(m) if y[*m] > tol => eq_rows.push(g),
            _ => weak.push(g),
        }
    }
    let equality_jacobian = gradient_rows(sys, &eq_rows, &sp.vars, y)?;
    let generators = gradient_rows(sys, &weak, &sp.vars, y)?;
    let lineality = if equality_jacobian.nrows() == 0 {
        DMatrix::identity(sp.vars.len(), sp.vars.len())
    } else {
        null_space_basis(&equality_jacobian, None)?
    };
    Ok(ConeBasis { vars: sp.vars.clone(), equality_jacobian, lineality, generators })
}

/// Curvature of the level Lagrangian along a witness, and its cone violation.
pub fn recheck_witness(sys: &KktSystem, y: &[f64], player: usize, level: usize, w: &Witness, tol: f64) -> Result<(f64, f64)> {
    check_point(sys, y)?;
    let sp = subproblem(sys, player, level)?;
    if sp.vars != w.vars {
        return Err(Error::Argument("witness coordinates do not match the subproblem".into()));
    }
    let cone = cone_of(sys, &sp, y, tol)?;
    let d = DVector::from_column_slice(&w.direction);
    let h = Hessian::new(sys, &sp.lagrangian, &sp.vars)?;
    Ok((curvature(&h, y, &sp.vars, &d, w.alpha * w.delta), cone.violation(&d)))
}

/// Direction of the cone spanned by `n` that also meets the weak rows, if `d` or `−d` does.
fn orient(cone: &ConeBasis, d: DVector<f64>) -> Option<DVector<f64>> {
    if cone.violation(&d) <= 1e-9 {
        Some(d)
    } else {
        let m = -d;
        (cone.violation(&m) <= 1e-9).then_some(m)
    }
}

fn level_seed(seed: u64, player: usize, level: usize) -> u64 {
    seed ^ ((player as u64) << 32) ^ (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Eigenvalue stage on the lineality space, then sampling near the cone.
pub fn certify_level(sys: &KktSystem, y: &[f64], player: usize, level: usize, opts: &SoscOptions) -> Result<LevelEvidence> {
    check_point(sys, y)?;
    let sp = subproblem(sys, player, level)?;
    let mut ev = LevelEvidence {
        player,
        level,
        verdict: Verdict::Indeterminate,
        dual_stationarity: None,
        min_eigenvalue: None,
        min_sampled_curvature: None,
        cone_dim: 0,
        witness: None,
        note: None,
    };
    let cone = match cone_of(sys, &sp, y, opts.act_tol) {
        Ok(c) => c,
        Err(e) => {
            ev.note = Some(format!("cone basis: {e}"));
            return Ok(ev);
        }
    };
    let n = &cone.lineality;
    ev.cone_dim = n.ncols();
    if n.ncols() == 0 {
        ev.verdict = Verdict::CertifiedStrict;
        ev.note = Some("critical cone is trivial".into());
        return Ok(ev);
    }
    let hess = Hessian::new(sys, &sp.lagrangian, &sp.vars)?;
    let h0 = hess.at(y);
    if !h0.iter().all(|v| v.is_finite()) {
        ev.note = Some("non-finite Hessian".into());
        return Ok(ev);
    }
    let proj = n.transpose() * &h0 * n;
    let eig = SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
    let (imin, lmin) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
    ev.min_eigenvalue = Some(lmin);
    if lmin >= opts.mu {
        ev.verdict = Verdict::CertifiedStrict;
        return Ok(ev);
    }
    let step = 0.5 * opts.delta;
    if lmin < -opts.mu {
        let d = n * eig.eigenvectors.column(imin);
        if let Some(d) = orient(&cone, d.normalize()) {
            let c = curvature(&hess, y, &sp.vars, &d, step);
            if c < -opts.mu {
                ev.verdict = Verdict::Violated;
                ev.witness = Some(Witness {
                    vars: sp.vars.clone(),
                    cone_violation: cone.violation(&d),
                    direction: d.as_slice().to_vec(),
                    alpha: 0.5,
                    delta: opts.delta,
                    curvature: c,
                });
                return Ok(ev);
            }
        }
    }

    // sampling: cone directions d, nearby directions p feasible for the
    // equality rows, curvature at perturbed points
    let mut rng = ChaCha8Rng::seed_from_u64(level_seed(opts.seed, player, level));
    let mut min_c = f64::INFINITY;
    let mut near_negative = false;
    let mut drawn = 0;
    for _ in 0..opts.samples {
        let mut d = None;
        for _ in 0..20 {
            let w = DVector::from_fn(n.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Some(v) = orient(&cone, (n * w).normalize()) {
                d = Some(v);
                break;
            }
        }
        let Some(d) = d else { continue };
        let xi = DVector::from_fn(n.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = (&d + (n * xi).normalize() * opts.cone_eps).normalize();
        let alpha: f64 = rng.random_range(f64::EPSILON..1.0);
        drawn += 1;
        let c = curvature(&hess, y, &sp.vars, &p, alpha * opts.delta);
        min_c = min_c.min(c);
        if c < -opts.mu {
            let cd = curvature(&hess, y, &sp.vars, &d, alpha * opts.delta);
            if cd < -opts.mu {
                ev.verdict = Verdict::Violated;
                ev.min_sampled_curvature = Some(min_c.min(cd));
                ev.witness = Some(Witness {
                    vars: sp.vars.clone(),
                    cone_violation: cone.violation(&d),
                    direction: d.as_slice().to_vec(),
                    alpha,
                    delta: opts.delta,
                    curvature: cd,
                });
                return Ok(ev);
            }
            near_negative = true;
        }
    }
    ev.min_sampled_curvature = (drawn > 0).then_some(min_c);
    if drawn == 0 {
        ev.note = Some("no cone direction could be sampled".into());
    } else if near_negative {
        ev.note = Some("negative curvature near the cone but not along it".into());
    } else {
        ev.verdict = Verdict::Certified;
    }
    Ok(ev)
}

/// Reduced residual and inequality violation a candidate must clear.
fn precondition(sys: &KktSystem, y: &[f64], tol: f64) -> Result<()> {
    let r = sys.residual(y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(r <= tol) {
        return Err(Error::Precondition(format!("reduced residual {r:.3e} exceeds {tol:.1e}")));
    }
    let g = sys.inequality(y).iter().fold(0.0f64, |m, v| m.max(-v));
    if !(g <= tol) {
        return Err(Error::Precondition(format!("inequality violated by {g:.3e}")));
    }
    Ok(())
}

/// Certifies every player from the innermost level outward. A strict level
/// ends the examination of that player.
pub fn certify_system(sys: &KktSystem, y: &[f64], opts: &SoscOptions) -> Result<Certificate> {
    check_point(sys, y)?;
    precondition(sys, y, opts.residual_tol)?;
    let players = sys.lagrangians.iter().map(|l| l.player + 1).max().unwrap_or(0);
    let mut levels = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..players {
        let kk = levels_of(sys, i);
        for k in (1..=kk).rev() {
            let ev = if k < kk {
                let stat = check_dual_stationarity(sys, y, i, k)?;
                if stat > opts.stationarity_tol {
                    LevelEvidence {
                        player: i,
                        level: k,
                        verdict: Verdict::Indeterminate,
                        dual_stationarity: Some(stat),
                        min_eigenvalue: None,
                        min_sampled_curvature: None,
                        cone_dim: 0,
                        witness: None,
                        note: Some("multiplier stationarity fails".into()),
                    }
                } else {
                    LevelEvidence { dual_stationarity: Some(stat), ..certify_level(sys, y, i, k, opts)? }
                }
            } else {
                certify_level(sys, y, i, k, opts)?
            };
            let strict = ev.verdict == Verdict::CertifiedStrict;
            levels.push(ev);
            if strict {
                skipped.extend((1..k).rev().map(|j| (i, j)));
                break;
            }
        }
    }
    let verdict = levels.iter().map(|l| l.verdict).min().unwrap_or(Verdict::CertifiedStrict);
    Ok(Certificate { verdict, levels, skipped })
}

pub fn certify(p: &GoopProblem, candidate: &Candidate, opts: &SoscOptions) -> Result<Certificate> {
    let sys = assemble_reduced(p)?;
    candidate.check(&sys)?;
    certify_system(&sys, &candidate.y, opts)
}
