//! Seeded random instances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::linalg::numerical_rank;
use crate::model::{GoopProblem, QuadraticGoop, QuadraticPlayer, PRIMAL};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    QuadraticRank2,
    NonquadraticQuarticTop,
    NonquadraticExp,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic-rank2" | "quadratic" => Ok(Family::QuadraticRank2),
            "nonquadratic-quartic-top" | "quartic" => Ok(Family::NonquadraticQuarticTop),
            "nonquadratic-exp" | "exp" => Ok(Family::NonquadraticExp),
            _ => Err(Error::Argument(format!("unknown family {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub players: usize,
    /// Decision dimension per player.
    pub n: usize,
    pub m_eq: usize,
    pub m_ineq: usize,
    pub levels: usize,
    pub family: Family,
    /// Standard deviation of the noise added to the feasible point to get `z0`.
    pub perturbation: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            players: 2,
            n: 4,
            m_eq: 1,
            m_ineq: 2,
            levels: 2,
            family: Family::QuadraticRank2,
            perturbation: 0.5,
        }
    }
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<()> {
        if self.players == 0 || self.n == 0 || self.levels == 0 {
            return Err(Error::Argument("players, n and levels must be positive".into()));
        }
        if self.m_eq > self.n {
            return Err(Error::Argument("m_eq exceeds n".into()));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::Argument("perturbation must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.players * self.n
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub problem: GoopProblem,
    /// Matrix data when the instance is quadratic.
    pub quadratic: Option<QuadraticGoop>,
    /// Feasible point; strictly feasible except for strictly complementary instances.
    pub z_feasible: Vec<f64>,
    /// Solver start: `z_feasible` plus noise.
    pub z0: Vec<f64>,
}

/// Independent stream per instance index.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub(crate) fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // row-major fill so the stream order is easy to reason about
    let data: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(r, c, &data)
}

/// Gaussian rows whose own-block part has full row rank.
pub(crate) fn full_rank_rows(rng: &mut ChaCha8Rng, m: usize, n_total: usize, own: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
    for _ in 0..100 {
        let a = normal_mat(rng, m, n_total);
        if m == 0 || numerical_rank(&a.columns(own.start, own.len()).clone_owned(), None)? == m {
            return Ok(a);
        }
    }
    Err(Error::Generation("could not draw full-rank constraint rows in 100 attempts".into()))
}

/// Inequality normals `(Q w)ᵀ` drawn from the column space of `q`. When the
/// own-block stack `[H; G]` can have full row rank it is resampled until it does.
fn normals_in_range(
    rng: &mut ChaCha8Rng,
    q: &DMatrix<f64>,
    eq_mat: &DMatrix<f64>,
    m: usize,
    own: std::ops::Range<usize>,
) -> Result<DMatrix<f64>> {
    let nt = q.nrows();
    let rank_q = numerical_rank(&q.columns(own.start, own.len()).clone_owned(), Some(1e-10))?;
    let need = m <= rank_q && eq_mat.nrows() + m <= own.len();
    for _ in 0..100 {
        let w = normal_mat(rng, nt, m);
        let g = (q * w).transpose();
        if !need {
            return Ok(g);
        }
        let mut stack = DMatrix::zeros(eq_mat.nrows() + m, own.len());
        stack.rows_mut(0, eq_mat.nrows()).copy_from(&eq_mat.columns(own.start, own.len()));
        stack.rows_mut(eq_mat.nrows(), m).copy_from(&g.columns(own.start, own.len()));
        if numerical_rank(&stack, Some(1e-10))? == stack.nrows() {
            return Ok(g);
        }
    }
    Err(Error::Generation("could not draw regular inequality rows in 100 attempts".into()))
}

fn margin(rng: &mut ChaCha8Rng) -> f64 {
    Uniform::new(0.5, 1.5).expect("valid range").sample(rng)
}

/// Rank-2 quadratic costs with linear constraints, strictly feasible at a
/// Gaussian point.
pub fn gen_quadratic(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<(QuadraticGoop, DVector<f64>)> {
    cfg.check()?;
    let nt = cfg.n_total();
    let z_f = normal_vec(rng, nt);
    let mut players = Vec::with_capacity(cfg.players);
    for i in 0..cfg.players {
        let own = i * cfg.n..(i + 1) * cfg.n;
        let mut quad = Vec::new();
        let mut lin = Vec::new();
        for _ in 0..cfg.levels {
            let a = normal_mat(rng, nt, 2);
            let q = &a * a.transpose();
            let w = normal_vec(rng, nt);
            lin.push(&q * w);
            quad.push(q);
        }
        let eq_mat = full_rank_rows(rng, cfg.m_eq, nt, own.clone())?;
        let eq_rhs = &eq_mat * &z_f;
        let ineq_mat = normals_in_range(rng, &quad[cfg.levels - 1], &eq_mat, cfg.m_ineq, own.clone())?;
        let mut ineq_rhs = &ineq_mat * &z_f;
        for r in 0..cfg.m_ineq {
            ineq_rhs[r] -= margin(rng);
        }
        players.push(QuadraticPlayer { n: cfg.n, quad, lin, eq_mat, eq_rhs, ineq_mat, ineq_rhs });
    }
    Ok((QuadraticGoop { players }, z_f))
}

fn perturbed_start(rng: &mut ChaCha8Rng, z_f: &DVector<f64>, scale: f64) -> Vec<f64> {
    let noise = normal_vec(rng, z_f.len());
    (z_f + noise * scale).as_slice().to_vec()
}

/// Instance `index` of the family described by `cfg`.
pub fn gen_instance(cfg: &GeneratorConfig, index: u64) -> Result<Instance> {
    cfg.check()?;
    let mut rng = instance_rng(cfg.seed, index);
    match cfg.family {
        Family::QuadraticRank2 => {
            let (q, z_f) = gen_quadratic(cfg, &mut rng)?;
            let problem = q.lift()?;
            let z0 = perturbed_start(&mut rng, &z_f, cfg.perturbation);
            Ok(Instance { problem, quadratic: Some(q), z_feasible: z_f.as_slice().to_vec(), z0 })
        }
        Family::NonquadraticQuarticTop => {
            let (q, z_f) = gen_quadratic(cfg, &mut rng)?;
            let mut problem = q.lift()?;
            let z: Vec<Expr> = (0..cfg.n_total()).map(|j| Expr::var(PRIMAL, j)).collect();
            let top = Expr::sum(z).pow(4);
            for pl in &mut problem.players {
                pl.objectives[0] = top.clone();
            }
            let z0 = perturbed_start(&mut rng, &z_f, cfg.perturbation);
            Ok(Instance { problem, quadratic: None, z_feasible: z_f.as_slice().to_vec(), z0 })
        }
        Family::NonquadraticExp => gen_exp(cfg, &mut rng),
    }
}

/// Outer objective `‖z‖²`, inner objectives `e^{vᵀz} + e^{−vᵀz}` with unit
/// `v`, linear equalities, and coupling inequalities `β − (v_Kᵀz − c)²` in
/// the innermost direction. Each interval contains both `v_Kᵀz_f` and the
/// innermost optimum `v_Kᵀz = 0`.
fn gen_exp(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let nt = cfg.n_total();
    let z_f = normal_vec(rng, nt);
    let z: Vec<Expr> = (0..nt).map(|j| Expr::var(PRIMAL, j)).collect();
    let mut players = Vec::with_capacity(cfg.players);
    for i in 0..cfg.players {
        let own = i * cfg.n..(i + 1) * cfg.n;
        let mut objectives = vec![Expr::sum(z.iter().map(|x| x.pow(2)))];
        let mut inner = None;
        for _ in 1..cfg.levels {
            let v = normal_vec(rng, nt).normalize();
            let u = Expr::linear(v.as_slice(), &z);
            objectives.push(u.exp() + (-&u).exp());
            inner = Some((u, v));
        }
        let eq_mat = full_rank_rows(rng, cfg.m_eq, nt, own)?;
        let eq_rhs = &eq_mat * &z_f;
        let h = crate::model::affine_rows(&eq_mat, &eq_rhs, &z);
        let (u, v) = match inner {
            Some(x) => x,
            None => {
                let v = normal_vec(rng, nt).normalize();
                (Expr::linear(v.as_slice(), &z), v)
            }
        };
        let u_f = v.dot(&z_f);
        let mut g = Vec::with_capacity(cfg.m_ineq);
        for _ in 0..cfg.m_ineq {
            let c = 0.5 * u_f + 0.5 * rng.sample::<f64, _>(StandardNormal);
            let beta = c.powi(2).max((u_f - c).powi(2)) + margin(rng);
            g.push(Expr::constant(beta) - (&u - c).pow(2));
        }
        players.push(crate::model::PlayerSpec { n: cfg.n, objectives, h, g });
    }
    let problem = GoopProblem::new(players)?;
    let z0 = perturbed_start(rng, &z_f, cfg.perturbation);
    Ok(Instance { problem, quadratic: None, z_feasible: z_f.as_slice().to_vec(), z0 })
}

/// Quadratic game with a known strictly complementary solution.
#[derive(Clone, Debug)]
pub struct StrictInstance {
    pub instance: Instance,
    pub game: QuadraticGoop,
    pub z_star: Vec<f64>,
    /// Rows active at `z_star`, per player; the rest are slack by at least 0.5.
    pub active: Vec<Vec<usize>>,
    /// Smallest innermost multiplier over the active rows.
    pub min_multiplier: f64,
}

/// Smallest innermost multiplier accepted for an active row.
pub const STRICT_MARGIN: f64 = 0.1;

/// The first `ceil(m_ineq / 2)` inequality rows of each player are active
/// at the solution with innermost multipliers above `STRICT_MARGIN`; the
/// rest are slack. The solution is unique in `z`.
pub fn gen_strict_complementary(cfg: &GeneratorConfig, index: u64) -> Result<StrictInstance> {
    use crate::quadratic::{build_recursion, primal_unique, solve_linear, SystemChoice};
    cfg.check()?;
    let mut rng = instance_rng(cfg.seed, index);
    let m_act = cfg.m_ineq.div_ceil(2);
    let nt = cfg.n_total();
    for _ in 0..100 {
        let base = GeneratorConfig { m_ineq: 0, ..cfg.clone() };
        let (mut game, z_f) = gen_quadratic(&base, &mut rng)?;
        let mut aug = game.clone();
        for (i, pl) in aug.players.iter_mut().enumerate() {
            let own = i * cfg.n..(i + 1) * cfg.n;
            let ga = normals_in_range(&mut rng, &pl.quad[cfg.levels - 1], &pl.eq_mat, m_act, own)?;
            let m = pl.m_eq();
            let mut h = DMatrix::zeros(m + m_act, nt);
            h.rows_mut(0, m).copy_from(&pl.eq_mat);
            h.rows_mut(m, m_act).copy_from(&ga);
            pl.eq_rhs = &h * &z_f;
            pl.eq_mat = h;
        }
        if !aug.validate()?.warnings.is_empty() {
            continue;
        }
        let rec = build_recursion(&aug)?;
        if !primal_unique(&rec, SystemChoice::Reduced, 1e-8)? {
            continue;
        }
        let sol = match solve_linear(&rec, SystemChoice::Reduced) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let lam = rec.innermost_eq_multipliers(SystemChoice::Reduced, &sol.v);
        let mut row = 0;
        let mut min_multiplier = f64::INFINITY;
        for (i, pl) in game.players.iter_mut().enumerate() {
            let src = &aug.players[i];
            let m = pl.m_eq();
            let mut g = src.eq_mat.rows(m, m_act).clone_owned();
            let mut gv = src.eq_rhs.rows(m, m_act).clone_owned();
            for t in 0..m_act {
                let l = lam[row + m + t];
                if l < 0.0 {
                    g.row_mut(t).neg_mut();
                    gv[t] = -gv[t];
                }
                min_multiplier = min_multiplier.min(l.abs());
            }
            row += m + m_act;
            let own = i * cfg.n..(i + 1) * cfg.n;
            let m_slack = cfg.m_ineq - m_act;
            let empty = DMatrix::zeros(0, nt);
            let gi = normals_in_range(&mut rng, &pl.quad[cfg.levels - 1], &empty, m_slack, own)?;
            let mut gi_rhs = &gi * &sol.z;
            for r in 0..m_slack {
                gi_rhs[r] -= margin(&mut rng);
            }
            let mut ineq = DMatrix::zeros(cfg.m_ineq, nt);
            ineq.rows_mut(0, m_act).copy_from(&g);
            ineq.rows_mut(m_act, m_slack).copy_from(&gi);
            let mut rhs = DVector::zeros(cfg.m_ineq);
            rhs.rows_mut(0, m_act).copy_from(&gv);
            rhs.rows_mut(m_act, m_slack).copy_from(&gi_rhs);
            pl.ineq_mat = ineq;
            pl.ineq_rhs = rhs;
        }
        if min_multiplier < STRICT_MARGIN {
            continue;
        }
        let problem = game.lift()?;
        let z0 = perturbed_start(&mut rng, &sol.z, cfg.perturbation);
        let z_star = sol.z.as_slice().to_vec();
        let active = vec![(0..m_act).collect(); cfg.players];
        let instance = Instance { problem, quadratic: Some(game.clone()), z_feasible: z_star.clone(), z0 };
        return Ok(StrictInstance { instance, game, z_star, active, min_multiplier });
    }
    Err(Error::Generation("no strictly complementary instance in 100 attempts".into()))
}
