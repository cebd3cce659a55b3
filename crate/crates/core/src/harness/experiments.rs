use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gen::{gen_instance, GeneratorConfig};
use crate::kkt::{assemble_perturbed, assemble_perturbed_complete, count_complete, count_reduced, problem_counts};
use crate::model::GoopProblem;
use crate::pdip::{solve_system, SolveReport, SolverOptions, Status};
use crate::quadratic::{build_recursion, solve_linear, SystemChoice};
use crate::{Error, Result};

/// Fraction trimmed from each tail before timing statistics.
pub const TRIM: f64 = 0.025;

/// Cap on complete-system variables for scaling runs.
pub const SCALING_CAP: u64 = 1_000;

/// N-player totals for one number of levels. System size counts `F` and `G` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRow {
    pub k: u64,
    pub reduced_vars: u64,
    pub reduced_system: u64,
    pub complete_vars: u64,
    pub complete_system: u64,
}

pub fn size_table(n: u64, m_eq: u64, m_ineq: u64, ks: &[u64], players: u64) -> Result<Vec<SizeRow>> {
    if let Some(k) = ks.iter().find(|k| **k == 0) {
        return Err(Error::Argument(format!("levels must be positive, got {k}")));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let r = count_reduced(n, m_eq, m_ineq, k);
            let c = count_complete(n, m_eq, m_ineq, k);
            SizeRow {
                k,
                reduced_vars: players * r.0,
                reduced_system: players * (r.1 + r.2),
                complete_vars: players * c.0,
                complete_system: players * (c.1 + c.2),
            }
        })
        .collect())
}

/// Mean and sample standard deviation after dropping `frac` of the sorted
/// values from each end.
pub fn trimmed_stats(values: &[f64], frac: f64) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let cut = (v.len() as f64 * frac).floor() as usize;
    let kept = &v[cut..v.len() - cut];
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = if kept.len() > 1 { kept.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub reduced_vars: u64,
    pub reduced_rows: u64,
    pub complete_vars: u64,
    pub complete_rows: u64,
}

impl Sizes {
    pub fn of(p: &GoopProblem) -> Sizes {
        let r = problem_counts(p, false);
        let c = problem_counts(p, true);
        Sizes { reduced_vars: r.0, reduced_rows: r.1 + r.2, complete_vars: c.0, complete_rows: c.1 + c.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seed_index: u64,
    pub sizes: Sizes,
    pub status: String,
    pub z_distance: Option<f64>,
    /// Solve-loop wall time.
    pub time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formulation: Option<String>,
    /// Distance between the direct reduced and complete linear solves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trimmed_mean_s: Option<f64>,
    pub trimmed_std_s: Option<f64>,
    pub count: usize,
    pub failures: usize,
    pub max_z_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: serde_json::Value,
    pub records: Vec<Record>,
    pub summary: Summary,
}

const OK: &str = "converged";

fn summarize(records: &[Record]) -> Summary {
    let times: Vec<f64> = records.iter().filter(|r| r.status == OK).map(|r| r.time_s).collect();
    let stats = trimmed_stats(&times, TRIM);
    Summary {
        trimmed_mean_s: stats.map(|s| s.0),
        trimmed_std_s: stats.map(|s| s.1),
        count: records.len(),
        failures: records.iter().filter(|r| r.status != OK).count(),
        max_z_distance: records.iter().filter_map(|r| r.z_distance).reduce(f64::max),
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn status_of(label: &str, r: &Result<SolveReport>) -> Option<String> {
    match r {
        Ok(rep) if rep.status == Status::Converged => None,
        Ok(rep) => Some(format!("{label}:{}", rep.status.as_str())),
        Err(Error::TooLarge { .. }) => Some(format!("{label}:skipped")),
        Err(e) => Some(format!("{label}:error:{e}")),
    }
}

fn solve_reduced(p: &GoopProblem, z0: &[f64], opts: &SolverOptions) -> Result<SolveReport> {
    solve_system(&assemble_perturbed(p, opts.rho0)?, z0, opts)
}

fn solve_complete(p: &GoopProblem, z0: &[f64], opts: &SolverOptions, cap: u64) -> Result<SolveReport> {
    solve_system(&assemble_perturbed_complete(p, opts.rho0, cap)?, z0, opts)
}

#[derive(Clone, Debug, Serialize)]
struct McConfig<'a> {
    generator: &'a GeneratorConfig,
    count: u64,
    solver: &'a SolverOptions,
    cap: u64,
}

/// Solves the reduced and the complete system of every instance with the
/// interior-point loop and records the primal distance. Equality-only
/// quadratic instances also get direct linear solves of both systems.
pub fn run_equivalence_mc(cfg: &GeneratorConfig, count: u64, opts: &SolverOptions, cap: u64) -> Result<ExperimentResult> {
    cfg.check()?;
    opts.check()?;
    let mut records: Vec<Record> = (0..count)
        .into_par_iter()
        .map(|i| mc_record(cfg, i, opts, cap))
        .collect();
    records.sort_by_key(|r| r.seed_index);
    let config = serde_json::to_value(McConfig { generator: cfg, count, solver: opts, cap })?;
    Ok(ExperimentResult { summary: summarize(&records), config, records })
}

fn mc_record(cfg: &GeneratorConfig, i: u64, opts: &SolverOptions, cap: u64) -> Record {
    let inst = match gen_instance(cfg, i) {
        Ok(x) => x,
        Err(e) => {
            return Record {
                seed_index: i,
                sizes: Sizes { reduced_vars: 0, reduced_rows: 0, complete_vars: 0, complete_rows: 0 },
                status: format!("generation:{e}"),
                z_distance: None,
                time_s: 0.0,
                k: None,
                formulation: None,
                direct_distance: None,
            }
        }
    };
    let p = &inst.problem;
    let red = solve_reduced(p, &inst.z0, opts);
    let com = solve_complete(p, &inst.z0, opts, cap);
    let mut failures: Vec<String> = [status_of("reduced", &red), status_of("complete", &com)].into_iter().flatten().collect();
    let time_s = red.as_ref().map_or(0.0, |r| r.time_s) + com.as_ref().map_or(0.0, |r| r.time_s);
    let z_distance = match (&red, &com) {
        (Ok(a), Ok(b)) => Some(dist(a.z(), b.z())),
        _ => None,
    };
    let direct_distance = match &inst.quadratic {
        Some(q) if !q.has_inequalities() => {
            let direct = build_recursion(q).and_then(|rec| {
                let a = solve_linear(&rec, SystemChoice::Reduced)?;
                let b = solve_linear(&rec, SystemChoice::Complete)?;
                Ok(dist(a.z.as_slice(), b.z.as_slice()))
            });
            match direct {
                Ok(d) => Some(d),
                Err(e) => {
                    failures.push(format!("direct:{e}"));
                    None
                }
            }
        }
        _ => None,
    };
    Record {
        seed_index: i,
        sizes: Sizes::of(p),
        status: if failures.is_empty() { OK.into() } else { failures.join(",") },
        z_distance,
        time_s,
        k: None,
        formulation: None,
        direct_distance,
    }
}

#[derive(Clone, Debug, Serialize)]
struct ScalingConfig<'a> {
    generator: &'a GeneratorConfig,
    ks: &'a [usize],
    count: u64,
    solver: &'a SolverOptions,
    cap: u64,
}

/// Times both formulations for every number of levels in `ks`, one record
/// per (instance, level count, formulation). Complete systems above `cap`
/// variables are recorded as skipped.
pub fn run_scaling(cfg: &GeneratorConfig, ks: &[usize], count: u64, opts: &SolverOptions, cap: u64) -> Result<ExperimentResult> {
    cfg.check()?;
    opts.check()?;
    if ks.iter().any(|k| *k == 0) {
        return Err(Error::Argument("levels must be positive".into()));
    }
    let jobs: Vec<(usize, u64, bool)> =
        ks.iter().flat_map(|&k| (0..count).flat_map(move |i| [(k, i, false), (k, i, true)])).collect();
    let records: Vec<Record> = jobs
        .iter()
        .map(|&(k, i, complete)| {
            let c = GeneratorConfig { levels: k, ..cfg.clone() };
            let label = if complete { "complete" } else { "reduced" };
            let (sizes, rep) = match gen_instance(&c, i) {
                Ok(inst) => {
                    let rep = if complete {
                        solve_complete(&inst.problem, &inst.z0, opts, cap)
                    } else {
                        solve_reduced(&inst.problem, &inst.z0, opts)
                    };
                    (Sizes::of(&inst.problem), rep)
                }
                Err(e) => (Sizes { reduced_vars: 0, reduced_rows: 0, complete_vars: 0, complete_rows: 0 }, Err(e)),
            };
            Record {
                seed_index: i,
                sizes,
                status: status_of(label, &rep).unwrap_or_else(|| OK.into()),
                z_distance: None,
                time_s: rep.as_ref().map_or(0.0, |r| r.time_s),
                k: Some(k),
                formulation: Some(label.into()),
                direct_distance: None,
            }
        })
        .collect();
    let config = serde_json::to_value(ScalingConfig { generator: cfg, ks, count, solver: opts, cap })?;
    Ok(ExperimentResult { summary: summarize(&records), config, records })
}

impl ExperimentResult {
    /// Trimmed timing statistics of the converged records matching a filter.
    pub fn timing<F: Fn(&Record) -> bool>(&self, keep: F) -> Option<(f64, f64)> {
        let t: Vec<f64> = self.records.iter().filter(|r| r.status == OK && keep(r)).map(|r| r.time_s).collect();
        trimmed_stats(&t, TRIM)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_drops_tails() {
        let mut v: Vec<f64> = (0..40).map(|x| x as f64).collect();
        v.push(1e9);
        v.push(-1e9);
        let (m, _) = trimmed_stats(&v, TRIM).unwrap();
        assert!((m - 19.5).abs() < 1e-12);
        assert_eq!(trimmed_stats(&[], TRIM), None);
        assert_eq!(trimmed_stats(&[3.0], TRIM), Some((3.0, 0.0)));
    }
}
