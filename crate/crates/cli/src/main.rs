use std::fs::File;
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goop_core::harness::{run_equivalence_mc, run_scaling, size_table, Family, GeneratorConfig, SCALING_CAP};
use goop_core::kkt::{assemble_perturbed, assemble_perturbed_complete, Candidate};
use goop_core::model::{load_problem, GoopProblem};
use goop_core::pdip::{central_path_study, solve_system, SolveReport, SolverOptions, Status};
use goop_core::sosc::{certify, SoscOptions};
use goop_core::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "goop", version, about = "Solve and certify games of ordered preference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1.0)]
    rho0: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Number of ρ values in the schedule.
    #[arg(long, default_value_t = 11)]
    outer_steps: usize,
    #[arg(long, default_value_t = 200)]
    max_inner: usize,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            rho0: self.rho0,
            sigma: self.sigma,
            eps: self.eps,
            outer_steps: self.outer_steps,
            max_inner: self.max_inner,
            ..Default::default()
        }
    }
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value = "quadratic-rank2")]
    family: Family,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    players: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    me: usize,
    #[arg(long, default_value_t = 2)]
    mi: usize,
    #[arg(long, default_value_t = 0.5)]
    perturbation: f64,
}

impl GenArgs {
    fn config(&self, levels: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            players: self.players,
            n: self.n,
            m_eq: self.me,
            m_ineq: self.mi,
            levels,
            family: self.family,
            perturbation: self.perturbation,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the reduced system with the interior-point homotopy.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Primal start, comma separated; zeros by default.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z0: Option<Vec<f64>>,
    },
    /// Solve the complete system.
    SolveComplete {
        problem: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z0: Option<Vec<f64>>,
        /// Refuse complete systems with more variables than this.
        #[arg(long, default_value_t = 100_000)]
        cap: u64,
    },
    /// Check second-order conditions at a candidate point of the reduced system.
    Certify {
        problem: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-8)]
        mu: f64,
    },
    /// Closed-form sizes of both formulations.
    Sizes {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        me: u64,
        #[arg(long)]
        mi: u64,
        #[arg(long = "K", value_delimiter = ',', required = true)]
        ks: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        players: u64,
    },
    /// Reduced vs complete agreement on random instances.
    Mc {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long = "K", default_value_t = 3)]
        k: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 100_000)]
        cap: u64,
        /// Write the results JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve times of both formulations over a range of level counts.
    Scaling {
        #[arg(long = "Ks", value_delimiter = ',', default_value = "2,3,4,5,6")]
        ks: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long, default_value = "quadratic-rank2")]
        family: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        players: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        me: usize,
        #[arg(long, default_value_t = 2)]
        mi: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = SCALING_CAP)]
        cap: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance of path points to the smallest-ρ solution.
    CentralPath {
        problem: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8")]
        rhos: Vec<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z0: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Parse(_)
            | Error::Model(_)
            | Error::Declaration(_)
            | Error::Evaluation(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(1)
        }
    }
}

fn problem(path: &Path) -> Result<GoopProblem, Failure> {
    Ok(load_problem(path)?.to_general()?)
}

fn start(p: &GoopProblem, z0: Option<Vec<f64>>) -> Result<Vec<f64>, Failure> {
    let n = p.n_total();
    match z0 {
        None => Ok(vec![0.0; n]),
        Some(z) if z.len() == n => Ok(z),
        Some(z) => Err(Failure::Usage(format!("--z0 has {} entries, problem has {n} variables", z.len()))),
    }
}

fn emit(v: &Value, out: Option<&Path>) -> Outcome {
    let text = serde_json::to_string_pretty(v).map_err(Error::from)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
                if e.kind() != ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn report_json(r: &SolveReport) -> Value {
    json!({
        "status": r.status,
        "z": r.z(),
        "rho": r.rho,
        "residual": r.residual,
        "kkt_residual": r.kkt_residual,
        "max_violation": r.max_violation,
        "min_s_gamma": r.min_s_gamma,
        "iterations": r.trace.iter().filter(|t| t.inner_iter > 0).count(),
        "blocks": r.blocks,
        "tail": r.tail,
        "time_s": r.time_s,
        "candidate": r.candidate,
    })
}

fn finish(r: &SolveReport, trace: Option<&Path>) -> Outcome {
    if let Some(path) = trace {
        r.write_trace_csv(BufWriter::new(File::create(path)?))?;
    }
    emit(&report_json(r), None)?;
    if r.status != Status::Converged {
        return Err(Failure::Solver(format!("last block ended with {}", r.status.as_str())));
    }
    Ok(())
}

fn run(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Solve { problem: path, solver, trace, z0 } => {
            let p = problem(&path)?;
            let opts = solver.options();
            opts.check()?;
            let z0 = start(&p, z0)?;
            let r = solve_system(&assemble_perturbed(&p, opts.rho0)?, &z0, &opts)?;
            finish(&r, trace.as_deref())
        }
        Cmd::SolveComplete { problem: path, solver, trace, z0, cap } => {
            let p = problem(&path)?;
            let opts = solver.options();
            opts.check()?;
            let z0 = start(&p, z0)?;
            let r = solve_system(&assemble_perturbed_complete(&p, opts.rho0, cap)?, &z0, &opts)?;
            finish(&r, trace.as_deref())
        }
        Cmd::Certify { problem: path, candidate, seed, samples, mu } => {
            let p = problem(&path)?;
            let text = std::fs::read_to_string(&candidate)?;
            let mut v: Value = serde_json::from_str(&text).map_err(Error::from)?;
            // accept solver output as well as a bare {z, y}
            if let Some(c) = v.get_mut("candidate") {
                v = c.take();
            }
            let cand: Candidate = serde_json::from_value(v).map_err(Error::from)?;
            let opts = SoscOptions { seed, samples, mu, ..Default::default() };
            let cert = certify(&p, &cand, &opts)?;
            emit(&serde_json::to_value(&cert).map_err(Error::from)?, None)
        }
        Cmd::Sizes { n, me, mi, ks, players } => {
            let rows = size_table(n, me, mi, &ks, players)?;
            emit(&json!({ "n": n, "m_eq": me, "m_ineq": mi, "players": players, "rows": rows }), None)
        }
        Cmd::Mc { gen, count, k, solver, cap, out } => {
            let res = run_equivalence_mc(&gen.config(k), count, &solver.options(), cap)?;
            emit(&serde_json::to_value(&res).map_err(Error::from)?, out.as_deref())
        }
        Cmd::Scaling { ks, count, family, seed, players, n, me, mi, solver, cap, out } => {
            let gen = GenArgs { family, seed, players, n, me, mi, perturbation: 0.5 };
            let res = run_scaling(&gen.config(1), &ks, count, &solver.options(), cap)?;
            emit(&serde_json::to_value(&res).map_err(Error::from)?, out.as_deref())
        }
        Cmd::CentralPath { problem: path, rhos, solver, z0, out } => {
            let p = problem(&path)?;
            let opts = solver.options();
            let z0 = start(&p, z0)?;
            let first = rhos.iter().copied().fold(f64::NAN, f64::max);
            let sys = assemble_perturbed(&p, if first.is_nan() { 1.0 } else { first })?;
            let st = central_path_study(&sys, &z0, &rhos, &opts)?;
            let samples: Vec<Value> =
                st.samples.iter().map(|s| json!({ "rho": s.rho, "distance": s.distance })).collect();
            let v = json!({ "samples": samples, "slope": st.slope, "z": st.report.z(), "status": st.report.status });
            emit(&v, out.as_deref())?;
            if st.report.status != Status::Converged {
                return Err(Failure::Solver("path did not converge at the smallest rho".into()));
            }
            Ok(())
        }
    }
}
