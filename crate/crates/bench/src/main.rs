use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpcqp::ipm_core::{IpmArg, Mode, WarmStart};
use mpcqp::qp_data::{objective, KktVec, QpSolution, QpStructure};
use mpcqp::solver;
use mpcqp_bench::mass_spring::{gen_mass_spring, MassSpringConfig};
use mpcqp_bench::qpfile::{qp_read, qp_write, AnyQp};
use mpcqp_bench::report::{self, ReportMeta};
use mpcqp_bench::run::{run_closed_loop, run_scaling, scaling_table, solve_ocp_path, SolvePath};

/// Exit code for usage, I/O and format errors (solver statuses use 0-4).
const EXIT_ERROR: u8 = 10;

#[derive(Parser)]
#[command(name = "mpcqp", version, about = "Interior point QP solver for model predictive control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum WarmStartArg {
    None,
    Primal,
    #[value(name = "primal_dual")]
    PrimalDual,
}

impl From<WarmStartArg> for WarmStart {
    fn from(w: WarmStartArg) -> Self {
        match w {
            WarmStartArg::None => WarmStart::None,
            WarmStartArg::Primal => WarmStart::Primal,
            WarmStartArg::PrimalDual => WarmStart::PrimalDual,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a QP file and write a report.
    Solve {
        #[arg(long)]
        qp: PathBuf,
        #[arg(long, default_value = "balance")]
        mode: Mode,
        #[arg(long)]
        iter_max: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, value_enum, default_value = "none")]
        warm_start: WarmStartArg,
        /// Report of an earlier solve of a QP with the same layout, used as the guess.
        #[arg(long)]
        guess: Option<PathBuf>,
        #[arg(long, default_value = "ocp")]
        path: SolvePath,
        /// Output file; standard output if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Append the per-iteration table.
        #[arg(long)]
        trace: bool,
    },
    /// Write the mass-spring OCP QP to a file.
    GenMassSpring {
        #[arg(long)]
        masses: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0.5)]
        ts: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the mass-spring plant under receding-horizon control.
    ClosedLoop {
        #[arg(long)]
        masses: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value = "balance")]
        mode: Mode,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, value_enum, default_value = "primal_dual")]
        warm_start: WarmStartArg,
        /// Also solve every step from a cold start and report both counts.
        #[arg(long)]
        compare_cold: bool,
    },
    /// Time and count flops over a grid of problem sizes.
    Scaling {
        #[arg(long, value_delimiter = ',', required = true)]
        masses: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "speed")]
        modes: Vec<Mode>,
        #[arg(long, value_delimiter = ',', default_value = "ocp")]
        paths: Vec<SolvePath>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CmdResult = Result<u8, String>;

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {}", p.display(), e)),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}

fn read_guess(path: &PathBuf, layout: &mpcqp::qp_data::Layout) -> Result<QpSolution, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))?;
    let p = report::parse(&text).map_err(|e| format!("{}: {}", path.display(), e))?;
    let get = |k: &str| p.vector(k).ok_or_else(|| format!("{}: missing or malformed `{}`", path.display(), k));
    let v = KktVec { y: get("y")?, pi: get("pi")?, lam: get("lam")?, t: get("t")? };
    QpSolution::from_kkt(v, layout).map_err(|e| format!("{}: {}", path.display(), e))
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    qp: PathBuf,
    mode: Mode,
    iter_max: Option<usize>,
    tol: Option<f64>,
    warm_start: WarmStartArg,
    guess: Option<PathBuf>,
    path: SolvePath,
    out: Option<PathBuf>,
    trace: bool,
) -> CmdResult {
    let any = qp_read(&qp).map_err(|e| format!("{}: {}", qp.display(), e))?;
    let mut arg = IpmArg::new(mode).with_warm_start(warm_start.into());
    if let Some(k) = iter_max {
        arg = arg.with_iter_max(k);
    }
    if let Some(t) = tol {
        arg = arg.with_tol(t);
    }
    let layout = match &any {
        AnyQp::Dense(q) => q.layout().clone(),
        AnyQp::Ocp(q) => q.layout().clone(),
        AnyQp::Tree(q) => q.layout().clone(),
    };
    let guess = guess.map(|g| read_guess(&g, &layout)).transpose()?;
    let rep = match (&any, path) {
        (AnyQp::Ocp(q), p) => solve_ocp_path(q, &arg, p, guess.as_ref()).map_err(|e| e.to_string())?,
        (AnyQp::Dense(q), SolvePath::Ocp) => solver::solve_dense_qp(q, &arg, guess.as_ref()),
        (AnyQp::Tree(q), SolvePath::Ocp) => solver::solve_tree_ocp_qp(q, &arg, guess.as_ref()),
        (other, p) => return Err(format!("the {} path needs an OCP QP, got a {} QP", p, other.kind())),
    };
    let obj = match &any {
        AnyQp::Dense(q) => objective(q, &rep.solution),
        AnyQp::Ocp(q) => objective(q, &rep.solution),
        AnyQp::Tree(q) => objective(q, &rep.solution),
    };
    let meta = ReportMeta { kind: any.kind().into(), mode: mode.to_string(), path: path.to_string(), objective: obj };
    write_or_print(out.as_ref(), &report::render(&meta, &rep, trace))?;
    Ok(rep.status().exit_code() as u8)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Solve { qp, mode, iter_max, tol, warm_start, guess, path, report, trace } => {
            cmd_solve(qp, mode, iter_max, tol, warm_start, guess, path, report, trace)
        }
        Command::GenMassSpring { masses, horizon, ts, out } => {
            let cfg = MassSpringConfig { ts, ..MassSpringConfig::new(masses, horizon) };
            let qp = gen_mass_spring(&cfg).map_err(|e| e.to_string())?;
            qp_write(&out, &AnyQp::Ocp(qp)).map_err(|e| format!("{}: {}", out.display(), e))?;
            Ok(0)
        }
        Command::ClosedLoop { masses, horizon, steps, mode, tol, warm_start, compare_cold } => {
            let cfg = MassSpringConfig::new(masses, horizon);
            let arg = IpmArg::new(mode).with_tol(tol).with_warm_start(warm_start.into());
            let cl = run_closed_loop(&cfg, steps, &arg, compare_cold).map_err(|e| e.to_string())?;
            let mut out = String::from("step\tstatus\titerations\tcold_iterations\tu0\tx_norm\n");
            for (k, s) in cl.steps.iter().enumerate() {
                let norm = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let cold = s.cold_iterations.map_or("-".to_string(), |c| c.to_string());
                let u0 = s.u.first().copied().unwrap_or(0.0);
                out.push_str(&format!("{}\t{}\t{}\t{}\t{:e}\t{:e}\n", k, s.status, s.iterations, cold, u0, norm));
            }
            out.push_str(&format!("# total_iterations {}\n", cl.total_iterations()));
            if compare_cold {
                let cold: usize = cl.steps.iter().filter_map(|s| s.cold_iterations).sum();
                out.push_str(&format!("# total_cold_iterations {}\n", cold));
            }
            print!("{}", out);
            Ok(0)
        }
        Command::Scaling { masses, horizons, modes, paths, reps, out } => {
            let rows = run_scaling(&masses, &horizons, &modes, &paths, reps).map_err(|e| e.to_string())?;
            write_or_print(out.as_ref(), &scaling_table(&rows))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {}", msg);
            ExitCode::from(EXIT_ERROR)
        }
    }
}
