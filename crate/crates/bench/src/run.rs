//! Solve drivers: a single solve along a chosen path, the closed-loop
//! simulation and the scaling study.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use mpcqp::condensing::{self, CondensingError};
use mpcqp::ipm_core::{IpmArg, Mode, Status, WarmStart};
use mpcqp::linalg::{flops, Mat};
use mpcqp::qp_data::{compute_residuals, OcpQp, QpSolution, QpStructure};
use mpcqp::solver::{self, SolveReport};
use thiserror::Error;

use crate::mass_spring::{gen_mass_spring, plant, set_initial_state, MassSpringConfig, MassSpringError};
use crate::qpfile::AnyQp;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] MassSpringError),
    #[error(transparent)]
    Condensing(#[from] CondensingError),
    #[error("the {path} path needs an OCP QP, got a {kind} QP")]
    PathNeedsOcp { path: SolvePath, kind: &'static str },
    #[error("closed-loop step {step} ended with status {status}")]
    StepFailed { step: usize, status: Status },
}

/// How an OCP QP reaches the interior point method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolvePath {
    /// Riccati recursion on the original horizon.
    #[default]
    Ocp,
    /// Full condensing, dense solve, expansion.
    Condense,
    /// Partial condensing with the given block size.
    Partial(usize),
}

impl std::fmt::Display for SolvePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolvePath::Ocp => f.write_str("ocp"),
            SolvePath::Condense => f.write_str("condense"),
            SolvePath::Partial(n) => write!(f, "partial:{}", n),
        }
    }
}

impl FromStr for SolvePath {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ocp" => Ok(SolvePath::Ocp),
            "condense" => Ok(SolvePath::Condense),
            _ => match s.strip_prefix("partial:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Ok(SolvePath::Partial(n)),
                _ => Err(format!("unknown path `{}` (ocp, condense or partial:<N1>)", s)),
            },
        }
    }
}

/// Replaces the statistics' residuals by those of `sol` on `qp`.
fn report_on<Q: QpStructure>(qp: &Q, sol: QpSolution, mut stats: mpcqp::ipm_core::SolverStats) -> SolveReport {
    let residuals = compute_residuals(qp, &sol).expect("expanded solution matches the problem");
    stats.res_g = residuals.res_g;
    stats.res_b = residuals.res_b;
    stats.res_d = residuals.res_d;
    stats.res_m = residuals.res_m;
    stats.mu = residuals.mu;
    SolveReport { solution: sol, stats, residuals }
}

/// Solves an OCP QP along `path`. Condensed paths do not use the guess.
pub fn solve_ocp_path(
    qp: &OcpQp,
    arg: &IpmArg,
    path: SolvePath,
    guess: Option<&QpSolution>,
) -> Result<SolveReport, RunError> {
    match path {
        SolvePath::Ocp => Ok(solver::solve_ocp_qp(qp, arg, guess)),
        SolvePath::Condense => {
            let (dense, map) = condensing::condense(qp, !condensing::x0_is_fixed(qp))?;
            let rep = solver::solve_dense_qp(&dense, arg, None);
            let sol = condensing::expand_solution(&rep.solution, &map, qp)?;
            Ok(report_on(qp, sol, rep.stats))
        }
        SolvePath::Partial(n1) => {
            let (short, map) = condensing::partial_condense(qp, n1)?;
            let rep = solver::solve_ocp_qp(&short, arg, None);
            let sol = condensing::partial_expand(&rep.solution, &map, qp)?;
            Ok(report_on(qp, sol, rep.stats))
        }
    }
}

pub fn solve_any(qp: &AnyQp, arg: &IpmArg, path: SolvePath) -> Result<SolveReport, RunError> {
    match (qp, path) {
        (AnyQp::Ocp(q), p) => solve_ocp_path(q, arg, p, None),
        (AnyQp::Dense(q), SolvePath::Ocp) => Ok(solver::solve_dense_qp(q, arg, None)),
        (AnyQp::Tree(q), SolvePath::Ocp) => Ok(solver::solve_tree_ocp_qp(q, arg, None)),
        (other, path) => Err(RunError::PathNeedsOcp { path, kind: other.kind() }),
    }
}

/// Shifts a solution one stage forward in time: stage `k` takes the values of
/// stage `k + 1` where the layouts agree. Otherwise it keeps its own values
/// and takes only the state of stage `k + 1` when the sizes match.
pub fn shift_solution(sol: &QpSolution) -> QpSolution {
    let ly = &sol.layout;
    let mut out = sol.clone();
    let same = |a: usize, b: usize| {
        let (p, q) = (&ly.stages[a], &ly.stages[b]);
        (p.nu, p.nx, p.nb, p.ng, p.ns) == (q.nu, q.nx, q.nb, q.ng, q.ns)
    };
    for k in 0..ly.stages.len().saturating_sub(1) {
        let (p, q) = (&ly.stages[k], &ly.stages[k + 1]);
        if !same(k, k + 1) {
            if p.nx == q.nx {
                let (a, b) = (p.y_off + p.nu, q.y_off + q.nu);
                out.y[a..a + p.nx].copy_from_slice(&sol.y[b..b + q.nx]);
            }
            continue;
        }
        out.y[p.y_off..p.y_off + p.ny()].copy_from_slice(&sol.y[q.y_off..q.y_off + q.ny()]);
        out.lam[p.c_off..p.c_off + p.nc()].copy_from_slice(&sol.lam[q.c_off..q.c_off + q.nc()]);
        out.t[p.c_off..p.c_off + p.nc()].copy_from_slice(&sol.t[q.c_off..q.c_off + q.nc()]);
        if let (Some(a), Some(b)) = (p.pi_off, q.pi_off) {
            out.pi[a..a + p.nx].copy_from_slice(&sol.pi[b..b + q.nx]);
        }
    }
    out
}

/// Prepares a shifted solution as the guess for `qp`: the state left at the
/// end of the horizon is rolled out through the last dynamics, and the bound
/// multipliers of variables fixed by equal bounds (the initial state) are set
/// so that stationarity holds on those variables.
pub fn warm_guess(qp: &OcpQp, shifted: &QpSolution) -> QpSolution {
    let mut g = shifted.clone();
    let ly = qp.layout();
    let n = ly.stages.len() - 1;
    if n >= 1 {
        let q = &ly.stages[n];
        let field = |name: &str| qp.get_field(name, n - 1).ok();
        if let (Some(a), Some(b), Some(bv)) = (field("A"), field("B"), field("b")) {
            if let (Some(a), Some(b), Some(bv)) = (a.as_mat(), b.as_mat(), bv.as_vec()) {
                let mut next = a.mul_vec(g.x(n - 1));
                for ((v, w), c) in next.iter_mut().zip(b.mul_vec(g.u(n - 1))).zip(bv) {
                    *v += w + c;
                }
                let o = q.y_off + q.nu;
                g.y[o..o + q.nx].copy_from_slice(&next);
            }
        }
    }
    let boxes = box_rows(qp);
    let d = qp.ineq_rhs();
    let fixed: Vec<usize> = (0..ly.ny)
        .filter(|&j| matches!(boxes[j], Some((lo, up)) if d[lo] == -d[up]))
        .collect();
    cancel_stationarity(qp, &mut g, &boxes, &fixed);
    g
}

/// Rows `(lower, upper)` of the two-sided box bound on each variable.
fn box_rows<Q: QpStructure>(qp: &Q) -> Vec<Option<(usize, usize)>> {
    let ly = qp.layout();
    let mask = qp.mask();
    let mut e = vec![0.0; ly.ny];
    let mut rows = vec![None; ly.ny];
    let mut owners = vec![0usize; ly.nc];
    for j in 0..ly.ny {
        e[j] = 1.0;
        let col = qp.ineq_mul(&e);
        e[j] = 0.0;
        for (k, v) in col.iter().enumerate() {
            if *v != 0.0 {
                owners[k] += 1;
            }
        }
        let lo = (0..ly.nc).find(|&k| col[k] == 1.0 && mask[k] != 0.0);
        let up = (0..ly.nc).find(|&k| col[k] == -1.0 && mask[k] != 0.0);
        if let (Some(lo), Some(up)) = (lo, up) {
            rows[j] = Some((lo, up));
        }
    }
    rows.into_iter()
        .map(|r| r.filter(|&(lo, up)| owners[lo] == 1 && owners[up] == 1))
        .collect()
}

/// Sets the box multipliers of `vars` so that their stationarity rows vanish.
fn cancel_stationarity<Q: QpStructure>(qp: &Q, g: &mut QpSolution, boxes: &[Option<(usize, usize)>], vars: &[usize]) {
    let rows: Vec<(usize, usize, usize)> =
        vars.iter().filter_map(|&j| boxes[j].map(|(lo, up)| (j, lo, up))).collect();
    for &(_, lo, up) in &rows {
        g.lam[lo] = 0.0;
        g.lam[up] = 0.0;
    }
    let r = mpcqp::qp_data::residual_vec(qp, &g.to_kkt(), &qp.mask());
    for &(j, lo, up) in &rows {
        g.lam[lo] = r.y[j].max(0.0);
        g.lam[up] = (-r.y[j]).max(0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopStep {
    /// Plant state at which the QP was solved.
    pub x: Vec<f64>,
    /// Applied input.
    pub u: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
    /// Iterations of a cold-started solve of the same QP, when requested.
    pub cold_iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoop {
    pub steps: Vec<ClosedLoopStep>,
    pub final_state: Vec<f64>,
}

impl ClosedLoop {
    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }
}

/// Receding-horizon simulation on the exact discrete plant. The previous
/// solution, shifted by one stage, is the guess for the next solve whenever
/// `arg.warm_start` asks for one. With `compare_cold` every QP is also solved
/// from a cold start.
pub fn run_closed_loop(
    cfg: &MassSpringConfig,
    steps: usize,
    arg: &IpmArg,
    compare_cold: bool,
) -> Result<ClosedLoop, RunError> {
    let mut qp = gen_mass_spring(cfg)?;
    let (a, b) = plant(cfg);
    let mut x = cfg.initial_state();
    let mut shifted: Option<QpSolution> = None;
    let cold_arg = arg.clone().with_warm_start(WarmStart::None);
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        set_initial_state(&mut qp, &x);
        let guess = shifted.as_ref().map(|s| warm_guess(&qp, s));
        let rep = solver::solve_ocp_qp(&qp, arg, guess.as_ref());
        if rep.status() != Status::Success {
            return Err(RunError::StepFailed { step, status: rep.status() });
        }
        let cold_iterations = compare_cold.then(|| solver::solve_ocp_qp(&qp, &cold_arg, None).stats.iterations);
        let u = rep.solution.u(0).to_vec();
        out.push(ClosedLoopStep { x: x.clone(), u: u.clone(), iterations: rep.stats.iterations, status: rep.status(), cold_iterations });
        x = step_plant(&a, &b, &x, &u);
        shifted = Some(shift_solution(&rep.solution));
    }
    Ok(ClosedLoop { steps: out, final_state: x })
}

fn step_plant(a: &Mat, b: &Mat, x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut next = a.mul_vec(x);
    for (n, v) in next.iter_mut().zip(b.mul_vec(u)) {
        *n += v;
    }
    next
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub masses: usize,
    pub horizon: usize,
    pub mode: Mode,
    pub path: SolvePath,
    pub median_seconds: f64,
    pub flops: u64,
    pub iterations: usize,
}

/// Iteration count of the scaling protocol.
pub const SCALING_ITERATIONS: usize = 10;

/// Times mass-spring solves with exactly [`SCALING_ITERATIONS`] iterations
/// (the tolerance is set out of reach) for every combination of the lists.
pub fn run_scaling(
    masses: &[usize],
    horizons: &[usize],
    modes: &[Mode],
    paths: &[SolvePath],
    reps: usize,
) -> Result<Vec<ScalingRow>, RunError> {
    let mut rows = Vec::new();
    for &m in masses {
        for &n in horizons {
            let qp = gen_mass_spring(&MassSpringConfig::new(m, n))?;
            for &mode in modes {
                let arg = IpmArg::new(mode).with_tol(1e-300).with_iter_max(SCALING_ITERATIONS);
                for &path in paths {
                    let mut times = Vec::with_capacity(reps.max(1));
                    let mut counted = 0;
                    let mut iterations = 0;
                    for _ in 0..reps.max(1) {
                        let start = Instant::now();
                        let (rep, f) = flops::measure(|| solve_ocp_path(&qp, &arg, path, None));
                        times.push(start.elapsed().as_secs_f64());
                        counted = f;
                        iterations = rep?.stats.iterations;
                    }
                    times.sort_by(f64::total_cmp);
                    let median_seconds = times[times.len() / 2];
                    rows.push(ScalingRow { masses: m, horizon: n, mode, path, median_seconds, flops: counted, iterations });
                }
            }
        }
    }
    Ok(rows)
}

/// Tab-separated table with a header row.
pub fn scaling_table(rows: &[ScalingRow]) -> String {
    let mut out = String::from("M\tN\tmode\tpath\tmedian_s\tflops\titerations\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6e}\t{}\t{}",
            r.masses, r.horizon, r.mode, r.path, r.median_seconds, r.flops, r.iterations
        );
    }
    out
}
