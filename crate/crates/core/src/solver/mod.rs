//! Interior point drivers for the three QP types.
//!
//! One generic Mehrotra predictor-corrector loop runs over a small backend
//! trait (factor at the current iterate, solve with the factorization); the
//! dense, OCP and tree solvers differ only in the backend.

use crate::ipm_core::{
    centering, check_termination, corrector_acceptance, duality_measure, iterative_refinement,
    recover_step_absolute, update_iterate_delta, IpmArg, IterStats, SolverStats, Status, WarmStart,
    FRACTION_TO_BOUNDARY,
};
use crate::kkt_dense::{self, DenseKktArg, DenseKktFactor, KktError};
use crate::kkt_ocp::{self, RiccatiArg, RiccatiFactor, RiccatiVariant};
use crate::kkt_tree;
use crate::qp_data::{
    compute_residuals, kkt_matrix_apply, residual_vec, DenseQp, KktVec, OcpQp, QpResiduals, QpSolution,
    QpStructure, TreeOcpQp, Violation,
};


/// Largest `λ t` a floor may create, as a fraction of `tol_comp`.
const FLOOR_PRODUCT_RATIO: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solution: QpSolution,
    pub stats: SolverStats,
    /// Residuals re-evaluated at the returned solution.
    pub residuals: QpResiduals,
}

impl SolveReport {
    pub fn status(&self) -> Status {
        self.stats.status
    }
}

/// Factorization of the Newton system at an iterate, for one QP type.
trait KktBackend<Q: QpStructure> {
    /// Factors at `(lam, t)`; returns whether a QR-based algorithm was used.
    fn factor(&mut self, qp: &Q, lam: &[f64], t: &[f64], qr: bool) -> Result<bool, KktError>;
    /// `Δ` with `K Δ = −r` for the last factorization.
    fn solve(&self, qp: &Q, r: &KktVec) -> Result<KktVec, KktError>;
}

struct DenseBackend {
    arg: DenseKktArg,
    f: Option<DenseKktFactor>,
}

impl KktBackend<DenseQp> for DenseBackend {
    fn factor(&mut self, qp: &DenseQp, lam: &[f64], t: &[f64], qr: bool) -> Result<bool, KktError> {
        let arg = DenseKktArg { use_qr: qr, ..self.arg };
        let f = kkt_dense::factor(qp, lam, t, &arg)?;
        let used = f.qr;
        self.f = Some(f);
        Ok(used)
    }

    fn solve(&self, qp: &DenseQp, r: &KktVec) -> Result<KktVec, KktError> {
        kkt_dense::solve(self.f.as_ref().expect("factored"), qp, r)
    }
}

struct RiccatiBackend {
    arg: RiccatiArg,
    f: Option<RiccatiFactor>,
}

impl RiccatiBackend {
    fn new(arg: &IpmArg) -> Self {
        let arg = RiccatiArg {
            variant: RiccatiVariant::SquareRoot,
            reg_prim: arg.reg_prim,
            use_qr: false,
            qr_fallback: arg.use_qr_fallback,
        };
        Self { arg, f: None }
    }

    fn store(&mut self, f: RiccatiFactor, qr: bool) -> bool {
        let used = qr || !f.qr_stages().is_empty();
        self.f = Some(f);
        used
    }
}

impl KktBackend<OcpQp> for RiccatiBackend {
    fn factor(&mut self, qp: &OcpQp, lam: &[f64], t: &[f64], qr: bool) -> Result<bool, KktError> {
        let f = kkt_ocp::riccati_factor(qp, lam, t, &RiccatiArg { use_qr: qr, ..self.arg })?;
        Ok(self.store(f, qr))
    }

    fn solve(&self, qp: &OcpQp, r: &KktVec) -> Result<KktVec, KktError> {
        kkt_ocp::riccati_solve(self.f.as_ref().expect("factored"), qp, r)
    }
}

impl KktBackend<TreeOcpQp> for RiccatiBackend {
    fn factor(&mut self, qp: &TreeOcpQp, lam: &[f64], t: &[f64], qr: bool) -> Result<bool, KktError> {
        let f = kkt_tree::tree_riccati_factor(qp, lam, t, &RiccatiArg { use_qr: qr, ..self.arg })?;
        Ok(self.store(f, qr))
    }

    fn solve(&self, qp: &TreeOcpQp, r: &KktVec) -> Result<KktVec, KktError> {
        kkt_tree::tree_riccati_solve(self.f.as_ref().expect("factored"), qp, r)
    }
}

pub fn solve_dense_qp(qp: &DenseQp, arg: &IpmArg, guess: Option<&QpSolution>) -> SolveReport {
    let kkt = DenseKktArg { reg_prim: arg.reg_prim, reg_dual: arg.reg_dual, ..DenseKktArg::default() };
    let mut be = DenseBackend { arg: kkt, f: None };
    run(qp, &qp.validate(), &mut be, arg, guess)
}

pub fn solve_ocp_qp(qp: &OcpQp, arg: &IpmArg, guess: Option<&QpSolution>) -> SolveReport {
    run(qp, &qp.validate(), &mut RiccatiBackend::new(arg), arg, guess)
}

pub fn solve_tree_ocp_qp(qp: &TreeOcpQp, arg: &IpmArg, guess: Option<&QpSolution>) -> SolveReport {
    run(qp, &qp.validate(), &mut RiccatiBackend::new(arg), arg, guess)
}

/// Starting point. Primal variables are zero or taken from the guess, slacks
/// come from evaluating the constraints; multipliers follow `λ t = mu0` on a
/// cold start and are copied from the guess on a primal-dual warm start.
fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn initial_iterate<Q: QpStructure>(qp: &Q, mask: &[f64], arg: &IpmArg, guess: Option<&QpSolution>) -> KktVec {
    let ly = qp.layout();
    let mut it = KktVec::zeros(ly.ny, ly.npi, ly.nc);
    let guess = guess.filter(|g| {
        arg.warm_start != WarmStart::None && g.y.len() == ly.ny && g.pi.len() == ly.npi && g.lam.len() == ly.nc
    });
    let dual = guess.is_some() && arg.warm_start == WarmStart::PrimalDual;
    if let Some(g) = guess {
        it.y.copy_from_slice(&g.y);
        if dual {
            it.pi.copy_from_slice(&g.pi);
        }
    }
    let cy = qp.ineq_mul(&it.y);
    let d = qp.ineq_rhs();
    let clip = match (dual, guess) {
        (true, Some(g)) => {
            let slack: Vec<f64> = cy.iter().zip(&d).map(|(c, d)| c - d).collect();
            let at = KktVec { y: g.y.clone(), pi: g.pi.clone(), lam: g.lam.clone(), t: slack.clone() };
            let r = residual_vec(qp, &at, mask);
            let infeas = slack.iter().zip(mask).filter(|(_, m)| **m != 0.0).map(|(s, _)| (-s).max(0.0)).fold(0.0, f64::max);
            let dist = norm_inf(&r.y).max(norm_inf(&r.pi)).max(infeas);
            (arg.warm_start_clip * dist.min(1.0)).max(arg.lam_min).max(arg.t_min)
        }
        _ => 0.0,
    };
    for k in 0..ly.nc {
        if mask[k] == 0.0 {
            continue;
        }
        let slack = cy[k] - d[k];
        if dual {
            it.t[k] = slack.max(clip);
            it.lam[k] = guess.unwrap().lam[k].max(clip);
        } else {
            it.t[k] = slack.max(arg.t0);
            it.lam[k] = arg.mu0 / it.t[k];
        }
    }
    it
}

/// Right-hand side of the Newton system. In the delta form it is the
/// residual with the relaxed complementarity `λ∘t − σμ + corr`; in the
/// absolute form it is chosen so the solution is the next full-step iterate.
fn newton_rhs<Q: QpStructure>(
    qp: &Q,
    it: &KktVec,
    res: Option<&KktVec>,
    mask: &[f64],
    tau: f64,
    corr: Option<(&[f64], &[f64])>,
) -> KktVec {
    let nc = mask.len();
    let mut r = match res {
        Some(r) => r.clone(),
        None => {
            let mut d = qp.ineq_rhs();
            for k in 0..nc {
                if mask[k] == 0.0 {
                    d[k] = -it.t[k];
                }
            }
            KktVec { y: qp.gradient(), pi: qp.eq_rhs(), lam: d, t: vec![0.0; nc] }
        }
    };
    for k in 0..nc {
        if mask[k] == 0.0 {
            if res.is_none() {
                r.t[k] = -it.lam[k];
            }
            continue;
        }
        let c = corr.map_or(0.0, |(dl, dt)| dl[k] * dt[k]);
        let lt = it.lam[k] * it.t[k];
        r.t[k] = if res.is_some() { lt - tau + c } else { -lt - tau + c };
    }
    r
}

/// Largest step keeping `λ` and `t` nonnegative, not capped at one.
fn step_to_boundary(it: &KktVec, dir: &KktVec) -> f64 {
    let mut alpha = f64::INFINITY;
    for (v, dv) in it.lam.iter().zip(&dir.lam).chain(it.t.iter().zip(&dir.t)) {
        if *dv < 0.0 {
            alpha = alpha.min(-v / dv);
        }
    }
    alpha.max(0.0)
}

fn trial_mu(it: &KktVec, dir: &KktVec, alpha: f64, mask: &[f64]) -> f64 {
    let lam: Vec<f64> = it.lam.iter().zip(&dir.lam).map(|(v, d)| v + alpha * d).collect();
    let t: Vec<f64> = it.t.iter().zip(&dir.t).map(|(v, d)| v + alpha * d).collect();
    duality_measure(&lam, &t, mask).mu
}

struct Direction {
    delta: KktVec,
    alpha_aff: f64,
    sigma: f64,
    corrector: bool,
    qr: bool,
    itref_steps: usize,
    /// Relative Newton-system residual of the final direction, when measured.
    rel_res: Option<f64>,
}

/// Factorization and predictor-corrector direction at `it`.
#[allow(clippy::too_many_arguments)]
fn direction<Q: QpStructure, B: KktBackend<Q>>(
    qp: &Q,
    be: &mut B,
    arg: &IpmArg,
    it: &KktVec,
    res: Option<&KktVec>,
    mask: &[f64],
    mu: f64,
    empty: bool,
    qr: bool,
) -> Result<Direction, KktError> {
    let qr = be.factor(qp, &it.lam, &it.t, qr)?;
    let be = &*be;
    let apply = |d: &KktVec| kkt_matrix_apply(qp, &it.lam, &it.t, mask, d);
    let mut itref_steps = 0;
    let mut rel_res = None;
    let mut solve = |rhs: &KktVec, refine: usize| -> Result<KktVec, KktError> {
        let sol = be.solve(qp, rhs)?;
        let sol = if refine > 0 {
            let r = iterative_refinement(|e| be.solve(qp, e).ok(), apply, rhs, sol, refine, arg.itref_stop_ratio);
            itref_steps += r.steps;
            rel_res = Some(r.res_norm / rhs.norm_inf().max(f64::MIN_POSITIVE));
            r.delta
        } else {
            sol
        };
        Ok(match res {
            Some(_) => sol,
            None => recover_step_absolute(it, &sol),
        })
    };

    let aff = solve(&newton_rhs(qp, it, res, mask, 0.0, None), arg.itref_pred_max)?;
    let alpha_aff = step_to_boundary(it, &aff).min(1.0);
    if empty {
        return Ok(Direction { delta: aff, alpha_aff, sigma: 0.0, corrector: false, qr, itref_steps, rel_res });
    }
    let mu_aff = trial_mu(it, &aff, alpha_aff, mask);
    let sigma = centering(mu, mu_aff);
    let tau = sigma * mu;
    let centered = |solve: &mut dyn FnMut(&KktVec, usize) -> Result<KktVec, KktError>| {
        solve(&newton_rhs(qp, it, res, mask, tau, None), arg.itref_corr_max)
    };
    let (delta, corrector) = if arg.pred_corr {
        let rhs = newton_rhs(qp, it, res, mask, tau, Some((&aff.lam, &aff.t)));
        let pc = solve(&rhs, arg.itref_corr_max)?;
        let keep = !arg.cond_pred_corr || {
            let a = step_to_boundary(it, &pc).min(1.0);
            corrector_acceptance(trial_mu(it, &pc, a, mask), mu_aff, arg.corr_threshold)
        };
        if keep {
            (pc, true)
        } else {
            (centered(&mut solve)?, false)
        }
    } else {
        (centered(&mut solve)?, false)
    };
    Ok(Direction { delta, alpha_aff, sigma, corrector, qr, itref_steps, rel_res })
}

fn failed_report<Q: QpStructure>(qp: &Q, status: Status) -> SolveReport {
    let solution = QpSolution::zeros(qp.layout());
    let residuals = compute_residuals(qp, &solution).expect("matching layout");
    let stats = SolverStats {
        iterations: 0,
        status,
        res_g: residuals.res_g,
        res_b: residuals.res_b,
        res_d: residuals.res_d,
        res_m: residuals.res_m,
        mu: residuals.mu,
        trace: Vec::new(),
    };
    SolveReport { solution, stats, residuals }
}

fn run<Q: QpStructure, B: KktBackend<Q>>(
    qp: &Q,
    violations: &[Violation],
    be: &mut B,
    arg: &IpmArg,
    guess: Option<&QpSolution>,
) -> SolveReport {
    if arg.check().is_err() || violations.iter().any(|v| v.kind.is_structural()) {
        return failed_report(qp, Status::Failure);
    }
    let mask = qp.mask();
    let mut it = initial_iterate(qp, &mask, arg, guess);
    let mut trace = Vec::new();
    let mut alpha_last = 1.0;
    let mut iter = 0;
    let status = loop {
        let dm = duality_measure(&it.lam, &it.t, &mask);
        let res = (!arg.abs_form || arg.comp_res_pred).then(|| residual_vec(qp, &it, &mask));
        let norms = res.as_ref().filter(|_| arg.comp_res_pred).map(|r| QpResiduals::from_kkt(r.clone(), dm.mu));
        if !it.is_finite() {
            break Status::NaNDetected;
        }
        // Without residuals, at least one step is needed before μ can decide,
        // and a step below `alpha_min` is final.
        if norms.is_none() && alpha_last < arg.alpha_min {
            break Status::MinStep;
        }
        if norms.is_some() || iter > 0 {
            if let Some(s) = check_termination(norms.as_ref(), dm.mu, alpha_last, iter, arg) {
                break s;
            }
        } else if iter >= arg.iter_max {
            break Status::MaxIter;
        }
        let rhs_res = if arg.abs_form { None } else { res.as_ref() };

        let mut qr = arg.use_qr_always;
        let dir = loop {
            match direction(qp, be, arg, &it, rhs_res, &mask, dm.mu, dm.empty, qr) {
                Ok(d) if arg.use_qr_fallback && !d.qr && d.rel_res.is_some_and(|r| !(r <= arg.qr_trigger_ratio)) => {
                    qr = true;
                }
                Err(KktError::FactorizationFailed { .. }) if arg.use_qr_fallback && !qr => qr = true,
                other => break other,
            }
        };
        let Ok(dir) = dir else { break Status::Failure };
        if !dir.delta.is_finite() {
            break Status::NaNDetected;
        }
        let alpha = (FRACTION_TO_BOUNDARY * step_to_boundary(&it, &dir.delta)).min(1.0);
        let nan = f64::NAN;
        let stat = |r: &QpResiduals| (r.res_g, r.res_b, r.res_d, r.res_m);
        let (res_g, res_b, res_d, res_m) = norms.as_ref().map_or((nan, nan, nan, nan), stat);
        trace.push(IterStats {
            mu: dm.mu,
            sigma: dir.sigma,
            alpha_aff: dir.alpha_aff,
            alpha,
            res_g,
            res_b,
            res_d,
            res_m,
            corrector: dir.corrector,
            qr_used: dir.qr,
            itref_steps: dir.itref_steps,
        });
        it = update_iterate_delta(&it, &dir.delta, alpha, arg.lam_min, arg.t_min, FLOOR_PRODUCT_RATIO * arg.tol_comp, &mask);
        alpha_last = alpha;
        iter += 1;
    };

    let solution = QpSolution::from_kkt(it, qp.layout()).expect("iterate matches layout");
    let residuals = compute_residuals(qp, &solution).expect("iterate matches layout");
    let status = if status == Status::Success && !residuals.is_finite() { Status::NaNDetected } else { status };
    let stats = SolverStats {
        iterations: iter,
        status,
        res_g: residuals.res_g,
        res_b: residuals.res_b,
        res_d: residuals.res_d,
        res_m: residuals.res_m,
        mu: residuals.mu,
        trace,
    };
    SolveReport { solution, stats, residuals }
}
