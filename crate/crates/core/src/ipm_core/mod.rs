//! Building blocks of the primal-dual interior point method that do not depend
//! on the QP structure: duality measure, step length, Mehrotra centering and
//! corrector acceptance, iterate updates in the delta and absolute
//! formulations, termination tests, iterative refinement and the mode presets.

use std::fmt;
use std::str::FromStr;

use crate::qp_data::{KktVec, QpResiduals};

/// Fraction of the step to the boundary that is actually taken.
pub const FRACTION_TO_BOUNDARY: f64 = 0.995;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Absolute formulation, residuals computed only on exit.
    SpeedAbs,
    /// Delta formulation, residual-based exit, no refinement.
    Speed,
    /// Delta formulation with refinement and QR fallback on inaccuracy.
    Balance,
    /// Delta formulation, QR-based factorizations always, more refinement.
    Robust,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::SpeedAbs, Mode::Speed, Mode::Balance, Mode::Robust];

    pub fn name(self) -> &'static str {
        match self {
            Mode::SpeedAbs => "speed_abs",
            Mode::Speed => "speed",
            Mode::Balance => "balance",
            Mode::Robust => "robust",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown mode `{}`", s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarmStart {
    None,
    /// Reuse the primal guess; multipliers and slacks from the cold-start rule.
    Primal,
    /// Reuse the full primal-dual guess (multipliers and slacks clipped to stay positive).
    PrimalDual,
}

/// Algorithmic parameters of the interior point method.
#[derive(Clone, Debug, PartialEq)]
pub struct IpmArg {
    pub mode: Mode,
    pub iter_max: usize,
    pub alpha_min: f64,
    pub mu0: f64,
    /// Lower clip for the cold-start inequality slacks.
    pub t0: f64,
    pub tol_stat: f64,
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub tol_comp: f64,
    pub reg_prim: f64,
    pub reg_dual: f64,
    /// Floors of `λ` and `t` after each step. The solver lowers a floor where
    /// the clipped pair's product would exceed a small fraction of `tol_comp`.
    pub lam_min: f64,
    pub t_min: f64,
    pub warm_start: WarmStart,
    /// Lower clip of the slacks and multipliers taken from a primal-dual guess,
    /// scaled by the guess's KKT residual (capped at 1) and floored at
    /// `lam_min` and `t_min`.
    pub warm_start_clip: f64,
    pub pred_corr: bool,
    pub cond_pred_corr: bool,
    /// Ratio `μ_pcc / μ_aff` above which the corrector is dropped.
    pub corr_threshold: f64,
    pub itref_corr_max: usize,
    pub itref_pred_max: usize,
    /// Refinement stops once the Newton-system residual falls below this
    /// fraction of the right-hand side norm.
    pub itref_stop_ratio: f64,
    pub use_qr_fallback: bool,
    pub use_qr_always: bool,
    /// Balance mode: relative Newton-system residual after refinement above
    /// which the factorization is redone with the QR-based algorithm.
    pub qr_trigger_ratio: f64,
    pub comp_res_pred: bool,
    /// Absolute (rather than delta) formulation of the Newton system.
    pub abs_form: bool,
}

impl IpmArg {
    pub fn new(mode: Mode) -> Self {
        mode_preset(mode)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_stat = tol;
        self.tol_eq = tol;
        self.tol_ineq = tol;
        self.tol_comp = tol;
        self
    }

    pub fn with_iter_max(mut self, iter_max: usize) -> Self {
        self.iter_max = iter_max;
        self
    }

    pub fn with_warm_start(mut self, warm_start: WarmStart) -> Self {
        self.warm_start = warm_start;
        self
    }

    /// Checks the documented invariants on the parameters.
    pub fn check(&self) -> Result<(), String> {
        let tols = [self.tol_stat, self.tol_eq, self.tol_ineq, self.tol_comp];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err("tolerances must be positive".into());
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return Err("alpha_min must lie in (0, 1)".into());
        }
        if !(self.lam_min >= 0.0 && self.t_min >= 0.0) {
            return Err("lam_min and t_min must be nonnegative".into());
        }
        if !(self.mu0 > 0.0 && self.t0 > 0.0) {
            return Err("mu0 and t0 must be positive".into());
        }
        Ok(())
    }
}

impl Default for IpmArg {
    fn default() -> Self {
        mode_preset(Mode::Balance)
    }
}

/// Parameter set selected by `mode`.
pub fn mode_preset(mode: Mode) -> IpmArg {
    let base = IpmArg {
        mode,
        iter_max: 50,
        alpha_min: 1e-8,
        mu0: 1.0,
        t0: 1.0,
        tol_stat: 1e-8,
        tol_eq: 1e-8,
        tol_ineq: 1e-8,
        tol_comp: 1e-8,
        reg_prim: 1e-15,
        reg_dual: 1e-15,
        lam_min: 1e-16,
        t_min: 1e-16,
        warm_start: WarmStart::None,
        warm_start_clip: 1e-3,
        pred_corr: true,
        cond_pred_corr: true,
        corr_threshold: 1.5,
        itref_corr_max: 0,
        itref_pred_max: 0,
        itref_stop_ratio: 1e-14,
        use_qr_fallback: false,
        use_qr_always: false,
        qr_trigger_ratio: 1e-10,
        comp_res_pred: true,
        abs_form: false,
    };
    match mode {
        Mode::SpeedAbs => IpmArg { comp_res_pred: false, abs_form: true, ..base },
        Mode::Speed => base,
        Mode::Balance => IpmArg {
            lam_min: 1e-10,
            t_min: 1e-10,
            itref_corr_max: 2,
            use_qr_fallback: true,
            ..base
        },
        Mode::Robust => IpmArg {
            lam_min: 1e-10,
            t_min: 1e-10,
            itref_corr_max: 4,
            itref_pred_max: 2,
            use_qr_fallback: true,
            use_qr_always: true,
            ..base
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Success,
    MaxIter,
    MinStep,
    NaNDetected,
    Failure,
}

impl Status {
    /// Process exit code used by the command-line tools.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::MaxIter => 1,
            Status::MinStep => 2,
            Status::NaNDetected => 3,
            Status::Failure => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Success => "Success",
            Status::MaxIter => "MaxIter",
            Status::MinStep => "MinStep",
            Status::NaNDetected => "NaNDetected",
            Status::Failure => "Failure",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the iteration trace.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IterStats {
    pub mu: f64,
    pub sigma: f64,
    pub alpha_aff: f64,
    pub alpha: f64,
    /// Residual norms at the start of the iteration; NaN when not computed.
    pub res_g: f64,
    pub res_b: f64,
    pub res_d: f64,
    pub res_m: f64,
    pub corrector: bool,
    pub qr_used: bool,
    pub itref_steps: usize,
}

/// Mutable scalar state of the iteration.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IpmState {
    pub mu: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Relaxation target `σ μ` of the current iteration.
    pub tau: f64,
    pub trace: Vec<IterStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub status: Status,
    pub res_g: f64,
    pub res_b: f64,
    pub res_d: f64,
    pub res_m: f64,
    pub mu: f64,
    pub trace: Vec<IterStats>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityMeasure {
    pub mu: f64,
    /// No unmasked inequality: the problem is equality constrained only.
    pub empty: bool,
}

/// `μ = λᵀt / n_c` over the rows with nonzero mask.
pub fn duality_measure(lam: &[f64], t: &[f64], mask: &[f64]) -> DualityMeasure {
    debug_assert!(lam.len() == t.len() && t.len() == mask.len());
    let mut s = 0.0;
    let mut n = 0usize;
    for k in 0..lam.len() {
        if mask[k] != 0.0 {
            s += lam[k] * t[k];
            n += 1;
        }
    }
    if n == 0 {
        DualityMeasure { mu: 0.0, empty: true }
    } else {
        DualityMeasure { mu: s / n as f64, empty: false }
    }
}

/// Largest `α ≤ 1` keeping `λ + αΔλ ≥ 0` and `t + αΔt ≥ 0`.
pub fn max_step(lam: &[f64], t: &[f64], dlam: &[f64], dt: &[f64]) -> f64 {
    let mut alpha = 1.0f64;
    for (v, dv) in lam.iter().zip(dlam).chain(t.iter().zip(dt)) {
        if *dv < 0.0 {
            alpha = alpha.min(-v / dv);
        }
    }
    alpha.max(0.0)
}

/// Mehrotra centering `σ = (μ_aff / μ)³` clipped to `[0, 1]`.
pub fn centering(mu: f64, mu_aff: f64) -> f64 {
    if !(mu > 0.0) {
        return 0.0;
    }
    (mu_aff / mu).powi(3).clamp(0.0, 1.0)
}

/// Whether the corrected step is kept: `μ_pcc ≤ threshold · μ_aff`.
pub fn corrector_acceptance(mu_pcc: f64, mu_aff: f64, threshold: f64) -> bool {
    mu_pcc <= threshold * mu_aff
}

/// `it + α Δ`, with unmasked `λ` and `t` clipped below at `lam_min`, `t_min`.
/// A floor is lowered where it would lift the product `λ_k t_k` above
/// `prod_cap`, so that clipping never blocks the complementarity exit test.
pub fn update_iterate_delta(
    it: &KktVec,
    dir: &KktVec,
    alpha: f64,
    lam_min: f64,
    t_min: f64,
    prod_cap: f64,
    mask: &[f64],
) -> KktVec {
    let mut next = it.clone();
    next.axpy(alpha, dir);
    for k in 0..mask.len() {
        if mask[k] != 0.0 {
            let t_floor = t_min.min(prod_cap / next.lam[k].max(f64::MIN_POSITIVE));
            next.t[k] = next.t[k].max(t_floor);
            let lam_floor = lam_min.min(prod_cap / next.t[k]);
            next.lam[k] = next.lam[k].max(lam_floor);
        }
    }
    next
}

/// Step implied by the solution of the absolute formulation.
pub fn recover_step_absolute(it_k: &KktVec, it_aff: &KktVec) -> KktVec {
    it_aff.sub(it_k)
}

/// Exit test after an iteration. `res` may be `None` when residuals are not
/// computed during the iterations (absolute formulation); then only the
/// duality measure `mu` decides success. Otherwise the largest
/// complementarity product must also be below `tol_comp`, not just its mean.
pub fn check_termination(res: Option<&QpResiduals>, mu: f64, alpha_last: f64, iter: usize, arg: &IpmArg) -> Option<Status> {
    let finite = res.map_or(true, |r| r.is_finite()) && mu.is_finite() && alpha_last.is_finite();
    if !finite {
        return Some(Status::NaNDetected);
    }
    let converged = mu <= arg.tol_comp
        && match res {
            Some(r) if arg.mode != Mode::SpeedAbs => {
                r.res_g <= arg.tol_stat && r.res_b <= arg.tol_eq && r.res_d <= arg.tol_ineq && r.res_m <= arg.tol_comp
            }
            _ => true,
        };
    if converged {
        Some(Status::Success)
    } else if iter >= arg.iter_max {
        Some(Status::MaxIter)
    } else if alpha_last < arg.alpha_min {
        Some(Status::MinStep)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub delta: KktVec,
    /// `‖K Δ + r‖_∞` of the returned step.
    pub res_norm: f64,
    /// Residual norm of the input step.
    pub res_norm0: f64,
    pub steps: usize,
    pub diverged: bool,
}

/// Iterative refinement of `Δ0`, where `solve(r)` returns `Δ` with `K̂ Δ = −r`
/// for a factorization `K̂ ≈ K` and `apply(Δ) = K Δ`. Each correction solves
/// the same factorized system with the current residual `K Δ + r`. Stops after
/// `max_steps` corrections, once the residual is at most `stop_ratio · ‖r‖`, or
/// when the residual grows on two consecutive corrections. The best step seen
/// is returned.
pub fn iterative_refinement<S, A>(
    mut solve: S,
    mut apply: A,
    rhs: &KktVec,
    delta0: KktVec,
    max_steps: usize,
    stop_ratio: f64,
) -> Refinement
where
    S: FnMut(&KktVec) -> Option<KktVec>,
    A: FnMut(&KktVec) -> KktVec,
{
    let residual = |apply: &mut A, d: &KktVec| {
        let mut e = apply(d);
        e.axpy(1.0, rhs);
        e
    };
    let target = stop_ratio * rhs.norm_inf();
    let mut e = residual(&mut apply, &delta0);
    let res0 = e.norm_inf();
    let mut best = (delta0.clone(), res0);
    let mut cur = delta0;
    let mut cur_norm = res0;
    let mut growth = 0;
    let mut steps = 0;
    let mut diverged = false;
    while steps < max_steps && cur_norm > target && cur_norm.is_finite() {
        let Some(corr) = solve(&e) else { break };
        cur.axpy(1.0, &corr);
        steps += 1;
        e = residual(&mut apply, &cur);
        let n = e.norm_inf();
        if !(n < cur_norm) {
            growth += 1;
            if growth >= 2 || !n.is_finite() {
                diverged = true;
                break;
            }
        } else {
            growth = 0;
        }
        cur_norm = n;
        if n < best.1 {
            best = (cur.clone(), n);
        }
    }
    Refinement { delta: best.0, res_norm: best.1, res_norm0: res0, steps, diverged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-14 * (1.0 + b.abs())
    }

    #[test]
    fn duality_measure_examples() {
        assert!(approx(duality_measure(&[1.0, 2.0], &[2.0, 1.0], &[1.0, 1.0]).mu, 2.0));
        assert_eq!(duality_measure(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).mu, 0.0);
        assert!(approx(duality_measure(&[1.0, 5.0], &[1.0, 1.0], &[1.0, 0.0]).mu, 1.0));
        let e = duality_measure(&[1.0], &[1.0], &[0.0]);
        assert!(e.empty && e.mu == 0.0);
    }

    #[test]
    fn max_step_examples() {
        assert_eq!(max_step(&[1.0], &[1.0], &[0.0], &[0.0]), 1.0);
        assert!(approx(max_step(&[1.0], &[1.0], &[-2.0], &[0.0]), 0.5));
        assert!(approx(max_step(&[1.0, 1.0], &[1.0, 1.0], &[-4.0, -2.0], &[0.0, 0.0]), 0.25));
    }

    #[test]
    fn centering_examples() {
        assert!(approx(centering(1.0, 0.5), 0.125));
        assert_eq!(centering(1.0, 0.0), 0.0);
        assert_eq!(centering(2.0, 2.0), 1.0);
        assert_eq!(centering(1.0, 3.0), 1.0);
    }

    #[test]
    fn corrector_acceptance_examples() {
        assert!(corrector_acceptance(1.0, 1.0, 1.5));
        assert!(!corrector_acceptance(2.0, 1.0, 1.5));
        assert!(corrector_acceptance(0.0, 0.0, 1.5));
    }

    #[test]
    fn update_examples() {
        let it = KktVec { y: vec![1.0], pi: vec![], lam: vec![1.0], t: vec![2.0] };
        let zero = KktVec::zeros_like(&it);
        assert_eq!(update_iterate_delta(&it, &zero, 1.0, 1e-12, 1e-12, 1.0, &[1.0]), it);
        let d = KktVec { y: vec![0.0], pi: vec![], lam: vec![-1.0], t: vec![0.0] };
        let n = update_iterate_delta(&it, &d, 0.9, 1e-12, 1e-12, 1.0, &[1.0]);
        assert!((n.lam[0] - 0.1).abs() < 1e-15);
        let d = KktVec { y: vec![0.0], pi: vec![], lam: vec![-(1.0 - 1e-13)], t: vec![0.0] };
        let n = update_iterate_delta(&it, &d, 1.0, 1e-12, 1e-12, 1.0, &[1.0]);
        assert_eq!(n.lam[0], 1e-12);
        let wide = KktVec { y: vec![0.0], pi: vec![], lam: vec![1e-20], t: vec![1e6] };
        let n = update_iterate_delta(&wide, &KktVec::zeros_like(&wide), 1.0, 1e-10, 1e-10, 1e-7, &[1.0]);
        assert!((n.lam[0] - 1e-13).abs() < 1e-27);
        assert_eq!(n.t[0], 1e6);
    }

    #[test]
    fn recover_absolute_examples() {
        let a = KktVec { y: vec![5.0, 1.0 + 1e-16], pi: vec![], lam: vec![], t: vec![] };
        let b = KktVec { y: vec![3.0, 1.0], pi: vec![], lam: vec![], t: vec![] };
        let d = recover_step_absolute(&b, &a);
        assert_eq!(d.y, vec![2.0, 0.0]);
        assert_eq!(recover_step_absolute(&a, &a).norm_inf(), 0.0);
    }

    fn res(v: f64) -> QpResiduals {
        QpResiduals::from_kkt(KktVec { y: vec![v], pi: vec![v], lam: vec![v], t: vec![v] }, v)
    }

    #[test]
    fn termination_examples() {
        let arg = IpmArg::new(Mode::Speed).with_tol(1e-6);
        assert_eq!(check_termination(Some(&res(1e-9)), 1e-9, 1.0, 3, &arg), Some(Status::Success));
        assert_eq!(check_termination(Some(&res(1.0)), 1.0, 1.0, arg.iter_max, &arg), Some(Status::MaxIter));
        assert_eq!(check_termination(Some(&res(1.0)), 1.0, 1e-12, 3, &arg), Some(Status::MinStep));
        assert_eq!(check_termination(Some(&res(f64::NAN)), 1.0, 1.0, 3, &arg), Some(Status::NaNDetected));
        assert_eq!(check_termination(Some(&res(1.0)), 1.0, 1.0, 3, &arg), None);
        let lopsided = QpResiduals::from_kkt(KktVec { y: vec![0.0], pi: vec![], lam: vec![0.0], t: vec![1e-4] }, 1e-9);
        assert_eq!(check_termination(Some(&lopsided), 1e-9, 1.0, 3, &arg), None);
        let abs = IpmArg::new(Mode::SpeedAbs).with_tol(1e-6);
        assert_eq!(check_termination(None, 1e-9, 1.0, 3, &abs), Some(Status::Success));
    }

    #[test]
    fn presets() {
        assert!(!mode_preset(Mode::SpeedAbs).comp_res_pred);
        assert!(mode_preset(Mode::SpeedAbs).abs_form);
        assert!(mode_preset(Mode::Robust).use_qr_always);
        assert_eq!(mode_preset(Mode::Speed).itref_corr_max, 0);
        assert!(!mode_preset(Mode::Speed).use_qr_fallback);
        assert!(mode_preset(Mode::Balance).use_qr_fallback && mode_preset(Mode::Balance).itref_corr_max > 0);
        for m in Mode::ALL {
            mode_preset(m).check().unwrap();
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }

    fn kv(y: Vec<f64>) -> KktVec {
        KktVec { y, pi: vec![], lam: vec![], t: vec![] }
    }

    fn solve2(m: [[f64; 2]; 2], r: &[f64]) -> Vec<f64> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        vec![-(m[1][1] * r[0] - m[0][1] * r[1]) / det, -(-m[1][0] * r[0] + m[0][0] * r[1]) / det]
    }

    fn apply2(m: [[f64; 2]; 2], d: &[f64]) -> Vec<f64> {
        vec![m[0][0] * d[0] + m[0][1] * d[1], m[1][0] * d[0] + m[1][1] * d[1]]
    }

    #[test]
    fn refinement_exact_factor_no_corrections() {
        let m = [[4.0, 1.0], [1.0, 3.0]];
        let rhs = kv(vec![1.0, 2.0]);
        let d0 = kv(solve2(m, &rhs.y));
        let r = iterative_refinement(|e| Some(kv(solve2(m, &e.y))), |d| kv(apply2(m, &d.y)), &rhs, d0, 2, 1e-14);
        assert!(r.res_norm <= 1e-15);
        assert!(r.steps <= 1);
    }

    #[test]
    fn refinement_contracts_with_perturbed_factor() {
        let m = [[4.0, 1.0], [1.0, 3.0]];
        let delta = 1e-4;
        let mp = [[4.0 + delta, 1.0], [1.0, 3.0 + delta]];
        let rhs = kv(vec![1.0, -2.0]);
        let mut norms = Vec::new();
        let mut d = kv(solve2(mp, &rhs.y));
        for _ in 0..3 {
            let r = iterative_refinement(|e| Some(kv(solve2(mp, &e.y))), |d| kv(apply2(m, &d.y)), &rhs, d.clone(), 1, 0.0);
            norms.push(r.res_norm0);
            d = r.delta;
        }
        // contraction factor about δ‖M⁻¹‖ (< 1e-4 here)
        for w in norms.windows(2) {
            assert!(w[1] < w[0] * 1e-3, "{:?}", norms);
        }
    }

    #[test]
    fn refinement_zero_rhs() {
        let m = [[4.0, 1.0], [1.0, 3.0]];
        let rhs = kv(vec![0.0, 0.0]);
        let r = iterative_refinement(|e| Some(kv(solve2(m, &e.y))), |d| kv(apply2(m, &d.y)), &rhs, kv(vec![0.0, 0.0]), 3, 1e-14);
        assert_eq!(r.delta.y, vec![0.0, 0.0]);
    }
}
