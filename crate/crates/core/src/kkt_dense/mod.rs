//! Newton system of the dense QP: elimination of inequalities and slacks,
//! then a Cholesky factorization of the reduced Hessian, with equality
//! constraints handled by the Schur-complement or the null-space method.

pub(crate) mod elim;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Mat};
use crate::qp_data::{self, DenseQp, KktVec, QpStructure};

pub(crate) use elim::StageWeights;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error("stage {stage}: inequality row {row} has a nonpositive multiplier or slack")]
    NonPositiveIterate { stage: usize, row: usize },
    #[error("stage {stage}: reduced slack diagonal {slack} is not positive")]
    SingularSlackBlock { stage: usize, slack: usize },
    #[error("factorization failed at stage {stage}: {source}")]
    FactorizationFailed {
        stage: usize,
        #[source]
        source: LinalgError,
    },
    #[error("right-hand side does not match the system dimensions")]
    DimensionMismatch,
}

impl KktError {
    pub(crate) fn factorization(stage: usize) -> impl FnOnce(LinalgError) -> KktError {
        move |source| KktError::FactorizationFailed { stage, source }
    }
}

/// Treatment of the equality constraints `A v = b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EqMethod {
    /// Factor `H̃`, then the Schur complement `A H̃⁻¹ Aᵀ`.
    #[default]
    Schur,
    /// Orthogonal basis of the null space of `A`, from a QR factorization of `Aᵀ`.
    NullSpace,
}

/// Options of the dense factorization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseKktArg {
    pub method: EqMethod,
    pub reg_prim: f64,
    pub reg_dual: f64,
    /// Replace Cholesky factorizations of normal-matrix forms by QR factorizations.
    pub use_qr: bool,
}

impl Default for DenseKktArg {
    fn default() -> Self {
        Self { method: EqMethod::Schur, reg_prim: 1e-15, reg_dual: 1e-15, use_qr: false }
    }
}

/// Relative pivot threshold of the semidefinite factorization of the data Hessian.
pub(crate) const SEMIDEF_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
enum EqFactor {
    None,
    Schur {
        /// Cholesky factor of `A H̃⁻¹ Aᵀ (+ reg_dual I)`.
        ls: Mat,
    },
    NullSpace {
        q1: Mat,
        q2: Mat,
        /// `Rᵀ` of `Aᵀ = Q1 R` (lower triangular).
        rt: Mat,
        /// Cholesky factor of `Q2ᵀ H̃ Q2`.
        lz: Mat,
        htil: Mat,
    },
}

/// Factorization of the dense Newton system at one iterate.
#[derive(Clone, Debug)]
pub struct DenseKktFactor {
    pub method: EqMethod,
    pub qr: bool,
    sw: StageWeights,
    /// Cholesky factor of `H̃` (unused by the null-space method with `ne > 0`).
    lh: Mat,
    eq: EqFactor,
}

/// Augmented Hessian `𝓗 + 𝓒ᵀT⁻¹Λ𝓒` and gradient `r_g − 𝓒ᵀ(T⁻¹Λ r_d − T⁻¹ r_m)` over
/// `y = (v, sl, su)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSystem {
    pub hess: Mat,
    pub grad: Vec<f64>,
}

/// Eliminates `Δλ` and `Δt` from the Newton system at `(lam, t)` with residual
/// right-hand side `res`.
pub fn eliminate_ineq(qp: &DenseQp, lam: &[f64], t: &[f64], res: &KktVec) -> Result<AugmentedSystem, KktError> {
    let st = &qp.stage;
    let mask = qp.mask();
    let ny = st.ny();
    let nc = st.nc();
    if lam.len() != nc || t.len() != nc || !res_shape_ok(qp, res) {
        return Err(KktError::DimensionMismatch);
    }
    let mut gamma = vec![0.0; nc];
    let mut rho = vec![0.0; nc];
    for k in 0..nc {
        if mask[k] != 0.0 {
            if !(lam[k] >= 0.0 && t[k] > 0.0) {
                return Err(KktError::NonPositiveIterate { stage: 0, row: k });
            }
            gamma[k] = lam[k] / t[k];
            rho[k] = (lam[k] * res.lam[k] - res.t[k]) / t[k];
        }
    }
    let mut hess = Mat::zeros(ny, ny);
    let mut e = vec![0.0; ny];
    for j in 0..ny {
        e[j] = 1.0;
        let mut col = vec![0.0; ny];
        st.hess_mul_add(&e, &mut col);
        let mut ce = vec![0.0; nc];
        st.ineq_mul(&e, &mut ce);
        let wc: Vec<f64> = ce.iter().zip(&gamma).map(|(c, g)| c * g).collect();
        st.ineq_tmul_add(&wc, &mut col);
        for i in 0..ny {
            hess[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    let mut grad = res.y.clone();
    let neg: Vec<f64> = rho.iter().map(|v| -v).collect();
    st.ineq_tmul_add(&neg, &mut grad);
    Ok(AugmentedSystem { hess, grad })
}

/// Block-eliminates the (diagonal) slack block of an augmented system over
/// `(v, sl, su)`, leaving a system over `v`.
pub fn eliminate_slacks(qp: &DenseQp, aug: &AugmentedSystem) -> Result<AugmentedSystem, KktError> {
    let nv = qp.dim.nv;
    let ny = aug.hess.rows();
    if aug.hess.cols() != ny || aug.grad.len() != ny || ny < nv {
        return Err(KktError::DimensionMismatch);
    }
    let mut hess = aug.hess.block(0, 0, nv, nv);
    let mut grad = aug.grad[..nv].to_vec();
    for s in nv..ny {
        let d = aug.hess[(s, s)];
        if !(d > 0.0) {
            return Err(KktError::SingularSlackBlock { stage: 0, slack: (s - nv) % qp.dim.ns.max(1) });
        }
        let col: Vec<f64> = (0..nv).map(|i| aug.hess[(i, s)]).collect();
        for i in 0..nv {
            if col[i] == 0.0 {
                continue;
            }
            for j in 0..nv {
                hess[(i, j)] -= col[i] * col[j] / d;
            }
            grad[i] -= col[i] * aug.grad[s] / d;
        }
    }
    Ok(AugmentedSystem { hess, grad })
}

fn res_shape_ok(qp: &DenseQp, r: &KktVec) -> bool {
    let ly = qp.layout();
    r.y.len() == ly.ny && r.pi.len() == ly.npi && r.lam.len() == ly.nc && r.t.len() == ly.nc
}

/// Cholesky factor of `h_red` (normal form) or, with `qr`, the transposed
/// triangular factor of the stacked square-root rows.
pub(crate) fn factor_reduced_hessian(
    st: &qp_data::Stage,
    sw: &StageWeights,
    reg: f64,
    qr: bool,
) -> Result<Mat, LinalgError> {
    if qr {
        let lhd = linalg::cholesky_semidefinite(&st.hess, SEMIDEF_TOL)?;
        let rows = sw.sqrt_rows(st, &lhd, reg);
        Ok(linalg::qr_cholesky(&rows)?.transpose())
    } else {
        linalg::cholesky_factor(&sw.reduced_hessian(st, reg), 0.0)
    }
}

/// Factorizes the Newton system of `qp` at `(lam, t)`. On failure the
/// factorization is retried once with doubled regularization.
pub fn factor(qp: &DenseQp, lam: &[f64], t: &[f64], arg: &DenseKktArg) -> Result<DenseKktFactor, KktError> {
    match factor_once(qp, lam, t, arg) {
        Err(KktError::FactorizationFailed { .. }) if arg.reg_prim > 0.0 => {
            let retry = DenseKktArg { reg_prim: 2.0 * arg.reg_prim, reg_dual: 2.0 * arg.reg_dual, ..*arg };
            factor_once(qp, lam, t, &retry)
        }
        other => other,
    }
}

fn factor_once(qp: &DenseQp, lam: &[f64], t: &[f64], arg: &DenseKktArg) -> Result<DenseKktFactor, KktError> {
    let st = &qp.stage;
    let mask = qp.mask();
    if lam.len() != st.nc() || t.len() != st.nc() {
        return Err(KktError::DimensionMismatch);
    }
    let sw = StageWeights::new(st, lam, t, &mask, arg.reg_prim, 0)?;
    let fail = KktError::factorization(0);
    let ne = qp.dim.ne;
    let nv = qp.dim.nv;
    if ne == 0 || arg.method == EqMethod::Schur {
        let lh = factor_reduced_hessian(st, &sw, arg.reg_prim, arg.use_qr).map_err(fail)?;
        let eq = if ne == 0 {
            EqFactor::None
        } else {
            // V = Lh⁻¹ Aᵀ, S = VᵀV
            let v = linalg::solve_triangular(&lh, &qp.a.transpose(), false).map_err(KktError::factorization(0))?;
            let ls = if arg.use_qr {
                let mut stack = v.clone();
                if arg.reg_dual > 0.0 {
                    let mut d = Mat::identity(ne);
                    d.scale(arg.reg_dual.sqrt());
                    stack = stack.vstack(&d);
                }
                linalg::qr_cholesky(&stack).map_err(KktError::factorization(0))?.transpose()
            } else {
                linalg::cholesky_factor(&linalg::gram(&v), arg.reg_dual).map_err(KktError::factorization(0))?
            };
            EqFactor::Schur { ls }
        };
        return Ok(DenseKktFactor { method: arg.method, qr: arg.use_qr, sw, lh, eq });
    }
    // Null-space method.
    let (q, r) = linalg::householder_qr(&qp.a.transpose());
    let q1 = q.block(0, 0, nv, ne);
    let q2 = q.block(0, ne, nv, nv - ne.min(nv));
    let rt = r.block(0, 0, ne, ne).transpose();
    for i in 0..ne {
        if !(rt[(i, i)].abs() > linalg::QR_RANK_TOL * qp.a.max_abs().max(f64::MIN_POSITIVE)) {
            return Err(KktError::FactorizationFailed { stage: 0, source: LinalgError::RankDeficient { index: i } });
        }
    }
    let htil = sw.reduced_hessian(st, arg.reg_prim);
    let lz = if arg.use_qr {
        let lhd = linalg::cholesky_semidefinite(&st.hess, SEMIDEF_TOL).map_err(KktError::factorization(0))?;
        let rows = sw.sqrt_rows(st, &lhd, arg.reg_prim);
        let rz = linalg::matmul(&rows, false, &q2, false);
        if rz.cols() == 0 {
            Mat::zeros(0, 0)
        } else {
            linalg::qr_cholesky(&rz).map_err(KktError::factorization(0))?.transpose()
        }
    } else {
        let hz = linalg::matmul(&htil, false, &q2, false);
        linalg::cholesky_factor(&linalg::matmul(&q2, true, &hz, false), 0.0).map_err(KktError::factorization(0))?
    };
    Ok(DenseKktFactor {
        method: EqMethod::NullSpace,
        qr: arg.use_qr,
        sw,
        lh: Mat::zeros(0, 0),
        eq: EqFactor::NullSpace { q1, q2, rt, lz, htil },
    })
}

/// Returns `Δ` with `K Δ = −r`, where `K` is the Newton matrix at the
/// factorized iterate and `r = (r_g, r_b, r_d, r_m)`.
pub fn solve(f: &DenseKktFactor, qp: &DenseQp, r: &KktVec) -> Result<KktVec, KktError> {
    if !res_shape_ok(qp, r) {
        return Err(KktError::DimensionMismatch);
    }
    let st = &qp.stage;
    let red = f.sw.reduce_rhs(st, &r.y, &r.lam, &r.t);
    let g = &red.gz;
    let fail = KktError::factorization(0);
    let (dz, dpi) = match &f.eq {
        EqFactor::None => {
            let x = linalg::cholesky_solve_vec(&f.lh, g).map_err(fail)?;
            (x.iter().map(|v| -v).collect::<Vec<_>>(), Vec::new())
        }
        EqFactor::Schur { ls } => {
            // S Δπ = r_b + A H̃⁻¹ g̃,  Δz = H̃⁻¹ (AᵀΔπ − g̃)
            let hg = linalg::cholesky_solve_vec(&f.lh, g).map_err(KktError::factorization(0))?;
            let mut s_rhs = r.pi.clone();
            linalg::gemv(1.0, &qp.a, &hg, 1.0, &mut s_rhs, false);
            let dpi = linalg::cholesky_solve_vec(ls, &s_rhs).map_err(KktError::factorization(0))?;
            let mut w: Vec<f64> = g.iter().map(|v| -v).collect();
            linalg::gemv(1.0, &qp.a, &dpi, 1.0, &mut w, true);
            let dz = linalg::cholesky_solve_vec(&f.lh, &w).map_err(KktError::factorization(0))?;
            (dz, dpi)
        }
        EqFactor::NullSpace { q1, q2, rt, lz, htil } => {
            // A Δz = Rᵀ y1 = r_b
            let y1 = linalg::solve_triangular_vec(rt, &r.pi, false).map_err(fail)?;
            let z1 = q1.mul_vec(&y1);
            let hz1 = htil.mul_vec(&z1);
            let rhs2: Vec<f64> = q2.tmul_vec(&g.iter().zip(&hz1).map(|(a, b)| -(a + b)).collect::<Vec<_>>());
            let y2 = if rhs2.is_empty() { Vec::new() } else { linalg::cholesky_solve_vec(lz, &rhs2).map_err(KktError::factorization(0))? };
            let mut dz = z1;
            linalg::gemv(1.0, q2, &y2, 1.0, &mut dz, false);
            // R Δπ = Q1ᵀ (H̃ Δz + g̃)
            let mut hdz = htil.mul_vec(&dz);
            linalg::axpy(1.0, g, &mut hdz);
            let c = q1.tmul_vec(&hdz);
            let dpi = linalg::solve_triangular_vec(rt, &c, true).map_err(KktError::factorization(0))?;
            (dz, dpi)
        }
    };
    let mut out = KktVec::zeros(st.ny(), qp.dim.ne, st.nc());
    f.sw.recover(st, &red, &dz, &r.lam, &r.t, &mut out.y, &mut out.lam, &mut out.t);
    out.pi = dpi;
    Ok(out)
}

/// Newton matrix at `(lam, t)` applied to `dir`.
pub fn kkt_apply(qp: &DenseQp, lam: &[f64], t: &[f64], dir: &KktVec) -> KktVec {
    qp_data::kkt_matrix_apply(qp, lam, t, &qp.mask(), dir)
}

#[cfg(test)]
mod tests;
