//! Stage-level problem data shared by the dense, OCP and tree QP types.
//!
//! A stage owns a variable block `z` (for OCP stages `z = [u; x]`, for the dense
//! QP `z = v`), its quadratic cost, its box and general two-sided constraints and
//! the slack variables of its soft constraints. The stage primal vector is laid
//! out as `[z, sl, su]` and its inequality multipliers as
//! `[lower box, lower general, upper box, upper general, lower slack, upper slack]`.

use crate::linalg::{self, Mat};

/// Magnitude at or beyond which a bound is treated as infinite. A constraint
/// side whose bound reaches the sentinel is inactive regardless of its mask.
pub const INF_BOUND: f64 = 1e30;

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// Leading block of `z` (inputs for OCP stages, all of `v` for a dense QP).
    pub(crate) nu: usize,
    /// Trailing block of `z` (states for OCP stages, zero for a dense QP).
    pub(crate) nx: usize,
    pub(crate) hess: Mat,
    pub(crate) grad: Vec<f64>,
    pub(crate) idxb: Vec<usize>,
    pub(crate) lb: Vec<f64>,
    pub(crate) ub: Vec<f64>,
    /// General constraint rows over `z`, `ng × nz`.
    pub(crate) gmat: Mat,
    pub(crate) lg: Vec<f64>,
    pub(crate) ug: Vec<f64>,
    pub(crate) idxs: Vec<usize>,
    pub(crate) zl_hess: Vec<f64>,
    pub(crate) zu_hess: Vec<f64>,
    pub(crate) zl: Vec<f64>,
    pub(crate) zu: Vec<f64>,
    pub(crate) sl_lb: Vec<f64>,
    pub(crate) su_lb: Vec<f64>,
    pub(crate) maskl: Vec<f64>,
    pub(crate) masku: Vec<f64>,
}

impl Stage {
    /// Zero cost, infinite bounds, all-ones masks, `idxb = 0..nb`, `idxs = 0..ns`.
    pub(crate) fn new(nu: usize, nx: usize, nb: usize, ng: usize, ns: usize) -> Self {
        let nz = nu + nx;
        let m = nb + ng;
        Self {
            nu,
            nx,
            hess: Mat::zeros(nz, nz),
            grad: vec![0.0; nz],
            idxb: (0..nb).collect(),
            lb: vec![-INF_BOUND; nb],
            ub: vec![INF_BOUND; nb],
            gmat: Mat::zeros(ng, nz),
            lg: vec![-INF_BOUND; ng],
            ug: vec![INF_BOUND; ng],
            idxs: (0..ns).collect(),
            zl_hess: vec![0.0; ns],
            zu_hess: vec![0.0; ns],
            zl: vec![0.0; ns],
            zu: vec![0.0; ns],
            sl_lb: vec![0.0; ns],
            su_lb: vec![0.0; ns],
            maskl: vec![1.0; m],
            masku: vec![1.0; m],
        }
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nu + self.nx
    }
    #[inline]
    pub fn nb(&self) -> usize {
        self.idxb.len()
    }
    #[inline]
    pub fn ng(&self) -> usize {
        self.gmat.rows()
    }
    #[inline]
    pub fn ns(&self) -> usize {
        self.idxs.len()
    }
    /// Number of two-sided constraint rows, `nb + ng`.
    #[inline]
    pub fn nrows(&self) -> usize {
        self.nb() + self.ng()
    }
    /// Primal size `nz + 2 ns`.
    #[inline]
    pub fn ny(&self) -> usize {
        self.nz() + 2 * self.ns()
    }
    /// Inequality count `2 (nb + ng) + 2 ns`.
    #[inline]
    pub fn nc(&self) -> usize {
        2 * self.nrows() + 2 * self.ns()
    }

    pub(crate) fn lower_bound(&self, i: usize) -> f64 {
        let nb = self.nb();
        if i < nb {
            self.lb[i]
        } else {
            self.lg[i - nb]
        }
    }

    pub(crate) fn upper_bound(&self, i: usize) -> f64 {
        let nb = self.nb();
        if i < nb {
            self.ub[i]
        } else {
            self.ug[i - nb]
        }
    }

    /// `c_iᵀ z` for constraint row `i`.
    #[inline]
    pub(crate) fn row_dot(&self, i: usize, z: &[f64]) -> f64 {
        let nb = self.nb();
        if i < nb {
            z[self.idxb[i]]
        } else {
            linalg::dot(self.gmat.row(i - nb), z)
        }
    }

    /// `out += alpha * c_i`.
    #[inline]
    pub(crate) fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        let nb = self.nb();
        if i < nb {
            out[self.idxb[i]] += alpha;
        } else {
            linalg::axpy(alpha, self.gmat.row(i - nb), out);
        }
    }

    /// Constraint row `i` as a dense vector over `z`.
    pub(crate) fn row_dense(&self, i: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.nz()];
        self.row_axpy(i, 1.0, &mut r);
        r
    }

    /// Effective 0/1 mask over the stage inequalities: the user mask, cleared
    /// for sides with infinite bounds; slack bounds are always active.
    pub(crate) fn eff_mask(&self, out: &mut [f64]) {
        let m = self.nrows();
        debug_assert_eq!(out.len(), self.nc());
        for i in 0..m {
            let on_l = self.maskl[i] != 0.0 && self.lower_bound(i) > -INF_BOUND;
            let on_u = self.masku[i] != 0.0 && self.upper_bound(i) < INF_BOUND;
            out[i] = if on_l { 1.0 } else { 0.0 };
            out[m + i] = if on_u { 1.0 } else { 0.0 };
        }
        out[2 * m..].iter_mut().for_each(|v| *v = 1.0);
    }

    /// `out += 𝓗_stage y` over the stage primal block `[z, sl, su]`.
    pub(crate) fn hess_mul_add(&self, y: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        let ns = self.ns();
        linalg::gemv(1.0, &self.hess, &y[..nz], 1.0, &mut out[..nz], false);
        for j in 0..ns {
            out[nz + j] += self.zl_hess[j] * y[nz + j];
            out[nz + ns + j] += self.zu_hess[j] * y[nz + ns + j];
        }
    }

    /// Writes the stage gradient `[g, zl, zu]`.
    pub(crate) fn gradient(&self, out: &mut [f64]) {
        let nz = self.nz();
        let ns = self.ns();
        out[..nz].copy_from_slice(&self.grad);
        out[nz..nz + ns].copy_from_slice(&self.zl);
        out[nz + ns..nz + 2 * ns].copy_from_slice(&self.zu);
    }

    /// `out = 𝓒_stage y`.
    pub(crate) fn ineq_mul(&self, y: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        let ns = self.ns();
        let m = self.nrows();
        let z = &y[..nz];
        for i in 0..m {
            let c = self.row_dot(i, z);
            out[i] = c;
            out[m + i] = -c;
        }
        for (j, &i) in self.idxs.iter().enumerate() {
            out[i] += y[nz + j];
            out[m + i] += y[nz + ns + j];
            out[2 * m + j] = y[nz + j];
            out[2 * m + ns + j] = y[nz + ns + j];
        }
        if self.ng() > 0 {
            linalg::flops::add(2 * (self.ng() * nz) as u64);
        }
    }

    /// `out += 𝓒_stageᵀ lam`.
    pub(crate) fn ineq_tmul_add(&self, lam: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        let ns = self.ns();
        let m = self.nrows();
        for i in 0..m {
            let net = lam[i] - lam[m + i];
            if net != 0.0 {
                self.row_axpy(i, net, &mut out[..nz]);
            }
        }
        for (j, &i) in self.idxs.iter().enumerate() {
            out[nz + j] += lam[i] + lam[2 * m + j];
            out[nz + ns + j] += lam[m + i] + lam[2 * m + ns + j];
        }
        if self.ng() > 0 {
            linalg::flops::add(2 * (self.ng() * nz) as u64);
        }
    }

    /// Writes the inequality right-hand side `d = [lb, lg, -ub, -ug, sl_lb, su_lb]`.
    pub(crate) fn ineq_rhs(&self, out: &mut [f64]) {
        let m = self.nrows();
        let ns = self.ns();
        for i in 0..m {
            out[i] = self.lower_bound(i);
            out[m + i] = -self.upper_bound(i);
        }
        out[2 * m..2 * m + ns].copy_from_slice(&self.sl_lb);
        out[2 * m + ns..2 * m + 2 * ns].copy_from_slice(&self.su_lb);
    }

    /// Objective contribution `½ zᵀHz + gᵀz + ½ slᵀZl sl + zlᵀsl + ½ suᵀZu su + zuᵀsu`.
    pub(crate) fn objective(&self, y: &[f64]) -> f64 {
        let nz = self.nz();
        let ns = self.ns();
        let z = &y[..nz];
        let hz = self.hess.mul_vec(z);
        let mut f = 0.5 * linalg::dot(z, &hz) + linalg::dot(&self.grad, z);
        for j in 0..ns {
            let sl = y[nz + j];
            let su = y[nz + ns + j];
            f += 0.5 * self.zl_hess[j] * sl * sl + self.zl[j] * sl;
            f += 0.5 * self.zu_hess[j] * su * su + self.zu[j] * su;
        }
        f
    }
}
