//! Stage-level elimination of the inequality multipliers, inequality slacks
//! and soft-constraint slack variables from the Newton system, shared by the
//! dense, OCP and tree KKT solvers.

use crate::linalg::{self, Mat};
use crate::qp_data::Stage;

use super::KktError;

/// Diagonal scalings of one stage at a fixed iterate.
#[derive(Clone, Debug)]
pub(crate) struct StageWeights {
    lam: Vec<f64>,
    t: Vec<f64>,
    mask: Vec<f64>,
    /// `λ / t` on unmasked rows, zero elsewhere.
    pub gamma: Vec<f64>,
    /// Reduced lower / upper slack diagonals.
    pub dl: Vec<f64>,
    pub du: Vec<f64>,
    /// Weight of `c_i c_iᵀ` in the reduced Hessian for each two-sided row.
    pub w: Vec<f64>,
}

/// Right-hand side of one stage after elimination.
#[derive(Clone, Debug)]
pub(crate) struct StageRhs {
    /// Reduced gradient over `z`.
    pub gz: Vec<f64>,
    rsl: Vec<f64>,
    rsu: Vec<f64>,
}

impl StageWeights {
    pub fn new(st: &Stage, lam: &[f64], t: &[f64], mask: &[f64], reg: f64, stage: usize) -> Result<Self, KktError> {
        let nc = st.nc();
        let m = st.nrows();
        let ns = st.ns();
        debug_assert!(lam.len() == nc && t.len() == nc && mask.len() == nc);
        let mut gamma = vec![0.0; nc];
        for k in 0..nc {
            if mask[k] != 0.0 {
                if !(lam[k] >= 0.0 && t[k] > 0.0) {
                    return Err(KktError::NonPositiveIterate { stage, row: k });
                }
                gamma[k] = lam[k] / t[k];
            }
        }
        let mut dl = vec![0.0; ns];
        let mut du = vec![0.0; ns];
        for (j, &i) in st.idxs.iter().enumerate() {
            dl[j] = st.zl_hess[j] + gamma[i] + gamma[2 * m + j] + reg;
            du[j] = st.zu_hess[j] + gamma[m + i] + gamma[2 * m + ns + j] + reg;
            if !(dl[j] > 0.0 && du[j] > 0.0) {
                return Err(KktError::SingularSlackBlock { stage, slack: j });
            }
        }
        let mut w: Vec<f64> = (0..m).map(|i| gamma[i] + gamma[m + i]).collect();
        for (j, &i) in st.idxs.iter().enumerate() {
            let (gl, gu) = (gamma[i], gamma[m + i]);
            w[i] = (w[i] - gl * gl / dl[j] - gu * gu / du[j]).max(0.0);
        }
        Ok(Self { lam: lam.to_vec(), t: t.to_vec(), mask: mask.to_vec(), gamma, dl, du, w })
    }

    /// `H + reg I + Σ w_i c_i c_iᵀ` over `z`.
    pub fn reduced_hessian(&self, st: &Stage, reg: f64) -> Mat {
        let mut h = st.hess.clone();
        h.add_diag(reg);
        let nb = st.nb();
        for i in 0..nb {
            let j = st.idxb[i];
            h[(j, j)] += self.w[i];
        }
        let nz = st.nz();
        for r in 0..st.ng() {
            let wi = self.w[nb + r];
            if wi == 0.0 {
                continue;
            }
            let c = st.gmat.row(r);
            for a in 0..nz {
                let s = wi * c[a];
                if s == 0.0 {
                    continue;
                }
                for b in 0..nz {
                    h[(a, b)] += s * c[b];
                }
            }
        }
        if st.ng() > 0 {
            linalg::flops::add((2 * st.ng() * nz * nz) as u64);
        }
        h
    }

    /// Rows whose Gram matrix is the reduced Hessian: `Lᵀ` of a semidefinite
    /// factor `L Lᵀ = H`, then `√w_i c_iᵀ` and `√reg I`.
    pub fn sqrt_rows(&self, st: &Stage, hess_factor: &Mat, reg: f64) -> Mat {
        let nz = st.nz();
        let active: Vec<usize> = (0..st.nrows()).filter(|&i| self.w[i] > 0.0).collect();
        let nreg = if reg > 0.0 { nz } else { 0 };
        let mut out = Mat::zeros(nz + active.len() + nreg, nz);
        out.set_block(0, 0, &hess_factor.transpose());
        for (q, &i) in active.iter().enumerate() {
            let c = st.row_dense(i);
            let s = self.w[i].sqrt();
            for (j, v) in c.iter().enumerate() {
                out[(nz + q, j)] = s * v;
            }
        }
        let sr = reg.sqrt();
        for j in 0..nreg {
            out[(nz + active.len() + j, j)] = sr;
        }
        out
    }

    /// Eliminates `Δλ`, `Δt` and the slack steps from the stage right-hand side
    /// `(r_g, r_d, r_m)`.
    pub fn reduce_rhs(&self, st: &Stage, rg: &[f64], rd: &[f64], rm: &[f64]) -> StageRhs {
        let nz = st.nz();
        let m = st.nrows();
        let ns = st.ns();
        let rho: Vec<f64> = (0..st.nc())
            .map(|k| if self.mask[k] != 0.0 { (self.lam[k] * rd[k] - rm[k]) / self.t[k] } else { 0.0 })
            .collect();
        let mut gz = rg[..nz].to_vec();
        for i in 0..m {
            let net = rho[i] - rho[m + i];
            if net != 0.0 {
                st.row_axpy(i, -net, &mut gz);
            }
        }
        let mut rsl = vec![0.0; ns];
        let mut rsu = vec![0.0; ns];
        for (j, &i) in st.idxs.iter().enumerate() {
            rsl[j] = rg[nz + j] - rho[i] - rho[2 * m + j];
            rsu[j] = rg[nz + ns + j] - rho[m + i] - rho[2 * m + ns + j];
            let coef = self.gamma[i] * rsl[j] / self.dl[j] - self.gamma[m + i] * rsu[j] / self.du[j];
            if coef != 0.0 {
                st.row_axpy(i, -coef, &mut gz);
            }
        }
        StageRhs { gz, rsl, rsu }
    }

    /// Given `Δz`, recovers the stage slack steps and `Δλ`, `Δt`.
    #[allow(clippy::too_many_arguments)]
    pub fn recover(
        &self,
        st: &Stage,
        rhs: &StageRhs,
        dz: &[f64],
        rd: &[f64],
        rm: &[f64],
        dy: &mut [f64],
        dlam: &mut [f64],
        dt: &mut [f64],
    ) {
        let nz = st.nz();
        let m = st.nrows();
        let ns = st.ns();
        dy[..nz].copy_from_slice(dz);
        for (j, &i) in st.idxs.iter().enumerate() {
            let cz = st.row_dot(i, dz);
            dy[nz + j] = (-rhs.rsl[j] - self.gamma[i] * cz) / self.dl[j];
            dy[nz + ns + j] = (-rhs.rsu[j] + self.gamma[m + i] * cz) / self.du[j];
        }
        st.ineq_mul(dy, dt);
        for k in 0..st.nc() {
            if self.mask[k] != 0.0 {
                dt[k] -= rd[k];
                dlam[k] = (-rm[k] - self.lam[k] * dt[k]) / self.t[k];
            } else {
                dt[k] = -rd[k];
                dlam[k] = -rm[k];
            }
        }
    }
}
