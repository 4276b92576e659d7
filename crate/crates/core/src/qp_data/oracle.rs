//! Dense reference implementations used to check the structure-exploiting
//! code: an explicit assembly of every QP type into one sparse-as-dense QP
//! built only from `get_field`, the full Newton matrix, a partial-pivoting LU
//! solve and a brute-force active-set solver for small problems.

use thiserror::Error;

use crate::linalg::Mat;

use super::fields::FieldValue;
use super::{DenseQp, KktVec, OcpQp, TreeOcpQp, INF_BOUND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("iterate is not strictly positive in lambda and t (row {row})")]
    NonPositiveIterate { row: usize },
    #[error("iterate dimensions do not match the QP")]
    DimensionMismatch,
}

/// `min ½ yᵀHy + gᵀy  s.t.  Ay = b,  Cy ≥ d` on the rows where `mask` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GenericQp {
    pub h: Mat,
    pub g: Vec<f64>,
    pub a: Mat,
    pub b: Vec<f64>,
    pub c: Mat,
    pub d: Vec<f64>,
    pub mask: Vec<f64>,
}

struct StageDims {
    nu: usize,
    nx: usize,
    nb: usize,
    ng: usize,
    ns: usize,
}

impl StageDims {
    fn ny(&self) -> usize {
        self.nu + self.nx + 2 * self.ns
    }
    fn nc(&self) -> usize {
        2 * (self.nb + self.ng + self.ns)
    }
}

fn mat(v: FieldValue) -> Mat {
    match v {
        FieldValue::Mat(m) => m,
        other => panic!("expected matrix field, got {:?}", other),
    }
}

fn vec(v: FieldValue) -> Vec<f64> {
    match v {
        FieldValue::Vec(v) => v,
        other => panic!("expected vector field, got {:?}", other),
    }
}

fn idx(v: FieldValue) -> Vec<usize> {
    match v {
        FieldValue::Idx(v) => v,
        other => panic!("expected index field, got {:?}", other),
    }
}

impl GenericQp {
    fn empty(ny: usize, npi: usize, nc: usize) -> Self {
        Self {
            h: Mat::zeros(ny, ny),
            g: vec![0.0; ny],
            a: Mat::zeros(npi, ny),
            b: vec![0.0; npi],
            c: Mat::zeros(nc, ny),
            d: vec![0.0; nc],
            mask: vec![0.0; nc],
        }
    }

    pub fn ny(&self) -> usize {
        self.h.rows()
    }
    pub fn npi(&self) -> usize {
        self.a.rows()
    }
    pub fn nc(&self) -> usize {
        self.c.rows()
    }

    pub fn from_dense(qp: &DenseQp) -> Self {
        let dm = *qp.dim();
        let sd = StageDims { nu: dm.nv, nx: 0, nb: dm.nb, ng: dm.ng, ns: dm.ns };
        let mut out = Self::empty(sd.ny(), dm.ne, sd.nc());
        let get = |name: &str| qp.get_field(name).unwrap();
        let h = mat(get("H"));
        out.h.set_block(0, 0, &h);
        out.g[..dm.nv].copy_from_slice(&vec(get("g")));
        let cm = mat(get("C"));
        out.add_stage_rest(&sd, 0, 0, &get, &cm);
        out.a.set_block(0, 0, &mat(get("A")));
        out.b = vec(get("b"));
        out
    }

    pub fn from_ocp(qp: &OcpQp) -> Self {
        let dm = qp.dim();
        let parent: Vec<Option<usize>> = (0..=dm.n).map(|n| n.checked_sub(1)).collect();
        let dims = (0..=dm.n)
            .map(|n| StageDims { nu: dm.nu[n], nx: dm.nx[n], nb: dm.nb[n], ng: dm.ng[n], ns: dm.ns[n] })
            .collect::<Vec<_>>();
        Self::from_stages(&parent, &dims, |name, n| qp.get_field(name, n).unwrap(), |name, m| {
            qp.get_field(name, m - 1).unwrap()
        })
    }

    pub fn from_tree(qp: &TreeOcpQp) -> Self {
        let dm = qp.dim();
        let dims = (0..dm.num_nodes())
            .map(|n| StageDims { nu: dm.nu[n], nx: dm.nx[n], nb: dm.nb[n], ng: dm.ng[n], ns: dm.ns[n] })
            .collect::<Vec<_>>();
        Self::from_stages(&dm.parent, &dims, |name, n| qp.get_field(name, n).unwrap(), |name, m| {
            qp.get_field(name, m).unwrap()
        })
    }

    fn from_stages(
        parent: &[Option<usize>],
        dims: &[StageDims],
        get: impl Fn(&str, usize) -> FieldValue,
        get_dyn: impl Fn(&str, usize) -> FieldValue,
    ) -> Self {
        let nn = dims.len();
        let mut y_off = vec![0; nn];
        let mut c_off = vec![0; nn];
        let mut pi_off = vec![0; nn];
        let (mut ny, mut nc, mut npi) = (0, 0, 0);
        for n in 0..nn {
            y_off[n] = ny;
            c_off[n] = nc;
            pi_off[n] = npi;
            ny += dims[n].ny();
            nc += dims[n].nc();
            if parent[n].is_some() {
                npi += dims[n].nx;
            }
        }
        let mut out = Self::empty(ny, npi, nc);
        for n in 0..nn {
            let sd = &dims[n];
            let (nu, nx, yo) = (sd.nu, sd.nx, y_off[n]);
            let g = |name: &str| get(name, n);
            let r = mat(g("R"));
            let s = mat(g("S"));
            let q = mat(g("Q"));
            out.h.set_block(yo, yo, &r);
            out.h.set_block(yo, yo + nu, &s);
            out.h.set_block(yo + nu, yo, &s.transpose());
            out.h.set_block(yo + nu, yo + nu, &q);
            out.g[yo..yo + nu].copy_from_slice(&vec(g("r")));
            out.g[yo + nu..yo + nu + nx].copy_from_slice(&vec(g("q")));
            let cm = mat(g("D")).hstack(&mat(g("C")));
            out.add_stage_rest(sd, yo, c_off[n], &g, &cm);
            if let Some(p) = parent[n] {
                let a = mat(get_dyn("A", n));
                let b = mat(get_dyn("B", n));
                let bv = vec(get_dyn("b", n));
                let (po, ypo, nup) = (pi_off[n], y_off[p], dims[p].nu);
                for i in 0..nx {
                    out.a[(po + i, yo + nu + i)] = 1.0;
                    for j in 0..nup {
                        out.a[(po + i, ypo + j)] = -b[(i, j)];
                    }
                    for j in 0..dims[p].nx {
                        out.a[(po + i, ypo + nup + j)] = -a[(i, j)];
                    }
                    out.b[po + i] = bv[i];
                }
            }
        }
        out
    }

    /// Slack costs, inequality rows, right-hand sides and masks of one stage.
    fn add_stage_rest(&mut self, sd: &StageDims, yo: usize, co: usize, get: &dyn Fn(&str) -> FieldValue, cm: &Mat) {
        let nz = sd.nu + sd.nx;
        let (nb, ng, ns) = (sd.nb, sd.ng, sd.ns);
        let m = nb + ng;
        let idxb = idx(get("idxb"));
        let (lb, ub) = (vec(get("lb")), vec(get("ub")));
        let (lg, ug) = (vec(get("lg")), vec(get("ug")));
        let idxs = idx(get("idxs"));
        let (zlh, zuh, zl, zu) = (vec(get("Zl")), vec(get("Zu")), vec(get("zl")), vec(get("zu")));
        let (sl_lb, su_lb) = (vec(get("sl_lb")), vec(get("su_lb")));
        let (maskl, masku) = (vec(get("maskl")), vec(get("masku")));
        for j in 0..ns {
            let (sl, su) = (yo + nz + j, yo + nz + ns + j);
            self.h[(sl, sl)] = zlh[j];
            self.h[(su, su)] = zuh[j];
            self.g[sl] = zl[j];
            self.g[su] = zu[j];
        }
        for i in 0..m {
            let (lo, up) = (co + i, co + m + i);
            if i < nb {
                self.c[(lo, yo + idxb[i])] = 1.0;
                self.c[(up, yo + idxb[i])] = -1.0;
                self.d[lo] = lb[i];
                self.d[up] = -ub[i];
            } else {
                for j in 0..nz {
                    self.c[(lo, yo + j)] = cm[(i - nb, j)];
                    self.c[(up, yo + j)] = -cm[(i - nb, j)];
                }
                self.d[lo] = lg[i - nb];
                self.d[up] = -ug[i - nb];
            }
            self.mask[lo] = if maskl[i] != 0.0 && self.d[lo] > -INF_BOUND { 1.0 } else { 0.0 };
            self.mask[up] = if masku[i] != 0.0 && -self.d[up] < INF_BOUND { 1.0 } else { 0.0 };
        }
        for (j, &i) in idxs.iter().enumerate() {
            let (sl, su) = (yo + nz + j, yo + nz + ns + j);
            self.c[(co + i, sl)] = 1.0;
            self.c[(co + m + i, su)] = 1.0;
            self.c[(co + 2 * m + j, sl)] = 1.0;
            self.c[(co + 2 * m + ns + j, su)] = 1.0;
            self.d[co + 2 * m + j] = sl_lb[j];
            self.d[co + 2 * m + ns + j] = su_lb[j];
            self.mask[co + 2 * m + j] = 1.0;
            self.mask[co + 2 * m + ns + j] = 1.0;
        }
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        let hy = self.h.mul_vec(y);
        y.iter().zip(&hy).map(|(a, b)| 0.5 * a * b).sum::<f64>() + y.iter().zip(&self.g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// KKT residuals `(r_g, r_b, r_d, r_m)` at `it`, masked rows zeroed.
    pub fn residuals(&self, it: &KktVec) -> KktVec {
        let mut rg = self.h.mul_vec(&it.y);
        let atpi = self.a.tmul_vec(&it.pi);
        let ml: Vec<f64> = it.lam.iter().zip(&self.mask).map(|(l, m)| l * m).collect();
        let ctl = self.c.tmul_vec(&ml);
        for i in 0..rg.len() {
            rg[i] += self.g[i] - atpi[i] - ctl[i];
        }
        let ay = self.a.mul_vec(&it.y);
        let rb = self.b.iter().zip(&ay).map(|(b, a)| b - a).collect();
        let cy = self.c.mul_vec(&it.y);
        let nc = self.nc();
        let mut rd = vec![0.0; nc];
        let mut rm = vec![0.0; nc];
        for k in 0..nc {
            if self.mask[k] != 0.0 {
                rd[k] = self.d[k] - cy[k] + it.t[k];
                rm[k] = it.lam[k] * it.t[k];
            }
        }
        KktVec { y: rg, pi: rb, lam: rd, t: rm }
    }

    /// The full Newton matrix at `(lam, t)` over `(Δy, Δπ, Δλ, Δt)`.
    pub fn kkt_matrix(&self, lam: &[f64], t: &[f64]) -> Result<Mat, OracleError> {
        let (ny, npi, nc) = (self.ny(), self.npi(), self.nc());
        if lam.len() != nc || t.len() != nc {
            return Err(OracleError::DimensionMismatch);
        }
        for k in 0..nc {
            if self.mask[k] != 0.0 && !(lam[k] > 0.0 && t[k] > 0.0) {
                return Err(OracleError::NonPositiveIterate { row: k });
            }
        }
        let n = ny + npi + 2 * nc;
        let (op, ol, ot) = (ny, ny + npi, ny + npi + nc);
        let mut k = Mat::zeros(n, n);
        k.set_block(0, 0, &self.h);
        for i in 0..npi {
            for j in 0..ny {
                k[(j, op + i)] = -self.a[(i, j)];
                k[(op + i, j)] = -self.a[(i, j)];
            }
        }
        for r in 0..nc {
            if self.mask[r] != 0.0 {
                for j in 0..ny {
                    k[(j, ol + r)] = -self.c[(r, j)];
                    k[(ol + r, j)] = -self.c[(r, j)];
                }
                k[(ol + r, ot + r)] = 1.0;
                k[(ot + r, ol + r)] = t[r];
                k[(ot + r, ot + r)] = lam[r];
            } else {
                k[(ol + r, ot + r)] = 1.0;
                k[(ot + r, ol + r)] = 1.0;
            }
        }
        Ok(k)
    }

    /// Matrix and right-hand side `−(r_g, r_b, r_d, r_m − σμ e)` of the Newton
    /// system at `it`.
    pub fn newton_system(&self, it: &KktVec, sigma_mu: f64) -> Result<(Mat, Vec<f64>), OracleError> {
        if it.y.len() != self.ny() || it.pi.len() != self.npi() {
            return Err(OracleError::DimensionMismatch);
        }
        let k = self.kkt_matrix(&it.lam, &it.t)?;
        let mut r = self.residuals(it);
        for (rm, m) in r.t.iter_mut().zip(&self.mask) {
            if *m != 0.0 {
                *rm -= sigma_mu;
            }
        }
        let rhs = r.to_flat().iter().map(|v| -v).collect();
        Ok((k, rhs))
    }

    /// Reference Newton step at `it`.
    pub fn newton_step(&self, it: &KktVec, sigma_mu: f64) -> Result<Option<KktVec>, OracleError> {
        let (k, rhs) = self.newton_system(it, sigma_mu)?;
        Ok(lu_solve(&k, &rhs).map(|x| KktVec::from_flat(&x, self.ny(), self.npi(), self.nc())))
    }

    /// Solves the QP by enumerating active sets over the unmasked rows; meant
    /// for problems with at most about 16 such rows. Returns `None` when no
    /// active set yields a KKT point (infeasible or unbounded problems).
    pub fn active_set_solve(&self, tol: f64) -> Option<KktVec> {
        let rows: Vec<usize> = (0..self.nc()).filter(|&k| self.mask[k] != 0.0).collect();
        assert!(rows.len() <= 24, "active-set enumeration limited to 24 rows");
        let (ny, npi) = (self.ny(), self.npi());
        let mut best: Option<(f64, KktVec)> = None;
        for bits in 0u64..(1u64 << rows.len()) {
            let act: Vec<usize> = rows.iter().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, &r)| r).collect();
            let na = act.len();
            if npi + na > ny {
                continue;
            }
            let n = ny + npi + na;
            let mut k = Mat::zeros(n, n);
            let mut rhs = vec![0.0; n];
            k.set_block(0, 0, &self.h);
            for j in 0..ny {
                rhs[j] = -self.g[j];
            }
            for i in 0..npi {
                for j in 0..ny {
                    k[(j, ny + i)] = -self.a[(i, j)];
                    k[(ny + i, j)] = self.a[(i, j)];
                }
                rhs[ny + i] = self.b[i];
            }
            for (q, &r) in act.iter().enumerate() {
                for j in 0..ny {
                    k[(j, ny + npi + q)] = -self.c[(r, j)];
                    k[(ny + npi + q, j)] = self.c[(r, j)];
                }
                rhs[ny + npi + q] = self.d[r];
            }
            let Some(x) = lu_solve(&k, &rhs) else { continue };
            let y = &x[..ny];
            if act.iter().enumerate().any(|(q, _)| x[ny + npi + q] < -tol) {
                continue;
            }
            let cy = self.c.mul_vec(y);
            if rows.iter().any(|&r| cy[r] - self.d[r] < -tol) {
                continue;
            }
            let mut lam = vec![0.0; self.nc()];
            for (q, &r) in act.iter().enumerate() {
                lam[r] = x[ny + npi + q].max(0.0);
            }
            let t = (0..self.nc()).map(|r| if self.mask[r] != 0.0 { (cy[r] - self.d[r]).max(0.0) } else { 0.0 }).collect();
            let f = self.objective(y);
            let cand = KktVec { y: y.to_vec(), pi: x[ny..ny + npi].to_vec(), lam, t };
            if best.as_ref().map_or(true, |(fb, _)| f < *fb - 1e-12 * (1.0 + fb.abs())) {
                best = Some((f, cand));
            }
        }
        best.map(|(_, v)| v)
    }
}

/// Full Newton matrix and right-hand side of an OCP QP at `it` (no centering).
pub fn ocp_qp_to_dense_kkt_oracle(qp: &OcpQp, it: &KktVec) -> Result<(Mat, Vec<f64>), OracleError> {
    GenericQp::from_ocp(qp).newton_system(it, 0.0)
}

/// Solves `A x = b` by LU factorization with partial pivoting. Returns `None`
/// when a pivot is zero or below `1e-13` relative to the largest entry.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pv) = (k..n).map(|i| (i, m[(i, k)].abs())).fold((k, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        if pv <= 1e-13 * scale {
            return None;
        }
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        let piv = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / piv;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[(k, j)] * x[j]).sum();
        x[k] = (x[k] - s) / m[(k, k)];
    }
    Some(x)
}
