//! Backward Riccati recursion over a rooted tree of stages. A chain gives the
//! OCP recursion; the tree solver reuses the same kernel.

use crate::kkt_dense::elim::{StageRhs, StageWeights};
use crate::kkt_dense::{KktError, SEMIDEF_TOL};
use crate::linalg::{self, LinalgError, Mat};
use crate::qp_data::multistage::MultiStage;
use crate::qp_data::{KktVec, QpStructure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RiccatiVariant {
    /// Cholesky of the input block only; `P = M_xx − M_xu M_uu⁻¹ M_ux`.
    /// Needs only the reduced (input) Hessian to be positive definite.
    Classical,
    /// Cholesky of the whole stage matrix; `P` is kept as its lower factor.
    /// Needs the full stage Hessian to be positive definite.
    #[default]
    SquareRoot,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiccatiArg {
    pub variant: RiccatiVariant,
    pub reg_prim: f64,
    /// Factor every stage with the QR-based array algorithm.
    pub use_qr: bool,
    /// Refactor a stage with the array algorithm when its Cholesky fails.
    pub qr_fallback: bool,
}

impl Default for RiccatiArg {
    fn default() -> Self {
        Self { variant: RiccatiVariant::SquareRoot, reg_prim: 1e-15, use_qr: false, qr_fallback: false }
    }
}

/// Cost-to-go Hessian of a node, either explicit or as a lower factor `L Lᵀ`.
#[derive(Clone, Debug)]
pub(crate) enum CostToGo {
    Full(Mat),
    Sqrt(Mat),
}

impl CostToGo {
    pub fn matrix(&self) -> Mat {
        match self {
            CostToGo::Full(p) => p.clone(),
            CostToGo::Sqrt(l) => linalg::matmul(l, false, l, true),
        }
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CostToGo::Full(p) => p.mul_vec(x),
            CostToGo::Sqrt(l) => {
                let mut w = vec![0.0; l.cols()];
                linalg::gemv(1.0, l, x, 0.0, &mut w, true);
                let mut out = vec![0.0; l.rows()];
                linalg::gemv(1.0, l, &w, 0.0, &mut out, false);
                out
            }
        }
    }

    fn sqrt_factor(&self) -> Result<Mat, LinalgError> {
        match self {
            CostToGo::Full(p) => linalg::cholesky_semidefinite(p, SEMIDEF_TOL),
            CostToGo::Sqrt(l) => Ok(l.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NodeFactor {
    pub sw: StageWeights,
    /// Lower Cholesky factor of `M_uu`.
    pub luu: Mat,
    pub k: Mat,
    pub cost: CostToGo,
    /// Lower factor of the root cost-to-go, used to solve for the root state.
    pub root_factor: Option<Mat>,
    pub qr: bool,
}

/// `[B A]`: the dynamics matrix acting on the parent's `[u; x]`.
fn dyn_matrix(ms: &MultiStage, m: usize) -> Mat {
    let d = ms.dynamics[m].as_ref().expect("non-root node has dynamics");
    d.b.hstack(&d.a)
}

pub(crate) fn factor_tree(
    ms: &MultiStage,
    lam: &[f64],
    t: &[f64],
    mask: &[f64],
    arg: &RiccatiArg,
) -> Result<Vec<NodeFactor>, KktError> {
    let nn = ms.num_nodes();
    let mut nodes: Vec<Option<NodeFactor>> = vec![None; nn];
    for n in (0..nn).rev() {
        let st = &ms.stages[n];
        let sl = &ms.layout.stages[n];
        let c = sl.c_off..sl.c_off + sl.nc();
        let sw = StageWeights::new(st, &lam[c.clone()], &t[c.clone()], &mask[c], arg.reg_prim, n)?;
        let children: Vec<(Mat, &NodeFactor)> =
            ms.children[n].iter().map(|&c| (dyn_matrix(ms, c), nodes[c].as_ref().unwrap())).collect();
        let is_root = ms.parent[n].is_none();
        let f = if arg.use_qr {
            factor_node_qr(ms, n, sw, &children, arg.reg_prim)
        } else {
            match factor_node(ms, n, sw.clone(), &children, arg, is_root) {
                Ok(f) => Ok(f),
                Err(e) if arg.qr_fallback => factor_node_qr(ms, n, sw, &children, arg.reg_prim).map_err(|_| e),
                Err(e) => Err(e),
            }
        }?;
        nodes[n] = Some(f);
    }
    Ok(nodes.into_iter().map(Option::unwrap).collect())
}

fn split_full_factor(l: &Mat, nu: usize, nx: usize) -> (Mat, Mat, Mat) {
    (l.block(0, 0, nu, nu), l.block(nu, 0, nx, nu), l.block(nu, nu, nx, nx))
}

fn gain(luu: &Mat, lxu: &Mat) -> Result<Mat, LinalgError> {
    let mut k = linalg::solve_triangular(luu, &lxu.transpose(), true)?;
    k.scale(-1.0);
    Ok(k)
}

fn factor_node(
    ms: &MultiStage,
    n: usize,
    sw: StageWeights,
    children: &[(Mat, &NodeFactor)],
    arg: &RiccatiArg,
    is_root: bool,
) -> Result<NodeFactor, KktError> {
    let st = &ms.stages[n];
    let (nu, nx) = (st.nu, st.nx);
    let fail = KktError::factorization(n);
    let mut m = sw.reduced_hessian(st, arg.reg_prim);
    for (ba, cf) in children {
        match &cf.cost {
            CostToGo::Full(p) => {
                let pba = linalg::matmul(p, false, ba, false);
                linalg::gemm(1.0, ba, true, &pba, false, 1.0, &mut m);
            }
            CostToGo::Sqrt(l) => {
                let lba = linalg::matmul(l, true, ba, false);
                let g = linalg::gram(&lba);
                m.add_block(0, 0, &g);
            }
        }
    }
    match arg.variant {
        RiccatiVariant::Classical => {
            let luu = linalg::cholesky_factor(&m.block(0, 0, nu, nu), 0.0).map_err(fail)?;
            let w = linalg::solve_triangular(&luu, &m.block(0, nu, nu, nx), false).map_err(KktError::factorization(n))?;
            let mut p = m.block(nu, nu, nx, nx);
            linalg::gemm(-1.0, &w, true, &w, false, 1.0, &mut p);
            p.symmetrize();
            let lxu = w.transpose();
            let k = gain(&luu, &lxu).map_err(KktError::factorization(n))?;
            let root_factor = if is_root {
                Some(linalg::cholesky_factor(&p, 0.0).map_err(KktError::factorization(n))?)
            } else {
                None
            };
            Ok(NodeFactor { sw, luu, k, cost: CostToGo::Full(p), root_factor, qr: false })
        }
        RiccatiVariant::SquareRoot => {
            let l = linalg::cholesky_factor(&m, 0.0).map_err(fail)?;
            let (luu, lxu, lxx) = split_full_factor(&l, nu, nx);
            let k = gain(&luu, &lxu).map_err(KktError::factorization(n))?;
            let root_factor = if is_root { Some(lxx.clone()) } else { None };
            Ok(NodeFactor { sw, luu, k, cost: CostToGo::Sqrt(lxx), root_factor, qr: false })
        }
    }
}

/// Array algorithm: the factor of the stage matrix is read off a QR
/// factorization of stacked square-root rows, never forming `M`.
fn factor_node_qr(
    ms: &MultiStage,
    n: usize,
    sw: StageWeights,
    children: &[(Mat, &NodeFactor)],
    reg: f64,
) -> Result<NodeFactor, KktError> {
    let st = &ms.stages[n];
    let (nu, nx) = (st.nu, st.nx);
    let fail = KktError::factorization(n);
    let lhd = linalg::cholesky_semidefinite(&st.hess, SEMIDEF_TOL).map_err(KktError::factorization(n))?;
    let mut stack = sw.sqrt_rows(st, &lhd, reg);
    for (ba, cf) in children {
        let lc = cf.cost.sqrt_factor().map_err(KktError::factorization(n))?;
        stack = linalg::matmul(&lc, true, ba, false).vstack(&stack);
    }
    let l = linalg::qr_cholesky(&stack).map_err(fail)?.transpose();
    let (luu, lxu, lxx) = split_full_factor(&l, nu, nx);
    let k = gain(&luu, &lxu).map_err(KktError::factorization(n))?;
    let root_factor = if ms.parent[n].is_none() { Some(lxx.clone()) } else { None };
    Ok(NodeFactor { sw, luu, k, cost: CostToGo::Sqrt(lxx), root_factor, qr: true })
}

/// Solves `K Δ = −r` with the factorized recursion.
pub(crate) fn solve_tree(ms: &MultiStage, nodes: &[NodeFactor], r: &KktVec) -> Result<KktVec, KktError> {
    let ly = ms.layout();
    if r.y.len() != ly.ny || r.pi.len() != ly.npi || r.lam.len() != ly.nc || r.t.len() != ly.nc {
        return Err(KktError::DimensionMismatch);
    }
    let nn = ms.num_nodes();
    let mut red: Vec<Option<StageRhs>> = vec![None; nn];
    let mut small_k: Vec<Vec<f64>> = vec![Vec::new(); nn];
    let mut small_p: Vec<Vec<f64>> = vec![Vec::new(); nn];
    let rb = |m: usize| {
        let s = &ly.stages[m];
        let o = s.pi_off.unwrap();
        &r.pi[o..o + s.nx]
    };
    for n in (0..nn).rev() {
        let st = &ms.stages[n];
        let sl = &ly.stages[n];
        let (y, c) = (sl.y_off..sl.y_off + sl.ny(), sl.c_off..sl.c_off + sl.nc());
        let nf = &nodes[n];
        let rr = nf.sw.reduce_rhs(st, &r.y[y], &r.lam[c.clone()], &r.t[c]);
        let mut m = rr.gz.clone();
        for &ch in &ms.children[n] {
            let ba = dyn_matrix(ms, ch);
            let mut v = nodes[ch].cost.mul_vec(rb(ch));
            linalg::axpy(1.0, &small_p[ch], &mut v);
            linalg::gemv(1.0, &ba, &v, 1.0, &mut m, true);
        }
        let (nu, nx) = (st.nu, st.nx);
        let ku = linalg::cholesky_solve_vec(&nf.luu, &m[..nu]).map_err(KktError::factorization(n))?;
        small_k[n] = ku.iter().map(|v| -v).collect();
        let mut p = m[nu..nu + nx].to_vec();
        linalg::gemv(1.0, &nf.k, &m[..nu], 1.0, &mut p, true);
        small_p[n] = p;
        red[n] = Some(rr);
    }
    let mut out = KktVec::zeros(ly.ny, ly.npi, ly.nc);
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); nn];
    for n in 0..nn {
        let st = &ms.stages[n];
        let sl = &ly.stages[n];
        let nf = &nodes[n];
        if ms.parent[n].is_none() {
            let lp = nf.root_factor.as_ref().expect("root factor");
            let x0 = if sl.nx > 0 {
                linalg::cholesky_solve_vec(lp, &small_p[n]).map_err(KktError::factorization(n))?
            } else {
                Vec::new()
            };
            xs[n] = x0.iter().map(|v| -v).collect();
        }
        let x = std::mem::take(&mut xs[n]);
        let mut u = small_k[n].clone();
        linalg::gemv(1.0, &nf.k, &x, 1.0, &mut u, false);
        let dz: Vec<f64> = u.iter().chain(&x).copied().collect();
        for &ch in &ms.children[n] {
            let d = ms.dynamics[ch].as_ref().unwrap();
            let mut xc = d.apply(&u, &x);
            linalg::axpy(1.0, rb(ch), &mut xc);
            let mut pi = nodes[ch].cost.mul_vec(&xc);
            linalg::axpy(1.0, &small_p[ch], &mut pi);
            let o = ly.stages[ch].pi_off.unwrap();
            out.pi[o..o + pi.len()].copy_from_slice(&pi);
            xs[ch] = xc;
        }
        let (y, c) = (sl.y_off..sl.y_off + sl.ny(), sl.c_off..sl.c_off + sl.nc());
        nf.sw.recover(
            st,
            red[n].as_ref().unwrap(),
            &dz,
            &r.lam[c.clone()],
            &r.t[c.clone()],
            &mut out.y[y],
            &mut out.lam[c.clone()],
            &mut out.t[c],
        );
    }
    Ok(out)
}
