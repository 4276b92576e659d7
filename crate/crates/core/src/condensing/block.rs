//! Condensing of a contiguous range of OCP stages into a single stage, and
//! the inverse expansion.
//!
//! Inside a block the variables are ordered `[x_s (if kept), u_s, …, u_last]`.
//! Every state `x_n` of the block is the affine function `Γ_n v + x̄_n` of
//! this vector, and `Γ_n` is nonzero only on the columns that precede `u_n`.

use crate::linalg::{self, Mat};
use crate::qp_data::multistage::{Dynamics, MultiStage};
use crate::qp_data::{QpSolution, Stage, INF_BOUND};

use super::{CondensingError, CondensingVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Route {
    /// Row index in the condensed stage (box rows first, then general rows).
    Row(usize),
    /// Constant row on the fixed initial state.
    Dropped,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockMap {
    pub s: usize,
    pub last: usize,
    pub keep_x: bool,
    pub x_fixed: Vec<f64>,
    /// Column of `u_n` in the internal ordering, for `n = s..=last`.
    pub ucol: Vec<usize>,
    /// Position in the condensed stage of each internal variable.
    pub pos: Vec<usize>,
    pub routes: Vec<Vec<Route>>,
    pub slacks: Vec<Vec<usize>>,
    pub nv: usize,
    pub nrows: usize,
    pub ns: usize,
    /// Constant dropped from the objective.
    pub obj_offset: f64,
}

pub(crate) struct CondensedBlock {
    pub stage: Stage,
    /// Dynamics from the block's kept state and inputs to the first state of
    /// the next block.
    pub dyn_out: Option<Dynamics>,
    pub map: BlockMap,
}

fn shift(bound: f64, off: f64) -> f64 {
    if bound.abs() >= INF_BOUND {
        bound
    } else {
        bound - off
    }
}

/// Values of the initial state when every state of stage `s` is fixed by an
/// active box row with equal bounds.
pub(crate) fn fixed_state(st: &Stage) -> Option<Vec<f64>> {
    let mut mask = vec![0.0; st.nc()];
    st.eff_mask(&mut mask);
    let m = st.nrows();
    let mut x = vec![None; st.nx];
    for (i, &j) in st.idxb.iter().enumerate() {
        if j >= st.nu && mask[i] != 0.0 && mask[m + i] != 0.0 && st.lb[i] == st.ub[i] {
            x[j - st.nu] = Some(st.lb[i]);
        }
    }
    x.into_iter().collect()
}

/// `[A M | B]` for the next state's prediction operator.
fn propagate(d: &Dynamics, gamma: &Mat) -> Mat {
    let ag = linalg::matmul(&d.a, false, gamma, false);
    ag.hstack(&d.b)
}

struct BoxRow {
    var: usize,
    lb: f64,
    ub: f64,
    src: (usize, usize),
}

struct GenRow {
    row: Vec<f64>,
    lb: f64,
    ub: f64,
    src: (usize, usize),
}

/// Condenses stages `s..=last`. The output stage has `nu = Σ nu_n` and
/// `nx = nx_s` (inputs first) when `partial`, otherwise `nu = nv`, `nx = 0`
/// with the kept state first.
pub(crate) fn condense_block(
    ms: &MultiStage,
    s: usize,
    last: usize,
    keep_x: bool,
    partial: bool,
    variant: CondensingVariant,
) -> Result<CondensedBlock, CondensingError> {
    let st = |n: usize| &ms.stages[n];
    let dynf = |n: usize| ms.dynamics[n + 1].as_ref().expect("stage has successor");
    let nx_s = st(s).nx;
    let x_fixed = if keep_x {
        Vec::new()
    } else {
        fixed_state(st(s)).ok_or(CondensingError::InitialStateNotFixed { stage: s })?
    };
    let xcols = if keep_x { nx_s } else { 0 };
    let nb_stages = last - s + 1;
    let mut ucol = Vec::with_capacity(nb_stages);
    let mut c = xcols;
    for n in s..=last {
        ucol.push(c);
        c += st(n).nu;
    }
    let nv = c;
    let has_next = last + 1 < ms.num_nodes();

    // forward: prediction operators and free response
    let mut gamma: Vec<Mat> = Vec::with_capacity(nb_stages + 1);
    let mut xbar: Vec<Vec<f64>> = Vec::with_capacity(nb_stages + 1);
    gamma.push(if keep_x { Mat::identity(nx_s) } else { Mat::zeros(nx_s, 0) });
    xbar.push(if keep_x { vec![0.0; nx_s] } else { x_fixed.clone() });
    let steps_end = if has_next { last + 1 } else { last };
    for n in s..steps_end {
        let k = n - s;
        let d = dynf(n);
        let g = propagate(d, &gamma[k]);
        let mut xb = d.bvec.clone();
        linalg::gemv(1.0, &d.a, &xbar[k], 1.0, &mut xb, false);
        gamma.push(g);
        xbar.push(xb);
    }

    // backward: Hessian and gradient
    let mut h = Mat::zeros(nv, nv);
    let mut grad = vec![0.0; nv];
    let mut obj_offset = 0.0;
    let mut gnext: Option<Mat> = None; // G_{n+1} (classical) or its factor (square root)
    let mut lam_next: Option<Vec<f64>> = None;
    for n in (s..=last).rev() {
        let k = n - s;
        let stn = st(n);
        let (nu, nx) = (stn.nu, stn.nx);
        let r_mat = stn.hess.block(0, 0, nu, nu);
        let s_mat = stn.hess.block(0, nu, nu, nx);
        let q_mat = stn.hess.block(nu, nu, nx, nx);
        let (huu, f, g_n) = match (&gnext, n < last) {
            (Some(gn), true) => {
                let d = dynf(n);
                match variant {
                    CondensingVariant::Classical => {
                        let gb = linalg::matmul(gn, false, &d.b, false);
                        let ga = linalg::matmul(gn, false, &d.a, false);
                        let mut huu = r_mat;
                        linalg::gemm(1.0, &d.b, true, &gb, false, 1.0, &mut huu);
                        let mut f = s_mat;
                        linalg::gemm(1.0, &d.b, true, &ga, false, 1.0, &mut f);
                        let mut g = q_mat;
                        linalg::gemm(1.0, &d.a, true, &ga, false, 1.0, &mut g);
                        g.symmetrize();
                        (huu, f, g)
                    }
                    CondensingVariant::SquareRoot => {
                        let lb = linalg::matmul(gn, true, &d.b, false);
                        let la = linalg::matmul(gn, true, &d.a, false);
                        let mut huu = r_mat;
                        huu.add_block(0, 0, &linalg::gram(&lb));
                        let mut f = s_mat;
                        linalg::gemm(1.0, &lb, true, &la, false, 1.0, &mut f);
                        let mut g = q_mat;
                        g.add_block(0, 0, &linalg::gram(&la));
                        (huu, f, g)
                    }
                }
            }
            _ => (r_mat, s_mat, q_mat),
        };
        let u0 = ucol[k];
        h.add_block(u0, u0, &huu);
        if u0 > 0 && nu > 0 {
            let fg = linalg::matmul(&f, false, &gamma[k], false);
            h.add_block(u0, 0, &fg);
            h.add_block(0, u0, &fg.transpose());
        }
        if n == s && keep_x {
            h.add_block(0, 0, &g_n);
        }

        let xb = &xbar[k];
        let mut gu = stn.grad[..nu].to_vec();
        linalg::gemv(1.0, &s_mat_of(stn), xb, 1.0, &mut gu, false);
        let mut gx = stn.grad[nu..].to_vec();
        let qx = stn.hess.block(nu, nu, nx, nx).mul_vec(xb);
        obj_offset += 0.5 * linalg::dot(xb, &qx) + linalg::dot(&stn.grad[nu..], xb);
        linalg::axpy(1.0, &qx, &mut gx);
        if let (Some(ln), true) = (&lam_next, n < last) {
            let d = dynf(n);
            linalg::gemv(1.0, &d.b, ln, 1.0, &mut gu, true);
            linalg::gemv(1.0, &d.a, ln, 1.0, &mut gx, true);
        }
        grad[u0..u0 + nu].copy_from_slice(&gu);
        if n == s && keep_x {
            grad[..nx_s].copy_from_slice(&gx);
        }
        lam_next = Some(gx);

        gnext = if n > s {
            Some(match variant {
                CondensingVariant::Classical => g_n,
                CondensingVariant::SquareRoot => linalg::cholesky_semidefinite(&g_n, crate::kkt_dense::SEMIDEF_TOL)
                    .map_err(|_| CondensingError::FactorizationFailed { stage: n })?,
            })
        } else {
            None
        };
    }
    h.symmetrize();

    // output ordering
    let nu_out: usize = (s..=last).map(|n| st(n).nu).sum();
    let pos: Vec<usize> = if partial {
        (0..nv).map(|i| if i < xcols { nu_out + i } else { i - xcols }).collect()
    } else {
        (0..nv).collect()
    };

    // constraints
    let mut boxes: Vec<BoxRow> = Vec::new();
    let mut gens: Vec<GenRow> = Vec::new();
    let mut routes: Vec<Vec<Route>> = (s..=last).map(|n| vec![Route::Dropped; st(n).nrows()]).collect();
    for n in s..=last {
        let k = n - s;
        let stn = st(n);
        let nu = stn.nu;
        for (i, &j) in stn.idxb.iter().enumerate() {
            let src = (k, i);
            if j < nu {
                boxes.push(BoxRow { var: ucol[k] + j, lb: stn.lb[i], ub: stn.ub[i], src });
            } else if n == s {
                if keep_x {
                    boxes.push(BoxRow { var: j - nu, lb: stn.lb[i], ub: stn.ub[i], src });
                }
            } else {
                let jx = j - nu;
                let mut row = vec![0.0; nv];
                let g = &gamma[k];
                row[..g.cols()].copy_from_slice(g.row(jx));
                let off = xbar[k][jx];
                gens.push(GenRow { row, lb: shift(stn.lb[i], off), ub: shift(stn.ub[i], off), src });
            }
        }
        let nb = stn.nb();
        if stn.ng() > 0 {
            let cmat = stn.gmat.block(0, nu, stn.ng(), stn.nx);
            let cg = linalg::matmul(&cmat, false, &gamma[k], false);
            let cx = cmat.mul_vec(&xbar[k]);
            for r in 0..stn.ng() {
                let mut row = vec![0.0; nv];
                row[..cg.cols()].copy_from_slice(cg.row(r));
                row[ucol[k]..ucol[k] + nu].copy_from_slice(&stn.gmat.row(r)[..nu]);
                gens.push(GenRow { row, lb: shift(stn.lg[r], cx[r]), ub: shift(stn.ug[r], cx[r]), src: (k, nb + r) });
            }
        }
    }
    boxes.sort_by_key(|b| pos[b.var]);
    let nbc = boxes.len();
    let ngc = gens.len();
    for (q, b) in boxes.iter().enumerate() {
        routes[b.src.0][b.src.1] = Route::Row(q);
    }
    for (q, g) in gens.iter().enumerate() {
        routes[g.src.0][g.src.1] = Route::Row(nbc + q);
    }
    let mut soft: Vec<(usize, usize, usize)> = Vec::new();
    for n in s..=last {
        let k = n - s;
        for (j, &i) in st(n).idxs.iter().enumerate() {
            match routes[k][i] {
                Route::Row(r) => soft.push((r, k, j)),
                Route::Dropped => return Err(CondensingError::SoftFixedRow { stage: n, row: i }),
            }
        }
    }
    soft.sort();
    let nsc = soft.len();
    let mut slacks: Vec<Vec<usize>> = (s..=last).map(|n| vec![0; st(n).ns()]).collect();
    for (q, &(_, k, j)) in soft.iter().enumerate() {
        slacks[k][j] = q;
    }

    // assemble the condensed stage
    let (snu, snx) = if partial { (nu_out, nx_s) } else { (nv, 0) };
    let mut out = Stage::new(snu, snx, nbc, ngc, nsc);
    for i in 0..nv {
        out.grad[pos[i]] = grad[i];
        for j in 0..nv {
            out.hess[(pos[i], pos[j])] = h[(i, j)];
        }
    }
    let rowsrc = |k: usize, i: usize| (st(s + k).maskl[i], st(s + k).masku[i]);
    for (q, b) in boxes.iter().enumerate() {
        out.idxb[q] = pos[b.var];
        out.lb[q] = b.lb;
        out.ub[q] = b.ub;
        (out.maskl[q], out.masku[q]) = rowsrc(b.src.0, b.src.1);
    }
    for (q, g) in gens.iter().enumerate() {
        for i in 0..nv {
            out.gmat[(q, pos[i])] = g.row[i];
        }
        out.lg[q] = g.lb;
        out.ug[q] = g.ub;
        (out.maskl[nbc + q], out.masku[nbc + q]) = rowsrc(g.src.0, g.src.1);
    }
    for (q, &(r, k, j)) in soft.iter().enumerate() {
        let stn = st(s + k);
        out.idxs[q] = r;
        out.zl_hess[q] = stn.zl_hess[j];
        out.zu_hess[q] = stn.zu_hess[j];
        out.zl[q] = stn.zl[j];
        out.zu[q] = stn.zu[j];
        out.sl_lb[q] = stn.sl_lb[j];
        out.su_lb[q] = stn.su_lb[j];
    }

    let dyn_out = if partial && has_next {
        let g = &gamma[nb_stages];
        let mut a = Mat::zeros(g.rows(), snx);
        let mut b = Mat::zeros(g.rows(), snu);
        for i in 0..nv {
            let col = g.col_vec(i);
            let (dst, c) = if pos[i] >= snu { (&mut a, pos[i] - snu) } else { (&mut b, pos[i]) };
            for (r, v) in col.into_iter().enumerate() {
                dst[(r, c)] = v;
            }
        }
        Some(Dynamics { a, b, bvec: xbar[nb_stages].clone() })
    } else {
        None
    };

    let map = BlockMap {
        s,
        last,
        keep_x,
        x_fixed,
        ucol,
        pos,
        routes,
        slacks,
        nv,
        nrows: nbc + ngc,
        ns: nsc,
        obj_offset,
    };
    Ok(CondensedBlock { stage: out, dyn_out, map })
}

fn s_mat_of(st: &Stage) -> Mat {
    st.hess.block(0, st.nu, st.nu, st.nx)
}

/// Solution of one condensed stage, in the condensed stage's ordering.
pub(crate) struct BlockSolution<'a> {
    pub z: &'a [f64],
    pub sl: &'a [f64],
    pub su: &'a [f64],
    pub lam: &'a [f64],
    pub t: &'a [f64],
}

/// Writes stages `s..=last` of `sol` from the condensed block solution.
/// `pi_next` is the multiplier of the dynamics leaving the block, if any.
/// Multipliers of the dynamics inside the block are rebuilt by the costate
/// recursion; the one entering stage `s` is left to the caller.
pub(crate) fn expand_block(ms: &MultiStage, bm: &BlockMap, bs: &BlockSolution, pi_next: Option<&[f64]>, sol: &mut QpSolution) {
    let ly = &ms.layout;
    let v: Vec<f64> = (0..bm.nv).map(|i| bs.z[bm.pos[i]]).collect();
    let mut x = if bm.keep_x { v[..ms.stages[bm.s].nx].to_vec() } else { bm.x_fixed.clone() };
    let (mc, nsc) = (bm.nrows, bm.ns);
    for n in bm.s..=bm.last {
        let k = n - bm.s;
        let stn = &ms.stages[n];
        let sl = &ly.stages[n];
        let (nu, nz, ns, m) = (stn.nu, stn.nz(), stn.ns(), stn.nrows());
        let u = &v[bm.ucol[k]..bm.ucol[k] + nu];
        let y = &mut sol.y[sl.y_off..sl.y_off + sl.ny()];
        y[..nu].copy_from_slice(u);
        y[nu..nz].copy_from_slice(&x);
        for j in 0..ns {
            let q = bm.slacks[k][j];
            y[nz + j] = bs.sl[q];
            y[nz + ns + j] = bs.su[q];
        }
        let c0 = sl.c_off;
        for i in 0..m {
            if let Route::Row(r) = bm.routes[k][i] {
                sol.lam[c0 + i] = bs.lam[r];
                sol.t[c0 + i] = bs.t[r];
                sol.lam[c0 + m + i] = bs.lam[mc + r];
                sol.t[c0 + m + i] = bs.t[mc + r];
            }
        }
        for j in 0..ns {
            let q = bm.slacks[k][j];
            for (dst, src) in [(2 * m + j, 2 * mc + q), (2 * m + ns + j, 2 * mc + nsc + q)] {
                sol.lam[c0 + dst] = bs.lam[src];
                sol.t[c0 + dst] = bs.t[src];
            }
        }
        if n < bm.last {
            let d = ms.dynamics[n + 1].as_ref().unwrap();
            let mut xn = d.apply(u, &x);
            linalg::axpy(1.0, &d.bvec, &mut xn);
            x = xn;
        }
    }

    // costate recursion
    let mut pi_after: Option<Vec<f64>> = pi_next.map(<[f64]>::to_vec);
    for n in (bm.s..=bm.last).rev() {
        let k = n - bm.s;
        let stn = &ms.stages[n];
        let sl = &ly.stages[n];
        let (nu, nz, m) = (stn.nu, stn.nz(), stn.nrows());
        let c = sl.c_off..sl.c_off + sl.nc();
        let mut mask = vec![0.0; sl.nc()];
        stn.eff_mask(&mut mask);
        let dropped: Vec<usize> = (0..m).filter(|&i| bm.routes[k][i] == Route::Dropped).collect();
        let y = &sol.y[sl.y_off..sl.y_off + sl.ny()];
        let mut e = vec![0.0; sl.ny()];
        stn.gradient(&mut e);
        stn.hess_mul_add(y, &mut e);
        let neg: Vec<f64> = (0..sl.nc())
            .map(|r| if r < 2 * m && dropped.contains(&(r % m)) { 0.0 } else { -sol.lam[c.start + r] * mask[r] })
            .collect();
        stn.ineq_tmul_add(&neg, &mut e);
        let mut ex = e[nu..nz].to_vec();
        if let (Some(p), Some(d)) = (&pi_after, ms.dynamics.get(n + 1).and_then(Option::as_ref)) {
            linalg::gemv(1.0, &d.a, p, 1.0, &mut ex, true);
        }
        if n > bm.s {
            let o = sl.pi_off.unwrap();
            sol.pi[o..o + ex.len()].copy_from_slice(&ex);
        }
        if !dropped.is_empty() {
            let mut cy = vec![0.0; sl.nc()];
            stn.ineq_mul(y, &mut cy);
            let mut d = vec![0.0; sl.nc()];
            stn.ineq_rhs(&mut d);
            for &i in &dropped {
                let j = stn.idxb[i] - nu;
                sol.lam[c.start + i] = ex[j].max(0.0);
                sol.lam[c.start + m + i] = (-ex[j]).max(0.0);
                sol.t[c.start + i] = cy[i] - d[i];
                sol.t[c.start + m + i] = cy[m + i] - d[m + i];
                ex[j] = 0.0;
            }
        }
        pi_after = Some(ex);
    }
}
