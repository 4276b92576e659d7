//! Portable dense kernels for fixed-structure matrices (dense, symmetric,
//! triangular, diagonal).
//!
//! All matrices are [`Mat`] values in row-major order. Sparsity inside the
//! blocks is never exploited and no kernel pivots dynamically: the elimination
//! order is always the natural index order. Kernels are pure functions of their
//! inputs apart from the per-thread [`flops`] counter.

mod mat;
pub mod flops;

pub use mat::Mat;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("triangular factor is singular at diagonal index {index}")]
    SingularFactor { index: usize },
    #[error("stacked matrix is rank deficient at column {index}")]
    RankDeficient { index: usize },
    #[error("dimension mismatch in {op}: {detail}")]
    DimensionMismatch { op: &'static str, detail: String },
}

/// Default pivot threshold of [`cholesky_factor`]: fail only on a nonpositive pivot.
pub const DEFAULT_PIVOT_MIN: f64 = 0.0;

/// Relative threshold on `|R_jj| / ‖A e_j‖` below which [`qr_cholesky`] reports rank deficiency.
pub const QR_RANK_TOL: f64 = 10.0 * f64::EPSILON;

fn dim_err(op: &'static str, detail: String) -> LinalgError {
    LinalgError::DimensionMismatch { op, detail }
}

/// `alpha * op(A) * op(B) + beta * C`, where `op` transposes when the flag is set.
pub fn matmul_acc(
    alpha: f64,
    a: &Mat,
    b: &Mat,
    beta: f64,
    c: &Mat,
    trans_a: bool,
    trans_b: bool,
) -> Result<Mat, LinalgError> {
    let (m, ka) = if trans_a { (a.cols(), a.rows()) } else { a.shape() };
    let (kb, n) = if trans_b { (b.cols(), b.rows()) } else { b.shape() };
    if ka != kb || c.shape() != (m, n) {
        return Err(dim_err(
            "matmul_acc",
            format!("op(A) {}x{}, op(B) {}x{}, C {}x{}", m, ka, kb, n, c.rows(), c.cols()),
        ));
    }
    let mut out = c.clone();
    gemm(alpha, a, trans_a, b, trans_b, beta, &mut out);
    Ok(out)
}

/// In-place `C ← alpha * op(A) * op(B) + beta * C`. Panics on shape mismatch.
pub fn gemm(alpha: f64, a: &Mat, trans_a: bool, b: &Mat, trans_b: bool, beta: f64, c: &mut Mat) {
    let at;
    let a = if trans_a {
        at = a.transpose();
        &at
    } else {
        a
    };
    let bt;
    let b = if trans_b {
        bt = b.transpose();
        &bt
    } else {
        b
    };
    let (m, k) = a.shape();
    let n = b.cols();
    assert_eq!(b.rows(), k, "gemm: inner dimension mismatch");
    assert_eq!(c.shape(), (m, n), "gemm: output shape mismatch");
    if beta != 1.0 {
        c.scale(beta);
    }
    if alpha == 0.0 {
        return;
    }
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let s = alpha * aip;
            for (cj, bj) in crow.iter_mut().zip(b.row(p)) {
                *cj += s * bj;
            }
        }
    }
    flops::add(2 * (m * n * k) as u64);
}

/// `op(A) * op(B)`.
pub fn matmul(a: &Mat, trans_a: bool, b: &Mat, trans_b: bool) -> Mat {
    let m = if trans_a { a.cols() } else { a.rows() };
    let n = if trans_b { b.rows() } else { b.cols() };
    let mut c = Mat::zeros(m, n);
    gemm(1.0, a, trans_a, b, trans_b, 0.0, &mut c);
    c
}

/// `y ← alpha * op(A) x + beta * y`.
pub fn gemv(alpha: f64, a: &Mat, x: &[f64], beta: f64, y: &mut [f64], trans: bool) {
    let (m, n) = a.shape();
    if trans {
        assert!(x.len() == m && y.len() == n, "gemv: shape mismatch");
        if beta != 1.0 {
            y.iter_mut().for_each(|v| *v *= beta);
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let s = alpha * xi;
            for (yj, aij) in y.iter_mut().zip(a.row(i)) {
                *yj += s * aij;
            }
        }
    } else {
        assert!(x.len() == n && y.len() == m, "gemv: shape mismatch");
        for (i, yi) in y.iter_mut().enumerate() {
            let dot: f64 = a.row(i).iter().zip(x).map(|(p, q)| p * q).sum();
            *yi = alpha * dot + beta * *yi;
        }
    }
    flops::add(2 * (m * n) as u64);
}

/// `AᵀA` without explicit transposition.
pub fn gram(a: &Mat) -> Mat {
    let (m, n) = a.shape();
    let mut g = Mat::zeros(n, n);
    for p in 0..m {
        let r = a.row(p);
        for i in 0..n {
            if r[i] == 0.0 {
                continue;
            }
            let gi = g.row_mut(i);
            for j in 0..=i {
                gi[j] += r[i] * r[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    flops::add((m * n * (n + 1)) as u64);
    g
}

/// Lower Cholesky factor `L` with `L Lᵀ = M + reg I`.
///
/// Only the lower triangle of `M` is read. Fails with
/// [`LinalgError::NotPositiveDefinite`] on a pivot `<= DEFAULT_PIVOT_MIN`.
pub fn cholesky_factor(m: &Mat, reg: f64) -> Result<Mat, LinalgError> {
    cholesky_factor_with(m, reg, DEFAULT_PIVOT_MIN)
}

/// [`cholesky_factor`] with an explicit pivot threshold.
pub fn cholesky_factor_with(m: &Mat, reg: f64, pivot_min: f64) -> Result<Mat, LinalgError> {
    if !m.is_square() {
        return Err(dim_err("cholesky_factor", format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let n = m.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j);
        let mut d = m[(j, j)] + reg - lj[..j].iter().map(|x| x * x).sum::<f64>();
        if !(d > pivot_min) {
            if d.is_nan() {
                d = f64::NAN;
            }
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s: f64 = l.row(i)[..j].iter().zip(&l.row(j)[..j]).map(|(a, b)| a * b).sum();
            l[(i, j)] = (m[(i, j)] - s) / djj;
        }
    }
    flops::add((n * n * n / 3 + n * n) as u64);
    Ok(l)
}

/// Cholesky factor of a symmetric positive *semi*definite matrix.
///
/// A pivot below `rel_tol * max_i |M_ii|` is treated as an exact zero and its
/// column of `L` is cleared; a pivot below the negated threshold fails with
/// [`LinalgError::NotPositiveDefinite`]. `L Lᵀ` reproduces `M` up to the
/// discarded pivots.
pub fn cholesky_semidefinite(m: &Mat, rel_tol: f64) -> Result<Mat, LinalgError> {
    if !m.is_square() {
        return Err(dim_err("cholesky_semidefinite", format!("{}x{} is not square", m.rows(), m.cols())));
    }
    let n = m.rows();
    let scale = m.diag().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let thr = rel_tol * scale.max(f64::MIN_POSITIVE);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let d = m[(j, j)] - l.row(j)[..j].iter().map(|x| x * x).sum::<f64>();
        if d.is_nan() || d < -thr {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        if d <= thr {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s: f64 = l.row(i)[..j].iter().zip(&l.row(j)[..j]).map(|(a, b)| a * b).sum();
            l[(i, j)] = (m[(i, j)] - s) / djj;
        }
    }
    flops::add((n * n * n / 3 + n * n) as u64);
    Ok(l)
}

/// Solves `L X = B` (or `Lᵀ X = B` when `transpose` is set) for lower-triangular `L`.
pub fn solve_triangular(l: &Mat, b: &Mat, transpose: bool) -> Result<Mat, LinalgError> {
    let n = l.rows();
    if !l.is_square() || b.rows() != n {
        return Err(dim_err(
            "solve_triangular",
            format!("L {}x{}, B {}x{}", l.rows(), l.cols(), b.rows(), b.cols()),
        ));
    }
    if let Some(index) = (0..n).find(|&i| l[(i, i)] == 0.0) {
        return Err(LinalgError::SingularFactor { index });
    }
    let k = b.cols();
    let mut x = b.clone();
    if !transpose {
        for i in 0..n {
            for p in 0..i {
                let lip = l[(i, p)];
                if lip == 0.0 {
                    continue;
                }
                for c in 0..k {
                    let v = x[(p, c)];
                    x[(i, c)] -= lip * v;
                }
            }
            let d = l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
    } else {
        for i in (0..n).rev() {
            for p in i + 1..n {
                let lpi = l[(p, i)];
                if lpi == 0.0 {
                    continue;
                }
                for c in 0..k {
                    let v = x[(p, c)];
                    x[(i, c)] -= lpi * v;
                }
            }
            let d = l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
    }
    flops::add((n * n * k) as u64);
    Ok(x)
}

/// Vector form of [`solve_triangular`].
pub fn solve_triangular_vec(l: &Mat, b: &[f64], transpose: bool) -> Result<Vec<f64>, LinalgError> {
    solve_triangular(l, &Mat::column(b), transpose).map(Mat::into_vec)
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve_vec(l: &Mat, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let y = solve_triangular_vec(l, b, false)?;
    solve_triangular_vec(l, &y, true)
}

/// Upper-triangular `R` (nonnegative diagonal) with `RᵀR = AᵀA`, computed by
/// Householder triangularization of `A` so that `AᵀA` is never formed.
///
/// Fails with [`LinalgError::RankDeficient`] when `|R_jj| <= QR_RANK_TOL * ‖A e_j‖`.
pub fn qr_cholesky(astack: &Mat) -> Result<Mat, LinalgError> {
    let (m, n) = astack.shape();
    if m < n {
        return Err(dim_err("qr_cholesky", format!("{}x{} has fewer rows than columns", m, n)));
    }
    let col_norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| astack[(i, j)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut a = astack.clone();
    householder_in_place(&mut a, None);
    let mut r = Mat::zeros(n, n);
    for i in 0..n {
        let sign = if a[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in i..n {
            r[(i, j)] = sign * a[(i, j)];
        }
    }
    for (j, &cn) in col_norms.iter().enumerate() {
        if !(r[(j, j)] > QR_RANK_TOL * cn) {
            return Err(LinalgError::RankDeficient { index: j });
        }
    }
    flops::add((2 * m * n * n).saturating_sub(2 * n * n * n / 3) as u64);
    Ok(r)
}

/// Full Householder QR: returns `(Q, R)` with `Q` orthogonal `m×m`, `R` upper `m×n`, `A = Q R`.
pub fn householder_qr(a: &Mat) -> (Mat, Mat) {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = Mat::identity(m);
    householder_in_place(&mut r, Some(&mut q));
    for i in 0..m {
        for j in 0..n.min(i) {
            r[(i, j)] = 0.0;
        }
    }
    flops::add((4 * m * m * n) as u64);
    (q, r)
}

/// Reduces `a` to upper-triangular form with Householder reflections applied in
/// natural column order. When `q` is given it accumulates `Q` (initially identity)
/// such that the original `a = Q * a_out`.
fn householder_in_place(a: &mut Mat, mut q: Option<&mut Mat>) {
    let (m, n) = a.shape();
    let mut v = vec![0.0; m];
    for k in 0..n.min(m) {
        let norm = (k..m).map(|i| a[(i, k)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(k, k)] >= 0.0 { -norm } else { norm };
        for i in k..m {
            v[i] = a[(i, k)];
        }
        v[k] -= alpha;
        let vnorm2: f64 = (k..m).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let s: f64 = (k..m).map(|i| v[i] * a[(i, j)]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..m {
                a[(i, j)] -= s * v[i];
            }
        }
        if let Some(q) = q.as_deref_mut() {
            // Q ← Q H_k
            for i in 0..m {
                let s: f64 = (k..m).map(|p| q[(i, p)] * v[p]).sum::<f64>() * 2.0 / vnorm2;
                for p in k..m {
                    q[(i, p)] -= s * v[p];
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
