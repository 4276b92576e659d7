use crate::linalg::{self, norm_inf};

use super::QpError;

/// Position of one stage (or node, or the single dense block) inside the flat
/// primal, equality-multiplier and inequality vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageLayout {
    pub nu: usize,
    pub nx: usize,
    pub nb: usize,
    pub ng: usize,
    pub ns: usize,
    /// Offset of `[u, x, sl, su]` in the primal vector.
    pub y_off: usize,
    /// Offset of this stage's inequalities in `lam` / `t`.
    pub c_off: usize,
    /// Offset of the multipliers of the dynamics that lead *into* this stage.
    pub pi_off: Option<usize>,
}

impl StageLayout {
    pub fn nz(&self) -> usize {
        self.nu + self.nx
    }
    pub fn ny(&self) -> usize {
        self.nz() + 2 * self.ns
    }
    pub fn nc(&self) -> usize {
        2 * (self.nb + self.ng) + 2 * self.ns
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    pub stages: Vec<StageLayout>,
    pub ny: usize,
    pub npi: usize,
    pub nc: usize,
}

/// The four blocks of a vector in the space of the Newton system: primal `y`,
/// equality multipliers `pi`, inequality multipliers `lam` and inequality
/// slacks `t`. Residuals reuse the same shape with `(r_g, r_b, r_d, r_m)` in
/// `(y, pi, lam, t)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct KktVec {
    pub y: Vec<f64>,
    pub pi: Vec<f64>,
    pub lam: Vec<f64>,
    pub t: Vec<f64>,
}

impl KktVec {
    pub fn zeros(ny: usize, npi: usize, nc: usize) -> Self {
        Self { y: vec![0.0; ny], pi: vec![0.0; npi], lam: vec![0.0; nc], t: vec![0.0; nc] }
    }

    pub fn zeros_like(other: &KktVec) -> Self {
        Self::zeros(other.y.len(), other.pi.len(), other.lam.len())
    }

    pub fn same_shape(&self, other: &KktVec) -> bool {
        self.y.len() == other.y.len()
            && self.pi.len() == other.pi.len()
            && self.lam.len() == other.lam.len()
            && self.t.len() == other.t.len()
    }

    fn blocks(&self) -> [&Vec<f64>; 4] {
        [&self.y, &self.pi, &self.lam, &self.t]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.y, &mut self.pi, &mut self.lam, &mut self.t]
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &KktVec) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            linalg::axpy(alpha, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &KktVec) -> KktVec {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }

    pub fn norm_inf(&self) -> f64 {
        self.blocks().iter().map(|b| norm_inf(b)).fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x) })
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &KktVec) -> f64 {
        self.sub(other).norm_inf()
    }

    /// All four blocks concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.y.len() + self.pi.len() + 2 * self.lam.len());
        for b in self.blocks() {
            v.extend_from_slice(b);
        }
        v
    }

    /// Splits a flat vector produced by [`KktVec::to_flat`].
    pub fn from_flat(flat: &[f64], ny: usize, npi: usize, nc: usize) -> Self {
        assert_eq!(flat.len(), ny + npi + 2 * nc);
        Self {
            y: flat[..ny].to_vec(),
            pi: flat[ny..ny + npi].to_vec(),
            lam: flat[ny + npi..ny + npi + nc].to_vec(),
            t: flat[ny + npi + nc..].to_vec(),
        }
    }
}

/// Primal-dual point of a QP together with the layout that maps stages to the
/// flat vectors.
///
/// `lam` and `t` follow the per-stage ordering lower box, lower general, upper
/// box, upper general, lower slack bound, upper slack bound.
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub y: Vec<f64>,
    pub pi: Vec<f64>,
    pub lam: Vec<f64>,
    pub t: Vec<f64>,
    pub layout: Layout,
}

impl QpSolution {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            y: vec![0.0; layout.ny],
            pi: vec![0.0; layout.npi],
            lam: vec![0.0; layout.nc],
            t: vec![0.0; layout.nc],
            layout: layout.clone(),
        }
    }

    pub fn from_kkt(v: KktVec, layout: &Layout) -> Result<Self, QpError> {
        if v.y.len() != layout.ny || v.pi.len() != layout.npi || v.lam.len() != layout.nc || v.t.len() != layout.nc {
            return Err(QpError::DimensionMismatch {
                field: "solution".into(),
                expected: format!("({}, {}, {}, {})", layout.ny, layout.npi, layout.nc, layout.nc),
                found: format!("({}, {}, {}, {})", v.y.len(), v.pi.len(), v.lam.len(), v.t.len()),
            });
        }
        Ok(Self { y: v.y, pi: v.pi, lam: v.lam, t: v.t, layout: layout.clone() })
    }

    pub fn to_kkt(&self) -> KktVec {
        KktVec { y: self.y.clone(), pi: self.pi.clone(), lam: self.lam.clone(), t: self.t.clone() }
    }

    pub fn num_stages(&self) -> usize {
        self.layout.stages.len()
    }

    fn st(&self, n: usize) -> &StageLayout {
        &self.layout.stages[n]
    }

    /// Stage variable block `[u; x]` (for a dense QP, `v`).
    pub fn z(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        &self.y[s.y_off..s.y_off + s.nz()]
    }
    pub fn u(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        &self.y[s.y_off..s.y_off + s.nu]
    }
    pub fn x(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        &self.y[s.y_off + s.nu..s.y_off + s.nz()]
    }
    pub fn sl(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        let o = s.y_off + s.nz();
        &self.y[o..o + s.ns]
    }
    pub fn su(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        let o = s.y_off + s.nz() + s.ns;
        &self.y[o..o + s.ns]
    }
    /// Dense-QP primal variables (alias of `z(0)`).
    pub fn v(&self) -> &[f64] {
        self.z(0)
    }
    /// Multipliers of the dynamics leading into stage/node `n`; for an OCP QP
    /// the dynamics `x_{n+1} = A_n x_n + B_n u_n + b_n` own `pi_into(n + 1)`.
    pub fn pi_into(&self, n: usize) -> Option<&[f64]> {
        let s = self.st(n);
        s.pi_off.map(|o| &self.pi[o..o + s.nx])
    }
    pub fn lam_stage(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        &self.lam[s.c_off..s.c_off + s.nc()]
    }
    pub fn t_stage(&self, n: usize) -> &[f64] {
        let s = self.st(n);
        &self.t[s.c_off..s.c_off + s.nc()]
    }
}

/// Residuals of the KKT conditions at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct QpResiduals {
    /// Stationarity `𝓗y − 𝓐ᵀπ − 𝓒ᵀλ + g`.
    pub r_g: Vec<f64>,
    /// Equality `−𝓐y + b`.
    pub r_b: Vec<f64>,
    /// Inequality `−𝓒y + d + t` (zero on masked rows).
    pub r_d: Vec<f64>,
    /// Complementarity `λ ∘ t` (zero on masked rows).
    pub r_m: Vec<f64>,
    pub res_g: f64,
    pub res_b: f64,
    pub res_d: f64,
    pub res_m: f64,
    /// Duality measure over unmasked rows; zero when there are none.
    pub mu: f64,
}

impl QpResiduals {
    pub fn from_kkt(r: KktVec, mu: f64) -> Self {
        Self {
            res_g: norm_inf(&r.y),
            res_b: norm_inf(&r.pi),
            res_d: norm_inf(&r.lam),
            res_m: norm_inf(&r.t),
            r_g: r.y,
            r_b: r.pi,
            r_d: r.lam,
            r_m: r.t,
            mu,
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.res_g.max(self.res_b).max(self.res_d).max(self.res_m)
    }

    pub fn is_finite(&self) -> bool {
        [self.res_g, self.res_b, self.res_d, self.res_m, self.mu].iter().all(|x| x.is_finite())
    }
}
