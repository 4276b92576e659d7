//! Problem containers for the three QP types, their solutions and residuals.
//!
//! All three types share one convention: the primal vector stacks, stage by
//! stage, the variable block `z` followed by the lower and upper slacks; the
//! inequality system is written `𝓒 y ≥ d` with rows ordered lower box, lower
//! general, upper box, upper general, lower slack bound, upper slack bound; and
//! equality constraints are written `𝓐 y = b`. For the dynamics of an OCP or
//! tree QP the equality row block of stage `m` (with parent `p`) reads
//! `x_m − A_m x_p − B_m u_p = b_m`, so `r_b` is the dynamics defect.
//!
//! Problem data is reached through `set_field` / `get_field`; the internal
//! storage (a dense stage Hessian over `[u; x]`, a single constraint matrix
//! `[D C]`) is not part of the interface.

mod dense;
mod fields;
pub(crate) mod multistage;
mod ocp;
pub mod oracle;
mod solution;
mod stage;
mod tree;

pub use dense::{DenseQp, DenseQpDim, DENSE_FIELDS};
pub use fields::{FieldKind, FieldValue, STAGE_FIELDS};
pub use multistage::Dynamics;
pub use ocp::{OcpQp, OcpQpDim, OCP_DYNAMICS_FIELDS};
pub use solution::{KktVec, Layout, QpResiduals, QpSolution, StageLayout};
pub use stage::{Stage, INF_BOUND};
pub use tree::{TreeOcpQp, TreeOcpQpDim};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("invalid dimensions: {0}")]
    InvalidDim(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("dimension mismatch for `{field}`: expected {expected}, found {found}")]
    DimensionMismatch { field: String, expected: String, found: String },
    #[error("index {index} out of range for `{field}` (valid: 0..{len})")]
    IndexOutOfRange { field: String, index: usize, len: usize },
}

/// Category of a [`Violation`] reported by `validate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// A Hessian block is not symmetric.
    Asymmetric,
    /// A slack Hessian diagonal entry is negative.
    NegativeSlackPenalty,
    /// An active lower bound exceeds the matching upper bound.
    InvertedBounds,
    /// `idxb` or `idxs` is not strictly increasing or points out of range.
    MalformedIndexSet,
    /// A mask entry is not 0 or 1.
    NonBinaryMask,
    /// Parent indices do not describe a rooted tree with parents first.
    TreeStructure,
    /// A slack lower bound is negative (accepted, reported as a warning).
    NegativeSlackBound,
    /// A data entry is NaN.
    NotFinite,
}

impl ViolationKind {
    /// Structural violations make the problem unusable by the solvers; the
    /// others describe data a solver may still attempt.
    pub fn is_structural(self) -> bool {
        matches!(self, ViolationKind::MalformedIndexSet | ViolationKind::TreeStructure | ViolationKind::NotFinite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub stage: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.stage {
            Some(s) => write!(f, "stage {}: {:?}: {}", s, self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

/// Structured matrix actions of a QP in the form
/// `min ½ yᵀ𝓗y + gᵀy  s.t.  𝓐y = b,  𝓒y ≥ d`.
///
/// Implementations exploit the stage structure; the dense assembly in
/// [`oracle`] materializes the same operators independently.
pub trait QpStructure {
    fn layout(&self) -> &Layout;
    /// `out += 𝓗 y`.
    fn hess_mul_add(&self, y: &[f64], out: &mut [f64]);
    fn gradient(&self) -> Vec<f64>;
    /// `𝓐 y`.
    fn eq_mul(&self, y: &[f64]) -> Vec<f64>;
    /// `out += 𝓐ᵀ π`.
    fn eq_tmul_add(&self, pi: &[f64], out: &mut [f64]);
    fn eq_rhs(&self) -> Vec<f64>;
    /// `𝓒 y`.
    fn ineq_mul(&self, y: &[f64]) -> Vec<f64>;
    /// `out += 𝓒ᵀ λ`.
    fn ineq_tmul_add(&self, lam: &[f64], out: &mut [f64]);
    fn ineq_rhs(&self) -> Vec<f64>;
    /// Effective 0/1 mask per inequality (user masks and infinite bounds).
    fn mask(&self) -> Vec<f64>;
    /// Stage-wise objective value of the primal part of `y`.
    fn objective_of(&self, y: &[f64]) -> f64;
}

/// Linear KKT residuals and the complementarity products at `it`, with masked
/// rows zeroed. `r_m` carries `λ∘t` without any relaxation term.
pub fn residual_vec<Q: QpStructure + ?Sized>(qp: &Q, it: &KktVec, mask: &[f64]) -> KktVec {
    let ly = qp.layout();
    let mut r_g = qp.gradient();
    qp.hess_mul_add(&it.y, &mut r_g);
    let neg_pi: Vec<f64> = it.pi.iter().map(|v| -v).collect();
    qp.eq_tmul_add(&neg_pi, &mut r_g);
    let neg_lam: Vec<f64> = it.lam.iter().zip(mask).map(|(l, m)| -l * m).collect();
    qp.ineq_tmul_add(&neg_lam, &mut r_g);

    let ay = qp.eq_mul(&it.y);
    let r_b: Vec<f64> = qp.eq_rhs().iter().zip(&ay).map(|(b, a)| b - a).collect();

    let cy = qp.ineq_mul(&it.y);
    let d = qp.ineq_rhs();
    let mut r_d = vec![0.0; ly.nc];
    let mut r_m = vec![0.0; ly.nc];
    for k in 0..ly.nc {
        if mask[k] != 0.0 {
            r_d[k] = d[k] - cy[k] + it.t[k];
            r_m[k] = it.lam[k] * it.t[k];
        }
    }
    KktVec { y: r_g, pi: r_b, lam: r_d, t: r_m }
}

/// Residuals of the (unrelaxed) KKT conditions at `sol`.
pub fn compute_residuals<Q: QpStructure + ?Sized>(qp: &Q, sol: &QpSolution) -> Result<QpResiduals, QpError> {
    let ly = qp.layout();
    if sol.y.len() != ly.ny || sol.pi.len() != ly.npi || sol.lam.len() != ly.nc || sol.t.len() != ly.nc {
        return Err(QpError::DimensionMismatch {
            field: "solution".into(),
            expected: format!("(ny {}, npi {}, nc {})", ly.ny, ly.npi, ly.nc),
            found: format!("(ny {}, npi {}, nc {})", sol.y.len(), sol.pi.len(), sol.lam.len()),
        });
    }
    let mask = qp.mask();
    let r = residual_vec(qp, &sol.to_kkt(), &mask);
    let mu = crate::ipm_core::duality_measure(&sol.lam, &sol.t, &mask).mu;
    Ok(QpResiduals::from_kkt(r, mu))
}

/// Action of the unfactorized Newton matrix
///
/// ```text
/// [ 𝓗  −𝓐ᵀ  −𝓒ᵀ  0 ]
/// [ −𝓐  0    0   0 ]
/// [ −𝓒  0    0   I ]
/// [ 0   0    T   Λ ]
/// ```
///
/// at the iterate `(lam, t)`. Masked rows are replaced by identity rows
/// (`Δt` in the third block, `Δλ` in the fourth) and decoupled from the first.
pub fn kkt_matrix_apply<Q: QpStructure + ?Sized>(
    qp: &Q,
    lam: &[f64],
    t: &[f64],
    mask: &[f64],
    dir: &KktVec,
) -> KktVec {
    let nc = qp.layout().nc;
    let mut ry = vec![0.0; qp.layout().ny];
    qp.hess_mul_add(&dir.y, &mut ry);
    let neg_pi: Vec<f64> = dir.pi.iter().map(|v| -v).collect();
    qp.eq_tmul_add(&neg_pi, &mut ry);
    let neg_lam: Vec<f64> = dir.lam.iter().zip(mask).map(|(l, m)| -l * m).collect();
    qp.ineq_tmul_add(&neg_lam, &mut ry);
    let rpi: Vec<f64> = qp.eq_mul(&dir.y).iter().map(|v| -v).collect();
    let cy = qp.ineq_mul(&dir.y);
    let mut rd = vec![0.0; nc];
    let mut rm = vec![0.0; nc];
    for k in 0..nc {
        if mask[k] != 0.0 {
            rd[k] = -cy[k] + dir.t[k];
            rm[k] = t[k] * dir.lam[k] + lam[k] * dir.t[k];
        } else {
            rd[k] = dir.t[k];
            rm[k] = dir.lam[k];
        }
    }
    KktVec { y: ry, pi: rpi, lam: rd, t: rm }
}

/// Objective value `½ yᵀ𝓗y + gᵀy` at the primal part of `sol`.
pub fn objective<Q: QpStructure + ?Sized>(qp: &Q, sol: &QpSolution) -> f64 {
    qp.objective_of(&sol.y)
}
