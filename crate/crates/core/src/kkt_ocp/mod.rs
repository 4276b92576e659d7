//! Riccati-based solution of the Newton system of an OCP QP.
//!
//! Each stage's inequalities and slacks are eliminated with the same
//! operations as the dense solver, then a backward sweep over the stages
//! factorizes the resulting equality-constrained problem. Cost is linear in
//! the horizon length.

pub(crate) mod riccati;

use crate::kkt_dense::KktError;
use crate::linalg::Mat;
use crate::qp_data::{self, KktVec, OcpQp, QpStructure};

use riccati::{CostToGo, NodeFactor};
pub use riccati::{RiccatiArg, RiccatiVariant};

/// Factorized Newton system of a stage-structured problem.
#[derive(Clone, Debug)]
pub struct RiccatiFactor {
    pub(crate) variant: RiccatiVariant,
    pub(crate) nodes: Vec<NodeFactor>,
}

impl RiccatiFactor {
    pub fn variant(&self) -> RiccatiVariant {
        self.variant
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Cost-to-go Hessian of stage (node) `n`.
    pub fn cost_to_go(&self, n: usize) -> Mat {
        self.nodes[n].cost.matrix()
    }

    /// Lower triangular factor of the cost-to-go Hessian, when it is kept in
    /// factored form.
    pub fn cost_to_go_factor(&self, n: usize) -> Option<&Mat> {
        match &self.nodes[n].cost {
            CostToGo::Sqrt(l) => Some(l),
            CostToGo::Full(_) => None,
        }
    }

    /// Cholesky factor of the input block of the stage matrix.
    pub fn input_factor(&self, n: usize) -> &Mat {
        &self.nodes[n].luu
    }

    pub fn gain(&self, n: usize) -> &Mat {
        &self.nodes[n].k
    }

    /// Stages that were factorized by the QR array algorithm.
    pub fn qr_stages(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].qr).collect()
    }
}

/// Factorizes the Newton system at multipliers `lam` and slacks `t`.
pub fn riccati_factor(qp: &OcpQp, lam: &[f64], t: &[f64], arg: &RiccatiArg) -> Result<RiccatiFactor, KktError> {
    let ly = qp.layout();
    if lam.len() != ly.nc || t.len() != ly.nc {
        return Err(KktError::DimensionMismatch);
    }
    let mask = qp.mask();
    let nodes = riccati::factor_tree(&qp.ms, lam, t, &mask, arg)?;
    Ok(RiccatiFactor { variant: arg.variant, nodes })
}

/// Returns `Δ` with `K Δ = −r`.
pub fn riccati_solve(f: &RiccatiFactor, qp: &OcpQp, r: &KktVec) -> Result<KktVec, KktError> {
    riccati::solve_tree(&qp.ms, &f.nodes, r)
}

/// Gains `K[n]` of `u_n = K[n] x_n + k[n]` for stages `0..N`.
pub fn feedback_gains(f: &RiccatiFactor) -> Vec<Mat> {
    let n = f.nodes.len().saturating_sub(1);
    f.nodes[..n].iter().map(|nf| nf.k.clone()).collect()
}

/// Product of the Newton matrix with `dir`.
pub fn kkt_apply_ocp(qp: &OcpQp, lam: &[f64], t: &[f64], dir: &KktVec) -> KktVec {
    qp_data::kkt_matrix_apply(qp, lam, t, &qp.mask(), dir)
}
