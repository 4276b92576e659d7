//! Riccati recursion on tree-structured OCP QPs.
//!
//! Nodes are stored parents-first, so the factorization visits them in
//! reverse storage order (children before parents) and the rollout in storage
//! order. Child contributions are summed in child-index order.

use crate::kkt_dense::KktError;
use crate::kkt_ocp::riccati;
use crate::kkt_ocp::{RiccatiArg, RiccatiFactor};
use crate::qp_data::{self, KktVec, QpStructure, TreeOcpQp};

/// Per-node factorization of a tree QP; same accessors as the chain case,
/// indexed by node.
pub type TreeRiccatiFactor = RiccatiFactor;

pub fn tree_riccati_factor(
    qp: &TreeOcpQp,
    lam: &[f64],
    t: &[f64],
    arg: &RiccatiArg,
) -> Result<TreeRiccatiFactor, KktError> {
    let ly = qp.layout();
    if lam.len() != ly.nc || t.len() != ly.nc {
        return Err(KktError::DimensionMismatch);
    }
    let nodes = riccati::factor_tree(&qp.ms, lam, t, &qp.mask(), arg)?;
    Ok(RiccatiFactor { variant: arg.variant, nodes })
}

/// Returns `Δ` with `K Δ = −r` over all nodes.
pub fn tree_riccati_solve(f: &TreeRiccatiFactor, qp: &TreeOcpQp, r: &KktVec) -> Result<KktVec, KktError> {
    riccati::solve_tree(&qp.ms, &f.nodes, r)
}

/// Product of the Newton matrix with `dir`.
pub fn kkt_apply_tree(qp: &TreeOcpQp, lam: &[f64], t: &[f64], dir: &KktVec) -> KktVec {
    qp_data::kkt_matrix_apply(qp, lam, t, &qp.mask(), dir)
}
