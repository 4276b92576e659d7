//! Elimination of state variables from an OCP QP.
//!
//! Full condensing produces a dense QP over `(x0 if kept, u0, …, uN)`;
//! partial condensing groups stages into blocks and produces a shorter OCP
//! QP whose stage inputs are the stacked block inputs. Both run in time
//! quadratic in the number of condensed stages. Solutions are mapped back
//! with a forward rollout of the dynamics and a backward costate recursion
//! for the equality multipliers.

mod block;

use thiserror::Error;

use crate::qp_data::{DenseQp, DenseQpDim, OcpQp, OcpQpDim, QpSolution, QpStructure};

use block::{BlockMap, BlockSolution};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CondensingError {
    #[error("block size must be at least 1, got {0}")]
    InvalidBlockSize(usize),
    #[error("stage {stage}: the initial state is not fixed by equal bounds on every component")]
    InitialStateNotFixed { stage: usize },
    #[error("stage {stage}: soft constraint on fixed-state row {row}")]
    SoftFixedRow { stage: usize, row: usize },
    #[error("stage {stage}: state cost-to-go is not positive semidefinite")]
    FactorizationFailed { stage: usize },
    #[error("solution does not match the condensed problem")]
    DimensionMismatch,
}

/// How the state cost-to-go of the Hessian recursion is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CondensingVariant {
    /// Explicit matrices; accepts indefinite state Hessians.
    #[default]
    Classical,
    /// Cholesky factors with Gram-matrix updates; needs positive
    /// semidefinite state Hessians.
    SquareRoot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MapKind {
    Full,
    Partial,
}

/// Records how an OCP QP was condensed, for mapping solutions back.
#[derive(Clone, Debug)]
pub struct CondensingMap {
    kind: MapKind,
    blocks: Vec<BlockMap>,
    horizon: usize,
}

impl CondensingMap {
    /// First stage of every block, followed by `N + 1`.
    pub fn block_bounds(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.blocks.iter().map(|bm| bm.s).collect();
        b.push(self.horizon + 1);
        b
    }

    /// Whether the initial state is a variable of the condensed problem.
    pub fn keeps_x0(&self) -> bool {
        self.blocks[0].keep_x
    }

    /// Constant to add to the condensed objective to obtain the OCP objective.
    pub fn objective_offset(&self) -> f64 {
        self.blocks.iter().map(|b| b.obj_offset).sum()
    }
}

/// Whether every state of stage 0 is fixed by an active box row with equal bounds.
pub fn x0_is_fixed(qp: &OcpQp) -> bool {
    qp.ms.stages[0].nx == 0 || block::fixed_state(&qp.ms.stages[0]).is_some()
}

pub fn condense(qp: &OcpQp, keep_x0: bool) -> Result<(DenseQp, CondensingMap), CondensingError> {
    condense_with(qp, keep_x0, CondensingVariant::Classical)
}

/// Full condensing. With `keep_x0 = false` the initial state must be fixed
/// by equal bounds; those bound rows are then dropped.
pub fn condense_with(
    qp: &OcpQp,
    keep_x0: bool,
    variant: CondensingVariant,
) -> Result<(DenseQp, CondensingMap), CondensingError> {
    let n = qp.horizon();
    let cb = block::condense_block(&qp.ms, 0, n, keep_x0, false, variant)?;
    let bm = cb.map;
    let dim = DenseQpDim::new(bm.nv, 0, cb.stage.nb(), cb.stage.ng(), cb.stage.ns());
    let mut dense = DenseQp::create(&dim).expect("consistent condensed dimensions");
    dense.stage = cb.stage;
    Ok((dense, CondensingMap { kind: MapKind::Full, blocks: vec![bm], horizon: n }))
}

/// Maps a solution of the condensed dense QP back to the OCP QP.
pub fn expand_solution(sol: &QpSolution, map: &CondensingMap, qp: &OcpQp) -> Result<QpSolution, CondensingError> {
    if map.kind != MapKind::Full || map.horizon != qp.horizon() {
        return Err(CondensingError::DimensionMismatch);
    }
    let bm = &map.blocks[0];
    let (nv, ns, m) = (bm.nv, bm.ns, bm.nrows);
    let nc = 2 * m + 2 * ns;
    if sol.y.len() != nv + 2 * ns || sol.lam.len() != nc || sol.t.len() != nc {
        return Err(CondensingError::DimensionMismatch);
    }
    let bs = BlockSolution {
        z: &sol.y[..nv],
        sl: &sol.y[nv..nv + ns],
        su: &sol.y[nv + ns..],
        lam: &sol.lam,
        t: &sol.t,
    };
    let mut out = QpSolution::zeros(qp.layout());
    block::expand_block(&qp.ms, bm, &bs, None, &mut out);
    Ok(out)
}

pub fn partial_condense(qp: &OcpQp, block_size: usize) -> Result<(OcpQp, CondensingMap), CondensingError> {
    partial_condense_with(qp, block_size, CondensingVariant::Classical)
}

/// Condenses blocks of `block_size` stages, each keeping its initial state.
/// The horizon becomes `ceil(N / block_size)`; the last block may be shorter
/// and the terminal stage is carried over unchanged.
pub fn partial_condense_with(
    qp: &OcpQp,
    block_size: usize,
    variant: CondensingVariant,
) -> Result<(OcpQp, CondensingMap), CondensingError> {
    if block_size == 0 {
        return Err(CondensingError::InvalidBlockSize(block_size));
    }
    let n = qp.horizon();
    let mut ranges: Vec<(usize, usize)> = (0..n).step_by(block_size).map(|s| (s, (s + block_size).min(n) - 1)).collect();
    ranges.push((n, n));
    let blocks = ranges
        .iter()
        .map(|&(s, last)| block::condense_block(&qp.ms, s, last, true, true, variant))
        .collect::<Result<Vec<_>, _>>()?;
    let np = blocks.len() - 1;
    let dim = OcpQpDim::new(
        np,
        blocks.iter().map(|b| b.stage.nx).collect(),
        blocks.iter().map(|b| b.stage.nu).collect(),
        blocks.iter().map(|b| b.stage.nb()).collect(),
        blocks.iter().map(|b| b.stage.ng()).collect(),
        blocks.iter().map(|b| b.stage.ns()).collect(),
    );
    let mut out = OcpQp::create(&dim).expect("consistent condensed dimensions");
    let mut maps = Vec::with_capacity(blocks.len());
    for (k, b) in blocks.into_iter().enumerate() {
        out.ms.stages[k] = b.stage;
        if let Some(d) = b.dyn_out {
            out.ms.dynamics[k + 1] = Some(d);
        }
        maps.push(b.map);
    }
    Ok((out, CondensingMap { kind: MapKind::Partial, blocks: maps, horizon: n }))
}

/// Maps a solution of the partially condensed QP back to the original QP.
pub fn partial_expand(sol: &QpSolution, map: &CondensingMap, qp: &OcpQp) -> Result<QpSolution, CondensingError> {
    if map.kind != MapKind::Partial || map.horizon != qp.horizon() || sol.layout.stages.len() != map.blocks.len() {
        return Err(CondensingError::DimensionMismatch);
    }
    let ly = &sol.layout;
    for (bm, sl) in map.blocks.iter().zip(&ly.stages) {
        if sl.nz() != bm.nv || sl.ns != bm.ns || sl.nb + sl.ng != bm.nrows {
            return Err(CondensingError::DimensionMismatch);
        }
    }
    if sol.y.len() != ly.ny || sol.pi.len() != ly.npi || sol.lam.len() != ly.nc || sol.t.len() != ly.nc {
        return Err(CondensingError::DimensionMismatch);
    }
    let mut out = QpSolution::zeros(qp.layout());
    let pi_of = |k: usize| ly.stages.get(k).and_then(|s| s.pi_off.map(|o| &sol.pi[o..o + s.nx]));
    for (k, bm) in map.blocks.iter().enumerate() {
        let sl = &ly.stages[k];
        let (nz, ns) = (sl.nz(), sl.ns);
        let y = &sol.y[sl.y_off..sl.y_off + sl.ny()];
        let c = sl.c_off..sl.c_off + sl.nc();
        let bs = BlockSolution {
            z: &y[..nz],
            sl: &y[nz..nz + ns],
            su: &y[nz + ns..],
            lam: &sol.lam[c.clone()],
            t: &sol.t[c],
        };
        block::expand_block(&qp.ms, bm, &bs, pi_of(k + 1), &mut out);
        if let (Some(p), Some(o)) = (pi_of(k), qp.layout().stages[bm.s].pi_off) {
            out.pi[o..o + p.len()].copy_from_slice(p);
        }
    }
    Ok(out)
}
