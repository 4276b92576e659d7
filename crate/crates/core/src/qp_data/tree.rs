use super::fields::FieldValue;
use super::multistage::MultiStage;
use super::ocp::OcpQp;
use super::{QpError, Violation};

/// Dimensions of a tree-structured OCP QP. Node `0` is the root; every other
/// node names its parent, which must have a smaller index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeOcpQpDim {
    pub parent: Vec<Option<usize>>,
    pub nx: Vec<usize>,
    pub nu: Vec<usize>,
    pub nb: Vec<usize>,
    pub ng: Vec<usize>,
    pub ns: Vec<usize>,
}

impl TreeOcpQpDim {
    pub fn new(
        parent: Vec<Option<usize>>,
        nx: Vec<usize>,
        nu: Vec<usize>,
        nb: Vec<usize>,
        ng: Vec<usize>,
        ns: Vec<usize>,
    ) -> Self {
        Self { parent, nx, nu, nb, ng, ns }
    }

    /// Parent list of a robust-MPC scenario tree: every node in the first
    /// `n_robust` levels branches into `n_real` children, later nodes have
    /// one child, and the depth is `n_horizon`.
    pub fn scenario_parents(n_horizon: usize, n_robust: usize, n_real: usize) -> Vec<Option<usize>> {
        let mut parent = vec![None];
        let mut level = vec![0usize];
        for k in 0..n_horizon {
            let branch = if k < n_robust { n_real } else { 1 };
            let mut next = Vec::with_capacity(level.len() * branch);
            for &p in &level {
                for _ in 0..branch {
                    next.push(parent.len());
                    parent.push(Some(p));
                }
            }
            level = next;
        }
        parent
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }
}

/// OCP QP over a tree of nodes; the dynamics `x_m = A_m x_p + B_m u_p + b_m`
/// are attached to each non-root node `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeOcpQp {
    pub(crate) dim: TreeOcpQpDim,
    pub(crate) ms: MultiStage,
}

impl TreeOcpQp {
    pub fn create(dim: &TreeOcpQpDim) -> Result<Self, QpError> {
        let ms = MultiStage::new(&dim.parent, &dim.nx, &dim.nu, &dim.nb, &dim.ng, &dim.ns)?;
        Ok(Self { dim: dim.clone(), ms })
    }

    /// The chain-shaped tree holding the same data as `ocp`.
    pub fn from_ocp(ocp: &OcpQp) -> Self {
        let d = ocp.dim();
        let dim = TreeOcpQpDim {
            parent: (0..=d.n).map(|n| n.checked_sub(1)).collect(),
            nx: d.nx.clone(),
            nu: d.nu.clone(),
            nb: d.nb.clone(),
            ng: d.ng.clone(),
            ns: d.ns.clone(),
        };
        Self { dim, ms: ocp.ms.clone() }
    }

    pub fn dim(&self) -> &TreeOcpQpDim {
        &self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.ms.num_nodes()
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.ms.children[node]
    }

    /// Stage fields address node `node`; `A`, `B`, `b` address the dynamics
    /// leading into `node` from its parent.
    pub fn set_field(&mut self, name: &str, node: usize, value: impl Into<FieldValue>) -> Result<(), QpError> {
        let value = value.into();
        if matches!(name, "A" | "B" | "b") {
            self.ms.set_dynamics_field(name, node, &value)
        } else {
            self.ms.set_stage_field(name, node, &value)
        }
    }

    pub fn get_field(&self, name: &str, node: usize) -> Result<FieldValue, QpError> {
        if matches!(name, "A" | "B" | "b") {
            self.ms.get_dynamics_field(name, node)
        } else {
            self.ms.get_stage_field(name, node)
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        self.ms.validate()
    }
}

super::multistage::delegate_structure!(TreeOcpQp);
