use super::fields::{FieldKind, FieldValue};
use super::multistage::{MultiStage, DYNAMICS_FIELDS};
use super::{QpError, Violation};

/// Dimensions of an OCP QP over stages `0..=n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcpQpDim {
    /// Horizon length `N`; there are `N + 1` stages.
    pub n: usize,
    pub nx: Vec<usize>,
    pub nu: Vec<usize>,
    pub nb: Vec<usize>,
    pub ng: Vec<usize>,
    pub ns: Vec<usize>,
}

impl OcpQpDim {
    pub fn new(n: usize, nx: Vec<usize>, nu: Vec<usize>, nb: Vec<usize>, ng: Vec<usize>, ns: Vec<usize>) -> Self {
        Self { n, nx, nu, nb, ng, ns }
    }

    /// Unconstrained dimensions with the same `nx`, `nu` at every stage.
    pub fn uniform(n: usize, nx: usize, nu: usize) -> Self {
        let k = n + 1;
        Self::new(n, vec![nx; k], vec![nu; k], vec![0; k], vec![0; k], vec![0; k])
    }
}

/// Dynamics fields, addressed by the stage they start from (`0..N`).
pub const OCP_DYNAMICS_FIELDS: &[(&str, FieldKind)] = DYNAMICS_FIELDS;

/// Optimal control QP with stage-wise dynamics `x_{n+1} = A_n x_n + B_n u_n + b_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpQp {
    pub(crate) dim: OcpQpDim,
    pub(crate) ms: MultiStage,
}

impl OcpQp {
    pub fn create(dim: &OcpQpDim) -> Result<Self, QpError> {
        let k = dim.n + 1;
        for (name, v) in [("nx", &dim.nx), ("nu", &dim.nu), ("nb", &dim.nb), ("ng", &dim.ng), ("ns", &dim.ns)] {
            if v.len() != k {
                return Err(QpError::InvalidDim(format!("{} has length {}, expected N + 1 = {}", name, v.len(), k)));
            }
        }
        let parent: Vec<Option<usize>> = (0..k).map(|n| n.checked_sub(1)).collect();
        let ms = MultiStage::new(&parent, &dim.nx, &dim.nu, &dim.nb, &dim.ng, &dim.ns)?;
        Ok(Self { dim: dim.clone(), ms })
    }

    pub fn dim(&self) -> &OcpQpDim {
        &self.dim
    }

    pub fn horizon(&self) -> usize {
        self.dim.n
    }

    pub fn set_field(&mut self, name: &str, stage: usize, value: impl Into<FieldValue>) -> Result<(), QpError> {
        let value = value.into();
        if is_dynamics(name) {
            self.check_dyn_stage(name, stage)?;
            self.ms.set_dynamics_field(name, stage + 1, &value)
        } else {
            self.ms.set_stage_field(name, stage, &value)
        }
    }

    pub fn get_field(&self, name: &str, stage: usize) -> Result<FieldValue, QpError> {
        if is_dynamics(name) {
            self.check_dyn_stage(name, stage)?;
            self.ms.get_dynamics_field(name, stage + 1)
        } else {
            self.ms.get_stage_field(name, stage)
        }
    }

    fn check_dyn_stage(&self, name: &str, stage: usize) -> Result<(), QpError> {
        if stage >= self.dim.n {
            return Err(QpError::IndexOutOfRange { field: name.to_string(), index: stage, len: self.dim.n });
        }
        Ok(())
    }

    pub fn validate(&self) -> Vec<Violation> {
        self.ms.validate()
    }
}

fn is_dynamics(name: &str) -> bool {
    matches!(name, "A" | "B" | "b")
}

super::multistage::delegate_structure!(OcpQp);
