use crate::linalg::{self, Mat};

use super::fields::{self, FieldKind, FieldValue, Style};
use super::solution::{Layout, StageLayout};
use super::stage::Stage;
use super::{QpError, QpStructure, Violation, ViolationKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseQpDim {
    pub nv: usize,
    pub ne: usize,
    pub nb: usize,
    pub ng: usize,
    pub ns: usize,
}

impl DenseQpDim {
    pub fn new(nv: usize, ne: usize, nb: usize, ng: usize, ns: usize) -> Self {
        Self { nv, ne, nb, ng, ns }
    }
}

pub const DENSE_FIELDS: &[(&str, FieldKind)] = &[
    ("H", FieldKind::Mat),
    ("g", FieldKind::Vec),
    ("A", FieldKind::Mat),
    ("b", FieldKind::Vec),
    ("idxb", FieldKind::Idx),
    ("lb", FieldKind::Vec),
    ("ub", FieldKind::Vec),
    ("C", FieldKind::Mat),
    ("lg", FieldKind::Vec),
    ("ug", FieldKind::Vec),
    ("idxs", FieldKind::Idx),
    ("Zl", FieldKind::Vec),
    ("Zu", FieldKind::Vec),
    ("zl", FieldKind::Vec),
    ("zu", FieldKind::Vec),
    ("sl_lb", FieldKind::Vec),
    ("su_lb", FieldKind::Vec),
    ("maskl", FieldKind::Vec),
    ("masku", FieldKind::Vec),
];

/// QP with dense Hessian and constraint matrices:
/// `min ½ vᵀHv + gᵀv  s.t.  Av = b,  lb ≤ v[idxb] ≤ ub,  lg ≤ Cv ≤ ug`, with
/// optional soft rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseQp {
    pub(crate) dim: DenseQpDim,
    pub(crate) stage: Stage,
    pub(crate) a: Mat,
    pub(crate) b: Vec<f64>,
    pub(crate) layout: Layout,
}

impl DenseQp {
    pub fn create(dim: &DenseQpDim) -> Result<Self, QpError> {
        if dim.nb > dim.nv {
            return Err(QpError::InvalidDim(format!("nb = {} exceeds nv = {}", dim.nb, dim.nv)));
        }
        if dim.ns > dim.nb + dim.ng {
            return Err(QpError::InvalidDim(format!("ns = {} exceeds nb + ng = {}", dim.ns, dim.nb + dim.ng)));
        }
        let stage = Stage::new(dim.nv, 0, dim.nb, dim.ng, dim.ns);
        let layout = Layout {
            stages: vec![StageLayout {
                nu: dim.nv,
                nx: 0,
                nb: dim.nb,
                ng: dim.ng,
                ns: dim.ns,
                y_off: 0,
                c_off: 0,
                pi_off: None,
            }],
            ny: stage.ny(),
            npi: dim.ne,
            nc: stage.nc(),
        };
        Ok(Self { dim: *dim, stage, a: Mat::zeros(dim.ne, dim.nv), b: vec![0.0; dim.ne], layout })
    }

    pub fn dim(&self) -> &DenseQpDim {
        &self.dim
    }

    pub fn set_field(&mut self, name: &str, value: impl Into<FieldValue>) -> Result<(), QpError> {
        let value = value.into();
        let (ne, nv) = (self.dim.ne, self.dim.nv);
        match (name, &value) {
            ("A", FieldValue::Mat(m)) if m.shape() == (ne, nv) => self.a = m.clone(),
            ("b", FieldValue::Vec(v)) if v.len() == ne => self.b = v.clone(),
            ("A", _) => return Err(mismatch(name, format!("{}x{} matrix", ne, nv), &value)),
            ("b", _) => return Err(mismatch(name, format!("vector of length {}", ne), &value)),
            _ => fields::stage_set(&mut self.stage, Style::Dense, name, &value)?,
        }
        Ok(())
    }

    pub fn get_field(&self, name: &str) -> Result<FieldValue, QpError> {
        match name {
            "A" => Ok(FieldValue::Mat(self.a.clone())),
            "b" => Ok(FieldValue::Vec(self.b.clone())),
            _ => fields::stage_get(&self.stage, Style::Dense, name),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        fields::validate_stage(&self.stage, Style::Dense, None, &mut out);
        if self.a.as_slice().iter().chain(&self.b).any(|v| v.is_nan()) {
            out.push(Violation { kind: ViolationKind::NotFinite, stage: None, message: "NaN in A or b".into() });
        }
        out
    }
}

fn mismatch(field: &str, expected: String, found: &FieldValue) -> QpError {
    let found = match found {
        FieldValue::Mat(m) => format!("{}x{} matrix", m.rows(), m.cols()),
        FieldValue::Vec(v) => format!("vector of length {}", v.len()),
        FieldValue::Idx(v) => format!("index list of length {}", v.len()),
    };
    QpError::DimensionMismatch { field: field.to_string(), expected, found }
}

impl QpStructure for DenseQp {
    fn layout(&self) -> &Layout {
        &self.layout
    }
    fn hess_mul_add(&self, y: &[f64], out: &mut [f64]) {
        self.stage.hess_mul_add(y, out)
    }
    fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.ny];
        self.stage.gradient(&mut g);
        g
    }
    fn eq_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim.ne];
        linalg::gemv(1.0, &self.a, &y[..self.dim.nv], 0.0, &mut out, false);
        out
    }
    fn eq_tmul_add(&self, pi: &[f64], out: &mut [f64]) {
        linalg::gemv(1.0, &self.a, pi, 1.0, &mut out[..self.dim.nv], true);
    }
    fn eq_rhs(&self) -> Vec<f64> {
        self.b.clone()
    }
    fn ineq_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.nc];
        self.stage.ineq_mul(y, &mut out);
        out
    }
    fn ineq_tmul_add(&self, lam: &[f64], out: &mut [f64]) {
        self.stage.ineq_tmul_add(lam, out)
    }
    fn ineq_rhs(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.layout.nc];
        self.stage.ineq_rhs(&mut d);
        d
    }
    fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.layout.nc];
        self.stage.eff_mask(&mut m);
        m
    }
    fn objective_of(&self, y: &[f64]) -> f64 {
        self.stage.objective(y)
    }
}
