//! Shared storage for OCP and tree QPs: a rooted tree of stages linked by
//! affine dynamics. An OCP QP is the chain `0 → 1 → … → N`.

use crate::linalg::{self, Mat};

use super::fields::{self, Style};
use super::solution::{Layout, StageLayout};
use super::stage::Stage;
use super::{FieldKind, FieldValue, QpError, QpStructure, Violation, ViolationKind};

/// Dynamics `x_m = A x_p + B u_p + b` linking node `m` to its parent `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub a: Mat,
    pub b: Mat,
    pub bvec: Vec<f64>,
}

impl Dynamics {
    pub(crate) fn zeros(nx_child: usize, nx_parent: usize, nu_parent: usize) -> Self {
        Self { a: Mat::zeros(nx_child, nx_parent), b: Mat::zeros(nx_child, nu_parent), bvec: vec![0.0; nx_child] }
    }

    /// `A x + B u` (without `b`).
    pub(crate) fn apply(&self, u: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.a.rows()];
        linalg::gemv(1.0, &self.a, x, 0.0, &mut out, false);
        linalg::gemv(1.0, &self.b, u, 1.0, &mut out, false);
        out
    }
}

pub(crate) const DYNAMICS_FIELDS: &[(&str, FieldKind)] =
    &[("A", FieldKind::Mat), ("B", FieldKind::Mat), ("b", FieldKind::Vec)];

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MultiStage {
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub stages: Vec<Stage>,
    /// Dynamics leading into each node; `None` at the root.
    pub dynamics: Vec<Option<Dynamics>>,
    pub layout: Layout,
}

impl MultiStage {
    /// Builds a zero-initialized multi-stage QP. `parent` must contain exactly one
    /// root and in-range parent indices; ordering (parents first) is checked by
    /// [`MultiStage::validate`].
    pub fn new(
        parent: &[Option<usize>],
        nx: &[usize],
        nu: &[usize],
        nb: &[usize],
        ng: &[usize],
        ns: &[usize],
    ) -> Result<Self, QpError> {
        let nn = parent.len();
        if nn == 0 {
            return Err(QpError::InvalidDim("at least one stage is required".into()));
        }
        for (name, v) in [("nx", nx), ("nu", nu), ("nb", nb), ("ng", ng), ("ns", ns)] {
            if v.len() != nn {
                return Err(QpError::InvalidDim(format!("{} has length {}, expected {}", name, v.len(), nn)));
            }
        }
        let roots = parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(QpError::InvalidDim(format!("expected exactly one root, found {}", roots)));
        }
        for (m, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= nn || p == m {
                    return Err(QpError::InvalidDim(format!("node {} has invalid parent {}", m, p)));
                }
            }
        }
        for n in 0..nn {
            if nb[n] > nx[n] + nu[n] {
                return Err(QpError::InvalidDim(format!("stage {}: nb = {} exceeds nx + nu = {}", n, nb[n], nx[n] + nu[n])));
            }
            if ns[n] > nb[n] + ng[n] {
                return Err(QpError::InvalidDim(format!("stage {}: ns = {} exceeds nb + ng = {}", n, ns[n], nb[n] + ng[n])));
            }
        }
        let mut children = vec![Vec::new(); nn];
        for (m, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(m);
            }
        }
        let stages: Vec<Stage> = (0..nn).map(|n| Stage::new(nu[n], nx[n], nb[n], ng[n], ns[n])).collect();
        let dynamics = (0..nn).map(|m| parent[m].map(|p| Dynamics::zeros(nx[m], nx[p], nu[p]))).collect();
        let layout = build_layout(&stages, parent);
        Ok(Self { parent: parent.to_vec(), children, stages, dynamics, layout })
    }

    pub fn num_nodes(&self) -> usize {
        self.stages.len()
    }

    pub fn set_stage_field(&mut self, name: &str, n: usize, value: &FieldValue) -> Result<(), QpError> {
        self.check_index(name, n)?;
        fields::stage_set(&mut self.stages[n], Style::Ocp, name, value)
    }

    pub fn get_stage_field(&self, name: &str, n: usize) -> Result<FieldValue, QpError> {
        self.check_index(name, n)?;
        fields::stage_get(&self.stages[n], Style::Ocp, name)
    }

    /// Sets `A`, `B` or `b` of the dynamics leading into node `m`.
    pub fn set_dynamics_field(&mut self, name: &str, m: usize, value: &FieldValue) -> Result<(), QpError> {
        let dyn_m = self.dynamics_mut(name, m)?;
        let (r, c) = match name {
            "A" => dyn_m.a.shape(),
            "B" => dyn_m.b.shape(),
            _ => (dyn_m.bvec.len(), 1),
        };
        let mismatch = |found: String| QpError::DimensionMismatch {
            field: name.to_string(),
            expected: if name == "b" { format!("vector of length {}", r) } else { format!("{}x{} matrix", r, c) },
            found,
        };
        match (name, value) {
            ("A", FieldValue::Mat(m)) if m.shape() == (r, c) => dyn_m.a = m.clone(),
            ("B", FieldValue::Mat(m)) if m.shape() == (r, c) => dyn_m.b = m.clone(),
            ("b", FieldValue::Vec(v)) if v.len() == r => dyn_m.bvec = v.clone(),
            (_, FieldValue::Mat(m)) => return Err(mismatch(format!("{}x{}", m.rows(), m.cols()))),
            (_, FieldValue::Vec(v)) => return Err(mismatch(format!("length {}", v.len()))),
            (_, FieldValue::Idx(_)) => return Err(mismatch("index list".into())),
        }
        Ok(())
    }

    pub fn get_dynamics_field(&self, name: &str, m: usize) -> Result<FieldValue, QpError> {
        if !matches!(name, "A" | "B" | "b") {
            return Err(QpError::UnknownField(name.to_string()));
        }
        let d = self.dynamics.get(m).and_then(|d| d.as_ref()).ok_or(QpError::IndexOutOfRange {
            field: name.to_string(),
            index: m,
            len: self.num_nodes(),
        })?;
        Ok(match name {
            "A" => FieldValue::Mat(d.a.clone()),
            "B" => FieldValue::Mat(d.b.clone()),
            _ => FieldValue::Vec(d.bvec.clone()),
        })
    }

    fn dynamics_mut(&mut self, name: &str, m: usize) -> Result<&mut Dynamics, QpError> {
        if !matches!(name, "A" | "B" | "b") {
            return Err(QpError::UnknownField(name.to_string()));
        }
        let len = self.num_nodes();
        self.dynamics
            .get_mut(m)
            .and_then(|d| d.as_mut())
            .ok_or(QpError::IndexOutOfRange { field: name.to_string(), index: m, len })
    }

    fn check_index(&self, name: &str, n: usize) -> Result<(), QpError> {
        if n >= self.num_nodes() {
            return Err(QpError::IndexOutOfRange { field: name.to_string(), index: n, len: self.num_nodes() });
        }
        Ok(())
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (m, p) in self.parent.iter().enumerate() {
            match *p {
                Some(p) if p >= m => out.push(Violation {
                    kind: ViolationKind::TreeStructure,
                    stage: Some(m),
                    message: format!("parent {} is not smaller than node index {}", p, m),
                }),
                None if m != 0 => out.push(Violation {
                    kind: ViolationKind::TreeStructure,
                    stage: Some(m),
                    message: "root must be node 0".into(),
                }),
                _ => {}
            }
        }
        for (n, st) in self.stages.iter().enumerate() {
            fields::validate_stage(st, Style::Ocp, Some(n), &mut out);
        }
        for (m, d) in self.dynamics.iter().enumerate() {
            if let Some(d) = d {
                let nan = d.a.as_slice().iter().chain(d.b.as_slice()).chain(&d.bvec).any(|v| v.is_nan());
                if nan {
                    out.push(Violation { kind: ViolationKind::NotFinite, stage: Some(m), message: "NaN in dynamics".into() });
                }
            }
        }
        out
    }

    fn slices<'a>(&self, n: usize, y: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let s = &self.layout.stages[n];
        (&y[s.y_off..s.y_off + s.nu], &y[s.y_off + s.nu..s.y_off + s.nz()])
    }
}

pub(crate) fn build_layout(stages: &[Stage], parent: &[Option<usize>]) -> Layout {
    let mut ly = Layout::default();
    for (n, st) in stages.iter().enumerate() {
        let pi_off = parent[n].map(|_| {
            let o = ly.npi;
            ly.npi += st.nx;
            o
        });
        ly.stages.push(StageLayout {
            nu: st.nu,
            nx: st.nx,
            nb: st.nb(),
            ng: st.ng(),
            ns: st.ns(),
            y_off: ly.ny,
            c_off: ly.nc,
            pi_off,
        });
        ly.ny += st.ny();
        ly.nc += st.nc();
    }
    ly
}

impl QpStructure for MultiStage {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn hess_mul_add(&self, y: &[f64], out: &mut [f64]) {
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            let r = s.y_off..s.y_off + s.ny();
            st.hess_mul_add(&y[r.clone()], &mut out[r]);
        }
    }

    fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.ny];
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            st.gradient(&mut g[s.y_off..s.y_off + s.ny()]);
        }
        g
    }

    fn eq_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.npi];
        for m in 0..self.num_nodes() {
            let (Some(p), Some(d)) = (self.parent[m], &self.dynamics[m]) else { continue };
            let o = self.layout.stages[m].pi_off.unwrap();
            let (_, xm) = self.slices(m, y);
            let (up, xp) = self.slices(p, y);
            let ax = d.apply(up, xp);
            for i in 0..xm.len() {
                out[o + i] = xm[i] - ax[i];
            }
        }
        out
    }

    fn eq_tmul_add(&self, pi: &[f64], out: &mut [f64]) {
        for m in 0..self.num_nodes() {
            let (Some(p), Some(d)) = (self.parent[m], &self.dynamics[m]) else { continue };
            let sm = &self.layout.stages[m];
            let o = sm.pi_off.unwrap();
            let pm = &pi[o..o + sm.nx];
            for i in 0..sm.nx {
                out[sm.y_off + sm.nu + i] += pm[i];
            }
            let sp = &self.layout.stages[p];
            let (uo, xo) = (sp.y_off, sp.y_off + sp.nu);
            linalg::gemv(-1.0, &d.b, pm, 1.0, &mut out[uo..uo + sp.nu], true);
            linalg::gemv(-1.0, &d.a, pm, 1.0, &mut out[xo..xo + sp.nx], true);
        }
    }

    fn eq_rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.layout.npi];
        for (m, d) in self.dynamics.iter().enumerate() {
            if let Some(d) = d {
                let o = self.layout.stages[m].pi_off.unwrap();
                b[o..o + d.bvec.len()].copy_from_slice(&d.bvec);
            }
        }
        b
    }

    fn ineq_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.nc];
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            st.ineq_mul(&y[s.y_off..s.y_off + s.ny()], &mut out[s.c_off..s.c_off + s.nc()]);
        }
        out
    }

    fn ineq_tmul_add(&self, lam: &[f64], out: &mut [f64]) {
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            st.ineq_tmul_add(&lam[s.c_off..s.c_off + s.nc()], &mut out[s.y_off..s.y_off + s.ny()]);
        }
    }

    fn ineq_rhs(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.layout.nc];
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            st.ineq_rhs(&mut d[s.c_off..s.c_off + s.nc()]);
        }
        d
    }

    fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.layout.nc];
        for (st, s) in self.stages.iter().zip(&self.layout.stages) {
            st.eff_mask(&mut m[s.c_off..s.c_off + s.nc()]);
        }
        m
    }

    fn objective_of(&self, y: &[f64]) -> f64 {
        self.stages
            .iter()
            .zip(&self.layout.stages)
            .map(|(st, s)| st.objective(&y[s.y_off..s.y_off + s.ny()]))
            .sum()
    }
}

/// Implements [`QpStructure`] for a wrapper holding a `MultiStage` in `ms`.
macro_rules! delegate_structure {
    ($ty:ty) => {
        impl $crate::qp_data::QpStructure for $ty {
            fn layout(&self) -> &$crate::qp_data::Layout {
                &self.ms.layout
            }
            fn hess_mul_add(&self, y: &[f64], out: &mut [f64]) {
                self.ms.hess_mul_add(y, out)
            }
            fn gradient(&self) -> Vec<f64> {
                self.ms.gradient()
            }
            fn eq_mul(&self, y: &[f64]) -> Vec<f64> {
                self.ms.eq_mul(y)
            }
            fn eq_tmul_add(&self, pi: &[f64], out: &mut [f64]) {
                self.ms.eq_tmul_add(pi, out)
            }
            fn eq_rhs(&self) -> Vec<f64> {
                self.ms.eq_rhs()
            }
            fn ineq_mul(&self, y: &[f64]) -> Vec<f64> {
                self.ms.ineq_mul(y)
            }
            fn ineq_tmul_add(&self, lam: &[f64], out: &mut [f64]) {
                self.ms.ineq_tmul_add(lam, out)
            }
            fn ineq_rhs(&self) -> Vec<f64> {
                self.ms.ineq_rhs()
            }
            fn mask(&self) -> Vec<f64> {
                self.ms.mask()
            }
            fn objective_of(&self, y: &[f64]) -> f64 {
                self.ms.objective_of(y)
            }
        }
    };
}
pub(crate) use delegate_structure;
