use crate::linalg::Mat;

use super::stage::Stage;
use super::QpError;

/// A value passed through the setter/getter interface.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldValue {
    Mat(Mat),
    Vec(Vec<f64>),
    Idx(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Mat,
    Vec,
    Idx,
}

impl FieldValue {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldValue::Mat(_) => FieldKind::Mat,
            FieldValue::Vec(_) => FieldKind::Vec,
            FieldValue::Idx(_) => FieldKind::Idx,
        }
    }

    pub fn as_mat(&self) -> Option<&Mat> {
        match self {
            FieldValue::Mat(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_vec(&self) -> Option<&[f64]> {
        match self {
            FieldValue::Vec(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_idx(&self) -> Option<&[usize]> {
        match self {
            FieldValue::Idx(v) => Some(v),
            _ => None,
        }
    }
}

impl From<Mat> for FieldValue {
    fn from(m: Mat) -> Self {
        FieldValue::Mat(m)
    }
}

impl From<Vec<f64>> for FieldValue {
    fn from(v: Vec<f64>) -> Self {
        FieldValue::Vec(v)
    }
}

impl From<&[f64]> for FieldValue {
    fn from(v: &[f64]) -> Self {
        FieldValue::Vec(v.to_vec())
    }
}

impl From<Vec<usize>> for FieldValue {
    fn from(v: Vec<usize>) -> Self {
        FieldValue::Idx(v)
    }
}

/// Stage fields of OCP and tree QPs, in file order. `lbx`, `ubx`, `lbu`,
/// `ubu` are additionally accepted as views on `lb`/`ub` restricted to the box
/// rows acting on states or inputs.
pub const STAGE_FIELDS: &[(&str, FieldKind)] = &[
    ("R", FieldKind::Mat),
    ("S", FieldKind::Mat),
    ("Q", FieldKind::Mat),
    ("r", FieldKind::Vec),
    ("q", FieldKind::Vec),
    ("idxb", FieldKind::Idx),
    ("lb", FieldKind::Vec),
    ("ub", FieldKind::Vec),
    ("D", FieldKind::Mat),
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

/// Whether stage fields are addressed in OCP form (`R`, `S`, `Q`, `D`, `C`
/// over `[u; x]`) or dense form (`H`, `g`, `C` over `v`).
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Style {
    Ocp,
    Dense,
}

fn mismatch(field: &str, expected: String, found: String) -> QpError {
    QpError::DimensionMismatch { field: field.to_string(), expected, found }
}

fn want_mat<'a>(field: &str, v: &'a FieldValue, rows: usize, cols: usize) -> Result<&'a Mat, QpError> {
    match v {
        FieldValue::Mat(m) if m.shape() == (rows, cols) => Ok(m),
        FieldValue::Mat(m) => Err(mismatch(field, format!("{}x{} matrix", rows, cols), format!("{}x{}", m.rows(), m.cols()))),
        other => Err(mismatch(field, format!("{}x{} matrix", rows, cols), format!("{:?}", other.kind()))),
    }
}

fn want_vec<'a>(field: &str, v: &'a FieldValue, len: usize) -> Result<&'a [f64], QpError> {
    match v {
        FieldValue::Vec(x) if x.len() == len => Ok(x),
        FieldValue::Vec(x) => Err(mismatch(field, format!("vector of length {}", len), format!("length {}", x.len()))),
        other => Err(mismatch(field, format!("vector of length {}", len), format!("{:?}", other.kind()))),
    }
}

fn want_idx<'a>(field: &str, v: &'a FieldValue, len: usize) -> Result<&'a [usize], QpError> {
    match v {
        FieldValue::Idx(x) if x.len() == len => Ok(x),
        FieldValue::Idx(x) => Err(mismatch(field, format!("index list of length {}", len), format!("length {}", x.len()))),
        other => Err(mismatch(field, format!("index list of length {}", len), format!("{:?}", other.kind()))),
    }
}

/// Box rows acting on states (`true`) or inputs (`false`).
fn box_rows(stage: &Stage, states: bool) -> Vec<usize> {
    (0..stage.nb()).filter(|&i| (stage.idxb[i] >= stage.nu) == states).collect()
}

pub(crate) fn stage_set(stage: &mut Stage, style: Style, name: &str, value: &FieldValue) -> Result<(), QpError> {
    let (nu, nx, nz) = (stage.nu, stage.nx, stage.nz());
    let (nb, ng, ns) = (stage.nb(), stage.ng(), stage.ns());
    match (style, name) {
        (Style::Dense, "H") => {
            let m = want_mat(name, value, nz, nz)?;
            stage.hess = m.clone();
        }
        (Style::Dense, "g") => stage.grad = want_vec(name, value, nz)?.to_vec(),
        (Style::Dense, "C") => stage.gmat = want_mat(name, value, ng, nz)?.clone(),
        (Style::Ocp, "R") => {
            let m = want_mat(name, value, nu, nu)?;
            stage.hess.set_block(0, 0, m);
        }
        (Style::Ocp, "S") => {
            let m = want_mat(name, value, nu, nx)?;
            stage.hess.set_block(0, nu, m);
            stage.hess.set_block(nu, 0, &m.transpose());
        }
        (Style::Ocp, "Q") => {
            let m = want_mat(name, value, nx, nx)?;
            stage.hess.set_block(nu, nu, m);
        }
        (Style::Ocp, "r") => stage.grad[..nu].copy_from_slice(want_vec(name, value, nu)?),
        (Style::Ocp, "q") => stage.grad[nu..].copy_from_slice(want_vec(name, value, nx)?),
        (Style::Ocp, "D") => {
            let m = want_mat(name, value, ng, nu)?;
            stage.gmat.set_block(0, 0, m);
        }
        (Style::Ocp, "C") => {
            let m = want_mat(name, value, ng, nx)?;
            stage.gmat.set_block(0, nu, m);
        }
        (Style::Ocp, "lbx" | "ubx" | "lbu" | "ubu") => {
            let rows = box_rows(stage, name.ends_with('x'));
            let v = want_vec(name, value, rows.len())?;
            let dst = if name.starts_with('l') { &mut stage.lb } else { &mut stage.ub };
            for (&i, &val) in rows.iter().zip(v) {
                dst[i] = val;
            }
        }
        (_, "idxb") => stage.idxb = want_idx(name, value, nb)?.to_vec(),
        (_, "lb") => stage.lb = want_vec(name, value, nb)?.to_vec(),
        (_, "ub") => stage.ub = want_vec(name, value, nb)?.to_vec(),
        (_, "lg") => stage.lg = want_vec(name, value, ng)?.to_vec(),
        (_, "ug") => stage.ug = want_vec(name, value, ng)?.to_vec(),
        (_, "idxs") => stage.idxs = want_idx(name, value, ns)?.to_vec(),
        (_, "Zl") => stage.zl_hess = want_vec(name, value, ns)?.to_vec(),
        (_, "Zu") => stage.zu_hess = want_vec(name, value, ns)?.to_vec(),
        (_, "zl") => stage.zl = want_vec(name, value, ns)?.to_vec(),
        (_, "zu") => stage.zu = want_vec(name, value, ns)?.to_vec(),
        (_, "sl_lb") => stage.sl_lb = want_vec(name, value, ns)?.to_vec(),
        (_, "su_lb") => stage.su_lb = want_vec(name, value, ns)?.to_vec(),
        (_, "maskl") => stage.maskl = want_vec(name, value, nb + ng)?.to_vec(),
        (_, "masku") => stage.masku = want_vec(name, value, nb + ng)?.to_vec(),
        _ => return Err(QpError::UnknownField(name.to_string())),
    }
    Ok(())
}

pub(crate) fn stage_get(stage: &Stage, style: Style, name: &str) -> Result<FieldValue, QpError> {
    let (nu, nx, nz) = (stage.nu, stage.nx, stage.nz());
    let ng = stage.ng();
    Ok(match (style, name) {
        (Style::Dense, "H") => FieldValue::Mat(stage.hess.clone()),
        (Style::Dense, "g") => FieldValue::Vec(stage.grad.clone()),
        (Style::Dense, "C") => FieldValue::Mat(stage.gmat.clone()),
        (Style::Ocp, "R") => FieldValue::Mat(stage.hess.block(0, 0, nu, nu)),
        (Style::Ocp, "S") => FieldValue::Mat(stage.hess.block(0, nu, nu, nx)),
        (Style::Ocp, "Q") => FieldValue::Mat(stage.hess.block(nu, nu, nx, nx)),
        (Style::Ocp, "r") => FieldValue::Vec(stage.grad[..nu].to_vec()),
        (Style::Ocp, "q") => FieldValue::Vec(stage.grad[nu..nz].to_vec()),
        (Style::Ocp, "D") => FieldValue::Mat(stage.gmat.block(0, 0, ng, nu)),
        (Style::Ocp, "C") => FieldValue::Mat(stage.gmat.block(0, nu, ng, nx)),
        (Style::Ocp, "lbx" | "ubx" | "lbu" | "ubu") => {
            let rows = box_rows(stage, name.ends_with('x'));
            let src = if name.starts_with('l') { &stage.lb } else { &stage.ub };
            FieldValue::Vec(rows.iter().map(|&i| src[i]).collect())
        }
        (_, "idxb") => FieldValue::Idx(stage.idxb.clone()),
        (_, "lb") => FieldValue::Vec(stage.lb.clone()),
        (_, "ub") => FieldValue::Vec(stage.ub.clone()),
        (_, "lg") => FieldValue::Vec(stage.lg.clone()),
        (_, "ug") => FieldValue::Vec(stage.ug.clone()),
        (_, "idxs") => FieldValue::Idx(stage.idxs.clone()),
        (_, "Zl") => FieldValue::Vec(stage.zl_hess.clone()),
        (_, "Zu") => FieldValue::Vec(stage.zu_hess.clone()),
        (_, "zl") => FieldValue::Vec(stage.zl.clone()),
        (_, "zu") => FieldValue::Vec(stage.zu.clone()),
        (_, "sl_lb") => FieldValue::Vec(stage.sl_lb.clone()),
        (_, "su_lb") => FieldValue::Vec(stage.su_lb.clone()),
        (_, "maskl") => FieldValue::Vec(stage.maskl.clone()),
        (_, "masku") => FieldValue::Vec(stage.masku.clone()),
        _ => return Err(QpError::UnknownField(name.to_string())),
    })
}

/// Appends stage-level violations to `out`.
pub(crate) fn validate_stage(stage: &Stage, style: Style, idx: Option<usize>, out: &mut Vec<super::Violation>) {
    use super::{Violation, ViolationKind as K};
    let mut push = |kind, message: String| out.push(Violation { kind, stage: idx, message });
    let nz = stage.nz();
    let h = &stage.hess;
    let scale = h.max_abs().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..nz {
        for j in 0..i {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    if asym > 1e-12 * scale {
        let what = if style == Style::Dense { "H" } else { "[R S; Sᵀ Q]" };
        push(K::Asymmetric, format!("{} asymmetric by {:e}", what, asym));
    }
    let finite = stage.hess.as_slice().iter().chain(&stage.grad).chain(stage.gmat.as_slice()).all(|x| !x.is_nan())
        && stage.lb.iter().chain(&stage.ub).chain(&stage.lg).chain(&stage.ug).all(|x| !x.is_nan())
        && stage.zl_hess.iter().chain(&stage.zu_hess).chain(&stage.zl).chain(&stage.zu).all(|x| !x.is_nan());
    if !finite {
        push(K::NotFinite, "NaN in stage data".into());
    }
    if !strictly_increasing_below(&stage.idxb, nz) {
        push(K::MalformedIndexSet, format!("idxb {:?} must be strictly increasing and < {}", stage.idxb, nz));
    }
    let m = stage.nrows();
    if !strictly_increasing_below(&stage.idxs, m) {
        push(K::MalformedIndexSet, format!("idxs {:?} must be strictly increasing and < {}", stage.idxs, m));
    }
    for (j, (&l, &u)) in stage.zl_hess.iter().zip(&stage.zu_hess).enumerate() {
        if l < 0.0 || u < 0.0 {
            push(K::NegativeSlackPenalty, format!("slack {}: Zl = {}, Zu = {}", j, l, u));
        }
    }
    for (j, (&l, &u)) in stage.sl_lb.iter().zip(&stage.su_lb).enumerate() {
        if l < 0.0 || u < 0.0 {
            push(K::NegativeSlackBound, format!("slack {}: sl_lb = {}, su_lb = {}", j, l, u));
        }
    }
    for (i, (&ml, &mu)) in stage.maskl.iter().zip(&stage.masku).enumerate() {
        if !(ml == 0.0 || ml == 1.0) || !(mu == 0.0 || mu == 1.0) {
            push(K::NonBinaryMask, format!("row {}: maskl = {}, masku = {}", i, ml, mu));
        }
    }
    for i in 0..m {
        let (l, u) = (stage.lower_bound(i), stage.upper_bound(i));
        if stage.maskl[i] != 0.0 && stage.masku[i] != 0.0 && l > u {
            push(K::InvertedBounds, format!("row {}: lower {} > upper {}", i, l, u));
        }
    }
}

pub(crate) fn strictly_increasing_below(idx: &[usize], bound: usize) -> bool {
    idx.windows(2).all(|w| w[0] < w[1]) && idx.iter().all(|&i| i < bound)
}
