//! Random convex QP instances for tests and benchmarks. Every generated
//! problem is feasible by construction: the bounds are placed around a
//! reference point (or trajectory) that satisfies the equality constraints.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{self, Mat};
use crate::qp_data::{DenseQp, DenseQpDim, KktVec, Layout, OcpQp, OcpQpDim, TreeOcpQp, TreeOcpQpDim};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `MᵀM / n + shift I`, symmetric positive definite for `shift > 0`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Mat {
    let m = random_mat(rng, n, n);
    let mut h = linalg::gram(&m);
    h.scale(1.0 / n.max(1) as f64);
    h.add_diag(shift);
    h.symmetrize();
    h
}

fn sorted_subset<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Random dense QP with `nv` variables, `ne` equalities, `nb` boxes, `ng`
/// general constraints of which `ns` rows are soft.
pub fn random_dense_qp<R: Rng>(rng: &mut R, nv: usize, ne: usize, nb: usize, ng: usize, ns: usize) -> DenseQp {
    let mut qp = DenseQp::create(&DenseQpDim::new(nv, ne, nb, ng, ns)).expect("valid dimensions");
    let v0 = random_vec(rng, nv);
    qp.set_field("H", random_spd(rng, nv, 0.5)).unwrap();
    qp.set_field("g", random_vec(rng, nv)).unwrap();
    let a = random_mat(rng, ne, nv);
    let b = a.mul_vec(&v0);
    qp.set_field("A", a).unwrap();
    qp.set_field("b", b).unwrap();
    let idxb = sorted_subset(rng, nv, nb);
    let lb: Vec<f64> = idxb.iter().map(|&i| v0[i] - rng.gen_range(0.1..1.0)).collect();
    let ub: Vec<f64> = idxb.iter().map(|&i| v0[i] + rng.gen_range(0.1..1.0)).collect();
    qp.set_field("idxb", idxb).unwrap();
    qp.set_field("lb", lb).unwrap();
    qp.set_field("ub", ub).unwrap();
    let c = random_mat(rng, ng, nv);
    let cv = c.mul_vec(&v0);
    qp.set_field("C", c).unwrap();
    qp.set_field("lg", cv.iter().map(|v| v - rng.gen_range(0.1..1.0)).collect::<Vec<_>>()).unwrap();
    qp.set_field("ug", cv.iter().map(|v| v + rng.gen_range(0.1..1.0)).collect::<Vec<_>>()).unwrap();
    set_soft(rng, ns, nb + ng, |name, v| qp.set_field(name, v).unwrap());
    qp
}

fn set_soft<R: Rng>(rng: &mut R, ns: usize, nrows: usize, mut set: impl FnMut(&str, crate::qp_data::FieldValue)) {
    if ns == 0 {
        return;
    }
    set("idxs", sorted_subset(rng, nrows, ns).into());
    for name in ["Zl", "Zu"] {
        set(name, (0..ns).map(|_| rng.gen_range(0.5..2.0)).collect::<Vec<_>>().into());
    }
    for name in ["zl", "zu"] {
        set(name, (0..ns).map(|_| rng.gen_range(0.1..1.0)).collect::<Vec<_>>().into());
    }
}

/// Shape of a random OCP QP with identical stage dimensions. The last stage has
/// no inputs. With `x0_fixed`, stage 0 bounds the whole initial state with
/// equal bounds instead of using `nbx` state boxes.
#[derive(Clone, Debug)]
pub struct OcpGen {
    pub n: usize,
    pub nx: usize,
    pub nu: usize,
    pub nbu: usize,
    pub nbx: usize,
    pub ng: usize,
    pub ns: usize,
    pub x0_fixed: bool,
}

impl OcpGen {
    pub fn new(n: usize, nx: usize, nu: usize) -> Self {
        Self { n, nx, nu, nbu: 0, nbx: 0, ng: 0, ns: 0, x0_fixed: false }
    }
    pub fn boxes(mut self, nbu: usize, nbx: usize) -> Self {
        self.nbu = nbu;
        self.nbx = nbx;
        self
    }
    pub fn general(mut self, ng: usize) -> Self {
        self.ng = ng;
        self
    }
    pub fn soft(mut self, ns: usize) -> Self {
        self.ns = ns;
        self
    }
    pub fn x0_fixed(mut self, on: bool) -> Self {
        self.x0_fixed = on;
        self
    }

    /// `(nbu, nb, ns)` of a stage with `node_nu` inputs.
    fn stage_dims(&self, node_nu: usize, first: bool) -> (usize, usize, usize) {
        let nbu = self.nbu.min(node_nu);
        let fixed = first && self.x0_fixed;
        let nbx = if fixed { self.nx } else { self.nbx.min(self.nx) };
        let pool = nbu + self.ng + if fixed { 0 } else { nbx };
        (nbu, nbu + nbx, self.ns.min(pool))
    }
}

/// A stable random `A` (spectral radius below one) and a random `B`.
fn random_dynamics<R: Rng>(rng: &mut R, nx: usize, nu_parent: usize) -> (Mat, Mat) {
    let mut a = random_mat(rng, nx, nx);
    let norm = a.norm_inf().max(1e-12);
    a.scale(0.95 / norm);
    (a, random_mat(rng, nx, nu_parent))
}

/// Fills stage `node` of a multi-stage QP around the reference `(u, x)`.
#[allow(clippy::too_many_arguments)]
fn fill_stage<R: Rng>(
    rng: &mut R,
    gen: &OcpGen,
    nu: usize,
    first: bool,
    u: &[f64],
    x: &[f64],
    mut set: impl FnMut(&str, crate::qp_data::FieldValue),
) {
    let nx = gen.nx;
    let (nbu, nb, ns) = gen.stage_dims(nu, first);
    set("Q", random_spd(rng, nx, 0.5).into());
    set("R", random_spd(rng, nu, 0.5).into());
    let mut s = random_mat(rng, nu, nx);
    s.scale(0.1);
    set("S", s.into());
    set("q", random_vec(rng, nx).into());
    set("r", random_vec(rng, nu).into());
    let mut idxb = sorted_subset(rng, nu, nbu);
    let fixed = first && gen.x0_fixed;
    let xi: Vec<usize> = if fixed { (0..nx).collect() } else { sorted_subset(rng, nx, nb - nbu) };
    idxb.extend(xi.iter().map(|i| nu + i));
    let z: Vec<f64> = u.iter().chain(x).copied().collect();
    let mut lb = Vec::with_capacity(nb);
    let mut ub = Vec::with_capacity(nb);
    for (q, &j) in idxb.iter().enumerate() {
        if fixed && q >= nbu {
            lb.push(z[j]);
            ub.push(z[j]);
        } else {
            lb.push(z[j] - rng.gen_range(0.1..1.0));
            ub.push(z[j] + rng.gen_range(0.1..1.0));
        }
    }
    set("idxb", idxb.into());
    set("lb", lb.into());
    set("ub", ub.into());
    if gen.ng > 0 {
        let d = random_mat(rng, gen.ng, nu);
        let c = random_mat(rng, gen.ng, nx);
        let full = d.hstack(&c);
        let cz = full.mul_vec(&z);
        set("D", d.into());
        set("C", c.into());
        set("lg", cz.iter().map(|v| v - rng.gen_range(0.1..1.0)).collect::<Vec<_>>().into());
        set("ug", cz.iter().map(|v| v + rng.gen_range(0.1..1.0)).collect::<Vec<_>>().into());
    }
    // Soft rows never include the fixed initial state.
    if ns > 0 {
        let pool: Vec<usize> = (0..nb + gen.ng).filter(|&i| !(fixed && i >= nbu && i < nb)).collect();
        let pick: Vec<usize> = sorted_subset(rng, pool.len(), ns).into_iter().map(|i| pool[i]).collect();
        let mut vals = |lo: f64, hi: f64| (0..ns).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>();
        let (zlh, zuh, zl, zu) = (vals(0.5, 2.0), vals(0.5, 2.0), vals(0.1, 1.0), vals(0.1, 1.0));
        set("idxs", pick.into());
        set("Zl", zlh.into());
        set("Zu", zuh.into());
        set("zl", zl.into());
        set("zu", zu.into());
    }
}

/// Dimensions matching [`random_ocp_qp`] for `gen`.
pub fn ocp_dim(gen: &OcpGen) -> OcpQpDim {
    let k = gen.n + 1;
    let nu: Vec<usize> = (0..k).map(|n| if n == gen.n { 0 } else { gen.nu }).collect();
    let mut nb = Vec::with_capacity(k);
    let mut ns = Vec::with_capacity(k);
    for n in 0..k {
        let (_, b, s) = gen.stage_dims(nu[n], n == 0);
        nb.push(b);
        ns.push(s);
    }
    OcpQpDim::new(gen.n, vec![gen.nx; k], nu, nb, vec![gen.ng; k], ns)
}

/// Random feasible OCP QP with stable dynamics.
pub fn random_ocp_qp<R: Rng>(rng: &mut R, gen: &OcpGen) -> OcpQp {
    let dim = ocp_dim(gen);
    let mut qp = OcpQp::create(&dim).expect("valid dimensions");
    let mut x = random_vec(rng, gen.nx);
    for n in 0..=gen.n {
        let nu = dim.nu[n];
        let u = random_vec(rng, nu);
        fill_stage(rng, gen, nu, n == 0, &u, &x, |name, v| qp.set_field(name, n, v).unwrap());
        if n < gen.n {
            let (a, b) = random_dynamics(rng, gen.nx, nu);
            let bv: Vec<f64> = random_vec(rng, gen.nx).iter().map(|v| 0.1 * v).collect();
            let mut xn = a.mul_vec(&x);
            linalg::gemv(1.0, &b, &u, 1.0, &mut xn, false);
            linalg::axpy(1.0, &bv, &mut xn);
            qp.set_field("A", n, a).unwrap();
            qp.set_field("B", n, b).unwrap();
            qp.set_field("b", n, bv).unwrap();
            x = xn;
        }
    }
    qp
}

/// Random feasible tree QP over the given parent list (parents first). Leaves
/// have no inputs.
pub fn random_tree_qp<R: Rng>(rng: &mut R, parent: &[Option<usize>], gen: &OcpGen) -> TreeOcpQp {
    let nn = parent.len();
    let mut has_child = vec![false; nn];
    for p in parent.iter().flatten() {
        has_child[*p] = true;
    }
    let nu: Vec<usize> = (0..nn).map(|m| if has_child[m] { gen.nu } else { 0 }).collect();
    let mut nb = Vec::with_capacity(nn);
    let mut ns = Vec::with_capacity(nn);
    for m in 0..nn {
        let (_, b, s) = gen.stage_dims(nu[m], m == 0);
        nb.push(b);
        ns.push(s);
    }
    let dim = TreeOcpQpDim::new(parent.to_vec(), vec![gen.nx; nn], nu.clone(), nb, vec![gen.ng; nn], ns);
    let mut qp = TreeOcpQp::create(&dim).expect("valid tree");
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); nn];
    let mut us: Vec<Vec<f64>> = vec![Vec::new(); nn];
    for m in 0..nn {
        xs[m] = match parent[m] {
            None => random_vec(rng, gen.nx),
            Some(p) => {
                let (a, b) = random_dynamics(rng, gen.nx, nu[p]);
                let bv: Vec<f64> = random_vec(rng, gen.nx).iter().map(|v| 0.1 * v).collect();
                let mut xn = a.mul_vec(&xs[p]);
                linalg::gemv(1.0, &b, &us[p], 1.0, &mut xn, false);
                linalg::axpy(1.0, &bv, &mut xn);
                qp.set_field("A", m, a).unwrap();
                qp.set_field("B", m, b).unwrap();
                qp.set_field("b", m, bv).unwrap();
                xn
            }
        };
        us[m] = random_vec(rng, nu[m]);
        let (u, x) = (us[m].clone(), xs[m].clone());
        fill_stage(rng, gen, nu[m], m == 0, &u, &x, |name, v| qp.set_field(name, m, v).unwrap());
    }
    qp
}

/// Random point with `λ, t ∈ [0.1, 2]`, suitable as a Newton-system iterate.
pub fn random_iterate<R: Rng>(rng: &mut R, layout: &Layout) -> KktVec {
    KktVec {
        y: random_vec(rng, layout.ny),
        pi: random_vec(rng, layout.npi),
        lam: (0..layout.nc).map(|_| rng.gen_range(0.1..2.0)).collect(),
        t: (0..layout.nc).map(|_| rng.gen_range(0.1..2.0)).collect(),
    }
}

/// Random right-hand side of the Newton system.
pub fn random_rhs<R: Rng>(rng: &mut R, layout: &Layout) -> KktVec {
    KktVec {
        y: random_vec(rng, layout.ny),
        pi: random_vec(rng, layout.npi),
        lam: random_vec(rng, layout.nc),
        t: random_vec(rng, layout.nc),
    }
}
