//! Chain of masses between two walls, connected by springs, with all but the
//! last mass actuated.

use mpcqp::linalg::Mat;
use mpcqp::qp_data::{OcpQp, OcpQpDim};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MassSpringError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassSpringConfig {
    pub masses: usize,
    pub horizon: usize,
    /// Sampling time in seconds.
    pub ts: f64,
    /// Initial state `[positions; velocities]`; `None` selects the default.
    pub x0: Option<Vec<f64>>,
    pub u_max: f64,
    pub x_max: f64,
}

impl MassSpringConfig {
    pub fn new(masses: usize, horizon: usize) -> Self {
        Self { masses, horizon, ts: 0.5, x0: None, u_max: 0.5, x_max: 4.0 }
    }

    pub fn nx(&self) -> usize {
        2 * self.masses
    }

    pub fn nu(&self) -> usize {
        self.masses - 1
    }

    pub fn validate(&self) -> Result<(), MassSpringError> {
        let bad = |m: &str| Err(MassSpringError::InvalidConfig(m.into()));
        if self.masses < 2 {
            return bad("at least two masses are required");
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad("sampling time must be positive");
        }
        if !(self.u_max > 0.0 && self.x_max > 0.0) {
            return bad("bounds must be positive");
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.nx() {
                return bad("x0 must have 2 * masses entries");
            }
        }
        Ok(())
    }

    /// The given initial state, or the first two positions displaced by 2.5.
    pub fn initial_state(&self) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| {
            let mut x = vec![0.0; self.nx()];
            x[0] = 2.5;
            x[1] = 2.5;
            x
        })
    }
}

/// Continuous-time model `ẋ = Ac x + Bc u`.
pub fn continuous_model(masses: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = masses;
    let mut ac = DMatrix::zeros(2 * m, 2 * m);
    let mut bc = DMatrix::zeros(2 * m, m - 1);
    for i in 0..m {
        ac[(i, m + i)] = 1.0;
        ac[(m + i, i)] = -2.0;
        if i > 0 {
            ac[(m + i, i - 1)] = 1.0;
        }
        if i + 1 < m {
            ac[(m + i, i + 1)] = 1.0;
        }
    }
    for i in 0..m - 1 {
        bc[(m + i, i)] = 1.0;
    }
    (ac, bc)
}

/// Zero-order-hold discretization through the exponential of the augmented
/// matrix `[[Ac, Bc], [0, 0]] ts`.
pub fn discretize(ac: &DMatrix<f64>, bc: &DMatrix<f64>, ts: f64) -> (Mat, Mat) {
    let (nx, nu) = (ac.nrows(), bc.ncols());
    let mut aug = DMatrix::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(ac * ts));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(bc * ts));
    let e = aug.exp();
    let to_mat = |r0: usize, c0: usize, r: usize, c: usize| {
        let mut out = Mat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out[(i, j)] = e[(r0 + i, c0 + j)];
            }
        }
        out
    };
    (to_mat(0, 0, nx, nx), to_mat(0, nx, nx, nu))
}

/// Discrete-time `(A, B)` of the configuration.
pub fn plant(cfg: &MassSpringConfig) -> (Mat, Mat) {
    let (ac, bc) = continuous_model(cfg.masses);
    discretize(&ac, &bc, cfg.ts)
}

/// OCP QP with unit weights, input and state boxes on every stage and the
/// initial state fixed by equal bounds.
pub fn gen_mass_spring(cfg: &MassSpringConfig) -> Result<OcpQp, MassSpringError> {
    cfg.validate()?;
    let (nx, nu, n) = (cfg.nx(), cfg.nu(), cfg.horizon);
    let nus: Vec<usize> = (0..=n).map(|k| if k < n { nu } else { 0 }).collect();
    let nbs: Vec<usize> = nus.iter().map(|u| u + nx).collect();
    let dim = OcpQpDim::new(n, vec![nx; n + 1], nus.clone(), nbs, vec![0; n + 1], vec![0; n + 1]);
    let mut qp = OcpQp::create(&dim).expect("consistent dimensions");
    let (a, b) = plant(cfg);
    for k in 0..=n {
        let nu = nus[k];
        let set = |qp: &mut OcpQp, name: &str, v: mpcqp::qp_data::FieldValue| {
            qp.set_field(name, k, v).expect("catalog field");
        };
        set(&mut qp, "Q", Mat::identity(nx).into());
        set(&mut qp, "R", Mat::identity(nu).into());
        set(&mut qp, "idxb", (0..nu + nx).collect::<Vec<usize>>().into());
        let mut lb: Vec<f64> = vec![-cfg.u_max; nu];
        lb.extend(vec![-cfg.x_max; nx]);
        let ub: Vec<f64> = lb.iter().map(|v| -v).collect();
        set(&mut qp, "lb", lb.into());
        set(&mut qp, "ub", ub.into());
        if k < n {
            set(&mut qp, "A", a.clone().into());
            set(&mut qp, "B", b.clone().into());
        }
    }
    set_initial_state(&mut qp, &cfg.initial_state());
    Ok(qp)
}

/// Fixes the initial state of a generated QP by equal bounds.
pub fn set_initial_state(qp: &mut OcpQp, x0: &[f64]) {
    let nu = qp.dim().nu[0];
    let mut lb = qp.get_field("lb", 0).expect("catalog field").as_vec().expect("vector").to_vec();
    let mut ub = qp.get_field("ub", 0).expect("catalog field").as_vec().expect("vector").to_vec();
    lb[nu..nu + x0.len()].copy_from_slice(x0);
    ub[nu..nu + x0.len()].copy_from_slice(x0);
    qp.set_field("lb", 0, lb).expect("matching length");
    qp.set_field("ub", 0, ub).expect("matching length");
}
