//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! the process stdout (bypassing the harness capture) and then asserts.

use std::io::Write;

use mpcqp::condensing;
use mpcqp::ipm_core::{IpmArg, Mode, Status, WarmStart};
use mpcqp::kkt_dense::{self, DenseKktArg};
use mpcqp::kkt_ocp::{self, RiccatiArg};
use mpcqp::kkt_tree;
use mpcqp::linalg::{flops, Mat};
use mpcqp::qp_data::oracle::{lu_solve, GenericQp};
use mpcqp::qp_data::{objective, DenseQp, DenseQpDim, KktVec, OcpQp, OcpQpDim, QpStructure, TreeOcpQp, TreeOcpQpDim};
use mpcqp::solver::{solve_dense_qp, solve_ocp_qp, solve_tree_ocp_qp, SolveReport};
use mpcqp::testgen::{self, OcpGen};
use mpcqp_bench::mass_spring::{gen_mass_spring, MassSpringConfig};
use mpcqp_bench::qpfile::{qp_read, qp_write, AnyQp};
use mpcqp_bench::report::{render, ReportMeta};
use mpcqp_bench::run::{run_closed_loop, solve_ocp_path, SolvePath};

fn verdict(name: &str, ok: bool, detail: String) {
    let line = format!("\n{} {}: {}\n", if ok { "PASS" } else { "FAIL" }, name, detail);
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "{}", line.trim_end());
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    d / (1.0 + norm_inf(b))
}

fn rel_kkt(a: &KktVec, b: &KktVec) -> f64 {
    a.max_abs_diff(b) / (1.0 + b.norm_inf())
}

/// Reference step from the assembled Newton matrix.
fn oracle_step(g: &GenericQp, lam: &[f64], t: &[f64], r: &KktVec) -> KktVec {
    let k = g.kkt_matrix(lam, t).unwrap();
    let rhs: Vec<f64> = r.to_flat().iter().map(|v| -v).collect();
    let flat = lu_solve(&k, &rhs).expect("nonsingular Newton matrix");
    KktVec::from_flat(&flat, g.ny(), g.npi(), g.nc())
}

fn exact_dense() -> DenseKktArg {
    DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..DenseKktArg::default() }
}

fn exact_riccati() -> RiccatiArg {
    RiccatiArg { reg_prim: 0.0, ..RiccatiArg::default() }
}

fn random_ocp_case(i: usize) -> OcpGen {
    let n = 1 + i % 8;
    let nx = 1 + (i * 5) % 6;
    let nu = 1 + (i / 3) % 3;
    OcpGen::new(n, nx, nu)
        .boxes(i % (nu + 1), (i / 2) % (nx + 1))
        .general(i % 3)
        .soft((i / 4) % 2)
        .x0_fixed(i % 2 == 0)
}

#[test]
fn newton_steps_match_assembled_system() {
    let mut rng = testgen::rng(101);
    let mut worst_dense = 0.0f64;
    for i in 0..50 {
        let nv = 1 + (i * 7) % 20;
        let ne = (i % 6).min(nv - 1);
        let nb = (i * 3) % (nv + 1);
        let ng = i % 4;
        let ns = (i % 3).min(nb + ng);
        let qp = testgen::random_dense_qp(&mut rng, nv, ne, nb, ng, ns);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let f = kkt_dense::factor(&qp, &it.lam, &it.t, &exact_dense()).unwrap();
        let d = kkt_dense::solve(&f, &qp, &r).unwrap();
        let o = oracle_step(&GenericQp::from_dense(&qp), &it.lam, &it.t, &r);
        worst_dense = worst_dense.max(rel_kkt(&d, &o));
    }
    let mut worst_ocp = 0.0f64;
    for i in 0..50 {
        let qp = testgen::random_ocp_qp(&mut rng, &random_ocp_case(i));
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let f = kkt_ocp::riccati_factor(&qp, &it.lam, &it.t, &exact_riccati()).unwrap();
        let d = kkt_ocp::riccati_solve(&f, &qp, &r).unwrap();
        let o = oracle_step(&GenericQp::from_ocp(&qp), &it.lam, &it.t, &r);
        worst_ocp = worst_ocp.max(rel_kkt(&d, &o));
    }
    verdict(
        "newton steps (50 dense, 50 ocp) vs assembled system",
        worst_dense <= 1e-8 && worst_ocp <= 1e-8,
        format!("max rel err dense {:.2e}, ocp {:.2e} (tol 1e-8)", worst_dense, worst_ocp),
    );
}

fn m1(v: f64) -> Mat {
    Mat::from_rows(&[[v]])
}

#[test]
fn scalar_lqr_gain_and_cost_to_go() {
    let mut qp = OcpQp::create(&OcpQpDim::new(1, vec![1, 1], vec![1, 0], vec![0, 0], vec![0, 0], vec![0, 0])).unwrap();
    for (k, v) in [("Q", 0), ("R", 0), ("A", 0), ("B", 0), ("Q", 1)] {
        qp.set_field(k, v, m1(1.0)).unwrap();
    }
    let f = kkt_ocp::riccati_factor(&qp, &[], &[], &exact_riccati()).unwrap();
    let p0 = f.cost_to_go(0).as_slice()[0];
    let k0 = kkt_ocp::feedback_gains(&f)[0].as_slice()[0];

    // Same problem with x0 entering as the constant of the first dynamics.
    let mut worst_u = 0.0f64;
    for x0 in [1.0, -2.5, 0.3, 7.0] {
        let mut eq = OcpQp::create(&OcpQpDim::new(1, vec![0, 1], vec![1, 0], vec![0, 0], vec![0, 0], vec![0, 0])).unwrap();
        eq.set_field("R", 0, m1(1.0)).unwrap();
        eq.set_field("B", 0, m1(1.0)).unwrap();
        eq.set_field("b", 0, vec![x0]).unwrap();
        eq.set_field("Q", 1, m1(1.0)).unwrap();
        let rep = solve_ocp_qp(&eq, &IpmArg::new(Mode::Speed).with_tol(1e-14), None);
        assert_eq!(rep.stats.status, Status::Success);
        worst_u = worst_u.max((rep.solution.u(0)[0] + 0.5 * x0).abs());
    }
    let ok = (p0 - 1.5).abs() <= 1e-12 && (k0 + 0.5).abs() <= 1e-12 && worst_u <= 1e-12;
    verdict(
        "scalar lqr",
        ok,
        format!("P0 = {:.15}, K0 = {:.15}, max |u0 + x0/2| = {:.1e} (tol 1e-12)", p0, k0, worst_u),
    );
}

#[test]
fn mass_spring_solves_in_all_modes() {
    let mut details = Vec::new();
    let mut ok = true;
    for m in [2, 4] {
        let cfg = MassSpringConfig::new(m, 10);
        let qp = gen_mass_spring(&cfg).unwrap();
        let d = qp.dim();
        ok &= d.nx[0] == 2 * m && d.nu[0] == m - 1 && d.nb[0] == 3 * m - 1;
        for mode in Mode::ALL {
            let rep = solve_ocp_qp(&qp, &IpmArg::new(mode).with_tol(1e-6), None);
            let r = &rep.residuals;
            let converged = if mode == Mode::SpeedAbs {
                r.mu <= 1e-6
            } else {
                r.res_g <= 1e-6 && r.res_b <= 1e-6 && r.res_d <= 1e-6 && r.res_m <= 1e-6
            };
            let good = rep.stats.status == Status::Success && rep.stats.iterations <= 15 && converged;
            ok &= good;
            details.push(format!("M{} {} {} it", m, mode.name(), rep.stats.iterations));
        }
    }
    verdict("mass-spring N=10, M in {2,4}, all modes", ok, details.join(", "));
}

#[test]
fn condensing_paths_agree() {
    let arg = IpmArg::new(Mode::Balance).with_tol(1e-11);
    let mut rng = testgen::rng(303);
    let (mut worst_y, mut worst_f, mut worst_one, mut worst_full) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut failures = 0;
    for i in 0..30 {
        let mut gen = random_ocp_case(i).x0_fixed(true);
        gen.n = 2 + i % 7;
        let qp = testgen::random_ocp_qp(&mut rng, &gen);
        let direct = solve_ocp_path(&qp, &arg, SolvePath::Ocp, None).unwrap();
        let dense = solve_ocp_path(&qp, &arg, SolvePath::Condense, None).unwrap();
        let one = solve_ocp_path(&qp, &arg, SolvePath::Partial(1), None).unwrap();
        let full = solve_ocp_path(&qp, &arg, SolvePath::Partial(gen.n), None).unwrap();
        for rep in [&direct, &dense, &one, &full] {
            if rep.stats.status != Status::Success {
                failures += 1;
            }
        }
        let (fd, fc) = (objective(&qp, &direct.solution), objective(&qp, &dense.solution));
        worst_y = worst_y.max(rel(&dense.solution.y, &direct.solution.y));
        worst_f = worst_f.max((fd - fc).abs() / (1.0 + fd.abs()));
        worst_one = worst_one.max(rel_kkt(&one.solution.to_kkt(), &direct.solution.to_kkt()));
        worst_full = worst_full.max(rel(&full.solution.y, &dense.solution.y));
    }
    let long = testgen::random_ocp_qp(&mut rng, &OcpGen::new(40, 3, 2).boxes(1, 1).x0_fixed(true));
    let horizon = condensing::partial_condense(&long, 8).unwrap().0.horizon();
    let ok = failures == 0
        && worst_y <= 1e-6
        && worst_f <= 1e-8
        && worst_one <= 1e-12
        && worst_full <= 1e-6
        && horizon == 5;
    verdict(
        "condensing paths",
        ok,
        format!(
            "failed solves {}, dense vs ocp: primal {:.1e} objective {:.1e}; N1=1 vs ocp {:.1e}; N1=N vs dense {:.1e}; N=40,N1=8 horizon {}",
            failures, worst_y, worst_f, worst_one, worst_full, horizon
        ),
    );
}

fn symmetric_tree() -> TreeOcpQp {
    let parent = vec![None, Some(0), Some(0), Some(1), Some(2)];
    let dim = TreeOcpQpDim::new(parent, vec![2; 5], vec![1, 1, 1, 0, 0], vec![3, 1, 1, 0, 0], vec![0; 5], vec![0; 5]);
    let mut qp = TreeOcpQp::create(&dim).unwrap();
    let a = Mat::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
    let b = Mat::from_rows(&[[0.1], [0.5]]);
    for m in 0..5 {
        qp.set_field("Q", m, Mat::identity(2)).unwrap();
        qp.set_field("q", m, vec![0.1, -0.2]).unwrap();
        if m > 0 {
            qp.set_field("A", m, a.clone()).unwrap();
            qp.set_field("B", m, b.clone()).unwrap();
        }
        if m < 3 {
            qp.set_field("R", m, m1(0.1)).unwrap();
        }
    }
    qp.set_field("idxb", 0, vec![0usize, 1, 2]).unwrap();
    qp.set_field("lb", 0, vec![-0.3, 2.0, 1.0]).unwrap();
    qp.set_field("ub", 0, vec![0.3, 2.0, 1.0]).unwrap();
    for m in [1, 2] {
        qp.set_field("lb", m, vec![-0.3]).unwrap();
        qp.set_field("ub", m, vec![0.3]).unwrap();
    }
    qp
}

#[test]
fn tree_solver_matches_chain_and_oracle() {
    let mut rng = testgen::rng(505);
    let mut worst_chain = 0.0f64;
    let mut statuses_ok = true;
    for i in 0..10 {
        let gen = random_ocp_case(i);
        let ocp = testgen::random_ocp_qp(&mut rng, &gen);
        let tree = TreeOcpQp::from_ocp(&ocp);
        for mode in Mode::ALL {
            let arg = IpmArg::new(mode).with_tol(1e-10);
            let a = solve_ocp_qp(&ocp, &arg, None);
            let b = solve_tree_ocp_qp(&tree, &arg, None);
            statuses_ok &= a.stats.status == b.stats.status;
            worst_chain = worst_chain.max(rel_kkt(&b.solution.to_kkt(), &a.solution.to_kkt()));
        }
    }
    let mut worst_step = 0.0f64;
    for depth in 1..=3 {
        let parent = TreeOcpQpDim::scenario_parents(depth, depth, 2);
        for i in 0..6 {
            let gen = OcpGen::new(depth, 1 + i % 4, 1 + i % 2).boxes(i % 2, i % 3).general(i % 2).soft(i % 2);
            let qp = testgen::random_tree_qp(&mut rng, &parent, &gen);
            let it = testgen::random_iterate(&mut rng, qp.layout());
            let r = testgen::random_rhs(&mut rng, qp.layout());
            let f = kkt_tree::tree_riccati_factor(&qp, &it.lam, &it.t, &exact_riccati()).unwrap();
            let d = kkt_tree::tree_riccati_solve(&f, &qp, &r).unwrap();
            let o = oracle_step(&GenericQp::from_tree(&qp), &it.lam, &it.t, &r);
            worst_step = worst_step.max(rel_kkt(&d, &o));
        }
    }
    let sym = symmetric_tree();
    let mut symmetric = true;
    for mode in Mode::ALL {
        let rep = solve_tree_ocp_qp(&sym, &IpmArg::new(mode).with_tol(1e-8), None);
        let s = &rep.solution;
        symmetric &= rep.stats.status == Status::Success
            && s.z(1) == s.z(2)
            && s.z(3) == s.z(4)
            && s.lam_stage(1) == s.lam_stage(2)
            && s.t_stage(1) == s.t_stage(2);
    }
    let ok = statuses_ok && worst_chain <= 1e-10 && worst_step <= 1e-8 && symmetric;
    verdict(
        "tree solver",
        ok,
        format!(
            "chain vs ocp {:.1e} (same status: {}); binary trees depth<=3 step err {:.1e}; symmetric branches identical: {}",
            worst_chain, statuses_ok, worst_step, symmetric
        ),
    );
}

#[test]
fn soft_constraints_match_active_set_reference() {
    let mut rng = testgen::rng(606);
    let arg = IpmArg::new(Mode::Speed).with_tol(1e-11);
    let (mut worst_y, mut worst_lam) = (0.0f64, 0.0f64);
    let (mut compared, mut active_slacks, mut failures) = (0, 0, 0);
    for i in 0..40 {
        let nv = 2 + i % 4;
        let nb = 1 + i % 3;
        let ng = 1 + (i / 3) % 2;
        let ns = 1 + i % (nb + ng).min(3);
        let mut qp = testgen::random_dense_qp(&mut rng, nv, (i / 5) % 2, nb.min(nv), ng, ns.min(nb.min(nv) + ng));
        let g: Vec<f64> = qp.get_field("g").unwrap().as_vec().unwrap().iter().map(|v| 6.0 * v).collect();
        qp.set_field("g", g).unwrap();
        let Some(reference) = GenericQp::from_dense(&qp).active_set_solve(1e-9) else { continue };
        let rep = solve_dense_qp(&qp, &arg, None);
        if rep.stats.status != Status::Success {
            failures += 1;
            continue;
        }
        compared += 1;
        let k = rep.solution.to_kkt();
        let nz = qp.dim().nv;
        if k.y[nz..].iter().any(|s| *s > 1e-6) {
            active_slacks += 1;
        }
        worst_y = worst_y.max(rel(&k.y, &reference.y).max(rel(&k.pi, &reference.pi)));
        worst_lam = worst_lam.max(rel(&k.lam, &reference.lam));
    }
    let ok = failures == 0 && compared >= 20 && active_slacks > 0 && worst_y <= 1e-7 && worst_lam <= 1e-7;
    verdict(
        "soft constraints vs active-set reference",
        ok,
        format!(
            "{} problems compared ({} with active slacks, {} solver failures): primal/eq err {:.1e}, multiplier err {:.1e} (tol 1e-7)",
            compared, active_slacks, failures, worst_y, worst_lam
        ),
    );
}

/// Least-squares line through `(x, y)`; returns the largest relative
/// deviation of a point from it.
fn affine_deviation(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    pts.iter().map(|(x, y)| ((my + slope * (x - mx)) - y).abs() / y).fold(0.0, f64::max)
}

#[test]
fn factorization_flops_scale_linearly() {
    let mut rng = testgen::rng(707);
    let factor_flops = |qp: &OcpQp| {
        let it = testgen::random_iterate(&mut testgen::rng(1), qp.layout());
        flops::measure(|| kkt_ocp::riccati_factor(qp, &it.lam, &it.t, &RiccatiArg::default()).unwrap()).1
    };
    let mut ratios = Vec::new();
    for n in [10, 20, 40, 80] {
        let gen = OcpGen::new(n, 6, 3).boxes(2, 3).general(1);
        let a = factor_flops(&testgen::random_ocp_qp(&mut rng, &gen));
        let b = factor_flops(&testgen::random_ocp_qp(&mut rng, &OcpGen { n: 2 * n, ..gen }));
        ratios.push(b as f64 / a as f64);
    }
    let mut devs = Vec::new();
    for (robust, real) in [(1, 3), (2, 2)] {
        let mut pts = Vec::new();
        for h in 3..=8 {
            let parent = TreeOcpQpDim::scenario_parents(h, robust, real);
            let qp = testgen::random_tree_qp(&mut rng, &parent, &OcpGen::new(h, 4, 2).boxes(1, 2));
            let it = testgen::random_iterate(&mut testgen::rng(2), qp.layout());
            let f = flops::measure(|| kkt_tree::tree_riccati_factor(&qp, &it.lam, &it.t, &RiccatiArg::default()).unwrap()).1;
            pts.push((parent.len() as f64, f as f64));
        }
        devs.push(affine_deviation(&pts));
    }
    let ok = ratios.iter().all(|r| (r - 2.0).abs() <= 0.2) && devs.iter().all(|d| *d <= 1e-2);
    verdict(
        "factorization flops",
        ok,
        format!(
            "riccati flops ratio on doubling N: {}; tree max deviation from affine fit in node count: {}",
            ratios.iter().map(|r| format!("{:.3}", r)).collect::<Vec<_>>().join(" "),
            devs.iter().map(|d| format!("{:.1e}", d)).collect::<Vec<_>>().join(" ")
        ),
    );
}

#[derive(Default)]
struct DenseSpec {
    h: Vec<Vec<f64>>,
    g: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    idxb: Vec<usize>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    c: Vec<Vec<f64>>,
    lg: Vec<f64>,
    ug: Vec<f64>,
}

impl DenseSpec {
    fn build(self) -> DenseQp {
        let nv = self.g.len();
        let dim = DenseQpDim::new(nv, self.b.len(), self.idxb.len(), self.lg.len(), 0);
        let mut qp = DenseQp::create(&dim).unwrap();
        qp.set_field("H", Mat::from_rows(&self.h)).unwrap();
        qp.set_field("g", self.g).unwrap();
        if !self.b.is_empty() {
            qp.set_field("A", Mat::from_rows(&self.a)).unwrap();
            qp.set_field("b", self.b).unwrap();
        }
        if !self.idxb.is_empty() {
            qp.set_field("idxb", self.idxb).unwrap();
            qp.set_field("lb", self.lb).unwrap();
            qp.set_field("ub", self.ub).unwrap();
        }
        if !self.lg.is_empty() {
            qp.set_field("C", Mat::from_rows(&self.c)).unwrap();
            qp.set_field("lg", self.lg).unwrap();
            qp.set_field("ug", self.ug).unwrap();
        }
        qp
    }
}

/// `Q diag(d) Qᵀ` with an orthogonal `Q` built from Givens rotations.
fn rotated_diag(d: &[f64]) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut q = vec![vec![0.0; n]; n];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for i in 0..n {
        for j in i + 1..n {
            let th = 0.3 + 0.7 * (i * n + j) as f64;
            let (c, s) = (th.cos(), th.sin());
            for row in q.iter_mut() {
                let (a, b) = (row[i], row[j]);
                row[i] = c * a - s * b;
                row[j] = s * a + c * b;
            }
        }
    }
    (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| q[i][k] * d[k] * q[j][k]).sum()).collect()).collect()
}

fn all_boxes(n: usize, lo: f64, hi: f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    ((0..n).collect(), vec![lo; n], vec![hi; n])
}

fn ill_conditioned_suite() -> Vec<(&'static str, DenseQp)> {
    let mut out = Vec::new();
    let (idxb, lb, ub) = all_boxes(3, -1.0, 1.0);
    out.push((
        "near-singular H, cond 1e12",
        DenseSpec { h: rotated_diag(&[1.0, 1e-6, 1e-12]), g: vec![1.0, 1.0, 1.0], idxb, lb, ub, ..Default::default() }
            .build(),
    ));
    let (idxb, lb, ub) = all_boxes(4, -2.0, 2.0);
    out.push((
        "near-singular H, cond 1e10, general row",
        DenseSpec {
            h: rotated_diag(&[2.0, 1.0, 1e-3, 2e-10]),
            g: vec![0.5, -1.0, 0.25, 1.0],
            idxb,
            lb,
            ub,
            c: vec![vec![1.0, 1.0, 1.0, 1.0]],
            lg: vec![-0.5],
            ug: vec![0.5],
            ..Default::default()
        }
        .build(),
    ));
    let v = [1.0, 2.0, -1.0, 0.5];
    let mut h: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| v[i] * v[j]).collect()).collect();
    for (i, row) in h.iter_mut().enumerate() {
        row[i] += 1e-10;
    }
    let (idxb, lb, ub) = all_boxes(4, -2.0, 2.0);
    out.push((
        "rank-one H plus 1e-10 I",
        DenseSpec { h, g: vec![1.0, -1.0, 0.5, 2.0], idxb, lb, ub, ..Default::default() }.build(),
    ));
    let (idxb, lb, ub) = all_boxes(3, -3.0, 3.0);
    out.push((
        "near-singular H with equality",
        DenseSpec {
            h: rotated_diag(&[1.0, 1e-11, 1e-11]),
            g: vec![-1.0, 0.5, 0.25],
            a: vec![vec![1.0, -1.0, 2.0]],
            b: vec![0.5],
            idxb,
            lb,
            ub,
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "equal bounds on two variables",
        DenseSpec {
            h: rotated_diag(&[3.0, 1.0, 0.5, 0.1]),
            g: vec![1.0, 1.0, -1.0, 0.5],
            idxb: vec![0, 1, 2, 3],
            lb: vec![0.5, -0.25, -1.0, -1.0],
            ub: vec![0.5, -0.25, 1.0, 1.0],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "equal general bounds",
        DenseSpec {
            h: rotated_diag(&[1.0, 2.0, 0.5]),
            g: vec![0.3, -0.6, 0.2],
            idxb: vec![0, 2],
            lb: vec![-1.0, -1.0],
            ub: vec![1.0, 1.0],
            c: vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, -1.0]],
            lg: vec![0.2, -0.1],
            ug: vec![0.2, -0.1],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "every variable fixed",
        DenseSpec {
            h: rotated_diag(&[1.0, 1e-8, 1e-10]),
            g: vec![1.0, 2.0, 3.0],
            idxb: vec![0, 1, 2],
            lb: vec![0.1, -0.2, 0.3],
            ub: vec![0.1, -0.2, 0.3],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "duplicate active rows",
        DenseSpec {
            h: rotated_diag(&[1.0, 1.0, 1.0]),
            g: vec![-2.0, -2.0, 0.0],
            c: vec![vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            lg: vec![-10.0, -10.0, -1.0],
            ug: vec![1.0, 1.0, 1.0],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "degenerate vertex, four active rows in 2d",
        DenseSpec {
            h: rotated_diag(&[1.0, 1.0]),
            g: vec![-2.0, -2.0],
            idxb: vec![0, 1],
            lb: vec![-5.0, -5.0],
            ub: vec![1.0, 1.0],
            c: vec![vec![1.0, 1.0], vec![1.0, -1.0]],
            lg: vec![-10.0, -10.0],
            ug: vec![2.0, 0.0],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "weakly active bound",
        DenseSpec {
            h: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            g: vec![-1.0, -0.5],
            idxb: vec![0, 1],
            lb: vec![-1.0, -1.0],
            ub: vec![1.0, 0.5],
            c: vec![vec![1.0, 0.0]],
            lg: vec![-1.0],
            ug: vec![1.0],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "near-singular H, equal bounds, duplicate rows",
        DenseSpec {
            h: rotated_diag(&[1.0, 1e-11, 1e-10]),
            g: vec![-1.0, 1.0, -0.5],
            idxb: vec![0, 1, 2],
            lb: vec![0.25, -2.0, -2.0],
            ub: vec![0.25, 2.0, 2.0],
            c: vec![vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]],
            lg: vec![-0.5, -0.5],
            ug: vec![0.5, 0.5],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "badly scaled H, cond 1e12",
        DenseSpec {
            h: vec![vec![1e6, 0.0], vec![0.0, 1e-6]],
            g: vec![1e3, -1e-3],
            idxb: vec![0, 1],
            lb: vec![-1.0, -1.0],
            ub: vec![1.0, 1.0],
            ..Default::default()
        }
        .build(),
    ));
    let (idxb, lb, ub) = all_boxes(2, -1e6, 1e6);
    out.push((
        "singular H direction with wide bounds",
        DenseSpec { h: vec![vec![1.0, 0.0], vec![0.0, 1e-12]], g: vec![1.0, 1.0], idxb, lb, ub, ..Default::default() }
            .build(),
    ));
    out.push((
        "cond 1e16 with scaled bounds",
        DenseSpec {
            h: vec![vec![1e8, 0.0], vec![0.0, 1e-8]],
            g: vec![1e4, -1e-4],
            idxb: vec![0, 1],
            lb: vec![-1.0, -1e4],
            ub: vec![1.0, 1e4],
            ..Default::default()
        }
        .build(),
    ));
    let (idxb, lb, ub) = all_boxes(2, -1.0, 1.0);
    out.push((
        "huge gradient on a tiny Hessian",
        DenseSpec { h: vec![vec![1e-6, 0.0], vec![0.0, 1e-6]], g: vec![1e8, -1e8], idxb, lb, ub, ..Default::default() }
            .build(),
    ));
    let (idxb, lb, ub) = all_boxes(2, -1.0, 1.0);
    out.push((
        "large multipliers on a thin feasible band",
        DenseSpec {
            h: vec![vec![1e-10, 0.0], vec![0.0, 1e-10]],
            g: vec![1e6, -1e6],
            idxb,
            lb,
            ub,
            c: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            lg: vec![-1e-3, -1e-3],
            ug: vec![1e-3, 1e-3],
            ..Default::default()
        }
        .build(),
    ));
    out.push((
        "nearly equal bounds with a large gradient",
        DenseSpec {
            h: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            g: vec![1e6, 1.0],
            idxb: vec![0, 1],
            lb: vec![1.0, -1.0],
            ub: vec![1.0 + 1e-12, 1.0],
            c: vec![vec![1.0, -1.0]],
            lg: vec![0.0],
            ug: vec![0.0],
            ..Default::default()
        }
        .build(),
    ));
    out
}

#[test]
fn mode_robustness_ordering() {
    let suite = ill_conditioned_suite();
    let mut counts = [0usize; 4];
    let mut robust_misses = Vec::new();
    let mut certified = 0;
    for (name, qp) in &suite {
        let reference = GenericQp::from_dense(qp).active_set_solve(1e-6);
        certified += reference.is_some() as usize;
        for (k, mode) in Mode::ALL.into_iter().enumerate() {
            let rep = solve_dense_qp(qp, &IpmArg::new(mode).with_tol(1e-6), None);
            let ok = rep.stats.status == Status::Success;
            counts[k] += ok as usize;
            if mode == Mode::Robust && !ok && reference.is_some() {
                robust_misses.push(*name);
            }
        }
    }
    let [speed_abs, speed, balance, robust] = counts;
    let ok = robust >= balance && balance >= speed && speed >= speed_abs && robust_misses.is_empty();
    verdict(
        "mode robustness on ill-conditioned problems",
        ok,
        format!(
            "{} problems, {} certified; successes speed_abs {} speed {} balance {} robust {}; robust misses {:?}",
            suite.len(),
            certified,
            speed_abs,
            speed,
            balance,
            robust,
            robust_misses
        ),
    );
}

/// Residual norms `‖K Δ_k + r‖` of plain refinement, `k = 0..=steps`.
fn refinement_history(
    solve: impl Fn(&KktVec) -> KktVec,
    apply: impl Fn(&KktVec) -> KktVec,
    r: &KktVec,
    steps: usize,
) -> Vec<f64> {
    let mut d = solve(r);
    let mut out = Vec::new();
    for k in 0..=steps {
        let mut e = apply(&d);
        e.axpy(1.0, r);
        out.push(e.norm_inf());
        if k < steps {
            d.axpy(1.0, &solve(&e));
        }
    }
    out
}

#[test]
fn refinement_reduces_residual() {
    let mut rng = testgen::rng(909);
    let mut histories = Vec::new();
    for i in 0..20 {
        let qp = testgen::random_dense_qp(&mut rng, 3 + i % 10, i % 3, i % 4, i % 3, 0);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let arg = DenseKktArg { reg_prim: 1e-6, ..DenseKktArg::default() };
        let f = kkt_dense::factor(&qp, &it.lam, &it.t, &arg).unwrap();
        histories.push(refinement_history(
            |e| kkt_dense::solve(&f, &qp, e).unwrap(),
            |d| kkt_dense::kkt_apply(&qp, &it.lam, &it.t, d),
            &r,
            3,
        ));
    }
    for i in 0..20 {
        let qp = testgen::random_ocp_qp(&mut rng, &random_ocp_case(i));
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let arg = RiccatiArg { reg_prim: 1e-6, ..RiccatiArg::default() };
        let f = kkt_ocp::riccati_factor(&qp, &it.lam, &it.t, &arg).unwrap();
        histories.push(refinement_history(
            |e| kkt_ocp::riccati_solve(&f, &qp, e).unwrap(),
            |d| kkt_ocp::kkt_apply_ocp(&qp, &it.lam, &it.t, d),
            &r,
            3,
        ));
    }
    // A step may only fail to decrease once the residual sits at rounding level.
    let floor = 1e-13;
    let first_drop = histories.iter().all(|h| h[1] < h[0]);
    let monotone = histories.iter().all(|h| h.windows(2).skip(1).all(|w| w[1] <= w[0].max(floor)));
    let worst = |k: usize| histories.iter().map(|h| h[k]).fold(0.0, f64::max);
    verdict(
        "iterative refinement with reg 1e-6",
        first_drop && monotone,
        format!(
            "40 systems; worst residual after 0..3 steps: {:.1e} {:.1e} {:.1e} {:.1e}",
            worst(0),
            worst(1),
            worst(2),
            worst(3)
        ),
    );
}

#[test]
fn warm_start_reduces_closed_loop_iterations() {
    let mut details = Vec::new();
    let mut ok = true;
    for m in [2, 4] {
        let cfg = MassSpringConfig::new(m, 10);
        for mode in Mode::ALL {
            let arg = IpmArg::new(mode).with_tol(1e-8).with_warm_start(WarmStart::PrimalDual);
            let run = run_closed_loop(&cfg, 50, &arg, true).unwrap();
            let cold: usize = run.steps.iter().map(|s| s.cold_iterations.unwrap()).sum();
            let warm = run.total_iterations();
            let worse = run.steps.iter().filter(|s| s.iterations > s.cold_iterations.unwrap()).count();
            ok &= worse == 0 && warm < cold;
            details.push(format!("M{} {} warm {} cold {} worse steps {}", m, mode.name(), warm, cold, worse));
        }
    }
    verdict("closed-loop warm start, 50 steps, N=10", ok, details.join("; "));
}

fn report_text(qp: &OcpQp, mode: Mode) -> String {
    let rep: SolveReport = solve_ocp_qp(qp, &IpmArg::new(mode), None);
    let meta = ReportMeta {
        kind: "ocp".into(),
        mode: mode.name().into(),
        path: "ocp".into(),
        objective: objective(qp, &rep.solution),
    };
    render(&meta, &rep, true)
}

#[test]
fn runs_are_deterministic_and_files_round_trip() {
    let qp = gen_mass_spring(&MassSpringConfig::new(3, 10)).unwrap();
    let mut identical = true;
    for mode in Mode::ALL {
        let first = report_text(&qp, mode);
        identical &= (0..3).all(|_| report_text(&qp, mode) == first);
        let other = std::thread::spawn({
            let qp = qp.clone();
            move || report_text(&qp, mode)
        })
        .join()
        .unwrap();
        identical &= other == first;
    }

    let mut rng = testgen::rng(1111);
    let dir = tempfile::tempdir().unwrap();
    let samples = vec![
        AnyQp::Dense(testgen::random_dense_qp(&mut rng, 6, 2, 3, 2, 2)),
        AnyQp::Ocp(testgen::random_ocp_qp(&mut rng, &OcpGen::new(4, 3, 2).boxes(1, 2).general(1).soft(1))),
        AnyQp::Ocp(qp.clone()),
        AnyQp::Tree(testgen::random_tree_qp(
            &mut rng,
            &TreeOcpQpDim::scenario_parents(3, 2, 2),
            &OcpGen::new(3, 2, 1).boxes(1, 1).general(1).soft(1),
        )),
    ];
    let mut round_trips = 0;
    for (i, sample) in samples.iter().enumerate() {
        let path = dir.path().join(format!("qp{}.txt", i));
        qp_write(&path, sample).unwrap();
        if &qp_read(&path).unwrap() == sample {
            round_trips += 1;
        }
    }
    verdict(
        "determinism and file round trip",
        identical && round_trips == samples.len(),
        format!("repeated reports identical: {}; {} of {} problems round-trip exactly", identical, round_trips, samples.len()),
    );
}
