use proptest::prelude::*;

use super::*;
use crate::ipm_core;
use crate::qp_data::oracle::{lu_solve, GenericQp};
use crate::qp_data::DenseQpDim;
use crate::testgen;

fn oracle_step(qp: &DenseQp, lam: &[f64], t: &[f64], r: &KktVec) -> KktVec {
    let g = GenericQp::from_dense(qp);
    let k = g.kkt_matrix(lam, t).unwrap();
    let rhs: Vec<f64> = r.to_flat().iter().map(|v| -v).collect();
    let x = lu_solve(&k, &rhs).expect("nonsingular oracle system");
    KktVec::from_flat(&x, g.ny(), g.npi(), g.nc())
}

fn rel_err(a: &KktVec, b: &KktVec) -> f64 {
    a.max_abs_diff(b) / (1.0 + b.norm_inf())
}

/// Schur complement of the trailing `(λ, t)` block of the full Newton matrix,
/// restricted to the primal rows.
fn numeric_ineq_elimination(qp: &DenseQp, lam: &[f64], t: &[f64]) -> Mat {
    let g = GenericQp::from_dense(qp);
    let k = g.kkt_matrix(lam, t).unwrap();
    let (ny, npi, nc) = (g.ny(), g.npi(), g.nc());
    let o = ny + npi;
    let m = k.block(o, o, 2 * nc, 2 * nc);
    let k21 = k.block(o, 0, 2 * nc, ny);
    let k12 = k.block(0, o, ny, 2 * nc);
    let mut s = k.block(0, 0, ny, ny);
    for j in 0..ny {
        let x = lu_solve(&m, &k21.col_vec(j)).unwrap();
        for i in 0..ny {
            s[(i, j)] -= (0..2 * nc).map(|p| k12[(i, p)] * x[p]).sum::<f64>();
        }
    }
    s
}

fn box_qp(h: f64, lam: f64) -> (DenseQp, Vec<f64>, Vec<f64>) {
    let mut qp = DenseQp::create(&DenseQpDim::new(1, 0, 1, 0, 0)).unwrap();
    qp.set_field("H", Mat::from_rows(&[[h]])).unwrap();
    qp.set_field("lb", vec![0.0]).unwrap();
    qp.set_field("ub", vec![2.0]).unwrap();
    (qp, vec![4.0 * lam, 1.0], vec![lam, 1.0])
}

#[test]
fn eliminate_ineq_without_constraints_is_identity() {
    let mut rng = testgen::rng(1);
    let qp = testgen::random_dense_qp(&mut rng, 4, 0, 0, 0, 0);
    let r = testgen::random_rhs(&mut rng, qp.layout());
    let aug = eliminate_ineq(&qp, &[], &[], &r).unwrap();
    assert_eq!(aug.hess, qp.stage.hess);
    assert_eq!(aug.grad, r.y);
}

#[test]
fn eliminate_ineq_single_box() {
    // λ/t = 4 on the lower row, 1 on the upper row
    let (qp, lam, t) = box_qp(1.0, 1.0);
    let r = KktVec::zeros(1, 0, 2);
    let aug = eliminate_ineq(&qp, &lam, &t, &r).unwrap();
    assert!((aug.hess[(0, 0)] - (1.0 + 4.0 + 1.0)).abs() < 1e-15);
    let num = numeric_ineq_elimination(&qp, &lam, &t);
    assert!(aug.hess.max_abs_diff(&num) < 1e-12);
}

#[test]
fn eliminate_ineq_all_masked() {
    let mut rng = testgen::rng(2);
    let mut qp = testgen::random_dense_qp(&mut rng, 3, 0, 2, 1, 0);
    qp.set_field("maskl", vec![0.0; 3]).unwrap();
    qp.set_field("masku", vec![0.0; 3]).unwrap();
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let r = KktVec::zeros_like(&it);
    let aug = eliminate_ineq(&qp, &it.lam, &it.t, &r).unwrap();
    assert_eq!(aug.hess, qp.stage.hess);
}

#[test]
fn eliminate_slacks_without_slacks_is_identity() {
    let mut rng = testgen::rng(3);
    let qp = testgen::random_dense_qp(&mut rng, 3, 0, 2, 1, 0);
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let r = testgen::random_rhs(&mut rng, qp.layout());
    let aug = eliminate_ineq(&qp, &it.lam, &it.t, &r).unwrap();
    assert_eq!(eliminate_slacks(&qp, &aug).unwrap(), aug);
}

#[test]
fn eliminate_slacks_single_soft_box_is_series_combination() {
    let mut qp = DenseQp::create(&DenseQpDim::new(1, 0, 1, 0, 1)).unwrap();
    qp.set_field("H", Mat::from_rows(&[[1.0]])).unwrap();
    qp.set_field("lb", vec![0.0]).unwrap();
    qp.set_field("ub", vec![2.0]).unwrap();
    qp.set_field("Zl", vec![3.0]).unwrap();
    qp.set_field("Zu", vec![5.0]).unwrap();
    // rows: lower box, upper box, lower slack bound, upper slack bound
    let lam = vec![2.0, 1.0, 1.0, 1.0];
    let t = vec![1.0, 1.0, 2.0, 4.0];
    let r = KktVec::zeros(3, 0, 4);
    let aug = eliminate_ineq(&qp, &lam, &t, &r).unwrap();
    let red = eliminate_slacks(&qp, &aug).unwrap();
    // constraint stiffness γ in series with the slack stiffness Z + γ_s
    let series = |g: f64, z: f64| 1.0 / (1.0 / g + 1.0 / z);
    let expect = 1.0 + series(2.0, 3.0 + 0.5) + series(1.0, 5.0 + 0.25);
    assert!((red.hess[(0, 0)] - expect).abs() < 1e-14);
    // agrees with the full Newton step
    let mut rng = testgen::rng(4);
    let rr = testgen::random_rhs(&mut rng, qp.layout());
    let arg = DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..Default::default() };
    let f = factor(&qp, &lam, &t, &arg).unwrap();
    let step = solve(&f, &qp, &rr).unwrap();
    assert!(rel_err(&step, &oracle_step(&qp, &lam, &t, &rr)) < 1e-10);
}

#[test]
fn singular_slack_block() {
    let mut qp = DenseQp::create(&DenseQpDim::new(1, 0, 1, 0, 1)).unwrap();
    qp.set_field("H", Mat::from_rows(&[[1.0]])).unwrap();
    qp.set_field("lb", vec![0.0]).unwrap();
    qp.set_field("ub", vec![2.0]).unwrap();
    let lam = vec![0.0; 4];
    let t = vec![1.0; 4];
    let r = KktVec::zeros(3, 0, 4);
    let aug = eliminate_ineq(&qp, &lam, &t, &r).unwrap();
    assert!(matches!(eliminate_slacks(&qp, &aug), Err(KktError::SingularSlackBlock { .. })));
    let arg = DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..Default::default() };
    assert!(matches!(factor(&qp, &lam, &t, &arg), Err(KktError::SingularSlackBlock { .. })));
}

#[test]
fn elimination_order_matches_numeric_block_elimination() {
    let mut rng = testgen::rng(5);
    for _ in 0..10 {
        let qp = testgen::random_dense_qp(&mut rng, 5, 1, 3, 2, 2);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = KktVec::zeros_like(&it);
        let aug = eliminate_ineq(&qp, &it.lam, &it.t, &r).unwrap();
        let num = numeric_ineq_elimination(&qp, &it.lam, &it.t);
        assert!(aug.hess.max_abs_diff(&num) < 1e-12 * (1.0 + num.max_abs()));
        let red = eliminate_slacks(&qp, &aug).unwrap();
        let sw = StageWeights::new(&qp.stage, &it.lam, &it.t, &qp.mask(), 0.0, 0).unwrap();
        let h = sw.reduced_hessian(&qp.stage, 0.0);
        assert!(red.hess.max_abs_diff(&h) < 1e-12 * (1.0 + h.max_abs()));
    }
}

#[test]
fn factor_identity() {
    let mut qp = DenseQp::create(&DenseQpDim::new(3, 0, 0, 0, 0)).unwrap();
    qp.set_field("H", Mat::identity(3)).unwrap();
    let arg = DenseKktArg { reg_prim: 0.0, ..Default::default() };
    let f = factor(&qp, &[], &[], &arg).unwrap();
    assert_eq!(f.lh, Mat::identity(3));
}

#[test]
fn factor_zero_hessian_fails() {
    let qp = DenseQp::create(&DenseQpDim::new(2, 0, 0, 0, 0)).unwrap();
    let arg = DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..Default::default() };
    assert!(matches!(factor(&qp, &[], &[], &arg), Err(KktError::FactorizationFailed { .. })));
}

#[test]
fn zero_rhs_gives_zero_step() {
    let mut rng = testgen::rng(6);
    let qp = testgen::random_dense_qp(&mut rng, 4, 1, 2, 1, 1);
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let f = factor(&qp, &it.lam, &it.t, &DenseKktArg::default()).unwrap();
    let step = solve(&f, &qp, &KktVec::zeros_like(&it)).unwrap();
    assert_eq!(step.norm_inf(), 0.0);
}

#[test]
fn small_step_matches_oracle() {
    let mut rng = testgen::rng(7);
    let qp = testgen::random_dense_qp(&mut rng, 3, 1, 0, 2, 0);
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let r = testgen::random_rhs(&mut rng, qp.layout());
    for method in [EqMethod::Schur, EqMethod::NullSpace] {
        let arg = DenseKktArg { method, reg_prim: 0.0, reg_dual: 0.0, use_qr: false };
        let f = factor(&qp, &it.lam, &it.t, &arg).unwrap();
        let step = solve(&f, &qp, &r).unwrap();
        assert!(rel_err(&step, &oracle_step(&qp, &it.lam, &it.t, &r)) < 1e-9);
    }
}

#[test]
fn absolute_formulation_matches_delta() {
    // an LP-like QP: tiny Hessian, active box and general rows
    let mut rng = testgen::rng(8);
    let mut qp = testgen::random_dense_qp(&mut rng, 3, 1, 3, 1, 0);
    let mut h = Mat::identity(3);
    h.scale(1e-2);
    qp.set_field("H", h).unwrap();
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let mask = qp.mask();
    let sigma_mu = 0.1;
    let arg = DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..Default::default() };
    let f = factor(&qp, &it.lam, &it.t, &arg).unwrap();
    let mut r = qp_data::residual_vec(&qp, &it, &mask);
    r.t.iter_mut().for_each(|v| *v -= sigma_mu);
    let step = solve(&f, &qp, &r).unwrap();
    let mut expect = it.clone();
    expect.axpy(1.0, &step);
    // absolute right-hand side: (g, b, d, r_m − 2 Λ T e)
    let r_abs = KktVec {
        y: qp.gradient(),
        pi: qp.eq_rhs(),
        lam: qp.ineq_rhs(),
        t: (0..mask.len()).map(|k| -it.lam[k] * it.t[k] - sigma_mu).collect(),
    };
    let w = solve(&f, &qp, &r_abs).unwrap();
    assert!(w.max_abs_diff(&expect) < 1e-12 * (1.0 + expect.norm_inf()));
    let d = ipm_core::recover_step_absolute(&it, &w);
    assert!(d.max_abs_diff(&step) < 1e-11);
}

#[test]
fn kkt_apply_examples() {
    let mut qp = DenseQp::create(&DenseQpDim::new(2, 0, 0, 0, 0)).unwrap();
    qp.set_field("H", Mat::identity(2)).unwrap();
    let zero = KktVec::zeros(2, 0, 0);
    assert_eq!(kkt_apply(&qp, &[], &[], &zero).norm_inf(), 0.0);
    let e1 = KktVec { y: vec![1.0, 0.0], ..zero.clone() };
    assert_eq!(kkt_apply(&qp, &[], &[], &e1).y, vec![1.0, 0.0]);

    let mut rng = testgen::rng(9);
    let qp = testgen::random_dense_qp(&mut rng, 5, 2, 3, 2, 2);
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let r = testgen::random_rhs(&mut rng, qp.layout());
    let arg = DenseKktArg { reg_prim: 0.0, reg_dual: 0.0, ..Default::default() };
    let f = factor(&qp, &it.lam, &it.t, &arg).unwrap();
    let step = solve(&f, &qp, &r).unwrap();
    let mut res = kkt_apply(&qp, &it.lam, &it.t, &step);
    res.axpy(1.0, &r);
    assert!(res.norm_inf() < 1e-10);
}

#[test]
fn masked_rows_are_identity_rows() {
    let mut rng = testgen::rng(10);
    let mut qp = testgen::random_dense_qp(&mut rng, 4, 0, 2, 2, 0);
    qp.set_field("maskl", vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let it = testgen::random_iterate(&mut rng, qp.layout());
    let r = testgen::random_rhs(&mut rng, qp.layout());
    let f = factor(&qp, &it.lam, &it.t, &DenseKktArg::default()).unwrap();
    let step = solve(&f, &qp, &r).unwrap();
    for k in [1, 3] {
        assert_eq!(step.t[k], -r.lam[k]);
        assert_eq!(step.lam[k], -r.t[k]);
    }
    assert!(rel_err(&step, &oracle_step(&qp, &it.lam, &it.t, &r)) < 1e-9);
}

#[test]
fn regularization_with_refinement_reduces_error() {
    let mut rng = testgen::rng(11);
    for _ in 0..5 {
        let qp = testgen::random_dense_qp(&mut rng, 6, 2, 3, 2, 1);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let exact = oracle_step(&qp, &it.lam, &it.t, &r);
        let arg = DenseKktArg { reg_prim: 1e-6, reg_dual: 0.0, ..Default::default() };
        let f = factor(&qp, &it.lam, &it.t, &arg).unwrap();
        let d0 = solve(&f, &qp, &r).unwrap();
        let err0 = d0.max_abs_diff(&exact);
        let refined = ipm_core::iterative_refinement(
            |e| solve(&f, &qp, e).ok(),
            |d| kkt_apply(&qp, &it.lam, &it.t, d),
            &r,
            d0,
            1,
            0.0,
        );
        assert!(refined.delta.max_abs_diff(&exact) < err0, "{} vs {}", refined.delta.max_abs_diff(&exact), err0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_matches_dense_oracle(
        seed in any::<u64>(),
        nv in 1usize..=20,
        ne_f in 0.0f64..1.0,
        nb_f in 0.0f64..1.0,
        ng in 0usize..=8,
        ns_f in 0.0f64..1.0,
        method in prop_oneof![Just(EqMethod::Schur), Just(EqMethod::NullSpace)],
        use_qr in any::<bool>(),
    ) {
        let ne = ((nv.min(5) as f64) * ne_f) as usize;
        let nb = ((nv.min(15 - ng.min(15)) as f64) * nb_f) as usize;
        let ns = (((nb + ng).min(5) as f64) * ns_f) as usize;
        let mut rng = testgen::rng(seed);
        let qp = testgen::random_dense_qp(&mut rng, nv, ne, nb, ng, ns);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let arg = DenseKktArg { method, reg_prim: 0.0, reg_dual: 0.0, use_qr };
        let f = factor(&qp, &it.lam, &it.t, &arg).unwrap();
        let step = solve(&f, &qp, &r).unwrap();
        let oracle = oracle_step(&qp, &it.lam, &it.t, &r);
        prop_assert!(step.max_abs_diff(&oracle) <= 1e-8 * (1.0 + oracle.norm_inf()));
    }

    #[test]
    fn schur_and_null_space_agree(seed in any::<u64>(), nv in 2usize..=10, ne in 1usize..=3) {
        let ne = ne.min(nv - 1);
        let mut rng = testgen::rng(seed);
        let qp = testgen::random_dense_qp(&mut rng, nv, ne, nv / 2, 2, 1);
        let it = testgen::random_iterate(&mut rng, qp.layout());
        let r = testgen::random_rhs(&mut rng, qp.layout());
        let steps: Vec<KktVec> = [EqMethod::Schur, EqMethod::NullSpace]
            .into_iter()
            .map(|method| {
                let arg = DenseKktArg { method, reg_prim: 0.0, reg_dual: 0.0, use_qr: false };
                solve(&factor(&qp, &it.lam, &it.t, &arg).unwrap(), &qp, &r).unwrap()
            })
            .collect();
        prop_assert!(rel_err(&steps[0], &steps[1]) <= 1e-8);
    }
}
