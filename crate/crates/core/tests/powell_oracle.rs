mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use vertfed::netsim::{Design, Federation, LedgerDetail, Network, PayloadKind, Response};
use vertfed::powell::{powell_solve, DirectionSet, PowellOptions, WlsProblem};
use vertfed::Dataset;

fn normal_equations(ds: &Dataset, design: Design, w: &[f64]) -> Vec<f64> {
    let pooled = ds.to_pooled();
    let (n, p) = pooled.x.shape();
    let mc = pooled.missing_col;
    let (x, y): (DMatrix<f64>, Vec<f64>) = match design {
        Design::Analysis => (DMatrix::from_fn(n, p, |i, j| pooled.x[(i, j)]), pooled.y.clone()),
        Design::Propensity => (
            DMatrix::from_fn(n, p, |i, j| if j == mc { pooled.y[i] } else { pooled.x[(i, j)] }),
            pooled.x.column(mc).into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect(),
        ),
    };
    let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let a = x.transpose() * &wd * &x;
    let b = x.transpose() * &wd * DVector::from_vec(y);
    a.cholesky().expect("full rank").solve(&b).iter().copied().collect()
}

fn solve(ds: &Dataset, problem: &WlsProblem<f64>) -> (Vec<f64>, Network) {
    let mut net = Network::new(ds.n(), ds.layout().widths(), LedgerDetail::Full);
    let mut fed = Federation::new(ds, &mut net).unwrap();
    let basis = DirectionSet::standard(fed.widths());
    let p = fed.param_count();
    let res = powell_solve(&mut fed, problem, &vec![0.0; p], &basis, &PowellOptions::default()).unwrap();
    assert!(!res.rank_deficient);
    (res.theta, net)
}

fn widths() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![Just(vec![2, 1]), Just(vec![3, 2]), Just(vec![2, 2, 2]), Just(vec![3, 2, 2]), Just(vec![4, 1, 3]),]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_weights_match_ols(seed in 0u64..10_000, widths in widths(), n in 20usize..100) {
        let ds = common::gaussian_dataset(n, &widths, |_, _| true, &mut common::rng(seed));
        let w = vec![1.0; n];
        let (theta, _) = solve(&ds, &WlsProblem::new(Design::Analysis, Response::Outcome, w.clone()));
        prop_assert!(common::max_abs_diff(&theta, &normal_equations(&ds, Design::Analysis, &w)) < 1e-8);
    }

    #[test]
    fn positive_weights_match_wls(seed in 0u64..10_000, widths in widths(), n in 20usize..100) {
        let mut r = common::rng(seed);
        let ds = common::gaussian_dataset(n, &widths, |_, _| true, &mut r);
        let w: Vec<f64> = (0..n).map(|i| 0.2 + (i % 7) as f64 * 0.6).collect();
        let (theta, _) = solve(&ds, &WlsProblem::new(Design::Analysis, Response::Outcome, w.clone()));
        prop_assert!(common::max_abs_diff(&theta, &normal_equations(&ds, Design::Analysis, &w)) < 1e-8);
    }

    #[test]
    fn complete_case_weights_for_missing_column(seed in 0u64..10_000, widths in widths(), n in 40usize..100) {
        let ds = common::gaussian_dataset(n, &widths, |i, _| i % 3 != 0, &mut common::rng(seed));
        let w: Vec<f64> = ds.response().iter().map(|&r| f64::from(r)).collect();
        let (theta, net) = solve(&ds, &WlsProblem::new(Design::Propensity, Response::MissingColumn, w.clone()));
        prop_assert!(common::max_abs_diff(&theta, &normal_equations(&ds, Design::Propensity, &w)) < 1e-8);
        let kinds = net.ledger().kinds();
        prop_assert!(!kinds.contains(&PayloadKind::GramShare));
        prop_assert!(!kinds.contains(&PayloadKind::GramBlock));
    }

    #[test]
    fn starting_point_does_not_matter(seed in 0u64..10_000, shift in -5.0f64..5.0) {
        let ds = common::gaussian_dataset(60, &[3, 2, 2], |_, _| true, &mut common::rng(seed));
        let problem = WlsProblem::new(Design::Analysis, Response::Outcome, vec![1.0; 60]);
        let mut net = Network::new(60, ds.layout().widths(), LedgerDetail::TotalsOnly);
        let mut fed = Federation::new(&ds, &mut net).unwrap();
        let basis = DirectionSet::standard(fed.widths());
        let from_zero = powell_solve(&mut fed, &problem, &[0.0; 7], &basis, &PowellOptions::default()).unwrap();
        let from_shift = powell_solve(&mut fed, &problem, &[shift; 7], &basis, &PowellOptions::default()).unwrap();
        prop_assert!(common::max_abs_diff(&from_zero.theta, &from_shift.theta) < 1e-8);
    }
}

#[test]
fn collinear_design_is_flagged() {
    let mut ds = common::gaussian_dataset(50, &[2, 2], |_, _| true, &mut common::rng(4));
    let x1 = ds.block(0).column(1);
    let copy: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
    let pooled = ds.to_pooled();
    let mut x = pooled.x.select_columns(&[1, 2, 3]);
    x.set_column(2, &copy);
    ds = vertfed::build_vertical(&x, &["X1".into(), "X2".into(), "X3".into()], pooled.y, ds.layout().clone()).unwrap();
    let mut net = Network::new(50, ds.layout().widths(), LedgerDetail::TotalsOnly);
    let mut fed = Federation::new(&ds, &mut net).unwrap();
    let basis = DirectionSet::standard(fed.widths());
    let problem = WlsProblem::new(Design::Analysis, Response::Outcome, vec![1.0; 50]);
    let res = powell_solve(&mut fed, &problem, &[0.0; 4], &basis, &PowellOptions::default()).unwrap();
    assert!(res.rank_deficient);
}

#[test]
fn fewer_weighted_rows_than_parameters_rejected() {
    let ds = common::gaussian_dataset(30, &[3, 2], |_, _| true, &mut common::rng(5));
    let mut w = vec![0.0; 30];
    w[..4].iter_mut().for_each(|v| *v = 1.0);
    let mut net = Network::new(30, ds.layout().widths(), LedgerDetail::TotalsOnly);
    let mut fed = Federation::new(&ds, &mut net).unwrap();
    let basis = DirectionSet::standard(fed.widths());
    let problem = WlsProblem::new(Design::Analysis, Response::Outcome, w);
    let res = powell_solve(&mut fed, &problem, &[0.0; 5], &basis, &PowellOptions::default());
    assert!(matches!(res, Err(vertfed::Error::UnderDetermined { .. })) || res.is_ok_and(|r| r.under_determined));
}
