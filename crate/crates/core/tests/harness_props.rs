mod common;

use proptest::prelude::*;
use vertfed::harness::{
    coefficient_name, compute_metrics, run_monte_carlo, ExperimentConfig, MetricsRow, MetricsTable, TableFormat,
};
use vertfed::Method;

fn quick(methods: Vec<Method>, reps: usize, n: usize) -> ExperimentConfig {
    ExperimentConfig { n, replications: reps, methods, m: 5, bootstrap_b: 10, seed: 31, ..ExperimentConfig::default() }
}

proptest! {
    #[test]
    fn mse_decomposes_into_bias_and_spread(est in prop::collection::vec(-3.0f64..3.0, 2..60), truth in prop_oneof![Just(1.0), Just(-2.0), Just(0.5)]) {
        let r = est.len() as f64;
        let m = compute_metrics(&est, &vec![None; est.len()], &vec![None; est.len()], truth).unwrap();
        let bias = m.rbias / 100.0 * truth;
        let identity = bias * bias + (r - 1.0) / r * m.sd * m.sd;
        prop_assert!((m.mse - identity).abs() < 1e-10 * (1.0 + m.mse));
        prop_assert!(m.mse >= 0.0);
    }

    #[test]
    fn coverage_is_a_percentage(est in prop::collection::vec(0.0f64..2.0, 1..40), half in 0.0f64..1.0) {
        let cis: Vec<Option<(f64, f64)>> = est.iter().map(|&t| Some((t - half, t + half))).collect();
        let ses: Vec<Option<f64>> = est.iter().map(|_| Some(half / 1.96)).collect();
        let m = compute_metrics(&est, &ses, &cis, 1.0).unwrap();
        prop_assert!((0.0..=100.0).contains(&m.cr));
    }

    #[test]
    fn csv_round_trip(rbias in -50.0f64..50.0, se in 0.0f64..1.0, sd in 0.0f64..1.0, mse in 0.0f64..1.0, cr in 0.0f64..100.0) {
        let row = MetricsRow { method: Method::PpmiV, coefficient: coefficient_name(5), rbias, se, sd, mse, cr };
        let table = MetricsTable { rows: vec![row.clone(), MetricsRow { se: f64::NAN, cr: f64::NAN, ..row.clone() }], footer: vec![] };
        let text = table.render(TableFormat::Csv);
        let back = MetricsTable::read_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back.rows.len(), 2);
        for (a, b) in table.rows.iter().zip(&back.rows) {
            prop_assert!(a.rounded().same_values(b));
        }
    }
}

#[test]
fn single_replication_gold_standard() {
    let out = run_monte_carlo(&quick(vec![Method::Gs], 1, 200)).unwrap();
    assert_eq!(out.table.rows.len(), 3);
    for row in &out.table.rows {
        assert!(row.rbias.is_finite());
        assert!(row.cr == 0.0 || row.cr == 100.0);
        assert_eq!(row.sd, 0.0);
    }
}

#[test]
fn doubling_replications_keeps_earlier_estimates() {
    let methods = vec![Method::Cc, Method::PpipwV, Method::PpmiV];
    let short = run_monte_carlo(&quick(methods.clone(), 3, 150)).unwrap();
    let long = run_monte_carlo(&quick(methods, 6, 150)).unwrap();
    for m in [Method::Cc, Method::PpipwV, Method::PpmiV] {
        let a = short.estimates(m);
        let b = long.estimates(m);
        assert_eq!(a.len(), 3);
        assert_eq!(&b[..3], &a[..]);
    }
}

#[test]
fn adding_a_method_leaves_others_unchanged() {
    let one = run_monte_carlo(&quick(vec![Method::PpmiV], 2, 150)).unwrap();
    let two = run_monte_carlo(&quick(vec![Method::MiNaive, Method::PpmiV], 2, 150)).unwrap();
    assert_eq!(one.estimates(Method::PpmiV), two.estimates(Method::PpmiV));
}

#[test]
fn identical_configs_give_identical_tables() {
    let cfg = quick(Method::ALL.to_vec(), 2, 150);
    let a = run_monte_carlo(&cfg).unwrap();
    let b = run_monte_carlo(&cfg).unwrap();
    for fmt in [TableFormat::Csv, TableFormat::Markdown] {
        assert_eq!(a.table.render(fmt), b.table.render(fmt));
    }
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.pooled_violations, 0);
    let order: Vec<Method> = a.table.rows.iter().map(|r| r.method).collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn footer_names_interval_kinds() {
    let out = run_monte_carlo(&quick(vec![Method::Cc, Method::MiPooled], 1, 150)).unwrap();
    let md = out.table.to_markdown();
    assert!(md.contains("normal quantile"));
    assert!(md.contains("Student t"));
}

#[test]
fn gold_standard_bias_shrinks_with_n() {
    let median_abs_bias = |n: usize| {
        let mut v: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = ExperimentConfig { seed, standard_errors: false, ..quick(vec![Method::Gs], 20, n) };
                let out = run_monte_carlo(&cfg).unwrap();
                out.table.rows.iter().map(|r| r.rbias.abs()).sum::<f64>()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    assert!(median_abs_bias(1000) < median_abs_bias(200));
}
