//! Acceptance run: one PASS/FAIL line per criterion. A failing criterion
//! is reported, not turned into a process failure, so the measured values
//! stay visible next to the tolerance they missed.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vertfed::datagen::{generate, inject_mar, ScenarioSpec};
use vertfed::dual_logistic::{self, DualConfig};
use vertfed::harness::{run_monte_carlo, ExperimentConfig, ExperimentOutcome, MetricsRow};
use vertfed::ipw::{fit_ipw_pooled, fit_ppipw, IpwConfig};
use vertfed::mi::{rubin_combine, RUBIN_DF_CAP};
use vertfed::netsim::{Design, Federation, LedgerDetail, Network, PayloadKind, Response};
use vertfed::powell::{powell_solve, DirectionSet, PowellOptions, WlsProblem};
use vertfed::{build_vertical, Dataset, Mat, Method, PartitionLayout, SeedTree, INTERCEPT};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn report(id: usize, name: &str, v: &Verdict, took: Duration) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} {tag}: {name} ({:.1}s) {}", took.as_secs_f64(), v.detail);
}

/// Random vertical layout with `p` coefficients over 2 or 3 sites; the
/// second coefficient is the designated missing column.
fn random_layout(p: usize, rng: &mut ChaCha8Rng) -> (PartitionLayout, Vec<String>) {
    let names: Vec<String> = (1..p).map(|j| format!("X{j}")).collect();
    let sites = rng.random_range(2..=3.min(p));
    let mut cuts: Vec<usize> = (1..p).collect();
    let mut chosen = Vec::new();
    for _ in 0..sites - 1 {
        let k = rng.random_range(0..cuts.len());
        chosen.push(cuts.remove(k));
    }
    chosen.sort();
    let cols: Vec<String> = std::iter::once(INTERCEPT.to_string()).chain(names.iter().cloned()).collect();
    let mut blocks = Vec::new();
    let mut start = 0;
    for c in chosen.into_iter().chain(std::iter::once(p)) {
        blocks.push(cols[start..c].to_vec());
        start = c;
    }
    (PartitionLayout::new(blocks, "X1").expect("valid layout"), names)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

fn wls_oracle(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Option<DVector<f64>> {
    let wd = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let a = x.transpose() * &wd * x;
    let b = x.transpose() * &wd * y;
    a.lu().solve(&b)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut skipped = 0;
    let start = Instant::now();
    for _ in 0..500 {
        let p = rng.random_range(2..=8);
        let n = rng.random_range((2 * p + 2).max(10)..=100);
        let (layout, names) = random_layout(p, &mut rng);
        let mut full = Mat::zeros(n, p - 1);
        for i in 0..n {
            for j in 0..p - 1 {
                full[(i, j)] = normal(&mut rng);
            }
        }
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng) * 2.0).collect();
        let weights: Vec<f64> = match rng.random_range(0..3) {
            0 => vec![1.0; n],
            1 => (0..n).map(|i| if i < p + 1 || rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect(),
            _ => (0..n).map(|_| rng.random_range(0.1..5.0)).collect(),
        };
        let ds = build_vertical(&full, &names, y.clone(), layout.clone()).expect("dataset");
        let pooled = ds.to_pooled();
        let x = DMatrix::from_fn(n, p, |i, j| pooled.x[(i, j)]);
        let Some(oracle) = wls_oracle(&x, &DVector::from_vec(y), &weights) else {
            skipped += 1;
            continue;
        };
        let mut net = Network::new(n, layout.widths(), LedgerDetail::TotalsOnly);
        let mut fed = Federation::new(&ds, &mut net).expect("federation");
        let problem = WlsProblem::new(Design::Analysis, Response::Outcome, weights);
        let basis = DirectionSet::standard(fed.widths());
        match powell_solve(&mut fed, &problem, &vec![0.0; p], &basis, &PowellOptions::default()) {
            Ok(res) => {
                let err = res.theta.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst = worst.max(err);
                if err > 1e-8 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        failures == 0 && secs < 10.0,
        format!("max |θ − oracle|∞ = {worst:.2e} over 500 instances, {failures} above 1e-8, {skipped} singular oracles, {secs:.2}s"),
    )
}

/// Ridge-penalized logistic regression by primal Newton on labels ±1.
fn primal_logistic(z: &DMatrix<f64>, s: &[f64], lambda: f64) -> DVector<f64> {
    let (n, p) = z.shape();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = z * &beta;
        let mut grad = &beta * lambda;
        let mut hess = DMatrix::identity(p, p) * lambda;
        for i in 0..n {
            let m = s[i] * eta[i];
            let sig = 1.0 / (1.0 + m.exp());
            let row = z.row(i).transpose();
            grad -= &row * (s[i] * sig);
            let curv = sig * (1.0 - sig);
            hess += &row * row.transpose() * curv;
        }
        let step = hess.cholesky().expect("ridge Hessian is positive definite").solve(&grad);
        beta -= &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst_beta, mut worst_w): (f64, f64) = (0.0, 0.0);
    let mut failures = 0;
    let start = Instant::now();
    for _ in 0..100 {
        let p = rng.random_range(3..=7);
        let n = rng.random_range(30..=200);
        let (layout, names) = random_layout(p, &mut rng);
        let lambda = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let mut full = Mat::zeros(n, p - 1);
        for i in 0..n {
            for j in 0..p - 1 {
                full[(i, j)] = normal(&mut rng);
            }
        }
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mut r: Vec<bool> = (0..n).map(|i| 1.0 / (1.0 + (-(0.3 + y[i])).exp()) > rng.random::<f64>()).collect();
        r[0] = true;
        r[1] = false;
        let mut x = full.clone();
        for (i, &ri) in r.iter().enumerate() {
            if !ri {
                x[(i, 0)] = f64::NAN;
            }
        }
        let ds = build_vertical(&x, &names, y.clone(), layout.clone()).expect("dataset");
        let pooled = ds.to_pooled();
        let mc = pooled.missing_col;
        let zmat = DMatrix::from_fn(n, p, |i, j| if j == mc { y[i] } else { pooled.x[(i, j)] });
        let s: Vec<f64> = r.iter().map(|&v| if v { 1.0 } else { -1.0 }).collect();
        let oracle = primal_logistic(&zmat, &s, lambda);
        let eta = &zmat * &oracle;
        let mut net = Network::new(n, layout.widths(), LedgerDetail::TotalsOnly);
        let mut fed = Federation::new(&ds, &mut net).expect("federation");
        let cfg = DualConfig { lambda, tol: 1e-12, max_iter: 200, ..DualConfig::default() };
        let fit = match dual_logistic::fit(&mut fed, &cfg) {
            Ok(f) => f,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let beta = fit.beta();
        let eb = beta.iter().zip(oracle.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ew = fit
            .weights
            .iter()
            .zip(eta.iter())
            .map(|(&w, &e)| {
                let wo = 1.0 + (-e).exp();
                ((w - wo) / wo).abs()
            })
            .fold(0.0, f64::max);
        worst_beta = worst_beta.max(eb);
        worst_w = worst_w.max(ew);
        if eb > 1e-5 || ew > 1e-6 || !fit.converged {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        failures == 0 && secs < 60.0,
        format!("max |β − primal| = {worst_beta:.2e}, max relative ŵ gap = {worst_w:.2e}, {failures} of 100 outside, {secs:.1}s"),
    )
}

fn row<'a>(out: &'a ExperimentOutcome, method: Method, coef: &str) -> &'a MetricsRow {
    out.table.row(method, coef).unwrap_or_else(|| panic!("no row for {method} {coef}"))
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v.is_finite() && lo <= v && v <= hi
}

fn criterion_3(out: &ExperimentOutcome, secs: f64) -> Verdict {
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut check = |label: String, ok: bool| checks.push((label, ok));
    let cc3 = row(out, Method::Cc, "theta3");
    check(format!("CC RBias3 {:.2}", cc3.rbias), within(cc3.rbias, -24.0, -16.0));
    check(format!("CC CR3 {:.1}", cc3.cr), cc3.cr < 40.0);
    let pm1 = row(out, Method::PpmiV, "theta1");
    check(format!("PPMI-V RBias1 {:.2}", pm1.rbias), pm1.rbias.abs() <= 1.5);
    check(format!("PPMI-V SD1 {:.4}", pm1.sd), within(pm1.sd, 0.025, 0.045));
    for c in ["theta1", "theta3", "theta5"] {
        let r = row(out, Method::PpmiV, c);
        check(format!("PPMI-V CR {c} {:.1}", r.cr), within(r.cr, 91.0, 98.0));
    }
    let pi1 = row(out, Method::PpipwV, "theta1");
    check(format!("PPIPW-V RBias1 {:.2}", pi1.rbias), pi1.rbias.abs() <= 3.0);
    for c in ["theta3", "theta5"] {
        let r = row(out, Method::PpipwV, c);
        check(format!("PPIPW-V RBias {c} {:.2}", r.rbias), r.rbias.abs() <= 6.0);
    }
    for c in ["theta1", "theta3", "theta5"] {
        let r = row(out, Method::PpipwV, c);
        check(format!("PPIPW-V CR {c} {:.1}", r.cr), within(r.cr, 82.0, 95.0));
    }
    let mn3 = row(out, Method::MiNaive, "theta3");
    check(format!("MI-naive RBias3 {:.2}", mn3.rbias), within(mn3.rbias, -14.0, -6.0));
    check(format!("runtime {secs:.0}s"), secs <= 900.0);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let pass = failed.is_empty();
    let shown: Vec<String> = checks.iter().map(|(l, ok)| format!("{l}{}", if *ok { "" } else { " [out]" })).collect();
    Verdict::new(pass, shown.join("; "))
}

fn criterion_4(out: &ExperimentOutcome) -> Verdict {
    let ipw = row(out, Method::PpipwV, "theta3").rbias;
    let mi = row(out, Method::PpmiV, "theta3").rbias;
    Verdict::new(ipw <= -6.0 && mi.abs() <= 4.0, format!("PPIPW-V RBias3 {ipw:.2}%, PPMI-V RBias3 {mi:.2}%"))
}

fn criterion_5() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for scenario in [1u8, 2] {
        let mut rng = SeedTree::new(505).child(u64::from(scenario)).rng();
        let spec = ScenarioSpec::new(scenario, 100_000).expect("spec");
        let full: Dataset = generate(&spec, &mut rng).expect("data");
        let ds = inject_mar(&full, scenario, &mut rng).expect("deletion");
        let frac = ds.missing_count() as f64 / ds.n() as f64;
        pass &= (frac - 0.42).abs() <= 0.03;
        parts.push(format!("scenario {scenario}: {:.2}%", 100.0 * frac));
    }
    Verdict::new(pass, parts.join(", "))
}

fn criterion_6() -> Verdict {
    let cfg = IpwConfig { bootstrap_b: 0, ..IpwConfig::default() };
    let mut worst: f64 = 0.0;
    for rep in 0..20u64 {
        let seeds = SeedTree::new(606).child(rep);
        let mut rng = seeds.tagged("data").rng();
        let full: Dataset = generate(&ScenarioSpec::new(1, 1000).expect("spec"), &mut rng).expect("data");
        let ds = inject_mar(&full, 1, &mut rng).expect("deletion");
        let mut net = Network::new(ds.n(), ds.layout().widths(), LedgerDetail::TotalsOnly);
        let a = fit_ppipw(&ds, &cfg, &mut net, &seeds).expect("distributed fit");
        let b = fit_ipw_pooled(&ds, &cfg, &mut net, &seeds).expect("pooled fit");
        let gap = a.estimate.iter().zip(&b.estimate).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    Verdict::new(worst <= 0.05, format!("max coefficient gap {worst:.4} over 20 realizations"))
}

fn criterion_7(out: &ExperimentOutcome) -> Verdict {
    let kinds = out.ledger.kinds();
    let off_list = kinds.iter().filter(|k| !PayloadKind::ALL.contains(k)).count();
    let csv = vertfed::harness::ledger_totals_csv(&out.ledger);
    let recognized = csv.lines().skip(1).all(|l| {
        let kind = l.split(',').nth(1).unwrap_or("");
        PayloadKind::ALL.iter().any(|k| k.name() == kind)
    });
    let messages = out.ledger.message_count();
    Verdict::new(
        off_list == 0 && recognized && out.pooled_violations == 0 && messages > 0,
        format!(
            "{messages} messages over {} kinds, {off_list} non-allowlisted, {} pooled reads outside pooled baselines",
            kinds.len(),
            out.pooled_violations
        ),
    )
}

fn criterion_8() -> Verdict {
    let cfg = ExperimentConfig {
        n: 200,
        replications: 4,
        m: 10,
        bootstrap_b: 20,
        seed: 808,
        ledger_detail: LedgerDetail::Full,
        ..ExperimentConfig::default()
    };
    let a = run_monte_carlo(&cfg).expect("first run");
    let b = run_monte_carlo(&cfg).expect("second run");
    let table_same = a.table.render(Default::default()) == b.table.render(Default::default())
        && a.table.to_markdown() == b.table.to_markdown();
    let ledger_same = a.ledger.to_csv_string() == b.ledger.to_csv_string();
    Verdict::new(
        table_same && ledger_same,
        format!(
            "tables identical: {table_same}, ledgers identical: {ledger_same} ({} records)",
            a.ledger.records().len()
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut violations = 0;
    for _ in 0..500 {
        let p = rng.random_range(1..=5);
        let m = rng.random_range(2..=30);
        let draws: Vec<(Vec<f64>, Mat)> = (0..m)
            .map(|_| {
                let theta = (0..p).map(|_| normal(&mut rng)).collect();
                let a = Mat::from_vec(p, p, (0..p * p).map(|_| normal(&mut rng)).collect()).expect("square");
                (theta, a.matmul(&a.transpose()).expect("square"))
            })
            .collect();
        let c = rubin_combine(&draws).expect("combination");
        violations += (0..p).filter(|&j| c.total[(j, j)] < c.within[(j, j)]).count();
        let same = vec![draws[0].clone(); m];
        let c = rubin_combine(&same).expect("combination");
        if c.total != c.within || c.df.iter().any(|&d| d != RUBIN_DF_CAP) {
            violations += 1;
        }
    }
    let one = |t: f64| (vec![t], Mat::from_vec(1, 1, vec![1.0]).expect("1x1"));
    let hand = rubin_combine(&[one(0.0), one(2.0)]).expect("combination");
    let hand_ok = hand.estimate == vec![1.0]
        && hand.within[(0, 0)] == 1.0
        && hand.between[(0, 0)] == 2.0
        && hand.total[(0, 0)] == 4.0;
    Verdict::new(
        violations == 0 && hand_ok,
        format!("{violations} violations over 500 random inputs, hand example exact: {hand_ok}"),
    )
}

fn timed(f: impl FnOnce() -> Verdict) -> (Verdict, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    let (v, t) = timed(criterion_1);
    report(1, "solver exactness", &v, t);
    let (v, t) = timed(criterion_2);
    report(2, "dual-primal equivalence", &v, t);

    let table1 = ExperimentConfig { scenario: 1, seed: 3003, ..ExperimentConfig::default() };
    let t = Instant::now();
    let out1 = run_monte_carlo(&table1).expect("scenario 1 run");
    let secs1 = t.elapsed().as_secs_f64();
    report(3, "scenario 1 table", &criterion_3(&out1, secs1), t.elapsed());

    let table2 = ExperimentConfig {
        scenario: 2,
        seed: 4004,
        methods: vec![Method::PpipwV, Method::PpmiV],
        standard_errors: false,
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    let out2 = run_monte_carlo(&table2).expect("scenario 2 run");
    report(4, "scenario 2 contrast", &criterion_4(&out2), t.elapsed());

    let (v, t) = timed(criterion_5);
    report(5, "missingness calibration", &v, t);
    let (v, t) = timed(criterion_6);
    report(6, "distributed vs pooled IPW", &v, t);
    report(7, "privacy audit", &criterion_7(&out1), Duration::ZERO);
    let (v, t) = timed(criterion_8);
    report(8, "determinism", &v, t);
    let (v, t) = timed(criterion_9);
    report(9, "Rubin identities", &v, t);
}
