//! Simulation designs with known truth, MAR deletion, and logistic
//! missingness for arbitrary tables.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, Uniform};

use crate::csvio::Table;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{PartitionLayout, VerticalDataset, INTERCEPT};
use crate::scalar::Scalar;

/// Coefficients of `(1, X1, …, X6)` in the outcome model.
pub const TRUE_THETA: [f64; 7] = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
pub const NOISE_VARIANCE: f64 = 1.0;
/// Coefficients that enter the relative-bias tables (all with truth 1).
pub const REPORTED_COEFFICIENTS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub n: usize,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, n: usize) -> Result<Self> {
        if !matches!(scenario, 1 | 2) {
            return Err(Error::UnknownScenario(scenario));
        }
        if n < 50 {
            return Err(Error::Invalid(format!("n = {n} is below the minimum of 50")));
        }
        Ok(Self { scenario, n })
    }
}

/// Three sites: `(1, X1, X2) | (X3, X4) | (X5, X6)`, X1 missing-prone.
pub fn scenario_layout() -> PartitionLayout {
    let s = |v: &[&str]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    PartitionLayout::new(vec![s(&[INTERCEPT, "X1", "X2"]), s(&["X3", "X4"]), s(&["X5", "X6"])], "X1")
        .expect("fixed layout is valid")
}

/// Draws a fully observed dataset. The X1 column is also attached as the
/// oracle so that it survives later deletion.
pub fn generate<T: Scalar, R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<VerticalDataset<T>> {
    let n = spec.n;
    let unif = Uniform::new(-1.0, 1.0).expect("valid bounds");
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let x: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| unif.sample(rng)).collect()).collect();
    let root5 = 5f64.sqrt();
    let x1: Vec<f64> = (0..n).map(|i| (0..4).map(|j| x[j][i]).sum::<f64>() / root5 + std.sample(rng)).collect();
    let sd = NOISE_VARIANCE.sqrt();
    let th = TRUE_THETA;
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mean = th[0] + th[1] * x1[i] + (0..5).map(|j| th[j + 2] * x[j][i]).sum::<f64>();
            mean + sd * std.sample(rng)
        })
        .collect();

    let lit = |v: &[f64]| v.iter().map(|&a| T::lit(a)).collect::<Vec<T>>();
    let ones = vec![T::one(); n];
    let blocks = vec![
        Matrix::from_columns(n, &[ones, lit(&x1), lit(&x[0])])?,
        Matrix::from_columns(n, &[lit(&x[1]), lit(&x[2])])?,
        Matrix::from_columns(n, &[lit(&x[3]), lit(&x[4])])?,
    ];
    VerticalDataset::from_blocks(scenario_layout(), blocks, lit(&y))?.with_oracle(lit(&x1))
}

/// `Pr(R = 1 | y, x3, x5)` for the two selection mechanisms.
pub fn selection_prob(scenario: u8, y: f64, x3: f64, x5: f64) -> Result<f64> {
    let eta = match scenario {
        1 => -1.6 + y + x3 + x5,
        2 => 3.0 + 2.0 * y + 2.0 * x3 + 2.0 * x5,
        other => return Err(Error::UnknownScenario(other)),
    };
    if !eta.is_finite() {
        return Err(Error::NonFinite("selection predictor".into()));
    }
    Ok(1.0 / (1.0 + eta.exp()))
}

fn column_by_name<T: Scalar>(ds: &VerticalDataset<T>, name: &str) -> Result<Vec<T>> {
    let layout = ds.layout();
    for k in 0..layout.site_count() {
        if let Some(j) = layout.columns(k).iter().position(|c| c == name) {
            return Ok(ds.block(k).column(j));
        }
    }
    Err(Error::Layout(format!("column `{name}` is not in the layout")))
}

/// Complete-case probabilities of every row under `scenario`.
pub fn selection_probs<T: Scalar>(ds: &VerticalDataset<T>, scenario: u8) -> Result<Vec<f64>> {
    let x3 = column_by_name(ds, "X3")?;
    let x5 = column_by_name(ds, "X5")?;
    (0..ds.n())
        .map(|i| selection_prob(scenario, ds.outcome()[i].to_f64_lossy(), x3[i].to_f64_lossy(), x5[i].to_f64_lossy()))
        .collect()
}

/// Deletes the missing-prone entry of row i with probability `1 − probs[i]`.
pub fn inject_with_probabilities<T: Scalar, R: Rng + ?Sized>(
    ds: &VerticalDataset<T>,
    probs: &[f64],
    rng: &mut R,
) -> Result<VerticalDataset<T>> {
    if probs.len() != ds.n() {
        return Err(Error::Shape(format!("{} probabilities for n = {}", probs.len(), ds.n())));
    }
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Invalid(format!("probability at row {i} outside [0, 1]")));
    }
    let keep: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    ds.with_deletions(&keep)
}

/// MAR deletion of X1 driven by (Y, X3, X5).
pub fn inject_mar<T: Scalar, R: Rng + ?Sized>(
    ds: &VerticalDataset<T>,
    scenario: u8,
    rng: &mut R,
) -> Result<VerticalDataset<T>> {
    let probs = selection_probs(ds, scenario)?;
    inject_with_probabilities(ds, &probs, rng)
}

/// Coefficient key for the constant term of a missingness model.
pub const COEF_INTERCEPT: &str = "intercept";

/// Marks `target` missing with probability `1/(1 + exp(a + Σ c_j x_j))`,
/// where `a` is the `intercept` entry of `coefficients` (0 if absent).
/// Returns the edited table and the number of rows made missing.
pub fn inject_missing_table<R: Rng + ?Sized>(
    table: &Table,
    target: &str,
    coefficients: &BTreeMap<String, f64>,
    rng: &mut R,
) -> Result<(Table, usize)> {
    let t = table.index_of(target).ok_or_else(|| Error::Layout(format!("target column `{target}` absent")))?;
    let mut terms = Vec::new();
    for (name, &c) in coefficients {
        if name == COEF_INTERCEPT {
            continue;
        }
        let j = table.index_of(name).ok_or_else(|| Error::Layout(format!("coefficient column `{name}` absent")))?;
        terms.push((j, c));
    }
    let a = coefficients.get(COEF_INTERCEPT).copied().unwrap_or(0.0);
    let mut out = table.clone();
    let mut deleted = 0;
    for i in 0..table.rows() {
        let mut eta = a;
        for &(j, c) in &terms {
            let v = table.value(i, j);
            if v.is_nan() {
                return Err(Error::Invalid(format!("column `{}` is NA at row {}", table.names()[j], i + 1)));
            }
            eta += c * v;
        }
        let p_missing = 1.0 / (1.0 + eta.exp());
        if rng.random::<f64>() < p_missing {
            if !out.value(i, t).is_nan() {
                deleted += 1;
            }
            out.set_value(i, t, f64::NAN);
        }
    }
    Ok((out, deleted))
}

/// The registry missingness model: intercept 5, and −1 on Y, X1, X2, X4.
pub fn registry_coefficients() -> BTreeMap<String, f64> {
    [(COEF_INTERCEPT, 5.0), ("Y", -1.0), ("X1", -1.0), ("X2", -1.0), ("X4", -1.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// Synthetic stand-in for a stroke-registry extract: Y is a log delay in
/// minutes, X1/X2/X4 binary indicators, X3 a count-valued severity score.
pub fn registry_surrogate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Table {
    let male = Bernoulli::new(0.48).expect("valid p");
    let white = Bernoulli::new(0.62).expect("valid p");
    let prior = Bernoulli::new(0.27).expect("valid p");
    let severity = Poisson::new(6.0).expect("valid rate");
    let noise = Normal::new(0.0, 0.95).expect("valid normal");
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let x1 = f64::from(u8::from(male.sample(rng)));
        let x2 = f64::from(u8::from(white.sample(rng)));
        let x3: f64 = severity.sample(rng);
        let x4 = f64::from(u8::from(prior.sample(rng)));
        let y = 3.6 + 0.07 * x1 - 0.16 * x2 - 0.03 * x3 - 0.04 * x4 + noise.sample(rng);
        for (c, v) in cols.iter_mut().zip([y, x1, x2, x3, x4]) {
            c.push(v);
        }
    }
    Table::new(["Y", "X1", "X2", "X3", "X4"].map(String::from).to_vec(), cols).expect("equal lengths")
}

/// Equal-width bins over [0, 1]: `(lower, upper, count)`.
pub fn probability_histogram(probs: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let mut counts = vec![0usize; bins];
    for &p in probs {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn selection_at_origin() {
        assert!((selection_prob(1, 0.0, 0.0, 0.0).unwrap() - 0.8320).abs() < 1e-4);
        assert!((selection_prob(2, 0.0, 0.0, 0.0).unwrap() - 0.0474).abs() < 1e-4);
        assert!(matches!(selection_prob(3, 0.0, 0.0, 0.0), Err(Error::UnknownScenario(3))));
    }

    #[test]
    fn spec_bounds() {
        assert!(ScenarioSpec::new(1, 49).is_err());
        assert!(ScenarioSpec::new(0, 100).is_err());
        assert!(ScenarioSpec::new(2, 50).is_ok());
    }

    #[test]
    fn forced_probabilities() {
        let spec = ScenarioSpec::new(1, 60).unwrap();
        let mut rng = SeedTree::new(4).rng();
        let ds: VerticalDataset<f64> = generate(&spec, &mut rng).unwrap();
        let all = inject_with_probabilities(&ds, &[1.0; 60], &mut rng).unwrap();
        assert_eq!(all.missing_count(), 0);
        let none = inject_with_probabilities(&ds, &[0.0; 60], &mut rng).unwrap();
        assert_eq!(none.complete_count(), 0);
    }

    #[test]
    fn deletion_touches_only_x1() {
        let spec = ScenarioSpec::new(1, 200).unwrap();
        let mut rng = SeedTree::new(9).rng();
        let ds: VerticalDataset<f64> = generate(&spec, &mut rng).unwrap();
        let del = inject_mar(&ds, 1, &mut rng).unwrap();
        assert!(del.missing_count() > 0);
        for k in 0..3 {
            for i in 0..200 {
                for j in 0..ds.block(k).cols() {
                    let (a, b) = (ds.block(k)[(i, j)], del.block(k)[(i, j)]);
                    if k == 0 && j == 1 && del.response()[i] == 0 {
                        assert!(b.is_nan());
                    } else {
                        assert_eq!(a, b);
                    }
                }
            }
        }
        assert_eq!(del.oracle(), ds.oracle());
    }

    #[test]
    fn table_origin_rate() {
        let table = Table::new(
            ["Y", "X1", "X2", "X3", "X4"].map(String::from).to_vec(),
            vec![vec![0.0; 20000], vec![0.0; 20000], vec![0.0; 20000], vec![1.0; 20000], vec![0.0; 20000]],
        )
        .unwrap();
        let mut rng = SeedTree::new(1).rng();
        let (_, deleted) = inject_missing_table(&table, "X3", &registry_coefficients(), &mut rng).unwrap();
        let rate = deleted as f64 / 20000.0;
        assert!((rate - 1.0 / (1.0 + 5f64.exp())).abs() < 0.003, "{rate}");
        let mut bad = registry_coefficients();
        bad.insert("X9".into(), 1.0);
        assert!(inject_missing_table(&table, "X3", &bad, &mut rng).is_err());
        assert!(inject_missing_table(&table, "X7", &registry_coefficients(), &mut rng).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = probability_histogram(&[0.0, 0.05, 0.5, 1.0], 10);
        assert_eq!(h.len(), 10);
        assert_eq!(h[0].2, 2);
        assert_eq!(h[5].2, 1);
        assert_eq!(h[9].2, 1);
    }
}
