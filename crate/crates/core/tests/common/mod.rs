#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vertfed::datagen::{generate, inject_mar, ScenarioSpec};
use vertfed::{build_vertical, Dataset, Mat, PartitionLayout, SeedTree, INTERCEPT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// `(intercept, X1, X2 | X3, X4 | X5, X6)` cut at the given site widths
/// (first width counts the intercept). X1 is the missing-prone column.
pub fn layout_with_widths(widths: &[usize]) -> PartitionLayout {
    let p: usize = widths.iter().sum();
    let cols: Vec<String> = std::iter::once(INTERCEPT.to_string()).chain((1..p).map(|j| format!("X{j}"))).collect();
    let mut blocks = Vec::new();
    let mut start = 0;
    for &w in widths {
        blocks.push(cols[start..start + w].to_vec());
        start += w;
    }
    PartitionLayout::new(blocks, "X1").expect("valid layout")
}

/// Gaussian covariates and outcome; X1 deleted where `keep` is false.
pub fn gaussian_dataset<R: Rng>(n: usize, widths: &[usize], keep: impl Fn(usize, f64) -> bool, rng: &mut R) -> Dataset {
    let layout = layout_with_widths(widths);
    let p = layout.param_count();
    let names: Vec<String> = (1..p).map(|j| format!("X{j}")).collect();
    let mut full = Mat::zeros(n, p - 1);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut lp = 0.5;
        for j in 0..p - 1 {
            full[(i, j)] = normal(rng);
            lp += full[(i, j)] * (1.0 - 0.2 * j as f64);
        }
        y[i] = lp + normal(rng);
    }
    let mut x = full.clone();
    for i in 0..n {
        if !keep(i, y[i]) {
            x[(i, 0)] = f64::NAN;
        }
    }
    let truth: Vec<f64> = full.column(0);
    build_vertical(&x, &names, y, layout).expect("dataset").with_oracle(truth).expect("oracle")
}

/// Scenario data with MAR deletion.
pub fn scenario_data(scenario: u8, n: usize, seed: u64) -> Dataset {
    let mut rng = SeedTree::new(seed).rng();
    let full: Dataset = generate(&ScenarioSpec::new(scenario, n).expect("spec"), &mut rng).expect("data");
    inject_mar(&full, scenario, &mut rng).expect("deletion")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
