//! Shared-index bootstrap: the coordinator draws one index vector per
//! replicate, every site rearranges its rows with it, and the estimator is
//! rerun on the resample.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{bootstrap_index_sample, VerticalDataset};
use crate::netsim::{Network, NodeId, Payload, Phase};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Fraction of failed replicates above which the SE is flagged.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome<T> {
    /// Successful replicate estimates, in replicate order.
    pub replicates: Vec<Vec<T>>,
    pub requested: usize,
    pub failed: usize,
}

impl<T: Scalar> BootstrapOutcome<T> {
    pub fn unreliable(&self) -> bool {
        self.replicates.len() < 2 || self.failed as f64 > MAX_FAILED_FRACTION * self.requested as f64
    }

    /// Per-coordinate sample standard deviation (divisor B − 1), summed in
    /// sorted order so the result does not depend on replicate order.
    pub fn standard_errors(&self) -> Vec<T> {
        let p = self.replicates.first().map_or(0, Vec::len);
        (0..p)
            .map(|j| {
                let mut v: Vec<T> = self.replicates.iter().map(|r| r[j]).collect();
                sorted_sd(&mut v)
            })
            .collect()
    }

    /// Sample covariance (divisor B − 1) of the replicate vectors.
    pub fn covariance(&self) -> Matrix<T> {
        let p = self.replicates.first().map_or(0, Vec::len);
        let b = self.replicates.len();
        let mut cov = Matrix::zeros(p, p);
        if b < 2 {
            return cov;
        }
        let means: Vec<T> = (0..p)
            .map(|j| {
                let mut v: Vec<T> = self.replicates.iter().map(|r| r[j]).collect();
                sorted_mean(&mut v)
            })
            .collect();
        let denom = T::from_usize_lossy(b - 1);
        for a in 0..p {
            for c in a..p {
                let mut prods: Vec<T> = self.replicates.iter().map(|r| (r[a] - means[a]) * (r[c] - means[c])).collect();
                prods.sort_by(order);
                let s = prods.into_iter().fold(T::zero(), |acc, x| acc + x) / denom;
                cov[(a, c)] = s;
                cov[(c, a)] = s;
            }
        }
        cov
    }
}

fn order<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

fn sorted_mean<T: Scalar>(v: &mut [T]) -> T {
    v.sort_by(order);
    v.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(v.len())
}

/// Sample SD with divisor `len − 1`; NaN for fewer than two values.
pub fn sorted_sd<T: Scalar>(v: &mut [T]) -> T {
    if v.len() < 2 {
        return T::nan();
    }
    let mean = sorted_mean(v);
    let mut sq: Vec<T> = v.iter().map(|&x| (x - mean) * (x - mean)).collect();
    sq.sort_by(order);
    (sq.into_iter().fold(T::zero(), |a, x| a + x) / T::from_usize_lossy(v.len() - 1)).sqrt()
}

/// Runs `estimator` on `b` shared-index resamples of `ds`.
///
/// With `share_indices` set, each index vector is broadcast over `net`
/// first. Replicate traffic is recorded under [`Phase::Bootstrap`] and
/// folded into `net` in replicate order. Replicates that error or return
/// non-finite values count as failed.
pub fn run_bootstrap<T, F>(
    ds: &VerticalDataset<T>,
    b: usize,
    seeds: &SeedTree,
    net: &mut Network,
    share_indices: bool,
    estimator: F,
) -> Result<BootstrapOutcome<T>>
where
    T: Scalar,
    F: Fn(&VerticalDataset<T>, &mut Network) -> Result<Vec<T>> + Sync,
{
    if b < 2 {
        return Err(Error::Invalid(format!("bootstrap needs B ≥ 2, got {b}")));
    }
    let n = ds.n();
    let template = {
        let mut t = net.child();
        t.pin_phase(Phase::Bootstrap);
        t
    };
    let runs: Vec<(Option<Vec<T>>, Network)> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut child = template.clone();
            let mut rng = seeds.child(rep as u64).rng();
            let mut run = || -> Result<Vec<T>> {
                let idx = bootstrap_index_sample(n, &mut rng)?;
                if share_indices {
                    child.next_round();
                    for k in 0..child.site_count() {
                        child.send(NodeId::COORDINATOR, NodeId::site(k), Payload::<T>::IndexVector(idx.clone()))?;
                    }
                }
                let resample = ds.reindex(&idx)?;
                estimator(&resample, &mut child)
            };
            let est = run().ok().filter(|v| v.iter().all(|x| x.is_finite()));
            (est, child)
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut failed = 0;
    for (est, child) in runs {
        net.absorb_network(child);
        match est {
            Some(v) => replicates.push(v),
            None => failed += 1,
        }
    }
    Ok(BootstrapOutcome { replicates, requested: b, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_estimator_has_zero_se() {
        let out = BootstrapOutcome { replicates: vec![vec![2.0, 1.0]; 5], requested: 5, failed: 0 };
        assert_eq!(out.standard_errors(), vec![0.0, 0.0]);
        assert!(out.covariance().as_slice().iter().all(|&v| v == 0.0));
        assert!(!out.unreliable());
    }

    #[test]
    fn sd_is_order_free() {
        let mut a = vec![0.1, 5.0, -3.0, 2.5, 1e-3];
        let mut b = vec![1e-3, 2.5, 0.1, -3.0, 5.0];
        assert_eq!(sorted_sd(&mut a), sorted_sd(&mut b));
        let mut two = vec![0.9, 1.1];
        assert!((sorted_sd(&mut two) - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn failure_threshold() {
        let out = BootstrapOutcome { replicates: vec![vec![1.0]; 8], requested: 10, failed: 2 };
        assert!(!out.unreliable());
        let out = BootstrapOutcome { replicates: vec![vec![1.0]; 7], requested: 10, failed: 3 };
        assert!(out.unreliable());
    }
}
