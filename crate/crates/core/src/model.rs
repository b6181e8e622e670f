//! Vertically partitioned datasets with a univariate missing pattern.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const INTERCEPT: &str = "intercept";

/// Which columns each site holds, and which single column may be missing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLayout {
    sites: Vec<Vec<String>>,
    missing_column: String,
    missing_site: usize,
    missing_local: usize,
}

impl PartitionLayout {
    /// `sites[0]` must begin with [`INTERCEPT`].
    pub fn new(sites: Vec<Vec<String>>, missing_column: impl Into<String>) -> Result<Self> {
        let missing_column = missing_column.into();
        if sites.len() < 2 {
            return Err(Error::Layout(format!("need at least 2 sites, got {}", sites.len())));
        }
        if sites[0].first().map(String::as_str) != Some(INTERCEPT) {
            return Err(Error::Layout("site 1 must begin with the intercept column".into()));
        }
        let mut seen = HashSet::new();
        for (k, cols) in sites.iter().enumerate() {
            if cols.is_empty() {
                return Err(Error::Layout(format!("site {} has no columns", k + 1)));
            }
            for c in cols {
                if !seen.insert(c.as_str()) {
                    return Err(Error::Layout(format!("column `{c}` assigned more than once")));
                }
                if k > 0 && c == INTERCEPT {
                    return Err(Error::Layout("intercept must live at site 1".into()));
                }
            }
        }
        if missing_column == INTERCEPT {
            return Err(Error::Layout("the intercept cannot be missing".into()));
        }
        let (missing_site, missing_local) = sites
            .iter()
            .enumerate()
            .find_map(|(k, cols)| cols.iter().position(|c| *c == missing_column).map(|j| (k, j)))
            .ok_or_else(|| Error::Layout(format!("missing column `{missing_column}` not in any site")))?;
        Ok(Self { sites, missing_column, missing_site, missing_local })
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn columns(&self, site: usize) -> &[String] {
        &self.sites[site]
    }

    pub fn width(&self, site: usize) -> usize {
        self.sites[site].len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.sites.iter().map(Vec::len).collect()
    }

    /// Number of regression coefficients, intercept included (p + 1).
    pub fn param_count(&self) -> usize {
        self.sites.iter().map(Vec::len).sum()
    }

    /// Column names in pooled (site-major) order.
    pub fn pooled_columns(&self) -> Vec<String> {
        self.sites.iter().flatten().cloned().collect()
    }

    /// Owning site (0-based) of every pooled coordinate.
    pub fn coordinate_sites(&self) -> Vec<usize> {
        self.sites.iter().enumerate().flat_map(|(k, c)| std::iter::repeat_n(k, c.len())).collect()
    }

    pub fn missing_column(&self) -> &str {
        &self.missing_column
    }

    /// 0-based owner site of the missing-prone column.
    pub fn missing_site(&self) -> usize {
        self.missing_site
    }

    /// Position of the missing-prone column inside its owner's block.
    pub fn missing_local(&self) -> usize {
        self.missing_local
    }

    /// Position of the missing-prone column in pooled order.
    pub fn missing_pooled(&self) -> usize {
        self.sites[..self.missing_site].iter().map(Vec::len).sum::<usize>() + self.missing_local
    }

    /// Offset of `site`'s first coefficient in pooled order.
    pub fn offset(&self, site: usize) -> usize {
        self.sites[..site].iter().map(Vec::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.pooled_columns().iter().position(|c| c == name)
    }
}

/// Counts pooled (centralized) reads of a dataset. Shared by every dataset
/// derived from the same source, so a distributed estimator that pools
/// anywhere in its call tree is visible to the caller.
#[derive(Debug, Clone, Default)]
pub struct PoolTracker(Arc<AtomicUsize>);

impl PoolTracker {
    pub fn count(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Pooled view of a dataset (oracle baselines only).
#[derive(Debug, Clone)]
pub struct PooledData<T> {
    pub names: Vec<String>,
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub r: Vec<u8>,
    pub missing_col: usize,
}

#[derive(Debug, Clone)]
pub struct VerticalDataset<T> {
    layout: Arc<PartitionLayout>,
    blocks: Vec<Matrix<T>>,
    outcome: Vec<T>,
    response: Vec<u8>,
    oracle: Option<Vec<T>>,
    tracker: PoolTracker,
}

impl<T: Scalar> VerticalDataset<T> {
    /// Builds from per-site blocks. `r` is derived from the missing marker.
    pub fn from_blocks(layout: PartitionLayout, blocks: Vec<Matrix<T>>, outcome: Vec<T>) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Shape("dataset has no subjects".into()));
        }
        if blocks.len() != layout.site_count() {
            return Err(Error::Shape(format!("{} blocks for {} sites", blocks.len(), layout.site_count())));
        }
        for (k, b) in blocks.iter().enumerate() {
            if b.rows() != n || b.cols() != layout.width(k) {
                return Err(Error::Shape(format!(
                    "site {} block is {}x{}, expected {}x{}",
                    k + 1,
                    b.rows(),
                    b.cols(),
                    n,
                    layout.width(k)
                )));
            }
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome at row {i}")));
        }
        let (ms, ml) = (layout.missing_site(), layout.missing_local());
        for (k, b) in blocks.iter().enumerate() {
            for i in 0..n {
                for (j, &v) in b.row(i).iter().enumerate() {
                    if v.is_finite() || (k == ms && j == ml && v.is_missing()) {
                        continue;
                    }
                    let column = layout.columns(k)[j].clone();
                    return Err(if v.is_missing() {
                        Error::MissingOutsideDesignated { column, row: i }
                    } else {
                        Error::NonFinite(format!("column `{column}` at row {i}"))
                    });
                }
            }
        }
        let response = (0..n).map(|i| u8::from(!blocks[ms][(i, ml)].is_missing())).collect();
        Ok(Self { layout: Arc::new(layout), blocks, outcome, response, oracle: None, tracker: PoolTracker::default() })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    pub fn blocks(&self) -> &[Matrix<T>] {
        &self.blocks
    }

    pub fn block(&self, site: usize) -> &Matrix<T> {
        &self.blocks[site]
    }

    pub fn outcome(&self) -> &[T] {
        &self.outcome
    }

    /// r_i = 1 for complete cases.
    pub fn response(&self) -> &[u8] {
        &self.response
    }

    /// s_i = 2 r_i − 1.
    pub fn signs(&self) -> Vec<T> {
        self.response.iter().map(|&r| if r == 1 { T::one() } else { -T::one() }).collect()
    }

    pub fn complete_count(&self) -> usize {
        self.response.iter().map(|&r| r as usize).sum()
    }

    pub fn missing_count(&self) -> usize {
        self.n() - self.complete_count()
    }

    /// The missing-prone column as held by its owner (missing marker included).
    pub fn missing_values(&self) -> Vec<T> {
        self.blocks[self.layout.missing_site()].column(self.layout.missing_local())
    }

    /// Attaches the pre-deletion values of the missing-prone column (simulation only).
    pub fn with_oracle(mut self, truth: Vec<T>) -> Result<Self> {
        if truth.len() != self.n() {
            return Err(Error::Shape(format!("oracle column of {} for n = {}", truth.len(), self.n())));
        }
        self.oracle = Some(truth);
        Ok(self)
    }

    pub fn oracle(&self) -> Option<&[T]> {
        self.oracle.as_deref()
    }

    pub fn pool_tracker(&self) -> &PoolTracker {
        &self.tracker
    }

    /// Same data with a new, zeroed pooled-access counter.
    pub fn with_fresh_tracker(&self) -> Self {
        Self { tracker: PoolTracker::default(), ..self.clone() }
    }

    /// Replaces the missing-prone column. Rows with `r_i = 1` must keep their
    /// values; the result is fully observed.
    pub fn with_completed_column(&self, values: &[T]) -> Result<Self> {
        let n = self.n();
        if values.len() != n {
            return Err(Error::Shape(format!("completed column of {} for n = {n}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("completed column at row {i}")));
        }
        let (ms, ml) = (self.layout.missing_site(), self.layout.missing_local());
        let mut blocks = self.blocks.clone();
        blocks[ms].set_column(ml, values);
        Ok(Self {
            layout: self.layout.clone(),
            blocks,
            outcome: self.outcome.clone(),
            response: vec![1; n],
            oracle: self.oracle.clone(),
            tracker: self.tracker.clone(),
        })
    }

    /// Rebuilds the response indicator after the missing column was edited
    /// in place by a missingness mechanism.
    pub fn with_deletions(&self, keep: &[bool]) -> Result<Self> {
        let n = self.n();
        if keep.len() != n {
            return Err(Error::Shape(format!("{} keep flags for n = {n}", keep.len())));
        }
        let (ms, ml) = (self.layout.missing_site(), self.layout.missing_local());
        let mut blocks = self.blocks.clone();
        let mut response = self.response.clone();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                blocks[ms][(i, ml)] = T::missing();
                response[i] = 0;
            }
        }
        Ok(Self { blocks, response, ..self.clone() })
    }

    /// Column-wise concatenation of all site blocks. Every call is counted.
    pub fn to_pooled(&self) -> PooledData<T> {
        self.tracker.bump();
        let refs: Vec<&Matrix<T>> = self.blocks.iter().collect();
        PooledData {
            names: self.layout.pooled_columns(),
            x: Matrix::hstack(&refs).expect("blocks share n"),
            y: self.outcome.clone(),
            r: self.response.clone(),
            missing_col: self.layout.missing_pooled(),
        }
    }

    /// Rearranges every site, Y, r and the oracle with the same index vector
    /// (0-based).
    pub fn reindex(&self, indices: &[usize]) -> Result<Self> {
        let n = self.n();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        if indices.is_empty() {
            return Err(Error::Shape("empty index vector".into()));
        }
        Ok(Self {
            layout: self.layout.clone(),
            blocks: self.blocks.iter().map(|b| b.select_rows(indices)).collect(),
            outcome: indices.iter().map(|&i| self.outcome[i]).collect(),
            response: indices.iter().map(|&i| self.response[i]).collect(),
            oracle: self.oracle.as_ref().map(|o| indices.iter().map(|&i| o[i]).collect()),
            tracker: self.tracker.clone(),
        })
    }
}

/// Splits a pooled matrix into per-site blocks following `layout`.
///
/// `names` labels the columns of `full`. If the layout's intercept column is
/// absent from `names` it is materialized as all ones.
pub fn build_vertical<T: Scalar>(
    full: &Matrix<T>,
    names: &[String],
    outcome: Vec<T>,
    layout: PartitionLayout,
) -> Result<VerticalDataset<T>> {
    let n = full.rows();
    if names.len() != full.cols() {
        return Err(Error::Shape(format!("{} names for {} columns", names.len(), full.cols())));
    }
    if outcome.len() != n {
        return Err(Error::Shape(format!("outcome of {} for {n} rows", outcome.len())));
    }
    let wanted = layout.pooled_columns();
    let mut given: HashSet<&str> = names.iter().map(String::as_str).collect();
    given.insert(INTERCEPT);
    let wanted_set: HashSet<&str> = wanted.iter().map(String::as_str).collect();
    if given != wanted_set {
        let mut extra: Vec<_> = given.difference(&wanted_set).collect();
        let mut absent: Vec<_> = wanted_set.difference(&given).collect();
        extra.sort();
        absent.sort();
        return Err(Error::Shape(format!("column mismatch: unexpected {extra:?}, absent {absent:?}")));
    }
    let mut blocks = Vec::with_capacity(layout.site_count());
    for k in 0..layout.site_count() {
        let mut b = Matrix::zeros(n, layout.width(k));
        for (jj, name) in layout.columns(k).iter().enumerate() {
            match names.iter().position(|c| c == name) {
                Some(j) => {
                    for i in 0..n {
                        b[(i, jj)] = full[(i, j)];
                    }
                }
                None => b.set_column(jj, &vec![T::one(); n]),
            }
        }
        blocks.push(b);
    }
    VerticalDataset::from_blocks(layout, blocks, outcome)
}

/// n i.i.d. uniform draws from {0, …, n−1}.
pub fn bootstrap_index_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Invalid("bootstrap of an empty dataset".into()));
    }
    Ok((0..n).map(|_| rng.random_range(0..n)).collect())
}

/// The estimators compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Gs,
    Cc,
    IpwPooled,
    PpipwV,
    MiNaive,
    MiPooled,
    PpmiV,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Gs, Method::Cc, Method::IpwPooled, Method::PpipwV, Method::MiNaive, Method::MiPooled, Method::PpmiV];

    pub fn label(self) -> &'static str {
        match self {
            Method::Gs => "GS",
            Method::Cc => "CC",
            Method::IpwPooled => "IPW-pooled",
            Method::PpipwV => "PPIPW-V",
            Method::MiNaive => "MI-naive",
            Method::MiPooled => "MI-pooled",
            Method::PpmiV => "PPMI-V",
        }
    }

    /// Oracle baselines that read pooled data.
    pub fn is_pooled(self) -> bool {
        matches!(self, Method::IpwPooled | Method::MiPooled)
    }

    pub fn is_multiple_imputation(self) -> bool {
        matches!(self, Method::MiNaive | Method::MiPooled | Method::PpmiV)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.label().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// How the confidence intervals of a fit were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CiKind {
    #[default]
    Normal,
    StudentT,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
    pub extra_rounds: usize,
    pub bootstrap_replicates: usize,
    pub bootstrap_failed: usize,
    pub se_unreliable: bool,
    pub messages: u64,
    pub bytes: u64,
    pub ci_kind: CiKind,
    /// Rubin degrees of freedom per coordinate (MI paths).
    pub df: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    pub method: Method,
    pub names: Vec<String>,
    /// 1-based owning site per coordinate.
    pub sites: Vec<usize>,
    pub estimate: Vec<T>,
    pub se: Option<Vec<T>>,
    pub ci: Option<Vec<(T, T)>>,
    pub diagnostics: Diagnostics,
}

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

impl<T: Scalar> FitResult<T> {
    pub fn new(method: Method, layout: &PartitionLayout, estimate: Vec<T>) -> Self {
        Self {
            method,
            names: layout.pooled_columns(),
            sites: layout.coordinate_sites().into_iter().map(|k| k + 1).collect(),
            estimate,
            se: None,
            ci: None,
            diagnostics: Diagnostics::default(),
        }
    }

    /// Attaches standard errors with normal-quantile 95% intervals.
    pub fn with_normal_ci(mut self, se: Vec<T>) -> Self {
        let z = T::lit(Z_975);
        self.ci = Some(self.estimate.iter().zip(&se).map(|(&t, &s)| (t - z * s, t + z * s)).collect());
        self.se = Some(se);
        self.diagnostics.ci_kind = CiKind::Normal;
        self
    }

    pub fn estimate_of(&self, name: &str) -> Option<T> {
        self.names.iter().position(|c| c == name).map(|j| self.estimate[j])
    }
}
