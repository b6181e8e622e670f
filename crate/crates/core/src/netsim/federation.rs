//! Site and coordinator roles.
//!
//! A [`Federation`] owns each site's private design blocks. Estimators run
//! coordinator logic against it; site-local computations only ever see a
//! single [`SiteView`], and their results reach the coordinator as
//! [`Payload`]s through the [`Network`].

use super::{Dims, Network, NodeId, Payload, Phase};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::VerticalDataset;
use crate::scalar::Scalar;

/// Which per-site design a computation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// The analysis covariates X (missing entries read as 0; such rows must
    /// carry zero weight).
    Analysis,
    /// Predictors Z of the missingness and imputation models: the owner
    /// site's missing-prone column is replaced in place by Y.
    Propensity,
}

/// Where the regression response lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    /// Y, replicated at every site and known to the coordinator.
    Outcome,
    /// The missing-prone column, private to its owner site.
    MissingColumn,
}

#[derive(Debug, Clone)]
struct SiteData<T> {
    analysis: Matrix<T>,
    propensity: Matrix<T>,
    /// Owner only: the raw missing-prone column (missing marker included).
    missing_raw: Option<Vec<T>>,
    /// Owner only: r, which the owner derives from its own column.
    response: Option<Vec<u8>>,
}

/// What a single site can see while computing locally.
pub struct SiteView<'a, T> {
    index: usize,
    data: &'a SiteData<T>,
}

impl<'a, T: Scalar> SiteView<'a, T> {
    /// 0-based site index.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn node(&self) -> NodeId {
        NodeId::site(self.index)
    }

    pub fn design(&self, design: Design) -> &'a Matrix<T> {
        match design {
            Design::Analysis => &self.data.analysis,
            Design::Propensity => &self.data.propensity,
        }
    }

    pub fn width(&self) -> usize {
        self.data.analysis.cols()
    }

    pub fn owns_missing_column(&self) -> bool {
        self.data.missing_raw.is_some()
    }

    /// Owner only: the missing-prone column with its missing markers.
    pub fn missing_column(&self) -> Option<&'a [T]> {
        self.data.missing_raw.as_deref()
    }

    /// Owner only: the response indicator.
    pub fn response(&self) -> Option<&'a [u8]> {
        self.data.response.as_deref()
    }

    /// `design · v` over this site's columns.
    pub fn linear_share(&self, design: Design, v: &[T]) -> Result<Vec<T>> {
        crate::powell::site_linear_share(self.design(design), v)
    }
}

/// Sites plus the coordinator's state, wired to a [`Network`].
pub struct Federation<'n, T> {
    sites: Vec<SiteData<T>>,
    outcome: Vec<T>,
    response: Vec<u8>,
    widths: Vec<usize>,
    net: &'n mut Network,
}

impl<'n, T: Scalar> Federation<'n, T> {
    pub fn new(ds: &VerticalDataset<T>, net: &'n mut Network) -> Result<Self> {
        let layout = ds.layout();
        if net.n() != ds.n() || net.site_count() != layout.site_count() {
            return Err(Error::Shape(format!(
                "network sized for n = {}, K = {} but dataset has n = {}, K = {}",
                net.n(),
                net.site_count(),
                ds.n(),
                layout.site_count()
            )));
        }
        let (ms, ml) = (layout.missing_site(), layout.missing_local());
        let sites = ds
            .blocks()
            .iter()
            .enumerate()
            .map(|(k, block)| {
                let mut analysis = block.clone();
                for v in analysis.as_mut_slice() {
                    if v.is_missing() {
                        *v = T::zero();
                    }
                }
                let mut propensity = analysis.clone();
                let owner = k == ms;
                if owner {
                    propensity.set_column(ml, ds.outcome());
                }
                SiteData {
                    analysis,
                    propensity,
                    missing_raw: owner.then(|| block.column(ml)),
                    response: owner.then(|| ds.response().to_vec()),
                }
            })
            .collect();
        Ok(Self {
            sites,
            outcome: ds.outcome().to_vec(),
            response: ds.response().to_vec(),
            widths: layout.widths(),
            net,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Y, pre-shared with every participant.
    pub fn outcome(&self) -> &[T] {
        &self.outcome
    }

    /// r, known to the coordinator (hosted with the owner site).
    pub fn response(&self) -> &[u8] {
        &self.response
    }

    pub fn signs(&self) -> Vec<T> {
        self.response.iter().map(|&r| if r == 1 { T::one() } else { -T::one() }).collect()
    }

    pub fn network(&mut self) -> &mut Network {
        self.net
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.net.set_phase(phase);
    }

    pub fn next_round(&mut self) -> u64 {
        self.net.next_round()
    }

    fn view(&self, k: usize) -> SiteView<'_, T> {
        SiteView { index: k, data: &self.sites[k] }
    }

    /// Every site computes a payload locally and sends it to the coordinator,
    /// in site order.
    pub fn gather<F>(&mut self, mut f: F) -> Result<Vec<Payload<T>>>
    where
        F: FnMut(&SiteView<'_, T>) -> Result<Payload<T>>,
    {
        let mut out = Vec::with_capacity(self.sites.len());
        for k in 0..self.sites.len() {
            let payload = f(&self.view(k))?;
            out.push(self.net.send(NodeId::site(k), NodeId::COORDINATOR, payload)?);
        }
        Ok(out)
    }

    /// Coordinator → every site; returns the delivered copies in site order.
    pub fn broadcast(&mut self, payload: Payload<T>) -> Result<Vec<Payload<T>>> {
        (0..self.sites.len()).map(|k| self.net.send(NodeId::COORDINATOR, NodeId::site(k), payload.clone())).collect()
    }

    /// Coordinator → one site.
    pub fn send_to_site(&mut self, site: usize, payload: Payload<T>) -> Result<Payload<T>> {
        self.net.send(NodeId::COORDINATOR, NodeId::site(site), payload)
    }

    /// One site → coordinator, computed from that site's view.
    pub fn send_from_site<F>(&mut self, site: usize, f: F) -> Result<Payload<T>>
    where
        F: FnOnce(&SiteView<'_, T>) -> Result<Payload<T>>,
    {
        let payload = f(&self.view(site))?;
        self.net.send(NodeId::site(site), NodeId::COORDINATOR, payload)
    }

    /// Purely local computation at one site; nothing is transmitted.
    pub fn at_site<R>(&self, site: usize, f: impl FnOnce(&SiteView<'_, T>) -> R) -> R {
        f(&self.view(site))
    }

    /// The owner site of the missing-prone column.
    pub fn owner_site(&self) -> usize {
        self.sites.iter().position(|s| s.missing_raw.is_some()).expect("one owner site")
    }

    /// Cross-site block `X^aᵀ X^b` delivered to the coordinator as a
    /// `GramBlock`. Only the p_a×p_b product leaves the pair; the pairwise
    /// secure-product exchange that produces it is not modelled.
    pub fn cross_block(&mut self, a: usize, b: usize, design: Design) -> Result<Matrix<T>> {
        let block = self.view(a).design(design).cross(self.view(b).design(design))?;
        let sender = NodeId::site(a.min(b));
        self.net.send(sender, NodeId::COORDINATOR, Payload::GramBlock { sites: (a, b), block })?.into_matrix()
    }

    /// `XᵀX` assembled at the coordinator from per-pair `GramBlock`s.
    pub fn assemble_cross_products(&mut self, design: Design) -> Result<Matrix<T>> {
        let p = self.param_count();
        let offsets: Vec<usize> = self
            .widths
            .iter()
            .scan(0, |acc, &w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        let mut xtx = Matrix::zeros(p, p);
        for a in 0..self.sites.len() {
            for b in a..self.sites.len() {
                let blk = self.cross_block(a, b, design)?;
                for i in 0..blk.rows() {
                    for j in 0..blk.cols() {
                        xtx[(offsets[a] + i, offsets[b] + j)] = blk[(i, j)];
                        xtx[(offsets[b] + j, offsets[a] + i)] = blk[(i, j)];
                    }
                }
            }
        }
        Ok(xtx)
    }

    /// Shares the bootstrap index vector with every site.
    pub fn share_indices(&mut self, indices: &[usize]) -> Result<()> {
        let n = self.n();
        if indices.len() != n {
            return Err(Error::Shape(format!("{} indices for n = {n}", indices.len())));
        }
        self.broadcast(Payload::IndexVector(indices.to_vec()))?;
        Ok(())
    }
}

/// Dimension checks used by estimator code paths that sum shares.
pub(crate) fn sum_vectors<T: Scalar>(parts: Vec<Payload<T>>, n: usize) -> Result<Vec<T>> {
    let mut total = vec![T::zero(); n];
    for p in parts {
        let dims = p.dims();
        let v = p.into_vector()?;
        if v.len() != n {
            return Err(Error::Payload(format!("share with dims {dims}, expected {}", Dims::Vector(n))));
        }
        for (t, x) in total.iter_mut().zip(v) {
            *t = *t + x;
        }
    }
    Ok(total)
}
