//! Derivative-free conjugate-direction solver for weighted least squares
//! over a vertically partitioned design.
//!
//! The coordinator holds the weights and the residual γ; each site holds its
//! own slice of θ, of the anchor point θ̃ and of every search direction. A
//! line minimization exchanges one n-vector share per site (`X^k d^k`) and
//! one broadcast scalar δ.

use crate::error::{Error, Result};
use crate::linalg::{pivoted_cholesky, Matrix};
use crate::netsim::{sum_vectors, Control, Design, Federation, Payload, Response};
use crate::scalar::{weighted_dot, Scalar};

/// `X^k · v^k` for one site.
pub fn site_linear_share<T: Scalar>(block: &Matrix<T>, v: &[T]) -> Result<Vec<T>> {
    if block.cols() != v.len() {
        return Err(Error::Shape(format!("block has {} columns, sub-vector has {}", block.cols(), v.len())));
    }
    block.mul_vec(v)
}

/// `δ = γᵀVη / ηᵀVη`, or 0 when the denominator vanishes.
pub fn line_min_delta<T: Scalar>(gamma: &[T], eta: &[T], v: &[T]) -> Result<T> {
    if gamma.len() != eta.len() || v.len() != eta.len() {
        return Err(Error::Shape(format!("γ of {}, η of {}, V of {}", gamma.len(), eta.len(), v.len())));
    }
    let den = weighted_dot(v, eta, eta);
    if den == T::zero() {
        return Ok(T::zero());
    }
    Ok(weighted_dot(v, gamma, eta) / den)
}

/// `F = Σ v_i γ_i²`.
pub fn weighted_rss<T: Scalar>(gamma: &[T], v: &[T]) -> T {
    weighted_dot(v, gamma, gamma)
}

/// The weighted least-squares problem; designs and response live at the sites.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsProblem<T> {
    pub design: Design,
    pub response: Response,
    pub weights: Vec<T>,
}

impl<T: Scalar> WlsProblem<T> {
    pub fn new(design: Design, response: Response, weights: Vec<T>) -> Self {
        Self { design, response, weights }
    }

    /// Rows with positive weight.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|&&v| v > T::zero()).count()
    }

    fn validate(&self, fed: &Federation<'_, T>) -> Result<()> {
        if self.weights.len() != fed.n() {
            return Err(Error::Shape(format!("{} weights for n = {}", self.weights.len(), fed.n())));
        }
        for (i, &v) in self.weights.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("weight at row {i}")));
            }
            if v < T::zero() {
                return Err(Error::Invalid(format!("negative weight at row {i}")));
            }
        }
        let touches_missing = self.design == Design::Analysis || self.response == Response::MissingColumn;
        if touches_missing {
            if let Some(i) = (0..fed.n()).find(|&i| fed.response()[i] == 0 && self.weights[i] != T::zero()) {
                return Err(Error::Invalid(format!("row {i} has a missing value but non-zero weight")));
            }
        }
        Ok(())
    }
}

/// Search directions, each split into per-site sub-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet<T> {
    widths: Vec<usize>,
    directions: Vec<Vec<T>>,
}

impl<T: Scalar> DirectionSet<T> {
    /// Unit vectors, each concentrated at one site.
    pub fn standard(widths: &[usize]) -> Self {
        let p: usize = widths.iter().sum();
        let directions = (0..p)
            .map(|j| {
                let mut d = vec![T::zero(); p];
                d[j] = T::one();
                d
            })
            .collect();
        Self { widths: widths.to_vec(), directions }
    }

    /// A caller-chosen orthogonal basis.
    pub fn from_vectors(widths: &[usize], directions: Vec<Vec<T>>) -> Result<Self> {
        let p: usize = widths.iter().sum();
        if directions.len() != p || directions.iter().any(|d| d.len() != p) {
            return Err(Error::Shape(format!("basis must hold {p} vectors of length {p}")));
        }
        let tol = T::lit(1e-10);
        for (a, da) in directions.iter().enumerate() {
            let na = crate::scalar::dot(da, da);
            if !(na > T::zero()) {
                return Err(Error::Invalid(format!("basis vector {a} is zero")));
            }
            for db in &directions[a + 1..] {
                let nb = crate::scalar::dot(db, db);
                if crate::scalar::dot(da, db).abs() > tol * (na * nb).sqrt() {
                    return Err(Error::Invalid("basis vectors are not orthogonal".into()));
                }
            }
        }
        Ok(Self { widths: widths.to_vec(), directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, j: usize) -> &[T] {
        &self.directions[j]
    }

    /// Sub-vector of direction `j` held by `site`.
    pub fn site_part(&self, j: usize, site: usize) -> &[T] {
        let off: usize = self.widths[..site].iter().sum();
        &self.directions[j][off..off + self.widths[site]]
    }

    fn split(&self) -> Vec<Vec<Vec<T>>> {
        (0..self.widths.len()).map(|k| (0..self.len()).map(|j| self.site_part(j, k).to_vec()).collect()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowellOptions {
    /// Extra outer iterations allowed when the last one still reduced F.
    pub max_extra_rounds: usize,
    /// Relative decrease in F below which the last iteration counts as stalled.
    pub verify_tol: f64,
    /// Relative pivot tolerance of the rank check.
    pub rank_tol: f64,
}

impl Default for PowellOptions {
    fn default() -> Self {
        Self { max_extra_rounds: 1, verify_tol: 1e-12, rank_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowellResult<T> {
    pub theta: Vec<T>,
    pub objective: T,
    pub outer_iterations: usize,
    pub extra_rounds: usize,
    pub line_searches: usize,
    pub rank_deficient: bool,
    pub under_determined: bool,
}

/// What one site keeps between messages.
struct SiteState<T> {
    theta: Vec<T>,
    anchor: Vec<T>,
    directions: Vec<Vec<T>>,
}

impl<T: Scalar> SiteState<T> {
    fn rotate(&mut self, reuse_dropped: bool) {
        let dropped = self.directions.remove(0);
        let fresh =
            if reuse_dropped { dropped } else { self.theta.iter().zip(&self.anchor).map(|(&a, &b)| a - b).collect() };
        self.directions.push(fresh);
    }
}

struct Solver<'f, 'n, T> {
    fed: &'f mut Federation<'n, T>,
    problem: &'f WlsProblem<T>,
    sites: Vec<SiteState<T>>,
    gamma: Vec<T>,
    line_searches: usize,
}

impl<T: Scalar> Solver<'_, '_, T> {
    /// Rebuilds γ from per-site shares of the current θ.
    fn refresh_residual(&mut self) -> Result<()> {
        let (design, response) = (self.problem.design, self.problem.response);
        let sites = &self.sites;
        let parts = self.fed.gather(|site| {
            let mut share = site.linear_share(design, &sites[site.index()].theta)?;
            if response == Response::MissingColumn {
                if let Some(col) = site.missing_column() {
                    for (s, &x) in share.iter_mut().zip(col) {
                        if !x.is_missing() {
                            *s = *s - x;
                        }
                    }
                }
            }
            Ok(Payload::LinearPredictorShare(share))
        })?;
        let n = self.fed.n();
        let total = sum_vectors(parts, n)?;
        self.gamma = match response {
            Response::Outcome => self.fed.outcome().iter().zip(&total).map(|(&y, &s)| y - s).collect(),
            Response::MissingColumn => total.into_iter().map(|s| -s).collect(),
        };
        Ok(())
    }

    fn objective(&self) -> T {
        weighted_rss(&self.gamma, &self.problem.weights)
    }

    /// Minimizes along direction `j`; returns δ and η.
    fn line_search(&mut self, j: usize) -> Result<(T, Vec<T>)> {
        self.fed.next_round();
        let design = self.problem.design;
        let sites = &self.sites;
        let parts = self.fed.gather(|site| {
            Ok(Payload::LinearPredictorShare(site.linear_share(design, &sites[site.index()].directions[j])?))
        })?;
        let eta = sum_vectors(parts, self.fed.n())?;
        let delta = line_min_delta(&self.gamma, &eta, &self.problem.weights)?;
        let delivered = self.fed.broadcast(Payload::DeltaScalar(delta))?;
        for (state, msg) in self.sites.iter_mut().zip(delivered) {
            let d = msg.into_scalar()?;
            if d != T::zero() {
                for (t, &dir) in state.theta.iter_mut().zip(&state.directions[j]) {
                    *t = *t + d * dir;
                }
            }
        }
        if delta != T::zero() {
            for (g, &e) in self.gamma.iter_mut().zip(&eta) {
                *g = *g - delta * e;
            }
        }
        self.line_searches += 1;
        Ok((delta, eta))
    }

    /// One outer iteration. Returns the η images of the sweep when asked.
    fn iterate(&mut self, keep_images: bool) -> Result<Vec<Vec<T>>> {
        let p = self.sites[0].directions.len();
        let mut images = Vec::new();
        let mut moved = false;
        for j in 0..p {
            let (delta, eta) = self.line_search(j)?;
            moved |= delta != T::zero();
            if keep_images {
                images.push(eta);
            }
        }
        let signal = if moved { Control::RotateDirections } else { Control::RotateReuseDropped };
        self.fed.broadcast(Payload::ControlSignal(signal))?;
        for state in &mut self.sites {
            state.rotate(!moved);
        }
        self.line_search(p - 1)?;
        for state in &mut self.sites {
            state.anchor.clone_from(&state.theta);
        }
        Ok(images)
    }
}

/// Minimizes `(b − Xθ)ᵀV(b − Xθ)` from `theta0` along `basis`.
///
/// Runs one outer iteration per parameter, then up to
/// `opts.max_extra_rounds` more while the last one still reduced F by a
/// relative `opts.verify_tol` or more.
pub fn powell_solve<T: Scalar>(
    fed: &mut Federation<'_, T>,
    problem: &WlsProblem<T>,
    theta0: &[T],
    basis: &DirectionSet<T>,
    opts: &PowellOptions,
) -> Result<PowellResult<T>> {
    problem.validate(fed)?;
    let widths = fed.widths().to_vec();
    let p: usize = widths.iter().sum();
    if theta0.len() != p || basis.len() != p || basis.widths != widths {
        return Err(Error::Shape(format!("start of {}, basis of {} for {p} parameters", theta0.len(), basis.len())));
    }
    let split = basis.split();
    let mut off = 0;
    let sites = widths
        .iter()
        .zip(split)
        .map(|(&w, directions)| {
            let theta = theta0[off..off + w].to_vec();
            off += w;
            SiteState { anchor: theta.clone(), theta, directions }
        })
        .collect();

    let under_determined = problem.support() < p;
    let mut solver = Solver { fed, problem, sites, gamma: Vec::new(), line_searches: 0 };

    let mut rank_deficient = false;
    let mut outer = 0;
    let mut extra = 0;
    loop {
        solver.fed.next_round();
        solver.refresh_residual()?;
        let before = solver.objective();
        let images = solver.iterate(outer == 0)?;
        outer += 1;
        if outer == 1 {
            rank_deficient = rank_deficient_images(&images, &problem.weights, T::lit(opts.rank_tol))?;
        }
        if outer < p {
            continue;
        }
        let after = solver.objective();
        let scale = before.abs().max(T::min_positive_value());
        let decrease = (before - after) / scale;
        if decrease < T::lit(opts.verify_tol) || extra >= opts.max_extra_rounds {
            break;
        }
        extra += 1;
    }

    solver.fed.next_round();
    solver.refresh_residual()?;
    let objective = solver.objective();
    solver.fed.broadcast(Payload::ControlSignal(Control::Finished))?;
    let sites = &solver.sites;
    let blocks = solver.fed.gather(|site| Ok(Payload::ParamVector(sites[site.index()].theta.clone())))?;
    let mut theta = Vec::with_capacity(p);
    for b in blocks {
        theta.extend(b.into_vector()?);
    }
    Ok(PowellResult {
        theta,
        objective,
        outer_iterations: outer,
        extra_rounds: extra,
        line_searches: solver.line_searches,
        rank_deficient,
        under_determined,
    })
}

/// Rank of `M_ij = η_iᵀVη_j` built from a full basis sweep.
fn rank_deficient_images<T: Scalar>(images: &[Vec<T>], v: &[T], rel_tol: T) -> Result<bool> {
    let p = images.len();
    let mut m = Matrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let x = weighted_dot(v, &images[i], &images[j]);
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    if m.as_slice().iter().all(|&x| x == T::zero()) {
        return Ok(p > 0);
    }
    Ok(pivoted_cholesky(&m, rel_tol, p).map_or(true, |f| f.cols() < p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_vertical, PartitionLayout};
    use crate::netsim::{LedgerDetail, Network, PayloadKind};

    fn layout2() -> PartitionLayout {
        PartitionLayout::new(vec![vec!["intercept".into(), "X1".into()], vec!["X2".into()]], "X1").unwrap()
    }

    #[test]
    fn zero_subvector_gives_zero_share() {
        let b = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(site_linear_share(&b, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(site_linear_share(&b, &[1.0]).is_err());
        let one = Matrix::<f64>::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(site_linear_share(&one, &[1.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn delta_conventions() {
        assert_eq!(line_min_delta(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(line_min_delta(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(line_min_delta(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(line_min_delta(&[1.0, 2.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(line_min_delta(&[1.0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn mean_of_two_points() {
        let layout =
            PartitionLayout::new(vec![vec!["intercept".into(), "X1".into()], vec!["X2".into()]], "X1").unwrap();
        let full = Matrix::<f64>::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let ds = build_vertical(&full, &["X1".into(), "X2".into()], vec![1.0, 2.0], layout).unwrap();
        let mut net = Network::new(2, ds.layout().widths(), LedgerDetail::Full);
        let mut fed = Federation::new(&ds, &mut net).unwrap();
        let prob = WlsProblem::new(Design::Analysis, Response::Outcome, vec![1.0, 1.0]);
        let basis = DirectionSet::standard(fed.widths());
        let res = powell_solve(&mut fed, &prob, &[0.0; 3], &basis, &PowellOptions::default()).unwrap();
        assert!((res.theta[0] - 1.5).abs() < 1e-12);
        assert!(res.rank_deficient);
        let kinds = net.ledger().kinds();
        assert!(kinds.contains(&PayloadKind::DeltaScalar));
        assert!(kinds.contains(&PayloadKind::LinearPredictorShare));
    }

    #[test]
    fn bad_weights_rejected() {
        let full = Matrix::<f64>::from_rows(&[vec![1.0, 0.5], vec![f64::NAN, 0.1], vec![2.0, 0.3]]).unwrap();
        let ds = build_vertical(&full, &["X1".into(), "X2".into()], vec![1.0, 2.0, 0.0], layout2()).unwrap();
        let mut net = Network::new(3, ds.layout().widths(), LedgerDetail::TotalsOnly);
        let mut fed = Federation::new(&ds, &mut net).unwrap();
        let basis = DirectionSet::standard(fed.widths());
        let opts = PowellOptions::default();
        for w in [vec![1.0, 1.0, 1.0], vec![1.0, 0.0, -1.0], vec![1.0, 0.0, f64::NAN], vec![1.0; 2]] {
            let prob = WlsProblem::new(Design::Analysis, Response::Outcome, w);
            assert!(powell_solve(&mut fed, &prob, &[0.0; 3], &basis, &opts).is_err());
        }
        let prob = WlsProblem::new(Design::Analysis, Response::Outcome, vec![1.0, 0.0, 1.0]);
        let res = powell_solve(&mut fed, &prob, &[0.0; 3], &basis, &opts).unwrap();
        assert!(res.under_determined);
    }

    #[test]
    fn non_orthogonal_basis_rejected() {
        assert!(DirectionSet::from_vectors(&[1, 1], vec![vec![1.0, 0.0], vec![1.0, 1.0]]).is_err());
        let b = DirectionSet::from_vectors(&[1, 1], vec![vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(b.site_part(1, 1), &[-1.0]);
    }
}
