//! Ridge-penalized logistic regression for the response indicator, fitted
//! in its dual form so that the only cross-site quantity is the additive
//! kernel `G = Σ_k Z^k (Z^k)ᵀ`.
//!
//! Dual objective over ψ ∈ (0,1)ⁿ:
//!
//! ```text
//! J(ψ) = 1/(2λ) Σ_i Σ_i' ψ_i ψ_i' s_i s_i' G[i,i'] − Σ_i H(ψ_i)
//! H(ψ) = −ψ log ψ − (1−ψ) log(1−ψ)
//! J'   = (1/λ) S G S ψ + log(ψ/(1−ψ))
//! J''  = (1/λ) S G S + diag(1/(ψ(1−ψ)))
//! ```
//!
//! Primal coefficients are recovered per site as
//! `β^k = λ⁻¹ Σ_i ψ_i s_i z_i^k`, and weights as `ŵ_i = 1 + exp(−z_iᵀβ)`.

use crate::error::{Error, Result};
use crate::linalg::{pivoted_cholesky, Cholesky, Matrix};
use crate::netsim::{Design, Federation, Payload, Phase};
use crate::scalar::{norm_inf, Scalar};

/// Interior clamp for ψ.
pub const PSI_CLAMP: f64 = 1e-10;
/// Maximum step halvings per Newton update.
pub const MAX_HALVINGS: usize = 30;
const JITTERS: [f64; 4] = [1e-12, 1e-10, 1e-8, 1e-6];

/// How the Newton system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualSolver {
    /// Low-rank when the summed kernel has small numerical rank, dense otherwise.
    #[default]
    Auto,
    /// Cholesky of the full n×n Hessian.
    Dense,
    /// Woodbury solve through a pivoted-Cholesky factor of the kernel.
    LowRank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualConfig {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: DualSolver,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self { lambda: 1.0, tol: 1e-8, max_iter: 100, solver: DualSolver::Auto }
    }
}

/// A site's kernel contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GramShare<T> {
    pub site: usize,
    pub gram: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualLogisticFit<T> {
    pub psi: Vec<T>,
    pub beta_blocks: Vec<Vec<T>>,
    pub lambda: T,
    pub iterations: usize,
    pub converged: bool,
    pub objective: T,
    pub weights: Vec<T>,
    pub low_rank: bool,
}

impl<T: Scalar> DualLogisticFit<T> {
    pub fn beta(&self) -> Vec<T> {
        self.beta_blocks.iter().flatten().copied().collect()
    }
}

/// `G_k[i,i'] = (z_i^k)ᵀ z_i'^k` for one site's predictor block.
pub fn local_gram<T: Scalar>(block: &Matrix<T>) -> Result<Matrix<T>> {
    if !block.all_finite() {
        return Err(Error::NonFinite("predictor block".into()));
    }
    Ok(block.outer_gram())
}

fn check_psi<T: Scalar>(psi: &[T]) -> Result<()> {
    if psi.iter().any(|&p| !(p > T::zero() && p < T::one())) {
        return Err(Error::Invalid("dual parameters must lie strictly inside (0, 1)".into()));
    }
    Ok(())
}

fn entropy<T: Scalar>(p: T) -> T {
    let q = T::one() - p;
    -(p * p.ln()) - q * q.ln()
}

/// The summed kernel, either as-is or through a low-rank factor.
enum Kernel<'a, T> {
    Dense(&'a Matrix<T>),
    LowRank(Matrix<T>),
}

impl<T: Scalar> Kernel<'_, T> {
    fn n(&self) -> usize {
        match self {
            Kernel::Dense(g) => g.rows(),
            Kernel::LowRank(f) => f.rows(),
        }
    }

    fn apply(&self, v: &[T]) -> Vec<T> {
        match self {
            Kernel::Dense(g) => g.mul_vec(v).expect("square kernel"),
            Kernel::LowRank(f) => {
                let t = f.tr_mul_vec(v).expect("factor rows");
                f.mul_vec(&t).expect("factor cols")
            }
        }
    }

    /// Returns J(ψ) and G·(s∘ψ).
    fn objective(&self, psi: &[T], s: &[T], lambda: T) -> (T, Vec<T>) {
        let u: Vec<T> = psi.iter().zip(s).map(|(&p, &si)| p * si).collect();
        let gu = self.apply(&u);
        let quad = u.iter().zip(&gu).fold(T::zero(), |a, (&x, &y)| a + x * y);
        let ent = psi.iter().fold(T::zero(), |a, &p| a + entropy(p));
        (quad / (T::lit(2.0) * lambda) - ent, gu)
    }

    /// Solves J''(ψ) x = g.
    fn solve(&self, psi: &[T], s: &[T], lambda: T, g: &[T]) -> Result<Vec<T>> {
        let n = self.n();
        match self {
            Kernel::Dense(gram) => {
                let mut h = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        h[(i, j)] = s[i] * gram[(i, j)] * s[j] / lambda;
                    }
                    h[(i, i)] = h[(i, i)] + T::one() / (psi[i] * (T::one() - psi[i]));
                }
                let (chol, _) = Cholesky::with_jitter(&h, &JITTERS).map_err(|_| Error::IllConditionedHessian)?;
                Ok(chol.solve(g))
            }
            Kernel::LowRank(f) => {
                // (D + A Aᵀ)⁻¹ g with A = S F / √λ and D = diag(1/(ψ(1−ψ)))
                let q = f.cols();
                let root = lambda.sqrt();
                let dinv: Vec<T> = psi.iter().map(|&p| p * (T::one() - p)).collect();
                let mut a = f.clone();
                for i in 0..n {
                    let c = s[i] / root;
                    for v in a.row_mut(i) {
                        *v = *v * c;
                    }
                }
                let mut inner = Matrix::identity(q);
                for i in 0..n {
                    let row = a.row(i);
                    for p in 0..q {
                        let ap = row[p] * dinv[i];
                        for r in 0..q {
                            inner[(p, r)] = inner[(p, r)] + ap * row[r];
                        }
                    }
                }
                let dg: Vec<T> = g.iter().zip(&dinv).map(|(&x, &d)| x * d).collect();
                let atdg = a.tr_mul_vec(&dg)?;
                let (chol, _) = Cholesky::with_jitter(&inner, &JITTERS).map_err(|_| Error::IllConditionedHessian)?;
                let mid = chol.solve(&atdg);
                let corr = a.mul_vec(&mid)?;
                Ok(dg.iter().zip(&corr).zip(&dinv).map(|((&x, &c), &d)| x - d * c).collect())
            }
        }
    }
}

fn gradient_threshold<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(100.0))
}

/// One safeguarded Newton step; returns the new ψ and J(ψ_new) ≤ J(ψ).
fn newton_step<T: Scalar>(kernel: &Kernel<'_, T>, psi: &[T], s: &[T], lambda: T) -> Result<(Vec<T>, T)> {
    let (j0, gu) = kernel.objective(psi, s, lambda);
    let grad: Vec<T> = (0..psi.len()).map(|i| s[i] * gu[i] / lambda + (psi[i] / (T::one() - psi[i])).ln()).collect();
    if norm_inf(&grad) < gradient_threshold() {
        return Ok((psi.to_vec(), j0));
    }
    let step = kernel.solve(psi, s, lambda, &grad)?;
    if step.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditionedHessian);
    }
    let (lo, hi) = (T::lit(PSI_CLAMP), T::one() - T::lit(PSI_CLAMP));
    let mut t = T::one();
    for _ in 0..=MAX_HALVINGS {
        let cand: Vec<T> = psi.iter().zip(&step).map(|(&p, &d)| (p - t * d).max(lo).min(hi)).collect();
        let (j1, _) = kernel.objective(&cand, s, lambda);
        if j1 <= j0 {
            return Ok((cand, j1));
        }
        t = t * T::lit(0.5);
    }
    Ok((psi.to_vec(), j0))
}

fn check_dual_inputs<T: Scalar>(psi: &[T], g: &Matrix<T>, s: &[T], lambda: T) -> Result<()> {
    let n = psi.len();
    if g.shape() != (n, n) || s.len() != n {
        return Err(Error::Shape(format!("ψ of {n}, kernel {:?}, signs of {}", g.shape(), s.len())));
    }
    if !(lambda > T::zero()) {
        return Err(Error::Invalid("λ must be positive".into()));
    }
    check_psi(psi)
}

/// J(ψ) for the summed kernel `g`.
pub fn dual_objective<T: Scalar>(psi: &[T], g: &Matrix<T>, s: &[T], lambda: T) -> Result<T> {
    check_dual_inputs(psi, g, s, lambda)?;
    Ok(Kernel::Dense(g).objective(psi, s, lambda).0)
}

/// One full Newton step with clamping into (ε, 1−ε) and step halving until
/// J does not increase.
pub fn newton_update<T: Scalar>(psi: &[T], g: &Matrix<T>, s: &[T], lambda: T) -> Result<Vec<T>> {
    check_dual_inputs(psi, g, s, lambda)?;
    Ok(newton_step(&Kernel::Dense(g), psi, s, lambda)?.0)
}

/// `β^k = λ⁻¹ Σ_i ψ_i s_i z_i^k`, computed from the site's own block.
pub fn recover_primal<T: Scalar>(psi: &[T], s: &[T], block: &Matrix<T>, lambda: T) -> Result<Vec<T>> {
    if psi.len() != s.len() || block.rows() != psi.len() {
        return Err(Error::Shape(format!("ψ of {}, s of {}, block with {} rows", psi.len(), s.len(), block.rows())));
    }
    let u: Vec<T> = psi.iter().zip(s).map(|(&p, &si)| p * si / lambda).collect();
    block.tr_mul_vec(&u)
}

/// `ŵ_i = 1 + exp(−Σ_k share_k[i])`.
pub fn predict_weights<T: Scalar>(shares: &[Vec<T>]) -> Result<Vec<T>> {
    let n = shares.first().map_or(0, Vec::len);
    if shares.iter().any(|s| s.len() != n) {
        return Err(Error::Shape("linear predictor shares of different lengths".into()));
    }
    (0..n)
        .map(|i| {
            let eta = shares.iter().fold(T::zero(), |a, s| a + s[i]);
            if !eta.is_finite() {
                return Err(Error::NonFinite(format!("linear predictor share at row {i}")));
            }
            Ok(T::one() + (-eta).exp())
        })
        .collect()
}

/// Runs Newton iterations from ψ⁰ = ½ on a summed kernel.
fn solve_dual<T: Scalar>(
    g: &Matrix<T>,
    s: &[T],
    lambda: T,
    cfg: &DualConfig,
) -> Result<(Vec<T>, T, usize, bool, bool)> {
    let n = g.rows();
    let kernel = match cfg.solver {
        DualSolver::Dense => Kernel::Dense(g),
        DualSolver::LowRank | DualSolver::Auto => {
            let rel_tol = T::lit(1e-13).max(T::epsilon() * T::lit(10.0));
            let cap = if cfg.solver == DualSolver::LowRank { n } else { (n / 4).max(1) };
            match pivoted_cholesky(g, rel_tol, cap) {
                Some(f) => Kernel::LowRank(f),
                None => Kernel::Dense(g),
            }
        }
    };
    let low_rank = matches!(kernel, Kernel::LowRank(_));
    let tol = T::lit(cfg.tol);
    let mut psi = vec![T::lit(0.5); n];
    let mut objective = kernel.objective(&psi, s, lambda).0;
    for it in 1..=cfg.max_iter {
        let (next, j) = newton_step(&kernel, &psi, s, lambda)?;
        let change = psi.iter().zip(&next).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
        psi = next;
        objective = j;
        if change < tol {
            return Ok((psi, objective, it, true, low_rank));
        }
    }
    Ok((psi, objective, cfg.max_iter, false, low_rank))
}

/// Stage 1 over a federation: one Gram exchange, Newton iterations at the
/// coordinator, then primal recovery and weight prediction at the sites.
pub fn fit<T: Scalar>(fed: &mut Federation<'_, T>, cfg: &DualConfig) -> Result<DualLogisticFit<T>> {
    let lambda = T::lit(cfg.lambda);
    if !(lambda > T::zero()) {
        return Err(Error::Invalid("λ must be positive".into()));
    }
    let s = fed.signs();
    let complete = fed.response().iter().filter(|&&r| r == 1).count();
    if complete == 0 || complete == fed.n() {
        return Err(Error::NoResponseVariation);
    }
    let n = fed.n();

    fed.set_phase(Phase::Stage1Gram);
    fed.next_round();
    // shares are folded in as they arrive so at most two n×n buffers are live
    let mut g: Option<Matrix<T>> = None;
    for k in 0..fed.site_count() {
        let share = fed
            .send_from_site(k, |site| Ok(Payload::GramShare(local_gram(site.design(Design::Propensity))?)))?
            .into_matrix()?;
        match g.as_mut() {
            None => g = Some(share),
            Some(acc) => acc.add_assign(&share)?,
        }
    }
    let g = g.expect("at least two sites");

    let (psi, objective, iterations, converged, low_rank) = solve_dual(&g, &s, lambda, cfg)?;
    drop(g);

    fed.set_phase(Phase::Stage1Dual);
    fed.next_round();
    let u: Vec<T> = psi.iter().zip(&s).map(|(&p, &si)| p * si).collect();
    let delivered = fed.broadcast(Payload::DualVectorBroadcast(u))?;
    let u = delivered.into_iter().next().expect("at least two sites").into_vector()?;

    fed.set_phase(Phase::Stage1Weights);
    fed.next_round();
    let ones = vec![T::one(); n];
    let beta_blocks: Vec<Vec<T>> = fed
        .gather(|site| Ok(Payload::ParamVector(recover_primal(&u, &ones, site.design(Design::Propensity), lambda)?)))?
        .into_iter()
        .map(Payload::into_vector)
        .collect::<Result<_>>()?;
    let lp = fed.gather(|site| {
        Ok(Payload::LinearPredictorShare(site.linear_share(Design::Propensity, &beta_blocks[site.index()])?))
    })?;
    let lp: Vec<Vec<T>> = lp.into_iter().map(Payload::into_vector).collect::<Result<_>>()?;
    let weights = predict_weights(&lp)?;

    Ok(DualLogisticFit { psi, beta_blocks, lambda, iterations, converged, objective, weights, low_rank })
}

/// Stage 1 on a pooled predictor matrix (no network), for tests and
/// solver comparisons.
pub fn fit_pooled<T: Scalar>(z: &Matrix<T>, s: &[T], cfg: &DualConfig) -> Result<DualLogisticFit<T>> {
    let lambda = T::lit(cfg.lambda);
    if s.iter().all(|&v| v > T::zero()) || s.iter().all(|&v| v < T::zero()) {
        return Err(Error::NoResponseVariation);
    }
    let g = local_gram(z)?;
    let (psi, objective, iterations, converged, low_rank) = solve_dual(&g, s, lambda, cfg)?;
    let beta = recover_primal(&psi, s, z, lambda)?;
    let weights = predict_weights(&[z.mul_vec(&beta)?])?;
    Ok(DualLogisticFit { psi, beta_blocks: vec![beta], lambda, iterations, converged, objective, weights, low_rank })
}
