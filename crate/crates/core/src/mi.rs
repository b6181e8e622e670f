//! Multiple imputation of the missing-prone column.
//!
//! The imputation model regresses the missing column on the propensity
//! design `Z` (the analysis design with that column replaced by Y) over the
//! complete cases. Each imputation draws `α⁽ᵐ⁾ ~ N(α̂, V̂α)`, then
//! `σ⁽ᵐ⁾² = RSS(α⁽ᵐ⁾) / χ²_df`, then fills the missing entries with
//! `N(zᵢᵀα⁽ᵐ⁾, σ⁽ᵐ⁾²)`. Completed datasets are analysed separately and
//! combined with Rubin's rules.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bootstrap::run_bootstrap;
use crate::error::{Error, Result};
use crate::linalg::{psd_project, psd_sqrt, Cholesky, Matrix};
use crate::model::{CiKind, Diagnostics, FitResult, Method, VerticalDataset, Z_975};
use crate::netsim::{sum_vectors, Design, Federation, Network, NodeId, Payload, Phase, Response};
use crate::pooled;
use crate::powell::{powell_solve, DirectionSet, PowellOptions, WlsProblem};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Rubin degrees of freedom used when the between-imputation variance is 0.
pub const RUBIN_DF_CAP: f64 = 1e6;

/// How the within-imputation covariance is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// `σ̂²(XᵀX)⁻¹` with `XᵀX` assembled from cross-site block products.
    #[default]
    Gram,
    /// Nested shared-index bootstrap of the analysis fit.
    Bootstrap,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gram" => Ok(Self::Gram),
            "bootstrap" => Ok(Self::Bootstrap),
            other => Err(Error::Parse(format!("unknown variance mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiConfig {
    /// Number of imputations.
    pub m: usize,
    /// Replicates for the bootstrap covariance of α̂.
    pub alpha_bootstrap_b: usize,
    pub variance_mode: VarianceMode,
    /// Replicates per imputation in bootstrap variance mode.
    pub analysis_bootstrap_b: usize,
    pub powell: PowellOptions,
    /// Replaces every σ⁽ᵐ⁾² draw with this value (degenerate checks).
    pub sigma2_override: Option<f64>,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            m: 100,
            alpha_bootstrap_b: 200,
            variance_mode: VarianceMode::Gram,
            analysis_bootstrap_b: 100,
            powell: PowellOptions::default(),
            sigma2_override: None,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Invalid(format!("multiple imputation needs M ≥ 2, got {}", self.m)));
        }
        if self.variance_mode == VarianceMode::Bootstrap && self.analysis_bootstrap_b < 2 {
            return Err(Error::Invalid("bootstrap variance mode needs B ≥ 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationModelFit<T> {
    pub alpha_hat: Vec<T>,
    pub alpha_cov: Matrix<T>,
    pub sigma2_hat: T,
    pub complete_count: usize,
    /// Σr − (number of model coefficients).
    pub df: usize,
    pub bootstrap_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw<T> {
    pub index: usize,
    pub alpha: Vec<T>,
    pub sigma2: T,
}

impl<T: Scalar> PosteriorDraw<T> {
    /// α⁽ᵐ⁾ split by site widths.
    pub fn site_blocks(&self, widths: &[usize]) -> Vec<Vec<T>> {
        split_blocks(&self.alpha, widths)
    }
}

fn split_blocks<T: Copy>(v: &[T], widths: &[usize]) -> Vec<Vec<T>> {
    let mut off = 0;
    widths
        .iter()
        .map(|&w| {
            let b = v[off..off + w].to_vec();
            off += w;
            b
        })
        .collect()
}

fn check_df(complete: usize, params: usize) -> Result<usize> {
    if complete <= params {
        return Err(Error::UnderDetermined { available: complete, params: params + 1 });
    }
    Ok(complete - params)
}

fn exact_fit<T: Scalar>(rss: T, ds: &VerticalDataset<T>) -> bool {
    let scale = ds
        .missing_values()
        .iter()
        .zip(ds.response())
        .filter(|(_, &r)| r == 1)
        .fold(T::zero(), |acc, (&v, _)| acc + v * v);
    !(rss > T::lit(1e-12).max(T::epsilon() * T::lit(100.0)) * scale)
}

/// α̂ by the distributed solver: response = missing column, design = Z,
/// `V = diag(r)`. Returns α̂ and RSS(α̂).
pub fn alpha_estimate<T: Scalar>(
    ds: &VerticalDataset<T>,
    net: &mut Network,
    opts: &PowellOptions,
) -> Result<(Vec<T>, T)> {
    let mut fed = Federation::new(ds, net)?;
    fed.set_phase(Phase::ImputationModel);
    let p = fed.param_count();
    check_df(ds.complete_count(), p)?;
    let weights = ds.response().iter().map(|&r| T::lit(f64::from(r))).collect();
    let problem = WlsProblem::new(Design::Propensity, Response::MissingColumn, weights);
    let basis = DirectionSet::standard(fed.widths());
    let res = powell_solve(&mut fed, &problem, &vec![T::zero(); p], &basis, opts)?;
    if res.rank_deficient {
        return Err(Error::DegenerateModel("imputation design is rank deficient".into()));
    }
    Ok((res.theta, res.objective))
}

/// Bootstrap covariance of α̂, symmetrized and projected onto the PSD cone.
pub fn estimate_alpha_cov<T: Scalar>(
    ds: &VerticalDataset<T>,
    b: usize,
    seeds: &SeedTree,
    net: &mut Network,
    opts: &PowellOptions,
) -> Result<(Matrix<T>, usize)> {
    let out = run_bootstrap(ds, b, seeds, net, true, |d, n| alpha_estimate(d, n, opts).map(|(a, _)| a))?;
    if out.unreliable() {
        return Err(Error::DegenerateModel(format!(
            "{} of {} imputation-model bootstrap replicates failed",
            out.failed, out.requested
        )));
    }
    Ok((psd_project(&out.covariance().symmetrize()), out.failed))
}

/// Fits the distributed imputation model.
pub fn fit_imputation_model<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<ImputationModelFit<T>> {
    let p = ds.layout().param_count();
    let df = check_df(ds.complete_count(), p)?;
    let (alpha_hat, rss) = alpha_estimate(ds, net, &cfg.powell)?;
    let sigma2_hat = rss / T::from_usize_lossy(df);
    if exact_fit(rss, ds) {
        return Err(Error::DegenerateModel("imputation model fits the complete cases exactly".into()));
    }
    let (alpha_cov, bootstrap_failed) =
        estimate_alpha_cov(ds, cfg.alpha_bootstrap_b, &seeds.tagged("alpha-cov"), net, &cfg.powell)?;
    Ok(ImputationModelFit {
        alpha_hat,
        alpha_cov,
        sigma2_hat,
        complete_count: ds.complete_count(),
        df,
        bootstrap_failed,
    })
}

/// `α̂ + L ξ` with `L Lᵀ = V̂α` and standard normal ξ.
pub fn draw_alpha<T: Scalar, R: Rng + ?Sized>(alpha_hat: &[T], root: &Matrix<T>, rng: &mut R) -> Vec<T> {
    let xi: Vec<T> = (0..alpha_hat.len()).map(|_| T::lit(StandardNormal.sample(rng))).collect();
    let shift = root.mul_vec(&xi).expect("square root of matching size");
    alpha_hat.iter().zip(shift).map(|(&a, s)| a + s).collect()
}

/// `rss / c` with `c ~ χ²_df`.
pub fn draw_sigma2<T: Scalar, R: Rng + ?Sized>(rss: T, df: usize, rng: &mut R) -> Result<T> {
    if df < 1 {
        return Err(Error::Invalid("χ² degrees of freedom must be at least 1".into()));
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(rss / T::lit(chi.sample(rng)))
}

/// Draws `N(lp_i, σ²)` for each row with `r_i = 0`, in row order; observed
/// entries are copied unchanged.
pub fn impute_values<T: Scalar, R: Rng + ?Sized>(
    observed: &[T],
    response: &[u8],
    lp: &[T],
    sigma2: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    if observed.len() != lp.len() || response.len() != lp.len() {
        return Err(Error::Shape(format!(
            "{} values, {} indicators, {} predictors",
            observed.len(),
            response.len(),
            lp.len()
        )));
    }
    let sd = sigma2.max(T::zero()).sqrt();
    Ok((0..lp.len())
        .map(|i| if response[i] == 1 { observed[i] } else { lp[i] + sd * T::lit(StandardNormal.sample(rng)) })
        .collect())
}

/// The completed dataset for one draw (owner-site write; nothing is sent).
pub fn impute_column<T: Scalar, R: Rng + ?Sized>(
    ds: &VerticalDataset<T>,
    lp: &[T],
    sigma2: T,
    rng: &mut R,
) -> Result<VerticalDataset<T>> {
    let values = impute_values(&ds.missing_values(), ds.response(), lp, sigma2, rng)?;
    ds.with_completed_column(&values)
}

/// Point estimate and within-imputation covariance of one completed dataset.
pub fn analyze_imputed<T: Scalar>(
    completed: &VerticalDataset<T>,
    mode: VarianceMode,
    analysis_b: usize,
    seeds: &SeedTree,
    net: &mut Network,
    opts: &PowellOptions,
) -> Result<(Vec<T>, Matrix<T>)> {
    if completed.missing_count() > 0 {
        return Err(Error::Invalid("analysis needs a fully observed dataset".into()));
    }
    let estimate = |d: &VerticalDataset<T>, n: &mut Network| -> Result<(Vec<T>, T)> {
        let mut fed = Federation::new(d, n)?;
        fed.set_phase(Phase::Analysis);
        let p = fed.param_count();
        let problem = WlsProblem::new(Design::Analysis, Response::Outcome, vec![T::one(); d.n()]);
        let basis = DirectionSet::standard(fed.widths());
        let res = powell_solve(&mut fed, &problem, &vec![T::zero(); p], &basis, opts)?;
        if res.rank_deficient {
            return Err(Error::DegenerateModel("analysis design is rank deficient".into()));
        }
        Ok((res.theta, res.objective))
    };
    let (theta, rss) = estimate(completed, net)?;
    let n = completed.n();
    let p = theta.len();
    let u = match mode {
        VarianceMode::Gram => {
            if n <= p {
                return Err(Error::UnderDetermined { available: n, params: p + 1 });
            }
            let mut fed = Federation::new(completed, net)?;
            fed.set_phase(Phase::Analysis);
            let xtx = fed.assemble_cross_products(Design::Analysis)?;
            let inv = Cholesky::new(&xtx)
                .map_err(|_| Error::DegenerateModel("analysis design is rank deficient".into()))?
                .inverse();
            inv.scale(rss / T::from_usize_lossy(n - p))
        }
        VarianceMode::Bootstrap => {
            let out = run_bootstrap(completed, analysis_b, seeds, net, true, |d, nw| estimate(d, nw).map(|(t, _)| t))?;
            out.covariance()
        }
    };
    Ok((theta, u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RubinCombination<T> {
    pub estimate: Vec<T>,
    pub within: Matrix<T>,
    pub between: Matrix<T>,
    pub total: Matrix<T>,
    /// Per-coordinate degrees of freedom, capped at [`RUBIN_DF_CAP`].
    pub df: Vec<f64>,
}

impl<T: Scalar> RubinCombination<T> {
    pub fn standard_errors(&self) -> Vec<T> {
        self.total.diagonal().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    /// 95% intervals from t quantiles; the normal quantile once df hits the cap.
    pub fn intervals(&self) -> Vec<(T, T)> {
        self.estimate
            .iter()
            .zip(self.standard_errors())
            .zip(&self.df)
            .map(|((&t, s), &df)| {
                let q = T::lit(t_quantile_975(df));
                (t - q * s, t + q * s)
            })
            .collect()
    }
}

/// Upper 2.5% point of Student's t with `df` degrees of freedom.
pub fn t_quantile_975(df: f64) -> f64 {
    if df >= RUBIN_DF_CAP || !df.is_finite() {
        return Z_975;
    }
    StudentsT::new(0.0, 1.0, df).map_or(Z_975, |t| t.inverse_cdf(0.975))
}

/// Rubin's rules over `(θ⁽ᵐ⁾, U⁽ᵐ⁾)` pairs.
pub fn rubin_combine<T: Scalar>(draws: &[(Vec<T>, Matrix<T>)]) -> Result<RubinCombination<T>> {
    let m = draws.len();
    if m < 2 {
        return Err(Error::Invalid(format!("Rubin combination needs M ≥ 2, got {m}")));
    }
    let p = draws[0].0.len();
    if draws.iter().any(|(t, u)| t.len() != p || u.shape() != (p, p)) {
        return Err(Error::Shape("imputation results of different sizes".into()));
    }
    let mt = T::from_usize_lossy(m);
    let mut estimate = vec![T::zero(); p];
    let mut within = Matrix::zeros(p, p);
    for (t, u) in draws {
        for (e, &x) in estimate.iter_mut().zip(t) {
            *e = *e + x;
        }
        within.add_assign(u)?;
    }
    for e in &mut estimate {
        *e = *e / mt;
    }
    let within = within.scale(T::one() / mt);
    let mut between = Matrix::zeros(p, p);
    for (t, _) in draws {
        for a in 0..p {
            for b in 0..p {
                between[(a, b)] = between[(a, b)] + (t[a] - estimate[a]) * (t[b] - estimate[b]);
            }
        }
    }
    let between = between.scale(T::one() / T::from_usize_lossy(m - 1));
    let inflate = T::one() + T::one() / mt;
    let mut total = within.clone();
    total.add_assign(&between.scale(inflate))?;
    let df = (0..p)
        .map(|j| {
            let (w, b) = (within[(j, j)].to_f64_lossy(), between[(j, j)].to_f64_lossy());
            if b <= 0.0 {
                return RUBIN_DF_CAP;
            }
            let r = w / ((1.0 + 1.0 / m as f64) * b);
            ((m - 1) as f64 * (1.0 + r).powi(2)).min(RUBIN_DF_CAP)
        })
        .collect();
    Ok(RubinCombination { estimate, within, between, total, df })
}

/// Which imputation engine produced the model.
#[derive(Clone, Copy)]
enum Engine {
    Distributed,
    OwnerLocal,
    Pooled,
}

/// A fitted imputation model together with how predictions are formed.
struct Imputer<'a, T> {
    model: &'a ImputationModelFit<T>,
    root: Matrix<T>,
    engine: Engine,
    /// Owner-local: the owner's Z block; pooled: the full Z.
    design: Option<Matrix<T>>,
}

impl<T: Scalar> Imputer<'_, T> {
    /// Linear predictor of α and the complete-case RSS, computed where the
    /// engine allows.
    fn predict(&self, ds: &VerticalDataset<T>, alpha: &[T], net: &mut Network) -> Result<(Vec<T>, T)> {
        let observed = ds.missing_values();
        let r = ds.response();
        let lp = match self.engine {
            Engine::Distributed => {
                let mut fed = Federation::new(ds, net)?;
                fed.set_phase(Phase::Imputation);
                fed.next_round();
                let blocks = split_blocks(alpha, fed.widths());
                for (k, b) in blocks.iter().enumerate() {
                    fed.send_to_site(k, Payload::ParamVector(b.clone()))?;
                }
                // the owner folds its observed column in, so only residuals
                // on complete rows and predictions on missing rows leave it
                let parts = fed.gather(|site| {
                    let mut share = site.linear_share(Design::Propensity, &blocks[site.index()])?;
                    if let Some(col) = site.missing_column() {
                        for (s, &x) in share.iter_mut().zip(col) {
                            if !x.is_missing() {
                                *s = *s - x;
                            }
                        }
                    }
                    Ok(Payload::LinearPredictorShare(share))
                })?;
                let total = sum_vectors(parts, ds.n())?;
                (0..ds.n()).map(|i| if r[i] == 1 { total[i] + observed[i] } else { total[i] }).collect()
            }
            Engine::OwnerLocal | Engine::Pooled => self.design.as_ref().expect("local design").mul_vec(alpha)?,
        };
        let rss = (0..ds.n()).filter(|&i| r[i] == 1).fold(T::zero(), |a, i| {
            let e = observed[i] - lp[i];
            a + e * e
        });
        Ok((lp, rss))
    }

    /// Draw m: α⁽ᵐ⁾, σ⁽ᵐ⁾², then the completed dataset.
    fn impute(
        &self,
        ds: &VerticalDataset<T>,
        m: usize,
        seeds: &SeedTree,
        cfg: &MiConfig,
        net: &mut Network,
    ) -> Result<(PosteriorDraw<T>, VerticalDataset<T>)> {
        let stream = seeds.child(m as u64);
        let alpha = draw_alpha(&self.model.alpha_hat, &self.root, &mut stream.tagged("alpha").rng());
        let (lp, rss) = self.predict(ds, &alpha, net)?;
        let sigma2 = match cfg.sigma2_override {
            Some(s) => T::lit(s),
            None => draw_sigma2(rss, self.model.df, &mut stream.tagged("sigma").rng())?,
        };
        if let Engine::Distributed = self.engine {
            let owner = ds.layout().missing_site();
            net.next_round();
            net.send(NodeId::COORDINATOR, NodeId::site(owner), Payload::LinearPredictorShare(lp.clone()))?;
            net.send(NodeId::COORDINATOR, NodeId::site(owner), Payload::DeltaScalar(sigma2))?;
        }
        let completed = impute_column(ds, &lp, sigma2, &mut stream.tagged("impute").rng())?;
        Ok((PosteriorDraw { index: m, alpha, sigma2 }, completed))
    }
}

/// Shared M-loop: impute, analyse, combine.
fn run_imputations<T: Scalar>(
    method: Method,
    ds: &VerticalDataset<T>,
    imputer: &Imputer<'_, T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    let template = net.child();
    let runs: Vec<(Result<(Vec<T>, Matrix<T>)>, Network)> = (0..cfg.m)
        .into_par_iter()
        .map(|m| {
            let mut child = template.clone();
            let res = (|| {
                let (_, completed) = imputer.impute(ds, m, seeds, cfg, &mut child)?;
                match imputer.engine {
                    Engine::Pooled => pooled_analysis(&completed),
                    _ => analyze_imputed(
                        &completed,
                        cfg.variance_mode,
                        cfg.analysis_bootstrap_b,
                        &seeds.child(m as u64).tagged("analysis"),
                        &mut child,
                        &cfg.powell,
                    ),
                }
            })();
            (res, child)
        })
        .collect();
    let mut draws = Vec::with_capacity(cfg.m);
    for (res, child) in runs {
        net.absorb_network(child);
        draws.push(res?);
    }
    let comb = rubin_combine(&draws)?;
    let mut fit = FitResult::new(method, ds.layout(), comb.estimate.clone());
    fit.ci = Some(comb.intervals());
    fit.se = Some(comb.standard_errors());
    fit.diagnostics = Diagnostics {
        converged: true,
        ci_kind: CiKind::StudentT,
        df: Some(comb.df.clone()),
        bootstrap_failed: imputer.model.bootstrap_failed,
        ..Diagnostics::default()
    };
    Ok(fit)
}

/// Centralized OLS analysis with `σ̂²(XᵀX)⁻¹`.
fn pooled_analysis<T: Scalar>(completed: &VerticalDataset<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let data = completed.to_pooled();
    let (n, p) = data.x.shape();
    if n <= p {
        return Err(Error::UnderDetermined { available: n, params: p + 1 });
    }
    let theta = pooled::ols(&data.x, &data.y)?;
    let rss = pooled::weighted_residual_ss(&data.x, &data.y, &vec![T::one(); n], &theta)?;
    let u = pooled::inverse_gram(&data.x)?.scale(rss / T::from_usize_lossy(n - p));
    Ok((theta, u))
}

fn with_traffic<T: Scalar>(
    net: &mut Network,
    f: impl FnOnce(&mut Network) -> Result<FitResult<T>>,
) -> Result<FitResult<T>> {
    let (m0, b0) = (net.ledger().message_count(), net.ledger().byte_count());
    let mut fit = f(net)?;
    fit.diagnostics.messages = net.ledger().message_count() - m0;
    fit.diagnostics.bytes = net.ledger().byte_count() - b0;
    Ok(fit)
}

/// Distributed proper multiple imputation.
pub fn fit_ppmi<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    with_traffic(net, |net| {
        let model = fit_imputation_model(ds, cfg, net, seeds)?;
        fit_ppmi_with_model(ds, &model, cfg, net, seeds)
    })
}

/// The imputation and analysis steps of [`fit_ppmi`] for a given model.
pub fn fit_ppmi_with_model<T: Scalar>(
    ds: &VerticalDataset<T>,
    model: &ImputationModelFit<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let owner = ds.layout().missing_site();
    net.set_phase(Phase::ImputationModel);
    net.next_round();
    net.send(NodeId::COORDINATOR, NodeId::site(owner), Payload::ParamVector(model.alpha_hat.clone()))?;
    net.send(NodeId::COORDINATOR, NodeId::site(owner), Payload::ParamCov(model.alpha_cov.clone()))?;
    let imputer = Imputer { model, root: psd_sqrt(&model.alpha_cov), engine: Engine::Distributed, design: None };
    run_imputations(Method::PpmiV, ds, &imputer, cfg, net, seeds)
}

/// Owner-site propensity block `(1, Y, X2)` in the usual layout.
fn owner_design<T: Scalar>(ds: &VerticalDataset<T>) -> Matrix<T> {
    let layout = ds.layout();
    let mut z = ds.block(layout.missing_site()).clone();
    z.set_column(layout.missing_local(), ds.outcome());
    z
}

/// OLS of the missing column on `z` over complete cases with the analytic
/// posterior covariance `σ̂²(Z_cᵀZ_c)⁻¹`.
pub fn local_imputation_model<T: Scalar>(ds: &VerticalDataset<T>, z: &Matrix<T>) -> Result<ImputationModelFit<T>> {
    let p = z.cols();
    let df = check_df(ds.complete_count(), p)?;
    let x1 = ds.missing_values();
    let w: Vec<T> = ds.response().iter().map(|&r| T::lit(f64::from(r))).collect();
    let y: Vec<T> = x1.iter().zip(ds.response()).map(|(&v, &r)| if r == 1 { v } else { T::zero() }).collect();
    let alpha_hat = pooled::wls(z, &y, &w)?;
    let rss = pooled::weighted_residual_ss(z, &y, &w, &alpha_hat)?;
    let sigma2_hat = rss / T::from_usize_lossy(df);
    if exact_fit(rss, ds) {
        return Err(Error::DegenerateModel("imputation model fits the complete cases exactly".into()));
    }
    let keep: Vec<usize> = (0..ds.n()).filter(|&i| ds.response()[i] == 1).collect();
    let zc = z.select_rows(&keep);
    let alpha_cov = pooled::inverse_gram(&zc)?.scale(sigma2_hat);
    Ok(ImputationModelFit { alpha_hat, alpha_cov, sigma2_hat, complete_count: keep.len(), df, bootstrap_failed: 0 })
}

/// Owner-site imputation from its own covariates and Y, then the
/// distributed analysis.
pub fn fit_mi_naive<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    with_traffic(net, |net| {
        let z = owner_design(ds);
        let model = local_imputation_model(ds, &z)?;
        let imputer =
            Imputer { root: psd_sqrt(&model.alpha_cov), model: &model, engine: Engine::OwnerLocal, design: Some(z) };
        run_imputations(Method::MiNaive, ds, &imputer, cfg, net, seeds)
    })
}

/// Centralized proper imputation and analysis on pooled data.
pub fn fit_mi_pooled<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let data = ds.to_pooled();
    let mut z = data.x.clone();
    z.set_column(data.missing_col, &data.y);
    let model = local_imputation_model(ds, &z)?;
    fit_mi_pooled_with_model(ds, &model, cfg, net, seeds)
}

/// [`fit_mi_pooled`] for a given imputation model.
pub fn fit_mi_pooled_with_model<T: Scalar>(
    ds: &VerticalDataset<T>,
    model: &ImputationModelFit<T>,
    cfg: &MiConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let data = ds.to_pooled();
    let mut z = data.x;
    z.set_column(data.missing_col, &data.y);
    let imputer = Imputer { model, root: psd_sqrt(&model.alpha_cov), engine: Engine::Pooled, design: Some(z) };
    run_imputations(Method::MiPooled, ds, &imputer, cfg, net, seeds)
}
