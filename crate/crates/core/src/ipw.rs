//! Inverse-probability-weighted estimators and the GS/CC baselines.
//!
//! The distributed path fits the response model in its dual form
//! ([`crate::dual_logistic`]) and then solves the weighted least-squares
//! problem with [`crate::powell`], `V = diag(r_i ŵ_i)`.

use crate::bootstrap::run_bootstrap;
use crate::dual_logistic::{self, DualConfig, DualSolver};
use crate::error::{Error, Result};
use crate::model::{Diagnostics, FitResult, Method, VerticalDataset};
use crate::netsim::{Design, Federation, Network, Phase, Response};
use crate::pooled;
use crate::powell::{powell_solve, DirectionSet, PowellOptions, PowellResult, WlsProblem};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpwConfig {
    /// Ridge penalty of the response model.
    pub lambda: f64,
    /// Bootstrap replicates; 0 skips standard errors.
    pub bootstrap_b: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub solver: DualSolver,
    pub powell: PowellOptions,
    /// Caps estimated weights when set. Off by default.
    pub max_weight: Option<f64>,
}

impl Default for IpwConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            bootstrap_b: 200,
            tol: 1e-8,
            max_iter: 100,
            solver: DualSolver::Auto,
            powell: PowellOptions::default(),
            max_weight: None,
        }
    }
}

impl IpwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Invalid(format!("λ must be positive, got {}", self.lambda)));
        }
        if self.bootstrap_b == 1 {
            return Err(Error::Invalid("bootstrap needs B ≥ 2".into()));
        }
        Ok(())
    }

    pub fn dual(&self) -> DualConfig {
        DualConfig { lambda: self.lambda, tol: self.tol, max_iter: self.max_iter, solver: self.solver }
    }
}

fn powell_diagnostics<T>(res: &PowellResult<T>, diag: &mut Diagnostics) {
    diag.iterations += res.outer_iterations;
    diag.extra_rounds += res.extra_rounds;
    diag.rank_deficient |= res.rank_deficient;
    if res.extra_rounds > 0 {
        diag.notes.push(format!("solver ran {} verification round(s) beyond the nominal count", res.extra_rounds));
    }
}

/// Stage 2 alone: weighted least squares of Y on the analysis design with
/// caller-supplied weights.
pub fn fit_weighted<T: Scalar>(
    ds: &VerticalDataset<T>,
    weights: Vec<T>,
    net: &mut Network,
    opts: &PowellOptions,
) -> Result<(Vec<T>, Diagnostics)> {
    let mut fed = Federation::new(ds, net)?;
    fed.set_phase(Phase::Stage2Powell);
    let problem = WlsProblem::new(Design::Analysis, Response::Outcome, weights);
    let p = fed.param_count();
    if problem.support() < p {
        return Err(Error::UnderDetermined { available: problem.support(), params: p });
    }
    let basis = DirectionSet::standard(fed.widths());
    let res = powell_solve(&mut fed, &problem, &vec![T::zero(); p], &basis, opts)?;
    let mut diag = Diagnostics { converged: true, ..Diagnostics::default() };
    powell_diagnostics(&res, &mut diag);
    Ok((res.theta, diag))
}

fn complete_case_weights<T: Scalar>(ds: &VerticalDataset<T>) -> Vec<T> {
    ds.response().iter().map(|&r| if r == 1 { T::one() } else { T::zero() }).collect()
}

/// Point estimate of the two-stage distributed IPW fit.
pub fn ppipw_estimate<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
) -> Result<(Vec<T>, Diagnostics)> {
    let stage1 = {
        let mut fed = Federation::new(ds, net)?;
        dual_logistic::fit(&mut fed, &cfg.dual())?
    };
    let cap = cfg.max_weight.map(T::lit);
    let weights: Vec<T> = ds
        .response()
        .iter()
        .zip(&stage1.weights)
        .map(|(&r, &w)| if r == 1 { cap.map_or(w, |c| w.min(c)) } else { T::zero() })
        .collect();
    let (theta, mut diag) = fit_weighted(ds, weights, net, &cfg.powell)?;
    diag.iterations += stage1.iterations;
    diag.converged = stage1.converged;
    if !stage1.converged {
        diag.notes.push("response model reached the iteration cap".into());
    }
    Ok((theta, diag))
}

pub fn cc_estimate<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
) -> Result<(Vec<T>, Diagnostics)> {
    fit_weighted(ds, complete_case_weights(ds), net, &cfg.powell)
}

pub fn gs_estimate<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
) -> Result<(Vec<T>, Diagnostics)> {
    let truth = ds
        .oracle()
        .ok_or_else(|| Error::OracleUnavailable("the gold standard needs the pre-deletion column".into()))?;
    let full = ds.with_completed_column(truth)?;
    fit_weighted(&full, vec![T::one(); ds.n()], net, &cfg.powell)
}

/// Centralized IPW: unpenalized logistic MLE on pooled `(1, Y, X2, …)`,
/// then closed-form weighted least squares.
pub fn ipw_pooled_estimate<T: Scalar>(ds: &VerticalDataset<T>) -> Result<(Vec<T>, Diagnostics)> {
    let data = ds.to_pooled();
    let mut z = data.x.clone();
    z.set_column(data.missing_col, &data.y);
    let mle = pooled::logistic_mle(&z, &data.r, 1e-10, 100)?;
    let inv = mle.inverse_probabilities(&z)?;
    let w: Vec<T> = data.r.iter().zip(&inv).map(|(&r, &w)| if r == 1 { w } else { T::zero() }).collect();
    let theta = pooled::wls(&data.x, &data.y, &w)?;
    let mut diag = Diagnostics { iterations: mle.iterations, converged: mle.converged, ..Diagnostics::default() };
    if !mle.converged {
        diag.notes.push("logistic MLE did not converge (possible separation)".into());
    }
    Ok((theta, diag))
}

type Estimate<T> = Result<(Vec<T>, Diagnostics)>;

fn finish<T, F>(
    method: Method,
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
    seeds: &SeedTree,
    distributed: bool,
    estimator: F,
) -> Result<FitResult<T>>
where
    T: Scalar,
    F: Fn(&VerticalDataset<T>, &mut Network) -> Estimate<T> + Sync,
{
    cfg.validate()?;
    let (m0, b0) = (net.ledger().message_count(), net.ledger().byte_count());
    let (theta, diag) = estimator(ds, net)?;
    let mut fit = FitResult::new(method, ds.layout(), theta);
    if cfg.bootstrap_b >= 2 {
        let out = run_bootstrap(ds, cfg.bootstrap_b, &seeds.tagged("bootstrap"), net, distributed, |d, n| {
            estimator(d, n).map(|(t, _)| t)
        })?;
        fit = fit.with_normal_ci(out.standard_errors());
        fit.diagnostics = Diagnostics {
            bootstrap_replicates: out.replicates.len(),
            bootstrap_failed: out.failed,
            se_unreliable: out.unreliable(),
            ..diag
        };
        if out.unreliable() {
            fit.diagnostics.notes.push(format!("{} of {} bootstrap replicates failed", out.failed, out.requested));
        }
    } else {
        fit.diagnostics = diag;
    }
    fit.diagnostics.messages = net.ledger().message_count() - m0;
    fit.diagnostics.bytes = net.ledger().byte_count() - b0;
    Ok(fit)
}

/// Distributed two-stage IPW with bootstrap standard errors.
pub fn fit_ppipw<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    if ds.complete_count() == 0 || ds.missing_count() == 0 {
        return Err(Error::NoResponseVariation);
    }
    finish(Method::PpipwV, ds, cfg, net, seeds, true, |d, n| ppipw_estimate(d, cfg, n))
}

/// Complete-case distributed least squares.
pub fn fit_cc<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    finish(Method::Cc, ds, cfg, net, seeds, true, |d, n| cc_estimate(d, cfg, n))
}

/// Distributed least squares with the pre-deletion column restored.
pub fn fit_gs<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    finish(Method::Gs, ds, cfg, net, seeds, true, |d, n| gs_estimate(d, cfg, n))
}

/// Centralized IPW baseline. Reads pooled data; sends nothing.
pub fn fit_ipw_pooled<T: Scalar>(
    ds: &VerticalDataset<T>,
    cfg: &IpwConfig,
    net: &mut Network,
    seeds: &SeedTree,
) -> Result<FitResult<T>> {
    finish(Method::IpwPooled, ds, cfg, net, seeds, false, |d, _| ipw_pooled_estimate(d))
}
