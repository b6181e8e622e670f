//! Centralized estimators on pooled data, used by the baseline methods.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

/// `(XᵀVX)⁻¹XᵀVy` with `V = diag(w)`.
pub fn wls<T: Scalar>(x: &Matrix<T>, y: &[T], w: &[T]) -> Result<Vec<T>> {
    let (n, p) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(Error::Shape(format!("X is {n}×{p}, y has {}, w has {}", y.len(), w.len())));
    }
    if w.iter().filter(|&&v| v > T::zero()).count() < p {
        return Err(Error::UnderDetermined { available: w.iter().filter(|&&v| v > T::zero()).count(), params: p });
    }
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![T::zero(); p];
    for i in 0..n {
        if w[i] == T::zero() {
            continue;
        }
        let row = x.row(i);
        for a in 0..p {
            let wa = w[i] * row[a];
            xty[a] = xty[a] + wa * y[i];
            for b in a..p {
                xtx[(a, b)] = xtx[(a, b)] + wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let chol = Cholesky::new(&xtx).map_err(|_| Error::DegenerateModel("weighted design is rank deficient".into()))?;
    Ok(chol.solve(&xty))
}

pub fn ols<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<Vec<T>> {
    wls(x, y, &vec![T::one(); y.len()])
}

/// `(XᵀX)⁻¹` for an unweighted design.
pub fn inverse_gram<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    let g = x.cross(x)?;
    Ok(Cholesky::new(&g).map_err(|_| Error::DegenerateModel("design is rank deficient".into()))?.inverse())
}

/// Residual sum of squares over rows with positive weight.
pub fn weighted_residual_ss<T: Scalar>(x: &Matrix<T>, y: &[T], w: &[T], beta: &[T]) -> Result<T> {
    let fit = x.mul_vec(beta)?;
    Ok((0..y.len()).filter(|&i| w[i] > T::zero()).fold(T::zero(), |a, i| {
        let e = y[i] - fit[i];
        a + w[i] * e * e
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticMle<T> {
    pub beta: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> LogisticMle<T> {
    /// `1/p̂_i` for every row.
    pub fn inverse_probabilities(&self, z: &Matrix<T>) -> Result<Vec<T>> {
        Ok(z.mul_vec(&self.beta)?.into_iter().map(|eta| T::one() + (-eta).exp()).collect())
    }
}

fn sigmoid<T: Scalar>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

fn log_likelihood<T: Scalar>(eta: &[T], r: &[u8]) -> T {
    // log p = −log(1+e^{−η}), log(1−p) = −log(1+e^{η})
    eta.iter().zip(r).fold(T::zero(), |a, (&e, &ri)| {
        let s = if ri == 1 { -e } else { e };
        let l = if s > T::zero() { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() };
        a - l
    })
}

/// Unpenalized logistic regression of `r` on `z` by Newton–Raphson with step
/// halving. Separation shows up as `converged = false`.
pub fn logistic_mle<T: Scalar>(z: &Matrix<T>, r: &[u8], tol: f64, max_iter: usize) -> Result<LogisticMle<T>> {
    let (n, p) = z.shape();
    if r.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} rows", r.len())));
    }
    let ones = r.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::NoResponseVariation);
    }
    let tol = T::lit(tol);
    let mut beta = vec![T::zero(); p];
    let mut eta = z.mul_vec(&beta)?;
    let mut ll = log_likelihood(&eta, r);
    for it in 1..=max_iter {
        let mut h = Matrix::zeros(p, p);
        let mut g = vec![T::zero(); p];
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            let wi = pi * (T::one() - pi);
            let resid = T::lit(f64::from(r[i])) - pi;
            let row = z.row(i);
            for a in 0..p {
                g[a] = g[a] + row[a] * resid;
                for b in a..p {
                    h[(a, b)] = h[(a, b)] + wi * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let step = match Cholesky::with_jitter(&h, &[0.0, 1e-12, 1e-10, 1e-8]) {
            Ok((c, _)) => c.solve(&g),
            Err(_) => return Ok(LogisticMle { beta, iterations: it, converged: false }),
        };
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = beta.iter().zip(&step).map(|(&b, &s)| b + t * s).collect();
            let cand_eta = z.mul_vec(&cand)?;
            let cand_ll = log_likelihood(&cand_eta, r);
            if cand_ll >= ll {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        let size = step.iter().fold(T::zero(), |m, &s| m.max((t * s).abs()));
        if !accepted || size < tol {
            let diverging = beta.iter().any(|b| !b.is_finite() || b.abs() > T::lit(30.0));
            return Ok(LogisticMle { beta, iterations: it, converged: !diverging });
        }
    }
    Ok(LogisticMle { beta, iterations: max_iter, converged: false })
}
