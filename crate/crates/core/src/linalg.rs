//! Small dense linear algebra over [`Scalar`].
//!
//! Only what the estimators need: row-major matrices, Cholesky (plain,
//! jittered and diagonally pivoted), and a Jacobi eigensolver for the small
//! symmetric matrices that need PSD projection.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_columns(n: usize, columns: &[Vec<T>]) -> Result<Self> {
        let cols = columns.len();
        let mut m = Self::zeros(n, cols);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Shape(format!("column {j} has {} entries, expected {n}", c.len())));
            }
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[T]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!("{}x{} times vector of {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::Shape(format!("({}x{})ᵀ times vector of {}", self.rows, self.cols, v.len())));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o = *o + x * vi;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` (column cross products), e.g. `XᵀX` blocks.
    pub fn cross(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!("cross product of {} and {} rows", self.rows, other.rows)));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let b = other.row(i);
            for (p, &ap) in a.iter().enumerate() {
                let dst = out.row_mut(p);
                for (d, &bq) in dst.iter_mut().zip(b) {
                    *d = *d + ap * bq;
                }
            }
        }
        Ok(out)
    }

    /// `self · selfᵀ`: the n×n matrix of pairwise row dot products.
    pub fn outer_gram(&self) -> Self {
        let n = self.rows;
        let columns: Vec<Vec<T>> = (0..self.cols).map(|j| self.column(j)).collect();
        let mut g = Self::zeros(n, n);
        for (i, out) in g.data.chunks_exact_mut(n.max(1)).enumerate() {
            for col in &columns {
                let a = col[i];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(col) {
                    *o = *o + a * b;
                }
            }
        }
        g
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("adding {:?} to {:?}", other.shape(), self.shape())));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, c: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * c).collect() }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            let src = self.row(i);
            for (jj, &j) in cols.iter().enumerate() {
                out.data[i * cols.len() + jj] = src[j];
            }
        }
        out
    }

    pub fn hstack(blocks: &[&Self]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Shape("hstack of blocks with different row counts".into()));
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn symmetrize(&self) -> Self {
        let half = T::lit(0.5);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                s[(i, j)] = (self[(i, j)] + self[(j, i)]) * half;
            }
        }
        s
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!("cholesky of {}x{}", n, a.cols())));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                let (ri, rj) = (i * n, j * n);
                for k in 0..j {
                    s = s - l.data[ri + k] * l.data[rj + k];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    /// Retries with `jitter · mean(diag) · I` added, escalating through `jitters`.
    pub fn with_jitter(a: &Matrix<T>, jitters: &[f64]) -> Result<(Self, T)> {
        if let Ok(c) = Self::new(a) {
            return Ok((c, T::zero()));
        }
        let n = a.rows();
        let scale = a.diagonal().iter().fold(T::zero(), |s, &d| s + d.abs()) / T::from_usize_lossy(n.max(1));
        let scale = if scale > T::zero() { scale } else { T::one() };
        for &j in jitters {
            let eps = T::lit(j) * scale;
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] = b[(i, i)] + eps;
            }
            if let Ok(c) = Self::new(&b) {
                return Ok((c, eps));
            }
        }
        Err(Error::NotPositiveDefinite)
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            inv.set_column(j, &col);
        }
        inv.symmetrize()
    }
}

/// Diagonally pivoted partial Cholesky of a PSD matrix: `A ≈ F Fᵀ` with
/// `F` of shape n×rank. Stops once the largest remaining diagonal falls
/// below `rel_tol · max(diag A)` or `max_rank` columns were produced.
///
/// Returns `None` when the factor would exceed `max_rank` columns.
pub fn pivoted_cholesky<T: Scalar>(a: &Matrix<T>, rel_tol: T, max_rank: usize) -> Option<Matrix<T>> {
    let n = a.rows();
    let mut resid = a.diagonal();
    let top = resid.iter().fold(T::zero(), |m, &d| m.max(d));
    if top <= T::zero() {
        return Some(Matrix::zeros(n, 0));
    }
    let stop = rel_tol * top;
    // columns stored column-major for cheap appends
    let mut cols: Vec<Vec<T>> = Vec::new();
    loop {
        let (piv, &dmax) =
            resid
                .iter()
                .enumerate()
                .fold((0, &T::neg_infinity()), |best, cur| if *cur.1 > *best.1 { cur } else { best });
        if dmax <= stop {
            break;
        }
        if cols.len() == max_rank {
            return None;
        }
        let root = dmax.sqrt();
        // symmetric: row piv equals column piv
        let mut col = a.row(piv).to_vec();
        for prev in &cols {
            let f = prev[piv];
            if f != T::zero() {
                for (c, &p) in col.iter_mut().zip(prev) {
                    *c = *c - f * p;
                }
            }
        }
        for c in col.iter_mut() {
            *c = *c / root;
        }
        for (r, &c) in resid.iter_mut().zip(&col) {
            *r = *r - c * c;
        }
        resid[piv] = T::zero();
        cols.push(col);
    }
    Some(Matrix::from_columns(n, &cols).expect("columns of length n"))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are eigenvectors.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    let mut m = a.symmetrize();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off + m[(i, j)] * m[(i, j)];
                }
            }
        }
        let scale = m.diagonal().iter().fold(T::zero(), |s, &d| s + d * d);
        if off <= eps * eps * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diagonal(), v)
}

/// Symmetrizes and clips negative eigenvalues to zero.
pub fn psd_project<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let lam = lam.max(T::zero());
        if lam == T::zero() {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + lam * vecs[(i, k)] * vecs[(j, k)];
            }
        }
    }
    out.symmetrize()
}

/// A square-root factor `F` with `A = F Fᵀ` for a PSD matrix: Cholesky when
/// it succeeds, otherwise the eigen route (which also handles singular and
/// all-zero matrices exactly).
pub fn psd_sqrt<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    if let Ok(c) = Cholesky::new(a) {
        return c.l;
    }
    let (vals, vecs) = symmetric_eigen(a);
    let n = a.rows();
    let mut f = Matrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let r = lam.max(T::zero()).sqrt();
        for i in 0..n {
            f[(i, k)] = vecs[(i, k)] * r;
        }
    }
    f
}

/// Solves the symmetric positive definite system `A x = b`.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    Ok(Cholesky::new(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Matrix<f64> {
        Matrix::from_rows(&[vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]]).unwrap()
    }

    #[test]
    fn cholesky_solves() {
        let a = spd3();
        let x = solve_spd(&a, &[1.0, 2.0, 3.0]).unwrap();
        let back = a.mul_vec(&x).unwrap();
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-12);
        }
        let inv = Cholesky::new(&a).unwrap().inverse();
        let id = a.matmul(&inv).unwrap();
        assert!(id.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn jitter_rescues_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (_, eps) = Cholesky::with_jitter(&a, &[1e-12, 1e-9, 1e-6]).unwrap();
        assert!(eps > 0.0);
    }

    #[test]
    fn pivoted_cholesky_recovers_low_rank() {
        let z = Matrix::from_rows(&[vec![1.0, 0.3], vec![1.0, -1.2], vec![1.0, 0.8], vec![1.0, 2.0], vec![1.0, 0.0]])
            .unwrap();
        let g = z.outer_gram();
        let f = pivoted_cholesky(&g, 1e-14, 5).unwrap();
        assert_eq!(f.cols(), 2);
        let back = f.matmul(&f.transpose()).unwrap();
        assert!(back.max_abs_diff(&g) < 1e-12);
        assert!(pivoted_cholesky(&g, 1e-14, 1).is_none());
    }

    #[test]
    fn eigen_reconstructs_and_projects() {
        let a = Matrix::from_rows(&[vec![2.0, -3.0], vec![-3.0, 1.0]]).unwrap();
        let (vals, _) = symmetric_eigen(&a);
        let mut v = vals.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [(3.0 - 37f64.sqrt()) / 2.0, (3.0 + 37f64.sqrt()) / 2.0];
        assert!((v[0] - expect[0]).abs() < 1e-12 && (v[1] - expect[1]).abs() < 1e-12);
        let p = psd_project(&a);
        let (pv, _) = symmetric_eigen(&p);
        assert!(pv.iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn psd_sqrt_of_zero_is_zero() {
        let z = Matrix::<f64>::zeros(3, 3);
        assert_eq!(psd_sqrt(&z), Matrix::zeros(3, 3));
    }
}
