//! Least-squares fits, orthogonal projections onto a design's column space
//! and its complement, and the F statistic.
//!
//! Everything is built on an unpivoted Householder QR factorisation, which is
//! deterministic for a fixed input. The orthogonal complement basis `U` is
//! taken as the trailing `n - d` columns of the full orthogonal factor, so
//! that `U^T v` equals the tail of `Q^T v` and never has to be formed
//! explicitly on hot paths.

use std::hash::{Hash, Hasher};

use crate::dist;
use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a design is declared singular.
pub const RANK_TOL: f64 = 1e-10;

/// Dense column-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Column-major construction; `data.len()` must equal `rows * cols`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "column-major data length");
        Mat { rows, cols, data }
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(rows * cols.len());
        for c in cols {
            assert_eq!(c.len(), rows, "ragged columns");
            data.extend_from_slice(c);
        }
        Mat {
            rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    /// Contiguous view of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols {
            let vj = v[j];
            if vj == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.col(j)) {
                *o += vj * x;
            }
        }
        out
    }

    /// `self^T * v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|j| dot(self.col(j), v)).collect()
    }

    /// `self^T * self`, a `cols x cols` Gram matrix.
    pub fn gram(&self) -> Mat {
        let d = self.cols;
        let mut g = Mat::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let v = dot(self.col(i), self.col(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    /// New matrix made of the given columns, in the given order.
    pub fn gather_cols(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Mat {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// Rows `0..k` as a new matrix.
    pub fn head_rows(&self, k: usize) -> Mat {
        assert!(k <= self.rows);
        let mut data = Vec::with_capacity(k * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.col(j)[..k]);
        }
        Mat {
            rows: k,
            cols: self.cols,
            data,
        }
    }

    /// Rows `k..` as a new matrix.
    pub fn tail_rows(&self, k: usize) -> Mat {
        assert!(k <= self.rows);
        let mut data = Vec::with_capacity((self.rows - k) * self.cols);
        for j in 0..self.cols {
            data.extend_from_slice(&self.col(j)[k..]);
        }
        Mat {
            rows: self.rows - k,
            cols: self.cols,
            data,
        }
    }

    fn content_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.rows.hash(&mut h);
        self.cols.hash(&mut h);
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Compact Householder QR of an `n x d` matrix, `n >= d`.
///
/// Reflector `j` is stored in the strict lower part of column `j` of
/// `factors` together with an implicit leading 1; `tau[j]` is its scaling.
/// `R` occupies the upper triangle.
#[derive(Debug, Clone)]
pub struct QrFactor {
    factors: Mat,
    tau: Vec<f64>,
}

impl QrFactor {
    pub fn new(a: &Mat) -> QrFactor {
        let (n, d) = (a.rows(), a.cols());
        assert!(n >= d, "QR requires rows >= cols");
        let mut f = a.clone();
        let mut tau = vec![0.0; d];
        for j in 0..d {
            // Build the reflector annihilating f[j+1.., j].
            let alpha = f.get(j, j);
            let tail_sq: f64 = (j + 1..n).map(|i| f.get(i, j) * f.get(i, j)).sum();
            let norm = (alpha * alpha + tail_sq).sqrt();
            if norm == 0.0 {
                tau[j] = 0.0;
                continue;
            }
            let beta = if alpha >= 0.0 { -norm } else { norm };
            let v0 = alpha - beta;
            // v = (v0, tail); normalise so the stored leading entry is 1.
            let vtv = v0 * v0 + tail_sq;
            if vtv == 0.0 {
                tau[j] = 0.0;
                f.set(j, j, beta);
                continue;
            }
            tau[j] = 2.0 * v0 * v0 / vtv;
            for i in j + 1..n {
                let v = f.get(i, j) / v0;
                f.set(i, j, v);
            }
            f.set(j, j, beta);
            // Apply H_j to the remaining columns.
            for k in j + 1..d {
                let mut s = f.get(j, k);
                for i in j + 1..n {
                    s += f.get(i, j) * f.get(i, k);
                }
                s *= tau[j];
                let b = f.get(j, k) - s;
                f.set(j, k, b);
                for i in j + 1..n {
                    let b = f.get(i, k) - s * f.get(i, j);
                    f.set(i, k, b);
                }
            }
        }
        QrFactor { factors: f, tau }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.factors.rows()
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.factors.cols()
    }

    pub fn r_diag(&self, j: usize) -> f64 {
        self.factors.get(j, j)
    }

    /// Apply `Q^T` in place: afterwards `v[..d]` holds the coefficient-space
    /// head and `v[d..]` the complement-space tail (`U^T v` for the trailing
    /// orthonormal complement basis `U`).
    pub fn qt_apply(&self, v: &mut [f64]) {
        let (n, d) = (self.nrows(), self.ncols());
        assert_eq!(v.len(), n);
        for j in 0..d {
            if self.tau[j] == 0.0 {
                continue;
            }
            let mut s = v[j];
            let col = self.factors.col(j);
            for i in j + 1..n {
                s += col[i] * v[i];
            }
            s *= self.tau[j];
            v[j] -= s;
            for i in j + 1..n {
                v[i] -= s * col[i];
            }
        }
    }

    /// Apply `Q` in place (inverse of [`qt_apply`](Self::qt_apply)).
    pub fn q_apply(&self, v: &mut [f64]) {
        let (n, d) = (self.nrows(), self.ncols());
        assert_eq!(v.len(), n);
        for j in (0..d).rev() {
            if self.tau[j] == 0.0 {
                continue;
            }
            let mut s = v[j];
            let col = self.factors.col(j);
            for i in j + 1..n {
                s += col[i] * v[i];
            }
            s *= self.tau[j];
            v[j] -= s;
            for i in j + 1..n {
                v[i] -= s * col[i];
            }
        }
    }

    /// Least-squares solution of `min ||y - A theta||`.
    pub fn solve_ls(&self, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.ncols();
        let mut w = y.to_vec();
        self.qt_apply(&mut w);
        let mut theta = vec![0.0; d];
        for j in (0..d).rev() {
            let mut s = w[j];
            for k in j + 1..d {
                s -= self.factors.get(j, k) * theta[k];
            }
            let r = self.factors.get(j, j);
            if r == 0.0 {
                return Err(Error::SingularDesign);
            }
            theta[j] = s / r;
        }
        Ok(theta)
    }

    /// Squared norm of the complement-space tail of `Q^T v`, i.e.
    /// `v^T M v` with `M = I - A (A^T A)^{-1} A^T`.
    pub fn residual_sq_norm(&self, v: &[f64]) -> f64 {
        let mut w = v.to_vec();
        self.qt_apply(&mut w);
        dot(&w[self.ncols()..], &w[self.ncols()..])
    }

    /// Diagonal of `(A^T A)^{-1} = R^{-1} R^{-T}`: entry `j` is
    /// `|| R^{-T} e_j ||^2`, obtained by a forward solve against `R^T`.
    pub fn xtx_inv_diag(&self) -> Result<Vec<f64>> {
        let d = self.ncols();
        let mut out = vec![0.0; d];
        let mut v = vec![0.0; d];
        for j in 0..d {
            for x in v.iter_mut() {
                *x = 0.0;
            }
            let rjj = self.factors.get(j, j);
            if rjj == 0.0 {
                return Err(Error::SingularDesign);
            }
            v[j] = 1.0 / rjj;
            for i in j + 1..d {
                let mut s = 0.0;
                for k in j..i {
                    s += self.factors.get(k, i) * v[k];
                }
                let rii = self.factors.get(i, i);
                if rii == 0.0 {
                    return Err(Error::SingularDesign);
                }
                v[i] = -s / rii;
            }
            out[j] = dot(&v[j..], &v[j..]);
        }
        Ok(out)
    }

    /// The trailing `n - d` columns of the full orthogonal factor.
    pub fn trailing_q(&self) -> Mat {
        let (n, d) = (self.nrows(), self.ncols());
        let mut u = Mat::zeros(n, n - d);
        for (jj, j) in (d..n).enumerate() {
            let col = u.col_mut(jj);
            col[j] = 1.0;
            // col <- Q e_j
            let mut v = col.to_vec();
            self.q_apply(&mut v);
            col.copy_from_slice(&v);
        }
        u
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    assert_eq!(a.rows(), a.cols());
    let d = a.rows();
    let mut m = a.clone();
    for _sweep in 0..60 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += m.get(i, j).abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..d).map(|i| m.get(i, i)).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// A regression design: `n x d` matrix of full column rank with `n > d`.
#[derive(Debug, Clone)]
pub struct Design {
    x: Mat,
    intercept_included: bool,
    qr: QrFactor,
}

impl Design {
    /// Validates `n > d` and full column rank (smallest singular value above
    /// `RANK_TOL` times the largest), then factorises.
    pub fn new(x: Mat, intercept_included: bool) -> Result<Design> {
        let (n, d) = (x.rows(), x.cols());
        if d == 0 {
            return Err(Error::domain("design must have at least one column"));
        }
        if n <= d {
            return Err(Error::insufficient(format!(
                "need n > d_theta, got n = {n}, d_theta = {d}"
            )));
        }
        let ev = sym_eigenvalues(&x.gram());
        let smax = ev.last().copied().unwrap_or(0.0).max(0.0).sqrt();
        let smin = ev.first().copied().unwrap_or(0.0).max(0.0).sqrt();
        if !(smin > RANK_TOL * smax) || smax == 0.0 {
            return Err(Error::SingularDesign);
        }
        let qr = QrFactor::new(&x);
        Ok(Design {
            x,
            intercept_included,
            qr,
        })
    }

    /// Gathers `columns` of `source` (optionally prefixed by a column of
    /// ones) into a design.
    pub fn from_columns(source: &Mat, columns: &[usize], intercept: bool) -> Result<Design> {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(columns.len() + usize::from(intercept));
        if intercept {
            cols.push(vec![1.0; source.rows()]);
        }
        for &j in columns {
            if j >= source.cols() {
                return Err(Error::domain(format!(
                    "column index {j} out of range for p = {}",
                    source.cols()
                )));
            }
            cols.push(source.col(j).to_vec());
        }
        Design::new(Mat::from_columns(&cols), intercept)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    #[inline]
    pub fn d_theta(&self) -> usize {
        self.x.cols()
    }

    #[inline]
    pub fn intercept_included(&self) -> bool {
        self.intercept_included
    }

    #[inline]
    pub fn matrix(&self) -> &Mat {
        &self.x
    }

    #[inline]
    pub fn qr(&self) -> &QrFactor {
        &self.qr
    }
}

/// Result of an ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub theta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Residual sum of squares, computed from `residuals`.
    pub rss: f64,
    pub df_resid: usize,
}

/// Ordinary least squares of `y` on the design.
pub fn ols_fit(design: &Design, y: &[f64]) -> Result<LeastSquaresFit> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch {
            context: "ols_fit response",
            expected: design.n(),
            got: y.len(),
        });
    }
    let theta_hat = design.qr().solve_ls(y)?;
    let fitted = design.matrix().matvec(&theta_hat);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss = dot(&residuals, &residuals);
    Ok(LeastSquaresFit {
        theta_hat,
        residuals,
        rss,
        df_resid: design.n() - design.d_theta(),
    })
}

/// Orthonormal basis of the orthogonal complement of a design's column span.
#[derive(Debug, Clone)]
pub struct ComplementBasis {
    u: Mat,
    source_design_hash: u64,
}

impl ComplementBasis {
    /// `n x (n - d)` basis matrix.
    #[inline]
    pub fn u(&self) -> &Mat {
        &self.u
    }

    /// Dimension of the complement space.
    #[inline]
    pub fn m(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    pub fn source_design_hash(&self) -> u64 {
        self.source_design_hash
    }

    /// `U^T v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.u.t_matvec(v)
    }
}

/// Trailing columns of the full QR orthogonal factor of the design matrix.
/// Deterministic for a fixed input.
pub fn complement_basis(design: &Design) -> Result<ComplementBasis> {
    let u = design.qr().trailing_q();
    Ok(ComplementBasis {
        u,
        source_design_hash: design.matrix().content_hash(),
    })
}

/// F test of a nested submodel against a fuller model.
#[derive(Debug, Clone, Copy)]
pub struct FTest {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    /// Upper-tail probability.
    pub p: f64,
}

/// F statistic for `sub` nested in `full`, with the upper-tail p-value.
///
/// Nesting is checked by exact column identity: every column of `sub` must
/// appear among the columns of `full`.
pub fn f_statistic(sub: &Design, full: &Design, y: &[f64]) -> Result<FTest> {
    if sub.n() != full.n() {
        return Err(Error::DimensionMismatch {
            context: "f_statistic designs",
            expected: full.n(),
            got: sub.n(),
        });
    }
    for j in 0..sub.d_theta() {
        let sc = sub.matrix().col(j);
        let found = (0..full.d_theta()).any(|k| full.matrix().col(k) == sc);
        if !found {
            return Err(Error::NotNested);
        }
    }
    let df1 = full.d_theta() as isize - sub.d_theta() as isize;
    let df2 = full.n() as isize - full.d_theta() as isize;
    if df1 == 0 || df2 <= 0 {
        return Err(Error::DegenerateDf { df1, df2 });
    }
    let rss_sub = ols_fit(sub, y)?.rss;
    let rss_full = ols_fit(full, y)?.rss;
    let num = ((rss_sub - rss_full) / df1 as f64).max(0.0);
    let den = rss_full / df2 as f64;
    let f = if num == 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    };
    let p = if f.is_finite() {
        dist::f_sf(f, df1 as f64, df2 as f64)?
    } else {
        0.0
    };
    Ok(FTest {
        f,
        df1: df1 as usize,
        df2: df2 as usize,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn_mat(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Mat::from_col_major(n, d, data)
    }

    #[test]
    fn saturated_fit_is_exact() {
        // Identity design cannot satisfy n > d, so use a 4x3 slice of I.
        let mut x = Mat::zeros(4, 3);
        for i in 0..3 {
            x.set(i, i, 1.0);
        }
        let d = Design::new(x, false).unwrap();
        let fit = ols_fit(&d, &[1.0, 2.0, 3.0, 0.0]).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.theta_hat[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.theta_hat[2], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.rss, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn ones_column_mean_fit() {
        let x = Mat::from_columns(&[vec![1.0, 1.0, 1.0]]);
        let d = Design::new(x, false).unwrap();
        let fit = ols_fit(&d, &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(fit.theta_hat[0], 2.0, epsilon = 1e-12);
        // Sum (y_i - ybar)^2 = 1 + 0 + 1.
        assert_abs_diff_eq!(fit.rss, 2.0, epsilon = 1e-12);
        assert_eq!(fit.df_resid, 2);
        // X^T residuals = 0.
        let xr: f64 = fit.residuals.iter().sum();
        assert_abs_diff_eq!(xr, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let c = vec![1.0, 2.0, 3.0, 4.0];
        let x = Mat::from_columns(&[c.clone(), c]);
        match Design::new(x, false) {
            Err(Error::SingularDesign) => {}
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn complement_norm_matches_projection() {
        let x = Mat::from_columns(&[vec![1.0, 1.0, 1.0]]);
        let d = Design::new(x, false).unwrap();
        let basis = complement_basis(&d).unwrap();
        let y = [1.0, 2.0, 3.0];
        let w = basis.project(&y);
        // ||U^T y||^2 = y^T M y = 2 for the centring projection.
        assert_abs_diff_eq!(dot(&w, &w), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn complement_basis_is_orthonormal_and_annihilates_design() {
        let x = randn_mat(5, 2, 7);
        let d = Design::new(x, false).unwrap();
        let basis = complement_basis(&d).unwrap();
        let u = basis.u();
        assert_eq!(u.rows(), 5);
        assert_eq!(u.cols(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot(u.col(i), u.col(j)), expect, epsilon = 1e-10);
            }
        }
        for j in 0..d.d_theta() {
            for i in 0..u.cols() {
                assert!(dot(u.col(i), d.matrix().col(j)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uut_equals_annihilator() {
        let x = randn_mat(8, 3, 11);
        let d = Design::new(x.clone(), false).unwrap();
        let u = complement_basis(&d).unwrap();
        // M = I - X (X^T X)^{-1} X^T, via solves against the QR factor.
        for a in 0..8 {
            let mut e = vec![0.0; 8];
            e[a] = 1.0;
            let theta = d.qr().solve_ls(&e).unwrap();
            let fitted = x.matvec(&theta);
            for b in 0..8 {
                let m_ab = (if a == b { 1.0 } else { 0.0 }) - fitted[b];
                let uut: f64 = (0..u.m()).map(|k| u.u().get(a, k) * u.u().get(b, k)).sum();
                assert_abs_diff_eq!(uut, m_ab, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pythagoras_residual_identity() {
        let x = randn_mat(20, 4, 3);
        let d = Design::new(x, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fit = ols_fit(&d, &y).unwrap();
        let basis = complement_basis(&d).unwrap();
        let w = basis.project(&y);
        assert_abs_diff_eq!(dot(&w, &w), fit.rss, epsilon = 1e-8);
        assert_abs_diff_eq!(d.qr().residual_sq_norm(&y), fit.rss, epsilon = 1e-8);
    }

    #[test]
    fn basis_invariance_of_angles() {
        // Rotate U by a random orthogonal matrix: angles must not change.
        let x = randn_mat(12, 3, 5);
        let d = Design::new(x, false).unwrap();
        let u = complement_basis(&d).unwrap();
        let m = u.m();
        let rot_src = randn_mat(m, m, 17);
        let rot = QrFactor::new(&rot_src);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let a: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..12).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cos_of = |ua: &[f64], ub: &[f64]| dot(ua, ub) / (norm2(ua) * norm2(ub));
        let (ua, ub) = (u.project(&a), u.project(&b));
        let mut ua2 = ua.clone();
        let mut ub2 = ub.clone();
        // U' = U O^T, so U'^T v = O U^T v.
        rot.q_apply(&mut ua2);
        rot.q_apply(&mut ub2);
        assert_abs_diff_eq!(cos_of(&ua, &ub), cos_of(&ua2, &ub2), epsilon = 1e-8);
    }

    #[test]
    fn f_statistic_degenerate_and_zero_cases() {
        let x = randn_mat(10, 2, 21);
        let d = Design::new(x.clone(), false).unwrap();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        match f_statistic(&d, &d, &y) {
            Err(Error::DegenerateDf { df1: 0, .. }) => {}
            other => panic!("expected DegenerateDf, got {other:?}"),
        }

        // Extra column orthogonal to the submodel residual: F = 0, p = 1.
        let sub = Design::new(x.gather_cols(&[0]), false).unwrap();
        let fit = ols_fit(&sub, &y).unwrap();
        // Build a full design whose extra column is orthogonal to y's residual.
        let mut extra = fit.residuals.clone();
        // Orthogonalise a random vector against the residual so rss is unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z: Vec<f64> = (0..10).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c = dot(&z, &extra) / dot(&extra, &extra);
        for (zi, ei) in z.iter_mut().zip(&extra) {
            *zi -= c * ei;
        }
        extra = z;
        let full = Design::new(
            Mat::from_columns(&[x.col(0).to_vec(), extra]),
            false,
        )
        .unwrap();
        let ft = f_statistic(&sub, &full, &y).unwrap();
        // The added column is orthogonal to the submodel residual, so the
        // fit cannot improve beyond rounding noise.
        assert!(ft.f < 1e-12, "F = {}", ft.f);
        assert!(ft.p > 1.0 - 1e-6);
    }

    #[test]
    fn f_statistic_not_nested() {
        let x = randn_mat(10, 3, 31);
        let full = Design::new(x.gather_cols(&[0, 1]), false).unwrap();
        let sub = Design::new(x.gather_cols(&[2]), false).unwrap();
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        match f_statistic(&sub, &full, &y) {
            Err(Error::NotNested) => {}
            other => panic!("expected NotNested, got {other:?}"),
        }
    }

    #[test]
    fn projection_idempotence() {
        let x = randn_mat(9, 2, 41);
        let d = Design::new(x, false).unwrap();
        let u = complement_basis(&d).unwrap();
        // M v via U U^T v, twice.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let v: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mv = u.u().matvec(&u.project(&v));
        let mmv = u.u().matvec(&u.project(&mv));
        for (a, b) in mv.iter().zip(&mmv) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn xtx_inv_diag_matches_hand_inverse() {
        // 2-column case solved by the closed-form 2x2 inverse.
        let x = randn_mat(15, 2, 61);
        let g = x.gram();
        let (a, b, c) = (g.get(0, 0), g.get(0, 1), g.get(1, 1));
        let det = a * c - b * b;
        let qr = QrFactor::new(&x);
        let diag = qr.xtx_inv_diag().unwrap();
        assert_abs_diff_eq!(diag[0], c / det, epsilon = 1e-10);
        assert_abs_diff_eq!(diag[1], a / det, epsilon = 1e-10);
    }

    #[test]
    fn design_requires_more_rows_than_cols() {
        let x = randn_mat(3, 3, 51);
        assert!(matches!(
            Design::new(x, false),
            Err(Error::InsufficientData(_))
        ));
    }
}
