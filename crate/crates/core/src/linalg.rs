//! Dense linear algebra at desk scale.
//!
//! [`Mat`] is a row-major real matrix. The decomposition routines follow the
//! conventions used throughout the crate: a *compact* SVD of a `d1 x d2`
//! matrix with `d1 <= d2` returns a square `d1 x d1` left factor and a
//! `d2 x d1` right factor, and `vec` stacks columns.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMat", into = "RawMat")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMat> for Mat {
    type Error = Error;

    fn try_from(raw: RawMat) -> Result<Self> {
        Mat::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl From<Mat> for RawMat {
    fn from(m: Mat) -> Self {
        RawMat {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.5e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    /// Builds a matrix from row-major entries, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dims("Mat::from_vec", "positive shape", format!("{rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dims("Mat::from_vec", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Mat::from_vec"));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dims("Mat::from_rows", "equal row lengths", "ragged rows"));
        }
        Mat::from_vec(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Mat::rect_identity(n, n)
    }

    /// Rectangular identity: ones on the main diagonal, zeros elsewhere.
    pub fn rect_identity(rows: usize, cols: usize) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dims("Mat::from_columns", "equal column lengths", "ragged columns"));
        }
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                data[i * cols + j] = x;
            }
        }
        Mat::from_vec(rows, cols, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major entries.
    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// # Panics
    /// If the inner dimensions disagree.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_t: column counts differ");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let b = &other.data[j * other.cols..(j + 1) * other.cols];
                out.data[i * other.rows + j] = dot(a, b);
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_matmul: row counts differ");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = &self.data[k * self.cols..(k + 1) * self.cols];
            let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec: length mismatch");
        (0..self.rows)
            .map(|i| dot(&self.data[i * self.cols..(i + 1) * self.cols], v))
            .collect()
    }

    /// `self^T v`.
    pub fn t_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "t_matvec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(&self.data[i * self.cols..(i + 1) * self.cols]) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    fn zip_with(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.shape(), other.shape(), "elementwise op: shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute off-diagonal entry.
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j {
                    m = m.max(self[(i, j)].abs());
                }
            }
        }
        m
    }

    /// First `n` columns.
    pub fn leading_columns(&self, n: usize) -> Mat {
        assert!(n >= 1 && n <= self.cols);
        Mat::from_fn(self.rows, n, |i, j| self[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Column-stacking vectorization: `vec(A) = [A_{*1}; ...; A_{*d2}]`.
pub fn vec(a: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows * a.cols);
    for j in 0..a.cols {
        for i in 0..a.rows {
            out.push(a[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`]: refills a `rows x cols` matrix column by column.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::dims("unvec", rows * cols, v.len()));
    }
    let mut m = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = v[j * rows + i];
        }
    }
    Ok(m)
}

/// Main diagonal, length `min(rows, cols)`.
pub fn diag_of(a: &Mat) -> Vec<f64> {
    (0..a.rows.min(a.cols)).map(|i| a[(i, i)]).collect()
}

/// Rectangular diagonal matrix with `v` on its main diagonal.
pub fn rect_diag(v: &[f64], rows: usize, cols: usize) -> Result<Mat> {
    if rows == 0 || cols == 0 {
        return Err(Error::dims("rect_diag", "positive shape", format!("{rows}x{cols}")));
    }
    if v.len() != rows.min(cols) {
        return Err(Error::dims("rect_diag", rows.min(cols), v.len()));
    }
    let mut m = Mat::zeros(rows, cols);
    for (i, &x) in v.iter().enumerate() {
        m[(i, i)] = x;
    }
    Ok(m)
}

/// Frobenius inner product `tr(A^T B)`.
pub fn frobenius_inner(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dims(
            "frobenius_inner",
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    // tr(A^T B) = sum_j (A^T B)_jj = sum_j sum_i A_ij B_ij
    let mut trace = 0.0;
    for j in 0..a.cols {
        let mut s = 0.0;
        for i in 0..a.rows {
            s += a[(i, j)] * b[(i, j)];
        }
        trace += s;
    }
    Ok(trace)
}

/// Khatri–Rao product `Psi ⊠ Phi`: column `i` is `vec(phi_i psi_i^T)`.
pub fn khatri_rao(psi: &Mat, phi: &Mat) -> Result<Mat> {
    let n = phi.cols;
    if psi.cols != n || phi.rows != n {
        return Err(Error::dims(
            "khatri_rao",
            format!("psi d2x{n}, phi {n}x{n}"),
            format!("psi {}x{}, phi {}x{}", psi.rows, psi.cols, phi.rows, phi.cols),
        ));
    }
    let d1 = phi.rows;
    let d2 = psi.rows;
    let mut out = Mat::zeros(d1 * d2, n);
    for col in 0..n {
        // vec of the d1 x d2 outer product: entry (r, c) lands at c * d1 + r
        for c in 0..d2 {
            let p = psi[(c, col)];
            for r in 0..d1 {
                out[(c * d1 + r, col)] = phi[(r, col)] * p;
            }
        }
    }
    Ok(out)
}

/// Compact SVD `A = phi * Diag(sigma) * psi^T` of a `d1 x d2` matrix with
/// `d1 <= d2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactSvd {
    /// `d1 x d1`, orthogonal.
    pub phi: Mat,
    /// Non-negative, non-increasing, length `d1`.
    pub sigma: Vec<f64>,
    /// `d2 x d1`, orthonormal columns.
    pub psi: Mat,
}

impl CompactSvd {
    pub fn reconstruct(&self) -> Mat {
        let mut scaled = self.phi.clone();
        for i in 0..scaled.rows {
            for (j, s) in self.sigma.iter().enumerate() {
                scaled[(i, j)] *= s;
            }
        }
        scaled.matmul_t(&self.psi)
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count()
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;
const JACOBI_TOL: f64 = 1e-15;

/// One-sided Jacobi SVD.
///
/// Rotations are applied to the columns of `A^T`; the accumulated rotation
/// is the left factor and the normalized rotated columns are the right
/// factor. Columns belonging to numerically zero singular values are
/// completed to an orthonormal set deterministically, and each left
/// singular vector is signed so that its largest-magnitude entry (lowest
/// index on ties) is non-negative.
pub fn compact_svd(a: &Mat) -> Result<CompactSvd> {
    let (d1, d2) = a.shape();
    if d1 > d2 {
        return Err(Error::dims("compact_svd", "rows <= cols", format!("{d1}x{d2}")));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("compact_svd"));
    }

    // w[j] is column j of A^T, i.e. row j of A.
    let mut w: Vec<Vec<f64>> = (0..d1).map(|i| a.data[i * d2..(i + 1) * d2].to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..d1)
        .map(|j| (0..d1).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let scale = a.frobenius_norm();
    let tiny = (f64::MIN_POSITIVE / f64::EPSILON).max(scale * scale * f64::EPSILON * f64::EPSILON * 1e-4);

    let mut converged = d1 < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..d1 {
            for q in p + 1..d1 {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha * beta <= tiny * tiny || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..d1).collect();
    // stable: equal singular values keep their original relative order
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let smax = norms[order[0]];
    let floor = smax * 1e-14;
    let mut sigma = Vec::with_capacity(d1);
    let mut phi_cols: Vec<Vec<f64>> = Vec::with_capacity(d1);
    let mut psi_cols: Vec<Vec<f64>> = Vec::with_capacity(d1);
    for &j in &order {
        let s = norms[j];
        sigma.push(s);
        phi_cols.push(v[j].clone());
        if s > floor && s > 0.0 {
            psi_cols.push(w[j].iter().map(|x| x / s).collect());
        } else {
            psi_cols.push(vec![0.0; d2]);
        }
    }
    orthonormalize_with_completion(&mut psi_cols);

    for j in 0..d1 {
        let col = &phi_cols[j];
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            phi_cols[j].iter_mut().for_each(|x| *x = -*x);
            psi_cols[j].iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(CompactSvd {
        phi: Mat::from_columns(&phi_cols)?,
        sigma,
        psi: Mat::from_columns(&psi_cols)?,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Modified Gram–Schmidt in place. Columns that collapse (zero or
/// dependent) are replaced by the standard basis vector with the largest
/// component orthogonal to the columns accepted so far.
fn orthonormalize_with_completion(cols: &mut [Vec<f64>]) {
    let n = cols.first().map_or(0, Vec::len);
    for j in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(j);
        let c = &mut rest[0];
        let before = norm2(c);
        for _ in 0..2 {
            for prev in done.iter() {
                let proj = dot(prev, c);
                for (x, p) in c.iter_mut().zip(prev) {
                    *x -= proj * p;
                }
            }
        }
        let after = norm2(c);
        if before > 0.0 && after > 0.5 * before {
            c.iter_mut().for_each(|x| *x /= after);
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            for _ in 0..2 {
                for prev in done.iter() {
                    let proj = dot(prev, &e);
                    for (x, p) in e.iter_mut().zip(prev) {
                        *x -= proj * p;
                    }
                }
            }
            let r = norm2(&e);
            if best.as_ref().is_none_or(|(b, _)| r > *b + 1e-12) {
                best = Some((r, e));
            }
        }
        let (r, e) = best.expect("basis completion needs n >= number of columns");
        *c = e.into_iter().map(|x| x / r).collect();
    }
}

/// SVD for any shape: transposes when `rows > cols`. Returns
/// `(left, sigma, right)` with `A = left * Diag(sigma) * right^T` and
/// `min(rows, cols)` columns in each factor.
pub fn thin_svd(a: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    if a.rows <= a.cols {
        let s = compact_svd(a)?;
        Ok((s.phi, s.sigma, s.psi))
    } else {
        let s = compact_svd(&a.transpose())?;
        Ok((s.psi, s.sigma, s.phi))
    }
}

pub fn singular_values(a: &Mat) -> Result<Vec<f64>> {
    Ok(thin_svd(a)?.1)
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Mat) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

/// Minimum-norm least-squares solution of `a x ≈ b`, via the SVD with
/// singular values below `1e-12 * sigma_max` treated as zero.
pub fn lstsq_min_norm(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::dims("lstsq_min_norm", a.rows, b.len()));
    }
    let (left, sigma, right) = thin_svd(a)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let ub = left.t_matvec(b);
    let coeffs: Vec<f64> = ub
        .iter()
        .zip(&sigma)
        .map(|(&c, &s)| if s > 1e-12 * smax && s > 0.0 { c / s } else { 0.0 })
        .collect();
    Ok(right.matvec(&coeffs))
}

/// Haar-distributed orthogonal `n x n` matrix: QR of a Gaussian matrix with
/// the signs of `R`'s diagonal absorbed into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Mat {
    let g = Mat::from_fn(n, n, |_, _| rng::normal(rng));
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| g.column(j)).collect();
    for j in 0..n {
        let (done, rest) = cols.split_at_mut(j);
        let c = &mut rest[0];
        for _ in 0..2 {
            for prev in done.iter() {
                let proj = dot(prev, c);
                for (x, p) in c.iter_mut().zip(prev) {
                    *x -= proj * p;
                }
            }
        }
        let r = norm2(c);
        // Gram–Schmidt yields a positive R diagonal already; the Gaussian
        // draw is full rank with probability one.
        c.iter_mut().for_each(|x| *x /= r);
    }
    Mat::from_columns(&cols).expect("finite orthogonal factor")
}
