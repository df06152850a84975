//! Dense singular value decomposition: Householder QR followed by one-sided
//! (Hestenes) Jacobi on the triangular factor.
//!
//! One-sided Jacobi keeps high relative accuracy for the small singular
//! values, which matter for counting-function and truncation studies.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compact Householder QR of a tall matrix (`rows >= cols`).
#[derive(Clone, Debug)]
pub struct HouseholderQr {
    /// Reflector `k` occupies rows `k..` of column `k`.
    reflectors: DMatrix<f64>,
    betas: Vec<f64>,
    r: DMatrix<f64>,
}

impl HouseholderQr {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        assert!(m >= n, "HouseholderQr needs rows >= cols");
        let mut r = DMatrix::zeros(n, n);
        let mut betas = vec![0.0; n];
        for k in 0..n {
            let (left, right) = a.as_mut_slice().split_at_mut((k + 1) * m);
            let col = &mut left[k * m + k..(k + 1) * m];
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                // nothing to annihilate; the zero reflector is skipped when applied
                for j in k + 1..n {
                    r[(k, j)] = right[(j - k - 1) * m + k];
                }
                continue;
            }
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            col[0] -= alpha;
            let vtv: f64 = col.iter().map(|x| x * x).sum();
            let beta = 2.0 / vtv;
            betas[k] = beta;
            r[(k, k)] = alpha;
            for j in k + 1..n {
                let target = &mut right[(j - k - 1) * m + k..(j - k) * m];
                let s = beta * dot(col, target);
                axpy(-s, col, target);
                r[(k, j)] = target[0];
            }
        }
        Self { reflectors: a, betas, r }
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn rows(&self) -> usize {
        self.reflectors.nrows()
    }

    fn reflector(&self, k: usize) -> &[f64] {
        let m = self.rows();
        &self.reflectors.as_slice()[k * m + k..(k + 1) * m]
    }

    /// `x <- Q^T x`.
    pub fn apply_qt(&self, x: &mut [f64]) {
        for k in 0..self.betas.len() {
            self.reflect(k, x);
        }
    }

    /// `x <- Q x`.
    pub fn apply_q(&self, x: &mut [f64]) {
        for k in (0..self.betas.len()).rev() {
            self.reflect(k, x);
        }
    }

    fn reflect(&self, k: usize, x: &mut [f64]) {
        let beta = self.betas[k];
        if beta == 0.0 {
            return;
        }
        let v = self.reflector(k);
        let s = beta * dot(v, &x[k..]);
        axpy(-s, v, &mut x[k..]);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on a square matrix: returns `(U, s, V)` with `W = U diag(s) V^T`,
/// sorted nonincreasingly.
fn one_sided_jacobi(mut w: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = w.ncols();
    let m = w.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (wp, wq) = columns_pair(w.as_mut_slice(), m, p, q);
                let alpha = dot(wp, wp);
                let beta = dot(wq, wq);
                let gamma = dot(wp, wq);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = columns_pair(v.as_mut_slice(), n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut s: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut u = DMatrix::zeros(m, n);
    let mut vs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        if s[src] > 0.0 {
            u.set_column(dst, &(w.column(src) / s[src]));
        }
        vs.set_column(dst, &v.column(src));
    }
    s = order.iter().map(|&i| s[i]).collect();
    (u, s, vs)
}

fn columns_pair(data: &mut [f64], m: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (a, b) = data.split_at_mut(q * m);
    (&mut a[p * m..(p + 1) * m], &mut b[..m])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// Thin SVD `A = sum_n s_n f_n v_n^T` with the long orthogonal factor kept implicit.
#[derive(Clone, Debug)]
pub struct Svd {
    pub singular_values: Vec<f64>,
    qr: HouseholderQr,
    small_u: DMatrix<f64>,
    small_v: DMatrix<f64>,
    transposed: bool,
    rows: usize,
    cols: usize,
}

fn check_finite(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Input("matrix is empty".into()));
    }
    Ok(())
}

impl Svd {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_finite(a)?;
        let (rows, cols) = a.shape();
        let transposed = rows < cols;
        let tall = if transposed { a.transpose() } else { a.clone() };
        let qr = HouseholderQr::new(tall);
        let (small_u, singular_values, small_v) = one_sided_jacobi(qr.r().clone());
        Ok(Self { singular_values, qr, small_u, small_v, transposed, rows, cols })
    }

    pub fn rank_bound(&self) -> usize {
        self.singular_values.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Coefficients `<f, f_n>` of a data vector against the left singular vectors.
    pub fn left_coefficients(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.rows);
        let r = self.rank_bound();
        if self.transposed {
            (0..r).map(|n| dot(self.small_v.column(n).as_slice(), f)).collect()
        } else {
            let mut g = f.to_vec();
            self.qr.apply_qt(&mut g);
            (0..r).map(|n| dot(self.small_u.column(n).as_slice(), &g[..r])).collect()
        }
    }

    /// Squared norm of the part of `f` orthogonal to every left singular vector.
    pub fn left_complement_norm_sqr(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.rows);
        if self.transposed {
            0.0
        } else {
            let mut g = f.to_vec();
            self.qr.apply_qt(&mut g);
            g[self.rank_bound()..].iter().map(|x| x * x).sum()
        }
    }

    /// `sum_n c_n v_n` over the right singular vectors.
    pub fn right_synthesis(&self, coeffs: &[f64]) -> Vec<f64> {
        let r = self.rank_bound();
        assert_eq!(coeffs.len(), r);
        let combine = |basis: &DMatrix<f64>, len: usize| {
            let mut out = vec![0.0; len];
            for (n, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    axpy(c, basis.column(n).as_slice(), &mut out[..basis.nrows()]);
                }
            }
            out
        };
        if self.transposed {
            let mut out = combine(&self.small_u, self.cols);
            self.qr.apply_q(&mut out);
            out
        } else {
            combine(&self.small_v, self.cols)
        }
    }

    /// Explicit left singular vector `f_n`.
    pub fn left_vector(&self, n: usize) -> Vec<f64> {
        if self.transposed {
            self.small_v.column(n).as_slice().to_vec()
        } else {
            let mut out = vec![0.0; self.rows];
            out[..self.rank_bound()].copy_from_slice(self.small_u.column(n).as_slice());
            self.qr.apply_q(&mut out);
            out
        }
    }

    /// Explicit right singular vector `v_n`.
    pub fn right_vector(&self, n: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.rank_bound()];
        e[n] = 1.0;
        self.right_synthesis(&e)
    }
}

/// All `min(M, N)` singular values, sorted nonincreasingly.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(Svd::new(a)?.singular_values)
}

/// Largest singular value by power iteration on `A^T A`.
pub fn largest_singular_value(a: &DMatrix<f64>, rel_tol: f64, max_iter: usize) -> Result<f64> {
    check_finite(a)?;
    let n = a.ncols();
    let mut x = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    x /= x.norm();
    let mut last = 0.0;
    for _ in 0..max_iter {
        let y = a.tr_mul(&(a * &x));
        let lambda = y.norm();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        x = y / lambda;
        if (lambda - last).abs() <= rel_tol * lambda {
            return Ok(lambda.sqrt());
        }
        last = lambda;
    }
    Ok(last.sqrt())
}
