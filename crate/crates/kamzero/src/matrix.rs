//! Small dense complex matrices: Kronecker products, column straightening,
//! pivoted LU solves, determinants, spectral norms and the exponential.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::series::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Row-major complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> C64>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(KamError::DimensionMismatch(format!("{rows}x{cols} from {} entries", data.len())));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(KamError::DimensionMismatch("ragged rows".into()));
        }
        Ok(DenseMatrix { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        Self::from_rows(&rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect::<Vec<_>>())
    }

    pub fn diag(d: &[C64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[C64] {
        &self.data
    }
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn conj(&self) -> Self {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|c| c.conj()).collect() }
    }

    pub fn scale(&self, a: C64) -> Self {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|c| c * a).collect() }
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.same_shape(o)?;
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.same_shape(o)?;
        Ok(DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect() })
    }

    fn same_shape(&self, o: &Self) -> Result<()> {
        if self.rows != o.rows || self.cols != o.cols {
            return Err(KamError::DimensionMismatch(format!("{}x{} vs {}x{}", self.rows, self.cols, o.rows, o.cols)));
        }
        Ok(())
    }

    pub fn matmul(&self, o: &Self) -> Result<Self> {
        if self.cols != o.rows {
            return Err(KamError::DimensionMismatch(format!("{}x{} times {}x{}", self.rows, self.cols, o.rows, o.cols)));
        }
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == ZERO {
                    continue;
                }
                for j in 0..o.cols {
                    out[(i, j)] += a * o[(l, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if self.cols != v.len() {
            return Err(KamError::DimensionMismatch(format!("{}x{} times vector of {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows).map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum()).collect())
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.data.iter().zip(&o.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Copies `block` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows * b.rows, a.cols * b.cols, |i, j| a[(i / b.rows, j / b.cols)] * b[(i % b.rows, j % b.cols)])
}

/// Column straightening: columns stacked top to bottom.
pub fn vec(a: &DenseMatrix) -> Vec<C64> {
    (0..a.cols).flat_map(|j| (0..a.rows).map(move |i| a[(i, j)])).collect()
}

/// Inverse of [`vec`].
pub fn unvec(v: &[C64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(KamError::DimensionMismatch(format!("vector of {} into {rows}x{cols}", v.len())));
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

/// Commutation matrix `K` with `vec(Xᵀ) = K·vec(X)` for `X` of shape `m×n`.
pub fn commutation(m: usize, n: usize) -> DenseMatrix {
    let mut k = DenseMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            k[(i * n + j, j * m + i)] = ONE;
        }
    }
    k
}

/// LU factorization with partial pivoting, `P·M = L·U` packed in place.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(m: &DenseMatrix) -> Result<Lu> {
        if !m.is_square() {
            return Err(KamError::DimensionMismatch(format!("LU of a {}x{} matrix", m.rows, m.cols)));
        }
        let n = m.rows;
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for col in 0..n {
            let (p, best) = (col..n).map(|r| (r, lu[(r, col)].norm())).fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                continue;
            }
            if p != col {
                for j in 0..n {
                    lu.data.swap(p * n + j, col * n + j);
                }
                perm.swap(p, col);
                sign = -sign;
            }
            let piv = lu[(col, col)];
            for r in col + 1..n {
                let f = lu[(r, col)] / piv;
                lu[(r, col)] = f;
                if f != ZERO {
                    for j in col + 1..n {
                        let u = lu[(col, j)];
                        lu[(r, j)] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn det(&self) -> C64 {
        let mut d = C64::new(self.sign, 0.0);
        for i in 0..self.lu.rows {
            d *= self.lu[(i, i)];
        }
        d
    }

    pub fn is_singular(&self) -> bool {
        (0..self.lu.rows).any(|i| self.lu[(i, i)] == ZERO)
    }

    pub fn solve(&self, rhs: &[C64]) -> Result<Vec<C64>> {
        let n = self.lu.rows;
        if rhs.len() != n {
            return Err(KamError::DimensionMismatch(format!("rhs of {} for {n}x{n}", rhs.len())));
        }
        if self.is_singular() {
            return Err(KamError::SingularSystem { det: 0.0 });
        }
        let mut x: Vec<C64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.lu[(i, i)];
        }
        Ok(x)
    }
}

/// Solves `M x = rhs`; fails only on an exactly singular factorization.
pub fn solve_dense(m: &DenseMatrix, rhs: &[C64]) -> Result<Vec<C64>> {
    solve_dense_tol(m, rhs, 0.0)
}

/// Solves `M x = rhs`, failing with [`KamError::SingularSystem`] when
/// `|det M| < singular_tol` or the factorization is singular.
pub fn solve_dense_tol(m: &DenseMatrix, rhs: &[C64], singular_tol: f64) -> Result<Vec<C64>> {
    let lu = Lu::new(m)?;
    let det = lu.det().norm();
    if lu.is_singular() || det < singular_tol {
        return Err(KamError::SingularSystem { det });
    }
    lu.solve(rhs)
}

pub fn det(m: &DenseMatrix) -> Result<C64> {
    Ok(Lu::new(m)?.det())
}

/// `|det M|`.
pub fn det_modulus(m: &DenseMatrix) -> Result<f64> {
    Ok(det(m)?.norm())
}

pub fn inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    let lu = Lu::new(m)?;
    if lu.is_singular() {
        return Err(KamError::SingularSystem { det: 0.0 });
    }
    let n = m.rows;
    let mut inv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![ZERO; n];
        e[j] = ONE;
        let col = lu.solve(&e)?;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// Spectral norm by power iteration on `M*M`, relative tolerance 1e−10.
pub fn op_norm(m: &DenseMatrix) -> f64 {
    if m.rows == 0 || m.cols == 0 || m.data.iter().all(|c| *c == ZERO) {
        return 0.0;
    }
    // tr((MᴴM)^{2^t})^{2^{-t}} decreases to λ_max(MᴴM) regardless of the gap.
    let mut h = m.adjoint().matmul(m).unwrap();
    let mut log_scale = 0.0;
    let mut pow = 1.0;
    for _ in 0..56 {
        let tr: f64 = (0..h.rows).map(|i| h[(i, i)].re).sum();
        if !(tr > 0.0) {
            break;
        }
        h = h.scale(C64::new(1.0 / tr, 0.0));
        log_scale += tr.ln() / pow;
        h = h.matmul(&h).unwrap();
        pow *= 2.0;
    }
    let tr: f64 = (0..h.rows).map(|i| h[(i, i)].re).sum();
    let lambda = if tr > 0.0 { (log_scale + tr.ln() / pow).exp() } else { log_scale.exp() };
    lambda.sqrt()
}

/// 2-norm condition number `‖M‖‖M⁻¹‖`; infinite for singular `M`.
pub fn cond(m: &DenseMatrix) -> f64 {
    match inverse(m) {
        Ok(inv) => op_norm(m) * op_norm(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(KamError::DimensionMismatch("exponential of a non-square matrix".into()));
    }
    let norm = a.norm1();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a.scale(C64::new(0.5f64.powi(squarings as i32), 0.0));
    let mut sum = DenseMatrix::identity(a.rows);
    let mut term = DenseMatrix::identity(a.rows);
    for k in 1..=24 {
        term = term.matmul(&scaled)?.scale(C64::new(1.0 / k as f64, 0.0));
        sum = sum.add(&term)?;
        if term.frobenius() <= f64::EPSILON * sum.frobenius() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}
