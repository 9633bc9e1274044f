//! Dense symmetric linear algebra used by the solver.
//!
//! [`SymMatrix`] keeps a single packed copy of the lower triangle, so symmetry
//! holds by construction. Factorizations are delegated to `faer`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Symmetric matrix stored as its packed lower triangle (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        assert!(order >= 1, "symmetric matrix order must be positive");
        Self {
            order,
            data: vec![0.0; order * (order + 1) / 2],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from the lower triangle of `f(i, j)`, `j <= i`.
    pub fn from_lower_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(order * (order + 1) / 2);
        for i in 0..order {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { order, data }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed(i, j)] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed(i, j)] += v;
    }

    pub fn packed_data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Frobenius inner product `sum_ij A_ij B_ij`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.order, other.order);
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut k = 0;
        for i in 0..self.order {
            for _ in 0..i {
                off += self.data[k] * other.data[k];
                k += 1;
            }
            diag += self.data[k] * other.data[k];
            k += 1;
        }
        diag + 2.0 * off
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &SymMatrix) {
        assert_eq!(self.order, other.order);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn add_diag(&mut self, shift: f64) {
        for i in 0..self.order {
            self.add_to(i, i, shift);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.order);
        let mut out = vec![0.0; self.order];
        let mut k = 0;
        for i in 0..self.order {
            for j in 0..i {
                let v = self.data[k];
                out[i] += v * x[j];
                out[j] += v * x[i];
                k += 1;
            }
            out[i] += self.data[k] * x[i];
            k += 1;
        }
        out
    }

    pub fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }

    /// Symmetric matrix from the lower triangle of a dense square matrix.
    pub fn from_faer_lower(m: faer::MatRef<'_, f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        Self::from_lower_fn(m.nrows(), |i, j| m[(i, j)])
    }

    /// Rows of the full dense matrix, mostly for tests and dumps.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.order)
            .map(|i| (0..self.order).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// `M = Q diag(lambda) Q^T` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub q: Mat<f64>,
    pub lambda: Vec<f64>,
}

impl EigDecomposition {
    pub fn lambda_min(&self) -> f64 {
        self.lambda.first().copied().unwrap_or(0.0)
    }

    /// `Q f(Lambda) Q^T`, using only eigenpairs where `f` is nonzero.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.lambda.len();
        let picked: Vec<(usize, f64)> = self
            .lambda
            .iter()
            .enumerate()
            .map(|(i, &l)| (i, f(l)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        low_rank_sum(&self.q, n, &picked)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.reconstruct_with(|l| l)
    }
}

// sum_k w_k q_k q_k^T over the selected columns
fn low_rank_sum(q: &Mat<f64>, n: usize, picked: &[(usize, f64)]) -> SymMatrix {
    if picked.is_empty() {
        return SymMatrix::zeros(n);
    }
    let k = picked.len();
    let left = Mat::from_fn(n, k, |i, c| q[(i, picked[c].0)] * picked[c].1);
    let right = Mat::from_fn(n, k, |i, c| q[(i, picked[c].0)]);
    let prod = &left * right.transpose();
    SymMatrix::from_faer_lower(prod.as_ref())
}

pub fn sym_eig(m: &SymMatrix) -> Result<EigDecomposition> {
    if !m.is_finite() {
        return Err(Error::NonFinite("sym_eig input"));
    }
    let dense = m.to_faer();
    let evd = dense
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenFailed)?;
    let lambda: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    Ok(EigDecomposition {
        q: evd.U().to_owned(),
        lambda,
    })
}

pub fn sym_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    if !m.is_finite() {
        return Err(Error::NonFinite("sym_eigenvalues input"));
    }
    m.to_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::EigenFailed)
}

pub fn lambda_min(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.first().copied().unwrap_or(0.0))
}

/// Nearest PSD matrix in Frobenius norm, together with the eigenvalues of `m`.
pub fn psd_project_with_eigs(m: &SymMatrix) -> Result<(SymMatrix, Vec<f64>)> {
    let eig = sym_eig(m)?;
    let n = m.order();
    let pos = eig.lambda.iter().filter(|&&l| l > 0.0).count();
    let out = if pos <= n - pos {
        eig.reconstruct_with(|l| l.max(0.0))
    } else {
        // fewer negative eigenpairs: M_+ = M - M_-
        let mut proj = m.clone();
        let neg = eig.reconstruct_with(|l| l.min(0.0));
        proj.axpy(-1.0, &neg);
        proj
    };
    Ok((out, eig.lambda))
}

pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    psd_project_with_eigs(m).map(|(p, _)| p)
}

/// Cholesky factor of a symmetric positive definite matrix, regularized by
/// `1e-10 * tr(K) / order` on the diagonal.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    order: usize,
    #[cfg(debug_assertions)]
    regularized: SymMatrix,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("order", &self.order).finish_non_exhaustive()
    }
}

pub const SPD_REGULARIZATION: f64 = 1e-10;

impl SpdFactor {
    pub fn new(k: &SymMatrix) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::NonFinite("spd factor input"));
        }
        let n = k.order();
        let shift = SPD_REGULARIZATION * k.trace().abs() / n as f64;
        let mut reg = k.clone();
        reg.add_diag(shift);
        match reg.to_faer().llt(Side::Lower) {
            Ok(llt) => Ok(Self {
                llt,
                order: n,
                #[cfg(debug_assertions)]
                regularized: reg,
            }),
            Err(_) => Err(Error::NotPositiveDefinite {
                lambda_min: lambda_min(&reg).unwrap_or(f64::NAN),
            }),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.order {
            return Err(Error::DimensionMismatch {
                context: "spd solve",
                expected: self.order,
                got: rhs.len(),
            });
        }
        let mut col = Mat::from_fn(self.order, 1, |i, _| rhs[i]);
        self.llt.solve_in_place(col.as_mut());
        let out: Vec<f64> = (0..self.order).map(|i| col[(i, 0)]).collect();
        #[cfg(debug_assertions)]
        {
            let kx = self.regularized.matvec(&out);
            let res: f64 = kx
                .iter()
                .zip(rhs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
            debug_assert!(
                res <= 1e-6 * scale.max(f64::MIN_POSITIVE) || !res.is_finite(),
                "spd solve residual {res:e} vs rhs norm {scale:e}"
            );
        }
        Ok(out)
    }
}

pub fn spd_solve(k: &SymMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    SpdFactor::new(k)?.solve(rhs)
}

/// Largest singular value of a row-major `rows x cols` matrix.
pub fn spectral_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    assert_eq!(data.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let m = Mat::from_fn(rows, cols, |i, j| data[i * cols + j]);
    m.singular_values()
        .ok()
        .and_then(|s| s.first().copied())
        .unwrap_or_else(|| frobenius(data))
}

fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
