//! Dense symmetric-cone algebra.
//!
//! `svec` stacks the lower triangle column by column (rows `j..n` of column `j`)
//! and scales off-diagonal entries by √2, so that `svec(X)ᵀ svec(Y) = X • Y`.
//! Every serialized vector in this crate uses that ordering.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Number of svec coordinates of an order-`n` symmetric matrix.
pub fn svec_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`svec_dim`]; `None` when `dim` is not a triangular number.
pub fn order_from_dim(dim: usize) -> Option<usize> {
    let n = (((8 * dim + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n..=n + 1).find(|&k| svec_dim(k) == dim)
}

/// Position of entry `(i, j)` (either triangle) in `svec` of an order-`n` matrix.
#[inline]
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    c * (2 * n - c + 1) / 2 + (r - c)
}

/// `(row, col)` pairs (row ≥ col) in svec order.
pub fn svec_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(svec_dim(n));
    for c in 0..n {
        for r in c..n {
            out.push((r, c));
        }
    }
    out
}

/// Dense real symmetric matrix. The lower triangle is authoritative and is
/// mirrored on every write.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Builds from a square matrix, taking the lower triangle as authoritative.
    pub fn from_lower(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidDimension(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut m = m;
        mirror_lower(&mut m);
        Ok(SymMatrix(m))
    }

    /// Builds from a square matrix by averaging it with its transpose.
    pub fn symmetrize(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidDimension(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(SymMatrix(sym_part(m)))
    }

    /// Row-major nested vectors; the lower triangle is used.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidDimension("ragged rows".into()));
        }
        Self::from_lower(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Trace inner product `X • Y`.
    pub fn dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0 * a)
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.0.clone()).is_some()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Principal submatrix on the given (ordered) index set.
    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            self.0[(idx[a], idx[b])]
        }))
    }
}

/// An svec-encoded symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SvecVector {
    order: usize,
    values: DVector<f64>,
}

impl SvecVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let order = order_from_dim(values.len()).ok_or_else(|| {
            Error::InvalidDimension(format!(
                "svec length {} is not of the form n(n+1)/2",
                values.len()
            ))
        })?;
        Ok(SvecVector {
            order,
            values: DVector::from_vec(values),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }
}

pub fn svec(x: &SymMatrix) -> SvecVector {
    SvecVector {
        order: x.order(),
        values: svec_raw(x.as_matrix()),
    }
}

pub fn smat(v: &SvecVector) -> SymMatrix {
    SymMatrix(smat_raw(v.order, v.values.as_slice()))
}

/// svec of the lower triangle of a square matrix.
pub(crate) fn svec_raw(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(svec_dim(n));
    let mut k = 0;
    for c in 0..n {
        out[k] = m[(c, c)];
        k += 1;
        for r in c + 1..n {
            out[k] = SQRT2 * m[(r, c)];
            k += 1;
        }
    }
    out
}

pub(crate) fn smat_raw(n: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for c in 0..n {
        m[(c, c)] = v[k];
        k += 1;
        for r in c + 1..n {
            let x = v[k] / SQRT2;
            m[(r, c)] = x;
            m[(c, r)] = x;
            k += 1;
        }
    }
    m
}

pub(crate) fn mirror_lower(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in c + 1..n {
            m[(c, r)] = m[(r, c)];
        }
    }
}

pub(crate) fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrized Kronecker product `A ⊗ₛ B = ½ U (A⊗B + B⊗A) Uᵀ`, assembled
/// entrywise from `(A ⊗ₛ B) svec(K) = svec(½(B K Aᵀ + A K Bᵀ))`.
pub fn skron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "skron needs equal-order square factors, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let pairs = svec_pairs(n);
    let dim = pairs.len();
    let mut out = DMatrix::zeros(dim, dim);
    for (col, &(k, l)) in pairs.iter().enumerate() {
        let ckl = if k == l { 0.5 } else { 1.0 / SQRT2 };
        for (row, &(i, j)) in pairs.iter().enumerate() {
            let rij = if i == j { 1.0 } else { SQRT2 };
            let t = b[(i, k)] * a[(j, l)]
                + b[(i, l)] * a[(j, k)]
                + a[(i, k)] * b[(j, l)]
                + a[(i, l)] * b[(j, k)];
            out[(row, col)] = 0.5 * t * ckl * rij;
        }
    }
    Ok(out)
}

fn spd_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let out = q * d * q.transpose();
    sym_part(&out)
}

fn require_pd(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

/// Nesterov-Todd scaling of a primal-dual pair together with the
/// symmetrized-Kronecker operators `F = D X ⊗ₛ D⁻ᵀ` and `U = D ⊗ₛ D⁻ᵀ S`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    d: DMatrix<f64>,
    f: DMatrix<f64>,
    u: DMatrix<f64>,
    /// Eigendecomposition of the scaled point `V = D X Dᵀ = D⁻ᵀ S D⁻¹`.
    v_vecs: DMatrix<f64>,
    v_vals: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl NtScaling {
    pub fn new(x: &SymMatrix, s: &SymMatrix) -> Result<Self> {
        if x.order() != s.order() {
            return Err(Error::InvalidDimension(format!(
                "X has order {}, S has order {}",
                x.order(),
                s.order()
            )));
        }
        let xm = x.as_matrix();
        let sm = s.as_matrix();
        require_pd(xm, "X")?;
        require_pd(sm, "S")?;

        let x_half = spd_function(xm, f64::sqrt);
        let inner = &x_half * sm * &x_half;
        let inner_inv_half = spd_function(&sym_part(&inner), |l| 1.0 / l.sqrt());
        let w = sym_part(&(&x_half * inner_inv_half * &x_half));

        let g = require_pd(&w, "W")?.l();
        let d = g
            .clone()
            .solve_lower_triangular(&DMatrix::identity(g.nrows(), g.nrows()))
            .ok_or_else(|| Error::Singular("Cholesky factor of W".into()))?;
        let d_inv_t = g.transpose();

        let f = skron(&(&d * xm), &d_inv_t)?;
        let u = skron(&d, &(&d_inv_t * sm))?;
        // For the NT point F⁻¹U = W⁻¹ ⊗ₛ W⁻¹ with W⁻¹ = DᵀD.
        let w_inv = sym_part(&(d.transpose() * &d));
        let hessian = skron(&w_inv, &w_inv)?;
        let v = SymmetricEigen::new(sym_part(&(&d * xm * d.transpose())));
        Ok(NtScaling {
            w,
            g,
            d,
            f,
            u,
            v_vecs: v.eigenvectors,
            v_vals: v.eigenvalues,
            hessian,
        })
    }

    /// The second expression for the scaling point,
    /// `S^{-1/2} (S^{1/2} X S^{1/2})^{1/2} S^{-1/2}`.
    pub fn alternate_form(x: &SymMatrix, s: &SymMatrix) -> Result<SymMatrix> {
        require_pd(x.as_matrix(), "X")?;
        require_pd(s.as_matrix(), "S")?;
        let sm = s.as_matrix();
        let s_half = spd_function(sm, f64::sqrt);
        let s_inv_half = spd_function(sm, |l| 1.0 / l.sqrt());
        let inner = sym_part(&(&s_half * x.as_matrix() * &s_half));
        let mid = spd_function(&inner, f64::sqrt);
        SymMatrix::symmetrize(&(&s_inv_half * mid * &s_inv_half))
    }

    pub fn order(&self) -> usize {
        self.w.nrows()
    }

    pub fn w(&self) -> SymMatrix {
        SymMatrix(self.w.clone())
    }

    /// Lower-triangular `G` with `W = G Gᵀ`.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `D = G⁻¹`.
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// `F⁻¹ U`, symmetrized. Equal to `W⁻¹ ⊗ₛ W⁻¹` for NT scaling.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `F⁻¹v`. With `M = DᵀND`, `F svec(M) = svec(½(NV + VN))`, so the solve
    /// is a Lyapunov equation in the eigenbasis of `V`.
    pub fn f_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.d.nrows();
        let q = &self.v_vecs;
        let k = q.transpose() * smat_raw(n, v.as_slice()) * q;
        let nt = DMatrix::from_fn(n, n, |i, j| {
            2.0 * k[(i, j)] / (self.v_vals[i] + self.v_vals[j])
        });
        let m = self.d.transpose() * (q * nt * q.transpose()) * &self.d;
        svec_raw(&sym_part(&m))
    }

    /// `H_D(M) = ½(D M D⁻¹ + D⁻ᵀ M Dᵀ)` with `D⁻¹ = G`.
    pub fn hd(&self, m: &DMatrix<f64>) -> SymMatrix {
        let a = &self.d * m * &self.g;
        SymMatrix(sym_part(&a))
    }
}

/// `H_D(M) = ½(D M D⁻¹ + D⁻ᵀ M Dᵀ)` for an arbitrary nonsingular `D`.
pub fn hd_symmetrize(m: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<SymMatrix> {
    let n = m.nrows();
    if m.ncols() != n || d.nrows() != n || d.ncols() != n {
        return Err(Error::InvalidDimension(format!(
            "H_D needs M and D of equal order, got {}x{} and {}x{}",
            m.nrows(),
            m.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    let d_inv = d
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("scaling matrix D".into()))?;
    let a = d * m * d_inv;
    Ok(SymMatrix(sym_part(&a)))
}

/// `λ_min(P⁻¹Δ)`, evaluated as `λ_min(L⁻¹ Δ L⁻ᵀ)` with `P = L Lᵀ`.
pub fn min_ratio_eig(p: &SymMatrix, delta: &SymMatrix) -> Result<f64> {
    if p.order() != delta.order() {
        return Err(Error::InvalidDimension(format!(
            "P has order {}, Δ has order {}",
            p.order(),
            delta.order()
        )));
    }
    let chol = require_pd(p.as_matrix(), "P")?;
    Ok(min_ratio_eig_with(&chol, delta.as_matrix()))
}

pub(crate) fn min_ratio_eig_with(chol: &Cholesky<f64, Dyn>, delta: &DMatrix<f64>) -> f64 {
    let l = chol.l_dirty();
    let a = l
        .solve_lower_triangular(delta)
        .expect("Cholesky factor is nonsingular");
    let b = l
        .solve_lower_triangular(&a.transpose())
        .expect("Cholesky factor is nonsingular");
    SymmetricEigen::new(sym_part(&b))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
