//! Co-channel interference nulling.
//!
//! For target channel `i` the other two measurement matrices are stacked and
//! their column space (left singular vectors with non-zero singular value)
//! is removed. The retained subspace is the left null space of the stack.
//! The operator is stored through the orthonormal interference basis `Q`;
//! the explicit row-orthonormal `U` with `UᴴU = I - QQᴴ` is only formed on
//! request because it is `R×KM`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{LocError, Result};
use crate::signal::MeasurementMatrices;

/// Singular values below this fraction of the largest are treated as zero.
pub const NULL_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NullingOperator {
    /// Target channel, 1..=3.
    pub target: usize,
    /// KM×r orthonormal basis of the interference subspace.
    basis: DMatrix<Complex64>,
}

impl NullingOperator {
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn interference_rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of retained dimensions `R`.
    pub fn retained_dim(&self) -> usize {
        self.ambient_dim() - self.interference_rank()
    }

    pub fn interference_basis(&self) -> &DMatrix<Complex64> {
        &self.basis
    }

    /// `UᴴU·v`, the orthogonal projection of `v` onto the retained subspace.
    /// Norms and inner products of projected vectors equal those of `U·v`.
    pub fn project(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        v - &self.basis * (self.basis.adjoint() * v)
    }

    pub fn project_matrix(&self, a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a - &self.basis * (self.basis.adjoint() * a)
    }

    /// The explicit `R×KM` nulling matrix with orthonormal rows.
    pub fn rows(&self) -> DMatrix<Complex64> {
        let n = self.ambient_dim();
        let r = self.interference_rank();
        if r == 0 {
            return DMatrix::identity(n, n);
        }
        // Householder QR of the basis: the trailing rows of the full Qᴴ
        // span the orthogonal complement of the basis.
        let qr = self.basis.clone().qr();
        let mut full = DMatrix::<Complex64>::identity(n, n);
        qr.q_tr_mul(&mut full);
        full.rows(r, n - r).into_owned()
    }

    pub fn apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        self.rows() * v
    }
}

/// Orthonormal basis of the column space of `b`, with numerical rank decided
/// by [`NULL_THRESHOLD`].
pub fn column_space(b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(b.nrows(), 0);
    }
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > NULL_THRESHOLD * smax)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(b.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

pub fn nulling_operator(target: usize, mm: &MeasurementMatrices) -> Result<NullingOperator> {
    let others: Vec<&DMatrix<Complex64>> = match target {
        1 => vec![&mm.a2, &mm.a3],
        2 => vec![&mm.a1, &mm.a3],
        3 => vec![&mm.a1, &mm.a2],
        _ => return Err(LocError::DimensionMismatch(format!("channel index {target} outside 1..=3"))),
    };
    let rows = mm.a1.nrows();
    let cols: usize = others.iter().map(|a| a.ncols()).sum();
    if rows <= cols {
        return Err(LocError::EmptyNullSpace { target });
    }
    let mut stacked = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for a in others {
        stacked.columns_mut(at, a.ncols()).copy_from(a);
        at += a.ncols();
    }
    let basis = column_space(&stacked);
    if basis.ncols() >= rows {
        return Err(LocError::EmptyNullSpace { target });
    }
    Ok(NullingOperator { target, basis })
}
