//! Thin bridge to `nalgebra` for the dense decompositions we need.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::model::{ComplexMatrix, C64};

pub(crate) fn to_na(m: &ComplexMatrix) -> DMatrix<C64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

/// Eigenvalues (ascending) and matching unit eigenvectors of a hermitian matrix.
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, Vec<Vec<C64>>) {
    hermitian_eigen_na(to_na(m))
}

pub(crate) fn hermitian_eigen_na(m: DMatrix<C64>) -> (Vec<f64>, Vec<Vec<C64>>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
    (values, vectors)
}

/// Eigenvalues of a general complex matrix via its Schur form.
pub fn general_eigenvalues(m: &DMatrix<C64>) -> Vec<C64> {
    let schur = nalgebra::Schur::new(m.clone());
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Orthonormal basis of `{z : A z ≈ 0}` from the right singular vectors whose
/// singular value is at most `tol`. Requires `nrows ≥ ncols`.
pub(crate) fn null_space(a: &DMatrix<C64>, tol: f64) -> Vec<DVector<C64>> {
    let n = a.ncols();
    if a.nrows() < n {
        let mut padded = DMatrix::zeros(n, n);
        padded.rows_mut(0, a.nrows()).copy_from(a);
        return null_space(&padded, tol);
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(k, _)| v_t.row(k).adjoint().into_owned())
        .collect()
}

/// Singular values in descending order.
pub(crate) fn singular_values(a: &DMatrix<C64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}
