//! Small dense helpers on top of nalgebra.

use nalgebra::SymmetricEigen;

use crate::{Mat, Vector};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Ties keep the order returned by the underlying solver.
pub struct SortedEigen {
    pub values: Vector,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: Mat,
}

pub fn sym_eigen_desc(m: &Mat) -> SortedEigen {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps solver order on ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Frobenius inner product `tr(A^T B)`.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

/// `X X^T`.
pub fn outer_gram(x: &Mat) -> Mat {
    x * x.transpose()
}

/// Column-stacking vectorization.
pub fn vec_col(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec_col(v: &Vector, n: usize) -> Mat {
    Mat::from_column_slice(n, n, v.as_slice())
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn lambda_min_sym(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
