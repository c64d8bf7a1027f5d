use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

fn bilinear<T: Scalar>(z_u: &[T], q: &Matrix<T>, z_v: &[T]) -> T {
    debug_assert_eq!(q.shape(), (z_u.len(), z_v.len()));
    z_u.iter()
        .enumerate()
        .map(|(i, &a)| a * dot(q.row(i), z_v))
        .sum()
}

/// Ranking score `z_uᵀ Q1 z_v`.
pub fn affinity<T: Scalar>(z_u: &[T], z_v: &[T], q1: &Matrix<T>) -> T {
    bilinear(z_u, q1, z_v)
}

/// Click-through logit `z_uᵀ Q2 z_v`.
pub fn ctr_logit<T: Scalar>(z_u: &[T], z_v: &[T], q2: &Matrix<T>) -> T {
    bilinear(z_u, q2, z_v)
}
