use nalgebra::{DMatrix, DVector, RealField};

use crate::scalar::Scalar;

/// Minimum-norm least squares through a truncated SVD. Singular values below
/// `σ_max · rank_tolerance` are discarded. Returns the solution and the
/// numerical rank.
pub(crate) fn lstsq<T: Scalar>(phi: &DMatrix<T>, y: &DVector<T>) -> (DVector<T>, usize) {
    let svd = phi.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |m, &s| RealField::max(m, s));
    if smax == T::zero() {
        return (DVector::zeros(phi.ncols()), 0);
    }
    let cut = smax * T::rank_tolerance();
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let theta = svd.solve(y, cut).expect("U and V were computed");
    (theta, rank)
}

/// Ratio of extreme singular values; infinite for rank-deficient input.
pub(crate) fn condition_number<T: Scalar>(m: &DMatrix<T>) -> f64 {
    let s = m.singular_values();
    let max = s.iter().fold(T::zero(), |a, &b| RealField::max(a, b));
    let min = s.iter().fold(max, |a, &b| RealField::min(a, b));
    if min == T::zero() {
        f64::INFINITY
    } else {
        (max / min).as_f64()
    }
}
