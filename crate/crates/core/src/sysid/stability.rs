//! Schur stability of discrete-time polynomials.

use crate::scalar::Scalar;

/// Radius inside which every root must lie to count as stable.
pub const STABILITY_RADIUS: f64 = 1.0 - 1e-9;

/// True iff every root of `z^n + p[1] z^(n-1) + … + p[n]` lies strictly
/// inside the circle of radius [`STABILITY_RADIUS`]. `poly[0]` is the
/// leading coefficient and must be nonzero.
///
/// Uses the Schur–Cohn step-down recursion on the radius-scaled polynomial,
/// so no roots are computed.
pub fn is_schur_stable<T: Scalar>(poly: &[T]) -> bool {
    let lead = match poly.first() {
        Some(&c) if c != T::zero() => c,
        _ => return false,
    };
    let n = poly.len() - 1;
    let r = T::lit(STABILITY_RADIUS);
    // roots of p(r w) in the unit disc <=> roots of p inside radius r
    let mut c: Vec<T> = poly
        .iter()
        .enumerate()
        .map(|(i, &p)| p / lead * r.powi(-(i as i32)))
        .collect();
    for deg in (1..=n).rev() {
        let k = c[deg];
        if !k.is_finite() || k.abs() >= T::one() {
            return false;
        }
        let denom = T::one() - k * k;
        c = (0..deg)
            .map(|i| (c[i] - k * c[deg - i]) / denom)
            .collect();
    }
    true
}
