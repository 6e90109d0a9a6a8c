//! Discrete-to-continuous conversion and first-order balanced truncation.

use nalgebra::{DMatrix, DVector, RealField, RowDVector};
use serde::{Deserialize, Serialize};

use super::armax::ArmaxModel;
use crate::error::SysidError;
use crate::scalar::Scalar;

/// Single-input single-output state-space model `ẋ = Ax + Bu, y = Cx + Du`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousStateSpace<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub c: RowDVector<T>,
    pub d: T,
}

impl<T: Scalar> ContinuousStateSpace<T> {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `G(0) = D − C A⁻¹ B`.
    pub fn dc_gain(&self) -> Option<T> {
        let x = self.a.clone().lu().solve(&self.b)?;
        Some(self.d - (&self.c * x)[0])
    }
}

/// `G_e(s) = b0 / (s + a0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderTF<T> {
    pub b0: T,
    pub a0: T,
}

/// Controllable canonical realization of `B(z)/A(z)` from the ARMAX
/// polynomials in `q⁻¹`.
pub(crate) fn discrete_realization<T: Scalar>(
    model: &ArmaxModel<T>,
) -> (DMatrix<T>, DVector<T>, RowDVector<T>, T) {
    let n = model.na.max(model.nb.saturating_sub(1)).max(1);
    let alpha = |i: usize| if i == 0 { T::one() } else { model.a.get(i - 1).copied().unwrap_or_else(T::zero) };
    let beta = |i: usize| model.b.get(i).copied().unwrap_or_else(T::zero);
    let d = beta(0);
    let a = DMatrix::from_fn(n, n, |r, c| {
        if r == 0 {
            -alpha(c + 1)
        } else if r == c + 1 {
            T::one()
        } else {
            T::zero()
        }
    });
    let mut b = DVector::zeros(n);
    b[0] = T::one();
    let c = RowDVector::from_fn(n, |_, i| beta(i + 1) - d * alpha(i + 1));
    (a, b, c, d)
}

/// Bilinear (Tustin) map of the deterministic part `B/A` at the model's
/// sample time.
pub fn to_continuous<T: Scalar>(model: &ArmaxModel<T>) -> Result<ContinuousStateSpace<T>, SysidError> {
    let t = model.sample_time;
    if !(t > T::zero()) {
        return Err(SysidError::InvalidArgument("sample time must be positive".into()));
    }
    // A(−1) = 0 exactly when z = −1 is a pole.
    let mut at_minus_one = T::one();
    let mut scale = T::one();
    let mut sign = T::one();
    for &ai in &model.a {
        sign = -sign;
        at_minus_one += sign * ai;
        scale += ai.abs();
    }
    if at_minus_one.abs() <= scale * T::lit(1e3) * T::default_epsilon() {
        return Err(SysidError::PoleAtMinusOne);
    }

    let (ad, bd, cd, dd) = discrete_realization(model);
    let n = ad.nrows();
    let id = DMatrix::<T>::identity(n, n);
    let e = (&ad + &id).try_inverse().ok_or(SysidError::PoleAtMinusOne)?;
    let two_t = T::lit(2.0) / t;
    let a = (&e * (&ad - &id)) * two_t;
    let b = &e * &bd;
    let ce = &cd * &e;
    let c = &ce * (T::lit(2.0) * two_t);
    let d = dd - (&ce * &bd)[0];
    Ok(ContinuousStateSpace { a, b, c, d })
}

fn is_hurwitz<T: Scalar>(a: &DMatrix<T>) -> bool {
    a.complex_eigenvalues().iter().all(|l| l.re < T::zero())
}

/// Solves `M X + X Mᵀ + Q = 0` through its Kronecker form.
fn lyapunov<T: Scalar>(m: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>, SysidError> {
    let n = m.nrows();
    let id = DMatrix::<T>::identity(n, n);
    let op = id.kronecker(m) + m.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|&v| -v));
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SysidError::GramianSolveFailure("singular Lyapunov operator".into()))?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SysidError::GramianSolveFailure("non-finite Gramian".into()));
    }
    Ok((&x + x.transpose()) * T::lit(0.5))
}

/// Symmetric positive semidefinite square root factor `L` with `W = L Lᵀ`.
fn psd_factor<T: Scalar>(w: DMatrix<T>) -> DMatrix<T> {
    let eig = w.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut l = eig.eigenvectors;
    for j in 0..n {
        let s = RealField::max(eig.eigenvalues[j], T::zero()).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    l
}

struct Balanced<T: Scalar> {
    hsv: Vec<T>,
    left: RowDVector<T>,
    right: DVector<T>,
}

fn balance_first<T: Scalar>(ss: &ContinuousStateSpace<T>) -> Result<Balanced<T>, SysidError> {
    if !is_hurwitz(&ss.a) {
        return Err(SysidError::GramianSolveFailure("system is not asymptotically stable".into()));
    }
    let wc = lyapunov(&ss.a, &(&ss.b * ss.b.transpose()))?;
    let wo = lyapunov(&ss.a.transpose(), &(ss.c.transpose() * &ss.c))?;
    let lc = psd_factor(wc);
    let lo = psd_factor(wo);
    let svd = (lo.transpose() * &lc).svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("finite singular values")
    });
    let hsv: Vec<T> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s1 = hsv[0];
    if !(s1 > T::zero()) {
        return Err(SysidError::GramianSolveFailure("zero Hankel singular values".into()));
    }
    let k = order[0];
    let root = s1.sqrt();
    let right = (&lc * vt.row(k).transpose()) / root;
    let left = (u.column(k).transpose() * lo.transpose()) / root;
    Ok(Balanced { hsv, left, right })
}

/// Hankel singular values in descending order.
pub fn hankel_singular_values<T: Scalar>(ss: &ContinuousStateSpace<T>) -> Result<Vec<T>, SysidError> {
    balance_first(ss).map(|b| b.hsv)
}

/// Balanced truncation to one state. The feedthrough term is not carried
/// into the first-order form.
pub fn reduce_to_first_order<T: Scalar>(ss: &ContinuousStateSpace<T>) -> Result<FirstOrderTF<T>, SysidError> {
    if ss.order() == 1 {
        let a = ss.a[(0, 0)];
        if !(a < T::zero()) {
            return Err(SysidError::GramianSolveFailure("system is not asymptotically stable".into()));
        }
        return Ok(FirstOrderTF { b0: ss.c[0] * ss.b[0], a0: -a });
    }
    let bal = balance_first(ss)?;
    let ar = (&bal.left * &ss.a * &bal.right)[0];
    let br = (&bal.left * &ss.b)[0];
    let cr = (&ss.c * &bal.right)[0];
    Ok(FirstOrderTF { b0: cr * br, a0: -ar })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: Vec<f64>, b: Vec<f64>, t: f64) -> ArmaxModel<f64> {
        ArmaxModel {
            na: a.len(),
            nb: b.len(),
            nc: 0,
            a,
            b,
            c: vec![],
            sample_time: t,
            noise_variance: 0.0,
        }
    }

    fn discrete_dc(m: &ArmaxModel<f64>) -> f64 {
        m.b.iter().sum::<f64>() / (1.0 + m.a.iter().sum::<f64>())
    }

    #[test]
    fn bilinear_pole_map() {
        let ss = to_continuous(&model(vec![-0.9], vec![0.0, 1.0], 1.0 / 60.0)).unwrap();
        let want = 120.0 * (0.9 - 1.0) / (0.9 + 1.0);
        assert!((ss.a[(0, 0)] - want).abs() < 1e-12);
        assert!((want + 6.315_789_473_684_21).abs() < 1e-9);
    }

    #[test]
    fn pole_at_minus_one_rejected() {
        assert!(matches!(
            to_continuous(&model(vec![1.0], vec![1.0], 0.1)),
            Err(SysidError::PoleAtMinusOne)
        ));
        assert!(matches!(
            to_continuous(&model(vec![0.0, -1.0], vec![1.0, 0.5], 0.1)),
            Err(SysidError::PoleAtMinusOne)
        ));
    }

    #[test]
    fn dc_gain_preserved() {
        let cases = [
            model(vec![-0.9], vec![0.3], 0.02),
            model(vec![-1.5, 0.7], vec![0.5, 0.25], 1.0 / 60.0),
            model(vec![-1.2, 0.5, -0.1], vec![0.1, -0.2, 0.4, 0.05], 0.1),
        ];
        for m in &cases {
            let ss = to_continuous(m).unwrap();
            assert!((ss.dc_gain().unwrap() - discrete_dc(m)).abs() < 1e-9);
        }
    }

    #[test]
    fn frequency_response_follows_bilinear_substitution() {
        use num_complex::Complex64;
        let m = model(vec![-1.5, 0.7], vec![0.5, 0.25, -0.1], 0.05);
        let ss = to_continuous(&m).unwrap();
        for w in [0.3, 2.0, 11.0] {
            let s = Complex64::new(0.0, w);
            let z = (1.0 + s * m.sample_time / 2.0) / (1.0 - s * m.sample_time / 2.0);
            let zi = 1.0 / z;
            let num = m.b[0] + m.b[1] * zi + m.b[2] * zi * zi;
            let den = 1.0 + m.a[0] * zi + m.a[1] * zi * zi;
            let gd = num / den;
            let n = ss.order();
            let mut sia = DMatrix::<Complex64>::from_fn(n, n, |r, c| Complex64::new(-ss.a[(r, c)], 0.0));
            for i in 0..n {
                sia[(i, i)] += s;
            }
            let bc = DVector::<Complex64>::from_fn(n, |i, _| ss.b[i].into());
            let x = sia.lu().solve(&bc).unwrap();
            let gc = (0..n).map(|i| x[i] * ss.c[i]).sum::<Complex64>() + ss.d;
            assert!((gc - gd).norm() < 1e-9, "w = {w}");
        }
    }

    #[test]
    fn first_order_identity() {
        let ss = ContinuousStateSpace {
            a: DMatrix::from_element(1, 1, -0.05),
            b: DVector::from_element(1, 2.0),
            c: RowDVector::from_element(1, -0.01),
            d: 0.0,
        };
        let tf: FirstOrderTF<f64> = reduce_to_first_order(&ss).unwrap();
        assert!((tf.b0 + 0.02).abs() < 1e-9);
        assert!((tf.a0 - 0.05).abs() < 1e-9);
    }

    #[test]
    fn diagonal_first_order_via_gramians() {
        // decoupled modes: the dominant one is kept exactly
        let ss = ContinuousStateSpace {
            a: DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, -50.0])),
            b: DVector::from_vec(vec![1.0, 0.1]),
            c: RowDVector::from_vec(vec![1.0, 0.1]),
            d: 0.0,
        };
        let hsv = hankel_singular_values(&ss).unwrap();
        assert!(hsv[0] / hsv[1] > 100.0);
        let tf: FirstOrderTF<f64> = reduce_to_first_order(&ss).unwrap();
        assert!((tf.a0 - 0.5).abs() < 1e-3);
        assert!((tf.b0 - 1.0).abs() < 1e-2);
    }

    /// Forward-Euler step response on a fine grid, independent of any
    /// realization used by the reducer.
    fn step_response(a: &DMatrix<f64>, b: &DVector<f64>, c: &RowDVector<f64>, t_end: f64, dt: f64) -> Vec<f64> {
        let mut x = DVector::zeros(a.nrows());
        let steps = (t_end / dt).round() as usize;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let dx = a * &x + b;
            x += dx * dt;
            out.push((c * &x)[0]);
        }
        out
    }

    #[test]
    fn truncation_tracks_full_step_response() {
        // slow mode at −0.5, fast coupled mode at −40; transfer
        // 1/(s+0.5) + 0.05/(s+40) in a non-diagonal basis
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 1.0]);
        let pinv = p.clone().try_inverse().unwrap();
        let a = &p * DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, -40.0])) * &pinv;
        let b = &p * DVector::from_vec(vec![1.0, 0.05]);
        let c = RowDVector::from_vec(vec![1.0, 1.0]) * &pinv;
        let ss = ContinuousStateSpace { a: a.clone(), b: b.clone(), c: c.clone(), d: 0.0 };
        let hsv = hankel_singular_values(&ss).unwrap();
        assert!(hsv[0] / hsv[1] > 100.0, "{hsv:?}");

        let tf = reduce_to_first_order(&ss).unwrap();
        let dt = 1e-4;
        let full = step_response(&a, &b, &c, 10.0, dt);
        let red = step_response(
            &DMatrix::from_element(1, 1, -tf.a0),
            &DVector::from_element(1, tf.b0),
            &RowDVector::from_element(1, 1.0),
            10.0,
            dt,
        );
        let err: f64 = full.iter().zip(&red).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let mag: f64 = full.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err / mag < 0.02, "relative RMS {}", err / mag);

        let dc_full = ss.dc_gain().unwrap();
        // real-pole systems attain the 2·σ2 bound at s = 0
        assert!((tf.b0 / tf.a0 - dc_full).abs() <= 2.0 * hsv[1] * (1.0 + 1e-9));
    }

    #[test]
    fn unstable_system_rejected() {
        let ss = ContinuousStateSpace {
            a: DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.0, -1.0]),
            b: DVector::from_vec(vec![1.0, 1.0]),
            c: RowDVector::from_vec(vec![1.0, 0.0]),
            d: 0.0,
        };
        assert!(matches!(reduce_to_first_order(&ss), Err(SysidError::GramianSolveFailure(_))));
    }
}
