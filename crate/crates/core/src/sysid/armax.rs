//! ARMAX identification by prediction-error minimization.
//!
//! Model structure, with `q⁻¹` the backward shift:
//!
//! ```text
//! A(q) y(t) = B(q) u(t) + C(q) e(t)
//! A = 1 + a1 q⁻¹ + … + a_na q⁻ⁿᵃ
//! B = b0 + b1 q⁻¹ + … + b_(nb−1) q⁻⁽ⁿᵇ⁻¹⁾
//! C = 1 + c1 q⁻¹ + … + c_nc q⁻ⁿᶜ
//! ```
//!
//! `B` has no input delay: a boundary-flow step is visible in the same sample
//! in which the frequency starts to move. Samples before the series start are
//! taken as zero, which matches deviation data measured from rest.

use nalgebra::{DMatrix, DVector, RealField};
use serde::{Deserialize, Serialize};

use super::linalg::{condition_number, lstsq};
use super::stability::is_schur_stable;
use crate::error::SysidError;
use crate::scalar::{norm2, Scalar};

/// Condition number of the input regressor above which the data are
/// considered unexciting.
pub const MAX_CONDITION: f64 = 1e12;
const ELS_ITERATIONS: usize = 8;
const GN_MAX_ITERATIONS: usize = 50;
const GN_REL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmaxModel<T> {
    pub na: usize,
    pub nb: usize,
    pub nc: usize,
    /// `a1 … a_na` (monic, leading 1 implicit).
    pub a: Vec<T>,
    /// `b0 … b_(nb−1)`.
    pub b: Vec<T>,
    /// `c1 … c_nc` (monic, leading 1 implicit).
    pub c: Vec<T>,
    pub sample_time: T,
    pub noise_variance: T,
}

impl<T: Scalar> ArmaxModel<T> {
    pub fn a_poly(&self) -> Vec<T> {
        std::iter::once(T::one()).chain(self.a.iter().copied()).collect()
    }

    pub fn c_poly(&self) -> Vec<T> {
        std::iter::once(T::one()).chain(self.c.iter().copied()).collect()
    }

    /// Free-run response of `B/A` to `u` from rest.
    pub fn simulate(&self, u: &[T]) -> Vec<T> {
        let mut y = Vec::with_capacity(u.len());
        for t in 0..u.len() {
            let mut v = T::zero();
            for (j, &bj) in self.b.iter().enumerate() {
                if t >= j {
                    v += bj * u[t - j];
                }
            }
            for (i, &ai) in self.a.iter().enumerate() {
                if t > i {
                    v -= ai * y[t - 1 - i];
                }
            }
            y.push(v);
        }
        y
    }

    /// One-step-ahead prediction errors `A y − B u` filtered by `1/C`.
    pub fn prediction_errors(&self, u: &[T], y: &[T]) -> Vec<T> {
        let theta = Theta::from_model(self);
        prediction_errors(&theta, u, y)
    }
}

/// Flat parameter vector `[a, b, c]`.
#[derive(Clone, Debug)]
struct Theta<T> {
    na: usize,
    nb: usize,
    nc: usize,
    v: DVector<T>,
}

impl<T: Scalar> Theta<T> {
    fn from_model(m: &ArmaxModel<T>) -> Self {
        let v = DVector::from_iterator(
            m.na + m.nb + m.nc,
            m.a.iter().chain(&m.b).chain(&m.c).copied(),
        );
        Self {
            na: m.na,
            nb: m.nb,
            nc: m.nc,
            v,
        }
    }

    fn a(&self, i: usize) -> T {
        self.v[i]
    }
    fn b(&self, j: usize) -> T {
        self.v[self.na + j]
    }
    fn c(&self, k: usize) -> T {
        self.v[self.na + self.nb + k]
    }

    fn c_poly(&self) -> Vec<T> {
        std::iter::once(T::one())
            .chain((0..self.nc).map(|k| self.c(k)))
            .collect()
    }
}

fn lag<T: Scalar>(x: &[T], t: usize, k: usize) -> T {
    if t >= k {
        x[t - k]
    } else {
        T::zero()
    }
}

fn prediction_errors<T: Scalar>(th: &Theta<T>, u: &[T], y: &[T]) -> Vec<T> {
    let mut e = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let mut v = y[t];
        for i in 0..th.na {
            v += th.a(i) * lag(y, t, i + 1);
        }
        for j in 0..th.nb {
            v -= th.b(j) * lag(u, t, j);
        }
        for k in 0..th.nc {
            v -= th.c(k) * lag(&e, t, k + 1);
        }
        e.push(v);
    }
    e
}

/// Regressor rows `[−y(t−1…), u(t…), e(t−1…)]`.
fn regressor<T: Scalar>(u: &[T], y: &[T], e: Option<&[T]>, na: usize, nb: usize, nc: usize) -> DMatrix<T> {
    let n = y.len();
    let ncols = na + nb + if e.is_some() { nc } else { 0 };
    DMatrix::from_fn(n, ncols, |t, col| {
        if col < na {
            -lag(y, t, col + 1)
        } else if col < na + nb {
            lag(u, t, col - na)
        } else {
            lag(e.expect("noise columns requested"), t, col - na - nb + 1)
        }
    })
}

fn cost<T: Scalar>(e: &[T]) -> T {
    e.iter().fold(T::zero(), |s, &v| s + v * v) / T::lit(2.0)
}

/// Pulls the roots of `C` inside the unit circle by geometric shrinking of
/// its coefficients (`c_k ← λᵏ c_k` maps each root `z` to `λz`).
fn stabilize_c<T: Scalar>(th: &mut Theta<T>) {
    let shrink = T::lit(0.9);
    let mut tries = 0;
    while !is_schur_stable(&th.c_poly()) && tries < 200 {
        let mut f = shrink;
        for k in 0..th.nc {
            let idx = th.na + th.nb + k;
            th.v[idx] *= f;
            f *= shrink;
        }
        tries += 1;
    }
}

/// Identifies an ARMAX model from input `u` and output `y`.
///
/// Extended least squares provides the starting point; Gauss–Newton with
/// step halving then minimizes the sum of squared prediction errors. The data
/// are normalized to unit norm internally, which leaves `A` and `C` unchanged
/// and rescales `B`. Over-parameterized structures are solved in the
/// minimum-norm sense.
pub fn estimate_armax<T: Scalar>(
    u: &[T],
    y: &[T],
    na: usize,
    nb: usize,
    nc: usize,
    sample_time: T,
) -> Result<ArmaxModel<T>, SysidError> {
    if u.len() != y.len() {
        return Err(SysidError::LengthMismatch(u.len(), y.len()));
    }
    if na == 0 || nb == 0 {
        return Err(SysidError::InvalidArgument(
            "na and nb must be at least 1".into(),
        ));
    }
    if !(sample_time > T::zero()) {
        return Err(SysidError::InvalidArgument(
            "sample time must be positive".into(),
        ));
    }
    let len = y.len();
    if len < 10 * (na + nb + nc) {
        return Err(SysidError::InsufficientData { len, na, nb, nc });
    }
    if u.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(SysidError::InvalidArgument("non-finite sample".into()));
    }

    let (su, sy) = (norm2(u), norm2(y));
    if su == T::zero() {
        return Err(SysidError::IllConditioned(f64::INFINITY));
    }
    // B/A is unchanged when u and y flip together; fixing the sign of the
    // first nonzero input makes the estimate exactly invariant to that flip.
    let first = u.iter().copied().find(|&v| v != T::zero()).expect("nonzero norm");
    let su = if first < T::zero() { -su } else { su };
    let sy = if first < T::zero() { -sy } else { sy };
    let un: Vec<T> = u.iter().map(|&v| v / su).collect();
    let yn: Vec<T> = if sy == T::zero() {
        y.to_vec()
    } else {
        y.iter().map(|&v| v / sy).collect()
    };

    let input_block = DMatrix::from_fn(len, nb, |t, j| lag(&un, t, j));
    let cond = condition_number(&input_block);
    if !(cond <= MAX_CONDITION) {
        return Err(SysidError::IllConditioned(cond));
    }

    let yv = DVector::from_column_slice(&yn);
    let (arx, _) = lstsq(&regressor(&un, &yn, None, na, nb, 0), &yv);
    let mut th = Theta {
        na,
        nb,
        nc,
        v: DVector::from_iterator(
            na + nb + nc,
            arx.iter().copied().chain(std::iter::repeat_n(T::zero(), nc)),
        ),
    };

    if nc > 0 {
        let mut e: Vec<T> = prediction_errors(&th, &un, &yn);
        for _ in 0..ELS_ITERATIONS {
            let phi = regressor(&un, &yn, Some(&e), na, nb, nc);
            let (v, _) = lstsq(&phi, &yv);
            th.v = v;
            stabilize_c(&mut th);
            e = prediction_errors(&th, &un, &yn);
        }
    }

    let th = gauss_newton(th, &un, &yn)?;
    let e = prediction_errors(&th, &un, &yn);

    let scale_b = if sy == T::zero() { T::one() / su } else { sy / su };
    Ok(ArmaxModel {
        na,
        nb,
        nc,
        a: (0..na).map(|i| th.a(i)).collect(),
        b: (0..nb).map(|j| th.b(j) * scale_b).collect(),
        c: (0..nc).map(|k| th.c(k)).collect(),
        sample_time,
        noise_variance: {
            let v = e.iter().fold(T::zero(), |s, &x| s + x * x) / T::count(len);
            if sy == T::zero() {
                v
            } else {
                v * sy * sy
            }
        },
    })
}

fn gauss_newton<T: Scalar>(mut th: Theta<T>, u: &[T], y: &[T]) -> Result<Theta<T>, SysidError> {
    let n = y.len();
    let p = th.v.len();
    let mut e = prediction_errors(&th, u, y);
    let mut v = cost(&e);
    if !v.is_finite() {
        return Err(SysidError::NonConvergent);
    }
    let v_start = v;
    let floor = cost(y) * T::lit(1e-24);
    let tol = RealField::max(T::lit(GN_REL_TOL), T::default_epsilon() * T::lit(16.0));

    for _ in 0..GN_MAX_ITERATIONS {
        if v <= floor {
            return Ok(th);
        }
        // ψ = φ filtered by 1/C
        let mut psi = DMatrix::<T>::zeros(n, p);
        for t in 0..n {
            for col in 0..p {
                let mut val = if col < th.na {
                    -lag(y, t, col + 1)
                } else if col < th.na + th.nb {
                    lag(u, t, col - th.na)
                } else {
                    lag(&e, t, col - th.na - th.nb + 1)
                };
                for k in 0..th.nc {
                    if t > k {
                        val -= th.c(k) * psi[(t - k - 1, col)];
                    }
                }
                psi[(t, col)] = val;
            }
        }
        let (step, _) = lstsq(&psi, &DVector::from_column_slice(&e));

        let mut mu = T::one();
        let mut improved = None;
        for _ in 0..30 {
            let mut cand = th.clone();
            cand.v += &step * mu;
            if is_schur_stable(&cand.c_poly()) {
                let ec = prediction_errors(&cand, u, y);
                let vc = cost(&ec);
                if vc.is_finite() && vc < v {
                    improved = Some((cand, ec, vc));
                    break;
                }
            }
            mu *= T::lit(0.5);
        }
        match improved {
            Some((cand, ec, vc)) => {
                let rel = (v - vc) / v;
                th = cand;
                e = ec;
                v = vc;
                if rel < tol {
                    return Ok(th);
                }
            }
            // no descent direction left: stationary point
            None => return Ok(th),
        }
    }
    if v >= v_start {
        return Err(SysidError::NonConvergent);
    }
    Ok(th)
}
