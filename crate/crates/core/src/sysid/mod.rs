//! Regional inertia identification from boundary power and pilot-bus
//! frequency.

mod armax;
mod linalg;
mod reduction;
mod stability;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use armax::{estimate_armax, ArmaxModel, MAX_CONDITION};
pub use reduction::{hankel_singular_values, reduce_to_first_order, to_continuous, ContinuousStateSpace, FirstOrderTF};
pub use stability::{is_schur_stable, STABILITY_RADIUS};

use crate::error::SysidError;
use crate::region::tie_orientation;
use crate::scalar::{mean, norm2, Scalar};
use crate::signal::InertialWindow;

pub const DEFAULT_NRSE_GATE: f64 = 95.0;
pub const DEFAULT_ORDERS: std::ops::RangeInclusive<usize> = 2..=10;

/// Summed tie-line power deviation, positive for export from the region.
///
/// Entries prefixed with `-` are subtracted (see [`crate::RegionSpec`]).
pub fn boundary_power<T: Scalar>(window: &InertialWindow<T>, tie_lines: &[String]) -> Result<Vec<T>, SysidError> {
    if tie_lines.is_empty() {
        return Err(SysidError::NoTieLines);
    }
    let mut total = vec![T::zero(); window.len()];
    for entry in tie_lines {
        let (id, sign) = tie_orientation(entry);
        let k = window.index_of(id).ok_or_else(|| SysidError::UnknownBus(id.to_string()))?;
        let sign = T::lit(sign);
        for (acc, &p) in total.iter_mut().zip(&window.delta_power[k]) {
            *acc += sign * p;
        }
    }
    Ok(total)
}

/// `(1 − ‖y − ŷ‖ / ‖y − ȳ‖) · 100`.
pub fn nrse<T: Scalar>(y: &[T], y_hat: &[T]) -> Result<T, SysidError> {
    if y.len() != y_hat.len() {
        return Err(SysidError::LengthMismatch(y.len(), y_hat.len()));
    }
    let m = mean(y);
    let centered: Vec<T> = y.iter().map(|&v| v - m).collect();
    let den = norm2(&centered);
    if den == T::zero() {
        return Err(SysidError::ConstantOutput);
    }
    let resid: Vec<T> = y.iter().zip(y_hat).map(|(&a, &b)| a - b).collect();
    Ok((T::one() - norm2(&resid) / den) * T::lit(100.0))
}

/// All roots of `A(q)` strictly inside the stability radius.
pub fn check_stability<T: Scalar>(model: &ArmaxModel<T>) -> bool {
    is_schur_stable(&model.a_poly())
}

/// Inertia and damping implied by a first-order equivalent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertiaPair<T> {
    pub h: T,
    pub d: T,
}

/// `H = −1/(2·b0)`, `D = 2·H·a0`.
pub fn extract_inertia<T: Scalar>(tf: &FirstOrderTF<T>) -> Result<InertiaPair<T>, SysidError> {
    if !(tf.b0 < T::zero()) {
        return Err(SysidError::WrongSignGain(tf.b0.as_f64()));
    }
    let h = -T::one() / (T::lit(2.0) * tf.b0);
    Ok(InertiaPair {
        h,
        d: T::lit(2.0) * h * tf.a0,
    })
}

/// Which `(na, nb, nc)` triples to try and how to gate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub orders: Vec<(usize, usize, usize)>,
    pub nrse_gate: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self::equal_orders(DEFAULT_ORDERS, DEFAULT_NRSE_GATE)
    }
}

impl SweepOptions {
    /// `na = nb = nc = n` for each `n` in the range.
    pub fn equal_orders(range: std::ops::RangeInclusive<usize>, nrse_gate: f64) -> Self {
        Self {
            orders: range.map(|n| (n, n, n)).collect(),
            nrse_gate,
        }
    }

    /// Every combination of orders drawn from the range.
    pub fn full_grid(range: std::ops::RangeInclusive<usize>, nrse_gate: f64) -> Self {
        let mut orders = Vec::new();
        for na in range.clone() {
            for nb in range.clone() {
                for nc in range.clone() {
                    orders.push((na, nb, nc));
                }
            }
        }
        Self { orders, nrse_gate }
    }
}

/// Outcome for one order triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderDiagnostic<T> {
    pub orders: (usize, usize, usize),
    pub stable: bool,
    pub nrse_percent: Option<T>,
    pub h_candidate: Option<T>,
    pub d_candidate: Option<T>,
    pub reduced: Option<FirstOrderTF<T>>,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertiaEstimate<T> {
    pub h_est: T,
    pub d_est: Option<T>,
    pub accepted_models: usize,
    pub per_order: Vec<OrderDiagnostic<T>>,
}

fn evaluate_order<T: Scalar>(
    u: &[T],
    y: &[T],
    sample_time: T,
    orders: (usize, usize, usize),
    gate: T,
) -> OrderDiagnostic<T> {
    let mut diag = OrderDiagnostic {
        orders,
        stable: false,
        nrse_percent: None,
        h_candidate: None,
        d_candidate: None,
        reduced: None,
        accepted: false,
        error: None,
    };
    let (na, nb, nc) = orders;
    let model = match estimate_armax(u, y, na, nb, nc, sample_time) {
        Ok(m) => m,
        Err(e) => {
            diag.error = Some(e.to_string());
            return diag;
        }
    };
    diag.stable = check_stability(&model);
    match nrse(y, &model.simulate(u)) {
        Ok(v) => diag.nrse_percent = Some(v),
        Err(e) => {
            diag.error = Some(e.to_string());
            return diag;
        }
    }
    if !diag.stable || !(diag.nrse_percent.expect("set above") >= gate) {
        return diag;
    }
    let pair = to_continuous(&model)
        .and_then(|ss| reduce_to_first_order(&ss))
        .and_then(|tf| {
            diag.reduced = Some(tf);
            extract_inertia(&tf)
        });
    match pair {
        Ok(p) => {
            diag.h_candidate = Some(p.h);
            diag.d_candidate = Some(p.d);
            diag.accepted = true;
        }
        Err(e) => diag.error = Some(e.to_string()),
    }
    diag
}

/// Runs every order in `opts` and returns the diagnostics in order. Orders
/// are evaluated concurrently; the result does not depend on scheduling.
pub fn sweep_orders<T: Scalar>(
    u: &[T],
    y: &[T],
    sample_time: T,
    opts: &SweepOptions,
) -> Result<Vec<OrderDiagnostic<T>>, SysidError> {
    if u.len() != y.len() {
        return Err(SysidError::LengthMismatch(u.len(), y.len()));
    }
    let gate = T::lit(opts.nrse_gate);
    Ok(opts
        .orders
        .par_iter()
        .map(|&o| evaluate_order(u, y, sample_time, o, gate))
        .collect())
}

/// Averages the accepted candidates of a sweep.
pub fn summarize<T: Scalar>(per_order: Vec<OrderDiagnostic<T>>) -> Result<InertiaEstimate<T>, SysidError> {
    let accepted: Vec<&OrderDiagnostic<T>> = per_order.iter().filter(|d| d.accepted).collect();
    if accepted.is_empty() {
        return Err(SysidError::NoAcceptedModel);
    }
    let n = T::count(accepted.len());
    let h_est = accepted.iter().fold(T::zero(), |s, d| s + d.h_candidate.expect("accepted")) / n;
    let d_est = accepted.iter().fold(T::zero(), |s, d| s + d.d_candidate.expect("accepted")) / n;
    Ok(InertiaEstimate {
        h_est,
        d_est: Some(d_est),
        accepted_models: accepted.len(),
        per_order,
    })
}

/// Identifies the regional inertia from `u = ΔPe_B` (pu, export positive)
/// and `y = Δf_pb` (pu of nominal frequency).
pub fn estimate_region_inertia<T: Scalar>(
    u: &[T],
    y: &[T],
    sample_time: T,
    opts: &SweepOptions,
) -> Result<InertiaEstimate<T>, SysidError> {
    summarize(sweep_orders(u, y, sample_time, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::BusKind;

    fn window(ids: &[&str], power: Vec<Vec<f64>>) -> InertialWindow<f64> {
        InertialWindow {
            t0_index: 0,
            duration_s: 1.0,
            sample_rate: 1.0,
            bus_ids: ids.iter().map(|s| s.to_string()).collect(),
            kinds: vec![BusKind::TieLineBoundary; ids.len()],
            delta_freq: vec![vec![0.0; power[0].len()]; ids.len()],
            delta_power: power,
        }
    }

    #[test]
    fn boundary_sum_and_orientation() {
        let w = window(&["L1", "L2"], vec![vec![0.0, 0.05], vec![0.0, -0.02]]);
        let p = boundary_power(&w, &["L1".into(), "L2".into()]).unwrap();
        assert!((p[1] - 0.03).abs() < 1e-15);
        let p = boundary_power(&w, &["L1".into(), "-L2".into()]).unwrap();
        assert!((p[1] - 0.07).abs() < 1e-15);
        assert!(matches!(boundary_power(&w, &[]), Err(SysidError::NoTieLines)));
        assert!(matches!(
            boundary_power(&w, &["L9".into()]),
            Err(SysidError::UnknownBus(_))
        ));
    }

    #[test]
    fn nrse_reference_cases() {
        let y = [1.0f64, 2.0, 4.0, 3.0];
        assert_eq!(nrse(&y, &y).unwrap(), 100.0);
        assert!(nrse(&y, &[2.5; 4]).unwrap().abs() < 1e-12);
        assert!(nrse(&y, &[-5.0; 4]).unwrap() < 0.0);
        assert!(matches!(nrse(&[1.0; 3], &[1.0; 3]), Err(SysidError::ConstantOutput)));
    }

    #[test]
    fn inertia_from_gain() {
        let p = extract_inertia(&FirstOrderTF { b0: -0.1f64, a0: 0.2 }).unwrap();
        assert!((p.h - 5.0).abs() < 1e-15);
        assert!((p.d - 2.0).abs() < 1e-15);
        let p = extract_inertia(&FirstOrderTF { b0: -1.0f64 / 62.0, a0: 1.0 / 62.0 }).unwrap();
        assert!((p.h - 31.0).abs() < 1e-12);
        assert!(matches!(
            extract_inertia(&FirstOrderTF { b0: 0.1, a0: 0.2 }),
            Err(SysidError::WrongSignGain(_))
        ));
    }

    #[test]
    fn inertia_round_trip_is_exact_for_dyadic_values() {
        for h in [0.5f64, 1.0, 4.0, 31.0, 1050.0] {
            let tf = FirstOrderTF { b0: -1.0 / (2.0 * h), a0: 1.0 };
            assert!((extract_inertia(&tf).unwrap().h - h).abs() <= 1e-12 * h);
        }
    }

    #[test]
    fn stability_from_model() {
        let mut m = ArmaxModel {
            na: 1,
            nb: 1,
            nc: 0,
            a: vec![-0.5],
            b: vec![1.0],
            c: vec![],
            sample_time: 1.0,
            noise_variance: 0.0,
        };
        assert!(check_stability(&m));
        m.a = vec![-1.0];
        assert!(!check_stability(&m));
    }

    #[test]
    fn unexcited_input_has_no_model() {
        let u = vec![0.0; 200];
        let y: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let r = estimate_region_inertia(&u, &y, 1.0 / 60.0, &SweepOptions::default());
        assert!(matches!(r, Err(SysidError::NoAcceptedModel)));
    }

    #[test]
    fn grids() {
        assert_eq!(SweepOptions::default().orders.len(), 9);
        assert_eq!(SweepOptions::full_grid(2..=10, 95.0).orders.len(), 729);
    }
}
