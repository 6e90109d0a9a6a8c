//! Reference quantities and validation statistics.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::scalar::Scalar;

/// Inertia-weighted average of frequency series.
pub fn compute_fcoi<T: Scalar, S: AsRef<[T]>>(freqs: &[S], weights: &[T]) -> Result<Vec<T>, MetricsError> {
    if freqs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if freqs.len() != weights.len() {
        return Err(MetricsError::LengthMismatch(freqs.len(), weights.len()));
    }
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(MetricsError::NonPositiveWeight);
    }
    let n = freqs[0].as_ref().len();
    if let Some(bad) = freqs.iter().find(|f| f.as_ref().len() != n) {
        return Err(MetricsError::LengthMismatch(n, bad.as_ref().len()));
    }
    let total = weights.iter().fold(T::zero(), |s, &w| s + w);
    Ok((0..n)
        .map(|t| {
            freqs
                .iter()
                .zip(weights)
                .fold(T::zero(), |s, (f, &w)| s + f.as_ref()[t] * w)
                / total
        })
        .collect())
}

/// Root-mean-square deviation from `f_coi`, normalized by the mean of
/// `f_coi`, in percent.
pub fn nrmse<T: Scalar>(candidate: &[T], f_coi: &[T]) -> Result<T, MetricsError> {
    if candidate.len() != f_coi.len() {
        return Err(MetricsError::LengthMismatch(candidate.len(), f_coi.len()));
    }
    if f_coi.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = T::count(f_coi.len());
    let m = f_coi.iter().fold(T::zero(), |s, &v| s + v) / n;
    if m == T::zero() {
        return Err(MetricsError::ZeroMean);
    }
    let sq = candidate
        .iter()
        .zip(f_coi)
        .fold(T::zero(), |s, (&c, &r)| s + (c - r) * (c - r));
    Ok((sq / n).sqrt() / m.abs() * T::lit(100.0))
}

/// Quantile with linear interpolation between order statistics at position
/// `p·(n−1)` (the inclusive convention).
pub fn quantile_inclusive<T: Scalar>(values: &[T], p: T) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = p * T::count(v.len() - 1);
    let lo = pos.floor().as_f64() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - T::count(lo);
    Some(v[lo] + (v[hi] - v[lo]) * frac)
}

/// First quartile of per-bus NRMSE values.
pub fn quartile_threshold<T: Scalar>(values: &[T]) -> Result<T, MetricsError> {
    if values.len() < 4 {
        return Err(MetricsError::TooFewValues(values.len()));
    }
    Ok(quantile_inclusive(values, T::lit(0.25)).expect("non-empty"))
}

/// |h_est − h_ref| / h_ref in percent.
pub fn relative_error<T: Scalar>(h_est: T, h_ref: T) -> T {
    (h_est - h_ref).abs() / h_ref.abs() * T::lit(100.0)
}

/// Unweighted elementwise mean of several series.
pub fn mean_series<T: Scalar, S: AsRef<[T]>>(series: &[S]) -> Result<Vec<T>, MetricsError> {
    let ones = vec![T::one(); series.len()];
    compute_fcoi(series, &ones)
}

/// Per-region validation row, mirroring the columns of the published tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub region_id: String,
    pub pilot_bus: Option<String>,
    pub nrmse_pb: Option<f64>,
    pub nrmse_gen_mean: Option<f64>,
    pub nrmse_bus_mean: Option<f64>,
    pub first_quartile_threshold: Option<f64>,
    pub h_ref: Option<f64>,
    pub h_est: Option<f64>,
    pub re_percent: Option<f64>,
    pub accepted_models: usize,
    pub error: Option<String>,
}

impl ValidationReport {
    pub const CSV_HEADER: [&'static str; 10] = [
        "region_id",
        "pilot_bus",
        "nrmse_pb",
        "nrmse_gen_mean",
        "nrmse_bus_mean",
        "first_quartile_threshold",
        "h_ref",
        "h_est",
        "re_percent",
        "error",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.region_id.clone(),
            self.pilot_bus.clone().unwrap_or_default(),
            num(self.nrmse_pb),
            num(self.nrmse_gen_mean),
            num(self.nrmse_bus_mean),
            num(self.first_quartile_threshold),
            num(self.h_ref),
            num(self.h_est),
            num(self.re_percent),
            self.error.clone().unwrap_or_default(),
        ]
    }
}
