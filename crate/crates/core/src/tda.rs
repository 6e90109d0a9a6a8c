//! Typicality-based pilot-bus detection.
//!
//! Every region member `k` becomes a point `α(k) = [β(k,·), π(k,·)]` built
//! from pairwise Euclidean norms of frequency and power deviations; the two
//! blocks are rescaled to equal weight before comparison. A compound
//! cosine/correlation metric between points feeds cumulative proximity,
//! discrete local density and typicality; the bus with maximal typicality is
//! the pilot-bus, the member whose response sits closest to the center of the
//! regional distribution.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TdaError;
use crate::region::RegionSpec;
use crate::scalar::{mean, Scalar};
use crate::signal::InertialWindow;

/// How the cosine and correlation terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricForm {
    /// `cos_sim + corr`, a similarity (equals 2 for identical points).
    PaperLiteral,
    /// `(1 - cos_sim) + (1 - corr)`, zero for identical points.
    #[default]
    Dissimilarity,
}

impl MetricForm {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricForm::PaperLiteral => "paper_literal",
            MetricForm::Dissimilarity => "dissimilarity",
        }
    }
}

impl std::str::FromStr for MetricForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_literal" => Ok(MetricForm::PaperLiteral),
            "dissimilarity" => Ok(MetricForm::Dissimilarity),
            other => Err(format!(
                "unknown metric form `{other}` (expected `dissimilarity` or `paper_literal`)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusFeature<T> {
    pub bus_id: String,
    /// Frequency norms β(k, j) over the members j.
    pub beta: Vec<T>,
    /// Power norms π(k, j) over the members j.
    pub pi: Vec<T>,
}

impl<T: Scalar> BusFeature<T> {
    fn point(&self) -> impl Iterator<Item = T> + '_ {
        self.beta.iter().chain(&self.pi).copied()
    }

    fn dim(&self) -> usize {
        self.beta.len() + self.pi.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityResult<T> {
    pub bus_ids: Vec<String>,
    pub tau: Vec<T>,
    pub proximities: Vec<T>,
    pub densities: Vec<T>,
    pub pilot_bus: String,
    pub metric_form: MetricForm,
}

impl<T: Scalar> TypicalityResult<T> {
    pub fn tau_of(&self, bus_id: &str) -> Option<T> {
        self.bus_ids
            .iter()
            .position(|b| b == bus_id)
            .map(|i| self.tau[i])
    }

    pub fn report(&self, region_id: &str) -> TypicalityReport {
        TypicalityReport {
            region_id: region_id.to_string(),
            pilot_bus: self.pilot_bus.clone(),
            tau: self
                .bus_ids
                .iter()
                .cloned()
                .zip(self.tau.iter().map(|t| t.as_f64()))
                .collect(),
            metric_form: self.metric_form,
        }
    }
}

/// JSON form of a typicality result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub region_id: String,
    pub pilot_bus: String,
    pub tau: BTreeMap<String, f64>,
    pub metric_form: MetricForm,
}

fn pair_norm<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter()
        .zip(y)
        .fold(T::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        })
        .sqrt()
}

fn lookup<T: Scalar>(window: &InertialWindow<T>, bus: &str) -> Result<usize, TdaError> {
    window
        .index_of(bus)
        .ok_or_else(|| TdaError::UnknownBus(bus.to_string()))
}

/// β(k, j): Euclidean norm of the frequency-deviation difference.
pub fn freq_norm<T: Scalar>(window: &InertialWindow<T>, k: &str, j: &str) -> Result<T, TdaError> {
    let (k, j) = (lookup(window, k)?, lookup(window, j)?);
    Ok(pair_norm(&window.delta_freq[k], &window.delta_freq[j]))
}

/// π(k, j): Euclidean norm of the power-deviation difference.
pub fn power_norm<T: Scalar>(window: &InertialWindow<T>, k: &str, j: &str) -> Result<T, TdaError> {
    let (k, j) = (lookup(window, k)?, lookup(window, j)?);
    Ok(pair_norm(&window.delta_power[k], &window.delta_power[j]))
}

/// Builds one feature per member, each over all members in the given order.
pub fn build_features<T: Scalar>(
    window: &InertialWindow<T>,
    members: &[String],
) -> Result<Vec<BusFeature<T>>, TdaError> {
    let idx = members
        .iter()
        .map(|m| lookup(window, m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(idx
        .iter()
        .zip(members)
        .map(|(&k, id)| BusFeature {
            bus_id: id.clone(),
            beta: idx
                .iter()
                .map(|&j| pair_norm(&window.delta_freq[k], &window.delta_freq[j]))
                .collect(),
            pi: idx
                .iter()
                .map(|&j| pair_norm(&window.delta_power[k], &window.delta_power[j]))
                .collect(),
        })
        .collect())
}

/// Compound cosine + correlation metric between two feature points.
pub fn compound_distance<T: Scalar>(
    a: &BusFeature<T>,
    b: &BusFeature<T>,
    form: MetricForm,
) -> Result<T, TdaError> {
    if a.dim() != b.dim() {
        return Err(TdaError::LengthMismatch(a.dim(), b.dim()));
    }
    let check = |f: &BusFeature<T>| -> Result<(T, T), TdaError> {
        let x: Vec<T> = f.point().collect();
        let m = mean(&x);
        let norm = x.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        let var = x.iter().fold(T::zero(), |s, &v| s + (v - m) * (v - m));
        if norm == T::zero() || var == T::zero() || !norm.is_finite() {
            return Err(TdaError::DegenerateFeature(f.bus_id.clone()));
        }
        Ok((norm, m))
    };
    let (na, ma) = check(a)?;
    let (nb, mb) = check(b)?;

    let (cos_sim, corr) = if a.beta == b.beta && a.pi == b.pi {
        (T::one(), T::one())
    } else {
        let mut dot = T::zero();
        let mut cov = T::zero();
        let mut va = T::zero();
        let mut vb = T::zero();
        for (x, y) in a.point().zip(b.point()) {
            dot += x * y;
            let (dx, dy) = (x - ma, y - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        (dot / (na * nb), cov / (va.sqrt() * vb.sqrt()))
    };
    Ok(match form {
        MetricForm::PaperLiteral => cos_sim + corr,
        MetricForm::Dissimilarity => (T::one() - cos_sim) + (T::one() - corr),
    })
}

/// Cumulative proximity, local density and typicality over the features.
///
/// Exact-duplicate feature vectors are merged before the computation and
/// share their group's typicality equally.
pub fn typicality<T: Scalar>(
    features: &[BusFeature<T>],
    form: MetricForm,
) -> Result<TypicalityResult<T>, TdaError> {
    let n = features.len();
    if n < 2 {
        return Err(TdaError::TooFewBuses(n));
    }

    // group[k] = index of the representative of k's duplicate class
    let mut reps: Vec<usize> = Vec::new();
    let mut group = vec![0usize; n];
    for (k, f) in features.iter().enumerate() {
        match reps
            .iter()
            .position(|&r| features[r].beta == f.beta && features[r].pi == f.pi)
        {
            Some(g) => group[k] = g,
            None => {
                group[k] = reps.len();
                reps.push(k);
            }
        }
    }
    let m = reps.len();

    let (q, d, tau_rep) = if m == 1 {
        // every bus responds identically
        compound_distance(&features[0], &features[0], form)?;
        (vec![T::zero()], vec![T::zero()], vec![T::one()])
    } else {
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| compound_distance(&features[reps[i]], &features[reps[j]], form))
            .collect::<Result<Vec<T>, _>>()?;
        let mut delta = vec![T::zero(); m * m];
        for (&(i, j), &v) in pairs.iter().zip(&vals) {
            delta[i * m + j] = v;
            delta[j * m + i] = v;
        }
        let q: Vec<T> = (0..m)
            .map(|k| (0..m).fold(T::zero(), |s, j| s + delta[k * m + j] * delta[k * m + j]))
            .collect();
        if let Some(k) = q.iter().position(|&v| v == T::zero()) {
            return Err(TdaError::ZeroProximity(features[reps[k]].bus_id.clone()));
        }
        let q_sum = q.iter().fold(T::zero(), |s, &v| s + v);
        let two_n = T::lit(2.0) * T::count(m);
        let d: Vec<T> = q.iter().map(|&qk| q_sum / (two_n * qk)).collect();
        let d_sum = d.iter().fold(T::zero(), |s, &v| s + v);
        let tau = d.iter().map(|&dk| dk / d_sum).collect();
        (q, d, tau)
    };

    let mut sizes = vec![0usize; m];
    for &g in &group {
        sizes[g] += 1;
    }
    let tau: Vec<T> = group
        .iter()
        .map(|&g| tau_rep[g] / T::count(sizes[g]))
        .collect();
    let proximities = group.iter().map(|&g| q[g]).collect();
    let densities = group.iter().map(|&g| d[g]).collect();

    let mut best = 0;
    for k in 1..n {
        let better = tau[k] > tau[best]
            || (tau[k] == tau[best] && features[k].bus_id < features[best].bus_id);
        if better {
            best = k;
        }
    }
    Ok(TypicalityResult {
        bus_ids: features.iter().map(|f| f.bus_id.clone()).collect(),
        tau,
        proximities,
        densities,
        pilot_bus: features[best].bus_id.clone(),
        metric_form: form,
    })
}

/// Runs typicality over a region's measured buses. Members are taken in
/// lexicographic order; tie-line channels are not candidates.
pub fn detect_pilot_bus<T: Scalar>(
    window: &InertialWindow<T>,
    region: &RegionSpec,
    form: MetricForm,
) -> Result<TypicalityResult<T>, TdaError> {
    let mut members = region.buses.clone();
    members.sort();
    members.dedup();
    let mut features = build_features(window, &members)?;
    equalize_blocks(&mut features);
    typicality(&features, form)
}

/// Rescales the β and π blocks of every feature so that each block has unit
/// Frobenius norm over the region, giving frequency and power equal weight in
/// the compound metric. A block that is identically zero is left as is.
pub fn equalize_blocks<T: Scalar>(features: &mut [BusFeature<T>]) {
    let energy = |block: fn(&BusFeature<T>) -> &Vec<T>, fs: &[BusFeature<T>]| {
        fs.iter()
            .flat_map(|f| block(f).iter())
            .fold(T::zero(), |s, &v| s + v * v)
            .sqrt()
    };
    let sb = energy(|f| &f.beta, features);
    let sp = energy(|f| &f.pi, features);
    for f in features.iter_mut() {
        if sb > T::zero() {
            f.beta.iter_mut().for_each(|v| *v = *v / sb);
        }
        if sp > T::zero() {
            f.pi.iter_mut().for_each(|v| *v = *v / sp);
        }
    }
}
