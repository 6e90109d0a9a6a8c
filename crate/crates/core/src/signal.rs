//! Measurement ingestion, filtering and inertial-window extraction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SignalError;
use crate::scalar::Scalar;

pub const DEFAULT_FILTER_WINDOW: usize = 5;
pub const DEFAULT_WINDOW_S: f64 = 2.0;
pub const DEFAULT_ROCOF_THRESHOLD_HZ_S: f64 = 0.05;
pub const DEFAULT_MIN_BUSES: usize = 2;
pub const DEFAULT_SYSTEM_BASE_MVA: f64 = 100.0;
pub const DEFAULT_NOMINAL_HZ: f64 = 60.0;

/// Allowed jitter on the sampling grid, seconds.
const GRID_TOLERANCE_S: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Generator,
    MotorLoad,
    Transmission,
    TieLineBoundary,
}

impl Default for BusKind {
    fn default() -> Self {
        BusKind::Transmission
    }
}

/// Frequency (Hz) and injected active power (pu) recorded at one bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusChannel<T> {
    pub bus_id: String,
    pub freq: Vec<T>,
    pub power: Vec<T>,
    pub kind: BusKind,
}

/// Time-aligned per-bus series on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet<T> {
    pub sample_rate: T,
    pub t: Vec<T>,
    pub buses: Vec<BusChannel<T>>,
    pub disturbance_index: Option<usize>,
}

impl<T: Scalar> MeasurementSet<T> {
    /// Builds a set, checking lengths and grid uniformity. Channels are sorted
    /// by `bus_id`.
    pub fn new(
        sample_rate: T,
        t: Vec<T>,
        mut buses: Vec<BusChannel<T>>,
    ) -> Result<Self, SignalError> {
        if !(sample_rate > T::zero()) {
            return Err(SignalError::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        let n = t.len();
        for b in &buses {
            for len in [b.freq.len(), b.power.len()] {
                if len != n {
                    return Err(SignalError::RaggedSeries {
                        bus_id: b.bus_id.clone(),
                        found: len,
                        expected: n,
                    });
                }
            }
        }
        let step = (T::one() / sample_rate).as_f64();
        for w in t.windows(2) {
            let dt = (w[1] - w[0]).as_f64();
            if (dt - step).abs() > grid_tolerance::<T>(step) {
                return Err(SignalError::NonUniformSampling {
                    time_s: w[1].as_f64(),
                    step_s: dt,
                    nominal_s: step,
                });
            }
        }
        buses.sort_by(|a, b| a.bus_id.cmp(&b.bus_id));
        for w in buses.windows(2) {
            if w[0].bus_id == w[1].bus_id {
                return Err(SignalError::InvalidArgument(format!(
                    "bus `{}` appears twice",
                    w[0].bus_id
                )));
            }
        }
        Ok(Self {
            sample_rate,
            t,
            buses,
            disturbance_index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn channel(&self, bus_id: &str) -> Option<&BusChannel<T>> {
        self.buses
            .binary_search_by(|b| b.bus_id.as_str().cmp(bus_id))
            .ok()
            .map(|i| &self.buses[i])
    }

    /// Applies [`moving_median`] to every frequency and power series.
    pub fn filtered(&self, window: usize) -> Result<Self, SignalError> {
        let buses = self
            .buses
            .iter()
            .map(|b| {
                Ok(BusChannel {
                    bus_id: b.bus_id.clone(),
                    freq: moving_median(&b.freq, window)?,
                    power: moving_median(&b.power, window)?,
                    kind: b.kind,
                })
            })
            .collect::<Result<Vec<_>, SignalError>>()?;
        Ok(Self {
            sample_rate: self.sample_rate,
            t: self.t.clone(),
            buses,
            disturbance_index: self.disturbance_index,
        })
    }
}

fn grid_tolerance<T: Scalar>(step: f64) -> f64 {
    // f32 grids cannot hold 1e-9 s over long records.
    let eps = T::default_epsilon().as_f64();
    GRID_TOLERANCE_S.max(eps * 1e4 * step)
}

/// Schema options for CSV ingestion.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub nominal_hz: f64,
    /// Half-width of the accepted frequency band around `nominal_hz`.
    pub freq_tolerance_hz: f64,
    /// Channel kinds by bus id; unlisted buses are `Transmission`.
    pub kinds: BTreeMap<String, BusKind>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            nominal_hz: DEFAULT_NOMINAL_HZ,
            freq_tolerance_hz: 5.0,
            kinds: BTreeMap::new(),
        }
    }
}

/// Optional JSON companion of a measurement CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default = "default_base")]
    pub system_base_mva: f64,
    #[serde(default = "default_nominal")]
    pub nominal_hz: f64,
    #[serde(default)]
    pub kinds: BTreeMap<String, BusKind>,
}

fn default_base() -> f64 {
    DEFAULT_SYSTEM_BASE_MVA
}

fn default_nominal() -> f64 {
    DEFAULT_NOMINAL_HZ
}

impl Default for Sidecar {
    fn default() -> Self {
        Self {
            system_base_mva: DEFAULT_SYSTEM_BASE_MVA,
            nominal_hz: DEFAULT_NOMINAL_HZ,
            kinds: BTreeMap::new(),
        }
    }
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Self, SignalError> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            nominal_hz: self.nominal_hz,
            kinds: self.kinds.clone(),
            ..CsvOptions::default()
        }
    }
}

const COLUMNS: [&str; 4] = ["time_s", "bus_id", "freq_hz", "p_pu"];

pub fn load_pmu_csv<T: Scalar>(
    path: &Path,
    opts: &CsvOptions,
) -> Result<MeasurementSet<T>, SignalError> {
    read_pmu_csv(File::open(path)?, opts)
}

/// Parses the long-format `time_s,bus_id,freq_hz,p_pu` table.
pub fn read_pmu_csv<T: Scalar, R: Read>(
    reader: R,
    opts: &CsvOptions,
) -> Result<MeasurementSet<T>, SignalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SignalError::MissingColumn(name.to_string()))?;
    }

    let mut rows: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |k: usize| -> Result<&str, SignalError> {
            rec.get(idx[k]).ok_or(SignalError::Parse {
                row,
                msg: format!("missing `{}`", COLUMNS[k]),
            })
        };
        let num = |k: usize| -> Result<f64, SignalError> {
            let s = field(k)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SignalError::Parse {
                    row,
                    msg: format!("`{}` = {s:?} is not a finite number", COLUMNS[k]),
                })
        };
        let (time, freq, p) = (num(0)?, num(2)?, num(3)?);
        rows.entry(field(1)?.to_string())
            .or_default()
            .push((time, freq, p));
    }
    if rows.is_empty() {
        return Err(SignalError::InvalidArgument("no data rows".into()));
    }

    for (bus, series) in rows.iter_mut() {
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = series.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(SignalError::DuplicateSample {
                bus_id: bus.clone(),
                time_s: w[0].0,
            });
        }
    }

    let (first_bus, reference) = rows.iter().next().expect("non-empty");
    let times: Vec<f64> = reference.iter().map(|r| r.0).collect();
    if times.len() < 2 {
        return Err(SignalError::InvalidArgument(format!(
            "bus `{first_bus}` has fewer than 2 samples"
        )));
    }
    let mut diffs: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(f64::total_cmp);
    let nominal = diffs[diffs.len() / 2];
    let tol = grid_tolerance::<T>(nominal);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        if dt > 1.5 * nominal || (dt - nominal).abs() > tol {
            return Err(SignalError::NonUniformSampling {
                time_s: w[1],
                step_s: dt,
                nominal_s: nominal,
            });
        }
    }
    let mut sample_rate = 1.0 / nominal;
    if (sample_rate - sample_rate.round()).abs() < 1e-6 * sample_rate {
        sample_rate = sample_rate.round();
    }

    let (lo, hi) = (
        opts.nominal_hz - opts.freq_tolerance_hz,
        opts.nominal_hz + opts.freq_tolerance_hz,
    );
    let mut buses = Vec::with_capacity(rows.len());
    for (bus, series) in &rows {
        if series.len() != times.len() {
            return Err(SignalError::RaggedSeries {
                bus_id: bus.clone(),
                found: series.len(),
                expected: times.len(),
            });
        }
        for (r, &t) in series.iter().zip(&times) {
            if (r.0 - t).abs() > tol {
                return Err(SignalError::RaggedSeries {
                    bus_id: bus.clone(),
                    found: series.len(),
                    expected: times.len(),
                });
            }
            if !(lo..=hi).contains(&r.1) {
                return Err(SignalError::FrequencyOutOfBounds {
                    bus_id: bus.clone(),
                    value: r.1,
                    lo,
                    hi,
                });
            }
        }
        buses.push(BusChannel {
            bus_id: bus.clone(),
            freq: series.iter().map(|r| T::lit(r.1)).collect(),
            power: series.iter().map(|r| T::lit(r.2)).collect(),
            kind: opts.kinds.get(bus).copied().unwrap_or_default(),
        });
    }
    MeasurementSet::new(
        T::lit(sample_rate),
        times.into_iter().map(T::lit).collect(),
        buses,
    )
}

/// Writes the set in the long CSV layout, rows ordered by time then bus id.
pub fn write_pmu_csv<T: Scalar, W: Write>(
    set: &MeasurementSet<T>,
    writer: W,
) -> Result<(), SignalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for (i, t) in set.t.iter().enumerate() {
        let time = t.as_f64().to_string();
        for b in &set.buses {
            w.write_record([
                time.as_str(),
                b.bus_id.as_str(),
                &b.freq[i].as_f64().to_string(),
                &b.power[i].as_f64().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_pmu_csv<T: Scalar>(set: &MeasurementSet<T>, path: &Path) -> Result<(), SignalError> {
    write_pmu_csv(set, File::create(path)?)
}

/// Centered moving median. Edge samples use the truncated window, and an
/// even-sized truncated window takes the mean of its two middle values.
pub fn moving_median<T: Scalar>(series: &[T], window: usize) -> Result<Vec<T>, SignalError> {
    if window % 2 == 0 {
        return Err(SignalError::EvenWindow(window));
    }
    if window > series.len() {
        return Err(SignalError::WindowTooLarge {
            window,
            len: series.len(),
        });
    }
    let half = window / 2;
    let n = series.len();
    let mut buf = Vec::with_capacity(window);
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            buf.clear();
            buf.extend_from_slice(&series[lo..=hi]);
            buf.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                (buf[m / 2 - 1] + buf[m / 2]) / T::lit(2.0)
            }
        })
        .collect())
}

/// Finds the disturbance onset: the sample just before the first step whose
/// two-point RoCoF exceeds `rocof_threshold` (Hz/s) on at least `min_buses`
/// bus channels at once. Tie-line channels do not vote.
pub fn detect_disturbance<T: Scalar>(
    set: &MeasurementSet<T>,
    rocof_threshold: T,
    min_buses: usize,
) -> Result<usize, SignalError> {
    if !(rocof_threshold > T::zero()) || !rocof_threshold.is_finite() {
        return Err(SignalError::InvalidArgument(format!(
            "RoCoF threshold must be positive, got {rocof_threshold}"
        )));
    }
    if min_buses == 0 {
        return Err(SignalError::InvalidArgument(
            "min_buses must be at least 1".into(),
        ));
    }
    let voters: Vec<&BusChannel<T>> = set
        .buses
        .iter()
        .filter(|b| b.kind != BusKind::TieLineBoundary)
        .collect();
    (1..set.len())
        .find(|&i| {
            voters
                .iter()
                .filter(|b| ((b.freq[i] - b.freq[i - 1]) * set.sample_rate).abs() > rocof_threshold)
                .count()
                >= min_buses
        })
        .map(|i| i - 1)
        .ok_or(SignalError::NoEventFound)
}

/// Post-event deviations of every channel over the inertial window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InertialWindow<T> {
    pub t0_index: usize,
    pub duration_s: T,
    pub sample_rate: T,
    pub bus_ids: Vec<String>,
    pub kinds: Vec<BusKind>,
    pub delta_freq: Vec<Vec<T>>,
    pub delta_power: Vec<Vec<T>>,
}

impl<T: Scalar> InertialWindow<T> {
    pub fn len(&self) -> usize {
        self.delta_freq.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, bus_id: &str) -> Option<usize> {
        self.bus_ids.iter().position(|b| b == bus_id)
    }
}

/// Number of samples covering `duration_s` inclusive of both ends.
pub fn window_len<T: Scalar>(duration_s: T, sample_rate: T) -> usize {
    (duration_s * sample_rate).as_f64().round() as usize + 1
}

pub fn extract_window<T: Scalar>(
    set: &MeasurementSet<T>,
    t0: usize,
    duration_s: T,
) -> Result<InertialWindow<T>, SignalError> {
    if !(duration_s > T::zero()) {
        return Err(SignalError::InvalidArgument(
            "window duration must be positive".into(),
        ));
    }
    let len = window_len(duration_s, set.sample_rate);
    if t0 + len > set.len() {
        return Err(SignalError::WindowOutOfRange {
            t0,
            len,
            available: set.len(),
        });
    }
    let deltas = |x: &[T]| -> Vec<T> {
        let base = x[t0];
        x[t0..t0 + len].iter().map(|&v| v - base).collect()
    };
    Ok(InertialWindow {
        t0_index: t0,
        duration_s,
        sample_rate: set.sample_rate,
        bus_ids: set.buses.iter().map(|b| b.bus_id.clone()).collect(),
        kinds: set.buses.iter().map(|b| b.kind).collect(),
        delta_freq: set.buses.iter().map(|b| deltas(&b.freq)).collect(),
        delta_power: set.buses.iter().map(|b| deltas(&b.power)).collect(),
    })
}
