//! End-to-end regional workflow: filter, locate the event, cut the inertial
//! window, detect each region's pilot-bus and identify its inertia.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, SysidError};
use crate::gridsim::SimOutput;
use crate::metrics::{mean_series, nrmse, quartile_threshold, relative_error, ValidationReport};
use crate::region::RegionSpec;
use crate::signal::{
    detect_disturbance, extract_window, BusKind, InertialWindow, MeasurementSet, DEFAULT_FILTER_WINDOW,
    DEFAULT_MIN_BUSES, DEFAULT_NOMINAL_HZ, DEFAULT_ROCOF_THRESHOLD_HZ_S, DEFAULT_WINDOW_S,
};
use crate::sysid::{boundary_power, estimate_region_inertia, InertiaEstimate, SweepOptions};
use crate::tda::{detect_pilot_bus, MetricForm, TypicalityReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub filter_window: usize,
    pub window_s: f64,
    pub metric_form: MetricForm,
    pub sweep: SweepOptions,
    pub rocof_threshold_hz_s: f64,
    pub min_buses: usize,
    pub nominal_hz: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            filter_window: DEFAULT_FILTER_WINDOW,
            window_s: DEFAULT_WINDOW_S,
            metric_form: MetricForm::default(),
            sweep: SweepOptions::default(),
            rocof_threshold_hz_s: DEFAULT_ROCOF_THRESHOLD_HZ_S,
            min_buses: DEFAULT_MIN_BUSES,
            nominal_hz: DEFAULT_NOMINAL_HZ,
        }
    }
}

/// Simulator ground truth used for validation columns.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub f_coi: BTreeMap<String, Vec<f64>>,
    pub h_true: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn from_simulation(out: &SimOutput) -> Self {
        Self {
            f_coi: out.f_coi_true.clone(),
            h_true: out.h_true.clone(),
        }
    }

    /// Reads a `truth.json` written by the simulator together with the COI
    /// table it points to.
    pub fn load(path: &Path) -> Result<Self, Error> {
        #[derive(Deserialize)]
        struct Region {
            region_id: String,
            h_true: f64,
        }
        #[derive(Deserialize)]
        struct Truth {
            f_coi_true_csv: String,
            regions: Vec<Region>,
        }
        let truth: Truth = serde_json::from_reader(File::open(path)?)?;
        let coi_path = path.parent().unwrap_or(Path::new(".")).join(&truth.f_coi_true_csv);
        let mut rdr = csv::Reader::from_path(&coi_path).map_err(|e| Error::Io(e.into()))?;
        let ids: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Io(e.into()))?
            .iter()
            .skip(1)
            .map(str::to_string)
            .collect();
        let mut f_coi: BTreeMap<String, Vec<f64>> = ids.iter().map(|id| (id.clone(), Vec::new())).collect();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::Io(e.into()))?;
            for (id, cell) in ids.iter().zip(row.iter().skip(1)) {
                let v = cell
                    .trim()
                    .parse()
                    .map_err(|_| std::io::Error::other(format!("bad COI value `{cell}`")))?;
                f_coi.get_mut(id).expect("column present").push(v);
            }
        }
        Ok(Self {
            f_coi,
            h_true: truth.regions.into_iter().map(|r| (r.region_id, r.h_true)).collect(),
        })
    }
}

/// Window series of one region for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub time_s: Vec<f64>,
    pub f_pb: Vec<f64>,
    pub f_coi_true: Option<Vec<f64>>,
    pub f_g: Option<Vec<f64>>,
    pub f_b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionOutcome {
    pub report: ValidationReport,
    pub typicality: Option<TypicalityReport>,
    pub estimate: Option<InertiaEstimate<f64>>,
    #[serde(skip)]
    pub plot: Option<PlotSeries>,
    /// Every identified model was rejected.
    pub no_accepted_model: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub settings: PipelineSettings,
    pub event_index: usize,
    pub event_time_s: f64,
    pub regions: Vec<RegionOutcome>,
}

impl PipelineOutput {
    /// True when at least one region ended without an accepted model.
    pub fn any_unestimated(&self) -> bool {
        self.regions.iter().any(|r| r.no_accepted_model)
    }

    pub fn reports(&self) -> Vec<&ValidationReport> {
        self.regions.iter().map(|r| &r.report).collect()
    }

    /// Writes `reports.json`, `reports.csv`, `typicality.json`,
    /// `inertia.json` and one `plot_<region>.csv` per region.
    pub fn write_to(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Reports<'a> {
            metric_form: MetricForm,
            settings: &'a PipelineSettings,
            event_index: usize,
            event_time_s: f64,
            reports: Vec<&'a ValidationReport>,
        }
        write_json(
            &dir.join("reports.json"),
            &Reports {
                metric_form: self.settings.metric_form,
                settings: &self.settings,
                event_index: self.event_index,
                event_time_s: self.event_time_s,
                reports: self.reports(),
            },
        )?;
        write_reports_csv(&dir.join("reports.csv"), self.reports())?;
        let typ: Vec<&TypicalityReport> = self.regions.iter().filter_map(|r| r.typicality.as_ref()).collect();
        write_json(&dir.join("typicality.json"), &typ)?;
        let est: BTreeMap<&str, &Option<InertiaEstimate<f64>>> = self
            .regions
            .iter()
            .map(|r| (r.report.region_id.as_str(), &r.estimate))
            .collect();
        write_json(&dir.join("inertia.json"), &est)?;
        for r in &self.regions {
            if let Some(p) = &r.plot {
                write_plot(&dir.join(format!("plot_{}.csv", r.report.region_id)), p)?;
            }
        }
        Ok(())
    }
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_reports_csv<'a>(
    path: &Path,
    reports: impl IntoIterator<Item = &'a ValidationReport>,
) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(ValidationReport::CSV_HEADER).map_err(io)?;
    for r in reports {
        w.write_record(r.csv_row()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot(path: &Path, p: &PlotSeries) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "time_s,f_pb,f_coi_true,f_g,f_b")?;
    let opt = |s: &Option<Vec<f64>>, i: usize| s.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
    for i in 0..p.time_s.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.time_s[i],
            p.f_pb[i],
            opt(&p.f_coi_true, i),
            opt(&p.f_g, i),
            p.f_b[i]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Filters the set, finds the event and returns the inertial window.
pub fn prepare_window(
    set: &MeasurementSet<f64>,
    settings: &PipelineSettings,
) -> Result<(MeasurementSet<f64>, InertialWindow<f64>), Error> {
    let filtered = set.filtered(settings.filter_window)?;
    let t0 = detect_disturbance(&filtered, settings.rocof_threshold_hz_s, settings.min_buses)?;
    let window = extract_window(&filtered, t0, settings.window_s)?;
    Ok((filtered, window))
}

/// Pilot-bus frequency deviation in pu and boundary power for one region.
pub fn identification_data(
    window: &InertialWindow<f64>,
    region: &RegionSpec,
    pilot_bus: &str,
    nominal_hz: f64,
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let k = window
        .index_of(pilot_bus)
        .ok_or_else(|| SysidError::UnknownBus(pilot_bus.to_string()))?;
    let y = window.delta_freq[k].iter().map(|v| v / nominal_hz).collect();
    let u = boundary_power(window, &region.tie_lines)?;
    Ok((u, y))
}

/// Runs every region; failures are recorded in that region's report.
pub fn run_pipeline(
    set: &MeasurementSet<f64>,
    regions: &[RegionSpec],
    truth: Option<&GroundTruth>,
    settings: &PipelineSettings,
) -> Result<PipelineOutput, Error> {
    let (filtered, window) = prepare_window(set, settings)?;
    let mut ordered: Vec<&RegionSpec> = regions.iter().collect();
    ordered.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let outcomes = ordered
        .par_iter()
        .map(|r| run_region(&filtered, &window, r, truth, settings))
        .collect();
    Ok(PipelineOutput {
        settings: settings.clone(),
        event_index: window.t0_index,
        event_time_s: filtered.t[window.t0_index],
        regions: outcomes,
    })
}

fn run_region(
    set: &MeasurementSet<f64>,
    window: &InertialWindow<f64>,
    region: &RegionSpec,
    truth: Option<&GroundTruth>,
    settings: &PipelineSettings,
) -> RegionOutcome {
    let mut report = ValidationReport {
        region_id: region.region_id.clone(),
        h_ref: truth
            .and_then(|t| t.h_true.get(&region.region_id).copied())
            .or(region.h_true),
        ..ValidationReport::default()
    };
    let mut outcome = RegionOutcome {
        report: report.clone(),
        typicality: None,
        estimate: None,
        plot: None,
        no_accepted_model: false,
    };
    let tagged = |e: &dyn std::fmt::Display| format!("region {}: {e}", region.region_id);

    let typ = match detect_pilot_bus(window, region, settings.metric_form) {
        Ok(t) => t,
        Err(e) => {
            report.error = Some(tagged(&e));
            outcome.report = report;
            return outcome;
        }
    };
    report.pilot_bus = Some(typ.pilot_bus.clone());
    outcome.typicality = Some(typ.report(&region.region_id));

    let f_coi = truth.and_then(|t| t.f_coi.get(&region.region_id));
    match validation_series(set, window, region, &typ.pilot_bus, f_coi) {
        Ok((plot, stats)) => {
            outcome.plot = Some(plot);
            if let Some(s) = stats {
                report.nrmse_pb = Some(s.pb);
                report.nrmse_gen_mean = s.gen_mean;
                report.nrmse_bus_mean = Some(s.bus_mean);
                report.first_quartile_threshold = s.quartile;
            }
        }
        Err(e) => report.error = Some(tagged(&e)),
    }

    let result = identification_data(window, region, &typ.pilot_bus, settings.nominal_hz).and_then(|(u, y)| {
        estimate_region_inertia(&u, &y, 1.0 / window.sample_rate, &settings.sweep).map_err(Error::from)
    });
    match result {
        Ok(est) => {
            report.h_est = Some(est.h_est);
            report.accepted_models = est.accepted_models;
            if let Some(h_ref) = report.h_ref {
                report.re_percent = Some(relative_error(est.h_est, h_ref));
            }
            outcome.estimate = Some(est);
        }
        Err(e) => {
            outcome.no_accepted_model = matches!(e, Error::Sysid(SysidError::NoAcceptedModel));
            report.error = Some(tagged(&e));
        }
    }
    outcome.report = report;
    outcome
}

struct NrmseStats {
    pb: f64,
    gen_mean: Option<f64>,
    bus_mean: f64,
    quartile: Option<f64>,
}

fn validation_series(
    set: &MeasurementSet<f64>,
    window: &InertialWindow<f64>,
    region: &RegionSpec,
    pilot: &str,
    f_coi: Option<&Vec<f64>>,
) -> Result<(PlotSeries, Option<NrmseStats>), Error> {
    let range = window.t0_index..window.t0_index + window.len();
    let series = |id: &str| -> Result<&[f64], Error> {
        set.channel(id)
            .map(|c| &c.freq[range.clone()])
            .ok_or_else(|| SysidError::UnknownBus(id.to_string()).into())
    };
    let mut members = region.buses.clone();
    members.sort();
    members.dedup();
    let bus_f: Vec<&[f64]> = members.iter().map(|b| series(b)).collect::<Result<_, _>>()?;
    let gen_f: Vec<&[f64]> = members
        .iter()
        .zip(&bus_f)
        .filter(|(b, _)| set.channel(b).is_some_and(|c| c.kind == BusKind::Generator))
        .map(|(_, f)| *f)
        .collect();
    let f_pb = series(pilot)?.to_vec();
    let f_b = mean_series(&bus_f)?;
    let f_g = if gen_f.is_empty() { None } else { Some(mean_series(&gen_f)?) };
    let coi = match f_coi {
        Some(c) if c.len() >= range.end => Some(c[range.clone()].to_vec()),
        Some(c) => {
            return Err(Error::Io(std::io::Error::other(format!(
                "reference COI has {} samples, window needs {}",
                c.len(),
                range.end
            ))))
        }
        None => None,
    };
    let stats = match &coi {
        Some(c) => {
            let per_bus: Vec<f64> = bus_f.iter().map(|f| nrmse(f, c)).collect::<Result<_, _>>()?;
            Some(NrmseStats {
                pb: nrmse(&f_pb, c)?,
                gen_mean: f_g.as_ref().map(|g| nrmse(g, c)).transpose()?,
                bus_mean: nrmse(&f_b, c)?,
                quartile: quartile_threshold(&per_bus).ok(),
            })
        }
        None => None,
    };
    Ok((
        PlotSeries {
            time_s: set.t[range].to_vec(),
            f_pb,
            f_coi_true: coi,
            f_g,
            f_b,
        },
        stats,
    ))
}

/// Per-bus NRMSE of a region's members against a reference over the window.
pub fn member_nrmse(
    set: &MeasurementSet<f64>,
    window: &InertialWindow<f64>,
    region: &RegionSpec,
    f_coi: &[f64],
) -> Result<BTreeMap<String, f64>, Error> {
    let range = window.t0_index..window.t0_index + window.len();
    let reference = &f_coi[range.clone()];
    region
        .buses
        .iter()
        .map(|b| {
            let c = set.channel(b).ok_or_else(|| SysidError::UnknownBus(b.clone()))?;
            Ok((b.clone(), nrmse(&c.freq[range.clone()], reference)?))
        })
        .collect()
}
