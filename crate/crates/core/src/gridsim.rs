//! Classical-model multi-machine simulator producing labeled disturbance data.
//!
//! Every machine and aggregated motor is a constant-magnitude voltage source
//! `E = 1∠δ` located at its bus; machine transient reactances belong in the
//! branch list. Static loads are constant conductances `G = P0` (their
//! consumption at 1 pu voltage). The network is Kron-reduced to the device
//! buses, and passive bus voltages are recovered from the device voltages.
//!
//! A load step adds `delta_p` of conductance at the disturbance bus, so the
//! simulator keeps two reduced networks, before and after the event.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::GridError;
use crate::metrics::compute_fcoi;
use crate::region::{tie_orientation, RegionSpec};
use crate::signal::{BusChannel, BusKind, MeasurementSet, Sidecar, DEFAULT_NOMINAL_HZ, DEFAULT_SYSTEM_BASE_MVA};

/// Frequency excursion treated as loss of stability.
pub const BLOWUP_HZ: f64 = 5.0;
/// Upper bound on the integration step.
pub const MAX_STEP_S: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub bus_id: String,
    /// Inertia constant in seconds on the system base.
    #[serde(rename = "H")]
    pub h: f64,
    /// Damping in pu power per Hz of speed deviation.
    #[serde(rename = "D", default)]
    pub d: f64,
    /// Scheduled mechanical power in pu; the simulator trims it so the
    /// initial state is an exact equilibrium.
    #[serde(rename = "Pm0")]
    pub pm0: f64,
}

/// Share of the static load at `bus_id` that is represented by an aggregated
/// induction-motor swing equivalent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorLoad {
    pub bus_id: String,
    #[serde(rename = "Hm")]
    pub hm: f64,
    pub base_fraction: f64,
    #[serde(rename = "D", default)]
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticLoad {
    pub bus_id: String,
    #[serde(rename = "P0")]
    pub p0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    /// Defaults to `"{from}-{to}"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub from: String,
    pub to: String,
    pub reactance: f64,
}

impl Branch {
    pub fn branch_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| format!("{}-{}", self.from, self.to))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub bus_id: String,
    /// Added load in pu (positive = more consumption).
    pub delta_p: f64,
    pub t_event: f64,
}

/// Additive white Gaussian measurement noise on the exported channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub freq_std_hz: f64,
    #[serde(default)]
    pub power_std_pu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub machines: Vec<Machine>,
    #[serde(default)]
    pub motor_loads: Vec<MotorLoad>,
    #[serde(default)]
    pub static_loads: Vec<StaticLoad>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default = "default_base")]
    pub system_base_mva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
    /// Simulated span in seconds; defaults to the event time plus 5 s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

fn default_f0() -> f64 {
    DEFAULT_NOMINAL_HZ
}

fn default_base() -> f64 {
    DEFAULT_SYSTEM_BASE_MVA
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self, GridError> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn default_duration(&self) -> f64 {
        self.duration_s
            .unwrap_or_else(|| self.disturbance.as_ref().map_or(0.0, |d| d.t_event) + 5.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Benchmark {
    TwoArea4Mach,
    DominantInertia,
    MotorHeavy,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::TwoArea4Mach, Benchmark::DominantInertia, Benchmark::MotorHeavy];

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::TwoArea4Mach => "two_area_4mach",
            Benchmark::DominantInertia => "dominant_inertia",
            Benchmark::MotorHeavy => "motor_heavy",
        }
    }
}

impl FromStr for Benchmark {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| GridError::UnknownBenchmark(s.to_string()))
    }
}

/// One swing-equation source as seen by the integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct Device {
    pub bus_id: String,
    pub kind: BusKind,
    pub h: f64,
    /// Damping in pu power per pu speed.
    pub damping: f64,
    pub pm: f64,
    bus: usize,
}

#[derive(Clone, Debug)]
struct Network {
    /// Shunt conductance per bus.
    shunt: Vec<f64>,
    y_red: DMatrix<Complex64>,
    /// Bus voltages as a linear map of device voltages (`n_bus × n_dev`).
    v_map: DMatrix<Complex64>,
}

/// Assembled and reduced grid ready for integration.
#[derive(Clone, Debug)]
pub struct Grid {
    pub config: GridConfig,
    pub bus_ids: Vec<String>,
    pub devices: Vec<Device>,
    /// Initial rotor angles in radians.
    pub delta0: Vec<f64>,
    branches: Vec<(String, usize, usize, f64)>,
    pre: Network,
    post: Network,
}

impl Grid {
    /// Pre-disturbance reduced admittance matrix over the device buses.
    pub fn reduced_admittance(&self) -> &DMatrix<Complex64> {
        &self.pre.y_red
    }

    pub fn post_event_admittance(&self) -> &DMatrix<Complex64> {
        &self.post.y_red
    }

    /// Sum of inertia over the devices located in `buses`.
    pub fn inertia_of(&self, buses: &[String]) -> f64 {
        self.devices
            .iter()
            .filter(|d| buses.contains(&d.bus_id))
            .map(|d| d.h)
            .sum()
    }
}

fn invalid(msg: impl Into<String>) -> GridError {
    GridError::InvalidConfig(msg.into())
}

fn validate(cfg: &GridConfig, bus_ids: &[String]) -> Result<(), GridError> {
    let pos = |v: f64| v.is_finite() && v > 0.0;
    if !pos(cfg.f0) {
        return Err(invalid("f0 must be positive"));
    }
    for m in &cfg.machines {
        if !pos(m.h) {
            return Err(invalid(format!("machine at `{}` needs H > 0", m.bus_id)));
        }
        if !(m.d.is_finite() && m.d >= 0.0) || !m.pm0.is_finite() {
            return Err(invalid(format!("machine at `{}` has invalid D or Pm0", m.bus_id)));
        }
    }
    for m in &cfg.motor_loads {
        if !pos(m.hm) {
            return Err(invalid(format!("motor at `{}` needs Hm > 0", m.bus_id)));
        }
        if !(m.base_fraction > 0.0 && m.base_fraction <= 1.0) {
            return Err(invalid(format!("motor at `{}` needs base_fraction in (0, 1]", m.bus_id)));
        }
        if !cfg.static_loads.iter().any(|l| l.bus_id == m.bus_id) {
            return Err(invalid(format!("motor at `{}` has no static load to draw from", m.bus_id)));
        }
    }
    for l in &cfg.static_loads {
        if !(l.p0.is_finite() && l.p0 >= 0.0) {
            return Err(invalid(format!("load at `{}` needs P0 >= 0", l.bus_id)));
        }
    }
    let mut ids = BTreeSet::new();
    for b in &cfg.branches {
        if !pos(b.reactance) {
            return Err(invalid(format!("branch `{}` needs reactance > 0", b.branch_id())));
        }
        if b.from == b.to {
            return Err(invalid(format!("branch `{}` is a self-loop", b.branch_id())));
        }
        if !ids.insert(b.branch_id()) {
            return Err(invalid(format!("duplicate branch id `{}`", b.branch_id())));
        }
        if bus_ids.binary_search(&b.branch_id()).is_ok() {
            return Err(invalid(format!("branch id `{}` collides with a bus id", b.branch_id())));
        }
    }
    let mut seen = BTreeSet::new();
    for bus in cfg.machines.iter().map(|m| &m.bus_id).chain(cfg.motor_loads.iter().map(|m| &m.bus_id)) {
        if !seen.insert(bus) {
            return Err(invalid(format!("more than one machine or motor at `{bus}`")));
        }
    }
    if cfg.machines.is_empty() && cfg.motor_loads.is_empty() {
        return Err(invalid("no machines"));
    }
    if let Some(d) = &cfg.disturbance {
        if bus_ids.binary_search(&d.bus_id).is_err() {
            return Err(invalid(format!("disturbance bus `{}` is not in the network", d.bus_id)));
        }
        if !d.delta_p.is_finite() || !(d.t_event.is_finite() && d.t_event >= 0.0) {
            return Err(invalid("disturbance needs finite delta_p and t_event >= 0"));
        }
    }

    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &cfg.regions {
        if r.buses.is_empty() {
            return Err(invalid(format!("region `{}` has no buses", r.region_id)));
        }
        for b in &r.buses {
            if bus_ids.binary_search(b).is_err() {
                return Err(invalid(format!("region `{}` lists unknown bus `{b}`", r.region_id)));
            }
            if let Some(other) = owner.insert(b, &r.region_id) {
                return Err(invalid(format!("bus `{b}` is in regions `{other}` and `{}`", r.region_id)));
            }
        }
        for entry in &r.tie_lines {
            let (id, sign) = tie_orientation(entry);
            let br = cfg
                .branches
                .iter()
                .find(|b| b.branch_id() == id)
                .ok_or_else(|| invalid(format!("region `{}` tie-line `{id}` is not a branch", r.region_id)))?;
            let (inside, outside) = if sign > 0.0 { (&br.from, &br.to) } else { (&br.to, &br.from) };
            if !r.buses.contains(inside) || r.buses.contains(outside) {
                return Err(invalid(format!(
                    "tie-line `{entry}` does not leave region `{}` in the stated direction",
                    r.region_id
                )));
            }
        }
    }
    Ok(())
}

fn check_connected(bus_ids: &[String], branches: &[(String, usize, usize, f64)]) -> Result<(), GridError> {
    let n = bus_ids.len();
    let mut adj = vec![Vec::new(); n];
    for &(_, f, t, _) in branches {
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        for &j in &adj[k] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(k) => Err(GridError::DisconnectedGraph(bus_ids[k].clone())),
        None => Ok(()),
    }
}

/// Full bus admittance matrix: branch susceptances plus shunt conductances.
fn bus_admittance(n: usize, branches: &[(String, usize, usize, f64)], shunt: &[f64]) -> DMatrix<Complex64> {
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for &(_, f, t, x) in branches {
        let yb = Complex64::new(0.0, -1.0 / x);
        y[(f, f)] += yb;
        y[(t, t)] += yb;
        y[(f, t)] -= yb;
        y[(t, f)] -= yb;
    }
    for (k, &g) in shunt.iter().enumerate() {
        y[(k, k)] += g;
    }
    y
}

/// Eliminates passive buses. Returns the reduced matrix and the bus-voltage
/// recovery map.
fn kron_reduce(y: &DMatrix<Complex64>, dynamic: &[usize]) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>), GridError> {
    let n = y.nrows();
    let passive: Vec<usize> = (0..n).filter(|k| !dynamic.contains(k)).collect();
    let (nd, np) = (dynamic.len(), passive.len());
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])]);
    let ydd = pick(dynamic, dynamic);
    let mut v_map = DMatrix::from_element(n, nd, Complex64::new(0.0, 0.0));
    for (i, &k) in dynamic.iter().enumerate() {
        v_map[(k, i)] = Complex64::new(1.0, 0.0);
    }
    if np == 0 {
        return Ok((ydd, v_map));
    }
    let ypp = pick(&passive, &passive);
    let ypd = pick(&passive, dynamic);
    let ydp = pick(dynamic, &passive);
    let x = ypp.lu().solve(&ypd).ok_or(GridError::SingularAdmittance)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GridError::SingularAdmittance);
    }
    for (i, &k) in passive.iter().enumerate() {
        for j in 0..nd {
            v_map[(k, j)] = -x[(i, j)];
        }
    }
    Ok((ydd - ydp * x, v_map))
}

fn electrical_power(y: &DMatrix<Complex64>, delta: &[f64]) -> Vec<f64> {
    let e: Vec<Complex64> = delta.iter().map(|&d| Complex64::from_polar(1.0, d)).collect();
    (0..e.len())
        .map(|i| {
            let cur: Complex64 = (0..e.len()).map(|j| y[(i, j)] * e[j]).sum();
            (e[i] * cur.conj()).re
        })
        .collect()
}

/// Small-angle operating point: solves the linearized injection equations
/// with the first device as angle reference.
fn dc_angles(y: &DMatrix<Complex64>, target: &[f64]) -> Result<Vec<f64>, GridError> {
    let n = target.len();
    let mut delta = vec![0.0; n];
    if n == 1 {
        return Ok(delta);
    }
    let p0 = electrical_power(y, &delta);
    let jac = DMatrix::from_fn(n - 1, n - 1, |r, c| {
        let (i, j) = (r + 1, c + 1);
        if i == j {
            (0..n).filter(|&k| k != i).map(|k| y[(i, k)].im).sum()
        } else {
            -y[(i, j)].im
        }
    });
    let rhs = nalgebra::DVector::from_fn(n - 1, |r, _| target[r + 1] - p0[r + 1]);
    let sol = jac.lu().solve(&rhs).ok_or(GridError::SingularAdmittance)?;
    delta[1..].copy_from_slice(sol.as_slice());
    Ok(delta)
}

/// Assembles, validates and Kron-reduces the network and computes the
/// equilibrium operating point.
pub fn build_grid(config: &GridConfig) -> Result<Grid, GridError> {
    let mut set = BTreeSet::new();
    for b in &config.branches {
        set.insert(b.from.clone());
        set.insert(b.to.clone());
    }
    let bus_ids: Vec<String> = set.into_iter().collect();
    if bus_ids.is_empty() {
        return Err(invalid("no branches"));
    }
    let index = |id: &str| -> Result<usize, GridError> {
        bus_ids
            .binary_search_by(|b| b.as_str().cmp(id))
            .map_err(|_| GridError::DisconnectedGraph(id.to_string()))
    };
    for id in config
        .machines
        .iter()
        .map(|m| &m.bus_id)
        .chain(config.motor_loads.iter().map(|m| &m.bus_id))
        .chain(config.static_loads.iter().map(|l| &l.bus_id))
    {
        index(id)?;
    }
    validate(config, &bus_ids)?;

    let branches: Vec<(String, usize, usize, f64)> = config
        .branches
        .iter()
        .map(|b| Ok((b.branch_id(), index(&b.from)?, index(&b.to)?, b.reactance)))
        .collect::<Result<_, GridError>>()?;
    check_connected(&bus_ids, &branches)?;

    let n = bus_ids.len();
    let mut load = vec![0.0; n];
    for l in &config.static_loads {
        load[index(&l.bus_id)?] += l.p0;
    }
    let mut devices = Vec::new();
    let mut target = Vec::new();
    for m in &config.machines {
        devices.push(Device {
            bus_id: m.bus_id.clone(),
            kind: BusKind::Generator,
            h: m.h,
            damping: m.d * config.f0,
            pm: m.pm0,
            bus: index(&m.bus_id)?,
        });
        target.push(m.pm0);
    }
    let mut shunt = load.clone();
    for m in &config.motor_loads {
        let bus = index(&m.bus_id)?;
        let p_motor = m.base_fraction * load[bus];
        shunt[bus] -= p_motor;
        devices.push(Device {
            bus_id: m.bus_id.clone(),
            kind: BusKind::MotorLoad,
            h: m.hm,
            damping: m.d * config.f0,
            pm: -p_motor,
            bus,
        });
        target.push(-p_motor);
    }
    let dynamic: Vec<usize> = devices.iter().map(|d| d.bus).collect();

    let (y_red, v_map) = kron_reduce(&bus_admittance(n, &branches, &shunt), &dynamic)?;
    let pre = Network { shunt: shunt.clone(), y_red, v_map };
    let post = match &config.disturbance {
        Some(d) => {
            let k = index(&d.bus_id)?;
            let mut s = shunt.clone();
            s[k] += d.delta_p;
            let (y_red, v_map) = kron_reduce(&bus_admittance(n, &branches, &s), &dynamic)?;
            Network { shunt: s, y_red, v_map }
        }
        None => pre.clone(),
    };

    // the flat-start mismatch is shared by the machines in proportion to H
    let flat: f64 = electrical_power(&pre.y_red, &vec![0.0; devices.len()]).iter().sum();
    let mismatch = flat - target.iter().sum::<f64>();
    let sharing = |d: &Device| d.kind == BusKind::Generator || config.machines.is_empty();
    let h_share: f64 = devices.iter().filter(|d| sharing(d)).map(|d| d.h).sum();
    for (t, d) in target.iter_mut().zip(&devices) {
        if sharing(d) {
            *t += mismatch * d.h / h_share;
        }
    }
    let delta0 = dc_angles(&pre.y_red, &target)?;
    let pe = electrical_power(&pre.y_red, &delta0);
    for (d, p) in devices.iter_mut().zip(pe) {
        d.pm = p;
    }
    Ok(Grid {
        config: config.clone(),
        bus_ids,
        devices,
        delta0,
        branches,
        pre,
        post,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub duration_s: f64,
    pub sample_rate: f64,
    /// Largest allowed integration step; the actual step divides the sample
    /// period evenly.
    pub max_step_s: f64,
    /// Seed of the measurement-noise generator.
    pub seed: u64,
}

impl SimOptions {
    pub fn for_config(cfg: &GridConfig) -> Self {
        Self {
            duration_s: cfg.default_duration(),
            sample_rate: cfg.sample_rate.unwrap_or(60.0),
            max_step_s: MAX_STEP_S,
            seed: 0,
        }
    }
}

/// Internal trajectory of one swing source, sampled like the channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceTrace {
    pub bus_id: String,
    pub kind: BusKind,
    pub h: f64,
    /// Speed deviation in pu.
    pub delta_omega: Vec<f64>,
    /// Electrical output in pu, including any load at the same bus.
    pub pe: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub measurements: MeasurementSet<f64>,
    /// Inertia-weighted frequency of each region's devices, in Hz.
    pub f_coi_true: BTreeMap<String, Vec<f64>>,
    pub h_true: BTreeMap<String, f64>,
    /// Regions from the configuration with `h_true` filled in.
    pub regions: Vec<RegionSpec>,
    pub devices: Vec<DeviceTrace>,
    /// Total shunt consumption at each sample, in pu.
    pub load_power: Vec<f64>,
    pub sidecar: Sidecar,
    /// Index of the last pre-event sample.
    pub event_index: Option<usize>,
}

#[derive(Serialize)]
struct RegionTruth<'a> {
    region_id: &'a str,
    h_true: f64,
    buses: &'a [String],
    tie_lines: &'a [String],
}

#[derive(Serialize)]
struct Truth<'a> {
    name: Option<&'a str>,
    nominal_hz: f64,
    system_base_mva: f64,
    sample_rate: f64,
    event_index: Option<usize>,
    disturbance: Option<&'a Disturbance>,
    f_coi_true_csv: &'a str,
    regions: Vec<RegionTruth<'a>>,
}

impl SimOutput {
    /// Writes `measurements.csv` with its `measurements.json` sidecar,
    /// `regions.json`, `f_coi_true.csv` and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path, config: &GridConfig) -> Result<(), GridError> {
        std::fs::create_dir_all(dir)?;
        crate::signal::save_pmu_csv(&self.measurements, &dir.join("measurements.csv"))?;
        write_json(&dir.join("measurements.json"), &self.sidecar)?;
        write_json(&dir.join("regions.json"), &self.regions)?;

        let mut w = BufWriter::new(File::create(dir.join("f_coi_true.csv"))?);
        let ids: Vec<&String> = self.f_coi_true.keys().collect();
        write!(w, "time_s")?;
        for id in &ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (i, t) in self.measurements.t.iter().enumerate() {
            write!(w, "{t}")?;
            for id in &ids {
                write!(w, ",{}", self.f_coi_true[*id][i])?;
            }
            writeln!(w)?;
        }
        w.flush()?;

        let truth = Truth {
            name: config.name.as_deref(),
            nominal_hz: config.f0,
            system_base_mva: config.system_base_mva,
            sample_rate: self.measurements.sample_rate,
            event_index: self.event_index,
            disturbance: config.disturbance.as_ref(),
            f_coi_true_csv: "f_coi_true.csv",
            regions: self
                .regions
                .iter()
                .map(|r| RegionTruth {
                    region_id: &r.region_id,
                    h_true: self.h_true.get(&r.region_id).copied().unwrap_or(0.0),
                    buses: &r.buses,
                    tie_lines: &r.tie_lines,
                })
                .collect(),
        };
        write_json(&dir.join("truth.json"), &truth)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), GridError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// State derivative of the swing equations in a given network.
fn derivative(grid: &Grid, net: &Network, omega_s: f64, delta: &[f64], dw: &[f64], out_d: &mut [f64], out_w: &mut [f64]) {
    let pe = electrical_power(&net.y_red, delta);
    for (i, dev) in grid.devices.iter().enumerate() {
        out_d[i] = omega_s * dw[i];
        out_w[i] = (dev.pm - pe[i] - dev.damping * dw[i]) / (2.0 * dev.h);
    }
}

fn rk4_step(grid: &Grid, net: &Network, omega_s: f64, h: f64, delta: &mut [f64], dw: &mut [f64]) {
    let n = delta.len();
    let mut k = [(vec![0.0; n], vec![0.0; n]), (vec![0.0; n], vec![0.0; n]), (vec![0.0; n], vec![0.0; n]), (vec![0.0; n], vec![0.0; n])];
    let mut td = vec![0.0; n];
    let mut tw = vec![0.0; n];
    for stage in 0..4 {
        let c = match stage {
            0 => 0.0,
            3 => h,
            _ => h / 2.0,
        };
        for i in 0..n {
            if stage == 0 {
                td[i] = delta[i];
                tw[i] = dw[i];
            } else {
                td[i] = delta[i] + c * k[stage - 1].0[i];
                tw[i] = dw[i] + c * k[stage - 1].1[i];
            }
        }
        let (kd, kw) = &mut k[stage];
        derivative(grid, net, omega_s, &td, &tw, kd, kw);
    }
    for i in 0..n {
        delta[i] += h / 6.0 * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
        dw[i] += h / 6.0 * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
    }
}

struct Snapshot {
    bus_freq: Vec<f64>,
    bus_power: Vec<f64>,
    tie_power: Vec<f64>,
    tie_freq: Vec<f64>,
    pe: Vec<f64>,
    load: f64,
}

fn snapshot(grid: &Grid, net: &Network, delta: &[f64], dw: &[f64]) -> Snapshot {
    let f0 = grid.config.f0;
    let e: Vec<Complex64> = delta.iter().map(|&d| Complex64::from_polar(1.0, d)).collect();
    let nb = grid.bus_ids.len();
    let v: Vec<Complex64> = (0..nb)
        .map(|k| (0..e.len()).map(|i| net.v_map[(k, i)] * e[i]).sum())
        .collect();
    let mut bus_freq: Vec<f64> = (0..nb)
        .map(|k| {
            let dv: Complex64 = (0..e.len()).map(|i| net.v_map[(k, i)] * Complex64::new(0.0, dw[i]) * e[i]).sum();
            f0 * (1.0 + (v[k].conj() * dv).im / v[k].norm_sqr())
        })
        .collect();
    for (dev, w) in grid.devices.iter().zip(dw) {
        bus_freq[dev.bus] = f0 * (1.0 + w);
    }
    let mut bus_power = vec![0.0; nb];
    let mut tie_power = Vec::with_capacity(grid.branches.len());
    let mut tie_freq = Vec::with_capacity(grid.branches.len());
    for (_, f, t, x) in &grid.branches {
        let flow = (v[*f] * ((v[*f] - v[*t]) / Complex64::new(0.0, *x)).conj()).re;
        bus_power[*f] += flow;
        bus_power[*t] -= flow;
        tie_power.push(flow);
        tie_freq.push(bus_freq[*f]);
    }
    let load = (0..nb).map(|k| net.shunt[k] * v[k].norm_sqr()).sum();
    Snapshot {
        bus_freq,
        bus_power,
        tie_power,
        tie_freq,
        pe: electrical_power(&net.y_red, delta),
        load,
    }
}

/// Integrates the grid and samples every bus and branch channel.
pub fn simulate(grid: &Grid, opts: &SimOptions) -> Result<SimOutput, GridError> {
    let cfg = &grid.config;
    if !(opts.sample_rate > 0.0) || !(opts.duration_s > 0.0) || !(opts.max_step_s > 0.0) {
        return Err(invalid("duration, sample rate and step must be positive"));
    }
    let period = 1.0 / opts.sample_rate;
    let sub = (period / opts.max_step_s - 1e-9).ceil().max(1.0) as usize;
    let h = period / sub as f64;
    let n_samples = (opts.duration_s * opts.sample_rate + 1e-9).floor() as usize + 1;
    let event_step = cfg.disturbance.as_ref().map(|d| (d.t_event / h).round() as usize);
    if let (Some(d), Some(_)) = (&cfg.disturbance, event_step) {
        if d.t_event + 2.0 > opts.duration_s + 1e-9 {
            return Err(invalid("simulation must cover at least 2 s after the event"));
        }
    }
    let event_index = event_step.map(|s| s / sub);

    let omega_s = 2.0 * PI * cfg.f0;
    let nd = grid.devices.len();
    let mut delta = grid.delta0.clone();
    let mut dw = vec![0.0; nd];

    let nbus = grid.bus_ids.len();
    let nbr = grid.branches.len();
    let mut bus_freq = vec![Vec::with_capacity(n_samples); nbus];
    let mut bus_power = vec![Vec::with_capacity(n_samples); nbus];
    let mut br_freq = vec![Vec::with_capacity(n_samples); nbr];
    let mut br_power = vec![Vec::with_capacity(n_samples); nbr];
    let mut dev_w = vec![Vec::with_capacity(n_samples); nd];
    let mut dev_pe = vec![Vec::with_capacity(n_samples); nd];
    let mut load_power = Vec::with_capacity(n_samples);

    // the state at the event instant is reported before the step is applied
    let out_network = |step: usize| match event_step {
        Some(e) if step > e => &grid.post,
        _ => &grid.pre,
    };
    let step_network = |step: usize| match event_step {
        Some(e) if step >= e => &grid.post,
        _ => &grid.pre,
    };

    let mut step = 0usize;
    for s in 0..n_samples {
        if s > 0 {
            for _ in 0..sub {
                rk4_step(grid, step_network(step), omega_s, h, &mut delta, &mut dw);
                step += 1;
            }
            if dw.iter().any(|w| !(w.abs() * cfg.f0 <= BLOWUP_HZ)) {
                return Err(GridError::NumericalBlowup(s as f64 * period));
            }
        }
        let snap = snapshot(grid, out_network(step), &delta, &dw);
        for k in 0..nbus {
            bus_freq[k].push(snap.bus_freq[k]);
            bus_power[k].push(snap.bus_power[k]);
        }
        for b in 0..nbr {
            br_freq[b].push(snap.tie_freq[b]);
            br_power[b].push(snap.tie_power[b]);
        }
        for i in 0..nd {
            dev_w[i].push(dw[i]);
            dev_pe[i].push(snap.pe[i]);
        }
        load_power.push(snap.load);
    }

    let mut f_coi_true = BTreeMap::new();
    let mut h_true = BTreeMap::new();
    let mut regions = cfg.regions.clone();
    for r in &mut regions {
        let members: Vec<usize> = (0..nd).filter(|&i| r.buses.contains(&grid.devices[i].bus_id)).collect();
        let h: f64 = members.iter().map(|&i| grid.devices[i].h).sum();
        r.h_true = Some(h);
        h_true.insert(r.region_id.clone(), h);
        if members.is_empty() {
            continue;
        }
        let freqs: Vec<&Vec<f64>> = members.iter().map(|&i| &bus_freq[grid.devices[i].bus]).collect();
        let weights: Vec<f64> = members.iter().map(|&i| grid.devices[i].h).collect();
        let coi = compute_fcoi(&freqs.iter().map(|f| f.as_slice()).collect::<Vec<_>>(), &weights)
            .map_err(|e| invalid(e.to_string()))?;
        f_coi_true.insert(r.region_id.clone(), coi);
    }

    let mut kinds = BTreeMap::new();
    for d in &grid.devices {
        kinds.insert(d.bus_id.clone(), d.kind);
    }
    let mut channels = Vec::with_capacity(nbus + nbr);
    for (k, id) in grid.bus_ids.iter().enumerate() {
        let kind = kinds.get(id).copied().unwrap_or_default();
        channels.push(BusChannel {
            bus_id: id.clone(),
            freq: std::mem::take(&mut bus_freq[k]),
            power: std::mem::take(&mut bus_power[k]),
            kind,
        });
    }
    for (b, (id, ..)) in grid.branches.iter().enumerate() {
        kinds.insert(id.clone(), BusKind::TieLineBoundary);
        channels.push(BusChannel {
            bus_id: id.clone(),
            freq: std::mem::take(&mut br_freq[b]),
            power: std::mem::take(&mut br_power[b]),
            kind: BusKind::TieLineBoundary,
        });
    }
    if let Some(noise) = &cfg.noise {
        add_noise(&mut channels, noise, opts.seed)?;
    }
    let t: Vec<f64> = (0..n_samples).map(|s| s as f64 / opts.sample_rate).collect();
    let mut measurements = MeasurementSet::new(opts.sample_rate, t, channels)?;
    measurements.disturbance_index = event_index;

    let devices = grid
        .devices
        .iter()
        .enumerate()
        .map(|(i, d)| DeviceTrace {
            bus_id: d.bus_id.clone(),
            kind: d.kind,
            h: d.h,
            delta_omega: std::mem::take(&mut dev_w[i]),
            pe: std::mem::take(&mut dev_pe[i]),
        })
        .collect();
    Ok(SimOutput {
        measurements,
        f_coi_true,
        h_true,
        regions,
        devices,
        load_power,
        sidecar: Sidecar {
            system_base_mva: cfg.system_base_mva,
            nominal_hz: cfg.f0,
            kinds,
        },
        event_index,
    })
}

fn add_noise(channels: &mut [BusChannel<f64>], spec: &NoiseSpec, seed: u64) -> Result<(), GridError> {
    let bad = |_| invalid("noise standard deviations must be finite and non-negative");
    let nf = Normal::new(0.0, spec.freq_std_hz).map_err(bad)?;
    let np = Normal::new(0.0, spec.power_std_pu).map_err(bad)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for ch in channels {
        for v in &mut ch.freq {
            *v += nf.sample(&mut rng);
        }
        for v in &mut ch.power {
            *v += np.sample(&mut rng);
        }
    }
    Ok(())
}

/// Convenience wrapper: build, then simulate with the configuration's own
/// duration and sample rate.
pub fn run_config(config: &GridConfig, seed: u64) -> Result<SimOutput, GridError> {
    let grid = build_grid(config)?;
    let opts = SimOptions {
        seed,
        ..SimOptions::for_config(config)
    };
    simulate(&grid, &opts)
}

fn machine(bus: &str, h: f64, d: f64, pm0: f64) -> Machine {
    Machine { bus_id: bus.into(), h, d, pm0 }
}

fn load(bus: &str, p0: f64) -> StaticLoad {
    StaticLoad { bus_id: bus.into(), p0 }
}

fn line(from: &str, to: &str, x: f64) -> Branch {
    Branch { id: None, from: from.into(), to: to.into(), reactance: x }
}

fn region(id: &str, buses: &[&str], ties: &[&str]) -> RegionSpec {
    RegionSpec {
        region_id: id.into(),
        buses: buses.iter().map(|s| s.to_string()).collect(),
        tie_lines: ties.iter().map(|s| s.to_string()).collect(),
        h_true: None,
    }
}

/// Canned scenarios. All quantities are on a 100 MVA base at 60 Hz.
pub fn make_benchmark(name: &str) -> Result<GridConfig, GridError> {
    let bench: Benchmark = name.parse()?;
    let base = GridConfig {
        name: Some(bench.as_str().into()),
        machines: vec![],
        motor_loads: vec![],
        static_loads: vec![],
        branches: vec![],
        regions: vec![],
        f0: DEFAULT_NOMINAL_HZ,
        system_base_mva: DEFAULT_SYSTEM_BASE_MVA,
        disturbance: None,
        duration_s: Some(6.0),
        sample_rate: Some(60.0),
        noise: None,
    };
    Ok(match bench {
        Benchmark::TwoArea4Mach => two_area(base),
        Benchmark::DominantInertia => dominant_inertia(base),
        Benchmark::MotorHeavy => motor_heavy(base),
    })
}

fn two_area(mut c: GridConfig) -> GridConfig {
    // two 1800 MVA areas joined by a long double-circuit corridor; machine
    // transient reactances are folded into the step-up branches
    c.machines = vec![
        machine("B01", 58.5, 0.2, 1.75),
        machine("B02", 58.5, 0.2, 1.75),
        machine("B03", 55.575, 0.2, 1.8),
        machine("B04", 55.575, 0.2, 1.75),
    ];
    c.static_loads = vec![load("B07", 2.42), load("B09", 4.42)];
    c.branches = vec![
        line("B01", "B05", 0.05),
        line("B02", "B06", 0.05),
        line("B03", "B11", 0.05),
        line("B04", "B10", 0.05),
        line("B05", "B06", 0.0025),
        line("B06", "B07", 0.001),
        line("B07", "B08", 0.0055),
        line("B09", "B08", 0.0055),
        line("B09", "B10", 0.001),
        line("B10", "B11", 0.0025),
    ];
    c.regions = vec![
        region("R1", &["B01", "B02", "B05", "B06", "B07"], &["B07-B08"]),
        region("R2", &["B03", "B04", "B09", "B10", "B11"], &["B09-B08"]),
    ];
    c.disturbance = Some(Disturbance { bus_id: "B08".into(), delta_p: 1.0, t_event: 1.0 });
    c
}

fn dominant_inertia(mut c: GridConfig) -> GridConfig {
    // region A: one very large machine and one small one (15.69% of the
    // region inertia); region B supplies the external side of the corridor
    c.machines = vec![
        machine("A01", 496.0, 1.0, 10.0),
        machine("A02", 92.3, 0.2, 2.0),
        machine("B01", 300.0, 0.6, 6.0),
    ];
    c.static_loads = vec![load("A04", 4.0), load("A05", 3.0), load("A06", 3.0), load("B03", 8.0)];
    c.branches = vec![
        line("A01", "A03", 0.01),
        line("A02", "A06", 0.08),
        line("A03", "A04", 0.01),
        line("A03", "A05", 0.01),
        line("A04", "A06", 0.02),
        line("A05", "A06", 0.02),
        line("A04", "X01", 0.02),
        line("X01", "B02", 0.02),
        line("B01", "B02", 0.01),
        line("B02", "B03", 0.01),
    ];
    c.regions = vec![
        region("A", &["A01", "A02", "A03", "A04", "A05", "A06"], &["A04-X01"]),
        region("B", &["B01", "B02", "B03"], &["-X01-B02"]),
    ];
    c.disturbance = Some(Disturbance { bus_id: "X01".into(), delta_p: 4.0, t_event: 1.0 });
    c
}

fn motor_heavy(mut c: GridConfig) -> GridConfig {
    // generators total 100 s in three similar units; six motor equivalents
    // of 5 s each give ρ = 30 / 100
    c.machines = vec![
        machine("G1", 32.6, 0.3, 5.0),
        machine("G2", 34.6, 0.3, 5.0),
        machine("G3", 32.8, 0.3, 5.0),
        machine("G4", 100.0, 0.5, 6.0),
    ];
    let loads = [("L1", 2.76), ("L2", 2.02), ("L3", 2.93), ("L4", 1.48), ("L5", 3.75), ("L6", 2.58)];
    c.static_loads = loads.iter().map(|(b, p)| load(b, *p)).chain([load("L7", 6.0)]).collect();
    c.motor_loads = loads
        .iter()
        .map(|(b, _)| MotorLoad { bus_id: (*b).into(), hm: 5.0, base_fraction: 0.1, d: 0.0 })
        .collect();
    c.branches = vec![
        line("G1", "N1", 0.0095),
        line("G2", "N1", 0.0081),
        line("G3", "N3", 0.024),
        line("N1", "N2", 0.0756),
        line("N2", "N3", 0.0081),
        line("N1", "N3", 0.0165),
        line("N3", "L1", 0.014),
        line("N3", "L2", 0.0521),
        line("N3", "L3", 0.0829),
        line("N3", "L4", 0.0207),
        line("N2", "L5", 0.0144),
        line("N2", "L6", 0.0077),
        line("N3", "X1", 0.02),
        line("X1", "G4", 0.02),
        line("X1", "L7", 0.01),
    ];
    c.regions = vec![region(
        "M",
        &["G1", "G2", "G3", "N1", "N2", "N3", "L1", "L2", "L3", "L4", "L5", "L6"],
        &["N3-X1"],
    )];
    c.disturbance = Some(Disturbance { bus_id: "X1".into(), delta_p: 1.0, t_event: 1.0 });
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_machine(x: f64) -> GridConfig {
        GridConfig {
            name: None,
            machines: vec![machine("A", 5.0, 0.0, 0.5), machine("B", 5.0, 0.0, -0.5)],
            motor_loads: vec![],
            static_loads: vec![],
            branches: vec![line("A", "B", x)],
            regions: vec![],
            f0: 60.0,
            system_base_mva: 100.0,
            disturbance: None,
            duration_s: Some(3.0),
            sample_rate: Some(60.0),
            noise: None,
        }
    }

    #[test]
    fn two_machine_reduction_is_symmetric() {
        let g = build_grid(&two_machine(0.2)).unwrap();
        let y = g.reduced_admittance();
        assert_eq!(y.shape(), (2, 2));
        assert_eq!(y[(0, 1)], y[(1, 0)]);
        assert!((y[(0, 0)].im + 5.0).abs() < 1e-12);
        assert!((y[(0, 1)].im - 5.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_bus_rejected() {
        let mut c = two_machine(0.2);
        c.branches.push(line("C", "D", 0.1));
        assert!(matches!(build_grid(&c), Err(GridError::DisconnectedGraph(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut c = two_machine(0.2);
        c.machines[0].h = 0.0;
        assert!(matches!(build_grid(&c), Err(GridError::InvalidConfig(_))));
        let mut c = two_machine(0.2);
        c.branches[0].reactance = -1.0;
        assert!(matches!(build_grid(&c), Err(GridError::InvalidConfig(_))));
    }

    #[test]
    fn operating_point_is_equilibrium() {
        let g = build_grid(&two_machine(0.2)).unwrap();
        // sin(δ)/0.2 = 0.5 solved exactly
        let pe = electrical_power(g.reduced_admittance(), &g.delta0);
        for (d, p) in g.devices.iter().zip(pe) {
            assert_eq!(d.pm, p);
        }
    }

    #[test]
    fn unknown_benchmark() {
        assert!(matches!(make_benchmark("ieee68"), Err(GridError::UnknownBenchmark(_))));
    }

    #[test]
    fn tie_line_direction_is_checked() {
        let mut c = make_benchmark("two_area_4mach").unwrap();
        c.regions[1].tie_lines = vec!["-B09-B08".into()];
        assert!(matches!(build_grid(&c), Err(GridError::InvalidConfig(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let c = make_benchmark("motor_heavy").unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"Hm\""));
        let back: GridConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
