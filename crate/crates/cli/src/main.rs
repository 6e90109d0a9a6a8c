//! `coi-inertia`: simulate disturbances, locate pilot-buses and estimate
//! regional inertia from PMU-style measurement tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use inertia_core::gridsim::{make_benchmark, run_config, Benchmark, GridConfig};
use inertia_core::pipeline::{prepare_window, run_pipeline, write_json, GroundTruth, PipelineOutput, PipelineSettings};
use inertia_core::region::load_regions;
use inertia_core::signal::{load_pmu_csv, Sidecar};
use inertia_core::sysid::SweepOptions;
use inertia_core::tda::detect_pilot_bus;
use inertia_core::{MeasurementSet, MetricForm, RegionSpec, ValidationReport};
use serde::Deserialize;

/// Exit status when some region ended without an accepted model.
const EXIT_UNESTIMATED: u8 = 2;

#[derive(Parser)]
#[command(name = "coi-inertia", version, about = "Pilot-bus detection and regional inertia estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark or grid file and write measurements plus ground truth.
    Simulate {
        /// Benchmark name (two_area_4mach, dominant_inertia, motor_heavy) or JSON path.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the measurement noise, when the grid defines any.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Detect the pilot-bus of every region.
    DetectPilot {
        #[command(flatten)]
        input: MeasurementArgs,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Detect pilot-buses and estimate each region's inertia.
    Estimate {
        #[command(flatten)]
        input: MeasurementArgs,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Full workflow with validation against ground truth when available.
    Pipeline {
        /// Simulate this grid first instead of reading measurements.
        #[arg(long, conflicts_with = "measurements", required_unless_present = "measurements")]
        grid: Option<String>,
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Print the table stored in a pipeline output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MeasurementArgs {
    /// Long-format CSV `time_s,bus_id,freq_hz,p_pu`.
    #[arg(long)]
    measurements: PathBuf,
    /// Region list; defaults to `regions.json` beside the measurements.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Tuning {
    #[arg(long, default_value = "dissimilarity")]
    metric_form: MetricForm,
    /// Order range `2-10`, list `2,3,4` or explicit triples `2:2:1,3:3:3`.
    #[arg(long, default_value = "2-10")]
    orders: String,
    /// Minimum free-run fit in percent.
    #[arg(long, default_value_t = 95.0)]
    nrse_gate: f64,
    /// Moving-median width in samples (odd).
    #[arg(long, default_value_t = 5)]
    filter_window: usize,
    #[arg(long, default_value_t = 2.0)]
    window_s: f64,
}

impl Tuning {
    fn settings(&self) -> anyhow::Result<PipelineSettings> {
        Ok(PipelineSettings {
            filter_window: self.filter_window,
            window_s: self.window_s,
            metric_form: self.metric_form,
            sweep: SweepOptions {
                orders: parse_orders(&self.orders)?,
                nrse_gate: self.nrse_gate,
            },
            ..PipelineSettings::default()
        })
    }
}

fn parse_orders(text: &str) -> anyhow::Result<Vec<(usize, usize, usize)>> {
    let num = |s: &str| -> anyhow::Result<usize> {
        s.trim().parse().with_context(|| format!("bad order `{s}`"))
    };
    let mut orders = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, hi)) = item.split_once('-') {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo > hi {
                bail!("empty order range `{item}`");
            }
            orders.extend((lo..=hi).map(|n| (n, n, n)));
        } else if item.contains(':') {
            let parts: Vec<usize> = item.split(':').map(num).collect::<anyhow::Result<_>>()?;
            match parts[..] {
                [na, nb, nc] => orders.push((na, nb, nc)),
                _ => bail!("order triple `{item}` must be na:nb:nc"),
            }
        } else {
            let n = num(item)?;
            orders.push((n, n, n));
        }
    }
    if orders.is_empty() {
        bail!("no model orders given");
    }
    if orders.iter().any(|&(na, nb, _)| na == 0 || nb == 0) {
        bail!("na and nb must be at least 1");
    }
    Ok(orders)
}

fn grid_config(grid: &str) -> anyhow::Result<GridConfig> {
    if grid.parse::<Benchmark>().is_ok() {
        return Ok(make_benchmark(grid)?);
    }
    let path = Path::new(grid);
    if !path.exists() {
        let known: Vec<&str> = Benchmark::ALL.iter().map(|b| b.as_str()).collect();
        bail!("unknown benchmark `{grid}` (known: {}) and no such file", known.join(", "));
    }
    GridConfig::load(path).with_context(|| format!("reading grid {}", path.display()))
}

fn beside(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_measurements(path: &Path) -> anyhow::Result<MeasurementSet> {
    let sidecar_path = path.with_extension("json");
    let sidecar = if sidecar_path.exists() {
        Sidecar::load(&sidecar_path).with_context(|| format!("reading {}", sidecar_path.display()))?
    } else {
        Sidecar::default()
    };
    load_pmu_csv(path, &sidecar.csv_options()).with_context(|| format!("reading {}", path.display()))
}

fn regions_for(measurements: &Path, regions: Option<&Path>) -> anyhow::Result<Vec<RegionSpec>> {
    let path = regions.map(Path::to_path_buf).unwrap_or_else(|| beside(measurements, "regions.json"));
    load_regions(&path).with_context(|| format!("reading regions {}", path.display()))
}

fn simulate(grid: &str, out: &Path, seed: u64) -> anyhow::Result<()> {
    let cfg = grid_config(grid)?;
    let sim = run_config(&cfg, seed)?;
    sim.write_to(out, &cfg)?;
    eprintln!(
        "wrote {} buses x {} samples to {}",
        sim.measurements.buses.len(),
        sim.measurements.len(),
        out.display()
    );
    Ok(())
}

fn detect_pilot(input: &MeasurementArgs, tuning: &Tuning) -> anyhow::Result<ExitCode> {
    let settings = tuning.settings()?;
    let set = load_measurements(&input.measurements)?;
    let mut regions = regions_for(&input.measurements, input.regions.as_deref())?;
    regions.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    let (_, window) = prepare_window(&set, &settings)?;
    let mut reports = Vec::new();
    let mut failed = false;
    for r in &regions {
        match detect_pilot_bus(&window, r, settings.metric_form) {
            Ok(t) => {
                println!("{}\t{}", r.region_id, t.pilot_bus);
                reports.push(t.report(&r.region_id));
            }
            Err(e) => {
                eprintln!("region {}: {e}", r.region_id);
                failed = true;
            }
        }
    }
    std::fs::create_dir_all(&input.out)?;
    write_json(&input.out.join("typicality.json"), &reports)?;
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn finish(output: &PipelineOutput) -> ExitCode {
    for r in &output.regions {
        if let Some(e) = &r.report.error {
            eprintln!("{e}");
        }
    }
    print_table(&output.reports().into_iter().cloned().collect::<Vec<_>>());
    if output.any_unestimated() {
        ExitCode::from(EXIT_UNESTIMATED)
    } else {
        ExitCode::SUCCESS
    }
}

fn estimate(input: &MeasurementArgs, tuning: &Tuning) -> anyhow::Result<ExitCode> {
    let settings = tuning.settings()?;
    let set = load_measurements(&input.measurements)?;
    let regions = regions_for(&input.measurements, input.regions.as_deref())?;
    let output = run_pipeline(&set, &regions, None, &settings)?;
    output.write_to(&input.out)?;
    Ok(finish(&output))
}

fn pipeline(
    grid: Option<&str>,
    measurements: Option<&Path>,
    regions: Option<&Path>,
    out: &Path,
    seed: u64,
    tuning: &Tuning,
) -> anyhow::Result<ExitCode> {
    let settings = tuning.settings()?;
    let (set, region_list, truth) = match (grid, measurements) {
        (Some(grid), _) => {
            let cfg = grid_config(grid)?;
            let sim = run_config(&cfg, seed)?;
            sim.write_to(&out.join("simulation"), &cfg)?;
            let regs = match regions {
                Some(p) => load_regions(p).with_context(|| format!("reading regions {}", p.display()))?,
                None => sim.regions.clone(),
            };
            let truth = GroundTruth::from_simulation(&sim);
            (sim.measurements, regs, Some(truth))
        }
        (None, Some(m)) => {
            let set = load_measurements(m)?;
            let regs = regions_for(m, regions)?;
            let truth_path = beside(m, "truth.json");
            let truth = if truth_path.exists() {
                Some(GroundTruth::load(&truth_path).with_context(|| format!("reading {}", truth_path.display()))?)
            } else {
                None
            };
            (set, regs, truth)
        }
        (None, None) => return Err(anyhow!("either --grid or --measurements is required")),
    };
    let output = run_pipeline(&set, &region_list, truth.as_ref(), &settings)?;
    output.write_to(out)?;
    Ok(finish(&output))
}

#[derive(Deserialize)]
struct StoredReports {
    metric_form: MetricForm,
    reports: Vec<ValidationReport>,
}

fn print_table(reports: &[ValidationReport]) {
    let num = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
    println!(
        "{:<10} {:<10} {:>10} {:>10} {:>8} {:>10} {:>10} {:>7}",
        "region", "pilot", "h_est", "h_ref", "re_%", "nrmse_pb", "nrmse_gm", "models"
    );
    for r in reports {
        println!(
            "{:<10} {:<10} {:>10} {:>10} {:>8} {:>10} {:>10} {:>7}",
            r.region_id,
            r.pilot_bus.as_deref().unwrap_or("-"),
            num(r.h_est, 3),
            num(r.h_ref, 3),
            num(r.re_percent, 2),
            num(r.nrmse_pb, 5),
            num(r.nrmse_gen_mean, 5),
            r.accepted_models
        );
    }
}

fn report(out: &Path) -> anyhow::Result<()> {
    let path = out.join("reports.json");
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let stored: StoredReports = serde_json::from_reader(file).with_context(|| format!("parsing {}", path.display()))?;
    println!("metric form: {}", stored.metric_form.as_str());
    print_table(&stored.reports);
    for r in &stored.reports {
        if let Some(e) = &r.error {
            println!("{}: {e}", r.region_id);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Simulate { grid, out, seed } => simulate(grid, out, *seed).map(|_| ExitCode::SUCCESS),
        Command::DetectPilot { input, tuning } => detect_pilot(input, tuning),
        Command::Estimate { input, tuning } => estimate(input, tuning),
        Command::Pipeline {
            grid,
            measurements,
            regions,
            out,
            seed,
            tuning,
        } => pipeline(grid.as_deref(), measurements.as_deref(), regions.as_deref(), out, *seed, tuning),
        Command::Report { out } => report(out).map(|_| ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
