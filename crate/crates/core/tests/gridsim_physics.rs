mod common;

use common::pe_at;
use inertia_core::gridsim::*;
use inertia_core::metrics::compute_fcoi;
use inertia_core::sysid::boundary_power;
use inertia_core::signal::extract_window;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn machine(bus: &str, h: f64, d: f64, pm0: f64) -> Machine {
    Machine { bus_id: bus.into(), h, d, pm0 }
}

fn line(from: &str, to: &str, x: f64) -> Branch {
    Branch { id: None, from: from.into(), to: to.into(), reactance: x }
}

fn empty(name: &str) -> GridConfig {
    GridConfig {
        name: Some(name.into()),
        machines: vec![],
        motor_loads: vec![],
        static_loads: vec![],
        branches: vec![],
        regions: vec![],
        f0: 60.0,
        system_base_mva: 100.0,
        disturbance: None,
        duration_s: Some(3.0),
        sample_rate: Some(60.0),
        noise: None,
    }
}

fn run(cfg: &GridConfig, opts: &SimOptions) -> SimOutput {
    simulate(&build_grid(cfg).unwrap(), opts).unwrap()
}

/// Node-by-node Kron elimination on a dense matrix, written independently of
/// the library's block Schur complement.
fn eliminate(mut y: DMatrix<Complex64>, keep: &[usize]) -> DMatrix<Complex64> {
    let mut alive: Vec<usize> = (0..y.nrows()).collect();
    for k in (0..y.nrows()).rev() {
        if keep.contains(&k) {
            continue;
        }
        let pivot = y[(k, k)];
        for &i in &alive {
            for &j in &alive {
                if i != k && j != k {
                    let v = y[(i, k)] * y[(k, j)] / pivot;
                    y[(i, j)] -= v;
                }
            }
        }
        alive.retain(|&i| i != k);
    }
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| y[(keep[i], keep[j])])
}

#[test]
fn two_area_reduction_matches_hand_assembled_matrix() {
    let cfg = make_benchmark("two_area_4mach").unwrap();
    let grid = build_grid(&cfg).unwrap();
    let buses: Vec<&str> = vec!["B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B09", "B10", "B11"];
    let idx = |b: &str| buses.iter().position(|x| *x == b).unwrap();
    let mut y = DMatrix::from_element(11, 11, Complex64::new(0.0, 0.0));
    let lines = [
        ("B01", "B05", 0.05),
        ("B02", "B06", 0.05),
        ("B03", "B11", 0.05),
        ("B04", "B10", 0.05),
        ("B05", "B06", 0.0025),
        ("B06", "B07", 0.001),
        ("B07", "B08", 0.0055),
        ("B09", "B08", 0.0055),
        ("B09", "B10", 0.001),
        ("B10", "B11", 0.0025),
    ];
    for (f, t, x) in lines {
        let (f, t) = (idx(f), idx(t));
        let b = Complex64::new(0.0, -1.0 / x);
        y[(f, f)] += b;
        y[(t, t)] += b;
        y[(f, t)] -= b;
        y[(t, f)] -= b;
    }
    y[(idx("B07"), idx("B07"))] += 2.42;
    y[(idx("B09"), idx("B09"))] += 4.42;

    let keep: Vec<usize> = grid.devices.iter().map(|d| idx(&d.bus_id)).collect();
    let oracle = eliminate(y, &keep);
    let got = grid.reduced_admittance();
    for i in 0..4 {
        for j in 0..4 {
            let err = (got[(i, j)] - oracle[(i, j)]).norm();
            assert!(err < 1e-12, "entry ({i},{j}) off by {err:e}");
        }
    }
}

#[test]
fn single_machine_initial_rocof() {
    let mut cfg = empty("single");
    cfg.machines = vec![machine("M", 5.0, 0.0, 0.0)];
    cfg.static_loads = vec![StaticLoad { bus_id: "L".into(), p0: 0.5 }];
    cfg.branches = vec![line("M", "L", 0.1)];
    cfg.disturbance = Some(Disturbance { bus_id: "M".into(), delta_p: 0.1, t_event: 0.5 });
    let opts = SimOptions { duration_s: 3.0, sample_rate: 1000.0, max_step_s: 1e-3, seed: 0 };
    let out = run(&cfg, &opts);
    let f = &out.measurements.channel("M").unwrap().freq;
    let e = out.event_index.unwrap();
    let rocof = (f[e + 1] - f[e]) * 1000.0;
    assert!((rocof + 0.6).abs() < 1e-9, "rocof {rocof}");
}

#[test]
fn undisturbed_grid_stays_at_equilibrium() {
    let mut cfg = make_benchmark("two_area_4mach").unwrap();
    cfg.disturbance = None;
    let out = run(&cfg, &SimOptions::for_config(&cfg));
    for ch in &out.measurements.buses {
        for s in [&ch.freq, &ch.power] {
            assert!(s.iter().all(|v| (v - s[0]).abs() < 1e-12), "{} drifts", ch.bus_id);
        }
    }
}

#[test]
fn symmetric_machines_have_identical_traces() {
    let mut cfg = empty("sym");
    cfg.machines = vec![machine("A", 4.0, 0.1, 0.5), machine("B", 4.0, 0.1, 0.5)];
    cfg.static_loads = vec![StaticLoad { bus_id: "C".into(), p0: 1.0 }];
    cfg.branches = vec![line("A", "C", 0.05), line("B", "C", 0.05)];
    cfg.disturbance = Some(Disturbance { bus_id: "C".into(), delta_p: 0.2, t_event: 0.5 });
    let out = run(&cfg, &SimOptions::for_config(&cfg));
    let (a, b) = (out.measurements.channel("A").unwrap(), out.measurements.channel("B").unwrap());
    for k in 0..a.freq.len() {
        assert!((a.freq[k] - b.freq[k]).abs() < 1e-12);
        assert!((a.power[k] - b.power[k]).abs() < 1e-12, "{k} {} {}", a.power[k], b.power[k]);
    }
    assert!(a.freq.last().unwrap() < &59.99);
}

#[test]
fn power_balance_holds_on_every_benchmark() {
    for name in ["two_area_4mach", "dominant_inertia", "motor_heavy"] {
        let cfg = make_benchmark(name).unwrap();
        let out = run(&cfg, &SimOptions::for_config(&cfg));
        for s in 0..out.load_power.len() {
            let gen: f64 = out.devices.iter().map(|d| d.pe[s]).sum();
            assert!((gen - out.load_power[s]).abs() <= 1e-6, "{name} sample {s}");
        }
    }
}

#[test]
fn halving_the_step_changes_samples_by_less_than_1e_6() {
    for name in ["two_area_4mach", "motor_heavy"] {
        let cfg = make_benchmark(name).unwrap();
        let grid = build_grid(&cfg).unwrap();
        let coarse = SimOptions::for_config(&cfg);
        let fine = SimOptions { max_step_s: coarse.max_step_s / 2.0, ..coarse.clone() };
        let (a, b) = (simulate(&grid, &coarse).unwrap(), simulate(&grid, &fine).unwrap());
        for (ca, cb) in a.measurements.buses.iter().zip(&b.measurements.buses) {
            for (x, y) in ca.freq.iter().zip(&cb.freq).chain(ca.power.iter().zip(&cb.power)) {
                assert!((x - y).abs() < 1e-6, "{name} {}", ca.bus_id);
            }
        }
    }
}

#[test]
fn true_coi_matches_weighted_average_of_channels() {
    for name in ["two_area_4mach", "dominant_inertia", "motor_heavy"] {
        let cfg = make_benchmark(name).unwrap();
        let out = run(&cfg, &SimOptions::for_config(&cfg));
        for r in &out.regions {
            let members: Vec<&DeviceTrace> = out.devices.iter().filter(|d| r.buses.contains(&d.bus_id)).collect();
            let freqs: Vec<&[f64]> = members
                .iter()
                .map(|d| out.measurements.channel(&d.bus_id).unwrap().freq.as_slice())
                .collect();
            let weights: Vec<f64> = members.iter().map(|d| d.h).collect();
            let oracle = compute_fcoi(&freqs, &weights).unwrap();
            for (a, b) in oracle.iter().zip(&out.f_coi_true[&r.region_id]) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn region_rocof_follows_the_aggregate_swing_equation() {
    for name in ["two_area_4mach", "dominant_inertia", "motor_heavy"] {
        let cfg = make_benchmark(name).unwrap();
        let grid = build_grid(&cfg).unwrap();
        let opts = SimOptions { duration_s: cfg.default_duration(), sample_rate: 1000.0, max_step_s: 1e-3, seed: 0 };
        let out = simulate(&grid, &opts).unwrap();
        let e = out.event_index.unwrap();
        let pe_post = pe_at(grid.post_event_admittance(), &grid.delta0);
        for r in &out.regions {
            let h_true = out.h_true[&r.region_id];
            let dp: f64 = grid
                .devices
                .iter()
                .zip(&pe_post)
                .filter(|(d, _)| r.buses.contains(&d.bus_id))
                .map(|(d, p)| p - d.pm)
                .sum();
            let expected = -dp / (2.0 * h_true) * cfg.f0;
            let f = &out.f_coi_true[&r.region_id];
            let measured = (f[e + 1] - f[e]) * opts.sample_rate;
            let rel = ((measured - expected) / expected).abs();
            assert!(rel < 0.02, "{name}/{}: {measured} vs {expected}", r.region_id);
        }
    }
}

#[test]
fn boundary_power_equals_region_injection() {
    let cfg = make_benchmark("two_area_4mach").unwrap();
    let out = run(&cfg, &SimOptions::for_config(&cfg));
    let window = extract_window(&out.measurements, out.event_index.unwrap(), 2.0).unwrap();
    for r in &out.regions {
        let u = boundary_power(&window, &r.tie_lines).unwrap();
        for (k, uk) in u.iter().enumerate() {
            let inj: f64 = r
                .buses
                .iter()
                .map(|b| window.delta_power[window.index_of(b).unwrap()][k])
                .sum();
            assert!((uk - inj).abs() < 1e-9, "{} sample {k}", r.region_id);
        }
    }
}

#[test]
fn benchmark_inertia_ratios() {
    let motor = make_benchmark("motor_heavy").unwrap();
    let hm: f64 = motor.motor_loads.iter().map(|m| m.hm).sum();
    let region = &motor.regions[0].buses;
    let hg: f64 = motor.machines.iter().filter(|m| region.contains(&m.bus_id)).map(|m| m.h).sum();
    assert!((0.29..=0.31).contains(&(hm / hg)), "rho = {}", hm / hg);
    assert!(motor.motor_loads.iter().all(|m| m.hm == 5.0 && m.base_fraction == 0.1));

    let dom = make_benchmark("dominant_inertia").unwrap();
    let grid = build_grid(&dom).unwrap();
    let region = &dom.regions[0].buses;
    let mut hs: Vec<f64> = dom.machines.iter().filter(|m| region.contains(&m.bus_id)).map(|m| m.h).collect();
    hs.sort_by(f64::total_cmp);
    let share = hs[0] / grid.inertia_of(region);
    assert!((share - 0.157).abs() <= 0.001, "minor share {share}");

    let two = make_benchmark("two_area_4mach").unwrap();
    let out = run(&two, &SimOptions::for_config(&two));
    for r in &two.regions {
        let sum: f64 = two.machines.iter().filter(|m| r.buses.contains(&m.bus_id)).map(|m| m.h).sum();
        assert_eq!(out.h_true[&r.region_id], sum);
    }
}
