//! Pipeline driver: simulate, estimate-beacon, acquire, solve, report.
//!
//! Each stage reads and writes fixed-name artifacts inside `--out`
//! (overridable in the config's `paths` section), so stages can be rerun
//! independently. All randomness derives from the config seed (or
//! `--seed`); rerunning a stage with unchanged inputs reproduces its
//! outputs byte for byte.
//!
//! Exit codes: 0 ok, 2 configuration or schema error (including an
//! under-determined solve), 3 unresolved beacon, 4 non-converged or
//! singular solve, 5 I/O error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use config::PipelineConfig;
use sopnav_core::acquisition::{
    acquire_doppler_series, associate_measurements, load_measurements, write_measurements,
    AcquisitionConfig, AssociationConfig, DopplerMeasurement,
};
use sopnav_core::capture::open_capture_with_sidecar;
use sopnav_core::estimator::{
    estimate_beacon, load_beacon, resolve_ambiguities, save_beacon, write_estimator_trace,
    CaptureFrames, EphemerisAid, EstimatorConfig, InitPolicy, OfdmParams, ResolveAids,
    ResolveConfig,
};
use sopnav_core::kf::{write_kf_trace, KFConfig};
use sopnav_core::nav::{
    lambda_sweep, postfit_refine, solve_ls, write_lambda_sweep, write_residuals, NavConfig,
    PVTState, ResidualReport,
};
use sopnav_core::orbit::{export_ephemeris, import_ephemeris, EphemerisTable, OrbitSpec};
use sopnav_core::sim::{DutyCycle, Scenario};
use sopnav_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "sopnav", about = "LEO signal-of-opportunity beacon estimation and Doppler positioning", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory shared by all stages.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the estimation and acquisition captures, truth logs,
    /// and ephemerides.
    Simulate,
    /// Estimate the beacon from the estimation capture and resolve its
    /// ambiguities.
    EstimateBeacon,
    /// Measure Doppler over the acquisition capture and associate SVs.
    Acquire,
    /// Doppler least-squares positioning with post-fit refinement.
    Solve,
    /// Emit plot-data CSVs (beacon magnitude, phase differences, lambda
    /// sweep).
    Report,
}

#[derive(Debug)]
struct NotConverged {
    iterations: usize,
    delta: f64,
}

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "solver did not converge in {} iterations (last |ds| = {:.3e})",
            self.iterations, self.delta
        )
    }
}

impl std::error::Error for NotConverged {}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<NotConverged>().is_some() {
        return 4;
    }
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Io { .. })
        | Some(CoreError::Json { .. })
        | Some(CoreError::Csv { .. })
        | Some(CoreError::SizeNotMultipleOfFour { .. }) => 5,
        Some(CoreError::UnresolvedBeacon { .. }) => 3,
        Some(CoreError::SingularGeometry { .. }) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| anyhow!("--config <path> is required"))?;
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| anyhow!("--out <dir> is required"))?;
    let mut cfg = PipelineConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CoreError::io(out, e))?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, out, cli.verbose),
        Command::EstimateBeacon => cmd_estimate(&cfg, out, cli.verbose),
        Command::Acquire => cmd_acquire(&cfg, out, cli.verbose),
        Command::Solve => cmd_solve(&cfg, out, cli.verbose),
        Command::Report => cmd_report(&cfg, out, cli.verbose),
    }
}

fn scenario_span(scn: &Scenario) -> (f64, f64) {
    let start = scn.cfg.start_time_s;
    (start, start + scn.cfg.k_frames as f64 * scn.stride_s())
}

fn cmd_simulate(cfg: &PipelineConfig, out: &Path, verbose: bool) -> Result<()> {
    let est = Scenario::new(cfg.estimation_scenario.clone())?;
    if est.cfg.frame_stride_s.is_some() {
        return Err(CoreError::InvalidConfig {
            what: "estimation capture must use contiguous frames (frame_stride_s = null)".into(),
        }
        .into());
    }
    let acq = Scenario::new(cfg.acquisition_scenario.clone())?;

    let est_truth = est.write_capture(&out.join(&cfg.paths.est_capture))?;
    est_truth.save(&out.join(&cfg.paths.est_truth))?;
    let acq_truth = acq.write_capture(&out.join(&cfg.paths.acq_capture))?;
    acq_truth.save(&out.join(&cfg.paths.acq_truth))?;

    // ephemerides covering both windows, one CSV per SV
    let (e0, e1) = scenario_span(&est);
    let (a0, a1) = scenario_span(&acq);
    let (t_min, t_max) = (e0.min(a0) - 10.0, e1.max(a1) + 10.0);
    let mut orbits: Vec<&OrbitSpec> = cfg.acquisition_scenario.orbits.iter().collect();
    for orbit in &cfg.estimation_scenario.orbits {
        if !orbits.iter().any(|o| o.sv_id == orbit.sv_id) {
            orbits.push(orbit);
        }
    }
    for orbit in orbits {
        let table = EphemerisTable::from_orbit(orbit, t_min, t_max, 10.0)?;
        export_ephemeris(&out.join(format!("eph_{}.csv", orbit.sv_id)), &table)?;
    }

    for (name, scn, truth) in [
        ("estimation", &est, &est_truth),
        ("acquisition", &acq, &acq_truth),
    ] {
        let active = truth.active_count();
        println!(
            "{name} capture: {} frames of {} samples ({} active, {:.1}%), beacon power {:.3}, noise power {:.3}",
            truth.rows.len(),
            scn.n_fr,
            active,
            100.0 * active as f64 / truth.rows.len() as f64,
            truth.beacon_power,
            truth.noise_power,
        );
        if active == 0 {
            eprintln!("warning: {name} capture has no active frames");
        }
        if verbose {
            println!(
                "  t_fr = {:.6e} s, stride = {:.3} s, start = {:.1} s",
                scn.t_fr,
                scn.stride_s(),
                scn.cfg.start_time_s
            );
        }
    }
    Ok(())
}

fn estimation_sv(duty: &DutyCycle) -> Option<&str> {
    match duty {
        DutyCycle::Always { sv_id } | DutyCycle::Burst { sv_id, .. } => Some(sv_id),
        _ => None,
    }
}

fn cmd_estimate(cfg: &PipelineConfig, out: &Path, verbose: bool) -> Result<()> {
    let scn = Scenario::new(cfg.estimation_scenario.clone())?;
    let reader = open_capture_with_sidecar(&out.join(&cfg.paths.est_capture))?;
    let frames = CaptureFrames {
        reader: &reader,
        n_fr: scn.n_fr,
    };

    let kf = cfg.estimator.kf.clone().unwrap_or(KFConfig {
        t_fr: scn.t_fr,
        ..KFConfig::default()
    });
    let ecfg = EstimatorConfig {
        max_frames: cfg.estimator.max_frames,
        threshold: cfg.estimator.threshold,
        grid: cfg.estimator.grid,
        kf,
        init_policy: InitPolicy::FirstEnergetic,
        t_s: scn.t_s,
    };
    let output = estimate_beacon(&frames, &ecfg)?;
    write_kf_trace(&out.join("kf_trace.csv"), &output.kf_trace)?;
    write_estimator_trace(&out.join("est_trace.csv"), &output.trace)?;
    println!(
        "estimation loop: {} of {} frames accepted (seed frame {:?})",
        output.estimate.accepted_count, output.estimate.total_frames_seen, output.estimate.seed_frame
    );
    if output.estimate.accepted_count == 0 {
        return Err(CoreError::UnresolvedBeacon {
            what: "gate never opened; capture may be all noise".into(),
        }
        .into());
    }

    // ambiguity resolution: predicted-Doppler aid when the tracked SV has
    // an exported ephemeris, plus the known sync preamble
    let eph = estimation_sv(&cfg.estimation_scenario.duty_cycle)
        .map(|sv| import_ephemeris(&out.join(format!("eph_{sv}.csv"))))
        .transpose()?;
    let t_seed = reader.meta().start_time_utc
        + output.estimate.seed_frame.unwrap_or(0) as f64 * scn.t_fr;
    let aids = ResolveAids {
        ephemeris: eph.as_ref().map(|table| EphemerisAid {
            table,
            rx_position_ecef_m: Vector3::from(cfg.nav.initial_position_ecef_m),
            t_seed,
        }),
        sync_preamble: Some(&scn.preset.spec.sync_preamble),
    };
    let rcfg = ResolveConfig {
        t_s: scn.t_s,
        f_c_hz: scn.cfg.f_c_hz,
        ofdm: OfdmParams::of(&scn.preset.spec),
        grid_coarse: cfg.resolve.grid_coarse,
        metric_threshold: cfg.resolve.metric_threshold,
        preamble_segment: cfg.resolve.preamble_segment,
    };
    let resolved = resolve_ambiguities(&output.estimate, &aids, &rcfg)?;
    save_beacon(
        &out.join(&cfg.paths.beacon),
        &resolved,
        scn.t_s,
        scn.cfg.f_c_hz,
        &ecfg.fingerprint(),
    )?;
    println!("ambiguities: {}", resolved.ambiguities);
    if verbose {
        println!("  beacon written to {}", out.join(&cfg.paths.beacon).display());
    }
    if !resolved.is_resolved() {
        return Err(CoreError::UnresolvedBeacon {
            what: format!("ambiguity resolution failed ({})", resolved.ambiguities),
        }
        .into());
    }
    Ok(())
}

fn load_ephemerides(out: &Path) -> Result<Vec<EphemerisTable>> {
    let mut names: Vec<String> = std::fs::read_dir(out)
        .map_err(|e| CoreError::io(out, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().to_string_lossy().into_owned();
            (name.starts_with("eph_") && name.ends_with(".csv")).then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CoreError::io(
            out.join("eph_*.csv"),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no ephemeris files; run simulate first",
            ),
        )
        .into());
    }
    names
        .iter()
        .map(|name| Ok(import_ephemeris(&out.join(name))?))
        .collect()
}

fn cmd_acquire(cfg: &PipelineConfig, out: &Path, verbose: bool) -> Result<()> {
    let (beacon, bmeta) = load_beacon(&out.join(&cfg.paths.beacon))?;
    let scn = Scenario::new(cfg.acquisition_scenario.clone())?;
    let reader = open_capture_with_sidecar(&out.join(&cfg.paths.acq_capture))?;
    let frames = CaptureFrames {
        reader: &reader,
        n_fr: bmeta.n_fr,
    };
    let acfg = AcquisitionConfig {
        cadence_s: cfg.acquisition.cadence_s,
        frame_period_s: scn.stride_s(),
        start_time_s: reader.meta().start_time_utc,
        t_s: bmeta.t_s,
        wide_grid: cfg.acquisition.wide_grid,
        coarse_step_hz: cfg.acquisition.coarse_step_hz,
        fine_window_hz: cfg.acquisition.fine_window_hz,
        gate_normalized: cfg.acquisition.gate_normalized,
    };
    let meas = acquire_doppler_series(&frames, &beacon, &acfg)?;

    let tables = load_ephemerides(out)?;
    let assoc = AssociationConfig {
        gate_hz: cfg.association.gate_hz,
        margin_hz: cfg.association.margin_hz,
        rx_position_ecef_m: cfg.nav.initial_position_ecef_m,
        f_c_hz: scn.cfg.f_c_hz,
    };
    let associated = associate_measurements(&meas, &tables, &assoc);
    write_measurements(&out.join(&cfg.paths.measurements), &associated)?;
    let assigned = associated.iter().filter(|m| m.sv_id.is_some()).count();
    println!(
        "acquisition: {} measurements, {} associated",
        associated.len(),
        assigned
    );
    if verbose {
        for m in associated.iter().take(5) {
            println!("  t = {:.1} s, f_d = {:.0} Hz, sv = {:?}", m.t, m.f_d_hz, m.sv_id);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SolutionSide {
    position_ecef_m: [f64; 3],
    clock_drift_s_per_s: f64,
    iterations: usize,
    converged: bool,
    final_delta_norm: f64,
    error_m: f64,
}

#[derive(Serialize)]
struct SolutionFile {
    initial: SolutionSide,
    refined: SolutionSide,
    lambda: f64,
    measurement_count: usize,
    kept_count: usize,
    reference_position_ecef_m: [f64; 3],
}

fn side(state: &PVTState, report: &ResidualReport, reference: Vector3<f64>) -> SolutionSide {
    SolutionSide {
        position_ecef_m: state.position_ecef_m,
        clock_drift_s_per_s: state.clock_drift_s_per_s,
        iterations: report.iterations,
        converged: report.converged,
        final_delta_norm: report.final_delta_norm,
        error_m: (state.position() - reference).norm(),
    }
}

fn nav_config(cfg: &PipelineConfig) -> NavConfig {
    NavConfig {
        epsilon: cfg.nav.epsilon,
        max_iters: cfg.nav.max_iters,
        mode: cfg.nav.mode,
        lambda: cfg.nav.lambda,
        condition_limit: cfg.nav.condition_limit,
    }
}

fn assigned_measurements(out: &Path, cfg: &PipelineConfig) -> Result<Vec<DopplerMeasurement>> {
    let meas = load_measurements(&out.join(&cfg.paths.measurements))?;
    Ok(meas.into_iter().filter(|m| m.sv_id.is_some()).collect())
}

fn cmd_solve(cfg: &PipelineConfig, out: &Path, verbose: bool) -> Result<()> {
    let assigned = assigned_measurements(out, cfg)?;
    let tables = load_ephemerides(out)?;
    let ncfg = nav_config(cfg);
    let s0 = PVTState::static_at(cfg.nav.initial_position_ecef_m);
    let f_c = cfg.acquisition_scenario.f_c_hz;
    let reference = Vector3::from(cfg.acquisition_scenario.rx_position_ecef_m);

    let (fix, report) = solve_ls(&assigned, &tables, &s0, &ncfg, f_c)?;
    if !report.converged {
        return Err(NotConverged {
            iterations: report.iterations,
            delta: report.final_delta_norm,
        }
        .into());
    }
    let (refined, refined_report) =
        postfit_refine(&assigned, &tables, &fix, &report, &ncfg, f_c)?;
    if !refined_report.converged {
        return Err(NotConverged {
            iterations: refined_report.iterations,
            delta: refined_report.final_delta_norm,
        }
        .into());
    }
    write_residuals(&out.join(&cfg.paths.residuals), &assigned, &refined_report)?;
    let solution = SolutionFile {
        initial: side(&fix, &report, reference),
        refined: side(&refined, &refined_report, reference),
        lambda: ncfg.lambda,
        measurement_count: assigned.len(),
        kept_count: refined_report.kept.iter().filter(|&&k| k).count(),
        reference_position_ecef_m: reference.into(),
    };
    let text = serde_json::to_string_pretty(&solution).expect("solution serializes");
    let path = out.join(&cfg.paths.solution);
    std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
    println!(
        "solution: initial error {:.1} m, refined error {:.1} m (lambda {:.2}, {} of {} kept)",
        solution.initial.error_m,
        solution.refined.error_m,
        ncfg.lambda,
        solution.kept_count,
        solution.measurement_count
    );
    if verbose {
        println!(
            "  drift: initial {:.3e} s/s, refined {:.3e} s/s",
            solution.initial.clock_drift_s_per_s, solution.refined.clock_drift_s_per_s
        );
    }
    Ok(())
}

fn cmd_report(cfg: &PipelineConfig, out: &Path, _verbose: bool) -> Result<()> {
    // beacon magnitude head and tail
    let (beacon, _) = load_beacon(&out.join(&cfg.paths.beacon))?;
    let h = cfg.report.head_tail_len.min(beacon.b_hat.len());
    let mut head = String::from("n,magnitude\n");
    for (n, c) in beacon.b_hat.iter().take(h).enumerate() {
        head.push_str(&format!("{n},{}\n", c.norm()));
    }
    let head_path = out.join("beacon_head.csv");
    std::fs::write(&head_path, head).map_err(|e| CoreError::io(&head_path, e))?;
    let mut tail = String::from("n,magnitude\n");
    let n0 = beacon.b_hat.len() - h;
    for (i, c) in beacon.b_hat[n0..].iter().enumerate() {
        tail.push_str(&format!("{},{}\n", n0 + i, c.norm()));
    }
    let tail_path = out.join("beacon_tail.csv");
    std::fs::write(&tail_path, tail).map_err(|e| CoreError::io(&tail_path, e))?;

    // phase differences of accepted iterations, from the estimator trace
    let trace_path = out.join("est_trace.csv");
    let text = std::fs::read_to_string(&trace_path)
        .map_err(|e| CoreError::io(&trace_path, e))?;
    let mut phases = String::from("k,delta_phi_rad\n");
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 8 && fields[7].trim() == "1" {
            phases.push_str(&format!("{},{}\n", fields[0], fields[2]));
        }
    }
    let phases_path = out.join("phase_differences.csv");
    std::fs::write(&phases_path, phases).map_err(|e| CoreError::io(&phases_path, e))?;

    // lambda sweep against the scenario's true receiver position
    let assigned = assigned_measurements(out, cfg)?;
    let sweep_path = out.join("lambda_sweep.csv");
    let ncfg = nav_config(cfg);
    if assigned.len() < ncfg.mode.unknowns() {
        eprintln!(
            "warning: {} associated measurements, below the {} unknowns; writing empty plot data",
            assigned.len(),
            ncfg.mode.unknowns()
        );
        write_lambda_sweep(&sweep_path, &[])?;
        return Ok(());
    }
    let tables = load_ephemerides(out)?;
    let s0 = PVTState::static_at(cfg.nav.initial_position_ecef_m);
    let reference = Vector3::from(cfg.acquisition_scenario.rx_position_ecef_m);
    let sweep = lambda_sweep(
        &assigned,
        &tables,
        &s0,
        &ncfg,
        cfg.acquisition_scenario.f_c_hz,
        &cfg.report.lambda_sweep,
        reference,
    )?;
    write_lambda_sweep(&sweep_path, &sweep)?;
    println!(
        "report: beacon head/tail, {} phase differences, lambda sweep over {} points",
        text.lines().skip(1).filter(|l| l.ends_with(",1")).count(),
        sweep.len()
    );
    Ok(())
}
