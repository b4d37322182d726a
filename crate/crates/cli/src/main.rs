//! Command line front end: mesh generation, convergence studies, scenario
//! simulation and configuration checking.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 runtime instability.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use calwave::flux::{flux_er, flux_plasma, InfluxPulse};
use calwave::gating::step_channel;
use calwave::mesh::{validate_mesh, write_mesh};
use calwave::mms::{convergence_study, standard_levels};
use calwave::output::{write_state_snapshots, write_timeseries_csv, TimeSeriesRow};
use calwave::scenario::{
    build_schedule, builtin_scenario, parse_config, simulation_from_config, ScenarioConfig,
    ScenarioId,
};
use calwave::stepper::{Geometry, RunOutcome};

#[derive(Parser)]
#[command(
    name = "calwave",
    version,
    about = "2D finite element calcium dynamics simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cytosol/ER meshes and write them in calmesh format.
    Mesh {
        #[arg(long, default_value_t = 1.0)]
        r_inner: f64,
        #[arg(long, default_value_t = 2.0)]
        r_outer: f64,
        /// Target mesh size (arc length).
        #[arg(long)]
        h: f64,
        #[arg(long, default_value = "out/mesh")]
        out_dir: PathBuf,
    },
    /// Run the manufactured-solution convergence study.
    Converge {
        /// Manufactured case id (1 or 2).
        #[arg(long)]
        example: u8,
        /// Number of refinement levels starting at h = pi/8.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a wave scenario, writing snapshots and a time series.
    Simulate {
        /// Built-in scenario id (ex3 or ex4).
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        /// Scenario configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the time step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the mesh size.
        #[arg(long)]
        h: Option<f64>,
        /// Override the final time.
        #[arg(long)]
        t_end: Option<f64>,
        /// Override the output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Validate a configuration and its derived objects without a full run.
    Check {
        #[arg(long, conflicts_with = "config")]
        scenario: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Mesh {
            r_inner,
            r_outer,
            h,
            out_dir,
        } => cmd_mesh(r_inner, r_outer, h, &out_dir),
        Command::Converge {
            example,
            levels,
            csv,
        } => cmd_converge(example, levels, csv.as_deref()),
        Command::Simulate {
            scenario,
            config,
            dt,
            h,
            t_end,
            out_dir,
        } => cmd_simulate(
            scenario.as_deref(),
            config.as_deref(),
            dt,
            h,
            t_end,
            out_dir.as_deref(),
        ),
        Command::Check { scenario, config } => cmd_check(scenario.as_deref(), config.as_deref()),
    };
    ExitCode::from(code)
}

fn fail(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    1
}

fn cmd_mesh(r_inner: f64, r_outer: f64, h: f64, out_dir: &Path) -> u8 {
    let geometry = match Geometry::generate(r_inner, r_outer, h) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail(e);
    }
    for mesh in [&geometry.cytosol, &geometry.er] {
        let report = validate_mesh(mesh);
        println!("{} mesh: {report}", mesh.domain.token());
        if !report.is_valid() {
            return fail("generated mesh failed validation");
        }
        let path = out_dir.join(format!("{}.mesh", mesh.domain.token()));
        if let Err(e) = write_mesh(mesh, &path) {
            return fail(e);
        }
        println!("wrote {}", path.display());
    }
    println!("interface nodes: {}", geometry.interface.len());
    0
}

fn cmd_converge(example: u8, levels: usize, csv: Option<&Path>) -> u8 {
    if levels < 2 {
        return fail("need at least 2 levels to fit a rate");
    }
    let hs = standard_levels(levels);
    let report = match convergence_study(example, &hs) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    print!("{}", report.table());
    if let Some(path) = csv {
        if let Err(e) = std::fs::write(path, report.to_csv()) {
            return fail(e);
        }
        println!("wrote {}", path.display());
    }
    0
}

fn load_config(scenario: Option<&str>, config: Option<&Path>) -> Result<ScenarioConfig, String> {
    match (scenario, config) {
        (Some(id), None) => {
            let id: ScenarioId = id.parse()?;
            Ok(builtin_scenario(id))
        }
        (None, Some(path)) => parse_config(path).map_err(|e| e.to_string()),
        _ => Err("give exactly one of --scenario or --config".into()),
    }
}

fn cmd_simulate(
    scenario: Option<&str>,
    config: Option<&Path>,
    dt: Option<f64>,
    h: Option<f64>,
    t_end: Option<f64>,
    out_dir: Option<&Path>,
) -> u8 {
    let mut config = match load_config(scenario, config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(dt) = dt {
        config.numerics.dt = dt;
    }
    if let Some(h) = h {
        config.geometry.h = h;
    }
    if let Some(t_end) = t_end {
        config.numerics.t_end = t_end;
        config.output.snapshot_times.retain(|&t| t <= t_end);
    }
    if let Some(dir) = out_dir {
        config.output.dir = dir.display().to_string();
    }
    if let Err(e) = config.validate() {
        return fail(e);
    }

    let out_dir = PathBuf::from(&config.output.dir);
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(e);
    }
    let mut sim = match simulation_from_config(&config) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let n_steps = config.n_steps();
    let schedule = build_schedule(&config.output.snapshot_times, config.numerics.dt, n_steps);
    println!(
        "{}: {} steps of dt = {} on h = {} ({} + {} nodes)",
        config.name,
        n_steps,
        config.numerics.dt,
        config.geometry.h,
        sim.geometry.cytosol.vertex_count(),
        sim.geometry.er.vertex_count()
    );

    let stride = config.output.timeseries_stride;
    let mut rows: Vec<TimeSeriesRow> = Vec::new();
    let mut pending: Vec<(usize, f64)> = schedule.iter().map(|e| (e.step, e.actual)).collect();
    pending.dedup();
    // Snapshot states are collected during the run and written afterwards.
    let mut snapshots: Vec<(f64, calwave::stepper::FieldState)> = Vec::new();
    if pending.first().map_or(false, |&(step, _)| step == 0) {
        snapshots.push((0.0, sim.state.clone()));
        pending.remove(0);
    }
    let summary = {
        let pending = &mut pending;
        let rows = &mut rows;
        let snapshots = &mut snapshots;
        sim.run(n_steps, |_, state, stats| {
            if state.step % stride == 0 || state.step == n_steps {
                rows.push(TimeSeriesRow::from_state(state, stats));
            }
            if pending
                .first()
                .map_or(false, |&(step, _)| step == state.step)
            {
                let (_, actual) = pending.remove(0);
                snapshots.push((actual, state.clone()));
            }
        })
    };
    let summary = match summary {
        Ok(s) => s,
        Err(e) => return fail(e),
    };

    for (t, state) in &snapshots {
        let prefix = format!("{}_t{:.4}", config.name, t);
        if let Err(e) = write_state_snapshots(state, &sim.geometry, &prefix, &out_dir) {
            return fail(e);
        }
    }
    if !rows.is_empty() {
        if let Err(e) = write_timeseries_csv(&rows, &out_dir.join("timeseries.csv")) {
            return fail(e);
        }
    }
    println!(
        "max u = {:.4} at t = {:.4}; min u_e = {:.4} at t = {:.4}; max P = {:.4} at t = {:.4}",
        summary.max_u.value,
        summary.max_u.time,
        summary.min_ue.value,
        summary.min_ue.time,
        summary.max_p.value,
        summary.max_p.time
    );
    println!(
        "wrote {} time series rows and {} snapshot times to {}",
        rows.len(),
        snapshots.len(),
        out_dir.display()
    );
    match summary.outcome {
        RunOutcome::Completed => {
            println!(
                "completed {} steps to t = {}",
                summary.steps, summary.final_t
            );
            0
        }
        RunOutcome::Unstable { step, time, reason } => {
            eprintln!("instability at step {step} (t = {time:.6}): {reason}");
            2
        }
    }
}

fn cmd_check(scenario: Option<&str>, config: Option<&Path>) -> u8 {
    let config = match load_config(scenario, config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool, detail: String| {
        if ok {
            println!("ok: {name}{detail}");
        } else {
            println!("FAIL: {name}{detail}");
            failures += 1;
        }
    };

    check(
        "config invariants",
        config.validate().is_ok(),
        String::new(),
    );

    let geometry = match Geometry::generate(
        config.geometry.r_inner,
        config.geometry.r_outer,
        config.geometry.h,
    ) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    for mesh in [&geometry.cytosol, &geometry.er] {
        let report = validate_mesh(mesh);
        check(
            "mesh validation",
            report.is_valid(),
            format!(
                " ({}: {} vertices, min angle {:.1} deg)",
                mesh.domain.token(),
                report.vertex_count,
                report.min_angle_deg
            ),
        );
    }
    check(
        "interface pairing",
        geometry
            .interface
            .max_pair_distance(&geometry.cytosol, &geometry.er)
            == 0.0,
        format!(" ({} pairs, max distance 0)", geometry.interface.len()),
    );

    match simulation_from_config(&config) {
        Ok(mut sim) => {
            check(
                "system matrices symmetric positive definite",
                true,
                format!(" ({} assemblies)", sim.plan().assembly_count()),
            );
            match sim.step() {
                Ok(stats) => check(
                    "one trial step",
                    true,
                    format!(" ({} solver iterations)", stats.solver_iterations),
                ),
                Err(e) => check("one trial step", false, format!(" ({e})")),
            }
        }
        Err(e) => check(
            "system matrices symmetric positive definite",
            false,
            format!(" ({e})"),
        ),
    }

    // Flux sign conditions on a coarse grid with this config's parameters.
    let p = &config.physics.flux;
    let mut sign_ok = true;
    let k3 = 2.0 * p.c2e / (p.ks * p.m) + p.c1e + p.c3e;
    let k5 = p.c1e + p.c3e;
    for i in 0..=50 {
        for j in 0..=50 {
            let u = 1000.0 * i as f64 / 50.0;
            let ue = 1000.0 * j as f64 / 50.0;
            for prob in [0.0, 1.0] {
                let ge = flux_er(u, ue, prob, p);
                sign_ok &= ge <= k3 * u + 1e-9 && ge >= -k5 * ue - 1e-9;
            }
        }
        let u = 1000.0 * i as f64 / 50.0;
        sign_ok &= flux_plasma(u, 0.0, 0.0, 0.0, p, &InfluxPulse::None) <= p.c3c * p.c_o + 1e-9;
    }
    sign_ok &= flux_plasma(0.0, 0.0, 0.0, 0.0, p, &InfluxPulse::None) >= 0.0;
    sign_ok &= flux_plasma(p.c_o, 0.0, 0.0, 0.0, p, &InfluxPulse::None) <= 0.0;
    check("flux sign conditions", sign_ok, String::new());

    // Gating simplex stability smoke with this config's rates.
    let mut state = config.gating_state();
    let mut simplex_ok = true;
    let mut x = 0x9e3779b97f4a7c15u64;
    for _ in 0..1000 {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        let u = (x >> 11) as f64 / (1u64 << 53) as f64 * 5.0;
        match step_channel(&state, u, 1e-3, &config.physics.rates) {
            Ok(next) => {
                simplex_ok &= next.in_simplex(1e-10);
                state = next;
            }
            Err(_) => {
                simplex_ok = false;
                break;
            }
        }
    }
    check(
        "gating simplex stability (1000 random steps)",
        simplex_ok,
        String::new(),
    );

    if failures == 0 {
        println!("all checks passed");
        0
    } else {
        eprintln!("{failures} check(s) failed");
        1
    }
}
