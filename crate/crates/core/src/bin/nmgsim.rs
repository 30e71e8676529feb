use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmg_sim::controller::apply_setpoint_reassignment;
use nmg_sim::engine::Simulation;
use nmg_sim::steady_state::{solve_steady_state, SteadyStateOptions};
use nmg_sim::trace::{write_events, TraceWriter};
use nmg_sim::{plots, Scenario, SimError};

#[derive(Parser)]
#[command(name = "nmgsim", version, about = "Networked-microgrid black start and synchronization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and events.csv.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Simulated time (s).
        #[arg(long)]
        duration: Option<f64>,
        /// Control step (s).
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        record_every: Option<usize>,
        #[arg(long)]
        disable_dapi_voltage: bool,
        #[arg(long)]
        disable_phase_consensus: bool,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Solve the closed-loop equilibrium.
    SteadyState {
        #[arg(long)]
        scenario: PathBuf,
        /// All breakers closed with setpoints averaged per island (otherwise
        /// all open).
        #[arg(long)]
        closed: bool,
    },
    /// Parse and check a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

const EXIT_INVALID: u8 = 1;
const EXIT_SOLVER: u8 = 2;

fn load(path: &PathBuf) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(EXIT_INVALID)
    })
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_SOLVER)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scenario: PathBuf,
    out: PathBuf,
    duration: Option<f64>,
    dt: Option<f64>,
    record_every: Option<usize>,
    disable_dapi_voltage: bool,
    disable_phase_consensus: bool,
    plots: bool,
) -> Result<(), ExitCode> {
    let mut sc = load(&scenario)?;
    if let Some(d) = duration {
        sc.config.duration = d;
    }
    if let Some(d) = dt {
        sc.config.dt_control = d;
    }
    if let Some(r) = record_every {
        sc.config.record_every = r;
    }
    if disable_dapi_voltage {
        sc.config.voltage_dapi = false;
    }
    if disable_phase_consensus {
        sc.config.gains.phase_consensus = false;
    }
    let invalid = sc.config.violations();
    if !invalid.is_empty() {
        eprintln!("invalid options: {}", invalid.join("; "));
        return Err(ExitCode::from(EXIT_INVALID));
    }
    std::fs::create_dir_all(&out).map_err(fail)?;

    let sim = Simulation::new(sc.topology.clone(), sc.params.clone(), sc.initial_states(), sc.config.clone())
        .map_err(|e| match e {
            SimError::InvalidTopology(_) | SimError::InvalidConfig(_) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_INVALID)
            }
            other => fail(other),
        })?;
    let ibrs = sc.topology.ibr_ids().to_vec();
    let breakers: Vec<_> = sc.topology.breakers.iter().map(|b| b.id.clone()).collect();
    let trace_path = out.join("trace.csv");
    let mut writer =
        TraceWriter::new(BufWriter::new(File::create(&trace_path).map_err(fail)?), &ibrs, &breakers).map_err(fail)?;
    let mut prev_latched = vec![false; breakers.len()];
    let result = sim.run_with(|r| {
        writer.write(r).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if r.latched != prev_latched {
            writer.flush().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            prev_latched = r.latched.clone();
        }
        Ok(())
    });
    writer.flush().map_err(fail)?;
    let run = result.map_err(fail)?;
    write_events(&run.events, BufWriter::new(File::create(out.join("events.csv")).map_err(fail)?)).map_err(fail)?;

    for (t, b) in run.events.closures() {
        println!("t = {t:8.4} s  breaker {b} closed");
    }
    if let Some(f) = &run.final_record {
        println!("final state at t = {:.4} s:", f.t);
        println!("  {:<8} {:>12} {:>12} {:>12} {:>10}", "ibr", "P (kW)", "Q (kVAr)", "f (Hz)", "V (V)");
        for (i, id) in run.ibr_ids.iter().enumerate() {
            println!("  {:<8} {:>12.3} {:>12.3} {:>12.6} {:>10.3}", id.as_str(), f.p[i] / 1e3, f.q[i] / 1e3, f.f_hz[i], f.v[i]);
        }
    }
    println!("max power-balance residual: {:.3e}", run.max_balance_residual);
    println!("wrote {}", trace_path.display());

    if plots {
        let files = plots::emit_plots(&trace_path, &out).map_err(fail)?;
        for p in files {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn steady_state(scenario: PathBuf, closed: bool) -> Result<(), ExitCode> {
    let sc = load(&scenario)?;
    let flags = vec![closed; sc.topology.breakers.len()];
    let mut params = sc.params.clone();
    if closed {
        let ibr_bus: Vec<usize> = sc.topology.ibr_buses().into_iter().flatten().collect();
        for island in sc.topology.island_indices(&flags) {
            let members: Vec<usize> = (0..params.len()).filter(|&i| island.contains(&ibr_bus[i])).collect();
            if !members.is_empty() {
                apply_setpoint_reassignment(&mut params, &members, false).map_err(fail)?;
            }
        }
    }
    let opts = SteadyStateOptions { gains: sc.config.gains, voltage_dapi: sc.config.voltage_dapi, ..Default::default() };
    let sol = solve_steady_state(&sc.topology, &params, &flags, &opts).map_err(fail)?;
    println!("{:<8} {:>12} {:>12} {:>12} {:>10} {:>10}", "ibr", "P (kW)", "Q (kVAr)", "f (Hz)", "V (V)", "delta (deg)");
    for (id, s) in sc.topology.ibr_ids().iter().zip(&sol) {
        println!(
            "{:<8} {:>12.3} {:>12.3} {:>12.6} {:>10.3} {:>10.4}",
            id.as_str(),
            s.p / 1e3,
            s.q / 1e3,
            s.f_hz,
            s.v,
            s.delta.to_degrees()
        );
    }
    Ok(())
}

fn validate(scenario: PathBuf) -> Result<(), ExitCode> {
    let sc = load(&scenario)?;
    for v in sc.topology.validate().violations {
        println!("warning: {v}");
    }
    println!(
        "ok: {} IBRs, {} buses, {} lines, {} breakers, T_com = {} s",
        sc.topology.ibr_ids().len(),
        sc.topology.buses.len(),
        sc.topology.lines.len(),
        sc.topology.breakers.len(),
        sc.topology.comm.period
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            duration,
            dt,
            record_every,
            disable_dapi_voltage,
            disable_phase_consensus,
            plots,
        } => simulate(scenario, out, duration, dt, record_every, disable_dapi_voltage, disable_phase_consensus, plots),
        Command::SteadyState { scenario, closed } => steady_state(scenario, closed),
        Command::Validate { scenario } => validate(scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
