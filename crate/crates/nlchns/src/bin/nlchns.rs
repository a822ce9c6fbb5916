//! Command-line driver: runs the simulators and verification experiments
//! from TOML configurations and writes all artifacts to the output
//! directory.
//!
//! Exit codes: 0 success, 2 validation failure (with a machine-readable
//! error line on stderr), 3 numerical abort with partial artifacts
//! flushed.

use clap::{Parser, Subcommand};
use nlchns::config::{ForcingBlock, RunConfig};
use nlchns::convective::{
    ch_energy_residual, ch_simulate, uniqueness_contraction_test, ChConfig, ChMode, ChStepper,
    GivenVelocity,
};
use nlchns::dynamics::{simulate, SimOptions, Stepper};
use nlchns::energetics::dissipative_constants;
use nlchns::ensemble::{absorption_experiment, random_state, sample_initial_data};
use nlchns::grid::ScalarField;
use nlchns::io;
use nlchns::kernel::build_kernel;
use nlchns::ops::{h1_dual_norm_vec_ctx, SpectralCtx};
use nlchns::potential::verify_assumptions;
use nlchns::signals::{gronwall_bound, verify_integral_inequality, SampledSignal};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nlchns", version, about = "Nonlocal Cahn-Hilliard-Navier-Stokes simulator and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled solver and write the energy ledger and snapshots.
    Simulate { config: PathBuf },
    /// Run the convective Cahn-Hilliard solver (torus or bounded-fd).
    ChOnly { config: PathBuf },
    /// Verify the potential/kernel structural constants.
    CheckAssumptions { config: PathBuf },
    /// Verify the generalized Gronwall lemma on synthetic signals.
    GronwallVerify { config: PathBuf },
    /// Ensemble absorption experiment against the analytic entry times.
    ProbeAttractor { config: PathBuf },
    /// Two-trajectory uniqueness contraction experiment.
    ContractionTest { config: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: msg.into(),
        }
    }

    fn numerical(msg: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: msg.into(),
        }
    }
}

impl From<nlchns::Error> for Failure {
    fn from(e: nlchns::Error) -> Self {
        Failure::validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config } => run_simulate(&config),
        Command::ChOnly { config } => run_ch_only(&config),
        Command::CheckAssumptions { config } => run_check_assumptions(&config),
        Command::GronwallVerify { config } => run_gronwall(&config),
        Command::ProbeAttractor { config } => run_probe(&config),
        Command::ContractionTest { config } => run_contraction(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: code={} msg=\"{}\"", f.code, f.message);
            ExitCode::from(f.code)
        }
    }
}

struct Setup {
    cfg: RunConfig,
    out: PathBuf,
}

fn load(config_path: &Path) -> Result<Setup, Failure> {
    let cfg = RunConfig::from_path(config_path)?;
    let out = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&out).map_err(|e| Failure::validation(e.to_string()))?;
    Ok(Setup { cfg, out })
}

fn run_simulate(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let grid = cfg.grid.build()?;
    let kernel = build_kernel(grid, cfg.kernel.build()?)?;
    let stepper_block = cfg
        .stepper
        .as_ref()
        .ok_or_else(|| Failure::validation("simulate requires a [stepper] block"))?;
    let step_cfg = stepper_block.build(grid)?;
    let stepper = Stepper::new(&kernel, cfg.potential.build()?, step_cfg)?;

    let exp = &cfg.experiment;
    let t_final = exp
        .t_final
        .ok_or_else(|| Failure::validation("experiment.t_final is required"))?;
    let state0 = random_state(
        grid,
        cfg.seed.unwrap_or(0),
        exp.u0_amplitude.unwrap_or(0.0),
        exp.phi0_amplitude.unwrap_or(0.0),
        exp.phi0_mean.unwrap_or(0.0),
    );

    // Validate the transport CFL before stepping.
    stepper.check_cfl(&state0)?;

    io::write_snapshot(&out.join("initial.bin"), &state0)?;
    let opts = SimOptions {
        snapshot_stride: exp.snapshot_stride.unwrap_or(0),
    };
    let ledger_stride = exp.ledger_stride.unwrap_or(1);
    match simulate(&stepper, &state0, state0.t + t_final, opts) {
        Ok(series) => {
            io::write_ledger_csv(&out.join("ledger.csv"), &series.ledger, ledger_stride)?;
            for (i, state) in series.states.iter().enumerate() {
                io::write_snapshot(&out.join(format!("snap_{i:05}.bin")), state)?;
            }
            io::write_snapshot(&out.join("final.bin"), series.states.last().unwrap())?;
            let drift = mass_drift(&series.ledger);
            let report = format!(
                "steps = {}\nfinal_t = {}\nfinal_E = {}\nmass_drift_rel = {}\n",
                series.ledger.len() - 1,
                series.states.last().unwrap().t,
                series.ledger.last().unwrap().total,
                drift / grid.domain_measure()
            );
            std::fs::write(out.join("report.txt"), report)
                .map_err(|e| Failure::numerical(e.to_string()))?;
            Ok(())
        }
        Err(abort) => {
            // Flush partial artifacts, then report the numerical abort.
            let _ = io::write_ledger_csv(&out.join("ledger.csv"), &abort.partial.ledger, ledger_stride);
            if let Some(last) = abort.partial.states.last() {
                let _ = io::write_snapshot(&out.join("last_valid.bin"), last);
            }
            Err(Failure::numerical(format!(
                "aborted at step {}: {}",
                abort.step, abort.reason
            )))
        }
    }
}

fn mass_drift(ledger: &[nlchns::energetics::EnergyLedgerEntry]) -> f64 {
    let m0 = ledger.first().map(|r| r.mass).unwrap_or(0.0);
    ledger
        .iter()
        .map(|r| (r.mass - m0).abs())
        .fold(0.0, f64::max)
}

fn run_ch_only(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let grid = cfg.grid.build()?;
    let stepper_block = cfg
        .stepper
        .as_ref()
        .ok_or_else(|| Failure::validation("ch-only requires a [stepper] block"))?;
    let exp = &cfg.experiment;
    let t_final = exp
        .t_final
        .ok_or_else(|| Failure::validation("experiment.t_final is required"))?;
    let ch_cfg = ChConfig {
        dt: stepper_block.dt,
        s_stab: stepper_block.s_stab.unwrap_or(8.0),
        cfl_limit: stepper_block.cfl_limit.unwrap_or(0.5),
    };
    let mode = match exp.mode.as_deref().unwrap_or("torus-spectral") {
        "torus-spectral" => ChMode::TorusSpectral,
        "bounded-fd" => ChMode::BoundedFd,
        other => {
            return Err(Failure::validation(format!(
                "unknown ch-only mode '{other}'"
            )))
        }
    };
    let stepper = match mode {
        ChMode::TorusSpectral => {
            let kernel = build_kernel(grid, cfg.kernel.build()?)?;
            ChStepper::torus(&kernel, cfg.potential.build()?, ch_cfg)?
        }
        ChMode::BoundedFd => ChStepper::bounded_fd(grid, cfg.kernel.build()?, cfg.potential.build()?, ch_cfg)?,
    };
    let vel = match exp.velocity_amplitude {
        Some(amp) if amp != 0.0 => {
            let u = shear_velocity(grid, amp, mode);
            GivenVelocity::new(mode, u)?
        }
        _ => GivenVelocity::zero(mode, grid),
    };
    let phi0 = random_phi(grid, cfg.seed.unwrap_or(0), exp.phi0_amplitude.unwrap_or(0.5), exp.phi0_mean.unwrap_or(0.0));

    let series = ch_simulate(&stepper, &phi0, &vel, t_final, exp.snapshot_stride.unwrap_or(0))
        .map_err(|e| Failure::numerical(e.to_string()))?;
    let mut ledger_csv = String::from("t,E,grad_mu_sq,transport_power,mass\n");
    for row in &series.ledger {
        ledger_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.t, row.energy, row.grad_mu_sq, row.transport_power, row.mass
        ));
    }
    std::fs::write(out.join("ch_ledger.csv"), ledger_csv)
        .map_err(|e| Failure::numerical(e.to_string()))?;
    let residuals = ch_energy_residual(&series.ledger, series.dt);
    let res_signal = SampledSignal::new(0.0, series.dt, residuals.clone())?;
    io::write_signal_csv(&out.join("residuals.csv"), &res_signal)?;
    let m0 = series.ledger.first().map(|r| r.mass).unwrap_or(0.0);
    let drift = series
        .ledger
        .iter()
        .map(|r| (r.mass - m0).abs())
        .fold(0.0, f64::max);
    let report = format!(
        "steps = {}\nmax_residual = {}\nmass_drift_rel = {}\n",
        series.ledger.len() - 1,
        residuals.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        drift / grid.domain_measure()
    );
    std::fs::write(out.join("report.txt"), report).map_err(|e| Failure::numerical(e.to_string()))?;
    Ok(())
}

fn shear_velocity(grid: nlchns::grid::GridSpec, amplitude: f64, mode: ChMode) -> nlchns::grid::VectorField {
    let l = grid.side_length;
    match mode {
        ChMode::TorusSpectral => nlchns::grid::VectorField {
            x: ScalarField::from_fn(grid, |_, y| {
                amplitude * (2.0 * std::f64::consts::PI * y / l).sin()
            }),
            y: ScalarField::zeros(grid),
        },
        ChMode::BoundedFd => {
            // Discrete stream-function vortex: exactly divergence-free and
            // non-penetrating in the scheme's sense.
            let raw = nlchns::convective::fd_stream_velocity(grid, |x, y| {
                (std::f64::consts::PI * x / l).sin() * (std::f64::consts::PI * y / l).sin()
            });
            let max = raw.max_magnitude().max(1e-300);
            nlchns::grid::VectorField {
                x: ScalarField {
                    grid,
                    data: raw.x.data.iter().map(|v| v * amplitude / max).collect(),
                },
                y: ScalarField {
                    grid,
                    data: raw.y.data.iter().map(|v| v * amplitude / max).collect(),
                },
            }
        }
    }
}

fn random_phi(grid: nlchns::grid::GridSpec, seed: u64, amplitude: f64, mean: f64) -> ScalarField {
    let state = random_state(grid, seed, 0.0, amplitude, mean);
    state.phi
}

fn run_check_assumptions(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let grid = cfg.grid.build()?;
    let kernel = build_kernel(grid, cfg.kernel.build()?)?;
    let report = verify_assumptions(&cfg.potential.build()?, &kernel, cfg.experiment.mass_bound.unwrap_or(5.0))?;
    let block = report.to_key_value_block();
    std::fs::write(out.join("assumptions.txt"), &block)
        .map_err(|e| Failure::validation(e.to_string()))?;
    print!("{block}");
    if report.all_ok() {
        Ok(())
    } else {
        Err(Failure::validation("assumption verification failed"))
    }
}

fn run_gronwall(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let exp = &cfg.experiment;
    let k = exp.k.unwrap_or(1.0);
    let l = exp.l.unwrap_or(0.0);
    let theta0 = exp.theta0.unwrap_or(2.0);
    let samples = exp.samples.unwrap_or(4001);
    let dt = exp.sample_dt.unwrap_or(1e-3);
    if k <= 0.0 {
        return Err(Failure::validation("experiment.k must be positive"));
    }

    // Saturating solution theta' = -k theta + l.
    let theta = SampledSignal::from_fn(0.0, dt, samples, |t| {
        (theta0 - l / k) * (-k * t).exp() + l / k
    });
    let f = SampledSignal::from_fn(0.0, dt, samples, |_| l);
    let report = verify_integral_inequality(&theta, &f, k)?;
    let bound = gronwall_bound(theta0, k, l, &SampledSignal::from_fn(0.0, dt, samples, |_| 0.0))?;
    io::write_signal_csv(&out.join("gronwall_theta.csv"), &theta)?;
    io::write_signal_csv(&out.join("gronwall_bound.csv"), &bound.tail_form)?;

    // Constructed violator: an upward jump part-way through.
    let violator = SampledSignal::from_fn(0.0, dt, samples, |t| {
        (theta0 - l / k) * (-k * t).exp() + l / k + if t > 0.5 * dt * samples as f64 { theta0 * 0.5 } else { 0.0 }
    });
    let violation = verify_integral_inequality(&violator, &f, k)?;

    let text = format!(
        "inequality_holds = {}\nconclusion_holds = {}\nconclusion_min_slack = {}\nviolator_flagged = {}\n",
        report.inequality_holds,
        report.conclusion_holds,
        report.conclusion_min_slack,
        !violation.inequality_holds
    );
    std::fs::write(out.join("gronwall_report.txt"), &text)
        .map_err(|e| Failure::validation(e.to_string()))?;
    print!("{text}");
    if report.inequality_holds && report.conclusion_holds && !violation.inequality_holds {
        Ok(())
    } else {
        Err(Failure::validation("gronwall verification failed"))
    }
}

fn run_probe(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let grid = cfg.grid.build()?;
    let kernel = build_kernel(grid, cfg.kernel.build()?)?;
    let stepper_block = cfg
        .stepper
        .as_ref()
        .ok_or_else(|| Failure::validation("probe-attractor requires a [stepper] block"))?;
    let step_cfg = stepper_block.build(grid)?;
    let exp = &cfg.experiment;

    let assumptions = verify_assumptions(&cfg.potential.build()?, &kernel, 5.0)?;
    let h_tb = forcing_tb_norm(&grid, stepper_block.forcing.as_ref())?;
    let potential = cfg.potential.build()?;
    let constants = dissipative_constants(
        &potential,
        &assumptions,
        &kernel,
        grid,
        step_cfg.nu1,
        h_tb,
        exp.mass_bound.unwrap_or(0.0),
        None,
    )?;

    let targets = exp
        .energy_targets
        .clone()
        .ok_or_else(|| Failure::validation("experiment.energy_targets is required"))?;
    let ensemble = sample_initial_data(
        &kernel,
        &potential,
        exp.mass_bound.unwrap_or(0.0),
        &targets,
        cfg.seed.unwrap_or(0),
    )?;
    let stepper = Stepper::new(&kernel, cfg.potential.build()?, step_cfg)?;
    for state in &ensemble.states {
        stepper.check_cfl(state)?;
    }
    let horizon = exp.horizon.unwrap_or(50.0);
    let report = absorption_experiment(
        &ensemble,
        &stepper,
        &kernel,
        &potential,
        &constants,
        horizon,
        exp.sample_stride.unwrap_or(50),
    )
    .map_err(|e| Failure::numerical(e.to_string()))?;
    std::fs::write(out.join("absorption.csv"), report.csv())
        .map_err(|e| Failure::numerical(e.to_string()))?;
    let mut summary = report.to_key_value_block();
    summary.push_str(&constants.to_key_value_block());
    std::fs::write(out.join("summary.txt"), &summary)
        .map_err(|e| Failure::numerical(e.to_string()))?;
    print!("{summary}");
    if report.all_within_bound() {
        Ok(())
    } else {
        Err(Failure::numerical(
            "a member missed the analytic entry bound",
        ))
    }
}

fn forcing_tb_norm(
    grid: &nlchns::grid::GridSpec,
    forcing: Option<&ForcingBlock>,
) -> Result<f64, Failure> {
    match forcing {
        None => Ok(0.0),
        Some(block) => match block.build(*grid)? {
            nlchns::dynamics::Forcing::None => Ok(0.0),
            nlchns::dynamics::Forcing::Steady(pattern)
            | nlchns::dynamics::Forcing::TimePeriodic { pattern, .. } => {
                let ctx = SpectralCtx::new(*grid);
                Ok(h1_dual_norm_vec_ctx(&ctx, &pattern))
            }
        },
    }
}

fn run_contraction(config_path: &Path) -> Result<(), Failure> {
    let Setup { cfg, out } = load(config_path)?;
    let grid = cfg.grid.build()?;
    let kernel = build_kernel(grid, cfg.kernel.build()?)?;
    let stepper_block = cfg
        .stepper
        .as_ref()
        .ok_or_else(|| Failure::validation("contraction-test requires a [stepper] block"))?;
    let exp = &cfg.experiment;
    let t_final = exp.t_final.unwrap_or(1.0);
    let ch_cfg = ChConfig {
        dt: stepper_block.dt,
        s_stab: stepper_block.s_stab.unwrap_or(8.0),
        cfl_limit: stepper_block.cfl_limit.unwrap_or(0.5),
    };
    let stepper = ChStepper::torus(&kernel, cfg.potential.build()?, ch_cfg)?;
    let assumptions = verify_assumptions(&cfg.potential.build()?, &kernel, 5.0)?;

    let vel_amp = exp.velocity_amplitude.unwrap_or(1.0);
    let vel = if vel_amp == 0.0 {
        GivenVelocity::zero(ChMode::TorusSpectral, grid)
    } else {
        GivenVelocity::new(ChMode::TorusSpectral, shear_velocity(grid, vel_amp, ChMode::TorusSpectral))?
    };

    let phi0 = random_phi(grid, cfg.seed.unwrap_or(0), exp.phi0_amplitude.unwrap_or(0.5), exp.phi0_mean.unwrap_or(0.0));
    let delta_norm = exp.delta_norm.unwrap_or(1e-6);
    let raw_delta = random_phi(grid, cfg.seed.unwrap_or(0).wrapping_add(777), 1.0, 0.0);
    let norm = nlchns::grid::l2_norm(&raw_delta).max(1e-300);
    let delta = ScalarField {
        grid,
        data: raw_delta.data.iter().map(|v| v * delta_norm / norm).collect(),
    };

    let report = uniqueness_contraction_test(
        &stepper,
        &assumptions,
        &kernel,
        &phi0,
        &delta,
        &vel,
        t_final,
    )
    .map_err(|e| Failure::numerical(e.to_string()))?;
    std::fs::write(out.join("contraction.csv"), report.csv())
        .map_err(|e| Failure::numerical(e.to_string()))?;
    let block = report.to_key_value_block();
    std::fs::write(out.join("contraction_report.txt"), &block)
        .map_err(|e| Failure::numerical(e.to_string()))?;
    print!("{block}");
    if report.passed {
        Ok(())
    } else {
        Err(Failure::numerical("contraction bound violated"))
    }
}
