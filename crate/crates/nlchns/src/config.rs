//! Run configuration: a strict TOML schema with no silent defaults for
//! physical parameters.
//!
//! Grid geometry, kernel family and mass, potential family and viscosity
//! bounds must all be stated; numeric defaults exist only for tolerances
//! and cadence (dealias fraction, CFL limit, stabilization, strides). The
//! constant chains are parameter-sensitive, and a defaulted physical value
//! would hide an assumption violation. Unknown keys are rejected.

use crate::dynamics::{Forcing, StepperConfig};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::kernel::KernelShape;
use crate::ops::SpectralCtx;
use crate::potential::PotentialSpec;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Domain side length `L`.
    pub side_length: f64,
    /// Points per axis.
    pub resolution: usize,
    /// Dealias fraction (default 2/3).
    pub dealias_fraction: Option<f64>,
}

impl GridBlock {
    pub fn build(&self) -> Result<GridSpec> {
        GridSpec::with_dealias(
            self.side_length,
            self.resolution,
            self.dealias_fraction.unwrap_or(2.0 / 3.0),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingBlock {
    /// `zero`, `steady`, or `time-periodic`.
    pub kind: String,
    /// Amplitude of the single-mode pattern.
    pub amplitude: Option<f64>,
    /// Integer mode `[mx, my]` of the pattern.
    pub mode: Option<[i64; 2]>,
    /// Angular frequency for `time-periodic`.
    pub omega: Option<f64>,
}

impl ForcingBlock {
    pub fn build(&self, grid: GridSpec) -> Result<Forcing> {
        match self.kind.as_str() {
            "zero" => Ok(Forcing::None),
            "steady" | "time-periodic" => {
                let amplitude = self.amplitude.ok_or_else(|| {
                    Error::Config("forcing.amplitude is required for nonzero forcing".into())
                })?;
                let mode = self.mode.ok_or_else(|| {
                    Error::Config("forcing.mode is required for nonzero forcing".into())
                })?;
                let pattern = single_mode_pattern(grid, amplitude, mode);
                if self.kind == "steady" {
                    Ok(Forcing::Steady(pattern))
                } else {
                    let omega = self.omega.ok_or_else(|| {
                        Error::Config("forcing.omega is required for time-periodic forcing".into())
                    })?;
                    Ok(Forcing::TimePeriodic { pattern, omega })
                }
            }
            other => Err(Error::Config(format!("unknown forcing kind '{other}'"))),
        }
    }
}

/// Divergence-free single-mode force pattern (a projected sine shear).
pub fn single_mode_pattern(grid: GridSpec, amplitude: f64, mode: [i64; 2]) -> VectorField {
    let l = grid.side_length;
    let tau = std::f64::consts::TAU;
    let raw = VectorField {
        x: ScalarField::from_fn(grid, |x, y| {
            amplitude * (tau * (mode[0] as f64 * x + mode[1] as f64 * y) / l).sin()
        }),
        y: ScalarField::from_fn(grid, |x, y| {
            amplitude * (tau * (mode[0] as f64 * x + mode[1] as f64 * y) / l).cos()
        }),
    };
    SpectralCtx::new(grid).leray_project(&raw)
}

/// Kernel family block; strict keys (the tagged-enum representation of
/// [`KernelShape`] cannot reject unknown keys on its own).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    /// `periodized-gaussian` or `mollified-newtonian`.
    pub family: String,
    pub epsilon: Option<f64>,
    pub cutoff: Option<f64>,
    pub mass: f64,
}

impl KernelBlock {
    pub fn build(&self) -> Result<KernelShape> {
        match self.family.as_str() {
            "periodized-gaussian" => Ok(KernelShape::PeriodizedGaussian {
                epsilon: self.epsilon.ok_or_else(|| {
                    Error::Config("kernel.epsilon is required for periodized-gaussian".into())
                })?,
                mass: self.mass,
            }),
            "mollified-newtonian" => Ok(KernelShape::MollifiedNewtonian {
                cutoff: self.cutoff.ok_or_else(|| {
                    Error::Config("kernel.cutoff is required for mollified-newtonian".into())
                })?,
                mass: self.mass,
            }),
            other => Err(Error::Config(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Potential family block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    /// `quartic-double-well`.
    pub family: String,
}

impl PotentialBlock {
    pub fn build(&self) -> Result<PotentialSpec> {
        match self.family.as_str() {
            "quartic-double-well" => Ok(PotentialSpec::QuarticDoubleWell),
            other => Err(Error::Config(format!(
                "unknown potential family '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperBlock {
    pub dt: f64,
    /// Stabilization shift (default 8, covering the well region).
    pub s_stab: Option<f64>,
    pub nu1: f64,
    pub nu2: f64,
    /// Courant limit (default 0.5).
    pub cfl_limit: Option<f64>,
    pub forcing: Option<ForcingBlock>,
}

impl StepperBlock {
    pub fn build(&self, grid: GridSpec) -> Result<StepperConfig> {
        let forcing = match &self.forcing {
            Some(block) => block.build(grid)?,
            None => Forcing::None,
        };
        let cfg = StepperConfig {
            dt: self.dt,
            s_stab: self.s_stab.unwrap_or(8.0),
            nu1: self.nu1,
            nu2: self.nu2,
            cfl_limit: self.cfl_limit.unwrap_or(0.5),
            forcing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-subcommand experiment parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    /// Final time of the run.
    pub t_final: Option<f64>,
    /// Snapshot cadence in steps.
    pub snapshot_stride: Option<usize>,
    /// Ledger decimation for the CSV artifact (rows kept every this many
    /// steps; all rows are always used for in-memory checks).
    pub ledger_stride: Option<usize>,
    /// Amplitude of the random initial velocity.
    pub u0_amplitude: Option<f64>,
    /// Amplitude of the random initial order parameter.
    pub phi0_amplitude: Option<f64>,
    /// Mean of the initial order parameter.
    pub phi0_mean: Option<f64>,
    /// `torus-spectral` or `bounded-fd` (ch-only).
    pub mode: Option<String>,
    /// Perturbation norm for the contraction test.
    pub delta_norm: Option<f64>,
    /// Prescribed velocity amplitude (ch-only / contraction).
    pub velocity_amplitude: Option<f64>,
    /// Mass bound `m` of the phase space.
    pub mass_bound: Option<f64>,
    /// Ensemble energy targets.
    pub energy_targets: Option<Vec<f64>>,
    /// Horizon of the absorption experiment.
    pub horizon: Option<f64>,
    /// Sampling stride (steps) for absorption distances.
    pub sample_stride: Option<usize>,
    /// Gronwall verification: decay rate.
    pub k: Option<f64>,
    /// Gronwall verification: constant inflow.
    pub l: Option<f64>,
    /// Gronwall verification: initial value.
    pub theta0: Option<f64>,
    /// Gronwall verification: sample count.
    pub samples: Option<usize>,
    /// Gronwall verification: sample spacing.
    pub sample_dt: Option<f64>,
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub kernel: KernelBlock,
    pub potential: PotentialBlock,
    pub stepper: Option<StepperBlock>,
    #[serde(default)]
    pub experiment: ExperimentBlock,
    pub output_dir: String,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
