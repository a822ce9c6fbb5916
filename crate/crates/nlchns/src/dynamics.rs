//! Coupled time stepper for the nonlocal Cahn-Hilliard-Navier-Stokes
//! system on the torus.
//!
//! One step is a first-order IMEX advance with constant-coefficient
//! implicit blocks, so both solves are diagonal in Fourier space:
//!
//! ```text
//! (phi+ - phi)/dt + div(u phi) =
//!     lap[ a0 phi+ + s (phi+ - phi) - J*phi + F'(phi) ],
//! (u+ - u)/dt + P div(u x u) =
//!     numean lap(u+) + P div((nu(phi) - numean) 2Du)
//!     + P(-phi grad mu) + P h,
//! ```
//!
//! followed by a Leray projection and the 2/3-rule mask. Quadratic and
//! cubic products are dealiased; the mean mode is always retained, so the
//! total concentration `(phi, 1)` is conserved exactly and, for mean-free
//! forcing, so is the total momentum.

use crate::energetics::EnergyLedgerEntry;
use crate::fft::SpectralField;
use crate::grid::{inner, GridSpec, ScalarField, VectorField};
use crate::kernel::KernelField;
use crate::ops::SpectralCtx;
use crate::potential::PotentialSpec;
use crate::{Error, Result};
use rustfft::num_complex::Complex;

/// Instantaneous state of the coupled flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    /// Velocity, divergence-free after every step.
    pub u: VectorField,
    /// Order parameter.
    pub phi: ScalarField,
    /// Time stamp.
    pub t: f64,
}

impl FlowState {
    pub fn grid(&self) -> GridSpec {
        self.phi.grid
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.phi.is_finite()
    }
}

/// External force acting on the mixture.
#[derive(Debug, Clone)]
pub enum Forcing {
    None,
    /// Time-independent force field (projected onto divergence-free fields
    /// by the stepper).
    Steady(VectorField),
    /// `pattern * cos(omega t)`.
    TimePeriodic { pattern: VectorField, omega: f64 },
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::None)
    }

    /// Scalar factor multiplying the pattern at time `t`.
    pub fn amplitude(&self, t: f64) -> f64 {
        match self {
            Forcing::None => 0.0,
            Forcing::Steady(_) => 1.0,
            Forcing::TimePeriodic { omega, .. } => (omega * t).cos(),
        }
    }
}

/// Time-stepping parameters.
#[derive(Debug, Clone)]
pub struct StepperConfig {
    pub dt: f64,
    /// Stabilization coefficient of the implicit `s (phi+ - phi)` shift.
    pub s_stab: f64,
    /// Lower viscosity bound.
    pub nu1: f64,
    /// Upper viscosity bound.
    pub nu2: f64,
    /// Courant number limit for the explicit transport terms.
    pub cfl_limit: f64,
    pub forcing: Forcing,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.s_stab < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "stabilization must be nonnegative, got {}",
                self.s_stab
            )));
        }
        if !(self.nu1 > 0.0 && self.nu2 >= self.nu1) {
            return Err(Error::InvalidParameter(format!(
                "viscosity bounds must satisfy 0 < nu1 <= nu2, got [{}, {}]",
                self.nu1, self.nu2
            )));
        }
        if !(self.cfl_limit > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cfl limit must be positive, got {}",
                self.cfl_limit
            )));
        }
        Ok(())
    }

    /// Mean viscosity used for the implicit split.
    pub fn nu_mean(&self) -> f64 {
        0.5 * (self.nu1 + self.nu2)
    }

    /// Concentration-dependent viscosity, clipped to `[nu1, nu2]`.
    pub fn viscosity(&self, s: f64) -> f64 {
        (self.nu1 + (self.nu2 - self.nu1) * (1.0 + s) / 2.0).clamp(self.nu1, self.nu2)
    }
}

/// Chemical potential `mu = a phi - J*phi + F'(phi)` (pointwise, not
/// dealiased; evaluation only).
pub fn chemical_potential(
    kernel: &KernelField,
    spec: &PotentialSpec,
    phi: &ScalarField,
) -> Result<ScalarField> {
    kernel.grid.check_same(&phi.grid, "chemical_potential")?;
    let conv = crate::ops::convolve(kernel, phi)?;
    let mut mu = ScalarField::zeros(phi.grid);
    for i in 0..phi.data.len() {
        mu.data[i] = kernel.a_field.data[i] * phi.data[i] - conv.data[i]
            + spec.f_prime(phi.data[i]);
    }
    Ok(mu)
}

/// Korteweg force `-phi grad(mu)` with the product dealiased. Its Leray
/// projection agrees with that of `mu grad(phi)`; the two differ by the
/// gradient of `phi mu`.
pub fn korteweg_force(ctx: &SpectralCtx, phi: &ScalarField, mu: &ScalarField) -> VectorField {
    let mu_hat = ctx.fft.forward(mu);
    let grad_mu = ctx.gradient_spec(&mu_hat);
    let mut fx = ctx.dealiased_product_spec(phi, &grad_mu.x);
    let mut fy = ctx.dealiased_product_spec(phi, &grad_mu.y);
    for v in fx.data.iter_mut() {
        *v = -*v;
    }
    for v in fy.data.iter_mut() {
        *v = -*v;
    }
    VectorField {
        x: ctx.fft.inverse(&fx),
        y: ctx.fft.inverse(&fy),
    }
}

/// Trilinear form `b(u, v, w) = int (u . grad) v . w`.
pub fn trilinear_b(ctx: &SpectralCtx, u: &VectorField, v: &VectorField, w: &VectorField) -> f64 {
    let gvx = ctx.gradient(&v.x);
    let gvy = ctx.gradient(&v.y);
    let mut acc = 0.0;
    for i in 0..u.x.data.len() {
        let adv_x = u.x.data[i] * gvx.x.data[i] + u.y.data[i] * gvx.y.data[i];
        let adv_y = u.x.data[i] * gvy.x.data[i] + u.y.data[i] * gvy.y.data[i];
        acc += adv_x * w.x.data[i] + adv_y * w.y.data[i];
    }
    acc * ctx.grid.cell_area()
}

/// Result of one IMEX advance of the order parameter.
pub(crate) struct PhiAdvance {
    pub phi_new_hat: SpectralField,
    pub mu_hat: SpectralField,
}

/// Shared IMEX advance of `phi` under a frozen transporting velocity; both
/// the coupled stepper and the convective solver call this, so a coupled
/// run with `u = 0` and a convective run with zero velocity agree bit for
/// bit.
#[allow(clippy::too_many_arguments)]
pub(crate) fn phi_imex_advance(
    ctx: &SpectralCtx,
    j_hat: &[f64],
    a0: f64,
    spec: &PotentialSpec,
    dt: f64,
    s_stab: f64,
    u: &VectorField,
    phi: &ScalarField,
    phi_hat: &SpectralField,
) -> PhiAdvance {
    let n = ctx.grid.resolution;

    let f_prime = ScalarField {
        grid: ctx.grid,
        data: phi.data.iter().map(|&s| spec.f_prime(s)).collect(),
    };
    let mut g_hat = ctx.fft.forward(&f_prime);
    ctx.dealias(&mut g_hat);

    let mut mu_hat = SpectralField::zeros(ctx.grid);
    for i in 0..mu_hat.data.len() {
        mu_hat.data[i] = (a0 - j_hat[i]) * phi_hat.data[i] + g_hat.data[i];
    }

    // Transport flux u phi (conservative form keeps the mean exact).
    let wx_hat = ctx.dealiased_product_spec(&u.x, phi);
    let wy_hat = ctx.dealiased_product_spec(&u.y, phi);

    let mut phi_new_hat = SpectralField::zeros(ctx.grid);
    for iy in 0..n {
        for ix in 0..n {
            let idx = iy * n + ix;
            if !ctx.keep[idx] {
                continue;
            }
            let ksq = ctx.ksq(ix, iy);
            let ikx = Complex::new(0.0, ctx.k[ix]);
            let iky = Complex::new(0.0, ctx.k[iy]);
            let transport = ikx * wx_hat.data[idx] + iky * wy_hat.data[idx];
            let explicit_mu = (-s_stab - j_hat[idx]) * phi_hat.data[idx] + g_hat.data[idx];
            let rhs = phi_hat.data[idx] + dt * (-transport - ksq * explicit_mu);
            let denom = 1.0 + dt * ksq * (a0 + s_stab);
            phi_new_hat.data[idx] = rhs / denom;
        }
    }

    PhiAdvance {
        phi_new_hat,
        mu_hat,
    }
}

/// Per-step diagnostics captured while the transforms are warm.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub kinetic: f64,
    pub nonlocal: f64,
    pub potential: f64,
    pub visc_dissipation: f64,
    pub mu_dissipation: f64,
    pub forcing_power: f64,
    pub mass: f64,
}

/// IMEX stepper bound to one grid/kernel/potential/config. All fields are
/// read-only after construction, so distinct trajectories can advance
/// concurrently on shared kernels and grids.
pub struct Stepper {
    pub ctx: SpectralCtx,
    spec: PotentialSpec,
    pub cfg: StepperConfig,
    /// Real kernel spectrum (same layout as a spectral field).
    j_hat: Vec<f64>,
    /// Constant value of `a` on the torus.
    a0: f64,
    /// Spectrum of the (projected) forcing pattern.
    h_hat: Option<(SpectralField, SpectralField)>,
    /// Physical forcing pattern for power bookkeeping.
    h_pattern: Option<VectorField>,
}

impl Stepper {
    pub fn new(
        kernel: &KernelField,
        spec: PotentialSpec,
        cfg: StepperConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let ctx = SpectralCtx::new(kernel.grid);
        let j_hat: Vec<f64> = kernel.spectrum.iter().map(|c| c.re).collect();
        let a0 = kernel.a_constant();

        let (h_hat, h_pattern) = match &cfg.forcing {
            Forcing::None => (None, None),
            Forcing::Steady(pattern) | Forcing::TimePeriodic { pattern, .. } => {
                kernel.grid.check_same(pattern.grid(), "forcing pattern")?;
                let projected = ctx.leray_project(pattern);
                let mut hx = ctx.fft.forward(&projected.x);
                let mut hy = ctx.fft.forward(&projected.y);
                ctx.dealias(&mut hx);
                ctx.dealias(&mut hy);
                let physical = VectorField {
                    x: ctx.fft.inverse(&hx),
                    y: ctx.fft.inverse(&hy),
                };
                (Some((hx, hy)), Some(physical))
            }
        };

        Ok(Self {
            ctx,
            spec,
            cfg,
            j_hat,
            a0,
            h_hat,
            h_pattern,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.ctx.grid
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.spec
    }

    /// Forcing field at time `t`, if any.
    pub fn forcing_at(&self, t: f64) -> Option<VectorField> {
        let pattern = self.h_pattern.as_ref()?;
        let amp = self.cfg.forcing.amplitude(t);
        Some(VectorField {
            x: ScalarField {
                grid: pattern.x.grid,
                data: pattern.x.data.iter().map(|v| amp * v).collect(),
            },
            y: ScalarField {
                grid: pattern.y.grid,
                data: pattern.y.data.iter().map(|v| amp * v).collect(),
            },
        })
    }

    /// Transport CFL check for the explicit advection terms.
    pub fn check_cfl(&self, state: &FlowState) -> Result<()> {
        let max_u = state.u.max_magnitude();
        if max_u == 0.0 {
            return Ok(());
        }
        let limit = self.cfg.cfl_limit * self.ctx.grid.spacing() / max_u;
        if self.cfg.dt > limit {
            return Err(Error::CflViolation {
                dt: self.cfg.dt,
                limit,
                max_u,
            });
        }
        Ok(())
    }

    /// One IMEX step. Returns the advanced state and the diagnostics of the
    /// state that was stepped from.
    pub fn step(&self, state: &FlowState) -> Result<(FlowState, StepDiagnostics)> {
        self.grid().check_same(&state.grid(), "step")?;
        if !state.is_finite() {
            return Err(Error::NonFinite {
                t: state.t,
                step: 0,
            });
        }
        self.check_cfl(state)?;

        let ctx = &self.ctx;
        let n = ctx.grid.resolution;
        let dt = self.cfg.dt;
        let quad_norm = ctx.grid.domain_measure() / (ctx.grid.len() as f64).powi(2);

        let phi_hat = ctx.fft.forward(&state.phi);
        let ux_hat = ctx.fft.forward(&state.u.x);
        let uy_hat = ctx.fft.forward(&state.u.y);

        let PhiAdvance {
            phi_new_hat,
            mu_hat,
        } = phi_imex_advance(
            ctx,
            &self.j_hat,
            self.a0,
            &self.spec,
            dt,
            self.cfg.s_stab,
            &state.u,
            &state.phi,
            &phi_hat,
        );

        // Momentum advection in divergence form, div(u x u).
        let p11 = ctx.dealiased_product_spec(&state.u.x, &state.u.x);
        let p12 = ctx.dealiased_product_spec(&state.u.x, &state.u.y);
        let p22 = ctx.dealiased_product_spec(&state.u.y, &state.u.y);

        // Variable-viscosity stress divergence, skipped when nu is constant.
        let variable_visc = self.cfg.nu2 > self.cfg.nu1;
        let visc_dissipation;
        let (q11, q12, q22) = if variable_visc {
            let mut s11 = SpectralField::zeros(ctx.grid);
            let mut s12 = SpectralField::zeros(ctx.grid);
            let mut s22 = SpectralField::zeros(ctx.grid);
            for iy in 0..n {
                for ix in 0..n {
                    let idx = iy * n + ix;
                    let ikx = Complex::new(0.0, ctx.k[ix]);
                    let iky = Complex::new(0.0, ctx.k[iy]);
                    s11.data[idx] = 2.0 * ikx * ux_hat.data[idx];
                    s12.data[idx] = iky * ux_hat.data[idx] + ikx * uy_hat.data[idx];
                    s22.data[idx] = 2.0 * iky * uy_hat.data[idx];
                }
            }
            let s11 = ctx.fft.inverse(&s11);
            let s12 = ctx.fft.inverse(&s12);
            let s22 = ctx.fft.inverse(&s22);
            let nu_dev = ScalarField {
                grid: ctx.grid,
                data: state
                    .phi
                    .data
                    .iter()
                    .map(|&s| self.cfg.viscosity(s) - self.cfg.nu_mean())
                    .collect(),
            };
            // 2 || sqrt(nu) Du ||^2 = int nu (s11^2 + 2 s12^2 + s22^2) / 2.
            visc_dissipation = state
                .phi
                .data
                .iter()
                .zip(s11.data.iter().zip(s12.data.iter().zip(&s22.data)))
                .map(|(&p, (a, (b, c)))| {
                    self.cfg.viscosity(p) * (a * a + 2.0 * b * b + c * c) / 2.0
                })
                .sum::<f64>()
                * ctx.grid.cell_area();
            (
                Some(ctx.dealiased_product_spec(&nu_dev, &s11)),
                Some(ctx.dealiased_product_spec(&nu_dev, &s12)),
                Some(ctx.dealiased_product_spec(&nu_dev, &s22)),
            )
        } else {
            // Constant nu: 2 nu ||Du||^2 = nu ||grad u||^2 on the torus, so
            // the strain fields are not needed at all.
            visc_dissipation = self.cfg.nu1
                * (ctx.grad_norm_sq_spec(&ux_hat) + ctx.grad_norm_sq_spec(&uy_hat));
            (None, None, None)
        };

        // Korteweg force -phi grad(mu), dealiased.
        let grad_mu = ctx.gradient_spec(&mu_hat);
        let mut fx_hat = ctx.dealiased_product_spec(&state.phi, &grad_mu.x);
        let mut fy_hat = ctx.dealiased_product_spec(&state.phi, &grad_mu.y);
        for v in fx_hat.data.iter_mut() {
            *v = -*v;
        }
        for v in fy_hat.data.iter_mut() {
            *v = -*v;
        }
        // The continuum force integrates to zero (int phi grad mu = 0 by the
        // evenness of J); the quadrature residue at the mean mode is pure
        // aliasing, so drop it and keep the momentum balance exact.
        fx_hat.data[0] = Complex::new(0.0, 0.0);
        fy_hat.data[0] = Complex::new(0.0, 0.0);

        let h_amp = self.cfg.forcing.amplitude(state.t);

        let mut ux_new = SpectralField::zeros(ctx.grid);
        let mut uy_new = SpectralField::zeros(ctx.grid);
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                if !ctx.keep[idx] {
                    continue;
                }
                let ksq = ctx.ksq(ix, iy);
                let ikx = Complex::new(0.0, ctx.k[ix]);
                let iky = Complex::new(0.0, ctx.k[iy]);
                let conv_x = ikx * p11.data[idx] + iky * p12.data[idx];
                let conv_y = ikx * p12.data[idx] + iky * p22.data[idx];
                let (divq_x, divq_y) = match (&q11, &q12, &q22) {
                    (Some(q11), Some(q12), Some(q22)) => (
                        ikx * q11.data[idx] + iky * q12.data[idx],
                        ikx * q12.data[idx] + iky * q22.data[idx],
                    ),
                    _ => (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)),
                };
                let (hx, hy) = match &self.h_hat {
                    Some((hx, hy)) => (h_amp * hx.data[idx], h_amp * hy.data[idx]),
                    None => (Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)),
                };
                let rhs_x = ux_hat.data[idx]
                    + dt * (-conv_x + divq_x + fx_hat.data[idx] + hx);
                let rhs_y = uy_hat.data[idx]
                    + dt * (-conv_y + divq_y + fy_hat.data[idx] + hy);
                let denom = 1.0 + dt * self.cfg.nu_mean() * ksq;
                ux_new.data[idx] = rhs_x / denom;
                uy_new.data[idx] = rhs_y / denom;
            }
        }
        ctx.leray_project_spec(&mut ux_new, &mut uy_new);

        // Diagnostics of the state being stepped from.
        let kinetic = 0.5
            * (inner(&state.u.x, &state.u.x) + inner(&state.u.y, &state.u.y));
        let mut nonlocal = 0.0;
        let mut mu_dissipation = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                nonlocal += 0.5 * (self.a0 - self.j_hat[idx]) * phi_hat.data[idx].norm_sqr();
                mu_dissipation += ctx.ksq(ix, iy) * mu_hat.data[idx].norm_sqr();
            }
        }
        nonlocal *= quad_norm;
        mu_dissipation *= quad_norm;
        let potential = state.phi.data.iter().map(|&s| self.spec.f(s)).sum::<f64>()
            * ctx.grid.cell_area();
        let forcing_power = match &self.h_pattern {
            Some(p) => {
                h_amp * (inner(&p.x, &state.u.x) + inner(&p.y, &state.u.y))
            }
            None => 0.0,
        };
        let diagnostics = StepDiagnostics {
            kinetic,
            nonlocal,
            potential,
            visc_dissipation,
            mu_dissipation,
            forcing_power,
            mass: state.phi.integral(),
        };

        let new_state = FlowState {
            u: VectorField {
                x: ctx.fft.inverse(&ux_new),
                y: ctx.fft.inverse(&uy_new),
            },
            phi: ctx.fft.inverse(&phi_new_hat),
            t: state.t + dt,
        };
        if !new_state.is_finite() {
            return Err(Error::NonFinite {
                t: new_state.t,
                step: 0,
            });
        }
        Ok((new_state, diagnostics))
    }
}

/// Sampled trajectory: snapshots at the observer cadence plus the per-step
/// energy ledger.
#[derive(Debug, Clone)]
pub struct TrajectorySeries {
    /// States at `snapshot_stride` multiples (always contains the initial
    /// and final states).
    pub states: Vec<FlowState>,
    /// One ledger row per visited state time (steps + 1 rows on success).
    pub ledger: Vec<EnergyLedgerEntry>,
    pub dt: f64,
    /// Time between stored snapshots.
    pub snapshot_dt: f64,
}

/// A run that died mid-flight; the partial series remains analyzable.
#[derive(Debug)]
pub struct SimAbort {
    pub partial: TrajectorySeries,
    pub step: usize,
    pub reason: Error,
}

/// Observer cadence for [`simulate`].
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Store a snapshot every this many steps (0 stores only the first and
    /// last states).
    pub snapshot_stride: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { snapshot_stride: 0 }
    }
}

fn ledger_row(t: f64, d: &StepDiagnostics) -> EnergyLedgerEntry {
    EnergyLedgerEntry {
        t,
        total: d.kinetic + d.nonlocal + d.potential,
        kinetic: d.kinetic,
        nonlocal: d.nonlocal,
        potential: d.potential,
        visc_dissipation: d.visc_dissipation,
        mu_dissipation: d.mu_dissipation,
        forcing_power: d.forcing_power,
        mass: d.mass,
    }
}

/// Advance `state0` to `t_final`, collecting snapshots and the per-step
/// ledger. Deterministic: identical inputs reproduce the series bit for
/// bit, and observers never touch the state.
pub fn simulate(
    stepper: &Stepper,
    state0: &FlowState,
    t_final: f64,
    opts: SimOptions,
) -> std::result::Result<TrajectorySeries, Box<SimAbort>> {
    let dt = stepper.cfg.dt;
    let span = t_final - state0.t;
    let n_steps = if span <= 0.0 {
        0
    } else {
        (span / dt).round().max(0.0) as usize
    };
    let stride = opts.snapshot_stride;

    let mut states = vec![state0.clone()];
    let mut ledger: Vec<EnergyLedgerEntry> = Vec::with_capacity(n_steps + 1);
    let mut current = state0.clone();

    for step_idx in 0..n_steps {
        match stepper.step(&current) {
            Ok((next, diag)) => {
                ledger.push(ledger_row(current.t, &diag));
                current = next;
                let is_last = step_idx + 1 == n_steps;
                if (stride > 0 && (step_idx + 1) % stride == 0 && !is_last) || is_last {
                    states.push(current.clone());
                }
            }
            Err(reason) => {
                if states.last().map(|s| s.t) != Some(current.t) {
                    states.push(current.clone());
                }
                return Err(Box::new(SimAbort {
                    partial: TrajectorySeries {
                        states,
                        ledger,
                        dt,
                        snapshot_dt: dt * stride.max(1) as f64,
                    },
                    step: step_idx,
                    reason,
                }));
            }
        }
    }

    // Final ledger row from a full evaluation of the last state.
    let final_diag = stepper.diagnostics_only(&current);
    ledger.push(ledger_row(current.t, &final_diag));

    Ok(TrajectorySeries {
        states,
        ledger,
        dt,
        snapshot_dt: dt * stride.max(1) as f64,
    })
}

impl Stepper {
    /// Diagnostics of a state without advancing it.
    pub fn diagnostics_only(&self, state: &FlowState) -> StepDiagnostics {
        let ctx = &self.ctx;
        let n = ctx.grid.resolution;
        let quad_norm = ctx.grid.domain_measure() / (ctx.grid.len() as f64).powi(2);
        let phi_hat = ctx.fft.forward(&state.phi);
        let ux_hat = ctx.fft.forward(&state.u.x);
        let uy_hat = ctx.fft.forward(&state.u.y);
        let f_prime = ScalarField {
            grid: ctx.grid,
            data: state.phi.data.iter().map(|&s| self.spec.f_prime(s)).collect(),
        };
        let mut g_hat = ctx.fft.forward(&f_prime);
        ctx.dealias(&mut g_hat);

        let mut nonlocal = 0.0;
        let mut mu_dissipation = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                let mu = (self.a0 - self.j_hat[idx]) * phi_hat.data[idx] + g_hat.data[idx];
                nonlocal += 0.5 * (self.a0 - self.j_hat[idx]) * phi_hat.data[idx].norm_sqr();
                mu_dissipation += ctx.ksq(ix, iy) * mu.norm_sqr();
            }
        }
        nonlocal *= quad_norm;
        mu_dissipation *= quad_norm;

        let visc_dissipation = if self.cfg.nu2 > self.cfg.nu1 {
            let mut s11 = SpectralField::zeros(ctx.grid);
            let mut s12 = SpectralField::zeros(ctx.grid);
            let mut s22 = SpectralField::zeros(ctx.grid);
            for iy in 0..n {
                for ix in 0..n {
                    let idx = iy * n + ix;
                    let ikx = Complex::new(0.0, ctx.k[ix]);
                    let iky = Complex::new(0.0, ctx.k[iy]);
                    s11.data[idx] = 2.0 * ikx * ux_hat.data[idx];
                    s12.data[idx] = iky * ux_hat.data[idx] + ikx * uy_hat.data[idx];
                    s22.data[idx] = 2.0 * iky * uy_hat.data[idx];
                }
            }
            let s11 = ctx.fft.inverse(&s11);
            let s12 = ctx.fft.inverse(&s12);
            let s22 = ctx.fft.inverse(&s22);
            state
                .phi
                .data
                .iter()
                .zip(s11.data.iter().zip(s12.data.iter().zip(&s22.data)))
                .map(|(&p, (a, (b, c)))| {
                    self.cfg.viscosity(p) * (a * a + 2.0 * b * b + c * c) / 2.0
                })
                .sum::<f64>()
                * ctx.grid.cell_area()
        } else {
            self.cfg.nu1 * (ctx.grad_norm_sq_spec(&ux_hat) + ctx.grad_norm_sq_spec(&uy_hat))
        };

        let kinetic =
            0.5 * (inner(&state.u.x, &state.u.x) + inner(&state.u.y, &state.u.y));
        let potential = state.phi.data.iter().map(|&s| self.spec.f(s)).sum::<f64>()
            * ctx.grid.cell_area();
        let forcing_power = match &self.h_pattern {
            Some(p) => {
                self.cfg.forcing.amplitude(state.t)
                    * (inner(&p.x, &state.u.x) + inner(&p.y, &state.u.y))
            }
            None => 0.0,
        };
        StepDiagnostics {
            kinetic,
            nonlocal,
            potential,
            visc_dissipation,
            mu_dissipation,
            forcing_power,
            mass: state.phi.integral(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, GridSpec};
    use crate::kernel::{build_kernel, KernelShape};
    use crate::testutil::smooth_field;

    fn setup(n: usize) -> (KernelField, PotentialSpec) {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, n).unwrap();
        let kernel = build_kernel(
            grid,
            KernelShape::PeriodizedGaussian {
                epsilon: (2.0 * grid.side_length / n as f64).max(0.5),
                mass: 5.0,
            },
        )
        .unwrap();
        (kernel, PotentialSpec::QuarticDoubleWell)
    }

    fn default_cfg(dt: f64) -> StepperConfig {
        StepperConfig {
            dt,
            s_stab: 8.0,
            nu1: 0.5,
            nu2: 1.5,
            cfl_limit: 0.5,
            forcing: Forcing::None,
        }
    }

    fn div_free_field(ctx: &SpectralCtx, seed: u64, scale: f64) -> VectorField {
        let raw = VectorField {
            x: smooth_field(ctx.grid, 4, seed, 0.0),
            y: smooth_field(ctx.grid, 4, seed + 1, 0.0),
        };
        let v = ctx.leray_project(&raw);
        VectorField {
            x: ScalarField {
                grid: ctx.grid,
                data: v.x.data.iter().map(|a| a * scale).collect(),
            },
            y: ScalarField {
                grid: ctx.grid,
                data: v.y.data.iter().map(|a| a * scale).collect(),
            },
        }
    }

    #[test]
    fn chemical_potential_on_constants() {
        let (kernel, spec) = setup(32);
        // phi = m: a phi - J*phi vanishes, mu = F'(m)
        let m = 0.37;
        let phi = ScalarField::constant(kernel.grid, m);
        let mu = chemical_potential(&kernel, &spec, &phi).unwrap();
        let expected = spec.f_prime(m);
        for v in &mu.data {
            assert!((v - expected).abs() < 1e-10);
        }
        // phi = 1: mu = 0
        let phi = ScalarField::constant(kernel.grid, 1.0);
        let mu = chemical_potential(&kernel, &spec, &phi).unwrap();
        assert!(mu.max_abs() < 1e-10);
    }

    #[test]
    fn chemical_potential_fourier_multiplier() {
        // Single mode, linear part only: mu_hat = (a - Jhat) phi_hat.
        let (kernel, _) = setup(32);
        let grid = kernel.grid;
        let ctx = SpectralCtx::new(grid);
        let l = grid.side_length;
        let phi = ScalarField::from_fn(grid, |x, _| (2.0 * std::f64::consts::TAU * x / l).cos());
        // drop F' by subtracting it afterwards
        let spec = PotentialSpec::QuarticDoubleWell;
        let mu = chemical_potential(&kernel, &spec, &phi).unwrap();
        let linear = ScalarField {
            grid,
            data: mu
                .data
                .iter()
                .zip(&phi.data)
                .map(|(m, p)| m - spec.f_prime(*p))
                .collect(),
        };
        let lin_hat = ctx.fft.forward(&linear);
        let phi_hat = ctx.fft.forward(&phi);
        let a0 = kernel.a_constant();
        for i in 0..lin_hat.data.len() {
            let expected = (a0 - kernel.spectrum[i].re) * phi_hat.data[i];
            assert!((lin_hat.data[i] - expected).norm() < 1e-8 * (grid.len() as f64));
        }
    }

    #[test]
    fn korteweg_force_trivial_cases() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        // constant phi, constant mu: zero force
        let phi = ScalarField::constant(kernel.grid, 0.8);
        let mu = chemical_potential(&kernel, &spec, &phi).unwrap();
        let f = korteweg_force(&ctx, &phi, &mu);
        assert!(f.max_magnitude() < 1e-10);
        // phi = 0: zero force
        let zero = ScalarField::zeros(kernel.grid);
        let mu = smooth_field(kernel.grid, 4, 3, 0.1);
        let f = korteweg_force(&ctx, &zero, &mu);
        assert!(f.max_magnitude() < 1e-12);
    }

    #[test]
    fn korteweg_projection_identity() {
        // P(-phi grad mu) = P(mu grad phi): the difference is a gradient.
        let (kernel, _) = setup(48);
        let ctx = SpectralCtx::new(kernel.grid);
        let phi = smooth_field(kernel.grid, 5, 11, 0.2);
        let mu = smooth_field(kernel.grid, 5, 12, -0.3);
        let f1 = ctx.leray_project(&korteweg_force(&ctx, &phi, &mu));
        let minus_f2 = korteweg_force(&ctx, &mu, &phi); // -mu grad phi
        let f2 = ctx.leray_project(&VectorField {
            x: ScalarField {
                grid: kernel.grid,
                data: minus_f2.x.data.iter().map(|v| -v).collect(),
            },
            y: ScalarField {
                grid: kernel.grid,
                data: minus_f2.y.data.iter().map(|v| -v).collect(),
            },
        });
        let scale = f1.max_magnitude().max(1.0);
        for (a, b) in f1.x.data.iter().zip(&f2.x.data) {
            assert!((a - b).abs() < 1e-11 * scale);
        }
        for (a, b) in f1.y.data.iter().zip(&f2.y.data) {
            assert!((a - b).abs() < 1e-11 * scale);
        }
    }

    #[test]
    fn trilinear_antisymmetry_and_bounds() {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 48).unwrap();
        let ctx = SpectralCtx::new(grid);
        for seed in 0..5 {
            let u = div_free_field(&ctx, 100 + seed, 1.0);
            let v = VectorField {
                x: smooth_field(grid, 4, 200 + seed, 0.0),
                y: smooth_field(grid, 4, 300 + seed, 0.0),
            };
            // b(u, v, v) = 0 for div-free u
            let b_uvv = trilinear_b(&ctx, &u, &v, &v);
            let scale = l2_norm(&v.x).powi(2).max(1.0);
            assert!(b_uvv.abs() < 1e-11 * scale, "b(u,v,v) = {b_uvv}");
            // b(0, v, w) = 0
            let zero = VectorField::zeros(grid);
            assert_eq!(trilinear_b(&ctx, &zero, &v, &v), 0.0);
        }
        // 2D bound |b(u,u,w)| <= sqrt(2) C_L ||u|| ||grad u|| ||grad w||
        // with the torus constant C_L = 2 + 1/(2 pi).
        let c_bound = std::f64::consts::SQRT_2 * (2.0 + 1.0 / std::f64::consts::TAU);
        for seed in 0..8 {
            let u = div_free_field(&ctx, 400 + seed, 1.0);
            let w = div_free_field(&ctx, 500 + seed, 1.0);
            let b = trilinear_b(&ctx, &u, &u, &w).abs();
            let ux_hat = ctx.fft.forward(&u.x);
            let uy_hat = ctx.fft.forward(&u.y);
            let wx_hat = ctx.fft.forward(&w.x);
            let wy_hat = ctx.fft.forward(&w.y);
            let u_l2 = (crate::grid::inner(&u.x, &u.x) + crate::grid::inner(&u.y, &u.y)).sqrt();
            let grad_u = (ctx.grad_norm_sq_spec(&ux_hat) + ctx.grad_norm_sq_spec(&uy_hat)).sqrt();
            let grad_w = (ctx.grad_norm_sq_spec(&wx_hat) + ctx.grad_norm_sq_spec(&wy_hat)).sqrt();
            let ratio = b / (u_l2 * grad_u * grad_w).max(1e-300);
            assert!(ratio <= c_bound, "measured ratio {ratio} vs bound {c_bound}");
        }
    }

    #[test]
    fn constant_states_are_fixed_points() {
        let (kernel, spec) = setup(32);
        for &m in &[0.4, 1.0, -1.0] {
            let stepper = Stepper::new(&kernel, spec, default_cfg(1e-2)).unwrap();
            let state = FlowState {
                u: VectorField::zeros(kernel.grid),
                phi: ScalarField::constant(kernel.grid, m),
                t: 0.0,
            };
            let (next, _) = stepper.step(&state).unwrap();
            assert!(next.u.max_magnitude() < 1e-12);
            for v in &next.phi.data {
                assert!((v - m).abs() < 1e-12, "phi = {m}: drift {}", (v - m).abs());
            }
        }
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(1e-3)).unwrap();
        let mut state = FlowState {
            u: div_free_field(&ctx, 5, 1.0),
            phi: smooth_field(kernel.grid, 5, 6, 0.3),
            t: 0.0,
        };
        let m0 = state.phi.integral();
        for _ in 0..20 {
            let (next, _) = stepper.step(&state).unwrap();
            state = next;
            let m = state.phi.integral();
            assert!(
                (m - m0).abs() <= 1e-13 * m0.abs().max(kernel.grid.domain_measure()),
                "mass drift {}",
                (m - m0).abs()
            );
        }
    }

    #[test]
    fn divergence_free_after_every_step() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(1e-3)).unwrap();
        let mut state = FlowState {
            u: div_free_field(&ctx, 7, 2.0),
            phi: smooth_field(kernel.grid, 5, 8, 0.0),
            t: 0.0,
        };
        for _ in 0..10 {
            let (next, _) = stepper.step(&state).unwrap();
            state = next;
            assert!(ctx.relative_divergence(&state.u) < 1e-12);
        }
    }

    #[test]
    fn viscosity_stays_within_bounds() {
        let cfg = default_cfg(1e-3);
        for i in 0..100 {
            let s = -5.0 + 0.1 * i as f64;
            let nu = cfg.viscosity(s);
            assert!(nu >= cfg.nu1 && nu <= cfg.nu2);
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(1.0)).unwrap();
        let state = FlowState {
            u: div_free_field(&ctx, 3, 10.0),
            phi: ScalarField::zeros(kernel.grid),
            t: 0.0,
        };
        assert!(matches!(
            stepper.step(&state),
            Err(Error::CflViolation { .. })
        ));
    }

    #[test]
    fn blowup_aborts_with_partial_series() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        // Huge dt with the CFL guard effectively disabled: the implicit
        // blocks are stable but the explicit potential term explodes.
        let mut cfg = default_cfg(5.0);
        cfg.cfl_limit = 1e9;
        let stepper = Stepper::new(&kernel, spec, cfg).unwrap();
        let state0 = FlowState {
            u: div_free_field(&ctx, 3, 1.0),
            phi: ScalarField {
                grid: kernel.grid,
                data: smooth_field(kernel.grid, 5, 4, 0.0)
                    .data
                    .iter()
                    .map(|v| 3.0 * v)
                    .collect(),
            },
            t: 0.0,
        };
        match simulate(&stepper, &state0, 500.0, SimOptions::default()) {
            Ok(series) => {
                // If it survived, energies must at least be finite.
                assert!(series.ledger.iter().all(|r| r.total.is_finite()));
                panic!("expected blow-up under dt = 5 with violent data");
            }
            Err(abort) => {
                assert!(!abort.partial.ledger.is_empty() || abort.step == 0);
                assert!(abort.partial.states.last().unwrap().is_finite());
            }
        }
    }

    #[test]
    fn simulate_zero_steps_and_determinism() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(1e-3)).unwrap();
        let state0 = FlowState {
            u: div_free_field(&ctx, 1, 1.0),
            phi: smooth_field(kernel.grid, 5, 2, 0.1),
            t: 0.0,
        };
        let series = simulate(&stepper, &state0, 0.0, SimOptions::default()).unwrap();
        assert_eq!(series.states.len(), 1);
        assert_eq!(series.ledger.len(), 1);

        let a = simulate(&stepper, &state0, 0.05, SimOptions { snapshot_stride: 10 }).unwrap();
        let b = simulate(&stepper, &state0, 0.05, SimOptions { snapshot_stride: 10 }).unwrap();
        for (x, y) in a.ledger.iter().zip(&b.ledger) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
            assert_eq!(x.mass.to_bits(), y.mass.to_bits());
        }
    }

    #[test]
    fn observer_cadence_does_not_change_states() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(1e-3)).unwrap();
        let state0 = FlowState {
            u: div_free_field(&ctx, 9, 1.0),
            phi: smooth_field(kernel.grid, 5, 10, -0.2),
            t: 0.0,
        };
        let every5 = simulate(&stepper, &state0, 0.02, SimOptions { snapshot_stride: 5 }).unwrap();
        let every10 = simulate(&stepper, &state0, 0.02, SimOptions { snapshot_stride: 10 }).unwrap();
        // Shared time 10 dt: index 2 in stride-5, index 1 in stride-10.
        let s5 = &every5.states[2];
        let s10 = &every10.states[1];
        assert_eq!(s5.t.to_bits(), s10.t.to_bits());
        for (a, b) in s5.phi.data.iter().zip(&s10.phi.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn energy_decreases_without_forcing() {
        let (kernel, spec) = setup(48);
        let ctx = SpectralCtx::new(kernel.grid);
        let stepper = Stepper::new(&kernel, spec, default_cfg(5e-4)).unwrap();
        let state0 = FlowState {
            u: div_free_field(&ctx, 11, 2.0),
            phi: smooth_field(kernel.grid, 5, 12, 0.0),
            t: 0.0,
        };
        let series = simulate(&stepper, &state0, 0.25, SimOptions::default()).unwrap();
        let residual_tol = {
            let res = crate::energetics::energy_identity_residual(&series.ledger, 5e-4);
            res.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
        };
        for w in series.ledger.windows(2) {
            assert!(
                w[1].total <= w[0].total + residual_tol + 1e-12,
                "energy rose: {} -> {}",
                w[0].total,
                w[1].total
            );
        }
    }

    #[test]
    fn energy_residual_refinement_order() {
        let (kernel, spec) = setup(48);
        let ctx = SpectralCtx::new(kernel.grid);
        let state0 = FlowState {
            u: div_free_field(&ctx, 13, 1.5),
            phi: smooth_field(kernel.grid, 5, 14, 0.1),
            t: 0.0,
        };
        let mut errors = Vec::new();
        for k in 0..3 {
            let dt = 2e-3 / 2f64.powi(k);
            let stepper = Stepper::new(&kernel, spec, default_cfg(dt)).unwrap();
            let series = simulate(&stepper, &state0, 0.08, SimOptions::default()).unwrap();
            let res = crate::energetics::energy_identity_residual(&series.ledger, dt);
            errors.push(res.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
        let orders = crate::energetics::refinement_orders(&errors);
        for o in &orders {
            assert!(*o >= 0.9, "observed orders {orders:?} from errors {errors:?}");
        }
    }

    #[test]
    fn telescoping_of_residuals_is_exact() {
        let (kernel, spec) = setup(32);
        let ctx = SpectralCtx::new(kernel.grid);
        let dt = 1e-3;
        let stepper = Stepper::new(&kernel, spec, default_cfg(dt)).unwrap();
        let state0 = FlowState {
            u: div_free_field(&ctx, 15, 1.0),
            phi: smooth_field(kernel.grid, 5, 16, 0.0),
            t: 0.0,
        };
        let series = simulate(&stepper, &state0, 0.05, SimOptions::default()).unwrap();
        let res = crate::energetics::energy_identity_residual(&series.ledger, dt);
        let sum: f64 = res.iter().sum();
        let total_diss: f64 = series.ledger[..series.ledger.len() - 1]
            .iter()
            .map(|r| dt * (r.visc_dissipation + r.mu_dissipation - r.forcing_power))
            .sum();
        let direct = series.ledger.last().unwrap().total - series.ledger[0].total + total_diss;
        assert!((sum - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn stationary_state_has_zero_residuals() {
        let (kernel, spec) = setup(32);
        let dt = 1e-3;
        let stepper = Stepper::new(&kernel, spec, default_cfg(dt)).unwrap();
        let state0 = FlowState {
            u: VectorField::zeros(kernel.grid),
            phi: ScalarField::constant(kernel.grid, 1.0),
            t: 0.0,
        };
        let series = simulate(&stepper, &state0, 0.02, SimOptions::default()).unwrap();
        let res = crate::energetics::energy_identity_residual(&series.ledger, dt);
        for r in &res {
            assert!(r.abs() < 1e-12);
        }
    }
}
