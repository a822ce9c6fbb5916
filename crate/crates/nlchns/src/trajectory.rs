//! Trajectory-space norms, the translation semigroup, and the dissipative
//! trajectory envelope.
//!
//! A stored trajectory is measured in the norm
//!
//! ```text
//! || [u, phi] || = sup_t ( ||u|| + ||phi||_{L^4} )
//!               + || (grad u, grad phi) ||_{L^2_tb}
//!               + || phi_t ||_{L^2_tb(V')}
//!               + || u_t ||_{L^2_tb(V'_div)}
//! ```
//!
//! with unit translation-bounded windows, discrete time derivatives taken
//! as backward differences of the stored snapshots, and dual norms through
//! the spectral multiplier `(1 + |k|^2)^{-1/2}` (mean mode weight one).
//! In two dimensions the `u_t` exponent is 2; the `4/3` exponent used in
//! three dimensions is available as an option but not exercised here.

use crate::dynamics::TrajectorySeries;
use crate::energetics::DissipativeConstants;
use crate::grid::{l2_norm_vec, lp_norm};
use crate::ops::{h1_dual_norm_ctx, h1_dual_norm_vec_ctx, SpectralCtx};
use crate::signals::{tb_norm, SampledSignal};
use crate::{Error, Result};

/// Per-snapshot scalar reductions of a trajectory; computing them once
/// makes the norm of every translate a cheap signal operation.
pub struct TrajectorySignals {
    /// Snapshot spacing.
    pub dt: f64,
    /// `||u(t_i)||`.
    pub u_l2: Vec<f64>,
    /// `||phi(t_i)||_{L^4}`.
    pub phi_l4: Vec<f64>,
    /// `||grad u||^2 + ||grad phi||^2` at `t_i`.
    pub grad_sq: Vec<f64>,
    /// `||phi_t||_{V'}` at `t_i`, `i >= 1` (backward differences).
    pub phi_t_dual: Vec<f64>,
    /// `||u_t||_{V'_div}` at `t_i`, `i >= 1`.
    pub u_t_dual: Vec<f64>,
}

/// Breakdown of the trajectory norm.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryNorm {
    pub sup_term: f64,
    pub gradient_term: f64,
    pub phi_t_term: f64,
    pub u_t_term: f64,
}

impl TrajectoryNorm {
    pub fn total(&self) -> f64 {
        self.sup_term + self.gradient_term + self.phi_t_term + self.u_t_term
    }
}

impl TrajectorySignals {
    pub fn compute(series: &TrajectorySeries) -> Result<Self> {
        if series.states.len() < 2 {
            return Err(Error::SignalTooShort {
                span: 0.0,
                window: 1.0,
            });
        }
        let grid = series.states[0].grid();
        let ctx = SpectralCtx::new(grid);
        let dt = series.snapshot_dt;
        let n = series.states.len();

        let mut u_l2 = Vec::with_capacity(n);
        let mut phi_l4 = Vec::with_capacity(n);
        let mut grad_sq = Vec::with_capacity(n);
        for state in &series.states {
            u_l2.push(l2_norm_vec(&state.u));
            phi_l4.push(lp_norm(&state.phi, 4.0));
            let ux = ctx.fft.forward(&state.u.x);
            let uy = ctx.fft.forward(&state.u.y);
            let ph = ctx.fft.forward(&state.phi);
            grad_sq.push(
                ctx.grad_norm_sq_spec(&ux)
                    + ctx.grad_norm_sq_spec(&uy)
                    + ctx.grad_norm_sq_spec(&ph),
            );
        }

        let mut phi_t_dual = Vec::with_capacity(n - 1);
        let mut u_t_dual = Vec::with_capacity(n - 1);
        for w in series.states.windows(2) {
            let inv_dt = 1.0 / dt;
            let dphi = crate::grid::ScalarField {
                grid,
                data: w[1]
                    .phi
                    .data
                    .iter()
                    .zip(&w[0].phi.data)
                    .map(|(a, b)| (a - b) * inv_dt)
                    .collect(),
            };
            let du = crate::grid::VectorField {
                x: crate::grid::ScalarField {
                    grid,
                    data: w[1]
                        .u
                        .x
                        .data
                        .iter()
                        .zip(&w[0].u.x.data)
                        .map(|(a, b)| (a - b) * inv_dt)
                        .collect(),
                },
                y: crate::grid::ScalarField {
                    grid,
                    data: w[1]
                        .u
                        .y
                        .data
                        .iter()
                        .zip(&w[0].u.y.data)
                        .map(|(a, b)| (a - b) * inv_dt)
                        .collect(),
                },
            };
            phi_t_dual.push(h1_dual_norm_ctx(&ctx, &dphi));
            u_t_dual.push(h1_dual_norm_vec_ctx(&ctx, &du));
        }

        Ok(Self {
            dt,
            u_l2,
            phi_l4,
            grad_sq,
            phi_t_dual,
            u_t_dual,
        })
    }

    /// Trajectory norm of the suffix starting at snapshot `start`, i.e. of
    /// the translate by `start * dt`. `u_t_exponent` is 2 in 2D.
    pub fn norm_from(&self, start: usize, u_t_exponent: f64) -> Result<TrajectoryNorm> {
        let n = self.u_l2.len();
        if start >= n {
            return Err(Error::SignalTooShort {
                span: 0.0,
                window: 1.0,
            });
        }
        let sup_term = (start..n)
            .map(|i| self.u_l2[i] + self.phi_l4[i])
            .fold(0.0_f64, f64::max);

        let grad_signal = SampledSignal::new(
            0.0,
            self.dt,
            self.grad_sq[start..].to_vec(),
        )?;
        let gradient_term = tb_norm(&grad_signal, 1.0, 1.0)?.sqrt();

        // Derivative sample j of the suffix is the difference of snapshots
        // start+j and start+j+1, i.e. the tail of the precomputed signals.
        let phi_t = SampledSignal::new(0.0, self.dt, self.phi_t_dual[start..].to_vec())?;
        let u_t = SampledSignal::new(0.0, self.dt, self.u_t_dual[start..].to_vec())?;
        let phi_t_term = tb_norm(&phi_t, 2.0, 1.0)?;
        let u_t_term = tb_norm(&u_t, u_t_exponent, 1.0)?;

        Ok(TrajectoryNorm {
            sup_term,
            gradient_term,
            phi_t_term,
            u_t_term,
        })
    }
}

/// Trajectory norm of a stored series (2D exponents).
pub fn trajectory_norm(series: &TrajectorySeries) -> Result<TrajectoryNorm> {
    TrajectorySignals::compute(series)?.norm_from(0, 2.0)
}

/// Translation `T(tau)`: drop the first `tau` of the trajectory and rebase
/// time at zero. `tau` must be a multiple of the snapshot spacing; times of
/// the result are recomputed as exact index multiples so composition is
/// bit-exact: `T(s) T(t) = T(s + t)`.
pub fn translate(series: &TrajectorySeries, tau: f64) -> Result<TrajectorySeries> {
    let sdt = series.snapshot_dt;
    let steps = tau / sdt;
    if (steps - steps.round()).abs() > 1e-9 * steps.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "translation {tau} is not a multiple of the snapshot spacing {sdt}"
        )));
    }
    let offset = steps.round() as usize;
    if tau < 0.0 || offset >= series.states.len() {
        return Err(Error::InvalidParameter(format!(
            "translation {tau} exceeds the stored span"
        )));
    }
    let states = series.states[offset..]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            s.t = i as f64 * sdt;
            s
        })
        .collect();
    let ledger_offset = ((offset as f64 * sdt) / series.dt).round() as usize;
    let ledger = series
        .ledger
        .iter()
        .skip(ledger_offset)
        .enumerate()
        .map(|(i, row)| {
            let mut row = *row;
            row.t = i as f64 * series.dt;
            row
        })
        .collect();
    Ok(TrajectorySeries {
        states,
        ledger,
        dt: series.dt,
        snapshot_dt: sdt,
    })
}

/// Explicit envelope `||T(t) z|| <= Lambda0 W e^{-kappa t} + Lambda1` for
/// `t >= 1`, assembled from the dissipative chain, the quartic energy
/// control `E <= (1 + a0/2)(||u||^2 + ||phi||_{L^4}^4) + (1 + a0/2)|O|`,
/// and torus interpolation constants (`||v||_{L^4}^2 <= (2 + 1/(2 pi))
/// ||v|| ||grad v||` for mean-zero fields).
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryEnvelope {
    pub lambda0: f64,
    pub kappa: f64,
    pub lambda1: f64,
    /// Measured `sup_{[0,1]} (||u|| + ||phi||_{L^4})` the assembly used.
    pub w: f64,
}

impl TrajectoryEnvelope {
    pub fn bound(&self, t: f64) -> f64 {
        self.lambda0 * self.w * (-self.kappa * t).exp() + self.lambda1
    }
}

/// Assemble the envelope for a trajectory whose `sup_{[0,1]}` norm is `w`.
pub fn trajectory_envelope(
    constants: &DissipativeConstants,
    nu2: f64,
    w: f64,
) -> TrajectoryEnvelope {
    let omega = constants.domain_measure;
    let l_side = omega.sqrt();
    let a0 = constants.kernel_l1;
    let nu1 = constants.nu1;
    let k = constants.k;
    let k3 = constants.k3;
    let k4 = constants.k4;
    let htb = constants.h_tb_norm;

    // Energy level reachable from the first unit window.
    let k2 = 1.0 + 0.5 * a0;
    let d2 = k2 * omega;
    let e0 = k.exp() * (k2 * (w.powi(4) + w * w) + d2);
    let d_tail = constants.big_k.max(constants.l / constants.k);

    let p = 2.0 * e0;
    let q = 2.0 * d_tail + 2.0 * omega;

    // Torus interpolation constants.
    let c_l = 2.0 + 1.0 / (2.0 * std::f64::consts::PI);
    let c_l4v_sq = std::f64::consts::SQRT_2 * (1.0 + 1.0 / l_side);

    // Term 1: sup of ||u|| + ||phi||_{L4}.
    let a1 = p.sqrt() + p.powf(0.25);
    let b1 = q.sqrt() + q.powf(0.25);

    // Term 2: windowed gradients.
    let ca = 2.0 / nu1 + 1.0 / k3;
    let a2_sq = ca * e0 + (k4 / k3) * p;
    let b2_sq = ca * 2.0 * d_tail + (k4 / k3) * q;
    let (a2, b2) = (a2_sq.sqrt(), b2_sq.sqrt());

    // Term 3: phi_t dual norm.
    let c3 = 2.0 * std::f64::consts::SQRT_2 * c_l * (2.0 / nu1).sqrt();
    let sqrt_e0 = e0.sqrt();
    let sqrt_2d = (2.0 * d_tail).sqrt();
    let a3_sq = 2.0 * e0 + c3 * (p * sqrt_e0 + p * sqrt_2d + q * sqrt_e0);
    let b3_sq = 4.0 * d_tail + c3 * q * sqrt_2d;
    let (a3, b3) = (a3_sq.sqrt(), b3_sq.sqrt());

    // Term 4: u_t dual norm.
    let c4a = 4.0
        * (2.0 * nu2 * nu2 / nu1
            + 4.0 * c_l * c_l * (p + q) / nu1
            + c_l4v_sq * (p.sqrt() + q.sqrt()));
    let a4 = (c4a * e0).sqrt();
    let b4 = (c4a * 2.0 * d_tail + 4.0 * htb * htb).sqrt();

    TrajectoryEnvelope {
        lambda0: (a1 + a2 + a3 + a4) / w.max(1e-300),
        kappa: k / 4.0,
        lambda1: b1 + b2 + b3 + b4,
        w,
    }
}

/// Result of monitoring the trajectory envelope along a run.
#[derive(Debug, Clone)]
pub struct TrajectoryEnvelopeReport {
    pub envelope: TrajectoryEnvelope,
    /// `(t, measured norm, bound)` at each checked translate.
    pub samples: Vec<(f64, f64, f64)>,
    pub min_slack: f64,
}

impl TrajectoryEnvelopeReport {
    pub fn passed(&self) -> bool {
        self.min_slack > 0.0
    }
}

/// Check the envelope on every snapshot translate `t >= 1` that leaves at
/// least one unit window of trajectory.
pub fn monitor_trajectory_envelope(
    series: &TrajectorySeries,
    constants: &DissipativeConstants,
    nu2: f64,
) -> Result<TrajectoryEnvelopeReport> {
    let signals = TrajectorySignals::compute(series)?;
    let sdt = series.snapshot_dt;
    let per_unit = (1.0 / sdt).round() as usize;
    if per_unit == 0 || signals.u_l2.len() < 2 * per_unit + 2 {
        return Err(Error::SignalTooShort {
            span: (signals.u_l2.len() - 1) as f64 * sdt,
            window: 2.0,
        });
    }

    let w = (0..=per_unit)
        .map(|i| signals.u_l2[i] + signals.phi_l4[i])
        .fold(0.0_f64, f64::max);
    let envelope = trajectory_envelope(constants, nu2, w);

    let mut samples = Vec::new();
    let mut min_slack = f64::INFINITY;
    // Leave a full unit window for the derivative signals of the translate.
    let last_start = signals.u_l2.len() - 2 - per_unit;
    for start in per_unit..=last_start {
        let t = start as f64 * sdt;
        let measured = signals.norm_from(start, 2.0)?.total();
        let bound = envelope.bound(t);
        let slack = bound - measured;
        if slack < min_slack {
            min_slack = slack;
        }
        samples.push((t, measured, bound));
    }

    Ok(TrajectoryEnvelopeReport {
        envelope,
        samples,
        min_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FlowState, TrajectorySeries};
    use crate::grid::{GridSpec, ScalarField, VectorField};

    fn stationary_series(value: f64, count: usize, sdt: f64) -> TrajectorySeries {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 16).unwrap();
        let states = (0..count)
            .map(|i| FlowState {
                u: VectorField::zeros(grid),
                phi: ScalarField::constant(grid, value),
                t: i as f64 * sdt,
            })
            .collect();
        TrajectorySeries {
            states,
            ledger: Vec::new(),
            dt: sdt,
            snapshot_dt: sdt,
        }
    }

    #[test]
    fn stationary_norm_closed_form() {
        let series = stationary_series(1.0, 9, 0.25);
        let norm = trajectory_norm(&series).unwrap();
        let omega = 4.0 * std::f64::consts::PI.powi(2);
        assert!((norm.sup_term - omega.powf(0.25)).abs() < 1e-12);
        assert!(norm.gradient_term.abs() < 1e-9);
        assert!(norm.phi_t_term.abs() < 1e-9);
        assert!(norm.u_t_term.abs() < 1e-9);
        assert!((norm.total() - omega.powf(0.25)).abs() < 1e-9);
    }

    #[test]
    fn translation_identity_and_semigroup() {
        let series = stationary_series(0.5, 17, 0.25);
        let t0 = translate(&series, 0.0).unwrap();
        assert_eq!(t0.states.len(), series.states.len());

        let a = translate(&translate(&series, 2.0 * 0.25).unwrap(), 1.0 * 0.25).unwrap();
        let b = translate(&series, 3.0 * 0.25).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(x.t == y.t, "times must agree bit-exactly");
            assert_eq!(x.phi.data, y.phi.data);
            assert_eq!(x.u.x.data, y.u.x.data);
        }
    }

    #[test]
    fn translation_beyond_span_is_rejected() {
        let series = stationary_series(0.5, 5, 0.25);
        assert!(translate(&series, 2.0).is_err());
        assert!(translate(&series, 0.1).is_err());
    }

    #[test]
    fn stationary_norm_is_translation_invariant() {
        let series = stationary_series(-1.0, 17, 0.25);
        let n0 = trajectory_norm(&series).unwrap().total();
        let n1 = trajectory_norm(&translate(&series, 1.0).unwrap())
            .unwrap()
            .total();
        assert!((n0 - n1).abs() < 1e-12);
    }
}
