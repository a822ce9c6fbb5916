//! Interaction kernels: even, nonnegative, integrable functions sampled on
//! the torus, together with their spectra and the field `a(x) = (J * 1)(x)`.

use crate::fft::Fft2;
use crate::grid::{GridSpec, ScalarField};
use crate::{Error, Result};
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

/// Kernel families. Both are even and strictly positive; `mass` fixes the
/// `L^1` norm on the torus exactly (samples are rescaled so the grid
/// quadrature of the kernel equals `mass`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelShape {
    /// Gaussian of width `epsilon`, wrapped over five periods per axis.
    PeriodizedGaussian { epsilon: f64, mass: f64 },
    /// Inverse-distance profile `1 / sqrt(r^2 + cutoff^2)` at the minimal
    /// image distance.
    MollifiedNewtonian { cutoff: f64, mass: f64 },
}

impl KernelShape {
    pub fn mass(&self) -> f64 {
        match *self {
            KernelShape::PeriodizedGaussian { mass, .. } => mass,
            KernelShape::MollifiedNewtonian { mass, .. } => mass,
        }
    }

    fn length_scale(&self) -> f64 {
        match *self {
            KernelShape::PeriodizedGaussian { epsilon, .. } => epsilon,
            KernelShape::MollifiedNewtonian { cutoff, .. } => cutoff,
        }
    }

    /// Unnormalized profile at displacement `(dx, dy)` from the origin,
    /// with `(dx, dy)` already reduced to whatever image convention the
    /// caller uses.
    pub fn profile(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            KernelShape::PeriodizedGaussian { epsilon, .. } => {
                let r2 = dx * dx + dy * dy;
                (-r2 / (2.0 * epsilon * epsilon)).exp()
                    / (2.0 * std::f64::consts::PI * epsilon * epsilon)
            }
            KernelShape::MollifiedNewtonian { cutoff, .. } => {
                1.0 / (dx * dx + dy * dy + cutoff * cutoff).sqrt()
            }
        }
    }

    /// One period of the kernel on the torus, before mass normalization.
    fn raw_samples(&self, grid: GridSpec) -> ScalarField {
        let l = grid.side_length;
        match *self {
            KernelShape::PeriodizedGaussian { .. } => ScalarField::from_fn(grid, |x, y| {
                let mut acc = 0.0;
                for wy in -2i32..=2 {
                    for wx in -2i32..=2 {
                        acc += self.profile(x + wx as f64 * l, y + wy as f64 * l);
                    }
                }
                acc
            }),
            KernelShape::MollifiedNewtonian { .. } => ScalarField::from_fn(grid, |x, y| {
                let dx = if x > l / 2.0 { x - l } else { x };
                let dy = if y > l / 2.0 { y - l } else { y };
                self.profile(dx, dy)
            }),
        }
    }

    pub fn validate(&self, grid: GridSpec) -> Result<()> {
        let mass = self.mass();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel mass must be positive, got {mass}"
            )));
        }
        let eps = self.length_scale();
        let name = match self {
            KernelShape::PeriodizedGaussian { .. } => "epsilon",
            KernelShape::MollifiedNewtonian { .. } => "cutoff",
        };
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel {name} must be positive, got {eps}"
            )));
        }
        let limit = 2.0 * grid.side_length / grid.resolution as f64;
        if eps < limit {
            return Err(Error::ResolutionTooCoarse {
                name,
                value: eps,
                limit,
            });
        }
        // The five-period wrap keeps the truncation tail below 1e-14 for
        // eps <= L/8 and below 1e-6 up to L/4; larger widths would leak.
        if eps > grid.side_length / 4.0 {
            return Err(Error::InvalidParameter(format!(
                "kernel {name} = {eps} must stay at or below L/4 = {} for the periodization to hold",
                grid.side_length / 4.0
            )));
        }
        Ok(())
    }
}

/// A sampled interaction kernel, its spectrum (including the cell-area
/// quadrature factor) and derived quantities.
#[derive(Debug, Clone)]
pub struct KernelField {
    pub grid: GridSpec,
    /// One period of `J` on the grid.
    pub samples: ScalarField,
    /// `cell * DFT(samples)`; slot 0 equals the kernel mass.
    pub spectrum: Vec<Complex<f64>>,
    /// `a(x) = (J * 1)(x)`, constant on the torus.
    pub a_field: ScalarField,
    /// `||J||_{L^1}` by grid quadrature (equals the prescribed mass).
    pub l1_norm: f64,
    /// `||grad J||_{L^1}` by grid quadrature of the spectral gradient.
    pub grad_l1_norm: f64,
}

impl KernelField {
    /// Constant value of `a` on the torus.
    pub fn a_constant(&self) -> f64 {
        self.a_field.data[0]
    }

    /// Smallest value of `a(x)` (for torus kernels this equals
    /// [`Self::a_constant`]).
    pub fn a_min(&self) -> f64 {
        self.a_field.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Real part of the spectrum at slot `(ix, iy)`. Even kernels have a
    /// real spectrum; the imaginary residue is checked at build time.
    pub fn spectrum_re(&self, ix: usize, iy: usize) -> f64 {
        self.spectrum[iy * self.grid.resolution + ix].re
    }
}

/// Sample, normalize and validate a kernel on the given grid.
pub fn build_kernel(grid: GridSpec, shape: KernelShape) -> Result<KernelField> {
    shape.validate(grid)?;
    let mass = shape.mass();
    let mut samples = shape.raw_samples(grid);

    // Rescale so the grid quadrature is exactly the prescribed mass.
    let quad = samples.integral();
    if !(quad > 0.0) {
        return Err(Error::InvalidParameter(
            "kernel quadrature is not positive".into(),
        ));
    }
    let scale = mass / quad;
    for v in samples.data.iter_mut() {
        *v *= scale;
    }

    let fft = Fft2::new(grid.resolution);
    let mut spectrum = fft.forward(&samples).data;
    let cell = grid.cell_area();
    for v in spectrum.iter_mut() {
        *v *= cell;
    }

    // Evenness check: the spectrum of an even real kernel is real.
    let max_mod = spectrum.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
    let max_im = spectrum.iter().fold(0.0_f64, |m, c| m.max(c.im.abs()));
    if max_im > 1e-12 * max_mod.max(1e-300) {
        return Err(Error::InvalidParameter(format!(
            "kernel is not even on the grid: max |Im spectrum| = {max_im:.3e}"
        )));
    }

    // grad J via the spectral derivative, then L^1 quadrature.
    let n = grid.resolution;
    let hat: Vec<Complex<f64>> = fft.forward(&samples).data;
    let mut gx = hat.clone();
    let mut gy = hat;
    for iy in 0..n {
        let ky = grid.wavenumber(iy);
        for ix in 0..n {
            let kx = grid.wavenumber(ix);
            let idx = iy * n + ix;
            gx[idx] *= Complex::new(0.0, kx);
            gy[idx] *= Complex::new(0.0, ky);
        }
    }
    fft.inverse_inplace(&mut gx);
    fft.inverse_inplace(&mut gy);
    let grad_l1_norm: f64 = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a.re * a.re + b.re * b.re).sqrt())
        .sum::<f64>()
        * cell;

    // The rescale above pins the quadrature to the prescribed mass; for a
    // positive kernel that quadrature *is* the L^1 norm, so store the exact
    // parameter rather than re-summing rounding noise.
    let quad_check = samples.data.iter().map(|v| v.abs()).sum::<f64>() * cell;
    if (quad_check - mass).abs() > 1e-10 * mass {
        return Err(Error::InvalidParameter(format!(
            "kernel normalization drifted: quadrature {quad_check} vs mass {mass}"
        )));
    }
    let l1_norm = mass;

    let kernel = KernelField {
        grid,
        samples,
        spectrum,
        a_field: ScalarField::zeros(grid),
        l1_norm,
        grad_l1_norm,
    };

    // a(x) computed by convolving with the constant-one field.
    let ones = ScalarField::constant(grid, 1.0);
    let a_field = crate::ops::convolve_ctx(&crate::ops::SpectralCtx::new(grid), &kernel, &ones);
    let a_min = a_field.data.iter().cloned().fold(f64::INFINITY, f64::min);
    if a_min < -1e-12 * mass {
        return Err(Error::InvalidParameter(format!(
            "a(x) has a negative value {a_min:.3e}"
        )));
    }

    Ok(KernelField { a_field, ..kernel })
}
