//! Two-dimensional transforms backed by cached 1D FFT plans.
//!
//! Forward transforms are plain unnormalized DFT sums; the inverse divides
//! by `N^2`, so `inverse(forward(f)) == f` to rounding. Continuum Fourier
//! coefficients of a sampled field are `fhat / N^2`.

use crate::grid::{GridSpec, ScalarField};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Complex field in FFT mode order on an `N x N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub data: Vec<Complex<f64>>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![Complex::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn at(&self, ix: usize, iy: usize) -> Complex<f64> {
        self.data[iy * self.grid.resolution + ix]
    }
}

/// Planned 2D transform for one grid size. Plans are immutable and the
/// methods use per-call scratch, so a shared reference is safe to use from
/// several threads at once.
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn transform_rows(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>]) {
        let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(self.n) {
            plan.process_with_scratch(row, &mut scratch);
        }
    }

    fn transpose(&self, buf: &mut [Complex<f64>]) {
        let n = self.n;
        for iy in 0..n {
            for ix in (iy + 1)..n {
                buf.swap(iy * n + ix, ix * n + iy);
            }
        }
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, buf: &mut [Complex<f64>]) {
        self.transform_rows(plan, buf);
        self.transpose(buf);
        self.transform_rows(plan, buf);
        self.transpose(buf);
    }

    /// In-place forward transform of a complex buffer.
    pub fn forward_inplace(&self, buf: &mut [Complex<f64>]) {
        self.run(&self.forward, buf);
    }

    /// In-place inverse transform (includes the `1/N^2` normalization).
    pub fn inverse_inplace(&self, buf: &mut [Complex<f64>]) {
        self.run(&self.inverse, buf);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real field.
    pub fn forward(&self, f: &ScalarField) -> SpectralField {
        debug_assert_eq!(f.grid.resolution, self.n);
        let mut data: Vec<Complex<f64>> =
            f.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward_inplace(&mut data);
        SpectralField { grid: f.grid, data }
    }

    /// Inverse transform, keeping the real part (inputs are spectra of real
    /// fields; the imaginary residue is rounding noise).
    pub fn inverse(&self, f: &SpectralField) -> ScalarField {
        debug_assert_eq!(f.grid.resolution, self.n);
        let mut buf = f.data.clone();
        self.inverse_inplace(&mut buf);
        ScalarField {
            grid: f.grid,
            data: buf.iter().map(|c| c.re).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn roundtrip_is_identity() {
        let g = GridSpec::new(1.0, 16).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 7.0).sin() + (y * 3.0).cos() + x * y);
        let fft = Fft2::new(16);
        let back = fft.inverse(&fft.forward(&f));
        for (a, b) in f.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_in_one_slot() {
        let l = 2.0 * std::f64::consts::PI;
        let g = GridSpec::new(l, 16).unwrap();
        // cos(2 pi x / L) has coefficients 1/2 at modes +-1.
        let f = ScalarField::from_fn(g, |x, _| (2.0 * std::f64::consts::PI * x / l).cos());
        let fft = Fft2::new(16);
        let s = fft.forward(&f);
        let n2 = 256.0;
        assert!((s.at(1, 0).re / n2 - 0.5).abs() < 1e-12);
        assert!((s.at(15, 0).re / n2 - 0.5).abs() < 1e-12);
        assert!(s.at(2, 0).norm() / n2 < 1e-12);
    }
}
