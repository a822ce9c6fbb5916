//! Spectral calculus on the torus: differentiation, Leray projection,
//! convolution by an interaction kernel, and the negative-order norms used
//! by the verification machinery.

use crate::fft::{Fft2, SpectralField};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::kernel::KernelField;
use crate::{Error, Result};
use rustfft::num_complex::Complex;

/// Cached transform plans, wavenumber tables and the dealiasing mask for
/// one grid. Immutable after construction; operations taking `&self` are
/// safe to call concurrently.
pub struct SpectralCtx {
    pub grid: GridSpec,
    pub fft: Fft2,
    /// Wavenumber per slot along one axis.
    pub k: Vec<f64>,
    /// `true` for modes kept by the 2/3-rule mask (mean mode always kept).
    pub keep: Vec<bool>,
}

impl SpectralCtx {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.resolution;
        let k: Vec<f64> = (0..n).map(|i| grid.wavenumber(i)).collect();
        let cutoff = grid.dealias_cutoff();
        let mut keep = vec![false; grid.len()];
        for iy in 0..n {
            let my = grid.mode_index(iy).abs();
            for ix in 0..n {
                let mx = grid.mode_index(ix).abs();
                keep[iy * n + ix] = mx <= cutoff && my <= cutoff;
            }
        }
        Self {
            grid,
            fft: Fft2::new(n),
            k,
            keep,
        }
    }

    /// Zero every mode outside the dealias band.
    pub fn dealias(&self, f: &mut SpectralField) {
        for (v, keep) in f.data.iter_mut().zip(&self.keep) {
            if !keep {
                *v = Complex::new(0.0, 0.0);
            }
        }
    }

    /// Squared wavenumber magnitude of slot `(ix, iy)`.
    pub fn ksq(&self, ix: usize, iy: usize) -> f64 {
        self.k[ix] * self.k[ix] + self.k[iy] * self.k[iy]
    }

    /// Spectral gradient of a scalar field.
    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        let fh = self.fft.forward(f);
        self.gradient_spec(&fh)
    }

    pub fn gradient_spec(&self, fh: &SpectralField) -> VectorField {
        let n = self.grid.resolution;
        let mut gx = SpectralField::zeros(self.grid);
        let mut gy = SpectralField::zeros(self.grid);
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                let v = fh.data[idx];
                gx.data[idx] = Complex::new(0.0, self.k[ix]) * v;
                gy.data[idx] = Complex::new(0.0, self.k[iy]) * v;
            }
        }
        VectorField {
            x: self.fft.inverse(&gx),
            y: self.fft.inverse(&gy),
        }
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let vx = self.fft.forward(&v.x);
        let vy = self.fft.forward(&v.y);
        let n = self.grid.resolution;
        let mut d = SpectralField::zeros(self.grid);
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                d.data[idx] = Complex::new(0.0, self.k[ix]) * vx.data[idx]
                    + Complex::new(0.0, self.k[iy]) * vy.data[idx];
            }
        }
        self.fft.inverse(&d)
    }

    /// Spectral Laplacian of a scalar field.
    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut fh = self.fft.forward(f);
        let n = self.grid.resolution;
        for iy in 0..n {
            for ix in 0..n {
                fh.data[iy * n + ix] *= -self.ksq(ix, iy);
            }
        }
        self.fft.inverse(&fh)
    }

    /// Leray projection onto divergence-free fields:
    /// `(P v)^(k) = v^(k) - k (k . v^(k)) / |k|^2`, mean mode untouched.
    pub fn leray_project(&self, v: &VectorField) -> VectorField {
        let mut vx = self.fft.forward(&v.x);
        let mut vy = self.fft.forward(&v.y);
        self.leray_project_spec(&mut vx, &mut vy);
        VectorField {
            x: self.fft.inverse(&vx),
            y: self.fft.inverse(&vy),
        }
    }

    pub fn leray_project_spec(&self, vx: &mut SpectralField, vy: &mut SpectralField) {
        let n = self.grid.resolution;
        for iy in 0..n {
            for ix in 0..n {
                let ksq = self.ksq(ix, iy);
                if ksq == 0.0 {
                    continue;
                }
                let idx = iy * n + ix;
                let dot = self.k[ix] * vx.data[idx] + self.k[iy] * vy.data[idx];
                vx.data[idx] -= self.k[ix] / ksq * dot;
                vy.data[idx] -= self.k[iy] / ksq * dot;
            }
        }
    }

    /// Max-norm of the discrete divergence relative to the field scale.
    pub fn relative_divergence(&self, v: &VectorField) -> f64 {
        let d = self.divergence(v);
        let scale = v.max_magnitude().max(1e-300) / self.grid.spacing();
        d.max_abs() / scale.max(1.0)
    }

    /// `||grad f||^2` evaluated from the spectrum by Parseval.
    pub fn grad_norm_sq_spec(&self, fh: &SpectralField) -> f64 {
        let n = self.grid.resolution;
        let norm = self.grid.domain_measure() / (self.grid.len() as f64).powi(2);
        let mut acc = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                acc += self.ksq(ix, iy) * fh.data[iy * n + ix].norm_sqr();
            }
        }
        acc * norm
    }

    /// Pointwise product of two fields, transformed and dealiased.
    pub fn dealiased_product_spec(&self, f: &ScalarField, g: &ScalarField) -> SpectralField {
        let prod = ScalarField {
            grid: f.grid,
            data: f.data.iter().zip(&g.data).map(|(a, b)| a * b).collect(),
        };
        let mut ph = self.fft.forward(&prod);
        self.dealias(&mut ph);
        ph
    }
}

/// Spectral convolution `(J * phi)(x)` as a pointwise product of spectra.
///
/// The kernel spectrum carries the cell-area factor, so the product equals
/// the periodic quadrature `sum_y J(x - y) phi(y) cell` exactly (in exact
/// arithmetic).
pub fn convolve(kernel: &KernelField, phi: &ScalarField) -> Result<ScalarField> {
    kernel.grid.check_same(&phi.grid, "convolve")?;
    let ctx = SpectralCtx::new(phi.grid);
    Ok(convolve_ctx(&ctx, kernel, phi))
}

pub fn convolve_ctx(ctx: &SpectralCtx, kernel: &KernelField, phi: &ScalarField) -> ScalarField {
    let mut ph = ctx.fft.forward(phi);
    for (v, j) in ph.data.iter_mut().zip(&kernel.spectrum) {
        *v *= j;
    }
    ctx.fft.inverse(&ph)
}

/// Negative-order norm `|| B^{-1/2} phi ||` on mean-zero fields:
/// `( sum_{k != 0} |O| |c_k|^2 / |k|^2 )^{1/2}` with `c_k = phihat(k)/N^2`.
pub fn neumann_dual_norm(phi: &ScalarField) -> Result<f64> {
    let ctx = SpectralCtx::new(phi.grid);
    neumann_dual_norm_ctx(&ctx, phi)
}

pub fn neumann_dual_norm_ctx(ctx: &SpectralCtx, phi: &ScalarField) -> Result<f64> {
    let mean_integral = phi.integral();
    let tol = 1e-10 * phi.grid.domain_measure() * phi.max_abs().max(1e-300);
    if mean_integral.abs() > tol {
        return Err(Error::NonzeroMean {
            mean: mean_integral,
            tol,
        });
    }
    let fh = ctx.fft.forward(phi);
    let n = ctx.grid.resolution;
    let norm = ctx.grid.domain_measure() / (ctx.grid.len() as f64).powi(2);
    let mut acc = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let ksq = ctx.ksq(ix, iy);
            if ksq == 0.0 {
                continue;
            }
            acc += fh.data[iy * n + ix].norm_sqr() / ksq;
        }
    }
    Ok((acc * norm).sqrt())
}

/// `H^1` dual norm via the multiplier `(1 + |k|^2)^{-1/2}`; the mean mode
/// carries weight one, matching the continuum pairing on the torus.
pub fn h1_dual_norm_ctx(ctx: &SpectralCtx, phi: &ScalarField) -> f64 {
    let fh = ctx.fft.forward(phi);
    let n = ctx.grid.resolution;
    let norm = ctx.grid.domain_measure() / (ctx.grid.len() as f64).powi(2);
    let mut acc = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            acc += fh.data[iy * n + ix].norm_sqr() / (1.0 + ctx.ksq(ix, iy));
        }
    }
    (acc * norm).sqrt()
}

/// Componentwise `H^1` dual norm of a vector field.
pub fn h1_dual_norm_vec_ctx(ctx: &SpectralCtx, v: &VectorField) -> f64 {
    let nx = h1_dual_norm_ctx(ctx, &v.x);
    let ny = h1_dual_norm_ctx(ctx, &v.y);
    (nx * nx + ny * ny).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, l2_norm};
    use crate::kernel::{build_kernel, KernelShape};
    use crate::testutil::{convolve_oracle, smooth_field};

    fn ctx(n: usize) -> SpectralCtx {
        SpectralCtx::new(GridSpec::new(2.0 * std::f64::consts::PI, n).unwrap())
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let c = ctx(16);
        let f = ScalarField::constant(c.grid, 4.2);
        let g = c.gradient(&f);
        assert!(g.x.max_abs() < 1e-12);
        assert!(g.y.max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_eigenvalue_on_cosine() {
        let c = ctx(32);
        let l = c.grid.side_length;
        let f = ScalarField::from_fn(c.grid, |x, _| (2.0 * std::f64::consts::PI * x / l).cos());
        let lap = c.laplacian(&f);
        let factor = -(2.0 * std::f64::consts::PI / l).powi(2);
        for (a, b) in lap.data.iter().zip(&f.data) {
            assert!((a - factor * b).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let c = ctx(24);
        let f = smooth_field(c.grid, 6, 7, 0.3);
        let g = c.gradient(&f);
        let div = c.divergence(&g);
        let lap = c.laplacian(&f);
        for (a, b) in div.data.iter().zip(&lap.data) {
            assert!((a - b).abs() < 1e-12 * f.max_abs().max(1.0) * 100.0);
        }
    }

    #[test]
    fn leray_kills_gradients_and_is_idempotent() {
        let c = ctx(24);
        let psi = smooth_field(c.grid, 5, 3, 0.0);
        let g = c.gradient(&psi);
        let pg = c.leray_project(&g);
        assert!(pg.x.max_abs() < 1e-12 * g.max_magnitude().max(1.0));
        assert!(pg.y.max_abs() < 1e-12 * g.max_magnitude().max(1.0));

        let v = VectorField {
            x: smooth_field(c.grid, 5, 11, 0.1),
            y: smooth_field(c.grid, 5, 12, -0.2),
        };
        let pv = c.leray_project(&v);
        assert!(c.relative_divergence(&pv) < 1e-12);
        let ppv = c.leray_project(&pv);
        for (a, b) in pv.x.data.iter().zip(&ppv.x.data) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in pv.y.data.iter().zip(&ppv.y.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn leray_preserves_divergence_free_input() {
        let c = ctx(24);
        let v = VectorField {
            x: smooth_field(c.grid, 5, 21, 0.0),
            y: smooth_field(c.grid, 5, 22, 0.0),
        };
        let pv = c.leray_project(&v);
        let ppv = c.leray_project(&pv);
        let scale = pv.max_magnitude().max(1.0);
        for (a, b) in pv.x.data.iter().zip(&ppv.x.data) {
            assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn convolution_matches_quadrature_oracle() {
        for &n in &[8usize, 12, 16] {
            let l = 2.0 * std::f64::consts::PI;
            let grid = GridSpec::new(l, n).unwrap();
            let kernel = build_kernel(
                grid,
                KernelShape::PeriodizedGaussian {
                    epsilon: 2.0 * l / n as f64,
                    mass: 5.0,
                },
            )
            .unwrap();
            let phi = smooth_field(grid, (n / 2 - 1) as i64, n as u64, 0.4);
            let fast = convolve(&kernel, &phi).unwrap();
            let slow = convolve_oracle(&kernel, &phi);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn convolution_identities() {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 32).unwrap();
        let kernel = build_kernel(
            grid,
            KernelShape::PeriodizedGaussian {
                epsilon: 0.5,
                mass: 5.0,
            },
        )
        .unwrap();
        // J * 0 = 0
        let zero = ScalarField::zeros(grid);
        assert!(convolve(&kernel, &zero).unwrap().max_abs() < 1e-14);
        // J * 1 = a_field
        let one = ScalarField::constant(grid, 1.0);
        let a = convolve(&kernel, &one).unwrap();
        for (x, y) in a.data.iter().zip(&kernel.a_field.data) {
            assert!((x - y).abs() < 1e-10);
        }
        // symmetry (J*phi, psi) = (phi, J*psi)
        let phi = smooth_field(grid, 8, 5, 0.2);
        let psi = smooth_field(grid, 8, 6, -0.1);
        let lhs = inner(&convolve(&kernel, &phi).unwrap(), &psi);
        let rhs = inner(&phi, &convolve(&kernel, &psi).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn convolution_rejects_grid_mismatch() {
        let g1 = GridSpec::new(2.0 * std::f64::consts::PI, 16).unwrap();
        let g2 = GridSpec::new(2.0 * std::f64::consts::PI, 32).unwrap();
        let kernel = build_kernel(
            g1,
            KernelShape::PeriodizedGaussian {
                epsilon: 1.0,
                mass: 1.0,
            },
        )
        .unwrap();
        assert!(convolve(&kernel, &ScalarField::zeros(g2)).is_err());
    }

    #[test]
    fn dual_norm_single_mode() {
        let l = 2.0 * std::f64::consts::PI;
        let grid = GridSpec::new(l, 32).unwrap();
        let phi = ScalarField::from_fn(grid, |x, _| (2.0 * std::f64::consts::PI * x / l).cos());
        let norm = neumann_dual_norm(&phi).unwrap();
        let expected = (grid.domain_measure() / 2.0).sqrt();
        assert!((norm - expected).abs() < 1e-10);
        // homogeneity
        let phi2 = ScalarField {
            grid,
            data: phi.data.iter().map(|v| 2.0 * v).collect(),
        };
        assert!((neumann_dual_norm(&phi2).unwrap() - 2.0 * norm).abs() < 1e-10);
    }

    #[test]
    fn dual_norm_zero_and_mean_rejection() {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 16).unwrap();
        assert_eq!(neumann_dual_norm(&ScalarField::zeros(grid)).unwrap(), 0.0);
        let biased = ScalarField::constant(grid, 0.3);
        assert!(matches!(
            neumann_dual_norm(&biased),
            Err(Error::NonzeroMean { .. })
        ));
    }

    #[test]
    fn dual_norm_triangle_inequality() {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 16).unwrap();
        for seed in 0..20 {
            let a = smooth_field(grid, 6, 100 + seed, 0.0);
            let b = smooth_field(grid, 6, 200 + seed, 0.0);
            let sum = ScalarField {
                grid,
                data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
            };
            let na = neumann_dual_norm(&a).unwrap();
            let nb = neumann_dual_norm(&b).unwrap();
            let ns = neumann_dual_norm(&sum).unwrap();
            assert!(ns <= na + nb + 1e-12);
        }
    }

    #[test]
    fn h1_dual_norm_bounds_l2() {
        let grid = GridSpec::new(2.0 * std::f64::consts::PI, 16).unwrap();
        let c = SpectralCtx::new(grid);
        let f = smooth_field(grid, 6, 42, 0.5);
        let dual = h1_dual_norm_ctx(&c, &f);
        assert!(dual <= l2_norm(&f) + 1e-12);
        assert!(dual > 0.0);
    }
}
