//! Periodic square grid and real-valued fields living on it.
//!
//! The domain is the torus `[0, L)^2` sampled on an `N x N` uniform grid.
//! Wavenumbers are `2 pi m / L` with `m = -N/2 .. N/2 - 1` per axis, stored
//! in standard FFT order.

use crate::{Error, Result};

/// Geometry of the periodic square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Side length of the domain `[0, L)^2`.
    pub side_length: f64,
    /// Number of grid points per axis (even, >= 8).
    pub resolution: usize,
    /// Fraction of the Nyquist band kept by the dealiasing mask.
    pub dealias_fraction: f64,
}

impl GridSpec {
    pub fn new(side_length: f64, resolution: usize) -> Result<Self> {
        Self::with_dealias(side_length, resolution, 2.0 / 3.0)
    }

    pub fn with_dealias(side_length: f64, resolution: usize, dealias_fraction: f64) -> Result<Self> {
        if !(side_length > 0.0) || !side_length.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "side length must be positive and finite, got {side_length}"
            )));
        }
        if resolution < 8 || resolution % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "resolution must be an even integer >= 8, got {resolution}"
            )));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        Ok(Self {
            side_length,
            resolution,
            dealias_fraction,
        })
    }

    /// Number of sample points, `N^2`.
    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `L / N`.
    pub fn spacing(&self) -> f64 {
        self.side_length / self.resolution as f64
    }

    /// Quadrature weight of one cell, `(L / N)^2`.
    pub fn cell_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    /// Domain measure `|O| = L^2`.
    pub fn domain_measure(&self) -> f64 {
        self.side_length * self.side_length
    }

    /// Physical coordinate of sample `(ix, iy)`.
    pub fn point(&self, ix: usize, iy: usize) -> (f64, f64) {
        let h = self.spacing();
        (ix as f64 * h, iy as f64 * h)
    }

    /// Signed FFT-ordered mode index for slot `i`: `0, 1, .., N/2-1, -N/2, .., -1`.
    pub fn mode_index(&self, i: usize) -> i64 {
        let n = self.resolution as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Physical wavenumber of slot `i`: `2 pi m / L`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.mode_index(i) as f64 / self.side_length
    }

    /// Largest mode index kept by the dealiasing mask.
    pub fn dealias_cutoff(&self) -> i64 {
        let nyquist = self.resolution as f64 / 2.0;
        (self.dealias_fraction * nyquist).floor() as i64
    }

    /// Smallest nonzero eigenvalue of the (Stokes/Neumann) Laplacian on the
    /// torus, `lambda_1 = (2 pi / L)^2`.
    pub fn lambda1(&self) -> f64 {
        let k1 = 2.0 * std::f64::consts::PI / self.side_length;
        k1 * k1
    }

    /// Poincare constant for mean-zero fields, `C_P = L / (2 pi)`.
    pub fn poincare_constant(&self) -> f64 {
        self.side_length / (2.0 * std::f64::consts::PI)
    }

    pub fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self.side_length != other.side_length || self.resolution != other.resolution {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} (L = {}) vs {}x{} (L = {})",
                self.resolution,
                self.resolution,
                self.side_length,
                other.resolution,
                other.resolution,
                other.side_length
            )));
        }
        Ok(())
    }
}

/// Real scalar field sampled on a [`GridSpec`], row-major (`iy * N + ix`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let n = grid.resolution;
        let mut data = Vec::with_capacity(grid.len());
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = grid.point(ix, iy);
                data.push(f(x, y));
            }
        }
        Self { grid, data }
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.grid.resolution + ix]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Quadrature of the field, `sum f(x) * cell`.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Mean value `integral / |O|`.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Real vector field with two components on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.x.grid
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Largest pointwise magnitude `max sqrt(ux^2 + uy^2)`.
    pub fn max_magnitude(&self) -> f64 {
        self.x
            .data
            .iter()
            .zip(&self.y.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a * a + b * b).sqrt()))
    }
}

/// `sum f g * cell`, the discrete `L^2` pairing.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    debug_assert_eq!(f.data.len(), g.data.len());
    f.data
        .iter()
        .zip(&g.data)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        * f.grid.cell_area()
}

/// Discrete `L^2` norm of a scalar field.
pub fn l2_norm(f: &ScalarField) -> f64 {
    inner(f, f).max(0.0).sqrt()
}

/// Discrete `L^2` norm of a vector field.
pub fn l2_norm_vec(v: &VectorField) -> f64 {
    (inner(&v.x, &v.x) + inner(&v.y, &v.y)).max(0.0).sqrt()
}

/// Discrete `L^p` norm of a scalar field.
pub fn lp_norm(f: &ScalarField, p: f64) -> f64 {
    (f.data
        .iter()
        .map(|v| v.abs().powf(p))
        .sum::<f64>()
        * f.grid.cell_area())
    .powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(-1.0, 16).is_err());
        assert!(GridSpec::new(1.0, 6).is_err());
        assert!(GridSpec::new(1.0, 15).is_err());
        assert!(GridSpec::with_dealias(1.0, 16, 0.0).is_err());
        assert!(GridSpec::with_dealias(1.0, 16, 1.5).is_err());
    }

    #[test]
    fn wavenumbers_follow_fft_order() {
        let g = GridSpec::new(2.0 * std::f64::consts::PI, 8).unwrap();
        let modes: Vec<i64> = (0..8).map(|i| g.mode_index(i)).collect();
        assert_eq!(modes, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert!((g.wavenumber(1) - 1.0).abs() < 1e-15);
        assert!((g.lambda1() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadrature_of_constant() {
        let g = GridSpec::new(2.0, 16).unwrap();
        let f = ScalarField::constant(g, 3.0);
        assert!((f.integral() - 12.0).abs() < 1e-12);
        assert!((f.mean() - 3.0).abs() < 1e-14);
        assert!((l2_norm(&f) - 3.0 * 2.0).abs() < 1e-12);
    }
}
