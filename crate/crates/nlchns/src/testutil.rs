//! Shared helpers for unit tests.

use crate::grid::{GridSpec, ScalarField};
use crate::kernel::KernelField;
use rand::{Rng, SeedableRng};

/// Band-limited pseudo-random field with decaying spectrum.
pub fn smooth_field(grid: GridSpec, kmax: i64, seed: u64, mean: f64) -> ScalarField {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for my in -kmax..=kmax {
        for mx in -kmax..=kmax {
            if mx == 0 && my == 0 {
                continue;
            }
            let amp: f64 = rng.gen_range(-1.0..1.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let decay = 1.0 / (1.0 + (mx * mx + my * my) as f64);
            modes.push((mx as f64, my as f64, amp * decay, phase));
        }
    }
    let l = grid.side_length;
    ScalarField::from_fn(grid, |x, y| {
        let mut v = mean;
        for &(mx, my, a, p) in &modes {
            v += a * (std::f64::consts::TAU * (mx * x + my * y) / l + p).cos();
        }
        v
    })
}

/// Direct O(N^4) periodic quadrature oracle for the convolution.
pub fn convolve_oracle(kernel: &KernelField, phi: &ScalarField) -> ScalarField {
    let n = phi.grid.resolution;
    let cell = phi.grid.cell_area();
    let mut out = ScalarField::zeros(phi.grid);
    for iy in 0..n {
        for ix in 0..n {
            let mut acc = 0.0;
            for jy in 0..n {
                for jx in 0..n {
                    let dx = (ix + n - jx) % n;
                    let dy = (iy + n - jy) % n;
                    acc += kernel.samples.at(dx, dy) * phi.at(jx, jy);
                }
            }
            out.data[iy * n + ix] = acc * cell;
        }
    }
    out
}
