//! 2D DFT helpers and k-space noise.

use num_traits::Zero;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::SimulateError;
use crate::image::Image2D;
use crate::seed;

fn transform(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    row.process(data);
    let mut column = vec![Complex64::zero(); ny];
    for x in 0..nx {
        for (y, c) in column.iter_mut().enumerate() {
            *c = data[y * nx + x];
        }
        col.process(&mut column);
        for (y, c) in column.iter().enumerate() {
            data[y * nx + x] = *c;
        }
    }
}

/// Unnormalized forward 2D DFT of a row-major `nx × ny` grid.
pub fn fft2(data: &mut [Complex64], nx: usize, ny: usize) {
    assert_eq!(data.len(), nx * ny);
    transform(data, nx, ny, false);
}

/// Inverse 2D DFT including the `1/(nx·ny)` factor.
pub fn ifft2(data: &mut [Complex64], nx: usize, ny: usize) {
    assert_eq!(data.len(), nx * ny);
    transform(data, nx, ny, true);
    let scale = 1.0 / (nx * ny) as f64;
    data.iter_mut().for_each(|c| *c *= scale);
}

/// Adds i.i.d. complex Gaussian noise in k-space and returns the magnitude image.
///
/// Each k-space component gets standard deviation `noise_sd · ref · sqrt(nx·ny)`,
/// which is `noise_sd · ref` per component in image space. `ref` is the image
/// maximum, or 1 for images whose maximum is not positive.
pub fn inject_kspace_noise(
    img: &Image2D,
    noise_sd: f64,
    seed: u64,
) -> Result<Image2D, SimulateError> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(SimulateError::InvalidNoise(noise_sd));
    }
    let (nx, ny) = img.dims();
    let mut k: Vec<Complex64> = img
        .pixels()
        .iter()
        .map(|&p| Complex64::new(f64::from(p), 0.0))
        .collect();
    fft2(&mut k, nx, ny);
    if noise_sd > 0.0 {
        let peak = f64::from(img.min_max().1);
        let reference = if peak > 0.0 { peak } else { 1.0 };
        let sd = noise_sd * reference * ((nx * ny) as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("finite positive sd");
        let mut rng = seed::rng(seed);
        for c in &mut k {
            c.re += normal.sample(&mut rng);
            c.im += normal.sample(&mut rng);
        }
    }
    ifft2(&mut k, nx, ny);
    let pixels = k.iter().map(|c| c.norm() as f32).collect();
    Ok(img.with_pixels(nx, ny, pixels)?)
}
