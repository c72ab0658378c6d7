//! Procedural stand-in for the real-scanner domain and the multi-seed toy
//! reproduction of the FID-reduction result.
//!
//! "Real" images share the phantom anatomy family but come from a separate
//! population and carry scanner-like texture: a contrast (gamma) change, a smooth
//! intensity bias field, and spatially correlated noise.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::image::{Image2D, ImageError};
use crate::pipeline::{run_pipeline, PipelineError};
use crate::preprocess::normalize01;
use crate::seed;

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Texture that turns a clean simulated image into a "real" one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealStyle {
    /// Intensity exponent applied before the other effects.
    pub gamma: f64,
    /// Peak relative gain change of the linear bias field across the image.
    pub bias_amplitude: f64,
    /// Standard deviation of the correlated noise, in `[0, 1]` intensity units.
    pub noise_sd: f64,
    /// Gaussian correlation length of the noise, in pixels.
    pub noise_corr_px: f64,
}

impl Default for RealStyle {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            bias_amplitude: 0.3,
            noise_sd: 0.08,
            noise_corr_px: 1.5,
        }
    }
}

impl RealStyle {
    pub fn validate(&self) -> Result<(), StyleError> {
        let bad = |field, reason: &str| {
            Err(StyleError::InvalidSpec {
                field,
                reason: reason.into(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.bias_amplitude) {
            return bad("bias_amplitude", "must be in [0, 1)");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd", "must be >= 0");
        }
        if !(self.noise_corr_px >= 0.0 && self.noise_corr_px <= 16.0) {
            return bad("noise_corr_px", "must be in [0, 16]");
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// White noise blurred by a separable Gaussian and rescaled to unit variance.
fn correlated_noise(nx: usize, ny: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..nx * ny).map(|_| StandardNormal.sample(rng)).collect();
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                out[y * nx + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        let o = j as isize - r;
                        let (sx, sy) = if horizontal {
                            ((x as isize + o).clamp(0, nx as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + o).clamp(0, ny as isize - 1) as usize)
                        };
                        w * src[sy * nx + sx]
                    })
                    .sum();
            }
        }
        out
    };
    // each pass scales the variance by Σk²
    let scale = 1.0 / k.iter().map(|w| w * w).sum::<f64>();
    blur(&blur(&white, true), false)
        .into_iter()
        .map(|v| v * scale)
        .collect()
}

/// Applies `style` to an image in `[0, 1]` and renormalizes to `[0, 1]`.
pub fn apply_real_style(
    img: &Image2D,
    style: &RealStyle,
    seed: u64,
) -> Result<Image2D, StyleError> {
    style.validate()?;
    let (nx, ny) = img.dims();
    let mut rng = seed::rng(seed);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (c, s) = (theta.cos(), theta.sin());
    let noise = correlated_noise(nx, ny, style.noise_corr_px, &mut rng);
    let px: Vec<f32> = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let u = 2.0 * (i % nx) as f64 / (nx.max(2) - 1) as f64 - 1.0;
            let v = 2.0 * (i / nx) as f64 / (ny.max(2) - 1) as f64 - 1.0;
            let bias = 1.0 + style.bias_amplitude * (c * u + s * v) / std::f64::consts::SQRT_2;
            let val =
                f64::from(p).clamp(0.0, 1.0).powf(style.gamma) * bias + style.noise_sd * noise[i];
            val as f32
        })
        .collect();
    let styled = img.with_pixels(nx, ny, px)?.record(format!(
        "real_style gamma={} bias={} noise={} corr={}",
        style.gamma, style.bias_amplitude, style.noise_sd, style.noise_corr_px
    ));
    Ok(normalize01(&styled))
}

/// One master seed of the toy reproduction.
#[derive(Debug, Clone)]
pub struct ToySeedResult {
    pub seed: u64,
    pub fid_sim: f64,
    pub fid_translated: f64,
    pub seconds: f64,
    pub root: PathBuf,
}

impl ToySeedResult {
    pub fn reduced(&self) -> bool {
        self.fid_translated < self.fid_sim
    }
}

/// Runs the pipeline once per seed, each in `root/seed-<n>`, with `base` providing
/// everything except the seed and output root.
pub fn reproduce(
    base: &ExperimentConfig,
    seeds: &[u64],
    root: &Path,
    mut on_result: impl FnMut(&ToySeedResult),
) -> Result<Vec<ToySeedResult>, PipelineError> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = ExperimentConfig {
            seed,
            output_root: root.join(format!("seed-{seed}")),
            ..base.clone()
        };
        let t = Instant::now();
        let run = run_pipeline(&cfg)?;
        let fid = |name| run.report.fid(name).expect("both rows are always written");
        let r = ToySeedResult {
            seed,
            fid_sim: fid("sim_vs_real"),
            fid_translated: fid("translated_vs_real"),
            seconds: t.elapsed().as_secs_f64(),
            root: run.root,
        };
        on_result(&r);
        out.push(r);
    }
    Ok(out)
}
