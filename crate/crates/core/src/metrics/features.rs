use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::image::Image2D;
use crate::par;
use crate::seed;
use crate::tensor::{Tape, Tensor};

pub const HIST_BINS: usize = 32;
const CONV_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Frozen random 3-layer strided conv stack, global-average-pooled per layer.
    RandomConv,
    /// 32-bin intensity histogram plus intensity and gradient moments.
    PixelStats,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 2] = [ExtractorKind::RandomConv, ExtractorKind::PixelStats];

    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::RandomConv => "random_conv",
            ExtractorKind::PixelStats => "pixel_stats",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub seed: u64,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::RandomConv,
            seed: 0,
        }
    }
}

impl FeatureExtractor {
    pub fn new(kind: ExtractorKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Identity recorded with feature statistics; distances require equal ids.
    pub fn id(&self) -> String {
        match self.kind {
            ExtractorKind::RandomConv => format!("random_conv:seed={}", self.seed),
            ExtractorKind::PixelStats => "pixel_stats".to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            ExtractorKind::RandomConv => CONV_CHANNELS.iter().sum(),
            ExtractorKind::PixelStats => HIST_BINS + 4,
        }
    }

    fn conv_weights(&self) -> Vec<Tensor<f64>> {
        let mut rng = seed::stream(self.seed, "metrics.random_conv", 0);
        let mut c_in = 1;
        CONV_CHANNELS
            .iter()
            .map(|&c| {
                let n = Normal::new(0.0, (2.0 / (c_in * 16) as f64).sqrt()).unwrap();
                let w = Tensor::from_fn(&[c, c_in, 4, 4], |_| n.sample(&mut rng));
                c_in = c;
                w
            })
            .collect()
    }

    /// Feature vector of one image.
    pub fn extract(&self, img: &Image2D) -> Result<Vec<f64>, MetricsError> {
        match self.kind {
            ExtractorKind::PixelStats => Ok(pixel_stats(img)),
            ExtractorKind::RandomConv => random_conv(img, &self.conv_weights()),
        }
    }
}

fn pixel_stats(img: &Image2D) -> Vec<f64> {
    let (nx, ny) = img.dims();
    let px = img.pixels();
    let n = px.len() as f64;
    let mut f = vec![0.0; HIST_BINS + 4];
    for &p in px {
        let b = ((f64::from(p).clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        f[b] += 1.0 / n;
    }
    let (mean, var) = moments(px.iter().map(|&p| f64::from(p)));
    let grads = (0..ny.saturating_sub(1)).flat_map(|y| {
        (0..nx.saturating_sub(1)).map(move |x| {
            let v = f64::from(px[y * nx + x]);
            let gx = f64::from(px[y * nx + x + 1]) - v;
            let gy = f64::from(px[(y + 1) * nx + x]) - v;
            gx.hypot(gy)
        })
    });
    let (gmean, gvar) = moments(grads);
    f[HIST_BINS..].copy_from_slice(&[mean, var, gmean, gvar]);
    f
}

/// Mean and population variance (0, 0 for an empty sequence).
fn moments(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var)
}

fn random_conv(img: &Image2D, weights: &[Tensor<f64>]) -> Result<Vec<f64>, MetricsError> {
    let (nx, ny) = img.dims();
    let mut tape = Tape::<f64>::new();
    let x = Tensor::new(
        &[1, 1, ny, nx],
        img.pixels()
            .iter()
            .map(|&p| 2.0 * f64::from(p) - 1.0)
            .collect(),
    )?;
    let mut y = tape.constant(x);
    let m = 1 << weights.len();
    let (ph, pw) = ((m - ny % m) % m, (m - nx % m) % m);
    if ph + pw > 0 {
        y = tape.pad_edge(y, [ph / 2, ph - ph / 2, pw / 2, pw - pw / 2])?;
    }
    let mut out = Vec::new();
    for w in weights {
        let wv = tape.constant(w.clone());
        y = tape.conv2d(y, wv, None, 2, 1)?;
        y = tape.leaky_relu(y, 0.2);
        let s = tape.shape(y).to_vec();
        let plane = s[2] * s[3];
        out.extend(
            tape.value(y)
                .data()
                .chunks(plane)
                .map(|c| c.iter().sum::<f64>() / plane as f64),
        );
    }
    Ok(out)
}

/// Features of every image, computed in parallel. All images must share dims.
pub fn extract_features(
    images: &[Image2D],
    extractor: &FeatureExtractor,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    if let Some(first) = images.first() {
        if let Some(bad) = images.iter().find(|i| i.dims() != first.dims()) {
            return Err(MetricsError::ImageDims {
                expected: first.dims(),
                found: bad.dims(),
            });
        }
    }
    par::map_slice(images, |img| extractor.extract(img))
        .into_iter()
        .collect()
}
