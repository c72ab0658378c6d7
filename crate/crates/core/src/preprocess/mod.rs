//! Crop, resize and intensity scaling.
//!
//! Simulated slices: heart bounding box (from labels) -> resize -> `[0, 1]`.
//! Real images: resize -> centre crop -> `[0, 1]`. Both end at `width × height`
//! (128 × 126 by default).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image2D, ImageError};
use crate::phantom::{LabelSlice, PhantomError};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("empty heart mask")]
    EmptyHeartMask,
    #[error("crop exceeds image: {crop_w}x{crop_h} at ({x0}, {y0}) from {nx}x{ny}")]
    CropExceedsImage {
        x0: usize,
        y0: usize,
        crop_w: usize,
        crop_h: usize,
        nx: usize,
        ny: usize,
    },
    #[error("output dims must be positive, got {0}x{1}")]
    InvalidDims(usize, usize),
    #[error("labels are {labels:?} but image is {image:?}")]
    LabelDimsMismatch {
        labels: [usize; 2],
        image: [usize; 2],
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Labels(#[from] PhantomError),
}

/// Pixel rectangle; `(x0, y0)` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    fn check(&self, nx: usize, ny: usize) -> Result<(), PreprocessError> {
        if self.width == 0
            || self.height == 0
            || self.x0 + self.width > nx
            || self.y0 + self.height > ny
        {
            return Err(PreprocessError::CropExceedsImage {
                x0: self.x0,
                y0: self.y0,
                crop_w: self.width,
                crop_h: self.height,
                nx,
                ny,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub width: usize,
    pub height: usize,
    /// Bounding-box margin for simulated slices, in pixels.
    pub margin: usize,
    /// Resize target for real images before the centre crop. `None` scales the
    /// image uniformly until it just covers `width × height`.
    pub real_resize: Option<[usize; 2]>,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 126,
            margin: 8,
            real_resize: None,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.width == 0 || self.height == 0 {
            return Err(PreprocessError::InvalidDims(self.width, self.height));
        }
        if let Some([w, h]) = self.real_resize {
            if w < self.width || h < self.height {
                return Err(PreprocessError::CropExceedsImage {
                    x0: 0,
                    y0: 0,
                    crop_w: self.width,
                    crop_h: self.height,
                    nx: w,
                    ny: h,
                });
            }
        }
        Ok(())
    }
}

/// Tightest box around myocardium / LV / RV pixels, grown by `margin_px` and
/// clamped to the image.
pub fn bbox_from_labels(slice: &LabelSlice, margin_px: usize) -> Result<CropRect, PreprocessError> {
    let [nx, ny] = slice.dims();
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    for y in 0..ny {
        for x in 0..nx {
            if slice.get(x, y).is_heart() {
                lo = [lo[0].min(x), lo[1].min(y)];
                hi = [hi[0].max(x), hi[1].max(y)];
            }
        }
    }
    if lo[0] == usize::MAX {
        return Err(PreprocessError::EmptyHeartMask);
    }
    let x0 = lo[0].saturating_sub(margin_px);
    let y0 = lo[1].saturating_sub(margin_px);
    let x1 = (hi[0] + margin_px).min(nx - 1);
    let y1 = (hi[1] + margin_px).min(ny - 1);
    Ok(CropRect {
        x0,
        y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    })
}

pub fn crop(img: &Image2D, rect: CropRect) -> Result<Image2D, PreprocessError> {
    rect.check(img.nx(), img.ny())?;
    let pixels = (rect.y0..rect.y0 + rect.height)
        .flat_map(|y| (rect.x0..rect.x0 + rect.width).map(move |x| (x, y)))
        .map(|(x, y)| img.get(x, y))
        .collect();
    Ok(img
        .with_pixels(rect.width, rect.height, pixels)?
        .record(format!(
            "crop x0={} y0={} w={} h={}",
            rect.x0, rect.y0, rect.width, rect.height
        )))
}

pub fn crop_labels(slice: &LabelSlice, rect: CropRect) -> Result<LabelSlice, PreprocessError> {
    let [nx, ny] = slice.dims();
    rect.check(nx, ny)?;
    let labels = (rect.y0..rect.y0 + rect.height)
        .flat_map(|y| (rect.x0..rect.x0 + rect.width).map(move |x| (x, y)))
        .map(|(x, y)| slice.labels()[y * nx + x])
        .collect();
    Ok(LabelSlice::new(
        [rect.width, rect.height],
        slice.spacing(),
        slice.phase(),
        slice.slice_index(),
        labels,
    )?)
}

/// Centre crop with offset `floor((in - out) / 2)` per axis.
pub fn center_crop(img: &Image2D, out_w: usize, out_h: usize) -> Result<Image2D, PreprocessError> {
    let (nx, ny) = img.dims();
    if out_w > nx || out_h > ny || out_w == 0 || out_h == 0 {
        return Err(PreprocessError::CropExceedsImage {
            x0: nx.saturating_sub(out_w) / 2,
            y0: ny.saturating_sub(out_h) / 2,
            crop_w: out_w,
            crop_h: out_h,
            nx,
            ny,
        });
    }
    crop(
        img,
        CropRect {
            x0: (nx - out_w) / 2,
            y0: (ny - out_h) / 2,
            width: out_w,
            height: out_h,
        },
    )
}

/// Source coordinate and the two taps for output index `i` (half-pixel centres).
fn taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(
    img: &Image2D,
    out_w: usize,
    out_h: usize,
) -> Result<Image2D, PreprocessError> {
    if out_w == 0 || out_h == 0 {
        return Err(PreprocessError::InvalidDims(out_w, out_h));
    }
    let (nx, ny) = img.dims();
    if (nx, ny) == (out_w, out_h) {
        return Ok(img
            .clone()
            .record(format!("resize {nx}x{ny}->{out_w}x{out_h} scale=1,1")));
    }
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, nx, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| taps(y, ny, out_h)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x, y| f64::from(img.get(x, y));
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            pixels.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    let (sx, sy) = (out_w as f64 / nx as f64, out_h as f64 / ny as f64);
    Ok(img
        .with_pixels(out_w, out_h, pixels)?
        .record(format!("resize {nx}x{ny}->{out_w}x{out_h} scale={sx},{sy}")))
}

/// Nearest-neighbour label resampling; spacing is rescaled to keep physical extent.
pub fn resize_labels_nearest(
    slice: &LabelSlice,
    out_w: usize,
    out_h: usize,
) -> Result<LabelSlice, PreprocessError> {
    if out_w == 0 || out_h == 0 {
        return Err(PreprocessError::InvalidDims(out_w, out_h));
    }
    let [nx, ny] = slice.dims();
    let nearest = |i: usize, n_in: usize, n_out: usize| {
        (((i as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
    };
    let labels = (0..out_h)
        .flat_map(|y| (0..out_w).map(move |x| (x, y)))
        .map(|(x, y)| slice.labels()[nearest(y, ny, out_h) * nx + nearest(x, nx, out_w)])
        .collect();
    let [sx, sy] = slice.spacing();
    Ok(LabelSlice::new(
        [out_w, out_h],
        [sx * nx as f64 / out_w as f64, sy * ny as f64 / out_h as f64],
        slice.phase(),
        slice.slice_index(),
        labels,
    )?)
}

/// `(p - min) / (max - min)`; constant images map to zeros.
pub fn normalize01(img: &Image2D) -> Image2D {
    let (lo, hi) = img.min_max();
    let (nx, ny) = img.dims();
    let pixels = if hi > lo {
        let (lo, span) = (f64::from(lo), f64::from(hi) - f64::from(lo));
        img.pixels()
            .iter()
            .map(|&p| ((f64::from(p) - lo) / span) as f32)
            .collect()
    } else {
        vec![0.0; nx * ny]
    };
    img.with_pixels(nx, ny, pixels)
        .expect("same dims, finite values")
        .record("normalize01")
}

/// Simulated path; returns the image and its labels carried through the same geometry.
pub fn preprocess_sim_pair(
    img: &Image2D,
    labels: &LabelSlice,
    params: &PreprocessParams,
) -> Result<(Image2D, LabelSlice), PreprocessError> {
    params.validate()?;
    let image_dims = [img.nx(), img.ny()];
    if labels.dims() != image_dims {
        return Err(PreprocessError::LabelDimsMismatch {
            labels: labels.dims(),
            image: image_dims,
        });
    }
    let rect = bbox_from_labels(labels, params.margin)?;
    let cropped = crop(img, rect)?;
    let resized = resize_bilinear(&cropped, params.width, params.height)?;
    let out_labels =
        resize_labels_nearest(&crop_labels(labels, rect)?, params.width, params.height)?;
    Ok((normalize01(&resized), out_labels))
}

pub fn preprocess_sim(
    img: &Image2D,
    labels: &LabelSlice,
    params: &PreprocessParams,
) -> Result<Image2D, PreprocessError> {
    preprocess_sim_pair(img, labels, params).map(|(i, _)| i)
}

/// Resize target used by the real path.
pub fn real_resize_target(nx: usize, ny: usize, params: &PreprocessParams) -> [usize; 2] {
    if let Some(t) = params.real_resize {
        return t;
    }
    let s = (params.width as f64 / nx as f64).max(params.height as f64 / ny as f64);
    let fit = |n: usize, out: usize| ((n as f64 * s - 1e-9).ceil() as usize).max(out);
    [fit(nx, params.width), fit(ny, params.height)]
}

pub fn preprocess_real(
    img: &Image2D,
    params: &PreprocessParams,
) -> Result<Image2D, PreprocessError> {
    params.validate()?;
    let [w, h] = real_resize_target(img.nx(), img.ny(), params);
    let resized = resize_bilinear(img, w, h)?;
    let cropped = center_crop(&resized, params.width, params.height)?;
    Ok(normalize01(&cropped))
}
