//! Realism and segmentation metrics: Fréchet distance between Gaussian fits of
//! image features, Dice overlap, and boundary Hausdorff distance.
//!
//! The feature extractors are deliberately small and untrained, so absolute
//! distances are only comparable under the same extractor and seed.

mod features;
mod frechet;
mod report;
mod seg;

use std::path::PathBuf;

use thiserror::Error;

pub use features::{extract_features, ExtractorKind, FeatureExtractor, HIST_BINS};
pub use frechet::{frechet_distance, gaussian_stats, matrix_sqrt_psd, FeatureStats};
pub use report::{
    evaluate_realism, evaluate_realism_dirs, evaluate_segmentation, evaluate_segmentation_dirs,
    RealismReport, RealismRow, SegReport, SegRow, MIN_REALISM_IMAGES, REALISM_HEADER, SEG_HEADER,
};
pub use seg::{boundary, dice, hausdorff, hausdorff_percentile, Mask2D};

use crate::image::ImageError;
use crate::phantom::PhantomError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 feature vectors, got {0}")]
    TooFewVectors(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("feature stats come from different extractors: {0} vs {1}")]
    ExtractorMismatch(String, String),
    #[error("matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("eigendecomposition did not converge")]
    NonConvergent,
    #[error("Fréchet distance is negative beyond rounding: {0:e}")]
    NegativeDistance(f64),
    #[error("mask dims {0:?} vs {1:?}")]
    MaskDims([usize; 2], [usize; 2]),
    #[error("mask spacing {0:?} vs {1:?}")]
    MaskSpacing([f64; 2], [f64; 2]),
    #[error("mask classes differ")]
    MaskClass,
    #[error("undefined HD for empty mask")]
    EmptyMask,
    #[error("percentile must be in (0, 100], got {0}")]
    Percentile(f64),
    #[error("image dims {found:?} differ from {expected:?}")]
    ImageDims {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{dir}: {found} images, at least {needed} required")]
    TooFewImages {
        dir: PathBuf,
        found: usize,
        needed: usize,
    },
    #[error("no case in {0} has a matching ground truth")]
    NoPairs(PathBuf),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Labels(#[from] PhantomError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}
