//! `Image2D`, the pixel currency shared by every stage, and its file format.
//!
//! File layout: header schema `S2R-IMAGE 1`, `dims <nx> <ny>`, any number of
//! `meta <key> <value>` and `history <step>` lines, the `---` separator, then
//! `nx * ny` little-endian `f32` pixels, row-major with x fastest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::io::{write_atomic, Header, HeaderError};

pub const IMAGE_SCHEMA: &str = "S2R-IMAGE 1";
pub const IMAGE_EXT: &str = "s2rimg";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dims must be positive, got {0}x{1}")]
    EmptyDims(usize, usize),
    #[error("pixel count {got} does not match dims {nx}x{ny}")]
    DimsMismatch { nx: usize, ny: usize, got: usize },
    #[error("non-finite pixel at ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("malformed image header: {0}")]
    Header(#[from] HeaderError),
    #[error("image payload has {got} bytes, dims need {expected}")]
    PayloadMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Provenance carried along with pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub tags: BTreeMap<String, String>,
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    nx: usize,
    ny: usize,
    pixels: Vec<f32>,
    pub meta: Provenance,
}

impl Image2D {
    pub fn new(nx: usize, ny: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if nx == 0 || ny == 0 {
            return Err(ImageError::EmptyDims(nx, ny));
        }
        if pixels.len() != nx * ny {
            return Err(ImageError::DimsMismatch {
                nx,
                ny,
                got: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(ImageError::NonFinite {
                x: i % nx,
                y: i / nx,
            });
        }
        Ok(Self {
            nx,
            ny,
            pixels,
            meta: Provenance::default(),
        })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0, "image dims must be positive");
        Self {
            nx,
            ny,
            pixels: vec![0.0; nx * ny],
            meta: Provenance::default(),
        }
    }

    /// Builds an image from `f(x, y)`.
    pub fn from_fn(
        nx: usize,
        ny: usize,
        f: impl Fn(usize, usize) -> f32,
    ) -> Result<Self, ImageError> {
        let pixels = (0..ny)
            .flat_map(|y| (0..nx).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(nx, ny, pixels)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.nx + x]
    }

    /// Replaces the pixels, keeping the provenance.
    pub fn with_pixels(&self, nx: usize, ny: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        let mut out = Self::new(nx, ny, pixels)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    pub fn tag(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.tags.insert(key.to_string(), value.into());
        self
    }

    pub fn record(mut self, step: impl Into<String>) -> Self {
        self.meta.history.push(step.into());
        self
    }

    /// `(min, max)` over all pixels.
    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = Header::new(IMAGE_SCHEMA);
        h.push("dims", format!("{} {}", self.nx, self.ny));
        for (k, v) in &self.meta.tags {
            h.push("meta", format!("{k} {v}"));
        }
        for step in &self.meta.history {
            h.push("history", step.clone());
        }
        let payload: Vec<u8> = self.pixels.iter().flat_map(|p| p.to_le_bytes()).collect();
        h.encode(&payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        let (header, payload) = Header::decode(bytes)?;
        header.expect_schema(IMAGE_SCHEMA)?;
        let dims: Vec<usize> = header.numbers("dims")?;
        let [nx, ny] = dims[..] else {
            return Err(HeaderError::BadValue {
                key: "dims".into(),
                reason: "expected two extents".into(),
            }
            .into());
        };
        let expected = nx * ny * 4;
        if payload.len() != expected {
            return Err(ImageError::PayloadMismatch {
                expected,
                got: payload.len(),
            });
        }
        let pixels = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut img = Self::new(nx, ny, pixels)?;
        for entry in header.get_all("meta") {
            let (k, v) = entry.split_once(' ').unwrap_or((entry, ""));
            img.meta.tags.insert(k.to_string(), v.to_string());
        }
        img.meta.history = header.get_all("history").map(str::to_string).collect();
        Ok(img)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = fs::read(path).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// 16-bit binary PGM with the pixel range linearly mapped onto `[0, 65535]`.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let (lo, hi) = self.min_max();
        let span = f64::from(hi) - f64::from(lo);
        let mut out = format!("P5\n{} {}\n65535\n", self.nx, self.ny).into_bytes();
        for &p in &self.pixels {
            let v = if span > 0.0 {
                ((f64::from(p) - f64::from(lo)) / span * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn save_pgm16(&self, path: &Path) -> Result<(), ImageError> {
        write_atomic(path, &self.to_pgm16()).map_err(|source| ImageError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Sorted list of files with extension `ext` directly under `dir`.
pub fn list_files(dir: &Path, ext: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

/// Loads every image in `dir`, in file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, Image2D)>, ImageError> {
    let files = list_files(dir, IMAGE_EXT).map_err(|source| ImageError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    files
        .into_iter()
        .map(|p| Image2D::load(&p).map(|img| (p, img)))
        .collect()
}
