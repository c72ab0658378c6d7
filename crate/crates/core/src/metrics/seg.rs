use super::MetricsError;
use crate::phantom::{LabelSlice, TissueClass};

/// Binary mask of one tissue class, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub class: Option<TissueClass>,
    pub pixels: Vec<bool>,
}

impl Mask2D {
    pub fn new(
        dims: [usize; 2],
        spacing: [f64; 2],
        pixels: Vec<bool>,
    ) -> Result<Self, MetricsError> {
        if pixels.len() != dims[0] * dims[1] {
            return Err(MetricsError::MaskDims(dims, [pixels.len(), 1]));
        }
        Ok(Self {
            dims,
            spacing,
            class: None,
            pixels,
        })
    }

    pub fn from_points(dims: [usize; 2], spacing: [f64; 2], points: &[(usize, usize)]) -> Self {
        let mut pixels = vec![false; dims[0] * dims[1]];
        for &(x, y) in points {
            pixels[y * dims[0] + x] = true;
        }
        Self {
            dims,
            spacing,
            class: None,
            pixels,
        }
    }

    pub fn from_labels(labels: &LabelSlice, class: TissueClass) -> Self {
        Self {
            dims: labels.dims(),
            spacing: labels.spacing(),
            class: Some(class),
            pixels: labels.labels().iter().map(|&l| l == class.id()).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.dims[0] + x]
    }
}

fn check_pair(a: &Mask2D, b: &Mask2D) -> Result<(), MetricsError> {
    if a.dims != b.dims {
        return Err(MetricsError::MaskDims(a.dims, b.dims));
    }
    if a.class != b.class {
        return Err(MetricsError::MaskClass);
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)`; 1 when both are empty.
pub fn dice(a: &Mask2D, b: &Mask2D) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    let inter = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .filter(|(x, y)| **x && **y)
        .count();
    let total = a.count() + b.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Mask pixels with a 4-neighbour outside the mask (the image border counts as outside).
pub fn boundary(m: &Mask2D) -> Vec<(usize, usize)> {
    let [nx, ny] = m.dims;
    let mut out = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if !m.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == nx
                || y + 1 == ny
                || !m.get(x - 1, y)
                || !m.get(x + 1, y)
                || !m.get(x, y - 1)
                || !m.get(x, y + 1);
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// Exact 1-D squared distance transform (lower envelope of parabolas) on a grid of
/// pitch `step`; `f` holds squared distances, `INFINITY` for "no site".
fn edt_1d(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let pos = |q: usize| q as f64 * step;
    let cross = |q: usize, v: usize| {
        ((f[q] + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)))
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        while let Some(&last) = v.last() {
            if cross(q, last) <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        z.push(if v.is_empty() {
            f64::NEG_INFINITY
        } else {
            cross(q, *v.last().unwrap())
        });
        v.push(q);
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(p) {
            k += 1;
        }
        let d = pos(p) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every pixel centre to the nearest site.
fn distance_map_sq(dims: [usize; 2], spacing: [f64; 2], sites: &[(usize, usize)]) -> Vec<f64> {
    let [nx, ny] = dims;
    let mut g = vec![f64::INFINITY; nx * ny];
    for &(x, y) in sites {
        g[y * nx + x] = 0.0;
    }
    let mut col = vec![0.0; ny];
    let mut tmp = vec![0.0; ny];
    for x in 0..nx {
        for y in 0..ny {
            col[y] = g[y * nx + x];
        }
        edt_1d(&col, spacing[1], &mut tmp);
        for y in 0..ny {
            g[y * nx + x] = tmp[y];
        }
    }
    let mut row = vec![0.0; nx];
    for y in 0..ny {
        edt_1d(&g[y * nx..(y + 1) * nx], spacing[0], &mut row);
        g[y * nx..(y + 1) * nx].copy_from_slice(&row);
    }
    g
}

fn directed(from: &[(usize, usize)], to_map: &[f64], nx: usize) -> Vec<f64> {
    from.iter()
        .map(|&(x, y)| to_map[y * nx + x].sqrt())
        .collect()
}

/// Nearest-rank percentile of unsorted values.
fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Symmetric boundary Hausdorff distance in mm (the exact maximum).
pub fn hausdorff(a: &Mask2D, b: &Mask2D) -> Result<f64, MetricsError> {
    hausdorff_percentile(a, b, 100.0)
}

/// Max over both directions of the `p`-th percentile of boundary-to-boundary
/// distances; `p = 100` is the classical Hausdorff distance, `p = 95` gives HD95.
pub fn hausdorff_percentile(a: &Mask2D, b: &Mask2D, p: f64) -> Result<f64, MetricsError> {
    check_pair(a, b)?;
    if a.spacing != b.spacing {
        return Err(MetricsError::MaskSpacing(a.spacing, b.spacing));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(MetricsError::Percentile(p));
    }
    let (ba, bb) = (boundary(a), boundary(b));
    if ba.is_empty() || bb.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let da = distance_map_sq(a.dims, a.spacing, &ba);
    let db = distance_map_sq(a.dims, a.spacing, &bb);
    let nx = a.dims[0];
    let ab = percentile(directed(&ba, &db, nx), p);
    let ba_ = percentile(directed(&bb, &da, nx), p);
    Ok(ab.max(ba_))
}
