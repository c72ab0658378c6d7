use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    dice, extract_features, frechet_distance, gaussian_stats, hausdorff, FeatureExtractor,
    FeatureStats, Mask2D, MetricsError,
};
use crate::image::{load_dir, Image2D};
use crate::phantom::{load_label_slice, LabelSlice, TissueClass, SLICE_EXT};

pub const MIN_REALISM_IMAGES: usize = 10;
pub const REALISM_HEADER: &str = "comparison,fid,n_a,n_b,extractor";
pub const SEG_HEADER: &str = "case,class,dice,hausdorff_mm";

#[derive(Debug, Clone, PartialEq)]
pub struct RealismRow {
    /// `sim_vs_real` or `translated_vs_real`.
    pub comparison: String,
    pub fid: f64,
    pub n_a: usize,
    pub n_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealismReport {
    pub extractor: String,
    pub rows: Vec<RealismRow>,
}

impl RealismReport {
    pub fn fid(&self, comparison: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.comparison == comparison)
            .map(|r| r.fid)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REALISM_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.comparison, r.fid, r.n_a, r.n_b, self.extractor
            )
            .unwrap();
        }
        s
    }
}

fn stats(images: &[Image2D], ex: &FeatureExtractor) -> Result<FeatureStats, MetricsError> {
    Ok(gaussian_stats(&extract_features(images, ex)?)?.with_extractor(ex.id()))
}

/// FID(sim, real) and, when given, FID(translated, real) under one extractor.
pub fn evaluate_realism(
    sim: &[Image2D],
    real: &[Image2D],
    translated: Option<&[Image2D]>,
    extractor: &FeatureExtractor,
) -> Result<RealismReport, MetricsError> {
    let mut sets = vec![("sim", sim), ("real", real)];
    sets.extend(translated.map(|t| ("translated", t)));
    let mut dims = None;
    for (name, set) in &sets {
        if set.len() < MIN_REALISM_IMAGES {
            return Err(MetricsError::TooFewImages {
                dir: PathBuf::from(name),
                found: set.len(),
                needed: MIN_REALISM_IMAGES,
            });
        }
        for img in set.iter() {
            let d = *dims.get_or_insert(img.dims());
            if img.dims() != d {
                return Err(MetricsError::ImageDims {
                    expected: d,
                    found: img.dims(),
                });
            }
        }
    }
    let real_stats = stats(real, extractor)?;
    let mut rows = vec![RealismRow {
        comparison: "sim_vs_real".into(),
        fid: frechet_distance(&stats(sim, extractor)?, &real_stats)?,
        n_a: sim.len(),
        n_b: real.len(),
    }];
    if let Some(t) = translated {
        rows.push(RealismRow {
            comparison: "translated_vs_real".into(),
            fid: frechet_distance(&stats(t, extractor)?, &real_stats)?,
            n_a: t.len(),
            n_b: real.len(),
        });
    }
    Ok(RealismReport {
        extractor: extractor.id(),
        rows,
    })
}

fn load_images(dir: &Path) -> Result<Vec<Image2D>, MetricsError> {
    let images: Vec<Image2D> = load_dir(dir)?.into_iter().map(|(_, i)| i).collect();
    if images.len() < MIN_REALISM_IMAGES {
        return Err(MetricsError::TooFewImages {
            dir: dir.to_path_buf(),
            found: images.len(),
            needed: MIN_REALISM_IMAGES,
        });
    }
    Ok(images)
}

pub fn evaluate_realism_dirs(
    sim_dir: &Path,
    real_dir: &Path,
    translated_dir: Option<&Path>,
    extractor: &FeatureExtractor,
) -> Result<RealismReport, MetricsError> {
    let sim = load_images(sim_dir)?;
    let real = load_images(real_dir)?;
    let translated = translated_dir.map(load_images).transpose()?;
    evaluate_realism(&sim, &real, translated.as_deref(), extractor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegRow {
    pub case: String,
    pub class: TissueClass,
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hausdorff_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub rows: Vec<SegRow>,
}

impl SegReport {
    /// Mean Dice and mean defined HD per heart class.
    pub fn class_means(&self) -> Vec<(TissueClass, f64, Option<f64>)> {
        TissueClass::HEART
            .into_iter()
            .map(|c| {
                let rows: Vec<&SegRow> = self.rows.iter().filter(|r| r.class == c).collect();
                let dice = rows.iter().map(|r| r.dice).sum::<f64>() / rows.len().max(1) as f64;
                let hd: Vec<f64> = rows.iter().filter_map(|r| r.hausdorff_mm).collect();
                let hd = (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64);
                (c, dice, hd)
            })
            .collect()
    }

    /// One row per (case, class), then `mean` rows; undefined HD is written as `NA`.
    pub fn to_csv(&self) -> String {
        let hd = |v: Option<f64>| v.map_or("NA".to_string(), |v| v.to_string());
        let mut s = format!("{SEG_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{}",
                r.case,
                r.class.name(),
                r.dice,
                hd(r.hausdorff_mm)
            )
            .unwrap();
        }
        for (c, d, h) in self.class_means() {
            writeln!(s, "mean,{},{},{}", c.name(), d, hd(h)).unwrap();
        }
        s
    }
}

/// Dice and HD for the three heart classes of each `(case, prediction, truth)`.
pub fn evaluate_segmentation(
    cases: &[(String, LabelSlice, LabelSlice)],
) -> Result<SegReport, MetricsError> {
    let mut rows = Vec::new();
    for (case, pred, gt) in cases {
        for class in TissueClass::HEART {
            let (p, g) = (
                Mask2D::from_labels(pred, class),
                Mask2D::from_labels(gt, class),
            );
            if p.spacing != g.spacing {
                return Err(MetricsError::MaskSpacing(p.spacing, g.spacing));
            }
            let hd = if p.count() > 0 && g.count() > 0 {
                Some(hausdorff(&p, &g)?)
            } else {
                None
            };
            rows.push(SegRow {
                case: case.clone(),
                class,
                dice: dice(&p, &g)?,
                hausdorff_mm: hd,
            });
        }
    }
    Ok(SegReport { rows })
}

/// Pairs label slices by file name; ground truths without a prediction are skipped.
pub fn evaluate_segmentation_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
) -> Result<SegReport, MetricsError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MetricsError::Io { path, source }
    };
    let mut cases = Vec::new();
    for gt_path in crate::image::list_files(gt_dir, SLICE_EXT).map_err(io(gt_dir))? {
        let name = gt_path.file_name().unwrap();
        let pred_path = pred_dir.join(name);
        if !pred_path.is_file() {
            continue;
        }
        let case = gt_path.file_stem().unwrap().to_string_lossy().into_owned();
        cases.push((
            case,
            load_label_slice(&pred_path)?,
            load_label_slice(&gt_path)?,
        ));
    }
    if cases.is_empty() {
        return Err(MetricsError::NoPairs(pred_dir.to_path_buf()));
    }
    evaluate_segmentation(&cases)
}
