//! Label slices to MR-contrast images via analytical steady-state signal models.

mod kspace;
mod signal;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image2D, ImageError};
use crate::phantom::{self, LabelSlice, PhantomError, TissueClass, VirtualSubjectSpec};
use crate::{par, seed};

pub use kspace::{fft2, ifft2, inject_kspace_noise};
pub use signal::{bssfp_signal, signal_bssfp, signal_spgr, spgr_signal};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("unmapped tissue class {0}")]
    UnmappedTissue(u8),
    #[error("invalid tissue properties for {class}: {reason}")]
    InvalidProperties { class: TissueClass, reason: String },
    #[error("invalid sequence parameter {field}: {reason}")]
    InvalidSequence { field: &'static str, reason: String },
    #[error("variation_pct must lie in [0, 0.3], got {0}")]
    InvalidVariation(f64),
    #[error("noise_sd must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("{0} signal model called with a {1} sequence")]
    WrongKind(SequenceKind, SequenceKind),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Relaxation times in ms, proton density relative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueProperties {
    pub t1: f64,
    pub t2: f64,
    pub t2_star: f64,
    pub pd: f64,
}

impl TissueProperties {
    pub const fn new(t1: f64, t2: f64, t2_star: f64, pd: f64) -> Self {
        Self {
            t1,
            t2,
            t2_star,
            pd,
        }
    }

    pub fn validate(&self, class: TissueClass) -> Result<(), SimulateError> {
        let bad = |reason: String| SimulateError::InvalidProperties { class, reason };
        let all_finite = [self.t1, self.t2, self.t2_star, self.pd]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(bad("values must be finite".into()));
        }
        if !(self.t2_star > 0.0 && self.t2_star <= self.t2 && self.t2 <= self.t1) {
            return Err(bad(format!(
                "need 0 < t2* <= t2 <= t1, got t1={} t2={} t2*={}",
                self.t1, self.t2, self.t2_star
            )));
        }
        if !(self.pd > 0.0 && self.pd <= 1.2) {
            return Err(bad(format!("pd must lie in (0, 1.2], got {}", self.pd)));
        }
        Ok(())
    }
}

/// Tissue class to properties. Background is never looked up (its pd is 0).
pub type PropertyTable = BTreeMap<TissueClass, TissueProperties>;

/// Literature-typical 1.5 T values.
pub fn default_table() -> PropertyTable {
    let blood = TissueProperties::new(1550.0, 240.0, 180.0, 0.95);
    BTreeMap::from([
        (
            TissueClass::Body,
            TissueProperties::new(600.0, 60.0, 40.0, 0.7),
        ),
        (
            TissueClass::Lung,
            TissueProperties::new(1200.0, 40.0, 5.0, 0.2),
        ),
        (
            TissueClass::Myocardium,
            TissueProperties::new(950.0, 50.0, 35.0, 0.8),
        ),
        (TissueClass::LvBlood, blood),
        (TissueClass::RvBlood, blood),
    ])
}

pub fn validate_table(table: &PropertyTable) -> Result<(), SimulateError> {
    table.iter().try_for_each(|(c, p)| p.validate(*c))
}

/// Per-pixel property maps, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyMaps {
    pub nx: usize,
    pub ny: usize,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t2_star: Vec<f64>,
    pub pd: Vec<f64>,
}

impl PropertyMaps {
    pub fn at(&self, i: usize) -> TissueProperties {
        TissueProperties::new(self.t1[i], self.t2[i], self.t2_star[i], self.pd[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceKind {
    #[serde(rename = "SPGR")]
    Spgr,
    #[serde(rename = "bSSFP")]
    Bssfp,
}

impl std::fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SequenceKind::Spgr => "SPGR",
            SequenceKind::Bssfp => "bSSFP",
        })
    }
}

/// Sequence timing in ms, flip angle in degrees, noise as a fraction of peak signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceParams {
    pub kind: SequenceKind,
    pub tr: f64,
    pub te: f64,
    pub flip_deg: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        Self {
            kind: SequenceKind::Bssfp,
            tr: 3.0,
            te: 1.5,
            flip_deg: 45.0,
            noise_sd: 0.02,
            seed: 0,
        }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if !(self.te > 0.0 && self.te < self.tr && self.tr.is_finite()) {
            return Err(SimulateError::InvalidSequence {
                field: "te",
                reason: format!("need 0 < te < tr, got te={} tr={}", self.te, self.tr),
            });
        }
        if !(self.flip_deg > 0.0 && self.flip_deg < 180.0) {
            return Err(SimulateError::InvalidSequence {
                field: "flip_deg",
                reason: format!("need 0 < flip < 180, got {}", self.flip_deg),
            });
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SimulateError::InvalidNoise(self.noise_sd));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "{} tr={} te={} flip={}",
            self.kind, self.tr, self.te, self.flip_deg
        )
    }
}

/// Expands labels to property maps. Each class in the table is perturbed once by
/// independent uniform factors in `[1 - v, 1 + v]` (drawn in ascending class order,
/// four per class: t1, t2, t2*, pd); background always gets pd = 0.
pub fn assign_tissue_properties(
    slice: &LabelSlice,
    table: &PropertyTable,
    variation_pct: f64,
    seed: u64,
) -> Result<PropertyMaps, SimulateError> {
    if !(0.0..=0.3).contains(&variation_pct) {
        return Err(SimulateError::InvalidVariation(variation_pct));
    }
    for c in slice.classes_present() {
        if c != TissueClass::Background && !table.contains_key(&c) {
            return Err(SimulateError::UnmappedTissue(c.id()));
        }
    }
    let mut rng = seed::rng(seed);
    let mut factor = || {
        if variation_pct > 0.0 {
            rng.random_range(1.0 - variation_pct..=1.0 + variation_pct)
        } else {
            1.0
        }
    };
    let mut lut = [TissueProperties::new(0.0, 0.0, 0.0, 0.0); 6];
    for (&class, base) in table {
        let t1 = base.t1 * factor();
        let t2 = (base.t2 * factor()).min(t1);
        let t2_star = (base.t2_star * factor()).min(t2);
        let pd = (base.pd * factor()).min(1.2);
        lut[usize::from(class.id())] = TissueProperties::new(t1, t2, t2_star, pd);
    }
    lut[0] = TissueProperties::new(0.0, 0.0, 0.0, 0.0);

    let [nx, ny] = slice.dims();
    let n = nx * ny;
    let mut maps = PropertyMaps {
        nx,
        ny,
        t1: Vec::with_capacity(n),
        t2: Vec::with_capacity(n),
        t2_star: Vec::with_capacity(n),
        pd: Vec::with_capacity(n),
    };
    for &l in slice.labels() {
        let p = lut[usize::from(l)];
        maps.t1.push(p.t1);
        maps.t2.push(p.t2);
        maps.t2_star.push(p.t2_star);
        maps.pd.push(p.pd);
    }
    Ok(maps)
}

/// Dispatches on `seq.kind`.
pub fn signal(props: &PropertyMaps, seq: &SequenceParams) -> Result<Image2D, SimulateError> {
    match seq.kind {
        SequenceKind::Spgr => signal_spgr(props, seq),
        SequenceKind::Bssfp => signal_bssfp(props, seq),
    }
}

/// Slicing and grid choices for [`simulate_subject`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceOptions {
    pub n_slices: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Default for SliceOptions {
    fn default() -> Self {
        Self {
            n_slices: 4,
            dims: phantom::DEFAULT_DIMS,
            spacing: phantom::DEFAULT_SPACING,
        }
    }
}

/// A simulated image with the labels it was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSlice {
    pub image: Image2D,
    pub labels: LabelSlice,
}

/// Runs one label slice through properties, signal and noise. Random streams come
/// from `(seq.seed, stage/subject/phase, slice_index)`.
pub fn simulate_slice(
    subject_id: &str,
    labels: &LabelSlice,
    seq: &SequenceParams,
    table: &PropertyTable,
    variation_pct: f64,
) -> Result<Image2D, SimulateError> {
    let tag = format!("{subject_id}/{}", labels.phase());
    let idx = labels.slice_index() as u64;
    let props_seed = seed::derive_seed(seq.seed, &format!("simulate.props/{tag}"), idx);
    let noise_seed = seed::derive_seed(seq.seed, &format!("simulate.noise/{tag}"), idx);
    let props = assign_tissue_properties(labels, table, variation_pct, props_seed)?;
    let img = signal(&props, seq)?;
    let img = inject_kspace_noise(&img, seq.noise_sd, noise_seed)?;
    Ok(img
        .tag("subject", subject_id)
        .tag("phase", labels.phase().as_str())
        .tag("slice", labels.slice_index().to_string())
        .tag("sequence", seq.describe())
        .record(format!("phantom {subject_id} {}", labels.phase()))
        .record(format!("properties variation={variation_pct}"))
        .record(format!("signal {}", seq.describe()))
        .record(format!("kspace_noise sd={}", seq.noise_sd)))
}

/// generate -> slice -> properties -> signal -> noise, for both phases.
/// Returns ED slices first, then ES, each in ascending z.
pub fn simulate_subject(
    spec: &VirtualSubjectSpec,
    seq: &SequenceParams,
    table: &PropertyTable,
    variation_pct: f64,
    opts: &SliceOptions,
) -> Result<Vec<SimulatedSlice>, SimulateError> {
    seq.validate()?;
    validate_table(table)?;
    let (ed, es) = phantom::generate_virtual_subject(spec, opts.dims, opts.spacing)?;
    let mut labels = phantom::extract_midventricular_slices(&ed, opts.n_slices)?;
    labels.extend(phantom::extract_midventricular_slices(&es, opts.n_slices)?);
    par::map_slice(&labels, |l| {
        simulate_slice(&spec.subject_id, l, seq, table, variation_pct).map(|image| SimulatedSlice {
            image,
            labels: l.clone(),
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests;
