//! Procedural virtual-subject cardiac anatomy.
//!
//! A subject is an ellipsoidal LV blood pool wrapped in a myocardial shell, an RV
//! crescent hugging the LV epicardium, and two lungs inside an elliptic body
//! cylinder. Only the ED and ES phases are modelled.

mod format;
mod geometry;
mod population;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::HeaderError;

pub use format::{
    load_label_slice, load_label_volume, save_label_slice, save_label_volume, slice_from_bytes,
    slice_to_bytes, volume_from_bytes, volume_to_bytes, SLICE_EXT, VOLUME_EXT,
};
pub use geometry::{generate_virtual_subject, shell_coverage, DEFAULT_DIMS, DEFAULT_SPACING};
pub use population::{sample_population, PopulationSpec, Range};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid subject spec: {field} {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("anatomy out of bounds: {structure} does not fit inside the volume")]
    OutOfBounds { structure: &'static str },
    #[error("invalid label volume: {0}")]
    InvalidVolume(String),
    #[error("insufficient ventricular extent: {requested} slices requested around z={centroid:.2}, {reason}")]
    InsufficientExtent {
        requested: usize,
        centroid: f64,
        reason: String,
    },
    #[error("malformed label header: {0}")]
    MalformedHeader(#[from] HeaderError),
    #[error("dims/payload mismatch: dims need {expected} bytes, payload has {got}")]
    DimsPayloadMismatch { expected: usize, got: usize },
    #[error("unknown tissue id {0}")]
    UnknownTissue(u8),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Tissue label codes. The numeric ids are part of the file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum TissueClass {
    Background = 0,
    Body = 1,
    Lung = 2,
    Myocardium = 3,
    LvBlood = 4,
    RvBlood = 5,
}

impl TissueClass {
    pub const ALL: [TissueClass; 6] = [
        TissueClass::Background,
        TissueClass::Body,
        TissueClass::Lung,
        TissueClass::Myocardium,
        TissueClass::LvBlood,
        TissueClass::RvBlood,
    ];

    /// The three segmented cardiac tissues.
    pub const HEART: [TissueClass; 3] = [
        TissueClass::LvBlood,
        TissueClass::RvBlood,
        TissueClass::Myocardium,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::Body => "body",
            TissueClass::Lung => "lung",
            TissueClass::Myocardium => "myocardium",
            TissueClass::LvBlood => "lv_blood",
            TissueClass::RvBlood => "rv_blood",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn is_heart(self) -> bool {
        matches!(
            self,
            TissueClass::Myocardium | TissueClass::LvBlood | TissueClass::RvBlood
        )
    }
}

impl std::fmt::Display for TissueClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "ES")]
    Es,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ed => "ED",
            Phase::Es => "ES",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ED" => Some(Phase::Ed),
            "ES" => Some(Phase::Es),
            _ => None,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Minimum volume extents.
pub const MIN_DIMS: [usize; 3] = [16, 16, 4];

/// 3D tissue label grid, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    phase: Phase,
    voxels: Vec<u8>,
}

fn check_spacing(spacing: &[f64]) -> Result<(), PhantomError> {
    if let Some(s) = spacing.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(PhantomError::InvalidVolume(format!(
            "spacing must be positive, got {s}"
        )));
    }
    Ok(())
}

fn check_ids(labels: &[u8]) -> Result<(), PhantomError> {
    match labels
        .iter()
        .find(|&&id| TissueClass::from_id(id).is_none())
    {
        Some(&id) => Err(PhantomError::UnknownTissue(id)),
        None => Ok(()),
    }
}

impl LabelVolume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        phase: Phase,
        voxels: Vec<u8>,
    ) -> Result<Self, PhantomError> {
        if dims.iter().zip(MIN_DIMS).any(|(&d, m)| d < m) {
            return Err(PhantomError::InvalidVolume(format!(
                "dims {dims:?} below minimum {MIN_DIMS:?}"
            )));
        }
        check_spacing(&spacing)?;
        let expected = dims.iter().product::<usize>();
        if voxels.len() != expected {
            return Err(PhantomError::DimsPayloadMismatch {
                expected,
                got: voxels.len(),
            });
        }
        check_ids(&voxels)?;
        Ok(Self {
            dims,
            spacing,
            phase,
            voxels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> TissueClass {
        // ids are validated on construction
        TissueClass::from_id(self.voxels[self.index(x, y, z)]).unwrap()
    }

    pub fn count(&self, class: TissueClass) -> usize {
        self.voxels.iter().filter(|&&v| v == class.id()).count()
    }

    /// Axial slice `z`.
    pub fn slice(&self, z: usize) -> LabelSlice {
        let plane = self.dims[0] * self.dims[1];
        LabelSlice {
            dims: [self.dims[0], self.dims[1]],
            spacing: [self.spacing[0], self.spacing[1]],
            phase: self.phase,
            slice_index: z,
            labels: self.voxels[z * plane..(z + 1) * plane].to_vec(),
        }
    }

    /// Same labels with different spacing.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self, PhantomError> {
        check_spacing(&spacing)?;
        Ok(Self {
            spacing,
            ..self.clone()
        })
    }
}

/// 2D axial label slice, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSlice {
    dims: [usize; 2],
    spacing: [f64; 2],
    phase: Phase,
    slice_index: usize,
    labels: Vec<u8>,
}

impl LabelSlice {
    pub fn new(
        dims: [usize; 2],
        spacing: [f64; 2],
        phase: Phase,
        slice_index: usize,
        labels: Vec<u8>,
    ) -> Result<Self, PhantomError> {
        if dims[0] == 0 || dims[1] == 0 {
            return Err(PhantomError::InvalidVolume(format!(
                "slice dims must be positive, got {dims:?}"
            )));
        }
        check_spacing(&spacing)?;
        let expected = dims[0] * dims[1];
        if labels.len() != expected {
            return Err(PhantomError::DimsPayloadMismatch {
                expected,
                got: labels.len(),
            });
        }
        check_ids(&labels)?;
        Ok(Self {
            dims,
            spacing,
            phase,
            slice_index,
            labels,
        })
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn slice_index(&self) -> usize {
        self.slice_index
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> TissueClass {
        TissueClass::from_id(self.labels[y * self.dims[0] + x]).unwrap()
    }

    pub fn count(&self, class: TissueClass) -> usize {
        self.labels.iter().filter(|&&v| v == class.id()).count()
    }

    pub fn contains(&self, class: TissueClass) -> bool {
        self.labels.contains(&class.id())
    }

    /// Classes present, ascending by id.
    pub fn classes_present(&self) -> Vec<TissueClass> {
        let mut seen = [false; 6];
        for &l in &self.labels {
            seen[usize::from(l)] = true;
        }
        TissueClass::ALL
            .into_iter()
            .filter(|c| seen[usize::from(c.id())])
            .collect()
    }
}

/// Parameters of one virtual subject. Lengths in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSubjectSpec {
    pub subject_id: String,
    pub lv_radius_ed: f64,
    pub lv_radius_es: f64,
    pub myo_thickness_ed: f64,
    pub myo_thickness_es: f64,
    pub rv_scale: f64,
    pub global_scale: f64,
    pub seed: u64,
}

impl VirtualSubjectSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let positive = [
            ("lv_radius_ed", self.lv_radius_ed),
            ("lv_radius_es", self.lv_radius_es),
            ("myo_thickness_ed", self.myo_thickness_ed),
            ("myo_thickness_es", self.myo_thickness_es),
            ("rv_scale", self.rv_scale),
            ("global_scale", self.global_scale),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhantomError::InvalidSpec {
                    field,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if self.lv_radius_es >= self.lv_radius_ed {
            return Err(PhantomError::InvalidSpec {
                field: "lv_radius_es",
                reason: format!(
                    "must be below lv_radius_ed ({} >= {})",
                    self.lv_radius_es, self.lv_radius_ed
                ),
            });
        }
        if self.myo_thickness_es < self.myo_thickness_ed {
            return Err(PhantomError::InvalidSpec {
                field: "myo_thickness_es",
                reason: format!(
                    "must be at least myo_thickness_ed ({} < {})",
                    self.myo_thickness_es, self.myo_thickness_ed
                ),
            });
        }
        Ok(())
    }
}

/// LV blood-pool volume in mL.
pub fn lv_volume(vol: &LabelVolume) -> f64 {
    let [sx, sy, sz] = vol.spacing();
    vol.count(TissueClass::LvBlood) as f64 * sx * sy * sz / 1000.0
}

/// `(ED - ES) / ED`.
pub fn ejection_fraction(ed: &LabelVolume, es: &LabelVolume) -> f64 {
    let edv = lv_volume(ed);
    (edv - lv_volume(es)) / edv
}

/// Mean z index of the LV blood pool, `None` without LV blood.
pub fn lv_centroid_z(vol: &LabelVolume) -> Option<f64> {
    let plane = vol.dims[0] * vol.dims[1];
    let lv = TissueClass::LvBlood.id();
    let (sum, count) =
        vol.voxels
            .chunks_exact(plane)
            .enumerate()
            .fold((0u64, 0u64), |(s, c), (z, p)| {
                let k = p.iter().filter(|&&v| v == lv).count() as u64;
                (s + z as u64 * k, c + k)
            });
    (count > 0).then(|| sum as f64 / count as f64)
}

/// The `n` consecutive axial slices whose centre is nearest the LV z-centroid,
/// ties going to the lower z. Slices come back in ascending z.
pub fn extract_midventricular_slices(
    vol: &LabelVolume,
    n: usize,
) -> Result<Vec<LabelSlice>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::InsufficientExtent {
            requested: 0,
            centroid: f64::NAN,
            reason: "at least one slice must be requested".into(),
        });
    }
    let centroid = lv_centroid_z(vol).ok_or_else(|| PhantomError::InsufficientExtent {
        requested: n,
        centroid: f64::NAN,
        reason: "volume has no lv_blood".into(),
    })?;
    let ideal = centroid - (n as f64 - 1.0) / 2.0;
    let start = (ideal - 0.5).ceil();
    let nz = vol.dims[2];
    if start < 0.0 || start as usize + n > nz {
        return Err(PhantomError::InsufficientExtent {
            requested: n,
            centroid,
            reason: format!("window starting at z={start} leaves the volume (nz={nz})"),
        });
    }
    let start = start as usize;
    (start..start + n)
        .map(|z| {
            let s = vol.slice(z);
            if s.contains(TissueClass::LvBlood) && s.contains(TissueClass::Myocardium) {
                Ok(s)
            } else {
                Err(PhantomError::InsufficientExtent {
                    requested: n,
                    centroid,
                    reason: format!("slice z={z} has no lv_blood or myocardium"),
                })
            }
        })
        .collect()
}
