//! Label-volume and label-slice files.
//!
//! ```text
//! S2R-LABELS 1            | S2R-LABELSLICE 1
//! dims <nx> <ny> <nz>     | dims <nx> <ny>
//! spacing <sx> <sy> <sz>  | spacing <sx> <sy>
//! phase ED|ES             | phase ED|ES
//!                         | slice_index <z>
//! tissue <id> <name>      (one line per class)
//! ---
//! <one u8 tissue id per voxel, x fastest>
//! ```

use std::fs;
use std::path::Path;

use super::{LabelSlice, LabelVolume, PhantomError, Phase, TissueClass};
use crate::io::{write_atomic, Header, HeaderError};

pub const VOLUME_SCHEMA: &str = "S2R-LABELS 1";
pub const SLICE_SCHEMA: &str = "S2R-LABELSLICE 1";
pub const VOLUME_EXT: &str = "s2rlbl";
pub const SLICE_EXT: &str = "s2rslc";

fn fmt_spacing(s: &[f64]) -> String {
    s.iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn push_tissue_table(h: &mut Header) {
    for c in TissueClass::ALL {
        h.push("tissue", format!("{} {}", c.id(), c.name()));
    }
}

fn check_tissue_table(h: &Header) -> Result<(), PhantomError> {
    for entry in h.get_all("tissue") {
        let bad = || HeaderError::BadValue {
            key: "tissue".into(),
            reason: format!("`{entry}` does not match the tissue table"),
        };
        let (id, name) = entry.split_once(' ').ok_or_else(bad)?;
        let id: u8 = id.parse().map_err(|_| bad())?;
        match TissueClass::from_id(id) {
            Some(c) if c.name() == name.trim() => {}
            _ => return Err(bad().into()),
        }
    }
    Ok(())
}

fn parse_phase(h: &Header) -> Result<Phase, PhantomError> {
    let raw = h.require("phase")?;
    Phase::parse(raw.trim()).ok_or_else(|| {
        HeaderError::BadValue {
            key: "phase".into(),
            reason: format!("`{raw}` is not ED or ES"),
        }
        .into()
    })
}

fn extents<const N: usize>(h: &Header, key: &str) -> Result<[usize; N], PhantomError> {
    let v: Vec<usize> = h.numbers(key)?;
    v.try_into().map_err(|v: Vec<usize>| {
        HeaderError::BadValue {
            key: key.into(),
            reason: format!("expected {N} values, got {}", v.len()),
        }
        .into()
    })
}

fn spacings<const N: usize>(h: &Header) -> Result<[f64; N], PhantomError> {
    let v: Vec<f64> = h.numbers("spacing")?;
    let s: [f64; N] = v.try_into().map_err(|v: Vec<f64>| HeaderError::BadValue {
        key: "spacing".into(),
        reason: format!("expected {N} values, got {}", v.len()),
    })?;
    if let Some(bad) = s.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(HeaderError::BadValue {
            key: "spacing".into(),
            reason: format!("must be positive, got {bad}"),
        }
        .into());
    }
    Ok(s)
}

fn check_payload(expected: usize, payload: &[u8]) -> Result<(), PhantomError> {
    if payload.len() != expected {
        return Err(PhantomError::DimsPayloadMismatch {
            expected,
            got: payload.len(),
        });
    }
    Ok(())
}

pub fn volume_to_bytes(vol: &LabelVolume) -> Vec<u8> {
    let [nx, ny, nz] = vol.dims();
    let mut h = Header::new(VOLUME_SCHEMA);
    h.push("dims", format!("{nx} {ny} {nz}"));
    h.push("spacing", fmt_spacing(&vol.spacing()));
    h.push("phase", vol.phase().as_str());
    push_tissue_table(&mut h);
    h.encode(vol.voxels())
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<LabelVolume, PhantomError> {
    let (h, payload) = Header::decode(bytes)?;
    h.expect_schema(VOLUME_SCHEMA)?;
    let dims: [usize; 3] = extents(&h, "dims")?;
    let spacing: [f64; 3] = spacings(&h)?;
    let phase = parse_phase(&h)?;
    check_tissue_table(&h)?;
    check_payload(dims.iter().product(), payload)?;
    LabelVolume::new(dims, spacing, phase, payload.to_vec())
}

pub fn slice_to_bytes(s: &LabelSlice) -> Vec<u8> {
    let [nx, ny] = s.dims();
    let mut h = Header::new(SLICE_SCHEMA);
    h.push("dims", format!("{nx} {ny}"));
    h.push("spacing", fmt_spacing(&s.spacing()));
    h.push("phase", s.phase().as_str());
    h.push("slice_index", s.slice_index().to_string());
    push_tissue_table(&mut h);
    h.encode(s.labels())
}

pub fn slice_from_bytes(bytes: &[u8]) -> Result<LabelSlice, PhantomError> {
    let (h, payload) = Header::decode(bytes)?;
    h.expect_schema(SLICE_SCHEMA)?;
    let dims: [usize; 2] = extents(&h, "dims")?;
    let spacing: [f64; 2] = spacings(&h)?;
    let phase = parse_phase(&h)?;
    let [slice_index]: [usize; 1] = extents(&h, "slice_index")?;
    check_tissue_table(&h)?;
    check_payload(dims[0] * dims[1], payload)?;
    LabelSlice::new(dims, spacing, phase, slice_index, payload.to_vec())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PhantomError + '_ {
    move |source| PhantomError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_label_volume(vol: &LabelVolume, path: &Path) -> Result<(), PhantomError> {
    write_atomic(path, &volume_to_bytes(vol)).map_err(io_err(path))
}

pub fn load_label_volume(path: &Path) -> Result<LabelVolume, PhantomError> {
    volume_from_bytes(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_label_slice(s: &LabelSlice, path: &Path) -> Result<(), PhantomError> {
    write_atomic(path, &slice_to_bytes(s)).map_err(io_err(path))
}

pub fn load_label_slice(path: &Path) -> Result<LabelSlice, PhantomError> {
    slice_from_bytes(&fs::read(path).map_err(io_err(path))?)
}
