//! Closed-form steady-state signal equations.

use super::{PropertyMaps, SequenceKind, SequenceParams, SimulateError, TissueProperties};
use crate::image::Image2D;

/// Spoiled gradient echo:
/// `pd · sin α · (1 − E1) / (1 − cos α · E1) · exp(−te/T2*)`, `E1 = exp(−tr/T1)`.
pub fn spgr_signal(p: &TissueProperties, tr: f64, te: f64, flip_deg: f64) -> f64 {
    if p.pd == 0.0 {
        return 0.0;
    }
    let alpha = flip_deg.to_radians();
    let e1 = (-tr / p.t1).exp();
    p.pd * alpha.sin() * (1.0 - e1) / (1.0 - alpha.cos() * e1) * (-te / p.t2_star).exp()
}

/// On-resonance balanced SSFP:
/// `pd · sin α · (1 − E1) / (1 − (E1 − E2) cos α − E1 E2) · exp(−te/T2)`.
pub fn bssfp_signal(p: &TissueProperties, tr: f64, te: f64, flip_deg: f64) -> f64 {
    if p.pd == 0.0 {
        return 0.0;
    }
    let alpha = flip_deg.to_radians();
    let e1 = (-tr / p.t1).exp();
    let e2 = (-tr / p.t2).exp();
    p.pd * alpha.sin() * (1.0 - e1) / (1.0 - (e1 - e2) * alpha.cos() - e1 * e2) * (-te / p.t2).exp()
}

fn render(
    props: &PropertyMaps,
    f: impl Fn(&TissueProperties) -> f64,
) -> Result<Image2D, SimulateError> {
    let pixels = (0..props.pd.len())
        .map(|i| f(&props.at(i)) as f32)
        .collect();
    Ok(Image2D::new(props.nx, props.ny, pixels)?)
}

pub fn signal_spgr(props: &PropertyMaps, seq: &SequenceParams) -> Result<Image2D, SimulateError> {
    if seq.kind != SequenceKind::Spgr {
        return Err(SimulateError::WrongKind(SequenceKind::Spgr, seq.kind));
    }
    render(props, |p| spgr_signal(p, seq.tr, seq.te, seq.flip_deg))
}

pub fn signal_bssfp(props: &PropertyMaps, seq: &SequenceParams) -> Result<Image2D, SimulateError> {
    if seq.kind != SequenceKind::Bssfp {
        return Err(SimulateError::WrongKind(SequenceKind::Bssfp, seq.kind));
    }
    render(props, |p| bssfp_signal(p, seq.tr, seq.te, seq.flip_deg))
}
