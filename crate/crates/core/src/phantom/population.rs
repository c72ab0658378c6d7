use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PhantomError, VirtualSubjectSpec};
use crate::seed;

/// Closed sampling interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

/// Uniform ranges the virtual-subject parameters are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub count: usize,
    pub lv_radius_ed: Range,
    pub lv_radius_es: Range,
    pub myo_thickness_ed: Range,
    pub myo_thickness_es: Range,
    pub rv_scale: Range,
    pub global_scale: Range,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            count: 16,
            lv_radius_ed: Range::new(22.0, 28.0),
            lv_radius_es: Range::new(15.0, 19.0),
            myo_thickness_ed: Range::new(7.0, 9.0),
            myo_thickness_es: Range::new(10.0, 13.0),
            rv_scale: Range::new(0.85, 1.1),
            global_scale: Range::new(0.9, 1.1),
        }
    }
}

impl PopulationSpec {
    /// Checks that every draw yields a valid subject.
    pub fn validate(&self) -> Result<(), PhantomError> {
        let ranges = [
            ("lv_radius_ed", self.lv_radius_ed),
            ("lv_radius_es", self.lv_radius_es),
            ("myo_thickness_ed", self.myo_thickness_ed),
            ("myo_thickness_es", self.myo_thickness_es),
            ("rv_scale", self.rv_scale),
            ("global_scale", self.global_scale),
        ];
        for (field, r) in ranges {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo > 0.0 && r.hi >= r.lo) {
                return Err(PhantomError::InvalidSpec {
                    field,
                    reason: format!("range must satisfy 0 < lo <= hi, got [{}, {}]", r.lo, r.hi),
                });
            }
        }
        if self.lv_radius_es.hi >= self.lv_radius_ed.lo {
            return Err(PhantomError::InvalidSpec {
                field: "lv_radius_es",
                reason: "range must lie strictly below lv_radius_ed".into(),
            });
        }
        if self.myo_thickness_es.lo < self.myo_thickness_ed.hi {
            return Err(PhantomError::InvalidSpec {
                field: "myo_thickness_es",
                reason: "range must not dip below myo_thickness_ed".into(),
            });
        }
        if self.count == 0 {
            return Err(PhantomError::InvalidSpec {
                field: "count",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Draws `spec.count` subjects. Subject `i` depends only on `(master_seed, i)`.
pub fn sample_population(
    spec: &PopulationSpec,
    master_seed: u64,
) -> Result<Vec<VirtualSubjectSpec>, PhantomError> {
    spec.validate()?;
    Ok((0..spec.count)
        .map(|i| {
            let mut rng = seed::stream(master_seed, "phantom.population", i as u64);
            VirtualSubjectSpec {
                subject_id: format!("subj-{i:03}"),
                lv_radius_ed: spec.lv_radius_ed.sample(&mut rng),
                lv_radius_es: spec.lv_radius_es.sample(&mut rng),
                myo_thickness_ed: spec.myo_thickness_ed.sample(&mut rng),
                myo_thickness_es: spec.myo_thickness_es.sample(&mut rng),
                rv_scale: spec.rv_scale.sample(&mut rng),
                global_scale: spec.global_scale.sample(&mut rng),
                seed: seed::derive_seed(master_seed, "phantom.subject", i as u64),
            }
        })
        .collect())
}
