use rand::Rng;

use super::{LabelVolume, PhantomError, Phase, TissueClass, VirtualSubjectSpec};
use crate::{par, seed};

/// Volume grid used when a caller does not choose one.
pub const DEFAULT_DIMS: [usize; 3] = [112, 96, 32];
/// mm per voxel for [`DEFAULT_DIMS`].
pub const DEFAULT_SPACING: [f64; 3] = [2.0, 2.0, 4.0];

const LONG_AXIS_RATIO: f64 = 1.45;
const BODY_SEMI_AXES: [f64; 2] = [95.0, 70.0];
const HEART_OFFSET: [f64; 2] = [12.0, -8.0];
const MIN_SHELL_COVERAGE: f64 = 0.95;

/// All lengths in mm, positions relative to the volume corner.
struct Layout {
    body_center: [f64; 2],
    body: [f64; 2],
    lungs: [([f64; 2], [f64; 2]); 2],
    heart: [f64; 3],
    lv: [f64; 2],
    epi: [f64; 2],
    rv_center: [f64; 2],
    rv_dir: [f64; 2],
    rv: [f64; 3],
}

struct Jitter {
    shift: [f64; 2],
    angle: f64,
}

impl Jitter {
    fn draw(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        Self {
            shift: [rng.random_range(-4.0..=4.0), rng.random_range(-4.0..=4.0)],
            angle: rng.random_range(-0.25..=0.25),
        }
    }
}

impl Layout {
    fn new(spec: &VirtualSubjectSpec, phase: Phase, extent: [f64; 3], jitter: &Jitter) -> Self {
        let g = spec.global_scale;
        let (r, t) = match phase {
            Phase::Ed => (spec.lv_radius_ed, spec.myo_thickness_ed),
            Phase::Es => (spec.lv_radius_es, spec.myo_thickness_es),
        };
        let (a, t) = (r * g, t * g);
        let c = LONG_AXIS_RATIO * a;
        let center = [extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0];
        let body = [BODY_SEMI_AXES[0] * g, BODY_SEMI_AXES[1] * g];
        let lung_semi = [0.32 * body[0], 0.6 * body[1]];
        let lungs = [
            ([center[0] - 0.52 * body[0], center[1]], lung_semi),
            ([center[0] + 0.52 * body[0], center[1]], lung_semi),
        ];
        let heart = [
            center[0] + HEART_OFFSET[0] * g + jitter.shift[0],
            center[1] + HEART_OFFSET[1] * g + jitter.shift[1],
            center[2],
        ];
        let epi_r = a + t;
        // RV sits toward -x, rotated by the subject's jitter angle.
        let rv_dir = [-jitter.angle.cos(), -jitter.angle.sin()];
        let rv_center = [
            heart[0] + rv_dir[0] * 0.55 * epi_r,
            heart[1] + rv_dir[1] * 0.55 * epi_r,
        ];
        let rv = [
            spec.rv_scale * 1.05 * epi_r,
            spec.rv_scale * 1.25 * epi_r,
            0.85 * (c + t),
        ];
        Self {
            body_center: [center[0], center[1]],
            body,
            lungs,
            heart,
            lv: [a, c],
            epi: [epi_r, c + t],
            rv_center,
            rv_dir,
            rv,
        }
    }

    fn check_bounds(&self, extent: [f64; 3], spacing: [f64; 3]) -> Result<(), PhantomError> {
        let fits = |lo: [f64; 3], hi: [f64; 3]| {
            (0..3).all(|i| lo[i] >= spacing[i] && hi[i] <= extent[i] - spacing[i])
        };
        let [bx, by] = self.body;
        let [cx, cy] = self.body_center;
        if !fits(
            [cx - bx, cy - by, spacing[2]],
            [cx + bx, cy + by, extent[2] - spacing[2]],
        ) {
            return Err(PhantomError::OutOfBounds { structure: "body" });
        }
        let [h0, h1, h2] = self.heart;
        let [er, ez] = self.epi;
        if !fits([h0 - er, h1 - er, h2 - ez], [h0 + er, h1 + er, h2 + ez]) {
            return Err(PhantomError::OutOfBounds {
                structure: "lv_myocardium",
            });
        }
        let [ux, uy] = self.rv_dir;
        let [au, ap, az] = self.rv;
        let half_x = ((au * ux).powi(2) + (ap * uy).powi(2)).sqrt();
        let half_y = ((au * uy).powi(2) + (ap * ux).powi(2)).sqrt();
        let [rx, ry] = self.rv_center;
        if !fits(
            [rx - half_x, ry - half_y, h2 - az],
            [rx + half_x, ry + half_y, h2 + az],
        ) {
            return Err(PhantomError::OutOfBounds {
                structure: "rv_blood",
            });
        }
        Ok(())
    }

    fn classify(&self, p: [f64; 3]) -> TissueClass {
        let q = [
            p[0] - self.heart[0],
            p[1] - self.heart[1],
            p[2] - self.heart[2],
        ];
        let radial = q[0] * q[0] + q[1] * q[1];
        let zz = q[2] * q[2];
        let [a, c] = self.lv;
        if radial / (a * a) + zz / (c * c) <= 1.0 {
            return TissueClass::LvBlood;
        }
        let [er, ez] = self.epi;
        if radial / (er * er) + zz / (ez * ez) <= 1.0 {
            return TissueClass::Myocardium;
        }
        let d = [p[0] - self.rv_center[0], p[1] - self.rv_center[1]];
        let [ux, uy] = self.rv_dir;
        let along = d[0] * ux + d[1] * uy;
        let perp = -d[0] * uy + d[1] * ux;
        let [au, ap, az] = self.rv;
        if (along / au).powi(2) + (perp / ap).powi(2) + zz / (az * az) <= 1.0 {
            return TissueClass::RvBlood;
        }
        let in_ellipse = |c: [f64; 2], s: [f64; 2]| {
            ((p[0] - c[0]) / s[0]).powi(2) + ((p[1] - c[1]) / s[1]).powi(2) <= 1.0
        };
        if !in_ellipse(self.body_center, self.body) {
            return TissueClass::Background;
        }
        if self.lungs.iter().any(|&(c, s)| in_ellipse(c, s)) {
            TissueClass::Lung
        } else {
            TissueClass::Body
        }
    }
}

fn check_grid(dims: [usize; 3], spacing: [f64; 3]) -> Result<(), PhantomError> {
    if dims.iter().zip(super::MIN_DIMS).any(|(&d, m)| d < m) {
        return Err(PhantomError::InvalidVolume(format!(
            "dims {dims:?} below minimum {:?}",
            super::MIN_DIMS
        )));
    }
    super::check_spacing(&spacing)
}

fn render(layout: &Layout, dims: [usize; 3], spacing: [f64; 3]) -> Vec<u8> {
    let plane = dims[0] * dims[1];
    let mut voxels = vec![0u8; plane * dims[2]];
    par::for_each_chunk_mut(&mut voxels, plane, |z, out| {
        let pz = (z as f64 + 0.5) * spacing[2];
        for (i, v) in out.iter_mut().enumerate() {
            let (x, y) = (i % dims[0], i / dims[0]);
            let p = [
                (x as f64 + 0.5) * spacing[0],
                (y as f64 + 0.5) * spacing[1],
                pz,
            ];
            *v = layout.classify(p).id();
        }
    });
    voxels
}

/// Generates the ED and ES label volumes of one subject.
///
/// Pure in `(spec, dims, spacing)`; the spec's seed only drives a small in-plane
/// shift of the heart and the RV orientation, shared by both phases.
pub fn generate_virtual_subject(
    spec: &VirtualSubjectSpec,
    dims: [usize; 3],
    spacing: [f64; 3],
) -> Result<(LabelVolume, LabelVolume), PhantomError> {
    spec.validate()?;
    check_grid(dims, spacing)?;
    let extent = [
        dims[0] as f64 * spacing[0],
        dims[1] as f64 * spacing[1],
        dims[2] as f64 * spacing[2],
    ];
    let jitter = Jitter::draw(spec.seed);
    let mut out = Vec::with_capacity(2);
    for phase in [Phase::Ed, Phase::Es] {
        let layout = Layout::new(spec, phase, extent, &jitter);
        layout.check_bounds(extent, spacing)?;
        let vol = LabelVolume {
            dims,
            spacing,
            phase,
            voxels: render(&layout, dims, spacing),
        };
        let coverage = shell_coverage(&vol);
        if coverage < MIN_SHELL_COVERAGE {
            return Err(PhantomError::InvalidSpec {
                field: match phase {
                    Phase::Ed => "myo_thickness_ed",
                    Phase::Es => "myo_thickness_es",
                },
                reason: format!(
                    "myocardial shell covers only {:.1}% of the LV boundary at this spacing",
                    100.0 * coverage
                ),
            });
        }
        out.push(vol);
    }
    let es = out.pop().unwrap();
    let ed = out.pop().unwrap();
    Ok((ed, es))
}

/// Fraction of LV blood boundary voxels (6-neighbourhood) with a myocardium neighbour.
/// Returns 1 when there is no LV blood.
pub fn shell_coverage(vol: &LabelVolume) -> f64 {
    let [nx, ny, nz] = vol.dims();
    let lv = TissueClass::LvBlood.id();
    let myo = TissueClass::Myocardium.id();
    let v = vol.voxels();
    let (mut boundary, mut touching) = (0usize, 0usize);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if v[vol.index(x, y, z)] != lv {
                    continue;
                }
                let mut neighbours = [None; 6];
                if x > 0 {
                    neighbours[0] = Some(vol.index(x - 1, y, z));
                }
                if x + 1 < nx {
                    neighbours[1] = Some(vol.index(x + 1, y, z));
                }
                if y > 0 {
                    neighbours[2] = Some(vol.index(x, y - 1, z));
                }
                if y + 1 < ny {
                    neighbours[3] = Some(vol.index(x, y + 1, z));
                }
                if z > 0 {
                    neighbours[4] = Some(vol.index(x, y, z - 1));
                }
                if z + 1 < nz {
                    neighbours[5] = Some(vol.index(x, y, z + 1));
                }
                let on_boundary = neighbours.iter().any(|n| n.is_none_or(|i| v[i] != lv));
                if on_boundary {
                    boundary += 1;
                    if neighbours.iter().flatten().any(|&i| v[i] == myo) {
                        touching += 1;
                    }
                }
            }
        }
    }
    if boundary == 0 {
        1.0
    } else {
        touching as f64 / boundary as f64
    }
}
