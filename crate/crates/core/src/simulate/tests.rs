use super::*;
use crate::phantom::Phase;

/// Spoiled steady state by brute-force pulse recursion.
fn spgr_recursion(p: &TissueProperties, tr: f64, te: f64, flip_deg: f64) -> f64 {
    let a = flip_deg.to_radians();
    let e1 = (-tr / p.t1).exp();
    let mut mz = p.pd;
    for _ in 0..200_000 {
        let next = p.pd + (mz * a.cos() - p.pd) * e1;
        if (next - mz).abs() < 1e-16 {
            mz = next;
            break;
        }
        mz = next;
    }
    mz * a.sin() * (-te / p.t2_star).exp()
}

/// Balanced steady state: alternating ±α rotations about x, on resonance.
fn bssfp_recursion(p: &TissueProperties, tr: f64, te: f64, flip_deg: f64) -> f64 {
    let a = flip_deg.to_radians();
    let (e1, e2) = ((-tr / p.t1).exp(), (-tr / p.t2).exp());
    let (mut my, mut mz) = (0.0f64, p.pd);
    let mut last = f64::NAN;
    for k in 0..2_000_000usize {
        let th = if k % 2 == 0 { a } else { -a };
        let (y, z) = (
            my * th.cos() + mz * th.sin(),
            -my * th.sin() + mz * th.cos(),
        );
        let sample = y.abs();
        my = y * e2;
        mz = p.pd + (z - p.pd) * e1;
        if k % 2 == 1 && (sample - last).abs() < 1e-15 {
            return sample * (-te / p.t2).exp();
        }
        last = sample;
    }
    panic!("bSSFP recursion did not converge");
}

fn slice_of(labels: Vec<u8>, nx: usize) -> LabelSlice {
    let ny = labels.len() / nx;
    LabelSlice::new([nx, ny], [1.0, 1.0], Phase::Ed, 0, labels).unwrap()
}

fn spec() -> VirtualSubjectSpec {
    VirtualSubjectSpec {
        subject_id: "s".into(),
        lv_radius_ed: 25.0,
        lv_radius_es: 18.0,
        myo_thickness_ed: 8.0,
        myo_thickness_es: 11.0,
        rv_scale: 1.0,
        global_scale: 1.0,
        seed: 4,
    }
}

#[test]
fn zero_variation_broadcasts_table_values() {
    let table = default_table();
    let s = slice_of(vec![0, 3, 3, 4, 5, 1, 2, 3], 4);
    let maps = assign_tissue_properties(&s, &table, 0.0, 1).unwrap();
    let myo = table[&TissueClass::Myocardium];
    for i in [1, 2, 7] {
        assert_eq!(maps.at(i), myo);
    }
    assert_eq!(maps.pd[0], 0.0);
}

#[test]
fn property_assignment_is_deterministic_and_bounded() {
    let table = default_table();
    let s = slice_of((0..6u8).cycle().take(60).collect(), 10);
    let a = assign_tissue_properties(&s, &table, 0.1, 99).unwrap();
    assert_eq!(a, assign_tissue_properties(&s, &table, 0.1, 99).unwrap());
    assert_ne!(a, assign_tissue_properties(&s, &table, 0.1, 100).unwrap());
    for (i, &l) in s.labels().iter().enumerate() {
        let class = TissueClass::from_id(l).unwrap();
        if class == TissueClass::Background {
            assert_eq!(a.pd[i], 0.0);
            continue;
        }
        let base = table[&class];
        let got = a.at(i);
        for (v, b) in [
            (got.t1, base.t1),
            (got.t2, base.t2),
            (got.t2_star, base.t2_star),
            (got.pd, base.pd),
        ] {
            assert!(v >= 0.9 * b - 1e-12 && v <= 1.1 * b + 1e-12, "{v} vs {b}");
        }
        got.validate(class).unwrap();
    }
}

#[test]
fn missing_table_entry_is_reported() {
    let mut table = default_table();
    table.remove(&TissueClass::Lung);
    let s = slice_of(vec![0, 1, 2, 3], 2);
    assert!(matches!(
        assign_tissue_properties(&s, &table, 0.0, 0),
        Err(SimulateError::UnmappedTissue(2))
    ));
}

#[test]
fn variation_out_of_range_is_rejected() {
    let s = slice_of(vec![0, 1, 2, 3], 2);
    assert!(assign_tissue_properties(&s, &default_table(), 0.31, 0).is_err());
}

#[test]
fn spgr_saturation_recovery_limit() {
    let p = TissueProperties::new(900.0, 60.0, 40.0, 0.83);
    let s = spgr_signal(&p, 100.0 * p.t1, 1e-9, 90.0);
    assert!((s - p.pd).abs() < 1e-10, "{s}");
}

#[test]
fn zero_flip_gives_zero_signal() {
    let p = TissueProperties::new(900.0, 60.0, 40.0, 0.83);
    assert_eq!(spgr_signal(&p, 10.0, 2.0, 0.0), 0.0);
    assert_eq!(bssfp_signal(&p, 3.0, 1.5, 0.0), 0.0);
}

#[test]
fn spgr_matches_bloch_recursion_example() {
    let p = TissueProperties::new(1000.0, 50.0, 50.0, 1.0);
    let oracle = spgr_recursion(&p, 100.0, 5.0, 30.0);
    assert!((oracle - 0.19898).abs() < 1e-4, "oracle {oracle}");
    let s = spgr_signal(&p, 100.0, 5.0, 30.0);
    assert!((s - oracle).abs() < 1e-10);
}

#[test]
fn bssfp_matches_bloch_recursion_example() {
    let p = TissueProperties::new(1200.0, 50.0, 50.0, 1.0);
    let oracle = bssfp_recursion(&p, 3.0, 1.5, 45.0);
    let s = bssfp_signal(&p, 3.0, 1.5, 45.0);
    assert!((s - oracle).abs() / oracle < 1e-3, "{s} vs {oracle}");
}

#[test]
fn bssfp_with_equal_relaxation_reduces_to_substituted_form() {
    let t = 400.0;
    let p = TissueProperties::new(t, t, t, 0.9);
    let (tr, te, flip) = (4.0f64, 2.0f64, 50.0f64);
    let (a, e) = (flip.to_radians(), (-tr / t).exp());
    let expected = 0.9 * a.sin() * (1.0 - e) / (1.0 - e * e) * (-te / t).exp();
    assert!((bssfp_signal(&p, tr, te, flip) - expected).abs() < 1e-14);
}

#[test]
fn spgr_decreases_with_echo_time() {
    let p = TissueProperties::new(950.0, 50.0, 35.0, 0.8);
    let s: Vec<f64> = (1..20)
        .map(|te| spgr_signal(&p, 25.0, te as f64, 20.0))
        .collect();
    assert!(s.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn signal_models_reject_the_other_kind() {
    let s = slice_of(vec![0, 3, 4, 5], 2);
    let maps = assign_tissue_properties(&s, &default_table(), 0.0, 0).unwrap();
    let seq = SequenceParams::default();
    assert!(matches!(
        signal_spgr(&maps, &seq),
        Err(SimulateError::WrongKind(..))
    ));
    let img = signal_bssfp(&maps, &seq).unwrap();
    assert_eq!(img.get(0, 0), 0.0);
    assert!(img.get(1, 0) > 0.0);
}

#[test]
fn sequence_validation() {
    let bad_te = SequenceParams {
        te: 3.0,
        ..Default::default()
    };
    assert!(matches!(
        bad_te.validate(),
        Err(SimulateError::InvalidSequence { field: "te", .. })
    ));
    let bad_flip = SequenceParams {
        flip_deg: 180.0,
        ..Default::default()
    };
    assert!(bad_flip.validate().is_err());
    SequenceParams::default().validate().unwrap();
}

#[test]
fn noiseless_kspace_round_trip() {
    let img = Image2D::from_fn(37, 20, |x, y| ((x * 7 + y * 3) % 11) as f32 / 11.0).unwrap();
    let out = inject_kspace_noise(&img, 0.0, 5).unwrap();
    let worst = img
        .pixels()
        .iter()
        .zip(out.pixels())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(f64::from(worst) < 1e-9);
}

#[test]
fn noise_on_zero_image_is_rayleigh() {
    let zero = Image2D::zeros(128, 128);
    let sd = 0.05;
    let means: Vec<f64> = (0..10)
        .map(|seed| {
            let out = inject_kspace_noise(&zero, sd, seed).unwrap();
            out.pixels().iter().map(|&p| f64::from(p)).sum::<f64>() / (128.0 * 128.0)
        })
        .collect();
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let expected = sd * (std::f64::consts::PI / 2.0).sqrt();
    assert!(
        (mean - expected).abs() / expected < 0.05,
        "{mean} vs {expected}"
    );
}

#[test]
fn noise_is_seeded() {
    let img = Image2D::from_fn(16, 16, |x, _| x as f32).unwrap();
    let a = inject_kspace_noise(&img, 0.03, 8).unwrap();
    assert_eq!(a, inject_kspace_noise(&img, 0.03, 8).unwrap());
    assert_ne!(a, inject_kspace_noise(&img, 0.03, 9).unwrap());
}

#[test]
fn noise_preserves_image_energy() {
    let out = simulate_subject(
        &spec(),
        &SequenceParams {
            noise_sd: 0.0,
            ..Default::default()
        },
        &default_table(),
        0.0,
        &SliceOptions::default(),
    )
    .unwrap();
    let img = &out[0].image;
    let energy = |im: &Image2D| {
        im.pixels()
            .iter()
            .map(|&p| f64::from(p).powi(2))
            .sum::<f64>()
    };
    let e0 = energy(img);
    let mean: f64 = (0..10)
        .map(|s| energy(&inject_kspace_noise(img, 0.05, s).unwrap()))
        .sum::<f64>()
        / 10.0;
    assert!((mean - e0).abs() / e0 < 0.05, "{mean} vs {e0}");
}

#[test]
fn subject_simulation_yields_two_phases_of_slices() {
    let out = simulate_subject(
        &spec(),
        &SequenceParams::default(),
        &default_table(),
        0.05,
        &SliceOptions::default(),
    )
    .unwrap();
    assert_eq!(out.len(), 8);
    assert!(out[..4].iter().all(|s| s.labels.phase() == Phase::Ed));
    assert!(out[4..].iter().all(|s| s.labels.phase() == Phase::Es));
    let meta = &out[5].image.meta;
    assert_eq!(meta.tags["phase"], "ES");
    assert_eq!(meta.history.len(), 4);
}

#[test]
fn noiseless_unperturbed_images_are_piecewise_constant() {
    let seq = SequenceParams {
        noise_sd: 0.0,
        ..Default::default()
    };
    let out = simulate_subject(
        &spec(),
        &seq,
        &default_table(),
        0.0,
        &SliceOptions::default(),
    )
    .unwrap();
    for s in &out {
        let mut seen: [Option<f32>; 6] = [None; 6];
        for (&l, &p) in s.labels.labels().iter().zip(s.image.pixels()) {
            let slot = &mut seen[usize::from(l)];
            match slot {
                Some(v) => assert!((*v - p).abs() < 1e-6),
                None => *slot = Some(p),
            }
        }
    }
}

#[test]
fn subject_simulation_is_reproducible() {
    let run = || {
        simulate_subject(
            &spec(),
            &SequenceParams::default(),
            &default_table(),
            0.1,
            &SliceOptions::default(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}
