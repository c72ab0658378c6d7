use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces `v` to a scalar through fixed random weights so every output entry
/// carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let w = randn(rng, tape.shape(v));
    let w = tape.constant(w);
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

/// Max over entries of |analytic − numeric| / max(|analytic|, |numeric|, 1e-3),
/// using central differences with ε = 1e-4.
fn grad_check<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let num = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let ana = analytic[i].data()[j];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = randn(&mut rng, &[2, 1, 4, 5]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(xv, w, Some(b), 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn ones_kernel_sums_neighbourhood() {
    let c = 0.37;
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 6, 7], c));
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), [1, 1, 4, 5]);
    for v in tape.value(y).data() {
        assert!((v - 9.0 * c).abs() < 1e-12);
    }
}

#[test]
fn conv_output_extent_rules() {
    assert_eq!(conv_output_extent(64, 4, 2, 1).unwrap(), 32);
    assert_eq!(conv_output_extent(5, 3, 1, 1).unwrap(), 5);
    assert!(matches!(
        conv_output_extent(5, 4, 2, 1),
        Err(TensorError::NonIntegralExtent { .. })
    ));
    assert!(conv_output_extent(2, 5, 1, 0).is_err());
    assert!(conv_output_extent(8, 3, 0, 1).is_err());
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(
        tape.conv2d(x, w, None, 1, 0),
        Err(TensorError::Shape { .. })
    ));
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = randn(&mut rng, &[1, 2, 5, 5]);
    let w = randn(&mut rng, &[3, 2, 3, 3]);
    let b = randn(&mut rng, &[3]);
    let err = grad_check(&[x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(99);
        weighted_sum(t, y, &mut r)
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn conv_crosses_block_boundaries() {
    // 20×20 output positions span several GEMM blocks
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = randn(&mut rng, &[2, 1, 20, 20]);
    let w = randn(&mut rng, &[2, 1, 3, 3]);
    let err = grad_check(&[x.clone(), w.clone()], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        weighted_sum(t, y, &mut r)
    });
    assert!(err < 1e-4, "relative error {err}");

    // direct-loop oracle for the forward pass
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    let out = tape.value(y);
    for s in 0..2 {
        for f in 0..2 {
            for oy in 0..20 {
                for ox in 0..20 {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (oy as isize + ky - 1, ox as isize + kx - 1);
                            if (0..20).contains(&iy) && (0..20).contains(&ix) {
                                acc += x.data()[s * 400 + iy as usize * 20 + ix as usize]
                                    * w.data()[f * 9 + ky as usize * 3 + kx as usize];
                            }
                        }
                    }
                    let got = out.data()[(s * 2 + f) * 400 + oy * 20 + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn leaky_relu_negative_side() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
    let y = tape.leaky_relu(x, 0.2);
    assert_eq!(tape.value(y).data(), &[-0.2, 2.0]);
}

#[test]
fn instance_norm_standardizes_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[2, 3, 6, 5], |i| {
        rng.random_range(-4.0..9.0) + i as f64 * 0.01
    });
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x);
    let y = tape.instance_norm_raw(xv, 1e-5).unwrap();
    for ch in tape.value(y).data().chunks(30) {
        let m = ch.iter().sum::<f64>() / 30.0;
        let v = ch.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 30.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-5, "variance {v}");
    }
    assert!(matches!(
        tape.instance_norm_raw(xv, 0.0),
        Err(TensorError::InvalidArgument { .. })
    ));
}

#[test]
fn sum_and_square_gradients() {
    let x = Tensor::new(&[3], vec![1.5, -2.0, 0.25]).unwrap();
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let s = tape.sum(xv);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(tape.grad(xv).unwrap().data(), &expect[..]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
    tape.zero_grad();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(
        tape.backward(x),
        Err(TensorError::NonScalarLoss(_))
    ));
}

#[test]
fn non_finite_values_set_numeric_state() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::full(&[2], 1e30), true);
    let y = tape.square(x);
    let s = tape.sum(y);
    assert!(matches!(tape.status(), Err(TensorError::Numeric(_))));
    assert!(matches!(tape.backward(s), Err(TensorError::Numeric(_))));
}

#[test]
fn composite_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, &[2, 2, 6, 6]);
    let w = randn(&mut rng, &[3, 2, 3, 3]);
    let gamma = randn(&mut rng, &[3]);
    let beta = randn(&mut rng, &[3]);
    let err = grad_check(&[x, w, gamma, beta], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, 1).unwrap();
        let y = t.instance_norm(y, v[2], v[3], 1e-5).unwrap();
        let y = t.relu(y);
        t.sum(y)
    });
    assert!(err < 1e-4, "relative error {err}");
}

/// One randomized graph per op family; shapes vary with the seed.
fn random_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..3);
    let c = rng.random_range(1..4);
    let h = 2 * rng.random_range(2..4);
    let w = 2 * rng.random_range(2..4);
    let f = rng.random_range(1..4);
    let x = randn(&mut rng, &[n, c, h, w]);
    let k = randn(&mut rng, &[f, c, 4, 4]);
    let kb = randn(&mut rng, &[f]);
    let gamma = randn(&mut rng, &[f]);
    let beta = randn(&mut rng, &[f]);
    let wl = randn(&mut rng, &[5, f]);
    let bl = randn(&mut rng, &[5]);
    let other = randn(&mut rng, &[n, c, h, w]);
    let mut errs = Vec::new();

    errs.push(grad_check(&[x.clone(), k, kb, gamma, beta], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
        let y = t.instance_norm(y, v[3], v[4], 1e-5).unwrap();
        let y = t.leaky_relu(y, 0.2);
        let y = t.upsample_nearest(y, 2).unwrap();
        let y = t.sigmoid(y);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        weighted_sum(t, y, &mut r)
    }));
    errs.push(grad_check(&[x.clone(), other], |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let s = t.sub(a, v[1]).unwrap();
        let m = t.mul(s, v[1]).unwrap();
        let p = t.pad_edge(m, [1, 2, 0, 3]).unwrap();
        let cr = t.crop(p, 1, 1, 3, 4).unwrap();
        let sq = t.square(cr);
        let sc = t.scale(sq, -1.7);
        let sh = t.add_scalar(sc, 0.3);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let ws = weighted_sum(t, sh, &mut r);
        let mean = t.mean(m);
        t.add(ws, mean).unwrap()
    }));
    let positions: Vec<usize> = (0..3).map(|i| (i * 5 + seed as usize) % (h * w)).collect();
    let ff = randn(&mut rng, &[n, f, h, w]);
    errs.push(grad_check(&[ff, wl, bl], |t, v| {
        let g = t.gather_positions(v[0], &positions).unwrap();
        let l = t.linear(g, v[1], Some(v[2])).unwrap();
        let l = t.relu(l);
        let e = t.l2_normalize_rows(l).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 3);
        weighted_sum(t, e, &mut r)
    }));
    let a = randn(&mut rng, &[2 * 3, 4]);
    let b = randn(&mut rng, &[2 * 3, 4]);
    errs.push(grad_check(&[a, b], |t, v| {
        let s = t.group_matmul_nt(v[0], v[1], 3).unwrap();
        let s = t.scale(s, 1.0 / 0.5);
        t.diag_cross_entropy(s).unwrap()
    }));
    errs.into_iter().fold(0.0, f64::max)
}

#[test]
fn every_op_passes_finite_differences_over_seeds() {
    for seed in 0..20 {
        let err = random_case(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn diag_cross_entropy_uniform_is_ln_n() {
    let mut tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::full(&[8, 4], 0.3));
    let ce = tape.diag_cross_entropy(l).unwrap();
    assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![Tensor::new(&[3], vec![1.0f64, -2.0, 3.0]).unwrap()];
    let before = p.clone();
    let mut opt = Adam::new(0.1);
    let g = Tensor::zeros(&[3]);
    opt.step(&mut p, &[Some(&g)]).unwrap();
    opt.step(&mut p, &[None]).unwrap();
    assert_eq!(p, before);
}

#[test]
fn adam_first_step_moves_by_lr() {
    // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps)
    let mut p = vec![Tensor::scalar(1.0f64)];
    let g = Tensor::scalar(1.0);
    let mut opt = Adam::new(0.1);
    opt.step(&mut p, &[Some(&g)]).unwrap();
    let expect = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
    assert!((p[0].item() - expect).abs() < 1e-15);
    assert!((p[0].item() - 0.9).abs() < 1e-6);
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = vec![randn(&mut rng, &[5])];
        let mut opt = Adam::new(0.01);
        for _ in 0..10 {
            let g = randn(&mut rng, &[5]);
            opt.step(&mut p, &[Some(&g)]).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_rejects_shape_change() {
    let mut opt = Adam::<f32>::new(0.1);
    let mut p = vec![Tensor::zeros(&[2])];
    let g = Tensor::zeros(&[3]);
    assert!(opt.step(&mut p, &[Some(&g)]).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let mut ck = Checkpoint::new();
    ck.meta.insert("generator".into(), "{\"base\":8}".into());
    ck.push(
        "g.conv0.w",
        &Tensor::<f32>::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.5),
    );
    ck.push(
        "g.conv0.b",
        &Tensor::<f64>::new(&[2], vec![1.25, -3.0]).unwrap(),
    );
    ck.push("scalar", &Tensor::<f32>::scalar(7.0));
    let bytes = ck.to_bytes().unwrap();
    assert!(bytes.starts_with(b"S2RCKPT1"));
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);

    // payloads are raw f32 LE in manifest order
    let tail = &bytes[bytes.len() - 4..];
    assert_eq!(f32::from_le_bytes(tail.try_into().unwrap()), 7.0);

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    assert!(Checkpoint::from_bytes(b"NOPE").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn f32_and_f64_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = randn(&mut rng, &[1, 2, 8, 8]);
    let w = randn(&mut rng, &[3, 2, 3, 3]);
    let run64 = {
        let mut t = Tape::<f64>::new();
        let (a, b) = (t.constant(x.clone()), t.constant(w.clone()));
        let y = t.conv2d(a, b, None, 1, 1).unwrap();
        t.value(y).clone()
    };
    let mut t = Tape::<f32>::new();
    let (a, b) = (t.constant(x.cast()), t.constant(w.cast()));
    let y = t.conv2d(a, b, None, 1, 1).unwrap();
    for (p, q) in t.value(y).data().iter().zip(run64.data()) {
        assert!((*p as f64 - q).abs() < 1e-5);
    }
}
