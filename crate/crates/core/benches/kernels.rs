//! Parallel vs. sequential timings for the hot kernels.
//!
//! With the default `parallel` feature each kernel runs twice: inside a one-thread
//! rayon pool and on the global pool. Build with `--no-default-features` to time the
//! plain sequential code path instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sim2real::metrics::{extract_features, ExtractorKind, FeatureExtractor};
use sim2real::phantom::{
    generate_virtual_subject, sample_population, PopulationSpec, DEFAULT_DIMS, DEFAULT_SPACING,
};
use sim2real::tensor::{Tape, Tensor};
use sim2real::translate::{Generator, GeneratorSpec};
use sim2real::Image2D;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut r))
}

/// Runs `f` under each available execution mode.
fn modes(c: &mut Criterion, name: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        g.bench_function(BenchmarkId::from_parameter("rayon_1_thread"), |b| {
            b.iter(|| single.install(&mut f))
        });
        let label = format!("rayon_global_{}", rayon::current_num_threads());
        g.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(&mut f));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| {
        b.iter(&mut f)
    });
    g.finish();
}

fn conv2d(c: &mut Criterion) {
    let (x, w) = (random(&[4, 16, 64, 64], 1), random(&[32, 16, 3, 3], 2));
    modes(c, "conv2d_forward_backward", || {
        let mut t = Tape::new();
        let (xv, wv) = (t.leaf(x.clone(), true), t.leaf(w.clone(), true));
        let y = t.conv2d(xv, wv, None, 1, 1).unwrap();
        let l = t.sum(y);
        t.backward(l).unwrap();
    });
}

fn generator(c: &mut Criterion) {
    let spec = GeneratorSpec::light();
    let net = Generator::<f32>::new(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let x = Tensor::from_fn(&[1, 1, 128, 128], |i| (i % 97) as f32 / 97.0);
    modes(c, "generator_forward_128", || {
        let mut t = Tape::new();
        let v = net.params.bind(&mut t, false);
        let xv = t.constant(x.clone());
        net.forward(&mut t, &v, xv).unwrap();
    });
}

fn features(c: &mut Criterion) {
    let images: Vec<Image2D> = (0..32)
        .map(|k| {
            Image2D::from_fn(128, 126, |x, y| ((x * 7 + y * 3 + k) % 50) as f32 / 50.0).unwrap()
        })
        .collect();
    let extractor = FeatureExtractor::new(ExtractorKind::RandomConv, 0);
    modes(c, "random_conv_features_32", || {
        extract_features(&images, &extractor).unwrap();
    });
}

fn phantom(c: &mut Criterion) {
    let pop = PopulationSpec {
        count: 1,
        ..PopulationSpec::default()
    };
    let subject = sample_population(&pop, 0).unwrap().remove(0);
    modes(c, "phantom_render", || {
        generate_virtual_subject(&subject, DEFAULT_DIMS, DEFAULT_SPACING).unwrap();
    });
}

criterion_group!(benches, conv2d, generator, features, phantom);
criterion_main!(benches);
