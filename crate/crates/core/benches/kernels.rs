//! Hot kernels on a single worker versus the full rayon pool.
//!
//! Build with `--no-default-features` to time the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mwcnn::layers::{conv2d_bwd, conv2d_fwd, he_init, ConvParams, LayerId, Tape};
use mwcnn::tensor::randn;
use mwcnn::wavelet::{dwt2, haar_bank};
use mwcnn::{Rng, Tensor4};

fn pools() -> Vec<(String, Option<rayon::ThreadPool>)> {
    if !cfg!(feature = "parallel") {
        return vec![("sequential".to_string(), None)];
    }
    let mut counts = vec![1, rayon::current_num_threads()];
    counts.dedup();
    let mut out = Vec::new();
    {
        for threads in counts {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            out.push((format!("rayon-{threads}"), Some(pool)));
        }
    }
    out
}

fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn kernels(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x: Tensor4 = randn(&mut rng, 8, 32, 48, 48, 1.0).unwrap();
    let p = ConvParams::new(he_init(&mut rng, [32, 32, 3, 3]).unwrap(), vec![0.0; 32], 1).unwrap();
    let img: Tensor4 = randn(&mut rng, 8, 16, 128, 128, 1.0).unwrap();
    let bank = haar_bank();
    let id = LayerId(0);

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("conv_fwd", &name), &(), |b, _| {
            b.iter(|| run(&pool, || conv2d_fwd(&x, &p, id, None).unwrap()))
        });
        let y = conv2d_fwd(&x, &p, id, None).unwrap();
        g.bench_with_input(BenchmarkId::new("conv_bwd", &name), &(), |b, _| {
            b.iter(|| {
                run(&pool, || {
                    let mut tape = Tape::new();
                    tape.push(id, mwcnn::layers::Saved::Conv { input: x.clone() });
                    conv2d_bwd(&y, &p, id, &mut tape).unwrap()
                })
            })
        });
        g.bench_with_input(BenchmarkId::new("dwt2", &name), &(), |b, _| {
            b.iter(|| run(&pool, || dwt2(&img, &bank).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
