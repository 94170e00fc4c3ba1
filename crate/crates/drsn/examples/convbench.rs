//! Rough throughput probe for the convolution paths at training shapes.

use drsn::deform::{deform_conv2d_backward, deform_conv2d_forward, OffsetField};
use drsn::nn::{conv2d_backward, conv2d_forward, ConvLayer};
use drsn::scalar::Real;
use drsn::{SplitMix64, Tensor4};
use std::time::Instant;

fn bench<R: Real>(label: &str) {
    let mut rng = SplitMix64::new(1);
    let n = 8;
    let mut rand_tensor = |c: usize, lo: f64, hi: f64| {
        Tensor4::<R>::from_vec(
            n,
            c,
            80,
            80,
            (0..n * c * 80 * 80)
                .map(|_| R::from_f64(rng.uniform(lo, hi)))
                .collect(),
        )
        .unwrap()
    };
    let x = rand_tensor(32, -1.0, 1.0);
    let dy = rand_tensor(32, -1.0, 1.0);
    let off = rand_tensor(18, -0.5, 0.5);
    let mut layer = ConvLayer::<R>::glorot(32, 32, 3, 3, &mut rng).unwrap();
    let offsets = OffsetField::new(off, 3, 3).unwrap();

    let iters = 10;
    let time = |f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        for _ in 0..iters {
            f();
        }
        t0.elapsed().as_secs_f64() / iters as f64 * 1e3
    };

    let fwd = time(&mut || {
        std::hint::black_box(conv2d_forward(&x, &layer).unwrap());
    });
    let mut l2 = layer.clone();
    let bwd = time(&mut || {
        std::hint::black_box(conv2d_backward(&x, &mut l2, &dy).unwrap());
    });
    let dfwd = time(&mut || {
        std::hint::black_box(deform_conv2d_forward(&x, &layer, &offsets).unwrap());
    });
    let dbwd = time(&mut || {
        std::hint::black_box(deform_conv2d_backward(&x, &mut layer, &offsets, &dy).unwrap());
    });
    let per_step = 8.0 * (fwd + bwd) + 2.2 * (dfwd + dbwd) + 2.0 * 0.6 * (fwd + bwd);
    println!(
        "{label}: conv {fwd:.0}/{bwd:.0} ms, deform {dfwd:.0}/{dbwd:.0} ms -> ~{:.0} s per 500-step run",
        per_step * 0.5
    );
}

fn main() {
    bench::<f64>("f64");
    bench::<f32>("f32");
}
