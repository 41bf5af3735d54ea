//! Throwaway raw-kernel throughput probe.

use std::time::Instant;

use denet::kernels::{conv2d_bwd_w, conv2d_bwd_x, conv2d_fwd, matmul_fwd};
use denet::tensor::Real;

fn bench(name: &str, macs: usize, reps: usize, mut f: impl FnMut()) {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    let s = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{name:<28} {:>8.2} ms   {:>6.2} GMAC/s",
        s * 1e3,
        macs as f64 / s / 1e9
    );
}

fn main() {
    // enc.b1.c2 shape: 64 -> 64 channels, 32x32, k3 s1 p1.
    let (cin, cout, h, w, k) = (64usize, 64usize, 32usize, 32usize, 3usize);
    let x: Vec<Real> = (0..cin * h * w).map(|i| (i % 97) as Real * 0.01).collect();
    let wgt: Vec<Real> = (0..cout * cin * k * k).map(|i| (i % 13) as Real * 0.02).collect();
    let mut out = vec![0.0; cout * h * w];
    let macs = cout * h * w * cin * k * k;
    bench("conv 64->64 @32 fwd", macs, 20, || {
        out.iter_mut().for_each(|v| *v = 0.0);
        conv2d_fwd(&x, (cin, h, w), &wgt, (cout, k), 1, 1, &mut out, (h, w));
    });
    let mut dx = vec![0.0; cin * h * w];
    bench("conv 64->64 @32 bwd_x", macs, 20, || {
        dx.iter_mut().for_each(|v| *v = 0.0);
        conv2d_bwd_x(&out, (cin, h, w), &wgt, (cout, k), 1, 1, &mut dx, (h, w));
    });
    let mut dw = vec![0.0; cout * cin * k * k];
    bench("conv 64->64 @32 bwd_w", macs, 20, || {
        dw.iter_mut().for_each(|v| *v = 0.0);
        conv2d_bwd_w(&out, &x, (cin, h, w), (cout, k), 1, 1, &mut dw, (h, w));
    });

    // dec.s1.conv shape: 32 -> 32 channels at 64x64.
    let (cin2, cout2, h2, w2) = (32usize, 32usize, 64usize, 64usize);
    let x2: Vec<Real> = (0..cin2 * h2 * w2).map(|i| (i % 89) as Real * 0.01).collect();
    let w2v: Vec<Real> = (0..cout2 * cin2 * k * k).map(|i| (i % 11) as Real * 0.03).collect();
    let mut out2 = vec![0.0; cout2 * h2 * w2];
    let macs2 = cout2 * h2 * w2 * cin2 * k * k;
    bench("conv 32->32 @64 fwd", macs2, 20, || {
        out2.iter_mut().for_each(|v| *v = 0.0);
        conv2d_fwd(&x2, (cin2, h2, w2), &w2v, (cout2, k), 1, 1, &mut out2, (h2, w2));
    });

    // sem head style matmul: [512,128] x [128,64].
    let (m, kk, n) = (512usize, 128usize, 64usize);
    let a: Vec<Real> = (0..m * kk).map(|i| (i % 7) as Real * 0.1).collect();
    let b: Vec<Real> = (0..kk * n).map(|i| (i % 5) as Real * 0.1).collect();
    let mut o = vec![0.0; m * n];
    bench("matmul 512x128x64", m * kk * n, 50, || {
        o.iter_mut().for_each(|v| *v = 0.0);
        matmul_fwd(&a, &b, &mut o, m, kk, n);
    });

    // big matmul similar to 1x1 conv at 32x32: [64,128] x [128,1024].
    let (m3, k3, n3) = (64usize, 128usize, 1024usize);
    let a3: Vec<Real> = (0..m3 * k3).map(|i| (i % 7) as Real * 0.1).collect();
    let b3: Vec<Real> = (0..k3 * n3).map(|i| (i % 5) as Real * 0.1).collect();
    let mut o3 = vec![0.0; m3 * n3];
    bench("matmul 64x128x1024", m3 * k3 * n3, 50, || {
        o3.iter_mut().for_each(|v| *v = 0.0);
        matmul_fwd(&a3, &b3, &mut o3, m3, k3, n3);
    });
}
