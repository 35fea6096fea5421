use lut4d::{parallel, BasisLutBank, ContextMap, ImageBuffer, StyleWeights};
use std::time::Instant;

fn main() {
    let (w, h) = (3840usize, 2160usize);
    let bank = BasisLutBank::seeded(4, 17, 2, 0.08, 7).unwrap();
    let alpha = StyleWeights::new(vec![0.25; 4]).unwrap();
    let lut = bank.fuse(&alpha, true).unwrap();
    // Smooth synthetic frame: gradients plus a soft radial highlight,
    // spatially coherent like real footage.
    let content = ImageBuffer::from_fn(w, h, lut4d::ColorSpace::Log, |x, y| {
        let fx = x as f32 / (w - 1) as f32;
        let fy = y as f32 / (h - 1) as f32;
        let dx = fx - 0.5;
        let dy = fy - 0.5;
        let rad = (1.0 - (dx * dx + dy * dy).sqrt()).max(0.0);
        [fx, fy, 0.3 + 0.7 * rad]
    })
    .unwrap();
    let ctx = ContextMap::from_values(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let y = i / w;
                y as f32 / (h - 1) as f32
            })
            .collect(),
    )
    .unwrap();
    let mut out = content.clone();

    for threads in [1usize, 2, 8] {
        parallel::with_threads(threads, || {
            lut.apply_into(&content, &ctx, &mut out).unwrap();
            let n = 8;
            let t0 = Instant::now();
            for _ in 0..n {
                lut.apply_into(&content, &ctx, &mut out).unwrap();
                std::hint::black_box(out.data());
            }
            let dt = t0.elapsed().as_secs_f64() / n as f64;
            println!("threads={threads}: {:.1} ms/frame  {:.2} FPS", dt * 1e3, 1.0 / dt);
        });
    }
}
