//! Synthetic inputs shared by the benchmarks.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coseg::Stroke;

/// Noisy two-color image with a disk in the middle and one stroke per region.
pub fn disk_scene(h: usize, w: usize, seed: u64) -> (Array3<f64>, Array2<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cr, cc, rad) = (h as f64 / 2.0, w as f64 / 2.0, h.min(w) as f64 / 4.0);
    let colors = [[0.2, 0.5, 0.7], [0.6, 0.4, 0.3]];
    let image = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        let inside = (r as f64 - cr).hypot(c as f64 - cc) <= rad;
        colors[usize::from(inside)][ch] + rng.random_range(-0.03..0.03)
    });
    let strokes = [
        Stroke { label: 1, points: vec![[4.0, 4.0], [w as f64 - 5.0, 4.0]], width: 5.0 },
        Stroke { label: 2, points: vec![[cc - rad / 2.0, cr], [cc + rad / 2.0, cr]], width: 5.0 },
    ];
    (image, coseg::strokes::rasterize(&strokes, h, w))
}

/// Uniform random points in `[-1, 1]^dim`.
pub fn points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}
