//! Synthetic images with known ground truth.

#![allow(dead_code)]

use ndarray::{Array2, Array3};

/// Two-level stripe profile with period 4.
pub fn stripe(t: usize, low: f64, high: f64) -> f64 {
    if t % 4 < 2 {
        low
    } else {
        high
    }
}

/// 64x64 image of four quadrants: two colors (top/bottom) times two stripe
/// orientations (left/right). The stripes modulate intensity by `amp`.
/// Ground-truth class is the quadrant index `2 * (row half) + (col half)`.
pub fn four_quadrants(amp: f64) -> (Array3<f64>, Array2<usize>) {
    let n = 64;
    let colors = [[0.75, 0.35, 0.3], [0.25, 0.45, 0.7]];
    let truth = Array2::from_shape_fn((n, n), |(r, c)| 2 * usize::from(r >= n / 2) + usize::from(c >= n / 2));
    let image = Array3::from_shape_fn((n, n, 3), |(r, c, ch)| {
        let q = truth[[r, c]];
        let t = if q % 2 == 0 { r } else { c };
        colors[q / 2][ch] + stripe(t, -amp, amp)
    });
    (image, truth)
}

/// Two-region instance with a disk of radius `radius` centered at `center`.
pub fn disk_truth(h: usize, w: usize, center: (f64, f64), radius: f64) -> Array2<usize> {
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (dr, dc) = (r as f64 - center.0, c as f64 - center.1);
        usize::from(dr * dr + dc * dc <= radius * radius)
    })
}

/// Fraction of pixels of each truth class taken by that class's most
/// frequent result label, minimized over classes.
pub fn min_purity(result: &Array2<usize>, truth: &Array2<usize>) -> f64 {
    let classes = truth.iter().copied().max().map_or(0, |m| m + 1);
    (0..classes)
        .map(|t| {
            let mut counts = std::collections::BTreeMap::new();
            let mut total = 0usize;
            for (&a, &b) in result.iter().zip(truth.iter()) {
                if b == t {
                    *counts.entry(a).or_insert(0usize) += 1;
                    total += 1;
                }
            }
            counts.values().copied().max().unwrap_or(0) as f64 / total.max(1) as f64
        })
        .fold(1.0, f64::min)
}

/// Two-region 8-bit image: a disk of one color inside another color, both
/// with uniform integer noise of +-6 levels, plus a scribble stroke in each
/// region (label 1 outside along the top edge, label 2 across the disk).
pub fn two_region(seed: u64, h: usize, w: usize) -> (Array3<f64>, Array2<u8>, Array2<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cr = rng.random_range(0.45..0.6) * h as f64;
    let cc = rng.random_range(0.35..0.65) * w as f64;
    let rad = rng.random_range(0.18..0.28) * h.min(w) as f64;
    let truth = disk_truth(h, w, (cr, cc), rad);
    let colors: [[f64; 3]; 2] = [[51.0, 128.0, 179.0], [153.0, 102.0, 77.0]];
    let image = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        (colors[truth[[r, c]]][ch] + f64::from(rng.random_range(-6i32..=6))) / 255.0
    });
    let strokes = [
        coseg::Stroke { label: 1, points: vec![[4.0, 4.0], [w as f64 - 5.0, 4.0]], width: 5.0 },
        coseg::Stroke { label: 2, points: vec![[cc - rad / 2.0, cr], [cc + rad / 2.0, cr]], width: 5.0 },
    ];
    (image, coseg::strokes::rasterize(&strokes, h, w), truth)
}

/// Period-2 stripes in the quadrant checkerboard with 13 px scribbles in the
/// two top quadrants.
pub fn texture_instance() -> (Array3<f64>, Array2<u8>, Array2<usize>) {
    let n = 64;
    let truth = Array2::from_shape_fn((n, n), |(r, c)| usize::from((r < n / 2) != (c < n / 2)));
    let level = |t: usize| if t.is_multiple_of(2) { 0.3 } else { 0.7 };
    let image = Array3::from_shape_fn((n, n, 3), |(r, c, _)| if truth[[r, c]] == 0 { level(r) } else { level(c) });
    let strokes = [
        coseg::Stroke { label: 1, points: vec![[10.0, 16.0], [22.0, 16.0]], width: 13.0 },
        coseg::Stroke { label: 2, points: vec![[42.0, 16.0], [54.0, 16.0]], width: 13.0 },
    ];
    (image, coseg::strokes::rasterize(&strokes, n, n), truth)
}

/// True when every truth class has a different most frequent result label.
pub fn distinct_majorities(result: &Array2<usize>, truth: &Array2<usize>) -> bool {
    let classes = truth.iter().copied().max().map_or(0, |m| m + 1);
    let majorities: std::collections::BTreeSet<usize> = (0..classes)
        .filter_map(|t| {
            let mut counts = std::collections::BTreeMap::new();
            for (&a, _) in result.iter().zip(truth.iter()).filter(|(_, &b)| b == t) {
                *counts.entry(a).or_insert(0usize) += 1;
            }
            counts.into_iter().max_by_key(|&(_, n)| n).map(|(a, _)| a)
        })
        .collect();
    majorities.len() == classes
}
