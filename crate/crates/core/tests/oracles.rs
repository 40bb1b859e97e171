//! Derived quantities checked against independent hand computations.

mod common;

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use ndarray::{array, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coseg::likelihood::{color_likelihood, squared_distance_transform, texture_posterior, ScribbleSample, RHO_FLOOR};
use coseg::solver::{energy, relaxed_energy};
use coseg::texture::extract_patch;
use coseg::{AnalysisOperator, DataTerm, EdgeMetric, RelaxationState, ScribbleSet, SegConfig, Segmentation, Segmenter};

#[test]
fn default_operator_shape_and_first_atom() {
    let op = AnalysisOperator::default_operator(9, 2.0).unwrap();
    assert_eq!(op.rows(), 162);
    assert_eq!(op.patch_len(), 81);
    // lowest frequency atom: constant across columns, one half cosine down rows
    for r in 0..9 {
        for c in 0..9 {
            let want = (1.0 / 3.0) * (2.0f64 / 9.0).sqrt() * (PI * (2 * r + 1) as f64 / 18.0).cos();
            assert_abs_diff_eq!(op.row(0)[r * 9 + c], want, epsilon = 1e-12);
        }
    }
}

#[test]
fn default_operator_is_orthonormal_and_dc_free() {
    let op = AnalysisOperator::default_operator(9, 2.0).unwrap();
    for i in 0..80 {
        assert_abs_diff_eq!(op.row(i).iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        for j in 0..80 {
            let dot: f64 = op.row(i).iter().zip(op.row(j)).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
    }
    for j in 80..162 {
        let (sign, base) = if j < 160 { (-1.0, j - 80) } else { (1.0, j - 160) };
        for (a, b) in op.row(j).iter().zip(op.row(base)) {
            assert_eq!(*a, sign * b);
        }
    }
}

#[test]
fn edge_metric_on_ramp() {
    // gray ramp of 0.01 per column is 2.55 per column on the 0-255 scale
    let image = Array3::from_shape_fn((4, 6, 3), |(_, c, _)| 0.01 * c as f64);
    let metric = Segmenter::new(SegConfig::supervised()).unwrap().edge_metric(&image).unwrap();
    let g = metric.weights();
    let interior = (-2.55f64 / 5.0).exp() / 10.0;
    for r in 0..4 {
        for c in 0..5 {
            assert_abs_diff_eq!(g[[r, c]], interior, epsilon = 1e-9);
        }
        // forward differences vanish on the last column
        assert_abs_diff_eq!(g[[r, 5]], 0.1, epsilon = 1e-12);
    }
}

#[test]
fn distance_transform_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let seeds = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.1));
        let got = squared_distance_transform(&seeds);
        for ((r, c), d) in got.indexed_iter() {
            let want = seeds
                .indexed_iter()
                .filter(|(_, s)| **s)
                .map(|((sr, sc), _)| (sr as f64 - r as f64).powi(2) + (sc as f64 - c as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(*d, want);
        }
    }
}

#[test]
fn rasterized_stroke_matches_segment_distance() {
    let (a, b, width) = ([3.5, 2.0], [17.0, 11.25], 5.0);
    let mask = coseg::strokes::rasterize(&[coseg::Stroke { label: 2, points: vec![a, b], width }], 16, 20);
    for ((r, c), v) in mask.indexed_iter() {
        let p = [c as f64, r as f64];
        let d = [b[0] - a[0], b[1] - a[1]];
        let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
        let dist = (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1]);
        assert_eq!(*v == 2, dist <= width / 2.0, "pixel ({r}, {c}) at distance {dist}");
    }
}

#[test]
fn color_likelihood_single_sample() {
    let sample = ScribbleSample { pos: (2, 3), color: vec![0.2, 0.4, 0.6], signature: None };
    let set = ScribbleSet { label: 0, samples: vec![sample] };
    let (alpha, sigma) = (1.3, 0.05);
    let color = [0.25, 0.38, 0.61];
    let dc2 = 0.05f64.powi(2) + 0.02f64.powi(2) + 0.01f64.powi(2);
    for (pos, d2) in [((2, 3), 0.0), ((6, 6), 25.0)] {
        let rho = (alpha * f64::sqrt(d2)).max(RHO_FLOOR);
        let want = (-d2 / (2.0 * rho * rho) - dc2 / (2.0 * sigma * sigma)).exp()
            / (2.0 * PI * rho * rho)
            / (2.0 * PI * sigma * sigma).powf(1.5);
        let got = color_likelihood(pos, &color, &set, alpha, sigma).unwrap();
        assert_abs_diff_eq!(got / want, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn texture_posterior_is_softmin() {
    let reps = [vec![0.0, 0.0], vec![1.0, 0.5], vec![0.2, 0.9]];
    let sig = [0.1, 0.3];
    let betas = [0.5, 0.25, 1.0];
    let scores: Vec<f64> = [0.4f64, 1.1, 0.7].iter().zip(&betas).map(|(d, b)| (-d / b).exp()).collect();
    let total: f64 = scores.iter().sum();
    let got = texture_posterior(Some(&sig), &reps, &betas).unwrap();
    for (g, s) in got.iter().zip(&scores) {
        assert_abs_diff_eq!(*g, s / total, epsilon = 1e-12);
    }
    assert_eq!(texture_posterior(None, &reps, &betas).unwrap(), vec![1.0 / 3.0; 3]);
}

fn hand_patch(window: &[f64], side: usize, std: f64) -> Vec<f64> {
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let half = (side / 2) as f64;
    let mut v: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (r, c) = ((i / side) as f64, (i % side) as f64);
            (x - mean) * (-((r - half).powi(2) + (c - half).powi(2)) / (2.0 * std * std)).exp()
        })
        .collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

#[test]
fn patch_matches_hand_computation_inside_and_at_the_border() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gray = Array2::from_shape_fn((10, 11), |_| rng.random::<f64>());
    // interior window
    let window: Vec<f64> = (0..25).map(|i| gray[[3 + i / 5, 4 + i % 5]]).collect();
    let got = extract_patch(&gray, (5, 6), 5, 1.25).unwrap().unwrap();
    for (a, b) in got.values().iter().zip(hand_patch(&window, 5, 1.25)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    // corner window through an explicitly reflected image
    let reflect = |i: isize, n: usize| {
        let i = i.unsigned_abs();
        if i < n { i } else { 2 * n - 2 - i }
    };
    let window: Vec<f64> = (0..25)
        .map(|i| gray[[reflect(i / 5 - 2, 10), reflect(i % 5 - 2, 11)]])
        .collect();
    let got = extract_patch(&gray, (0, 0), 5, 1.25).unwrap().unwrap();
    for (a, b) in got.values().iter().zip(hand_patch(&window, 5, 1.25)) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
}

#[test]
fn energy_of_a_vertical_split() {
    let seg = Segmentation::new(array![[0, 1], [0, 1]], 2).unwrap();
    let data = DataTerm::new(2, 2, 2, vec![0.0, 1.0, 2.0, 0.5, 0.25, 3.0, 4.0, 0.0]).unwrap();
    let metric = EdgeMetric::uniform((2, 2), 1.0).unwrap();
    // data 0 + 0.5 + 0.25 + 0 = 0.75; each indicator has unit jumps at the two
    // left pixels, so the boundary is 2 + 2 and lambda/2 * 4 = 4; two labels
    // at nu = 3 add 6
    assert_abs_diff_eq!(energy(&seg, &data, &metric, 2.0, 3.0).unwrap(), 10.75, epsilon = 1e-12);
    let state = RelaxationState::from_primal(2, 2, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(relaxed_energy(&state, &data, &metric, 2.0, 3.0).unwrap(), 10.75, epsilon = 1e-12);
}

#[test]
fn dice_by_hand() {
    let result = array![[0usize, 0], [1, 1]];
    let truth = array![[0usize, 1], [1, 1]];
    // label 0: 2 * 1 / (2 + 1); label 1: 2 * 2 / (2 + 3)
    let want = (2.0 / 3.0 + 4.0 / 5.0) / 2.0;
    assert_abs_diff_eq!(coseg::dice_score(&result, &truth).unwrap(), want, epsilon = 1e-15);
}

#[test]
fn disk_instances_are_segmented() {
    let segmenter = Segmenter::new(SegConfig { lambda: 100.0, ..SegConfig::supervised() }).unwrap();
    for seed in 0..3 {
        let (image, scribbles, truth) = common::two_region(seed, 48, 48);
        let report = segmenter.segment_supervised(&image, &scribbles).unwrap();
        assert!(coseg::dice_score(report.segmentation.labels(), &truth).unwrap() > 0.97);
    }
}
