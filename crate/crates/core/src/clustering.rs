//! Unsupervised initialization: k-means over pixel colors and k-medians (l1)
//! over co-support signatures.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{param_err, Result};
use crate::texture::{componentwise_median, l1, SignatureField, TexturalRepresentative};

pub const MAX_ITERATIONS: usize = 100;

/// Result of an alternating clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Objective after the initial assignment and after every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy)]
enum Metric {
    /// Squared Euclidean cost, mean update.
    Means,
    /// l1 cost, median update.
    Medians,
}

impl Metric {
    fn cost(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Means => squared_euclidean(a, b),
            Metric::Medians => l1(a, b),
        }
    }

    fn center<P: AsRef<[f64]>>(self, members: &[&P], dim: usize) -> Vec<f64> {
        match self {
            Metric::Means => {
                let mut sum = vec![0.0; dim];
                for m in members {
                    sum.iter_mut().zip(m.as_ref()).for_each(|(s, v)| *s += v);
                }
                sum.iter_mut().for_each(|s| *s /= members.len() as f64);
                sum
            }
            Metric::Medians => {
                let slices: Vec<&[f64]> = members.iter().map(|m| m.as_ref()).collect();
                componentwise_median(&slices)
            }
        }
    }
}

/// k-means++-style seeding: first center uniform, later ones sampled with
/// probability proportional to the cost to the nearest chosen center.
fn seed_centers<P: AsRef<[f64]>>(points: &[P], k: usize, metric: Metric, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centers = vec![points[first].as_ref().to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| metric.cost(p.as_ref(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].as_ref().to_vec();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(metric.cost(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

/// Reassigns every point to its cheapest center, keeping the current center
/// unless another is strictly cheaper. Returns (objective, changed).
fn assign<P: AsRef<[f64]> + Sync>(
    points: &[P],
    centers: &[Vec<f64>],
    metric: Metric,
    assignments: &mut [usize],
) -> (f64, bool) {
    let results: Vec<(usize, f64, bool)> = points
        .par_iter()
        .zip(assignments.par_iter())
        .map(|(p, &current)| {
            let p = p.as_ref();
            let mut best = current;
            let mut best_cost = metric.cost(p, &centers[current]);
            for (j, c) in centers.iter().enumerate() {
                let cost = metric.cost(p, c);
                if cost < best_cost {
                    best = j;
                    best_cost = cost;
                }
            }
            (best, best_cost, best != current)
        })
        .collect();
    let mut objective = 0.0;
    let mut changed = false;
    for (a, (best, cost, moved)) in assignments.iter_mut().zip(results) {
        *a = best;
        objective += cost;
        changed |= moved;
    }
    (objective, changed)
}

fn alternate<P: AsRef<[f64]> + Sync>(points: &[P], k: usize, seed: u64, metric: Metric, what: &str) -> Result<ClusterFit> {
    if k == 0 {
        return param_err(format!("{what}: cluster count must be at least 1"));
    }
    if k > points.len() {
        return param_err(format!("{what}: {k} clusters requested for {} points", points.len()));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return param_err(format!("{what}: points differ in dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(points, k, metric, &mut rng);
    let mut assignments = vec![0; points.len()];
    let (objective, _) = assign(points, &centers, metric, &mut assignments);
    let mut history = vec![objective];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let previous = (centers.clone(), assignments.clone());
        let mut members: Vec<Vec<&P>> = vec![Vec::new(); k];
        for (p, &a) in points.iter().zip(&assignments) {
            members[a].push(p);
        }
        let mut empty = Vec::new();
        for (j, m) in members.iter().enumerate() {
            if m.is_empty() {
                empty.push(j);
            } else {
                centers[j] = metric.center(m, dim);
            }
        }
        if !empty.is_empty() {
            // farthest points from their own centers, distinct per empty cluster
            let mut cost: Vec<f64> = points
                .iter()
                .zip(&assignments)
                .map(|(p, &a)| metric.cost(p.as_ref(), &centers[a]))
                .collect();
            for j in empty {
                let far = (0..points.len()).fold(0, |b, i| if cost[i] > cost[b] { i } else { b });
                centers[j] = points[far].as_ref().to_vec();
                cost[far] = f64::NEG_INFINITY;
            }
        }
        let (objective, changed) = assign(points, &centers, metric, &mut assignments);
        if objective > history[history.len() - 1] {
            // rounding noise once the exact objective has stalled
            (centers, assignments) = previous;
            break;
        }
        history.push(objective);
        if !changed {
            break;
        }
    }
    Ok(ClusterFit { centers, assignments, objective_history: history, iterations })
}

/// Lloyd's k-means with seeded k-means++ initialization.
pub fn kmeans<P: AsRef<[f64]> + Sync>(points: &[P], k: usize, seed: u64) -> Result<ClusterFit> {
    alternate(points, k, seed, Metric::Means, "k-means")
}

/// k-medians under the l1 distance; centers are component-wise medians.
pub fn kmedians<P: AsRef<[f64]> + Sync>(points: &[P], k: usize, seed: u64) -> Result<ClusterFit> {
    alternate(points, k, seed, Metric::Medians, "k-medians")
}

/// Color and texture prototypes for unsupervised segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub color_centroids: Vec<Vec<f64>>,
    pub texture_representatives: Vec<TexturalRepresentative>,
    /// Per pixel (row-major): (color class, texture class); the texture class
    /// of a flat pixel is `None`.
    pub assignments: Vec<(usize, Option<usize>)>,
}

impl ClusterModel {
    /// Clusters at most `sample_limit` stride-sampled pixels, then assigns
    /// every pixel to its nearest prototypes.
    pub fn fit(
        image: &Array3<f64>,
        signatures: &SignatureField,
        color_classes: usize,
        texture_classes: usize,
        seed: u64,
        sample_limit: usize,
    ) -> Result<Self> {
        let (h, w, d) = image.dim();
        if signatures.dim() != (h, w) {
            return param_err("signature field does not match the image");
        }
        let total = h * w;
        let stride = total.div_ceil(sample_limit.max(1)).max(1);
        let sampled: Vec<usize> = (0..total).step_by(stride).collect();
        let color = |p: usize| -> Vec<f64> { (0..d).map(|ch| image[[p / w, p % w, ch]]).collect() };

        let colors: Vec<Vec<f64>> = sampled.iter().map(|&p| color(p)).collect();
        let color_fit = kmeans(&colors, color_classes, seed)?;

        let mut textured: Vec<&[f64]> = sampled.iter().filter_map(|&p| signatures.get_index(p)).collect();
        if textured.len() < texture_classes {
            // too little texture: let flat pixels take part as all-ones signatures
            textured = sampled.iter().map(|&p| signatures.raw_index(p)).collect();
        }
        let tex_fit = kmedians(&textured, texture_classes, seed)?;
        let mut counts = vec![0; texture_classes];
        for &a in &tex_fit.assignments {
            counts[a] += 1;
        }
        let texture_representatives = tex_fit
            .centers
            .into_iter()
            .zip(counts)
            .map(|(c, m)| TexturalRepresentative::from_parts(c, m))
            .collect::<Vec<_>>();

        let assignments = (0..total)
            .into_par_iter()
            .map(|p| {
                let col = color(p);
                let ci = nearest(&color_fit.centers, |c| squared_euclidean(c, &col));
                let ti = signatures
                    .get_index(p)
                    .map(|s| nearest(&texture_representatives, |r| l1(r.values(), s)));
                (ci, ti)
            })
            .collect();
        Ok(Self { color_centroids: color_fit.centers, texture_representatives, assignments })
    }
}

fn nearest<T>(centers: &[T], cost: impl Fn(&T) -> f64) -> usize {
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let v = cost(c);
        if v < best_cost {
            best = j;
            best_cost = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let fit = kmeans(&pts, 1, 7).unwrap();
        assert!((fit.centers[0][0] - 2.0).abs() < 1e-12);
        assert!((fit.centers[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_median() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0], vec![1.0, 0.5]];
        let fit = kmedians(&pts, 1, 7).unwrap();
        assert_eq!(fit.centers[0], vec![1.5, 2.0]);
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![0.0]; 3];
        assert!(kmeans(&pts, 4, 0).is_err());
        assert!(kmedians(&pts, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_do_not_panic() {
        let pts = vec![vec![0.5, 0.5]; 10];
        let fit = kmeans(&pts, 3, 1).unwrap();
        assert_eq!(fit.assignments.len(), 10);
        assert!(fit.objective_history.iter().all(|o| *o == 0.0));
    }
}
