//! End-to-end segmentation: signatures, data term, solver, binarization.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{dim_err, Error, Result};
use crate::likelihood::{
    build_data_term_supervised, build_data_term_unsupervised, DataTerm, ScribbleSet, SupervisedParams,
    TextureTemperature, UnsupervisedParams,
};
use crate::operator::AnalysisOperator;
use crate::solver::{binarize, energy, optimality_gap, solve, EdgeMetric, GammaMode, Segmentation, SolverParams};
use crate::texture::{to_gray, PatchExtractor, SignatureField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Supervised,
    Unsupervised,
}

/// Every tunable of the pipeline. Missing fields deserialize to the
/// supervised defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegConfig {
    pub mode: Mode,
    pub patch_side: usize,
    pub overcompleteness: f64,
    /// Co-support smoothing `sigma`.
    pub sigma_tex: f64,
    /// Gaussian patch mask std in pixels; `None` means `patch_side / 4`.
    pub mask_std: Option<f64>,
    pub sigma_color: f64,
    pub alpha: f64,
    pub beta0: f64,
    pub temperature: TextureTemperature,
    /// Edge metric gamma on the 0-255 intensity scale.
    pub gamma: f64,
    /// Use the mean gradient magnitude as gamma instead of `gamma`.
    pub mean_gamma: bool,
    pub lambda: f64,
    pub nu: f64,
    pub color_classes: usize,
    pub texture_classes: usize,
    pub max_classes: usize,
    pub beta_color: f64,
    /// Unsupervised texture temperature; `None` means `k / 20`.
    pub beta_tex: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub use_texture: bool,
    pub max_scribble_samples: usize,
    pub cluster_sample_limit: usize,
}

impl SegConfig {
    pub fn supervised() -> Self {
        Self {
            mode: Mode::Supervised,
            patch_side: 9,
            overcompleteness: 2.0,
            sigma_tex: 0.01,
            mask_std: None,
            sigma_color: 1.3 / 255.0,
            alpha: 1.3,
            beta0: 0.05,
            temperature: TextureTemperature::SharedMean,
            gamma: 5.0,
            mean_gamma: false,
            lambda: 2000.0,
            nu: 0.0,
            color_classes: 4,
            texture_classes: 4,
            max_classes: 64,
            beta_color: 0.1,
            beta_tex: None,
            max_iters: 2000,
            tol: 1e-5,
            seed: 0,
            use_texture: true,
            max_scribble_samples: 4096,
            cluster_sample_limit: 50_000,
        }
    }

    pub fn unsupervised() -> Self {
        Self { mode: Mode::Unsupervised, lambda: 6.0, nu: 1100.0, ..Self::supervised() }
    }

    /// Initial class count of unsupervised mode.
    pub fn initial_classes(&self) -> usize {
        self.color_classes * self.texture_classes
    }

    /// Splits `n` initial classes into the most balanced `color x texture`
    /// factorization with at least as many color classes as texture classes.
    pub fn set_initial_classes(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Config("initial class count must be positive".into()));
        }
        let texture = (1..=n).filter(|t| n.is_multiple_of(*t) && t * t <= n).max().unwrap_or(1);
        self.texture_classes = texture;
        self.color_classes = n / texture;
        Ok(())
    }

    pub fn mask_std(&self) -> f64 {
        self.mask_std.unwrap_or(self.patch_side as f64 / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("overcompleteness", self.overcompleteness),
            ("sigma_tex", self.sigma_tex),
            ("mask_std", self.mask_std()),
            ("sigma_color", self.sigma_color),
            ("alpha", self.alpha),
            ("beta0", self.beta0),
            ("gamma", self.gamma),
            ("beta_color", self.beta_color),
            ("beta_tex", self.beta_tex.unwrap_or(1.0)),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("nu", self.nu), ("tol", self.tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.patch_side < 3 || self.patch_side.is_multiple_of(2) {
            return Err(Error::Config(format!("patch side must be odd and >= 3, got {}", self.patch_side)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.mode == Mode::Unsupervised {
            if self.color_classes == 0 || self.texture_classes == 0 {
                return Err(Error::Config("unsupervised mode needs k_c >= 1 and k_t >= 1".into()));
            }
            if self.initial_classes() > self.max_classes {
                return Err(Error::Config(format!(
                    "{} initial classes exceed the maximum of {}",
                    self.initial_classes(),
                    self.max_classes
                )));
            }
        }
        Ok(())
    }

    fn solver_params(&self) -> SolverParams {
        SolverParams { lambda: self.lambda, nu: self.nu, max_iters: self.max_iters, tol: self.tol }
    }

    fn supervised_params(&self) -> SupervisedParams {
        SupervisedParams {
            alpha: self.alpha,
            sigma_color: self.sigma_color,
            beta0: self.beta0,
            temperature: self.temperature,
            use_texture: self.use_texture,
            max_samples_per_label: self.max_scribble_samples,
        }
    }
}

impl Default for SegConfig {
    fn default() -> Self {
        Self::supervised()
    }
}

/// Result of one segmentation run.
#[derive(Debug, Clone)]
pub struct SegmentationReport {
    pub segmentation: Segmentation,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub millis: u128,
    pub active_labels: BTreeSet<usize>,
}

impl SegmentationReport {
    /// Labels as stored in files: class `i` becomes value `i + 1`.
    pub fn label_map(&self) -> Result<Array2<u8>> {
        crate::io::classes_to_label_map(self.segmentation.labels())
    }
}

/// Data term and edge metric for one image, before solving.
#[derive(Debug, Clone)]
pub struct Problem {
    pub data: DataTerm,
    pub metric: EdgeMetric,
}

/// Segmentation engine bound to an analysis operator and configuration.
#[derive(Debug, Clone)]
pub struct Segmenter {
    operator: Arc<AnalysisOperator>,
    extractor: PatchExtractor,
    config: SegConfig,
}

impl Segmenter {
    /// Uses the default cosine operator for the configured patch size.
    pub fn new(config: SegConfig) -> Result<Self> {
        config.validate()?;
        let op = AnalysisOperator::default_operator(config.patch_side, config.overcompleteness)?;
        Self::with_operator(config, Arc::new(op))
    }

    pub fn with_operator(config: SegConfig, operator: Arc<AnalysisOperator>) -> Result<Self> {
        config.validate()?;
        if operator.patch_len() != config.patch_side * config.patch_side {
            return Err(Error::Config(format!(
                "operator expects {} patch entries, patch side {} gives {}",
                operator.patch_len(),
                config.patch_side,
                config.patch_side * config.patch_side
            )));
        }
        let extractor = PatchExtractor::new(config.patch_side, config.mask_std())?;
        Ok(Self { operator, extractor, config })
    }

    pub fn config(&self) -> &SegConfig {
        &self.config
    }

    pub fn operator(&self) -> &Arc<AnalysisOperator> {
        &self.operator
    }

    pub fn signatures(&self, image: &Array3<f64>) -> Result<SignatureField> {
        SignatureField::compute(&to_gray(image), &self.operator, &self.extractor, self.config.sigma_tex)
    }

    pub fn edge_metric(&self, image: &Array3<f64>) -> Result<EdgeMetric> {
        let gray = to_gray(image).mapv(|v| v * 255.0);
        let mode = if self.config.mean_gamma { GammaMode::MeanGradient } else { GammaMode::Constant(self.config.gamma) };
        EdgeMetric::from_image(&gray, mode)
    }

    /// Supervised data term (shifted to be non-negative) and edge metric.
    pub fn supervised_problem(&self, image: &Array3<f64>, scribbles: &Array2<u8>) -> Result<Problem> {
        let (h, w, _) = image.dim();
        if scribbles.dim() != (h, w) {
            return dim_err(format!("scribbles are {:?}, image is {h}x{w}", scribbles.dim()));
        }
        let signatures = self.signatures(image)?;
        let sets = ScribbleSet::from_mask(scribbles, image, &signatures)?;
        if sets.is_empty() {
            return Err(Error::Config("scribble map contains no labels".into()));
        }
        let mut data = build_data_term_supervised(image, &signatures, &sets, &self.config.supervised_params())?;
        data.shift_to_nonnegative();
        Ok(Problem { data, metric: self.edge_metric(image)? })
    }

    /// Unsupervised data term from color/texture clustering, plus the model.
    pub fn unsupervised_problem(&self, image: &Array3<f64>) -> Result<(Problem, ClusterModel)> {
        let signatures = self.signatures(image)?;
        let cfg = &self.config;
        let model = ClusterModel::fit(
            image,
            &signatures,
            cfg.color_classes,
            cfg.texture_classes,
            cfg.seed,
            cfg.cluster_sample_limit,
        )?;
        let params = UnsupervisedParams {
            beta_color: cfg.beta_color,
            beta_tex: cfg.beta_tex.unwrap_or(self.operator.rows() as f64 / 20.0),
            max_classes: cfg.max_classes,
        };
        let mut data = build_data_term_unsupervised(
            image,
            &signatures,
            &model.color_centroids,
            &model.texture_representatives,
            &params,
        )?;
        data.shift_to_nonnegative();
        Ok((Problem { data, metric: self.edge_metric(image)? }, model))
    }

    /// Solves a prepared problem and reports energy and optimality gap.
    pub fn solve_problem(&self, problem: &Problem) -> Result<SegmentationReport> {
        let start = Instant::now();
        let params = self.config.solver_params();
        let outcome = solve(&problem.data, &problem.metric, &params)?;
        let segmentation = binarize(&outcome.state);
        let e = energy(&segmentation, &problem.data, &problem.metric, params.lambda, params.nu)?;
        let gap = optimality_gap(&outcome.state, &segmentation, &problem.data, &problem.metric, params.lambda, params.nu)?;
        Ok(SegmentationReport {
            active_labels: segmentation.active_labels(),
            segmentation,
            energy: e,
            gap,
            iterations: outcome.iterations,
            converged: outcome.converged,
            millis: start.elapsed().as_millis(),
        })
    }

    pub fn segment_supervised(&self, image: &Array3<f64>, scribbles: &Array2<u8>) -> Result<SegmentationReport> {
        let start = Instant::now();
        let problem = self.supervised_problem(image, scribbles)?;
        let mut report = self.solve_problem(&problem)?;
        report.millis = start.elapsed().as_millis();
        Ok(report)
    }

    pub fn segment_unsupervised(&self, image: &Array3<f64>) -> Result<SegmentationReport> {
        let start = Instant::now();
        let (problem, _) = self.unsupervised_problem(image)?;
        let mut report = self.solve_problem(&problem)?;
        report.millis = start.elapsed().as_millis();
        Ok(report)
    }

    /// File-level supervised segmentation.
    pub fn segment_supervised_files(&self, image: &Path, scribbles: &Path) -> Result<SegmentationReport> {
        let img = crate::io::load_image(image)?;
        let mask = crate::io::load_label_map(scribbles)?;
        self.segment_supervised(&img, &mask)
    }
}

/// `2 |A ∩ B| / (|A| + |B|)`, with `0/0 = 1`.
pub fn dice_coefficient(size_a: usize, size_b: usize, overlap: usize) -> f64 {
    if size_a + size_b == 0 {
        1.0
    } else {
        2.0 * overlap as f64 / (size_a + size_b) as f64
    }
}

/// Mean per-label Dice of two label maps over the labels present in either,
/// labels matched by value.
pub fn dice_score<T: Copy + Ord>(result: &Array2<T>, truth: &Array2<T>) -> Result<f64> {
    if result.dim() != truth.dim() {
        return dim_err(format!("result is {:?}, truth is {:?}", result.dim(), truth.dim()));
    }
    let labels: BTreeSet<T> = result.iter().chain(truth.iter()).copied().collect();
    if labels.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let (mut a, mut b, mut both) = (0, 0, 0);
            for (x, y) in result.iter().zip(truth.iter()) {
                let (in_a, in_b) = (*x == l, *y == l);
                a += usize::from(in_a);
                b += usize::from(in_b);
                both += usize::from(in_a && in_b);
            }
            dice_coefficient(a, b, both)
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Dice over all `max(classes)` class indices, counting classes absent
/// from both segmentations as perfect agreement.
pub fn dice_segmentations(result: &Segmentation, truth: &Segmentation) -> Result<f64> {
    if result.dim() != truth.dim() {
        return dim_err(format!("result is {:?}, truth is {:?}", result.dim(), truth.dim()));
    }
    let n = result.classes().max(truth.classes());
    let mut size_a = vec![0; n];
    let mut size_b = vec![0; n];
    let mut overlap = vec![0; n];
    for (&a, &b) in result.labels().iter().zip(truth.labels().iter()) {
        size_a[a] += 1;
        size_b[b] += 1;
        if a == b {
            overlap[a] += 1;
        }
    }
    Ok((0..n).map(|i| dice_coefficient(size_a[i], size_b[i], overlap[i])).sum::<f64>() / n as f64)
}

/// Relabels `result` so its labels line up with `truth`: pairs are taken
/// greedily by largest overlap; unmatched result labels get fresh values
/// after the largest truth label.
pub fn match_labels(result: &Array2<usize>, truth: &Array2<usize>) -> Result<Array2<usize>> {
    if result.dim() != truth.dim() {
        return dim_err(format!("result is {:?}, truth is {:?}", result.dim(), truth.dim()));
    }
    let nr = result.iter().copied().max().map_or(0, |m| m + 1);
    let nt = truth.iter().copied().max().map_or(0, |m| m + 1);
    let mut overlap = vec![vec![0usize; nt]; nr];
    for (&a, &b) in result.iter().zip(truth.iter()) {
        overlap[a][b] += 1;
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (a, row) in overlap.iter().enumerate() {
        for (b, &count) in row.iter().enumerate() {
            if count > 0 {
                pairs.push((count, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut mapping: Vec<Option<usize>> = vec![None; nr];
    let mut taken = vec![false; nt];
    for (_, a, b) in pairs {
        if mapping[a].is_none() && !taken[b] {
            mapping[a] = Some(b);
            taken[b] = true;
        }
    }
    let mut fresh = nt;
    for (a, m) in mapping.iter_mut().enumerate() {
        if m.is_none() && overlap[a].iter().any(|&c| c > 0) {
            *m = Some(fresh);
            fresh += 1;
        }
    }
    Ok(result.mapv(|a| mapping[a].expect("every label mapped")))
}

/// One `(image, scribbles, truth)` triple of a benchmark manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchEntry {
    pub image: PathBuf,
    pub scribbles: PathBuf,
    pub truth: PathBuf,
}

/// Parses a manifest: one whitespace-separated triple per line; blank lines
/// and `#` comments are skipped; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<BenchEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Manifest {
                line: i + 1,
                reason: format!("expected 3 paths (image scribbles truth), found {}", parts.len()),
            });
        }
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        entries.push(BenchEntry { image: resolve(parts[0]), scribbles: resolve(parts[1]), truth: resolve(parts[2]) });
    }
    Ok(entries)
}

/// Scores of one benchmark entry.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub entry: BenchEntry,
    pub dice: f64,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub millis: u128,
}

/// Runs supervised segmentation on every manifest entry.
pub fn run_bench(segmenter: &Segmenter, entries: &[BenchEntry]) -> Result<Vec<BenchRow>> {
    entries
        .iter()
        .map(|entry| {
            let report = segmenter.segment_supervised_files(&entry.image, &entry.scribbles)?;
            let truth = crate::io::load_label_map(&entry.truth)?;
            let result = report.label_map()?;
            Ok(BenchRow {
                entry: entry.clone(),
                dice: dice_score(&result, &truth)?,
                energy: report.energy,
                gap: report.gap,
                iterations: report.iterations,
                millis: report.millis,
            })
        })
        .collect()
}

/// Tab-separated score table with a trailing mean row.
pub fn format_bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("image\tdice\tenergy\tgap\titerations\tmillis\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            r.entry.image.display(),
            r.dice,
            r.energy,
            r.gap,
            r.iterations,
            r.millis
        );
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: fn(&BenchRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "mean\t{:.6}\t{:.6}\t{:.6}\t{:.1}\t{:.1}",
            mean(|r| r.dice),
            mean(|r| r.energy),
            mean(|r| r.gap),
            mean(|r| r.iterations as f64),
            mean(|r| r.millis as f64)
        );
    }
    out
}
