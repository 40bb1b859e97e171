//! Per-pixel, per-label data term `f_i(x) = -log P(I(x), s_x, x | l(x) = i)`.
//!
//! In the supervised setting the color/location factor is a Parzen estimate
//! over scribble samples whose spatial bandwidth grows with the distance to
//! the nearest scribble of that label, and the texture factor is a softmin
//! over l1 distances to each label's textural representative. Without
//! scribbles, color and texture prototypes from clustering take their place.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::texture::{l1, textural_representative, Pixel, SignatureField, TexturalRepresentative};

/// Lower bound on the spatial kernel width, in pixels.
pub const RHO_FLOOR: f64 = 1.0;
/// Color likelihoods are floored here before taking the log.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Exponents beyond this underflow to zero in `f64`.
const EXP_CUTOFF: f64 = 745.0;

/// One scribbled pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScribbleSample {
    pub pos: Pixel,
    pub color: Vec<f64>,
    /// `None` when the patch around the pixel is flat.
    pub signature: Option<Vec<f64>>,
}

/// All samples of one label (0-based class index).
#[derive(Debug, Clone, PartialEq)]
pub struct ScribbleSet {
    pub label: usize,
    pub samples: Vec<ScribbleSample>,
}

impl ScribbleSet {
    /// Groups the scribbled pixels of an indexed mask (0 = unlabeled,
    /// `v` = label `v`) into one set per label.
    ///
    /// Labels must form `1..=n` without gaps.
    pub fn from_mask(mask: &Array2<u8>, image: &Array3<f64>, signatures: &SignatureField) -> Result<Vec<Self>> {
        let (h, w, _) = image.dim();
        if mask.dim() != (h, w) {
            return dim_err(format!("scribble mask is {:?}, image is {h}x{w}", mask.dim()));
        }
        if signatures.dim() != (h, w) {
            return dim_err(format!("signature field is {:?}, image is {h}x{w}", signatures.dim()));
        }
        let n = mask.iter().copied().max().unwrap_or(0) as usize;
        let mut sets: Vec<ScribbleSet> = (0..n).map(|label| ScribbleSet { label, samples: Vec::new() }).collect();
        for ((r, c), &v) in mask.indexed_iter() {
            if v == 0 {
                continue;
            }
            sets[v as usize - 1].samples.push(ScribbleSample {
                pos: (r, c),
                color: image.slice(ndarray::s![r, c, ..]).to_vec(),
                signature: signatures.get((r, c)).map(<[f64]>::to_vec),
            });
        }
        let missing: Vec<String> =
            sets.iter().filter(|s| s.samples.is_empty()).map(|s| (s.label + 1).to_string()).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "scribble labels must be contiguous from 1; missing label(s) {} of 1..={n}",
                missing.join(", ")
            )));
        }
        Ok(sets)
    }
}

/// How the texture temperatures `beta_i(x)` follow the spatial bandwidths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureTemperature {
    /// `beta_i(x) = beta0 * rho_i(x)`, one temperature per label.
    PerLabel,
    /// `beta(x) = beta0 * mean_i rho_i(x)`, shared by all labels at a pixel.
    SharedMean,
    /// `beta(x) = beta0 * max_i rho_i(x)`, shared by all labels at a pixel.
    SharedMax,
}

impl TextureTemperature {
    fn fill(self, beta0: f64, rho: impl Iterator<Item = f64>, betas: &mut [f64]) {
        match self {
            TextureTemperature::PerLabel => betas.iter_mut().zip(rho).for_each(|(b, r)| *b = beta0 * r),
            TextureTemperature::SharedMean | TextureTemperature::SharedMax => {
                let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
                for r in rho {
                    sum += r;
                    max = max.max(r);
                    n += 1;
                }
                let shared = if self == TextureTemperature::SharedMean { sum / n as f64 } else { max };
                betas.iter_mut().for_each(|b| *b = beta0 * shared);
            }
        }
    }
}

/// Knobs of the supervised data term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedParams {
    /// Spatial kernel scale: `rho_i(x) = alpha * dist(x, scribbles_i)`.
    pub alpha: f64,
    /// Color kernel standard deviation per channel.
    pub sigma_color: f64,
    /// Texture temperature per unit of `rho`.
    pub beta0: f64,
    pub temperature: TextureTemperature,
    /// Drop the texture factor (color and location only).
    pub use_texture: bool,
    /// Per-label cap on Parzen samples; larger sets are stride-subsampled.
    pub max_samples_per_label: usize,
}

impl Default for SupervisedParams {
    fn default() -> Self {
        Self {
            alpha: 1.3,
            sigma_color: 1.3 / 255.0,
            beta0: 0.05,
            temperature: TextureTemperature::SharedMean,
            use_texture: true,
            max_samples_per_label: 4096,
        }
    }
}

/// Knobs of the unsupervised data term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedParams {
    pub beta_color: f64,
    pub beta_tex: f64,
    pub max_classes: usize,
}

/// Data term stored pixel-major: the costs of all labels at one pixel are
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTerm {
    labels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DataTerm {
    /// `values[(r * width + c) * labels + i]` is the cost of label `i` at `(r, c)`.
    pub fn new(labels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if labels == 0 {
            return param_err("data term needs at least one label");
        }
        if values.len() != labels * height * width {
            return dim_err(format!(
                "{} values for {labels} labels on {height}x{width}",
                values.len()
            ));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return param_err(format!("non-finite data cost at flat index {p}"));
        }
        Ok(Self { labels, height, width, values })
    }

    /// Builds a data term from one cost field per label.
    pub fn from_fields(fields: &[Array2<f64>]) -> Result<Self> {
        let Some(first) = fields.first() else {
            return param_err("data term needs at least one label");
        };
        let (h, w) = first.dim();
        if fields.iter().any(|f| f.dim() != (h, w)) {
            return dim_err("label cost fields differ in shape");
        }
        let n = fields.len();
        let mut values = vec![0.0; n * h * w];
        for (i, f) in fields.iter().enumerate() {
            for ((r, c), v) in f.indexed_iter() {
                values[(r * w + c) * n + i] = *v;
            }
        }
        Self::new(n, h, w, values)
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, label: usize, (r, c): Pixel) -> f64 {
        self.values[(r * self.width + c) * self.labels + label]
    }

    /// Costs of all labels at flat pixel index `p`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.values[p * self.labels..(p + 1) * self.labels]
    }

    pub fn field(&self, label: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |px| self.get(label, px))
    }

    /// Per-pixel lowest-cost label, ties to the lower index.
    pub fn argmin(&self) -> Array2<usize> {
        Array2::from_shape_fn((self.height, self.width), |(r, c)| {
            argmin(self.pixel(r * self.width + c))
        })
    }

    /// Subtracts the per-pixel minimum so every cost is `>= 0` with a zero at
    /// each pixel. The minimizer of the energy is unchanged.
    pub fn shift_to_nonnegative(&mut self) {
        let n = self.labels;
        self.values.par_chunks_mut(n).for_each(|px| {
            let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
            px.iter_mut().for_each(|v| *v -= lo);
        });
    }
}

pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Exact squared Euclidean distance to the nearest `true` seed, via the
/// separable lower-envelope transform. Pixels are at unit spacing; the result
/// is `f64::INFINITY` everywhere if there are no seeds.
pub fn squared_distance_transform(seeds: &Array2<bool>) -> Array2<f64> {
    let (h, w) = seeds.dim();
    let mut out = seeds.mapv(|s| if s { 0.0 } else { f64::INFINITY });
    let mut buf = Vec::new();
    for c in 0..w {
        buf.clear();
        buf.extend(out.column(c).iter().copied());
        let col = distance_1d(&buf);
        out.column_mut(c).iter_mut().zip(col).for_each(|(o, v)| *o = v);
    }
    for r in 0..h {
        buf.clear();
        buf.extend(out.row(r).iter().copied());
        let row = distance_1d(&buf);
        out.row_mut(r).iter_mut().zip(row).for_each(|(o, v)| *o = v);
    }
    out
}

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas rooted at finite samples).
fn distance_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let roots: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if roots.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut v: Vec<usize> = Vec::with_capacity(roots.len());
    let mut z: Vec<f64> = Vec::with_capacity(roots.len() + 1);
    let intersect = |p: usize, q: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for &q in &roots {
        while let Some(&p) = v.last() {
            let s = intersect(p, q);
            if v.len() > 1 && s <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                z.push(s);
                break;
            }
        }
        v.push(q);
    }
    // z[j] separates v[j] and v[j + 1]
    let mut out = vec![0.0; n];
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while j + 1 < v.len() && z[j] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
    out
}

/// Spatial kernel widths `rho_i(x) = max(alpha * |x - x_{v_i}|, RHO_FLOOR)`,
/// one field per label.
#[derive(Debug, Clone)]
pub struct SpatialKernelField {
    rho: Vec<Array2<f64>>,
}

impl SpatialKernelField {
    pub fn compute(scribbles: &[ScribbleSet], dim: (usize, usize), alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return param_err(format!("alpha must be positive, got {alpha}"));
        }
        let rho = scribbles
            .iter()
            .map(|set| {
                let mut seeds = Array2::from_elem(dim, false);
                for s in &set.samples {
                    seeds[s.pos] = true;
                }
                squared_distance_transform(&seeds).mapv(|d2| (alpha * d2.sqrt()).max(RHO_FLOOR))
            })
            .collect();
        Ok(Self { rho })
    }

    pub fn rho(&self, label: usize) -> &Array2<f64> {
        &self.rho[label]
    }
}

fn nearest_distance(pos: Pixel, samples: &[ScribbleSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let dr = s.pos.0 as f64 - pos.0 as f64;
            let dc = s.pos.1 as f64 - pos.1 as f64;
            dr * dr + dc * dc
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Parzen estimate with a 2-D Gaussian of std `rho` over location and a
/// d-dimensional Gaussian of std `sigma_color` over color.
fn parzen_density<'a>(
    pos: Pixel,
    color: &[f64],
    samples: impl ExactSizeIterator<Item = &'a ScribbleSample>,
    rho: f64,
    sigma_color: f64,
) -> f64 {
    let m = samples.len();
    let d = color.len() as i32;
    let spatial_norm = 1.0 / (2.0 * PI * rho * rho);
    let color_norm = (2.0 * PI * sigma_color * sigma_color).powi(-d).sqrt();
    let inv_2rho2 = 1.0 / (2.0 * rho * rho);
    let inv_2sig2 = 1.0 / (2.0 * sigma_color * sigma_color);
    let mut sum = 0.0;
    for s in samples {
        let dc2: f64 = color.iter().zip(&s.color).map(|(a, b)| (a - b) * (a - b)).sum();
        let color_exp = dc2 * inv_2sig2;
        if color_exp > EXP_CUTOFF {
            continue;
        }
        let dr = s.pos.0 as f64 - pos.0 as f64;
        let dx = s.pos.1 as f64 - pos.1 as f64;
        let e = color_exp + (dr * dr + dx * dx) * inv_2rho2;
        if e < EXP_CUTOFF {
            sum += (-e).exp();
        }
    }
    sum * spatial_norm * color_norm / m as f64
}

/// Space-variant Parzen color likelihood of label `scribbles.label` at `pos`.
///
/// The spatial bandwidth is `alpha` times the distance from `pos` to the
/// nearest sample of the set, floored at [`RHO_FLOOR`].
pub fn color_likelihood(
    pos: Pixel,
    color: &[f64],
    scribbles: &ScribbleSet,
    alpha: f64,
    sigma_color: f64,
) -> Result<f64> {
    if scribbles.samples.is_empty() {
        return param_err(format!("label {} has no scribble samples", scribbles.label + 1));
    }
    if !(alpha > 0.0) || !(sigma_color > 0.0) {
        return param_err("alpha and sigma_color must be positive");
    }
    if let Some(s) = scribbles.samples.iter().find(|s| s.color.len() != color.len()) {
        return dim_err(format!("sample color has {} channels, query has {}", s.color.len(), color.len()));
    }
    let rho = (alpha * nearest_distance(pos, &scribbles.samples)).max(RHO_FLOOR);
    Ok(parzen_density(pos, color, scribbles.samples.iter(), rho, sigma_color))
}

/// Writes `-log softmin_i` of `distances / betas` into `out`:
/// `d_i / b_i + log sum_j exp(-d_j / b_j)`.
fn neg_log_softmin(distances: &[f64], betas: &[f64], out: &mut [f64]) {
    let mut hi = f64::NEG_INFINITY;
    for ((o, d), b) in out.iter_mut().zip(distances).zip(betas) {
        *o = -d / b;
        hi = hi.max(*o);
    }
    let lse = hi + out.iter().map(|s| (s - hi).exp()).sum::<f64>().ln();
    out.iter_mut().for_each(|s| *s = lse - *s);
}

/// Posterior over classes of a signature given class representatives,
/// `softmin_i(||c_i - sig||_1 / beta_i)`. A flat patch (`None`) carries no
/// texture evidence and yields the uniform distribution.
pub fn texture_posterior<R: AsRef<[f64]>>(
    signature: Option<&[f64]>,
    representatives: &[R],
    betas: &[f64],
) -> Result<Vec<f64>> {
    let n = representatives.len();
    if n == 0 {
        return param_err("texture posterior needs at least one class");
    }
    if betas.len() != n {
        return dim_err(format!("{} betas for {n} classes", betas.len()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0)) {
        return param_err(format!("beta must be positive, got {b}"));
    }
    let Some(sig) = signature else {
        return Ok(vec![1.0 / n as f64; n]);
    };
    if let Some(r) = representatives.iter().find(|r| r.as_ref().len() != sig.len()) {
        return dim_err(format!("representative length {} vs signature {}", r.as_ref().len(), sig.len()));
    }
    let dist: Vec<f64> = representatives.iter().map(|r| l1(r.as_ref(), sig)).collect();
    let mut out = vec![0.0; n];
    neg_log_softmin(&dist, betas, &mut out);
    out.iter_mut().for_each(|v| *v = (-*v).exp());
    Ok(out)
}

fn check_image(image: &Array3<f64>, signatures: &SignatureField) -> Result<(usize, usize, usize)> {
    let (h, w, d) = image.dim();
    if signatures.dim() != (h, w) {
        return dim_err(format!("signature field is {:?}, image is {h}x{w}", signatures.dim()));
    }
    if h == 0 || w == 0 || d == 0 {
        return param_err("empty image");
    }
    Ok((h, w, d))
}

fn subsample(samples: &[ScribbleSample], cap: usize) -> Vec<&ScribbleSample> {
    let cap = cap.max(1);
    if samples.len() <= cap {
        return samples.iter().collect();
    }
    (0..cap).map(|j| &samples[j * samples.len() / cap]).collect()
}

/// Supervised data term from per-label scribble samples.
///
/// `f_i(x) = -log max(P_color_i(x), floor) - log P_tex_i(x)` with texture
/// temperature `beta0 * rho_i(x)`. If some label has no textured sample, the
/// texture factor is dropped for all labels.
pub fn build_data_term_supervised(
    image: &Array3<f64>,
    signatures: &SignatureField,
    scribbles: &[ScribbleSet],
    params: &SupervisedParams,
) -> Result<DataTerm> {
    let (h, w, d) = check_image(image, signatures)?;
    let n = scribbles.len();
    if n == 0 {
        return Err(Error::Config("no scribble labels given".into()));
    }
    for (i, set) in scribbles.iter().enumerate() {
        if set.label != i {
            return Err(Error::Config(format!("scribble set {i} carries label {}", set.label + 1)));
        }
        if set.samples.is_empty() {
            return Err(Error::Config(format!("label {} has no scribble samples", i + 1)));
        }
        for s in &set.samples {
            if s.pos.0 >= h || s.pos.1 >= w {
                return param_err(format!("label {} sample {:?} outside image", i + 1, s.pos));
            }
            if s.color.len() != d {
                return dim_err(format!("label {} sample has {} channels, image {d}", i + 1, s.color.len()));
            }
        }
    }
    if !(params.sigma_color > 0.0) || !(params.beta0 > 0.0) {
        return param_err("sigma_color and beta0 must be positive");
    }
    let rho = SpatialKernelField::compute(scribbles, (h, w), params.alpha)?;

    let representatives: Option<Vec<TexturalRepresentative>> = if params.use_texture {
        scribbles
            .iter()
            .map(|set| {
                let sigs: Vec<&[f64]> = set.samples.iter().filter_map(|s| s.signature.as_deref()).collect();
                (!sigs.is_empty()).then(|| textural_representative(&sigs)).transpose()
            })
            .collect::<Result<Option<Vec<_>>>>()?
    } else {
        None
    };
    let parzen_samples: Vec<Vec<&ScribbleSample>> =
        scribbles.iter().map(|s| subsample(&s.samples, params.max_samples_per_label)).collect();

    let mut values = vec![0.0; n * h * w];
    values.par_chunks_mut(n).enumerate().for_each_init(
        || (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; d]),
        |(dist, betas, tex, color), (p, out)| {
            let pos = (p / w, p % w);
            color.iter_mut().enumerate().for_each(|(ch, v)| *v = image[[pos.0, pos.1, ch]]);
            for (i, o) in out.iter_mut().enumerate() {
                let rho_i = rho.rho(i)[pos];
                let density =
                    parzen_density(pos, color, parzen_samples[i].iter().copied(), rho_i, params.sigma_color);
                *o = -density.max(LIKELIHOOD_FLOOR).ln();
            }
            params.temperature.fill(params.beta0, (0..n).map(|i| rho.rho(i)[pos]), betas);
            if let (Some(reps), Some(sig)) = (&representatives, signatures.get_index(p)) {
                for (di, r) in dist.iter_mut().zip(reps) {
                    *di = l1(r.values(), sig);
                }
                neg_log_softmin(dist, betas, tex);
                out.iter_mut().zip(tex.iter()).for_each(|(o, t)| *o += t);
            }
        },
    );
    DataTerm::new(n, h, w, values)
}

/// Unsupervised data term over all `(color, texture)` prototype pairs; class
/// `c * k_t + t` pairs color centroid `c` with texture representative `t`.
pub fn build_data_term_unsupervised<R: AsRef<[f64]> + Sync>(
    image: &Array3<f64>,
    signatures: &SignatureField,
    color_centroids: &[Vec<f64>],
    texture_representatives: &[R],
    params: &UnsupervisedParams,
) -> Result<DataTerm> {
    let (h, w, d) = check_image(image, signatures)?;
    let kc = color_centroids.len();
    let kt = texture_representatives.len();
    if kc == 0 || kt == 0 {
        return param_err("need at least one color centroid and one texture representative");
    }
    let n = kc * kt;
    if n > params.max_classes {
        return Err(Error::Config(format!(
            "{kc} color x {kt} texture classes = {n} exceeds the maximum of {}",
            params.max_classes
        )));
    }
    if !(params.beta_color > 0.0) || !(params.beta_tex > 0.0) {
        return param_err("beta_color and beta_tex must be positive");
    }
    if color_centroids.iter().any(|c| c.len() != d) {
        return dim_err(format!("color centroids must have {d} channels"));
    }
    let k = signatures.signature_len();
    if texture_representatives.iter().any(|r| r.as_ref().len() != k) {
        return dim_err(format!("texture representatives must have length {k}"));
    }
    let color_betas = vec![params.beta_color; kc];
    let tex_betas = vec![params.beta_tex; kt];
    let uniform_tex = (kt as f64).ln();

    let mut values = vec![0.0; n * h * w];
    values.par_chunks_mut(n).enumerate().for_each_init(
        || (vec![0.0; kc], vec![0.0; kc], vec![0.0; kt], vec![0.0; kt]),
        |(cdist, cterm, tdist, tterm), (p, out)| {
            let (r, c) = (p / w, p % w);
            for (dst, cen) in cdist.iter_mut().zip(color_centroids) {
                *dst = cen.iter().enumerate().map(|(ch, v)| (image[[r, c, ch]] - v).powi(2)).sum::<f64>().sqrt();
            }
            neg_log_softmin(cdist, &color_betas, cterm);
            match signatures.get_index(p) {
                Some(sig) => {
                    for (dst, rep) in tdist.iter_mut().zip(texture_representatives) {
                        *dst = l1(rep.as_ref(), sig);
                    }
                    neg_log_softmin(tdist, &tex_betas, tterm);
                }
                None => tterm.fill(uniform_tex),
            }
            for ci in 0..kc {
                for ti in 0..kt {
                    out[ci * kt + ti] = cterm[ci] + tterm[ti];
                }
            }
        },
    );
    DataTerm::new(n, h, w, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(pos: Pixel, color: &[f64]) -> ScribbleSample {
        ScribbleSample { pos, color: color.to_vec(), signature: None }
    }

    #[test]
    fn single_sample_peak() {
        let sigma: f64 = 1.3 / 255.0;
        let set = ScribbleSet { label: 0, samples: vec![sample((2, 3), &[0.2, 0.4, 0.6])] };
        let v = color_likelihood((2, 3), &[0.2, 0.4, 0.6], &set, 1.3, sigma).unwrap();
        let expect = 1.0 / (2.0 * PI) * (2.0 * PI * sigma * sigma).powf(-1.5);
        assert!((v / expect - 1.0).abs() < 1e-12);
        let off = color_likelihood((2, 3), &[0.2, 0.4, 0.601], &set, 1.3, sigma).unwrap();
        assert!(off < v);
    }

    #[test]
    fn empty_set_rejected() {
        let set = ScribbleSet { label: 0, samples: vec![] };
        assert!(color_likelihood((0, 0), &[0.0], &set, 1.3, 0.1).is_err());
    }

    #[test]
    fn posterior_known_values() {
        let reps = [vec![1.0], vec![2.0], vec![4.0]];
        let p = texture_posterior(Some(&[0.0]), &reps, &[1.0, 1.0, 1.0]).unwrap();
        let z = (-1f64).exp() + (-2f64).exp() + (-4f64).exp();
        let expect = [(-1f64).exp() / z, (-2f64).exp() / z, (-4f64).exp() / z];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.7054).abs() < 1e-4 && (p[1] - 0.2595).abs() < 1e-4 && (p[2] - 0.0351).abs() < 1e-4);
    }

    #[test]
    fn posterior_edge_cases() {
        let reps = [vec![0.0, 1.0], vec![1.0, 0.0]];
        let flat = texture_posterior(None, &reps, &[1.0, 1.0]).unwrap();
        assert_eq!(flat, vec![0.5, 0.5]);
        let eq = texture_posterior(Some(&[0.5, 0.5]), &reps, &[2.0, 2.0]).unwrap();
        assert!((eq[0] - 0.5).abs() < 1e-15);
        let sharp = texture_posterior(Some(&[0.1, 0.9]), &reps, &[1e-6, 1e-6]).unwrap();
        assert!(sharp[0] > 1.0 - 1e-12);
        assert!(texture_posterior(Some(&[0.1, 0.9]), &reps, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut seeds = Array2::from_elem((7, 9), false);
        for p in [(0, 0), (3, 5), (6, 2), (4, 8)] {
            seeds[p] = true;
        }
        let dt = squared_distance_transform(&seeds);
        for ((r, c), v) in dt.indexed_iter() {
            let brute = seeds
                .indexed_iter()
                .filter(|(_, s)| **s)
                .map(|((sr, sc), _)| (sr as f64 - r as f64).powi(2) + (sc as f64 - c as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(*v, brute, "at {r},{c}");
        }
        let none = squared_distance_transform(&Array2::from_elem((2, 2), false));
        assert!(none.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn shift_keeps_argmin() {
        let mut dt = DataTerm::new(2, 1, 2, vec![3.0, 1.0, -2.0, 5.0]).unwrap();
        let before = dt.argmin();
        dt.shift_to_nonnegative();
        assert_eq!(dt.values(), &[2.0, 0.0, 0.0, 7.0]);
        assert_eq!(before, dt.argmin());
    }

    #[test]
    fn data_term_rejects_non_finite() {
        assert!(DataTerm::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(DataTerm::new(2, 1, 1, vec![0.0]).is_err());
    }
}
