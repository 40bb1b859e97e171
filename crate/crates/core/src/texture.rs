//! Texture descriptors built on the co-support of analyzed patches.
//!
//! A gray patch around each pixel is weighted by a Gaussian mask, normalized
//! to zero mean and unit norm, analyzed by the operator, and mapped through
//! `exp(-a^2 / sigma)`, a soft indicator of the zero entries. Two such
//! signatures are compared with the l1 distance.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{dim_err, param_err, Result};
use crate::operator::AnalysisOperator;

/// Pixel coordinate as `(row, col)`.
pub type Pixel = (usize, usize);

/// Windows whose centered, masked energy per pixel is below this are flat.
pub const FLAT_VARIANCE: f64 = 1e-12;

/// A zero-mean, unit-norm gray patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    values: Vec<f64>,
    center: Pixel,
}

impl Patch {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self) -> Pixel {
        self.center
    }
}

/// Soft co-support indicator of an analyzed patch, entries in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoSupportSignature(Vec<f64>);

impl CoSupportSignature {
    /// Wraps raw values; callers are responsible for the `(0, 1]` range.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for CoSupportSignature {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Component-wise median of a set of signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturalRepresentative {
    values: Vec<f64>,
    member_count: usize,
}

impl TexturalRepresentative {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn member_count(&self) -> usize {
        self.member_count
    }
}

impl AsRef<[f64]> for TexturalRepresentative {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Reflects an out-of-range index back into `0..len` without repeating the
/// edge sample (`-1 -> 1`, `len -> len - 2`).
pub(crate) fn mirror_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Reusable patch extraction with a precomputed Gaussian mask.
#[derive(Debug, Clone)]
pub struct PatchExtractor {
    side: usize,
    mask: Vec<f64>,
}

impl PatchExtractor {
    /// `mask_std` is in pixels; `f64::INFINITY` gives a uniform mask.
    pub fn new(side: usize, mask_std: f64) -> Result<Self> {
        if side == 0 || side.is_multiple_of(2) {
            return param_err(format!("patch side must be odd, got {side}"));
        }
        if !(mask_std > 0.0) {
            return param_err(format!("mask std must be positive, got {mask_std}"));
        }
        let half = (side / 2) as f64;
        let mut mask = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - half).powi(2) + (c as f64 - half).powi(2);
                mask.push(if mask_std.is_infinite() {
                    1.0
                } else {
                    (-d2 / (2.0 * mask_std * mask_std)).exp()
                });
            }
        }
        Ok(Self { side, mask })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Extracts the normalized patch centered at `center`, or `None` when the
    /// window has no texture to normalize.
    pub fn extract(&self, gray: &Array2<f64>, center: Pixel) -> Result<Option<Patch>> {
        let mut buf = vec![0.0; self.side * self.side];
        if self.extract_into(gray, center, &mut buf)? {
            Ok(Some(Patch { values: buf, center }))
        } else {
            Ok(None)
        }
    }

    /// Writes the normalized patch into `out`; returns `false` for a flat window.
    pub fn extract_into(&self, gray: &Array2<f64>, center: Pixel, out: &mut [f64]) -> Result<bool> {
        let (h, w) = gray.dim();
        let (r0, c0) = center;
        if r0 >= h || c0 >= w {
            return param_err(format!("center {center:?} outside {h}x{w} image"));
        }
        if out.len() != self.side * self.side {
            return dim_err(format!("patch buffer has {} entries", out.len()));
        }
        let half = (self.side / 2) as isize;
        for dr in 0..self.side {
            let r = mirror_index(r0 as isize + dr as isize - half, h);
            for dc in 0..self.side {
                let c = mirror_index(c0 as isize + dc as isize - half, w);
                out[dr * self.side + dc] = gray[[r, c]];
            }
        }
        // removing the raw window mean first makes the masked patch invariant
        // to additive bias, not only to gain
        center_in_place(out);
        out.iter_mut().zip(&self.mask).for_each(|(v, m)| *v *= m);
        center_in_place(out);
        let energy: f64 = out.iter().map(|v| v * v).sum();
        if energy / (out.len() as f64) < FLAT_VARIANCE {
            return Ok(false);
        }
        let norm = energy.sqrt();
        out.iter_mut().for_each(|v| *v /= norm);
        Ok(true)
    }
}

fn center_in_place(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Convenience wrapper around [`PatchExtractor`].
pub fn extract_patch(gray: &Array2<f64>, center: Pixel, side: usize, mask_std: f64) -> Result<Option<Patch>> {
    PatchExtractor::new(side, mask_std)?.extract(gray, center)
}

/// Soft co-support map `exp(-a_j^2 / sigma)`.
pub fn smooth_cosupport(analyzed: &[f64], sigma: f64) -> Result<CoSupportSignature> {
    if !(sigma > 0.0) {
        return param_err(format!("sigma must be positive, got {sigma}"));
    }
    let mut out = vec![0.0; analyzed.len()];
    smooth_cosupport_into(analyzed, sigma, &mut out);
    Ok(CoSupportSignature(out))
}

fn smooth_cosupport_into(analyzed: &[f64], sigma: f64, out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(analyzed) {
        // keep entries strictly positive even when exp underflows
        *o = (-a * a / sigma).exp().max(f64::MIN_POSITIVE);
    }
}

/// l1 distance between two equally long vectors.
pub(crate) fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Textural similarity measure: l1 distance of two signatures.
pub fn tsm(a: &CoSupportSignature, b: &CoSupportSignature) -> Result<f64> {
    if a.len() != b.len() {
        return dim_err(format!("signature lengths {} and {}", a.len(), b.len()));
    }
    Ok(l1(&a.0, &b.0))
}

/// Median of a slice, averaging the middle pair for even lengths.
/// The slice is reordered.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    debug_assert!(m > 0);
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Component-wise median of equally long vectors.
pub(crate) fn componentwise_median<S: AsRef<[f64]>>(members: &[S]) -> Vec<f64> {
    let k = members[0].as_ref().len();
    let mut column = vec![0.0; members.len()];
    (0..k)
        .map(|j| {
            for (slot, m) in column.iter_mut().zip(members) {
                *slot = m.as_ref()[j];
            }
            median_in_place(&mut column)
        })
        .collect()
}

/// Representative whose soft co-support is the component-wise median of the
/// given signatures.
pub fn textural_representative<S: AsRef<[f64]>>(signatures: &[S]) -> Result<TexturalRepresentative> {
    let Some(first) = signatures.first() else {
        return param_err("textural representative of an empty set");
    };
    let k = first.as_ref().len();
    if let Some(bad) = signatures.iter().position(|s| s.as_ref().len() != k) {
        return dim_err(format!("signature {bad} has length {}, expected {k}", signatures[bad].as_ref().len()));
    }
    Ok(TexturalRepresentative { values: componentwise_median(signatures), member_count: signatures.len() })
}

impl TexturalRepresentative {
    pub(crate) fn from_parts(values: Vec<f64>, member_count: usize) -> Self {
        Self { values, member_count }
    }
}

/// Converts an `h x w x 3` RGB field to gray with Rec. 601 luma weights.
/// Single-channel input is copied.
pub fn to_gray(image: &ndarray::Array3<f64>) -> Array2<f64> {
    let (h, w, d) = image.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        if d >= 3 {
            0.299 * image[[r, c, 0]] + 0.587 * image[[r, c, 1]] + 0.114 * image[[r, c, 2]]
        } else {
            image[[r, c, 0]]
        }
    })
}

/// Signatures for every pixel of an image, computed once and shared.
#[derive(Debug, Clone)]
pub struct SignatureField {
    height: usize,
    width: usize,
    k: usize,
    values: Vec<f64>,
    flat: Vec<bool>,
}

impl SignatureField {
    /// Computes a signature for every pixel in parallel.
    pub fn compute(
        gray: &Array2<f64>,
        operator: &AnalysisOperator,
        extractor: &PatchExtractor,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return param_err(format!("sigma must be positive, got {sigma}"));
        }
        let side = extractor.side();
        if side * side != operator.patch_len() {
            return dim_err(format!(
                "{side}x{side} patches do not match operator patch length {}",
                operator.patch_len()
            ));
        }
        let (height, width) = gray.dim();
        let k = operator.rows();
        let mut values = vec![0.0; height * width * k];
        let mut flat = vec![false; height * width];

        values
            .par_chunks_mut(k)
            .zip(flat.par_iter_mut())
            .enumerate()
            .try_for_each_init(
                || (vec![0.0; side * side], vec![0.0; k]),
                |(patch, analyzed), (p, (sig, is_flat))| -> Result<()> {
                    let center = (p / width, p % width);
                    if extractor.extract_into(gray, center, patch)? {
                        operator.analyze_into(patch, analyzed)?;
                        smooth_cosupport_into(analyzed, sigma, sig);
                    } else {
                        *is_flat = true;
                        sig.fill(1.0);
                    }
                    Ok(())
                },
            )?;
        Ok(Self { height, width, k, values, flat })
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn signature_len(&self) -> usize {
        self.k
    }

    /// Signature at `(row, col)`, or `None` for a flat window.
    pub fn get(&self, (r, c): Pixel) -> Option<&[f64]> {
        self.get_index(r * self.width + c)
    }

    /// Signature at flat index `r * width + c`, or `None` for a flat window.
    pub fn get_index(&self, p: usize) -> Option<&[f64]> {
        (!self.flat[p]).then(|| &self.values[p * self.k..(p + 1) * self.k])
    }

    /// Stored values at flat index `p`; all ones for a flat window.
    pub(crate) fn raw_index(&self, p: usize) -> &[f64] {
        &self.values[p * self.k..(p + 1) * self.k]
    }

    pub fn is_flat(&self, (r, c): Pixel) -> bool {
        self.flat[r * self.width + c]
    }
}
