//! Co-sparse analysis operator.
//!
//! An [`AnalysisOperator`] is an overcomplete `k x N` matrix whose rows are
//! unit-norm filters over vectorized `side x side` patches. Analyzing a patch
//! is a plain matrix-vector product; texture information lives in the entries
//! of the result that are (close to) zero.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{dim_err, param_err, Error, Result};

const FORMAT_TAG: &str = "cosparse-operator";
const FORMAT_VERSION: &str = "v1";

/// Rows whose norm is within this distance of 1 are kept bit-for-bit on load.
const NORM_SLACK: f64 = 1e-12;

/// Dense overcomplete analysis operator, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOperator {
    rows: usize,
    patch_len: usize,
    weights: Vec<f64>,
}

impl AnalysisOperator {
    /// Builds an operator from row-major weights.
    ///
    /// Rows are rescaled to unit Euclidean norm. Fails if the matrix is not
    /// overcomplete, contains non-finite values, or has a zero or constant row.
    pub fn new(rows: usize, patch_len: usize, mut weights: Vec<f64>) -> Result<Self> {
        if patch_len == 0 {
            return Err(Error::OperatorLoad("patch length must be positive".into()));
        }
        if rows <= patch_len {
            return Err(Error::OperatorLoad(format!(
                "not overcomplete: k={rows} must exceed n={patch_len}"
            )));
        }
        if weights.len() != rows * patch_len {
            return Err(Error::OperatorLoad(format!(
                "expected {} weights for k={rows} n={patch_len}, found {}",
                rows * patch_len,
                weights.len()
            )));
        }
        for (r, row) in weights.chunks_exact_mut(patch_len).enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::OperatorLoad(format!(
                    "row {r}: non-finite entry at column {c}"
                )));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::OperatorLoad(format!("row {r}: zero row")));
            }
            if (norm - 1.0).abs() > NORM_SLACK {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            // a unit row parallel to the constant vector has no component
            // orthogonal to it, so it responds only to the DC level
            let mean = row.iter().sum::<f64>() / patch_len as f64;
            let residual = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
            if residual < 1e-9 {
                return Err(Error::OperatorLoad(format!("row {r}: constant row")));
            }
        }
        Ok(Self { rows, patch_len, weights })
    }

    /// Deterministic DC-free cosine operator for `patch_side x patch_side`
    /// patches with `ceil(overcompleteness * patch_side^2)` rows.
    ///
    /// Rows walk through the non-constant separable DCT-II atoms ordered by
    /// total frequency; once exhausted the cycle restarts with flipped sign.
    pub fn default_operator(patch_side: usize, overcompleteness: f64) -> Result<Self> {
        if patch_side < 3 || patch_side.is_multiple_of(2) {
            return param_err(format!("patch side must be odd and >= 3, got {patch_side}"));
        }
        if !(overcompleteness.is_finite() && overcompleteness >= 1.0) {
            return param_err(format!("overcompleteness must be >= 1, got {overcompleteness}"));
        }
        let side = patch_side;
        let patch_len = side * side;
        let rows = (overcompleteness * patch_len as f64).ceil() as usize;
        let rows = rows.max(patch_len + 1);

        let basis = |freq: usize, pos: usize| {
            (PI * (2 * pos + 1) as f64 * freq as f64 / (2 * side) as f64).cos()
        };
        let mut freqs: Vec<(usize, usize)> = (0..side)
            .flat_map(|v| (0..side).map(move |u| (u, v)))
            .filter(|&(u, v)| u + v > 0)
            .collect();
        freqs.sort_by_key(|&(u, v)| (u + v, u, v));

        let atoms: Vec<Vec<f64>> = freqs
            .iter()
            .map(|&(u, v)| {
                let mut atom: Vec<f64> = (0..patch_len)
                    .map(|i| basis(u, i % side) * basis(v, i / side))
                    .collect();
                let norm = atom.iter().map(|a| a * a).sum::<f64>().sqrt();
                atom.iter_mut().for_each(|a| *a /= norm);
                atom
            })
            .collect();

        let mut weights = Vec::with_capacity(rows * patch_len);
        for r in 0..rows {
            let cycle = r / atoms.len();
            let sign = if cycle.is_multiple_of(2) { 1.0 } else { -1.0 };
            weights.extend(atoms[r % atoms.len()].iter().map(|a| sign * a));
        }
        Self::new(rows, patch_len, weights)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    /// Side length of the square patch this operator expects, if `patch_len`
    /// is a perfect square.
    pub fn patch_side(&self) -> Option<usize> {
        let side = (self.patch_len as f64).sqrt().round() as usize;
        (side * side == self.patch_len).then_some(side)
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.patch_len..(j + 1) * self.patch_len]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Analyzed vector `O s`.
    pub fn analyze(&self, patch: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.analyze_into(patch, &mut out)?;
        Ok(out)
    }

    pub fn analyze_into(&self, patch: &[f64], out: &mut [f64]) -> Result<()> {
        if patch.len() != self.patch_len {
            return dim_err(format!(
                "patch has {} entries, operator expects {}",
                patch.len(),
                self.patch_len
            ));
        }
        if out.len() != self.rows {
            return dim_err(format!("output has {} entries, operator has {} rows", out.len(), self.rows));
        }
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.patch_len)) {
            *o = row.iter().zip(patch).map(|(w, s)| w * s).sum();
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file)
    }

    /// Parses the text format: a header line
    /// `cosparse-operator v1 k=<rows> n=<cols>` followed by one line per row.
    pub fn read_from(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::OperatorLoad("empty file: missing header".into()))??;
        let (rows, patch_len) = parse_header(&header)?;
        if rows <= patch_len {
            return Err(Error::OperatorLoad(format!(
                "not overcomplete: k={rows} must exceed n={patch_len}"
            )));
        }

        let mut weights = Vec::with_capacity(rows * patch_len);
        let mut row = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if row == rows {
                return Err(Error::OperatorLoad(format!("more than k={rows} rows")));
            }
            let before = weights.len();
            for (c, tok) in line.split_whitespace().enumerate() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::OperatorLoad(format!("row {row}: column {c}: cannot parse {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::OperatorLoad(format!(
                        "row {row}: non-finite entry at column {c}"
                    )));
                }
                weights.push(v);
            }
            let got = weights.len() - before;
            if got != patch_len {
                return Err(Error::OperatorLoad(format!(
                    "row {row}: dimension mismatch, expected {patch_len} entries, found {got}"
                )));
            }
            row += 1;
        }
        if row != rows {
            return Err(Error::OperatorLoad(format!(
                "dimension mismatch: header declares k={rows} rows, found {row}"
            )));
        }
        Self::new(rows, patch_len, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the text format with 17 significant digits per entry, which
    /// round-trips every `f64` exactly.
    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        writeln!(writer, "{FORMAT_TAG} {FORMAT_VERSION} k={} n={}", self.rows, self.patch_len)?;
        let mut line = String::new();
        for row in self.weights.chunks_exact(self.patch_len) {
            line.clear();
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    line.push(' ');
                }
                write!(line, "{v:.16e}").expect("writing to a String");
            }
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = |why: &str| Error::OperatorLoad(format!("malformed header {header:?}: {why}"));
    let mut parts = header.split_whitespace();
    if parts.next() != Some(FORMAT_TAG) {
        return Err(bad("missing format tag"));
    }
    if parts.next() != Some(FORMAT_VERSION) {
        return Err(bad("unsupported version"));
    }
    let mut field = |key: &str| -> Result<usize> {
        let tok = parts.next().ok_or_else(|| bad(&format!("missing {key}=")))?;
        tok.strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("field {key}")))
    };
    let rows = field("k")?;
    let patch_len = field("n")?;
    if patch_len == 0 {
        return Err(bad("n must be positive"));
    }
    Ok((rows, patch_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[allow(clippy::needless_range_loop)]
    fn naive_matvec(op: &AnalysisOperator, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; op.rows()];
        for (j, o) in out.iter_mut().enumerate() {
            for i in 0..op.patch_len() {
                *o += op.weights()[j * op.patch_len() + i] * s[i];
            }
        }
        out
    }

    #[test]
    fn default_size() {
        let op = AnalysisOperator::default_operator(9, 2.0).unwrap();
        assert_eq!(op.rows(), 162);
        assert_eq!(op.patch_len(), 81);
        assert_eq!(op.patch_side(), Some(9));
    }

    #[test]
    fn default_small_rows_are_unit_and_zero_mean() {
        let op = AnalysisOperator::default_operator(3, 1.2).unwrap();
        assert_eq!((op.rows(), op.patch_len()), (11, 9));
        for j in 0..op.rows() {
            let row = op.row(j);
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sum: f64 = row.iter().sum();
            assert!((norm - 1.0).abs() < 1e-9, "row {j} norm {norm}");
            assert!(sum.abs() < 1e-9, "row {j} sum {sum}");
        }
    }

    #[test]
    fn default_is_deterministic() {
        let a = AnalysisOperator::default_operator(9, 2.0).unwrap();
        let b = AnalysisOperator::default_operator(9, 2.0).unwrap();
        let same = a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same);
    }

    #[test]
    fn default_rejects_bad_side() {
        assert!(matches!(AnalysisOperator::default_operator(8, 2.0), Err(Error::Parameter(_))));
        assert!(matches!(AnalysisOperator::default_operator(1, 2.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn analyze_matches_naive_loop() {
        let op = AnalysisOperator::default_operator(3, 2.0).unwrap();
        let s = [0.3, -0.7, 0.1, 0.9, -0.2, 0.05, -0.4, 0.6, 0.25];
        let fast = op.analyze(&s).unwrap();
        let slow = naive_matvec(&op, &s);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn analyze_row_against_itself() {
        let op = AnalysisOperator::default_operator(3, 1.2).unwrap();
        let row = op.row(4).to_vec();
        let a = op.analyze(&row).unwrap();
        assert!((a[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analyze_length_mismatch() {
        let op = AnalysisOperator::default_operator(3, 1.2).unwrap();
        assert!(matches!(op.analyze(&[1.0; 8]), Err(Error::Dimension(_))));
    }

    #[test]
    fn load_rejects_square() {
        let mut text = String::from("cosparse-operator v1 k=3 n=3\n");
        for _ in 0..3 {
            text.push_str("1 -1 0\n");
        }
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("not overcomplete"), "{err}");
    }

    #[test]
    fn load_normalizes_rows() {
        let op = AnalysisOperator::default_operator(3, 1.2).unwrap();
        let mut weights = op.weights().to_vec();
        weights[7 * 9..8 * 9].iter_mut().for_each(|v| *v *= 2.0);
        let scaled = AnalysisOperator { weights, ..op.clone() };
        let mut buf = Vec::new();
        scaled.write_to(&mut buf).unwrap();
        let loaded = AnalysisOperator::read_from(buf.as_slice()).unwrap();
        let norm: f64 = loaded.row(7).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn load_errors_name_the_row() {
        let text = "cosparse-operator v1 k=3 n=2\n1 -1\n1 NaN\n0 1\n";
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");

        let text = "cosparse-operator v1 k=3 n=2\n1 -1\n1\n0 1\n";
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");

        let text = "cosparse-operator v1 k=3 n=2\n1 -1\n1 1\n0 1\n";
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1: constant"), "{err}");

        let text = "cosparse v1 k=3 n=2\n";
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");

        let text = "cosparse-operator v1 k=3 n=2\n1 -1\n";
        let err = AnalysisOperator::read_from(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("found 1"), "{err}");
    }
}
