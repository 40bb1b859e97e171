//! Brush strokes and their rasterization to a scribble mask.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default brush diameter in pixels.
pub const DEFAULT_BRUSH_WIDTH: f64 = 13.0;

fn default_width() -> f64 {
    DEFAULT_BRUSH_WIDTH
}

/// A polyline drawn with a round brush. Points are `[x, y]` in pixel
/// coordinates, pixel centers at integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub label: u8,
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Stroke {
    pub fn validate(&self) -> Result<()> {
        if self.label == 0 {
            return Err(Error::Config("stroke label must be >= 1".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Config(format!("stroke with label {} has no points", self.label)));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("stroke with label {} has a non-finite point", self.label)));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("stroke width must be positive, got {}", self.width)));
        }
        Ok(())
    }
}

/// Validates every stroke and checks that the labels used are exactly
/// `1..=n`. Returns `n` (0 for no strokes).
pub fn validate_strokes(strokes: &[Stroke]) -> Result<usize> {
    for s in strokes {
        s.validate()?;
    }
    let labels: BTreeSet<u8> = strokes.iter().map(|s| s.label).collect();
    let n = labels.len();
    if let Some(&max) = labels.last() {
        if usize::from(max) != n {
            let missing: Vec<String> =
                (1..=max).filter(|l| !labels.contains(l)).map(|l| l.to_string()).collect();
            return Err(Error::Config(format!(
                "stroke labels must be contiguous from 1; missing label(s) {}",
                missing.join(", ")
            )));
        }
    }
    Ok(n)
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    (p[0] - (a[0] + t * dx)).hypot(p[1] - (a[1] + t * dy))
}

/// Paints strokes in order onto a `height x width` mask (later strokes win).
/// A pixel is covered when its center lies within `width / 2` of the polyline.
/// Parts of strokes outside the image are clipped.
pub fn rasterize(strokes: &[Stroke], height: usize, width: usize) -> Array2<u8> {
    let mut mask = Array2::zeros((height, width));
    for s in strokes {
        let radius = s.width / 2.0;
        let segments: Vec<([f64; 2], [f64; 2])> = if s.points.len() == 1 {
            vec![(s.points[0], s.points[0])]
        } else {
            s.points.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in segments {
            let lo_x = (a[0].min(b[0]) - radius).floor().max(0.0) as usize;
            let hi_x = (a[0].max(b[0]) + radius).ceil().min(width as f64 - 1.0);
            let lo_y = (a[1].min(b[1]) - radius).floor().max(0.0) as usize;
            let hi_y = (a[1].max(b[1]) + radius).ceil().min(height as f64 - 1.0);
            if hi_x < 0.0 || hi_y < 0.0 {
                continue;
            }
            for y in lo_y..=hi_y as usize {
                for x in lo_x..=hi_x as usize {
                    if distance_to_segment([x as f64, y as f64], a, b) <= radius {
                        mask[[y, x]] = s.label;
                    }
                }
            }
        }
    }
    mask
}
