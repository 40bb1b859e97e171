//! Forward-difference gradient with Neumann boundary, its negative adjoint
//! (divergence), and the gradient-weighted edge metric.

use ndarray::{Array2, Array3};

use crate::error::{param_err, Result};

/// Forward differences; channel 0 is along columns (x), channel 1 along rows
/// (y). The difference across the last column/row is zero.
pub fn gradient(u: &Array2<f64>) -> Array3<f64> {
    let (h, w) = u.dim();
    let mut g = Array3::zeros((h, w, 2));
    for r in 0..h {
        for c in 0..w {
            if c + 1 < w {
                g[[r, c, 0]] = u[[r, c + 1]] - u[[r, c]];
            }
            if r + 1 < h {
                g[[r, c, 1]] = u[[r + 1, c]] - u[[r, c]];
            }
        }
    }
    g
}

/// Backward-difference divergence, satisfying `<grad u, xi> = -<u, div xi>`.
pub fn divergence(xi: &Array3<f64>) -> Array2<f64> {
    let (h, w, _) = xi.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut d = 0.0;
        if c + 1 < w {
            d += xi[[r, c, 0]];
        }
        if c > 0 {
            d -= xi[[r, c - 1, 0]];
        }
        if r + 1 < h {
            d += xi[[r, c, 1]];
        }
        if r > 0 {
            d -= xi[[r - 1, c, 1]];
        }
        d
    })
}

/// How gamma in the edge metric is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMode {
    Constant(f64),
    /// Mean gradient magnitude over the image.
    MeanGradient,
}

/// Boundary weight `g(x) = exp(-|grad I(x)| / gamma) / (2 gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMetric {
    g: Array2<f64>,
    gamma: f64,
}

impl EdgeMetric {
    /// Metric from a gray image; gamma is on the intensity scale of `gray`.
    pub fn from_image(gray: &Array2<f64>, mode: GammaMode) -> Result<Self> {
        let grad = gradient(gray);
        let magnitude = Array2::from_shape_fn(gray.dim(), |(r, c)| grad[[r, c, 0]].hypot(grad[[r, c, 1]]));
        let gamma = match mode {
            GammaMode::Constant(gamma) => gamma,
            GammaMode::MeanGradient => magnitude.mean().unwrap_or(0.0),
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return param_err(format!("edge metric gamma must be positive, got {gamma}"));
        }
        let g = magnitude.mapv(|m| (-m / gamma).exp() / (2.0 * gamma));
        Ok(Self { g, gamma })
    }

    /// Constant metric `g = value` (useful for synthetic problems).
    pub fn uniform(dim: (usize, usize), value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return param_err(format!("edge weight must be positive, got {value}"));
        }
        Ok(Self { g: Array2::from_elem(dim, value), gamma: 1.0 / (2.0 * value) })
    }

    pub fn from_weights(g: Array2<f64>) -> Result<Self> {
        if g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return param_err("edge weights must be positive and finite");
        }
        let gamma = 1.0 / (2.0 * g.iter().copied().fold(0.0, f64::max));
        Ok(Self { g, gamma })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> (usize, usize) {
        self.g.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_image_metric() {
        let img = Array2::from_elem((4, 5), 80.0);
        let m = EdgeMetric::from_image(&img, GammaMode::Constant(5.0)).unwrap();
        assert!(m.weights().iter().all(|g| (*g - 0.1).abs() < 1e-15));
        assert!(EdgeMetric::from_image(&img, GammaMode::MeanGradient).is_err());
        assert!(EdgeMetric::from_image(&img, GammaMode::Constant(0.0)).is_err());
    }

    #[test]
    fn gradient_equal_to_gamma() {
        let img = array![[0.0, 5.0], [0.0, 5.0]];
        let m = EdgeMetric::from_image(&img, GammaMode::Constant(5.0)).unwrap();
        let expect = (-1f64).exp() / 10.0;
        assert!((m.weights()[[0, 0]] - expect).abs() < 1e-15);
        assert!((m.weights()[[0, 1]] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mean_gradient_gamma() {
        let img = array![[0.0, 4.0], [0.0, 4.0]];
        let m = EdgeMetric::from_image(&img, GammaMode::MeanGradient).unwrap();
        assert!((m.gamma() - 2.0).abs() < 1e-15);
    }
}
