//! Convex relaxation of the multilabel Potts energy with an edge-weighted
//! boundary term and per-label MDL costs, minimized by a diagonally
//! preconditioned primal-dual scheme.
//!
//! The discrete saddle-point problem is
//!
//! ```text
//! min_{u in simplex^|Ω|, m in [0,1]^n}  max_{|xi_i(x)| <= λ g(x)/2, mu <= 0}
//!     Σ_i <u_i, f_i> + <grad u_i, xi_i> + ν m_i + Σ_x mu_i(x) (m_i - u_i(x))
//! ```
//!
//! Fields are stored pixel-major: all labels of a pixel are contiguous, so the
//! per-pixel simplex projection touches one slice and every update sweep is
//! parallel over image rows.

mod grid;
mod projection;

pub use grid::{divergence, gradient, EdgeMetric, GammaMode};
pub use projection::{project_ball, project_simplex, project_simplex_in_place};

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::likelihood::{argmin, DataTerm};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Boundary length weight.
    pub lambda: f64,
    /// Cost per label present in the segmentation.
    pub nu: f64,
    pub max_iters: usize,
    /// Stop once [`RelaxationState::residual`] falls below this.
    pub tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { lambda: 1.0, nu: 0.0, max_iters: 2000, tol: 1e-5 }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return param_err(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return param_err(format!("nu must be finite and >= 0, got {}", self.nu));
        }
        if self.max_iters == 0 {
            return param_err("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Primal variables `u`, `m`, dual variables `xi`, `mu`, their over-relaxed
/// copies and per-variable step sizes.
#[derive(Debug, Clone)]
pub struct RelaxationState {
    labels: usize,
    height: usize,
    width: usize,
    u: Vec<f64>,
    u_bar: Vec<f64>,
    m: Vec<f64>,
    m_bar: Vec<f64>,
    /// `xi[(p * labels + i) * 2 + {0: x, 1: y}]`
    xi: Vec<f64>,
    mu: Vec<f64>,
    tau_u: Vec<f64>,
    tau_xi: f64,
    tau_mu: f64,
    tau_m: f64,
    iteration: usize,
    residual: f64,
}

impl RelaxationState {
    /// Starts from the uniform labeling with every label active (`m = 1`)
    /// and zero duals.
    pub fn new(labels: usize, height: usize, width: usize) -> Result<Self> {
        if labels == 0 || height == 0 || width == 0 {
            return param_err("relaxation needs at least one label and one pixel");
        }
        let pixels = height * width;
        let u = vec![1.0 / labels as f64; pixels * labels];
        // diagonal preconditioning: tau_j = 1 / column sum, sigma_i = 1 / row sum
        let tau_u = (0..pixels)
            .map(|p| {
                let (r, c) = (p / width, p % width);
                let degree = usize::from(c + 1 < width)
                    + usize::from(c > 0)
                    + usize::from(r + 1 < height)
                    + usize::from(r > 0);
                1.0 / (degree as f64 + 1.0)
            })
            .collect();
        Ok(Self {
            labels,
            height,
            width,
            u_bar: u.clone(),
            u,
            m: vec![1.0; labels],
            m_bar: vec![1.0; labels],
            xi: vec![0.0; pixels * labels * 2],
            mu: vec![0.0; pixels * labels],
            tau_u,
            tau_xi: 0.5,
            tau_mu: 0.5,
            tau_m: 1.0 / pixels as f64,
            iteration: 0,
            residual: f64::INFINITY,
        })
    }

    /// Builds a state from explicit primal values (duals zero). Each pixel of
    /// `u` is projected onto the simplex and `m` is clamped to `[0, 1]`.
    pub fn from_primal(labels: usize, height: usize, width: usize, mut u: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if u.len() != labels * height * width || m.len() != labels {
            return dim_err("primal fields do not match labels x pixels");
        }
        let mut state = Self::new(labels, height, width)?;
        u.chunks_mut(labels).for_each(project_simplex_in_place);
        state.u_bar = u.clone();
        state.u = u;
        state.m = m.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        state.m_bar = state.m.clone();
        Ok(state)
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Indicator relaxation, pixel-major.
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn u_at(&self, label: usize, (r, c): (usize, usize)) -> f64 {
        self.u[(r * self.width + c) * self.labels + label]
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Change measure of the last step: mean over pixels of
    /// `Σ_i |Δu_i| + τ_u (|Δxi_i|_1 + |Δmu_i|)`, plus `Σ_i |Δm_i|`.
    ///
    /// The dual part catches iterations where `u` sits on a simplex face while
    /// the duals are still accumulating.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// One iteration of the preconditioned primal-dual scheme: dual ascent on
/// `xi` and `mu`, projected descent on `m` and `u`, then over-relaxation.
pub fn primal_dual_step(
    state: &mut RelaxationState,
    data: &DataTerm,
    metric: &EdgeMetric,
    lambda: f64,
    nu: f64,
) -> Result<()> {
    let n = state.labels;
    let (h, w) = (state.height, state.width);
    if data.labels() != n || data.dim() != (h, w) {
        return dim_err(format!(
            "data term is {} labels on {:?}, state is {n} labels on {h}x{w}",
            data.labels(),
            data.dim()
        ));
    }
    if metric.dim() != (h, w) {
        return dim_err(format!("edge metric is {:?}, state is {h}x{w}", metric.dim()));
    }
    let row_len = w * n;
    let g = metric.weights().as_slice().expect("standard layout");
    let f = data.values();

    // xi <- Π_K(xi + τ_xi grad ū)
    let (tau_xi, tau_mu) = (state.tau_xi, state.tau_mu);
    let u_bar = &state.u_bar;
    let tau_u = &state.tau_u;
    let dual_change: f64 = state
        .xi
        .par_chunks_mut(row_len * 2)
        .zip(state.mu.par_chunks_mut(row_len))
        .enumerate()
        .map(|(r, (xi_row, mu_row))| {
            let mut change = 0.0;
            for c in 0..w {
                let p = r * w + c;
                let radius = 0.5 * lambda * g[p];
                let mut px_change = 0.0;
                for i in 0..n {
                    let here = u_bar[p * n + i];
                    let gx = if c + 1 < w { u_bar[(p + 1) * n + i] - here } else { 0.0 };
                    let gy = if r + 1 < h { u_bar[(p + w) * n + i] - here } else { 0.0 };
                    let k = (c * n + i) * 2;
                    let old = [xi_row[k], xi_row[k + 1]];
                    let new = project_ball([old[0] + tau_xi * gx, old[1] + tau_xi * gy], radius);
                    xi_row[k] = new[0];
                    xi_row[k + 1] = new[1];
                    px_change += (new[0] - old[0]).abs() + (new[1] - old[1]).abs();
                }
                change += tau_u[p] * px_change;
            }
            // mu <- Π_{<=0}(mu + τ_mu (m̄ - ū))
            for c in 0..w {
                let p = r * w + c;
                let mut px_change = 0.0;
                for i in 0..n {
                    let k = c * n + i;
                    let old = mu_row[k];
                    let new = (old + tau_mu * (state.m_bar[i] - u_bar[p * n + i])).min(0.0);
                    mu_row[k] = new;
                    px_change += (new - old).abs();
                }
                change += tau_u[p] * px_change;
            }
            change
        })
        .sum();

    // m <- Π_[0,1](m - τ_m (ν + Σ_x mu))
    let mu_sums: Vec<f64> = {
        let mu = &state.mu;
        (0..n).map(|i| mu.iter().skip(i).step_by(n).sum()).collect()
    };
    let m_old = state.m.clone();
    let mut m_change = 0.0;
    for i in 0..n {
        let new = (state.m[i] - state.tau_m * (nu + mu_sums[i])).clamp(0.0, 1.0);
        if !new.is_finite() {
            return Err(Error::Divergence { iteration: state.iteration + 1, field: "m" });
        }
        m_change += (new - m_old[i]).abs();
        state.m[i] = new;
        state.m_bar[i] = 2.0 * new - m_old[i];
    }

    // u <- Π_simplex(u - τ_u (-div xi + f - mu)); ū <- 2u_new - u_old
    let xi = &state.xi;
    let mu = &state.mu;
    let primal_change: f64 = state
        .u
        .par_chunks_mut(row_len)
        .zip(state.u_bar.par_chunks_mut(row_len))
        .enumerate()
        .map(|(r, (u_row, ubar_row))| {
            let mut change = 0.0;
            let mut old = vec![0.0; n];
            for c in 0..w {
                let p = r * w + c;
                let px = &mut u_row[c * n..(c + 1) * n];
                old.copy_from_slice(px);
                for i in 0..n {
                    let at = |q: usize, comp: usize| xi[(q * n + i) * 2 + comp];
                    let mut div = 0.0;
                    if c + 1 < w {
                        div += at(p, 0);
                    }
                    if c > 0 {
                        div -= at(p - 1, 0);
                    }
                    if r + 1 < h {
                        div += at(p, 1);
                    }
                    if r > 0 {
                        div -= at(p - w, 1);
                    }
                    px[i] -= tau_u[p] * (-div + f[p * n + i] - mu[p * n + i]);
                }
                project_simplex_in_place(px);
                for i in 0..n {
                    change += (px[i] - old[i]).abs();
                    ubar_row[c * n + i] = 2.0 * px[i] - old[i];
                }
            }
            change
        })
        .sum();

    state.iteration += 1;
    let pixels = (h * w) as f64;
    state.residual = (primal_change + dual_change) / pixels + m_change;
    if !state.residual.is_finite() {
        let field = if !primal_change.is_finite() { "u" } else { "xi/mu" };
        return Err(Error::Divergence { iteration: state.iteration, field });
    }
    Ok(())
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: RelaxationState,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates [`primal_dual_step`] from the uniform state until the residual
/// drops below `params.tol` or `params.max_iters` is reached.
pub fn solve(data: &DataTerm, metric: &EdgeMetric, params: &SolverParams) -> Result<SolveOutcome> {
    let (h, w) = data.dim();
    let state = RelaxationState::new(data.labels(), h, w)?;
    solve_from(state, data, metric, params, |_| {})
}

/// Like [`solve`], starting from `state` and calling `observe` after each
/// iteration with a read-only view of the state.
pub fn solve_from(
    mut state: RelaxationState,
    data: &DataTerm,
    metric: &EdgeMetric,
    params: &SolverParams,
    mut observe: impl FnMut(&RelaxationState),
) -> Result<SolveOutcome> {
    params.validate()?;
    let mut converged = false;
    for _ in 0..params.max_iters {
        primal_dual_step(&mut state, data, metric, params.lambda, params.nu)?;
        observe(&state);
        if state.residual < params.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveOutcome { iterations: state.iteration, state, converged })
}

/// Hard labeling with 0-based class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    labels: Array2<usize>,
    classes: usize,
}

impl Segmentation {
    pub fn new(labels: Array2<usize>, classes: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return param_err(format!("label {bad} out of range for {classes} classes"));
        }
        Ok(Self { labels, classes })
    }

    pub fn labels(&self) -> &Array2<usize> {
        &self.labels
    }

    pub fn into_labels(self) -> Array2<usize> {
        self.labels
    }

    /// Number of classes the labeling may use (present or not).
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Classes that occur at least once.
    pub fn active_labels(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    /// Same labeling with room for more classes.
    pub fn with_classes(&self, classes: usize) -> Result<Self> {
        Self::new(self.labels.clone(), classes)
    }
}

/// Per-pixel argmax of `u`, ties to the lowest label.
pub fn binarize(state: &RelaxationState) -> Segmentation {
    let n = state.labels;
    let labels = Array2::from_shape_fn((state.height, state.width), |(r, c)| {
        let px = &state.u[(r * state.width + c) * n..(r * state.width + c + 1) * n];
        let neg: Vec<f64> = px.iter().map(|v| -v).collect();
        argmin(&neg)
    });
    Segmentation { labels, classes: n }
}

fn check_shapes(dim: (usize, usize), labels: usize, data: &DataTerm, metric: &EdgeMetric) -> Result<()> {
    if data.dim() != dim || metric.dim() != dim {
        return dim_err(format!(
            "labeling {dim:?}, data term {:?}, edge metric {:?}",
            data.dim(),
            metric.dim()
        ));
    }
    if data.labels() < labels {
        return dim_err(format!("data term has {} labels, labeling needs {labels}", data.labels()));
    }
    Ok(())
}

/// Edge-weighted total variation `Σ_x g(x) |grad v(x)|` of one label's
/// indicator, where `value(p)` reads the indicator at flat index `p`.
fn weighted_tv(h: usize, w: usize, g: &Array2<f64>, value: impl Fn(usize) -> f64 + Sync) -> f64 {
    (0..h)
        .into_par_iter()
        .map(|r| {
            let mut sum = 0.0;
            for c in 0..w {
                let p = r * w + c;
                let here = value(p);
                let gx = if c + 1 < w { value(p + 1) - here } else { 0.0 };
                let gy = if r + 1 < h { value(p + w) - here } else { 0.0 };
                sum += g[[r, c]] * gx.hypot(gy);
            }
            sum
        })
        .sum()
}

/// Discrete energy of a hard labeling: data cost, `λ/2` times the weighted
/// boundary length of every region, and `ν` per present label.
pub fn energy(seg: &Segmentation, data: &DataTerm, metric: &EdgeMetric, lambda: f64, nu: f64) -> Result<f64> {
    let (h, w) = seg.dim();
    check_shapes((h, w), seg.classes.min(data.labels()), data, metric)?;
    if seg.labels.iter().any(|l| *l >= data.labels()) {
        return dim_err("labeling uses a class the data term does not have");
    }
    let labels = seg.labels.as_slice().expect("standard layout");
    let data_cost: f64 = labels.iter().enumerate().map(|(p, &l)| data.pixel(p)[l]).sum();
    let active = seg.active_labels();
    let boundary: f64 = active
        .iter()
        .map(|&i| weighted_tv(h, w, metric.weights(), |p| f64::from(u8::from(labels[p] == i))))
        .sum();
    Ok(data_cost + 0.5 * lambda * boundary + nu * active.len() as f64)
}

/// Energy of the relaxed state: fractional `u` and `ν Σ m_i` in place of the
/// label count.
pub fn relaxed_energy(state: &RelaxationState, data: &DataTerm, metric: &EdgeMetric, lambda: f64, nu: f64) -> Result<f64> {
    let (h, w) = (state.height, state.width);
    let n = state.labels;
    check_shapes((h, w), n, data, metric)?;
    if data.labels() != n {
        return dim_err("data term and state differ in label count");
    }
    let data_cost: f64 = state.u.iter().zip(data.values()).map(|(u, f)| u * f).sum();
    let boundary: f64 = (0..n).map(|i| weighted_tv(h, w, metric.weights(), |p| state.u[p * n + i])).sum();
    Ok(data_cost + 0.5 * lambda * boundary + nu * state.m.iter().sum::<f64>())
}

/// Relative excess of the binarized energy over the relaxed energy,
/// `(E(labels) - E_relaxed(state)) / max(|E_relaxed(state)|, 1e-9)`.
pub fn optimality_gap(
    state: &RelaxationState,
    labels: &Segmentation,
    data: &DataTerm,
    metric: &EdgeMetric,
    lambda: f64,
    nu: f64,
) -> Result<f64> {
    let hard = energy(labels, data, metric, lambda, nu)?;
    let relaxed = relaxed_energy(state, data, metric, lambda, nu)?;
    Ok((hard - relaxed) / relaxed.abs().max(1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_data(n: usize, h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> DataTerm {
        let mut values = Vec::with_capacity(n * h * w);
        for p in 0..h * w {
            for i in 0..n {
                values.push(f(p, i));
            }
        }
        DataTerm::new(n, h, w, values).unwrap()
    }

    #[test]
    fn single_label_is_forced() {
        let data = constant_data(1, 3, 3, |p, _| p as f64);
        let metric = EdgeMetric::uniform((3, 3), 0.1).unwrap();
        let out = solve(&data, &metric, &SolverParams { lambda: 1.0, nu: 0.0, max_iters: 5, tol: 0.0 }).unwrap();
        assert!(out.state.u().iter().all(|u| *u == 1.0));
    }

    #[test]
    fn pure_data_term_two_pixels() {
        let data = constant_data(2, 1, 2, |p, i| if p == i { 0.0 } else { 1.0 });
        let metric = EdgeMetric::uniform((1, 2), 0.1).unwrap();
        let params = SolverParams { lambda: 0.0, nu: 0.0, max_iters: 500, tol: 1e-9 };
        let out = solve(&data, &metric, &params).unwrap();
        let seg = binarize(&out.state);
        assert_eq!(seg.labels().as_slice().unwrap(), &[0, 1]);
        assert!((out.state.u_at(0, (0, 0)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn binarize_ties_and_idempotence() {
        let state = RelaxationState::from_primal(2, 1, 3, vec![0.6, 0.4, 0.5, 0.5, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let seg = binarize(&state);
        assert_eq!(seg.labels().as_slice().unwrap(), &[0, 0, 1]);
        let one_hot: Vec<f64> = seg.labels().iter().flat_map(|&l| [f64::from(u8::from(l == 0)), f64::from(u8::from(l == 1))]).collect();
        let again = binarize(&RelaxationState::from_primal(2, 1, 3, one_hot, vec![1.0, 1.0]).unwrap());
        assert_eq!(seg, again);
    }

    #[test]
    fn energy_hand_values() {
        let data = constant_data(2, 1, 2, |_, _| 0.0);
        let metric = EdgeMetric::uniform((1, 2), 1.0 / 10.0).unwrap();
        let seg = Segmentation::new(ndarray::array![[0, 1]], 2).unwrap();
        let e = energy(&seg, &data, &metric, 2.0, 0.0).unwrap();
        assert!((e - 0.2).abs() < 1e-12);

        let single = Segmentation::new(Array2::zeros((1, 2)), 2).unwrap();
        assert!((energy(&single, &data, &metric, 2.0, 7.0).unwrap() - 7.0).abs() < 1e-12);
        let data3 = constant_data(3, 1, 2, |_, _| 0.0);
        let wider = single.with_classes(3).unwrap();
        assert_eq!(energy(&wider, &data3, &metric, 2.0, 7.0).unwrap(), energy(&single, &data, &metric, 2.0, 7.0).unwrap());
    }

    #[test]
    fn binary_state_has_zero_gap() {
        let data = constant_data(2, 2, 2, |p, i| if (p % 2) == i { 0.5 } else { 2.0 });
        let metric = EdgeMetric::uniform((2, 2), 0.1).unwrap();
        let u = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let state = RelaxationState::from_primal(2, 2, 2, u, vec![1.0, 1.0]).unwrap();
        let seg = binarize(&state);
        let gap = optimality_gap(&state, &seg, &data, &metric, 3.0, 1.5).unwrap();
        assert!(gap.abs() < 1e-9);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let data = constant_data(2, 2, 2, |_, _| 0.0);
        let metric = EdgeMetric::uniform((2, 3), 0.1).unwrap();
        assert!(solve(&data, &metric, &SolverParams::default()).is_err());
        let metric = EdgeMetric::uniform((2, 2), 0.1).unwrap();
        assert!(solve(&data, &metric, &SolverParams { max_iters: 0, ..Default::default() }).is_err());
    }
}
