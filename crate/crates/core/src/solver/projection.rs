//! Euclidean projections used by the primal-dual iterations.

/// Projects `v` in place onto the probability simplex `{u >= 0, sum u = 1}`.
///
/// Michelot's finite algorithm: repeatedly project onto the affine hull of the
/// remaining coordinates and drop the ones that went negative.
pub fn project_simplex_in_place(v: &mut [f64]) {
    let n = v.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        v[0] = 1.0;
        return;
    }
    // fast path: already feasible up to rounding
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() <= 1e-15 && v.iter().all(|x| *x >= 0.0) {
        return;
    }
    let mut active = [true; 64];
    let mut active_vec;
    let active: &mut [bool] = if n <= active.len() {
        &mut active[..n]
    } else {
        active_vec = vec![true; n];
        &mut active_vec
    };
    let mut shift;
    loop {
        let (count, total) = v
            .iter()
            .zip(active.iter())
            .filter(|(_, a)| **a)
            .fold((0usize, 0.0), |(c, s), (x, _)| (c + 1, s + x));
        shift = (total - 1.0) / count as f64;
        let mut dropped = false;
        for (x, a) in v.iter().zip(active.iter_mut()) {
            if *a && *x - shift < 0.0 {
                *a = false;
                dropped = true;
            }
        }
        if !dropped {
            break;
        }
    }
    for (x, a) in v.iter_mut().zip(active.iter()) {
        *x = if *a { *x - shift } else { 0.0 };
    }
}

/// Projection onto the simplex, returning a new vector.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

/// Projection of a 2-vector onto the closed disc of the given radius.
pub fn project_ball(xi: [f64; 2], radius: f64) -> [f64; 2] {
    let norm = xi[0].hypot(xi[1]);
    if norm <= radius {
        xi
    } else {
        let s = radius / norm;
        [xi[0] * s, xi[1] * s]
    }
}
