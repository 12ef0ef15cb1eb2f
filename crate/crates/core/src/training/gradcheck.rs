use rand::seq::index::sample;

use crate::nn::{Grads, ParamGroup, ParamStore};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// Smallest denominator for the relative error, so that coordinates whose
/// true gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-7;

/// Multiple of the central-difference roundoff `u·max(|f|, 1)/ε` below which
/// a gradient entry is judged on absolute error.
pub const NOISE_HEADROOM: f64 = 1e6;

/// Default number of sampled coordinates.
pub const MIN_COORDS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    /// Coordinates actually checked.
    pub coords: usize,
    /// Denominator floor used, see [`noise_floor`].
    pub floor: f64,
    pub max_rel_error: f64,
    /// Flat index, analytic value and numeric value at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Denominator floor for a check of a function with value `f0` at step `eps`.
pub fn noise_floor(f0: f64, eps: f64) -> f64 {
    (NOISE_HEADROOM * f64::EPSILON * f0.abs().max(1.0) / eps).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `x`, over
/// `n_coords` coordinates drawn without replacement (all of them if fewer).
pub fn grad_check(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if x.len() != analytic.len() {
        return Err(Error::invalid(format!("{} parameters but {} gradient entries", x.len(), analytic.len())));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let mut idx: Vec<usize> = if n_coords >= x.len() {
        (0..x.len()).collect()
    } else {
        sample(&mut stream(seed, Stream::GradCheck, 0), x.len(), n_coords).into_vec()
    };
    idx.sort_unstable();
    let floor = noise_floor(f(x)?, eps);
    let mut buf = x.to_vec();
    let mut report = GradCheckReport {
        eps,
        coords: idx.len(),
        floor,
        max_rel_error: 0.0,
        worst: None,
    };
    for i in idx {
        buf[i] = x[i] + eps;
        let up = f(&buf)?;
        buf[i] = x[i] - eps;
        let down = f(&buf)?;
        buf[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let e = relative_error(analytic[i], numeric, floor);
        if report.worst.is_none() || e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some((i, analytic[i], numeric));
        }
    }
    Ok(report)
}

/// [`grad_check`] over the parameters of `groups` in a store.
pub fn grad_check_store(
    store: &ParamStore<f64>,
    groups: &[ParamGroup],
    loss: impl Fn(&ParamStore<f64>) -> Result<f64>,
    analytic: &Grads<f64>,
    eps: f64,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let x = store.flatten(groups);
    let g = analytic.flatten(store, groups);
    let f = |flat: &[f64]| {
        let mut s = store.clone();
        s.unflatten(groups, flat);
        loss(&s)
    };
    grad_check(f, &x, &g, eps, n_coords, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = [0.5, -1.0, 2.0];
        let f = |v: &[f64]| Ok(v.iter().map(|a| a * a).sum::<f64>());
        let g: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        let r = grad_check(f, &x, &g, 1e-5, 10, 0).unwrap();
        assert_eq!(r.coords, 3);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [1.0, 2.0];
        let f = |v: &[f64]| Ok(v[0] * v[1]);
        let r = grad_check(f, &x, &[2.0, 2.0], 1e-5, 2, 0).unwrap();
        assert!(r.max_rel_error > 0.4);
        assert_eq!(r.worst.unwrap().0, 1);
    }

    #[test]
    fn subset_is_deterministic() {
        let x: Vec<f64> = (0..500).map(|i| i as f64 * 0.01).collect();
        let f = |v: &[f64]| Ok(v.iter().map(|a| a.sin()).sum::<f64>());
        let g: Vec<f64> = x.iter().map(|a| a.cos()).collect();
        let a = grad_check(f, &x, &g, 1e-5, 200, 4).unwrap();
        let b = grad_check(f, &x, &g, 1e-5, 200, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coords, 200);
        assert!(a.passes(1e-6));
    }

    #[test]
    fn floor_tracks_roundoff_scale() {
        let u = f64::EPSILON;
        assert_eq!(noise_floor(0.5, 1e-5), NOISE_HEADROOM * u / 1e-5);
        assert_eq!(noise_floor(-40.0, 1e-4), NOISE_HEADROOM * u * 40.0 / 1e-4);
        assert_eq!(noise_floor(1.0, 1e3), REL_FLOOR);
        // Roundoff-sized disagreement on a vanishing entry passes, a real
        // error of the same order as the floor does not.
        let fl = noise_floor(1.0, 1e-5);
        assert!(relative_error(1e-10, 1.3e-10, fl) < 1e-4);
        assert!(relative_error(1e-10, fl, fl) > 0.9);
    }
}
