//! Mode finding for Gaussian mixtures.
//!
//! Every mode is found by a fixed-point hill climb started from each
//! component centroid. The iteration
//!
//! ```text
//! x ← (Σ_k p(k|x) Σ_k⁻¹)⁻¹ Σ_k p(k|x) Σ_k⁻¹ μ_k
//! ```
//!
//! is an EM step for the mixture density seen as a function of `x`, so the
//! density never decreases along a climb. For a shared isotropic covariance
//! it is the Gaussian mean-shift update `x ← Σ_k p(k|x) μ_k`.
//!
//! A mixture in two or more dimensions can in rare cases have more modes
//! than components; such extra modes are not reachable from any centroid
//! and are not reported.

use rayon::prelude::*;

use crate::math;
use crate::mixture::{Covariance, GaussianMixture};

/// Settings of the mode search.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSearch {
    /// A climb stops once a step is shorter than this...
    pub tol_step: f64,
    /// ...and `‖∇p(x)‖ / p(x)` is below this.
    pub tol_grad: f64,
    /// Converged points closer than this are one mode. `None` uses
    /// `1e-4 · scale` where `scale` is the root-mean component variance.
    pub merge_radius: Option<f64>,
    pub max_iter: usize,
    /// Modes whose density is below this fraction of the highest mode's are
    /// dropped. They sit in the far tails, where only log-space arithmetic
    /// can resolve them, and carry no probability mass. `0` keeps them all.
    pub min_relative_density: f64,
    /// Components whose weight is below this fraction of the largest weight
    /// are left out of the climbs; their pull on any mode is of the same
    /// relative order. Conditionals of large mixtures often have only a
    /// handful of components with appreciable weight. `0` keeps them all.
    pub min_relative_weight: f64,
}

impl Default for ModeSearch {
    fn default() -> Self {
        Self {
            tol_step: 1e-8,
            tol_grad: 1e-6,
            merge_radius: None,
            max_iter: 500,
            min_relative_density: 1e-10,
            min_relative_weight: 1e-12,
        }
    }
}

impl ModeSearch {
    pub fn effective_merge_radius(&self, gm: &GaussianMixture) -> f64 {
        self.merge_radius.unwrap_or(1e-4 * gm.scale()).max(1e-12)
    }
}

/// One located mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub point: Vec<f64>,
    pub log_density: f64,
}

/// A hill climb that hit `max_iter` before meeting both tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct NonConvergence {
    /// Index of the centroid the climb started from.
    pub start: usize,
    pub last_step: f64,
    pub point: Vec<f64>,
}

/// All modes found, ordered by decreasing density.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub diagnostics: Vec<NonConvergence>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.modes.iter().map(|m| m.point.as_slice())
    }
}

/// Result of a single hill climb.
#[derive(Debug, Clone)]
pub struct Climb {
    pub point: Vec<f64>,
    pub log_density: f64,
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
    /// `ln p(x)` at every visited point, when tracing was requested.
    pub trace: Option<Vec<f64>>,
}

// Fixed-point image of `x`, the relative gradient ∇p/p at `x`, and ln p(x).
fn step_and_gradient(gm: &GaussianMixture, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let d = gm.dim();
    let mut r = gm.joint_log_terms(x);
    let lse = math::softmax_in_place(&mut r);
    if !lse.is_finite() {
        // x lies where every component underflows: move to the nearest
        // centroid in Mahalanobis terms, which is where the climb would go.
        let k = nearest_component(gm, x);
        let mut g = vec![0.0; d];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (gm.means()[k][j] - x[j]) / gm.variance(k, j);
        }
        return (gm.means()[k].clone(), g, lse);
    }
    let mut next = vec![0.0; d];
    let mut grad = vec![0.0; d];
    match gm.covariance() {
        Covariance::SharedIsotropic(v) => {
            for (rk, mu) in r.iter().zip(gm.means()) {
                if *rk == 0.0 {
                    continue;
                }
                for j in 0..d {
                    next[j] += rk * mu[j];
                }
            }
            for j in 0..d {
                grad[j] = (next[j] - x[j]) / v;
            }
        }
        Covariance::Diagonal(vars) => {
            let mut precision = vec![0.0; d];
            for ((rk, mu), var) in r.iter().zip(gm.means()).zip(vars) {
                if *rk == 0.0 {
                    continue;
                }
                for j in 0..d {
                    let p = rk / var[j];
                    precision[j] += p;
                    next[j] += p * mu[j];
                }
            }
            for j in 0..d {
                grad[j] = next[j] - precision[j] * x[j];
                next[j] /= precision[j];
            }
        }
    }
    (next, grad, lse)
}

fn nearest_component(gm: &GaussianMixture, x: &[f64]) -> usize {
    (0..gm.n_components())
        .filter(|&k| gm.log_weights()[k] > f64::NEG_INFINITY)
        .map(|k| {
            let q: f64 = (0..gm.dim())
                .map(|j| (x[j] - gm.means()[k][j]).powi(2) / gm.variance(k, j))
                .sum();
            (k, q)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// One fixed-point (mean-shift) update from `x`.
pub fn fixed_point_step(gm: &GaussianMixture, x: &[f64]) -> Vec<f64> {
    step_and_gradient(gm, x).0
}

/// Analytic gradient of the mixture density `∇p(x)`.
pub fn density_gradient(gm: &GaussianMixture, x: &[f64]) -> Vec<f64> {
    let (_, g_rel, lse) = step_and_gradient(gm, x);
    let p = lse.exp();
    g_rel.into_iter().map(|g| g * p).collect()
}

/// Runs the fixed-point iteration from `start` until both tolerances are
/// met or `max_iter` updates have been made.
pub fn hill_climb(gm: &GaussianMixture, start: &[f64], search: &ModeSearch, trace: bool) -> Climb {
    let mut x = start.to_vec();
    let mut log_trace = trace.then(Vec::new);
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut log_p;
    loop {
        let (next, grad, lse) = step_and_gradient(gm, &x);
        log_p = lse;
        if let Some(t) = log_trace.as_mut() {
            t.push(lse);
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if last_step < search.tol_step && grad_norm < search.tol_grad {
            converged = true;
            break;
        }
        if iterations == search.max_iter {
            break;
        }
        last_step = math::euclidean_distance(&next, &x);
        x = next;
        iterations += 1;
    }
    Climb { point: x, log_density: log_p, iterations, converged, last_step, trace: log_trace }
}

/// Finds all modes reachable from the centroids with default settings.
pub fn find_all_modes(gm: &GaussianMixture) -> ModeSet {
    find_all_modes_with(gm, &ModeSearch::default())
}

pub fn find_all_modes_with(gm: &GaussianMixture, search: &ModeSearch) -> ModeSet {
    let top = gm.log_weights().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = if search.min_relative_weight > 0.0 { top + search.min_relative_weight.ln() } else { f64::NEG_INFINITY };
    let starts: Vec<usize> = (0..gm.n_components())
        .filter(|&k| gm.log_weights()[k] > f64::NEG_INFINITY && gm.log_weights()[k] >= floor)
        .collect();
    let pruned;
    let work = if starts.len() < gm.n_components() {
        pruned = gm.select_components(&starts).expect("the heaviest component is always kept");
        &pruned
    } else {
        gm
    };
    let climbs: Vec<(usize, Climb)> = starts
        .par_iter()
        .map(|&k| {
            let mut c = hill_climb(work, &gm.means()[k], search, false);
            if !std::ptr::eq(work, gm) {
                c.log_density = gm.log_density(&c.point).unwrap_or(f64::NEG_INFINITY);
            }
            (k, c)
        })
        .collect();

    let diagnostics = climbs
        .iter()
        .filter(|(_, c)| !c.converged)
        .map(|(k, c)| NonConvergence { start: *k, last_step: c.last_step, point: c.point.clone() })
        .collect();

    let mut order: Vec<usize> = (0..climbs.len()).collect();
    order.sort_by(|&a, &b| {
        climbs[b].1.log_density
            .total_cmp(&climbs[a].1.log_density)
            .then(climbs[a].0.cmp(&climbs[b].0))
    });
    let radius = search.effective_merge_radius(gm);
    let mut modes: Vec<Mode> = Vec::new();
    for i in order {
        let c = &climbs[i].1;
        if modes.iter().all(|m| math::euclidean_distance(&m.point, &c.point) >= radius) {
            modes.push(Mode { point: c.point.clone(), log_density: c.log_density });
        }
    }
    if search.min_relative_density > 0.0 {
        if let Some(top) = modes.first().map(|m| m.log_density) {
            let floor = top + search.min_relative_density.ln();
            modes.retain(|m| m.log_density >= floor);
        }
    }
    ModeSet { modes, diagnostics }
}

/// Location of the highest-density mode.
pub fn global_mode(gm: &GaussianMixture) -> Vec<f64> {
    global_mode_with(gm, &ModeSearch::default())
}

pub fn global_mode_with(gm: &GaussianMixture, search: &ModeSearch) -> Vec<f64> {
    find_all_modes_with(gm, search)
        .modes
        .into_iter()
        .next()
        .map(|m| m.point)
        .expect("a valid mixture has at least one mode")
}
