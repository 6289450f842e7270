//! Fitting the joint density from complete training data.
//!
//! Two trainers are provided: plain EM for a Gaussian mixture with one
//! isotropic variance per component, and the generative topographic
//! mapping (GTM), whose density is an equal-weight mixture of isotropic
//! Gaussians centred on the image of a regular latent grid under an RBF
//! network. Both record their training log-likelihood after every
//! iteration.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, log_sum_exp, LN_2PI};
use crate::mixture::{Covariance, GaussianMixture};

/// Settings shared by both trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_iter: usize,
    /// Stop once `|ΔL| < rel_tol · |L|`.
    pub rel_tol: f64,
    pub seed: u64,
    /// Components (EM) or latent grid points (GTM).
    pub k: usize,
    /// GTM latent dimension.
    pub latent_dim: usize,
    /// GTM basis function count; must be a perfect `latent_dim` power.
    pub basis_count: usize,
    /// Basis width as a multiple of the spacing between basis centres.
    pub width_factor: f64,
    /// Ridge penalty on the GTM weights, in units of the noise variance.
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-6,
            seed: 0,
            k: 10,
            latent_dim: 1,
            basis_count: 9,
            width_factor: 1.0,
            ridge: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive".into()));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.width_factor > 0.0) || !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter("width factor must be positive, ridge non-negative".into()));
        }
        Ok(())
    }
}

/// Log-likelihood trace and warnings from a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Training log-likelihood of the initial model and after every update.
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub report: FitReport,
}

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let d = data.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::InvalidParameter("training data is empty".into()));
    }
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::ShapeMismatch("ragged training data".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    Ok(d)
}

fn column_means(data: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = data.len() as f64;
    let mut m = vec![0.0; d];
    for row in data {
        for (a, v) in m.iter_mut().zip(row) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Average over coordinates of the per-coordinate data variance.
fn global_variance(data: &[Vec<f64>], mean: &[f64]) -> f64 {
    let n = data.len() as f64;
    let d = mean.len() as f64;
    data.iter().map(|r| math::squared_distance(r, mean)).sum::<f64>() / (n * d)
}

fn converged(prev: f64, cur: f64, rel_tol: f64) -> bool {
    (cur - prev).abs() < rel_tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// `k` distinct row indices: the first uniform, each next one drawn with
/// probability proportional to the squared distance to the closest pick.
fn seed_indices<R: rand::Rng>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    let n = data.len();
    let mut picks = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data.iter().map(|x| math::squared_distance(x, &data[picks[0]])).collect();
    while picks.len() < k {
        let next = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            // every remaining point duplicates a pick: fall back to unused rows
            Err(_) => (0..n).find(|i| !picks.contains(i)).expect("n > k"),
        };
        picks.push(next);
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(math::squared_distance(x, &data[next]));
        }
        for &p in &picks {
            nearest[p] = 0.0;
        }
    }
    picks
}

/// EM for a mixture of `k` Gaussians, each with its own isotropic variance.
///
/// Means start at `k` distinct data points drawn with `cfg.seed` (squared
/// distance weighted, so the picks spread over the data), weights
/// uniform, and every variance at the mean squared distance from a point to
/// its nearest initial mean (the global data variance when `k = 1`). A variance that collapses
/// below `1e-10 · (data scale)²` is clamped and a warning recorded.
pub fn em_fit_isotropic(data: &[Vec<f64>], k: usize, cfg: &TrainConfig) -> Result<EmFit> {
    let cfg = TrainConfig { k, ..cfg.clone() };
    cfg.validate()?;
    let d = check_data(data)?;
    let n = data.len();
    if n <= k {
        return Err(Error::InvalidParameter(format!("need more than K={k} points, got {n}")));
    }
    let data_mean = column_means(data, d);
    let scale2 = global_variance(data, &data_mean);
    let floor = 1e-10 * scale2.max(f64::MIN_POSITIVE);

    let mut rng = math::rng_stream(cfg.seed, math::stream::EM_INIT);
    let picks = seed_indices(data, k, &mut rng);
    let mut means: Vec<Vec<f64>> = picks.iter().map(|&i| data[i].clone()).collect();
    // Within-cell spread around the nearest initial centre; equals the
    // global variance when k = 1.
    let cell_var = data
        .iter()
        .map(|x| means.iter().map(|m| math::squared_distance(x, m)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / (n * d) as f64;
    let init_var = if k == 1 { scale2 } else { cell_var };
    let mut vars = vec![init_var.max(floor); k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut report = FitReport::default();
    let dd = d as f64;
    let e_step = |means: &[Vec<f64>], vars: &[f64], weights: &[f64]| -> (Vec<Vec<f64>>, f64) {
        let rows: Vec<(Vec<f64>, f64)> = data
            .par_iter()
            .map(|x| {
                let mut lr: Vec<f64> = (0..k)
                    .map(|j| {
                        weights[j].ln()
                            - 0.5 * dd * (LN_2PI + vars[j].ln())
                            - 0.5 * math::squared_distance(x, &means[j]) / vars[j]
                    })
                    .collect();
                let lse = math::softmax_in_place(&mut lr);
                (lr, lse)
            })
            .collect();
        let ll = rows.iter().map(|r| r.1).sum();
        (rows.into_iter().map(|r| r.0).collect(), ll)
    };

    let (mut resp, mut ll) = e_step(&means, &vars, &weights);
    report.log_likelihood.push(ll);
    for _ in 0..cfg.max_iter {
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= 0.0 {
                weights[j] = 0.0;
                continue;
            }
            weights[j] = nk / n as f64;
            let mut mu = vec![0.0; d];
            for (r, x) in resp.iter().zip(data) {
                for (m, v) in mu.iter_mut().zip(x) {
                    *m += r[j] * v;
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk);
            let ss: f64 = resp.iter().zip(data).map(|(r, x)| r[j] * math::squared_distance(x, &mu)).sum();
            let mut v = ss / (dd * nk);
            if !(v >= floor) {
                report.warnings.push(format!("variance of component {j} clamped to {floor:e}"));
                v = floor;
            }
            means[j] = mu;
            vars[j] = v;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let prev = ll;
        (resp, ll) = e_step(&means, &vars, &weights);
        report.log_likelihood.push(ll);
        if converged(prev, ll, cfg.rel_tol) {
            report.converged = true;
            break;
        }
    }

    let covariance = Covariance::Diagonal(vars.iter().map(|&v| vec![v; d]).collect());
    let mixture = GaussianMixture::with_unnormalised_weights(weights, means, covariance)?;
    Ok(EmFit { mixture, report })
}

/// A trained generative topographic mapping.
///
/// The latent grid has `grid_side^latent_dim` points and the RBF network
/// `basis_side^latent_dim` Gaussian basis functions plus a bias, all laid
/// out regularly in `[-1, 1]^latent_dim`. Grid points are ordered with the
/// last latent coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtmModel {
    pub latent_dim: usize,
    pub grid_side: usize,
    pub basis_side: usize,
    pub basis_width: f64,
    /// `D × (F + 1)`; the last column is the bias.
    pub weight_matrix: Vec<Vec<f64>>,
    /// Shared isotropic noise variance `σ² = 1/β`.
    pub variance: f64,
}

/// Regular grid of `side^dim` points in `[-1, 1]^dim`.
pub fn regular_grid(side: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if side == 1 {
        vec![0.0]
    } else {
        (0..side).map(|i| -1.0 + 2.0 * i as f64 / (side - 1) as f64).collect()
    };
    let total = side.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for slot in p.iter_mut().rev() {
                *slot = axis[idx % side];
                idx /= side;
            }
            p
        })
        .collect()
}

/// Exact integer `dim`-th root of `count`, if there is one.
fn exact_root(count: usize, dim: usize) -> Option<usize> {
    let guess = (count as f64).powf(1.0 / dim as f64).round() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&s| s > 0 && s.pow(dim as u32) == count)
}

impl GtmModel {
    pub fn n_grid(&self) -> usize {
        self.grid_side.pow(self.latent_dim as u32)
    }

    pub fn n_basis(&self) -> usize {
        self.basis_side.pow(self.latent_dim as u32)
    }

    pub fn data_dim(&self) -> usize {
        self.weight_matrix.len()
    }

    pub fn latent_grid(&self) -> Vec<Vec<f64>> {
        regular_grid(self.grid_side, self.latent_dim)
    }

    pub fn basis_centres(&self) -> Vec<Vec<f64>> {
        regular_grid(self.basis_side, self.latent_dim)
    }

    /// RBF activations `[φ_1(x), …, φ_F(x), 1]`.
    pub fn basis_activations(&self, x: &[f64]) -> Vec<f64> {
        basis_row(&self.basis_centres(), self.basis_width, x)
    }

    /// Image `W φ(x)` of a latent point.
    pub fn map_point(&self, x: &[f64]) -> Vec<f64> {
        let phi = self.basis_activations(x);
        self.weight_matrix
            .iter()
            .map(|w| w.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// The equal-weight isotropic mixture this GTM defines in data space.
    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        gtm_to_mixture(self)
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 || self.grid_side < 1 || self.basis_side < 1 {
            return Err(Error::Format("GTM sizes must be positive".into()));
        }
        if !(self.variance > 0.0) || !(self.basis_width > 0.0) {
            return Err(Error::Format("GTM variance and basis width must be positive".into()));
        }
        let cols = self.n_basis() + 1;
        if self.weight_matrix.is_empty() || self.weight_matrix.iter().any(|r| r.len() != cols) {
            return Err(Error::Format(format!("weight matrix must be D×{cols}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            version: u32,
            #[serde(flatten)]
            model: &'a GtmModel,
        }
        Ok(serde_json::to_string_pretty(&Doc { version: 1, model: self })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            version: u32,
            #[serde(flatten)]
            model: GtmModel,
        }
        let doc: Doc = serde_json::from_str(s)?;
        if doc.version != 1 {
            return Err(Error::Format(format!("unsupported GTM version {}", doc.version)));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

fn basis_row(centres: &[Vec<f64>], width: f64, x: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (2.0 * width * width);
    centres
        .iter()
        .map(|c| (-math::squared_distance(c, x) * inv).exp())
        .chain(std::iter::once(1.0))
        .collect()
}

/// Converts a GTM into its data-space Gaussian mixture.
pub fn gtm_to_mixture(gtm: &GtmModel) -> Result<GaussianMixture> {
    gtm.validate()?;
    let means = gtm.latent_grid().iter().map(|x| gtm.map_point(x)).collect();
    GaussianMixture::equal_weight_isotropic(means, gtm.variance)
}

#[derive(Debug, Clone)]
pub struct GtmFit {
    pub model: GtmModel,
    pub report: FitReport,
}

// Least-squares solution of `a · x = b` through an SVD; flags rank loss.
fn lstsq(a: DMatrix<f64>, b: &DMatrix<f64>, warnings: &mut Vec<String>, what: &str) -> Result<DMatrix<f64>> {
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * svd.singular_values.len() as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < svd.singular_values.len() {
        warnings.push(format!(
            "{what}: system is rank deficient ({rank} of {}), least-squares solution used",
            svd.singular_values.len()
        ));
    }
    svd.solve(b, eps).map_err(|e| Error::InvalidParameter(format!("{what}: {e}")))
}

/// Trains a GTM with EM.
///
/// Initialisation is deterministic: the RBF weights map the latent grid,
/// rescaled to unit variance, onto the span of the leading principal
/// components of the data, and `1/β` starts at the larger of the next
/// principal variance and half the mean squared distance between
/// neighbouring mapped grid points.
pub fn gtm_fit(data: &[Vec<f64>], cfg: &TrainConfig) -> Result<GtmFit> {
    cfg.validate()?;
    let d = check_data(data)?;
    let l = cfg.latent_dim;
    if l < 1 || l > d {
        return Err(Error::InvalidParameter(format!("latent dimension must be in 1..={d}")));
    }
    let grid_side = exact_root(cfg.k, l).ok_or_else(|| {
        Error::InvalidParameter(format!("K={} is not a perfect power of latent dimension {l}", cfg.k))
    })?;
    let basis_side = exact_root(cfg.basis_count, l).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "basis count {} is not a perfect power of latent dimension {l}",
            cfg.basis_count
        ))
    })?;
    let n = data.len();
    let n_basis = basis_side.pow(l as u32);
    if n <= n_basis {
        return Err(Error::InvalidParameter(format!(
            "need more than {n_basis} training points, got {n}"
        )));
    }
    let spacing = if basis_side > 1 { 2.0 / (basis_side - 1) as f64 } else { 2.0 };
    let basis_width = cfg.width_factor * spacing;

    let grid = regular_grid(grid_side, l);
    let centres = regular_grid(basis_side, l);
    let k = grid.len();
    let cols = n_basis + 1;
    let phi = DMatrix::from_fn(k, cols, |i, j| basis_row(&centres, basis_width, &grid[i])[j]);
    let t = DMatrix::from_fn(n, d, |i, j| data[i][j]);
    let mut report = FitReport::default();

    // principal components
    let mean = column_means(data, d);
    let centred = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut grid_norm = DMatrix::from_fn(k, l, |i, j| grid[i][j]);
    for j in 0..l {
        let col = grid_norm.column(j);
        let mu = col.mean();
        let sd = if k > 1 { (col.map(|v| (v - mu).powi(2)).sum() / (k as f64 - 1.0)).sqrt() } else { 1.0 };
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for i in 0..k {
            grid_norm[(i, j)] = (grid_norm[(i, j)] - mu) / sd;
        }
    }
    let a = DMatrix::from_fn(d, l, |row, j| {
        let idx = order[j];
        eig.eigenvectors[(row, idx)] * eig.eigenvalues[idx].max(0.0).sqrt()
    });
    let mut target = grid_norm * a.transpose();
    for i in 0..k {
        for j in 0..d {
            target[(i, j)] += mean[j];
        }
    }
    let mut w_t = lstsq(phi.clone(), &target, &mut report.warnings, "initialisation")?;
    let mut y = &phi * &w_t;

    let next_pc = if l < d { eig.eigenvalues[order[l]].max(0.0) } else { 0.0 };
    let mean_nn = if k > 1 {
        (0..k)
            .map(|i| {
                (0..k)
                    .filter(|&j| j != i)
                    .map(|j| (y.row(i) - y.row(j)).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / k as f64
    } else {
        0.0
    };
    let mut var = next_pc.max(mean_nn / 2.0);
    if !(var > 0.0) {
        var = global_variance(data, &mean).max(1e-12);
    }

    let ln_k = (k as f64).ln();
    let dd = d as f64;
    let e_step = |y: &DMatrix<f64>, var: f64| -> (DMatrix<f64>, f64) {
        let beta = 1.0 / var;
        let cols: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut lr: Vec<f64> = (0..k)
                    .map(|j| {
                        let mut s = 0.0;
                        for c in 0..d {
                            let r = y[(j, c)] - t[(i, c)];
                            s += r * r;
                        }
                        -0.5 * beta * s
                    })
                    .collect();
                let lse = log_sum_exp(&lr);
                lr.iter_mut().for_each(|v| *v = (*v - lse).exp());
                (lr, lse - ln_k - 0.5 * dd * (LN_2PI + var.ln()))
            })
            .collect();
        let ll = cols.iter().map(|c| c.1).sum();
        let r = DMatrix::from_fn(k, n, |j, i| cols[i].0[j]);
        (r, ll)
    };

    let (mut r, mut ll) = e_step(&y, var);
    report.log_likelihood.push(ll);
    for _ in 0..cfg.max_iter {
        let g: Vec<f64> = (0..k).map(|j| r.row(j).sum()).collect();
        let mut lhs = DMatrix::from_fn(cols, cols, |a, b| (0..k).map(|j| phi[(j, a)] * g[j] * phi[(j, b)]).sum());
        if cfg.ridge > 0.0 {
            for a in 0..cols {
                lhs[(a, a)] += cfg.ridge * var;
            }
        }
        let rhs = phi.transpose() * (&r * &t);
        w_t = lstsq(lhs, &rhs, &mut report.warnings, "M-step")?;
        y = &phi * &w_t;
        let mut ss = 0.0;
        for j in 0..k {
            for i in 0..n {
                let rji = r[(j, i)];
                if rji == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for c in 0..d {
                    let e = y[(j, c)] - t[(i, c)];
                    s += e * e;
                }
                ss += rji * s;
            }
        }
        var = (ss / (n as f64 * dd)).max(f64::MIN_POSITIVE);
        let prev = ll;
        (r, ll) = e_step(&y, var);
        report.log_likelihood.push(ll);
        if converged(prev, ll, cfg.rel_tol) {
            report.converged = true;
            break;
        }
    }
    // Consecutive identical warnings from the M-step are collapsed.
    report.warnings.dedup();

    let weight_matrix = (0..d).map(|c| (0..cols).map(|b| w_t[(b, c)]).collect()).collect();
    let model = GtmModel { latent_dim: l, grid_side, basis_side, basis_width, weight_matrix, variance: var };
    Ok(GtmFit { model, report })
}
