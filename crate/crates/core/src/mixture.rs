//! Gaussian mixture densities with diagonal covariances.
//!
//! A [`GaussianMixture`] represents
//!
//! ```text
//! p(t) = Σ_k π_k N(t; μ_k, Σ_k)
//! ```
//!
//! where every `Σ_k` is diagonal: either one variance shared by all
//! components and coordinates, or a per-component vector of variances.
//! Because the covariances are diagonal, marginalising and conditioning
//! reduce to selecting coordinates and reweighting components. All weight
//! arithmetic is done in log-space.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, log_sum_exp, LN_2PI};

/// Tolerance on `Σ π_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Covariance family of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// One variance `σ²` for every component and coordinate.
    SharedIsotropic(f64),
    /// `K` vectors of `D` variances.
    Diagonal(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariance: Covariance,
    /// `-½ Σ_d ln(2π σ²_kd)` per component.
    log_norm: Vec<f64>,
}

impl GaussianMixture {
    /// Builds a mixture, checking every invariant.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariance: Covariance) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidMixture("at least one component required".into()));
        }
        if means.len() != k {
            return Err(Error::InvalidMixture(format!(
                "{k} weights but {} means",
                means.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("dimension must be at least 1".into()));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidMixture("all means must have the same length".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture means"));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMixture("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        match &covariance {
            Covariance::SharedIsotropic(v) => {
                if !(*v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidMixture("variance must be positive".into()));
                }
            }
            Covariance::Diagonal(vars) => {
                if vars.len() != k || vars.iter().any(|v| v.len() != dim) {
                    return Err(Error::InvalidMixture("variances must be K×D".into()));
                }
                if vars.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidMixture("variances must be positive".into()));
                }
            }
        }
        Ok(Self::assemble(dim, weights, means, covariance))
    }

    /// Like [`GaussianMixture::new`] but rescales the weights to sum to one.
    pub fn with_unnormalised_weights(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariance: Covariance,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMixture("weights must have a positive sum".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect::<Vec<_>>();
        let rest = 1.0 - weights.iter().sum::<f64>();
        let mut weights = weights;
        // absorb the last rounding residue so the sum invariant holds
        if let Some(w) = weights.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *w += rest;
        }
        Self::new(weights, means, covariance)
    }

    /// Equal-weight mixture sharing one isotropic variance.
    pub fn equal_weight_isotropic(means: Vec<Vec<f64>>, variance: f64) -> Result<Self> {
        let k = means.len().max(1);
        let w = 1.0 / k as f64;
        Self::new(vec![w; means.len()], means, Covariance::SharedIsotropic(variance))
    }

    // Trusted constructor: no validation beyond what callers guarantee.
    fn assemble(dim: usize, weights: Vec<f64>, means: Vec<Vec<f64>>, covariance: Covariance) -> Self {
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let log_norm = match &covariance {
            Covariance::SharedIsotropic(v) => {
                vec![-0.5 * dim as f64 * (LN_2PI + v.ln()); weights.len()]
            }
            Covariance::Diagonal(vars) => vars
                .iter()
                .map(|vk| -0.5 * vk.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
                .collect(),
        };
        Self { dim, weights, log_weights, means, covariance, log_norm }
    }

    fn from_log_weights(
        dim: usize,
        log_weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariance: Covariance,
    ) -> Self {
        let weights = log_weights.iter().map(|lw| lw.exp()).collect();
        let mut gm = Self::assemble(dim, weights, means, covariance);
        gm.log_weights = log_weights;
        gm
    }

    /// The mixture restricted to the listed components, weights renormalised.
    pub fn select_components(&self, keep: &[usize]) -> Result<GaussianMixture> {
        if keep.is_empty() {
            return Err(Error::InvalidIndex("no components selected".into()));
        }
        if let Some(&k) = keep.iter().find(|&&k| k >= self.n_components()) {
            return Err(Error::InvalidIndex(format!("component {k} out of range 0..{}", self.n_components())));
        }
        let lw: Vec<f64> = keep.iter().map(|&k| self.log_weights[k]).collect();
        let lse = math::log_sum_exp(&lw);
        if !lse.is_finite() {
            return Err(Error::InvalidMixture("selected components have zero total weight".into()));
        }
        let covariance = match &self.covariance {
            Covariance::SharedIsotropic(v) => Covariance::SharedIsotropic(*v),
            Covariance::Diagonal(vars) => Covariance::Diagonal(keep.iter().map(|&k| vars[k].clone()).collect()),
        };
        Ok(Self::from_log_weights(
            self.dim,
            lw.iter().map(|l| l - lse).collect(),
            keep.iter().map(|&k| self.means[k].clone()).collect(),
            covariance,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `K`.
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln π_k`, kept separately so that tiny conditional weights keep
    /// their precision.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    /// Variance of component `k` along coordinate `d`.
    #[inline]
    pub fn variance(&self, k: usize, d: usize) -> f64 {
        match &self.covariance {
            Covariance::SharedIsotropic(v) => *v,
            Covariance::Diagonal(vars) => vars[k][d],
        }
    }

    /// Root-mean of all component variances: a typical component width.
    pub fn scale(&self) -> f64 {
        match &self.covariance {
            Covariance::SharedIsotropic(v) => v.sqrt(),
            Covariance::Diagonal(vars) => {
                let n = (vars.len() * self.dim) as f64;
                (vars.iter().flatten().sum::<f64>() / n).sqrt()
            }
        }
    }

    fn check_len(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: t.len() });
        }
        Ok(())
    }

    /// `ln N(t; μ_k, Σ_k)` without the weight.
    #[inline]
    pub(crate) fn component_log_pdf(&self, k: usize, t: &[f64]) -> f64 {
        let mu = &self.means[k];
        let quad = match &self.covariance {
            Covariance::SharedIsotropic(v) => math::squared_distance(t, mu) / v,
            Covariance::Diagonal(vars) => t
                .iter()
                .zip(mu)
                .zip(&vars[k])
                .map(|((x, m), v)| (x - m) * (x - m) / v)
                .sum(),
        };
        self.log_norm[k] - 0.5 * quad
    }

    /// `ln π_k + ln N(t; μ_k, Σ_k)` for every component.
    pub(crate) fn joint_log_terms(&self, t: &[f64]) -> Vec<f64> {
        (0..self.n_components())
            .map(|k| {
                let lw = self.log_weights[k];
                if lw == f64::NEG_INFINITY {
                    lw
                } else {
                    lw + self.component_log_pdf(k, t)
                }
            })
            .collect()
    }

    /// `ln p(t)`, evaluated with log-sum-exp.
    pub fn log_density(&self, t: &[f64]) -> Result<f64> {
        self.check_len(t)?;
        Ok(log_sum_exp(&self.joint_log_terms(t)))
    }

    pub fn density(&self, t: &[f64]) -> Result<f64> {
        self.log_density(t).map(f64::exp)
    }

    /// Posterior component probabilities `p(k | t)` and `ln p(t)`.
    pub fn responsibilities(&self, t: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len(t)?;
        let mut terms = self.joint_log_terms(t);
        let lse = math::softmax_in_place(&mut terms);
        if !lse.is_finite() {
            return Err(Error::OutsideSupport);
        }
        Ok((terms, lse))
    }

    /// Mixture over the coordinates in `keep` (in that order).
    pub fn marginal(&self, keep: &[usize]) -> Result<GaussianMixture> {
        if keep.is_empty() {
            return Err(Error::InvalidIndex("marginal needs at least one coordinate".into()));
        }
        let mut seen = vec![false; self.dim];
        for &d in keep {
            if d >= self.dim {
                return Err(Error::InvalidIndex(format!("index {d} out of range 0..{}", self.dim)));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::InvalidIndex(format!("index {d} repeated")));
            }
        }
        Ok(self.slice_unchecked(keep, self.log_weights.clone()))
    }

    fn slice_unchecked(&self, keep: &[usize], log_weights: Vec<f64>) -> GaussianMixture {
        let means = self
            .means
            .iter()
            .map(|m| keep.iter().map(|&d| m[d]).collect())
            .collect();
        let covariance = match &self.covariance {
            Covariance::SharedIsotropic(v) => Covariance::SharedIsotropic(*v),
            Covariance::Diagonal(vars) => Covariance::Diagonal(
                vars.iter().map(|v| keep.iter().map(|&d| v[d]).collect()).collect(),
            ),
        };
        let mut out = Self::from_log_weights(keep.len(), log_weights, means, covariance);
        // keep the caller-visible weights exactly equal when nothing changed
        if out.log_weights == self.log_weights {
            out.weights = self.weights.clone();
        }
        out
    }

    /// Conditional mixture `p(t_ℳ | t_𝒫 = observed)` over the missing
    /// coordinates of `split`.
    ///
    /// With diagonal components each conditional component is the slice of
    /// the joint one; only the weights change, to
    /// `π'_k ∝ π_k N(observed; μ_{k,𝒫}, Σ_{k,𝒫})`.
    pub fn condition(&self, split: &IndexSplit, observed: &[f64]) -> Result<GaussianMixture> {
        if split.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: split.dim() });
        }
        if observed.len() != split.present().len() {
            return Err(Error::DimensionMismatch {
                expected: split.present().len(),
                got: observed.len(),
            });
        }
        if split.missing().is_empty() {
            return Err(Error::InvalidIndex("nothing to condition on: no missing coordinates".into()));
        }
        if split.present().is_empty() {
            return Ok(self.clone());
        }
        if observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutsideSupport);
        }
        let present = split.present();
        let mut log_w: Vec<f64> = (0..self.n_components())
            .map(|k| {
                let lw = self.log_weights[k];
                if lw == f64::NEG_INFINITY {
                    return lw;
                }
                let mu = &self.means[k];
                let mut acc = 0.0;
                for (&d, &x) in present.iter().zip(observed) {
                    let v = self.variance(k, d);
                    let r = x - mu[d];
                    acc += -0.5 * (LN_2PI + v.ln()) - 0.5 * r * r / v;
                }
                lw + acc
            })
            .collect();
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(Error::OutsideSupport);
        }
        for lw in &mut log_w {
            *lw -= lse;
        }
        Ok(self.slice_unchecked(split.missing(), log_w))
    }

    /// `Σ_k π_k μ_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (o, m) in out.iter_mut().zip(mu) {
                *o += w * m;
            }
        }
        out
    }

    /// Draws `n` points using the generator `rng`.
    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let chooser = WeightedIndex::new(&self.weights).expect("mixture weights are valid");
        (0..n)
            .map(|_| {
                let k = chooser.sample(rng);
                (0..self.dim)
                    .map(|d| {
                        let z: f64 = rng.sample(StandardNormal);
                        self.means[k][d] + self.variance(k, d).sqrt() * z
                    })
                    .collect()
            })
            .collect()
    }

    /// Draws `n` points, deterministically for a given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = math::rng_stream(seed, math::stream::MIXTURE_SAMPLE);
        self.sample_with(n, &mut rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MixtureDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MixtureDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// Present/missing partition of the coordinates `0..D` of one vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSplit {
    present: Vec<usize>,
    missing: Vec<usize>,
}

impl IndexSplit {
    pub fn new(present: Vec<usize>, missing: Vec<usize>) -> Result<Self> {
        let dim = present.len() + missing.len();
        for list in [&present, &missing] {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidIndex("indices must be sorted and unique".into()));
            }
        }
        let mut seen = vec![false; dim];
        for &d in present.iter().chain(&missing) {
            if d >= dim || std::mem::replace(&mut seen[d], true) {
                return Err(Error::InvalidIndex(format!(
                    "present and missing must partition 0..{dim}"
                )));
            }
        }
        Ok(Self { present, missing })
    }

    /// Split from a presence mask (`true` = present).
    pub fn from_mask(mask: &[bool]) -> Self {
        let (mut present, mut missing) = (Vec::new(), Vec::new());
        for (d, &m) in mask.iter().enumerate() {
            if m {
                present.push(d);
            } else {
                missing.push(d);
            }
        }
        Self { present, missing }
    }

    pub fn present(&self) -> &[usize] {
        &self.present
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn dim(&self) -> usize {
        self.present.len() + self.missing.len()
    }

    pub fn gather_present(&self, full: &[f64]) -> Vec<f64> {
        self.present.iter().map(|&d| full[d]).collect()
    }

    pub fn gather_missing(&self, full: &[f64]) -> Vec<f64> {
        self.missing.iter().map(|&d| full[d]).collect()
    }

    /// Reassembles a full vector from its present and missing parts.
    pub fn merge(&self, present_vals: &[f64], missing_vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (&d, &v) in self.present.iter().zip(present_vals) {
            out[d] = v;
        }
        for (&d, &v) in self.missing.iter().zip(missing_vals) {
            out[d] = v;
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum VarianceDoc {
    Shared(f64),
    Diagonal(Vec<Vec<f64>>),
}

/// On-disk JSON layout of a mixture.
#[derive(Serialize, Deserialize)]
pub(crate) struct MixtureDoc {
    version: u32,
    dim: usize,
    covariance_kind: String,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: VarianceDoc,
}

impl From<&GaussianMixture> for MixtureDoc {
    fn from(gm: &GaussianMixture) -> Self {
        let (kind, variances) = match &gm.covariance {
            Covariance::SharedIsotropic(v) => ("shared_isotropic", VarianceDoc::Shared(*v)),
            Covariance::Diagonal(vars) => ("diagonal", VarianceDoc::Diagonal(vars.clone())),
        };
        MixtureDoc {
            version: 1,
            dim: gm.dim,
            covariance_kind: kind.to_string(),
            weights: gm.weights.clone(),
            means: gm.means.clone(),
            variances,
        }
    }
}

impl TryFrom<MixtureDoc> for GaussianMixture {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        if doc.version != 1 {
            return Err(Error::Format(format!("unsupported mixture version {}", doc.version)));
        }
        let covariance = match (doc.covariance_kind.as_str(), doc.variances) {
            ("shared_isotropic", VarianceDoc::Shared(v)) => Covariance::SharedIsotropic(v),
            ("diagonal", VarianceDoc::Diagonal(v)) => Covariance::Diagonal(v),
            (kind, _) => {
                return Err(Error::Format(format!(
                    "covariance_kind `{kind}` does not match the variances field"
                )))
            }
        };
        let gm = GaussianMixture::new(doc.weights, doc.means, covariance)?;
        if gm.dim != doc.dim {
            return Err(Error::Format(format!("dim {} does not match means", doc.dim)));
        }
        Ok(gm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn one_d(weights: Vec<f64>, means: Vec<f64>, var: f64) -> GaussianMixture {
        GaussianMixture::new(
            weights,
            means.into_iter().map(|m| vec![m]).collect(),
            Covariance::SharedIsotropic(var),
        )
        .unwrap()
    }

    fn diag_2d() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.35, 0.65],
            vec![vec![0.3, -1.2], vec![2.0, 0.7]],
            Covariance::Diagonal(vec![vec![0.5, 1.7], vec![2.2, 0.4]]),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let gm = one_d(vec![1.0], vec![0.0], 1.0);
        let v = gm.log_density(&[0.0]).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_at_midpoint() {
        let gm = one_d(vec![0.5, 0.5], vec![-1.0, 1.0], 1.0);
        let expected = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((gm.log_density(&[0.0]).unwrap() - expected.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_density_matches_direct_sum() {
        let gm = diag_2d();
        // direct product-of-densities oracle
        let direct = |t: &[f64]| -> f64 {
            let comp = |w: f64, m: [f64; 2], v: [f64; 2]| {
                let mut p = w;
                for d in 0..2 {
                    p *= (-(t[d] - m[d]).powi(2) / (2.0 * v[d])).exp() / (2.0 * PI * v[d]).sqrt();
                }
                p
            };
            comp(0.35, [0.3, -1.2], [0.5, 1.7]) + comp(0.65, [2.0, 0.7], [2.2, 0.4])
        };
        for t in [[0.0, 0.0], [1.0, -2.0], [3.3, 0.9], [-1.5, 2.5]] {
            let got = gm.log_density(&t).unwrap();
            let want = direct(&t).ln();
            assert!(((got - want) / want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn log_density_survives_extreme_distance() {
        let gm = one_d(vec![1.0], vec![0.0], 1.0);
        let v = gm.log_density(&[40.0]).unwrap();
        assert!(v.is_finite());
        assert!((v - (-800.0 - 0.5 * LN_2PI)).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gm = diag_2d();
        assert!(matches!(gm.log_density(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(GaussianMixture::new(vec![], vec![], Covariance::SharedIsotropic(1.0)).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], Covariance::SharedIsotropic(1.0)).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], Covariance::SharedIsotropic(0.0)).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], Covariance::Diagonal(vec![vec![-1.0]])).is_err());
    }

    #[test]
    fn marginal_identity_and_slice() {
        let gm = diag_2d();
        assert_eq!(gm.marginal(&[0, 1]).unwrap(), gm);
        let single = GaussianMixture::new(
            vec![1.0],
            vec![vec![1.0, 2.0, 3.0]],
            Covariance::Diagonal(vec![vec![0.1, 0.2, 0.3]]),
        )
        .unwrap();
        let m = single.marginal(&[0]).unwrap();
        assert_eq!(m.means(), &[vec![1.0]]);
        assert_eq!(m.variance(0, 0), 0.1);
        assert!(single.marginal(&[]).is_err());
        assert!(single.marginal(&[3]).is_err());
        assert!(single.marginal(&[1, 1]).is_err());
    }

    #[test]
    fn marginal_matches_quadrature() {
        let gm = GaussianMixture::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 1.0, -1.0], vec![1.5, -0.5, 0.5], vec![-1.0, 0.3, 2.0]],
            Covariance::Diagonal(vec![
                vec![0.6, 0.9, 0.4],
                vec![1.1, 0.5, 0.8],
                vec![0.7, 1.3, 0.6],
            ]),
        )
        .unwrap();
        let marg = gm.marginal(&[0, 2]).unwrap();
        // composite Simpson over the dropped coordinate on [-12, 12]
        let n = 4000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        for i in 0..10 {
            let x0 = -1.5 + 0.37 * i as f64;
            let x2 = 1.2 - 0.29 * i as f64;
            let mut s = 0.0;
            for j in 0..=n {
                let y = a + h * j as f64;
                let w = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                s += w * gm.density(&[x0, y, x2]).unwrap();
            }
            let integral = s * h / 3.0;
            let got = marg.density(&[x0, x2]).unwrap();
            assert!((integral - got).abs() < 1e-6, "{integral} vs {got}");
        }
    }

    #[test]
    fn condition_with_nothing_present_is_identity() {
        let gm = diag_2d();
        let split = IndexSplit::new(vec![], vec![0, 1]).unwrap();
        assert_eq!(gm.condition(&split, &[]).unwrap(), gm);
    }

    #[test]
    fn condition_single_component_keeps_weight() {
        let gm = GaussianMixture::new(
            vec![1.0],
            vec![vec![1.0, 2.0]],
            Covariance::Diagonal(vec![vec![0.5, 0.25]]),
        )
        .unwrap();
        let split = IndexSplit::new(vec![0], vec![1]).unwrap();
        let c = gm.condition(&split, &[7.0]).unwrap();
        assert_eq!(c.weights(), &[1.0]);
        assert_eq!(c.means(), &[vec![2.0]]);
        assert_eq!(c.variance(0, 0), 0.25);
    }

    #[test]
    fn condition_weight_ratio_matches_bayes() {
        let gm = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0, 0.0], vec![4.0, 4.0]],
            Covariance::SharedIsotropic(1.0),
        )
        .unwrap();
        let split = IndexSplit::new(vec![0], vec![1]).unwrap();
        let c = gm.condition(&split, &[0.0]).unwrap();
        // N(0;0,1)/N(0;4,1) = exp(16/2)
        let ratio = c.log_weights()[0] - c.log_weights()[1];
        assert!((ratio - 8.0).abs() < 1e-12);
        let w = c.weights();
        assert!((w[0] / w[1] - 8f64.exp()).abs() / 8f64.exp() < 1e-12);
    }

    #[test]
    fn condition_rejects_non_finite_observation() {
        let gm = diag_2d();
        let split = IndexSplit::new(vec![0], vec![1]).unwrap();
        assert!(matches!(gm.condition(&split, &[f64::NAN]), Err(Error::OutsideSupport)));
        // astronomically far but finite still renormalises
        let c = gm.condition(&split, &[1e150]).unwrap();
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(one_d(vec![1.0], vec![3.5], 1.0).mean(), vec![3.5]);
        assert_eq!(one_d(vec![0.5, 0.5], vec![-1.0, 1.0], 1.0).mean(), vec![0.0]);
        let m = one_d(vec![0.2, 0.3, 0.5], vec![0.0, 1.0, 2.0], 1.0).mean();
        assert!((m[0] - 1.3).abs() < 1e-15);
    }

    #[test]
    fn sample_is_deterministic_and_degenerate_variance_collapses() {
        let gm = diag_2d();
        assert_eq!(gm.sample(50, 9), gm.sample(50, 9));
        assert_ne!(gm.sample(50, 9), gm.sample(50, 10));
        let tight = one_d(vec![1.0], vec![2.5], 1e-20);
        assert!(tight.sample(100, 1).iter().all(|s| (s[0] - 2.5).abs() < 1e-8));
    }

    #[test]
    fn sample_moments_of_standard_normal() {
        let gm = one_d(vec![1.0], vec![0.0], 1.0);
        let xs = gm.sample(100_000, 42);
        let n = xs.len() as f64;
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / n;
        let var = xs.iter().map(|x| (x[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let gm = GaussianMixture::new(
            vec![0.1 + 0.2, 1.0 - (0.1 + 0.2)],
            vec![vec![PI, -1e-300], vec![1.0 / 3.0, 6.02e23]],
            Covariance::Diagonal(vec![vec![0.1, 2.0 / 7.0], vec![1e-9, 5e5]]),
        )
        .unwrap();
        let back = GaussianMixture::from_json(&gm.to_json().unwrap()).unwrap();
        assert_eq!(back, gm);
        let iso = one_d(vec![0.25, 0.75], vec![0.1, 0.7], 0.013);
        assert_eq!(GaussianMixture::from_json(&iso.to_json().unwrap()).unwrap(), iso);
    }

    #[test]
    fn split_validation_and_merge() {
        assert!(IndexSplit::new(vec![0, 0], vec![1]).is_err());
        assert!(IndexSplit::new(vec![1, 0], vec![2]).is_err());
        assert!(IndexSplit::new(vec![0], vec![2]).is_err());
        let s = IndexSplit::from_mask(&[true, false, true, false]);
        assert_eq!(s.present(), &[0, 2]);
        assert_eq!(s.missing(), &[1, 3]);
        assert_eq!(s.merge(&[1.0, 3.0], &[2.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    fn arb_diag_mixture(max_d: usize, max_k: usize) -> impl Strategy<Value = GaussianMixture> {
        (1..=max_d, 1..=max_k).prop_flat_map(|(d, k)| {
            (
                prop::collection::vec(0.05f64..1.0, k),
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), k),
                prop::collection::vec(prop::collection::vec(0.2f64..2.0, d), k),
            )
                .prop_map(|(w, m, v)| {
                    GaussianMixture::with_unnormalised_weights(w, m, Covariance::Diagonal(v)).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn marginal_composes(gm in arb_diag_mixture(4, 4), seed in any::<u64>()) {
            let d = gm.dim();
            let mut order: Vec<usize> = (0..d).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..d).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (s >> 33) as usize % (i + 1));
            }
            let a: Vec<usize> = order.clone();
            let b: Vec<usize> = (0..d).rev().filter(|i| i % 2 == 0).collect();
            let composed: Vec<usize> = b.iter().map(|&i| a[i]).collect();
            let lhs = gm.marginal(&a).unwrap().marginal(&b).unwrap();
            let rhs = gm.marginal(&composed).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn log_density_is_finite(gm in arb_diag_mixture(3, 4), x in prop::collection::vec(-1e6f64..1e6, 3)) {
            let t = &x[..gm.dim()];
            prop_assert!(gm.log_density(t).unwrap().is_finite());
        }
    }
}
