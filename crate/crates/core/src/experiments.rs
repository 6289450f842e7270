//! Testbeds: the 2-D toy curve `t₂ = t₁ + 3 sin t₁`, the two-link planar
//! robot arm, and missing-data masks.
//!
//! All generators are deterministic functions of their seed.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{self, stream};

/// Toy-curve domain `[-2π, 2π]`.
pub const TOY_DOMAIN: (f64, f64) = (-2.0 * PI, 2.0 * PI);

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub noise_sigma: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self { noise_sigma: 0.2, n_points: 1000, seed: 0 }
    }
}

/// `x + 3 sin x`.
pub fn toy_forward(x: f64) -> f64 {
    x + 3.0 * x.sin()
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Unordered training sample of the noisy toy curve, `N' × 2`.
pub fn toy_training_set(spec: &ToySpec) -> Result<Vec<Vec<f64>>> {
    check_sigma(spec.noise_sigma)?;
    if spec.n_points < 1 {
        return Err(Error::InvalidParameter("n_points must be at least 1".into()));
    }
    let mut rng = math::rng_stream(spec.seed, stream::TOY_TRAIN);
    let (lo, hi) = TOY_DOMAIN;
    Ok((0..spec.n_points)
        .map(|_| {
            let x = rng.random_range(lo..=hi);
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            vec![x + spec.noise_sigma * e1, toy_forward(x) + spec.noise_sigma * e2]
        })
        .collect())
}

/// `n` equispaced points of the toy curve across the whole domain.
pub fn toy_trajectory(n: usize, noise_sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_sigma(noise_sigma)?;
    if n < 2 {
        return Err(Error::InvalidParameter("a trajectory needs at least 2 points".into()));
    }
    let mut rng = math::rng_stream(seed, stream::TOY_TRAJECTORY);
    let (lo, hi) = TOY_DOMAIN;
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let x = if i == n - 1 { hi } else { lo + step * i as f64 };
            let mut p = vec![x, toy_forward(x)];
            if noise_sigma > 0.0 {
                for v in &mut p {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += noise_sigma * e;
                }
            }
            p
        })
        .collect())
}

/// Two-link planar arm geometry and actuator ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmSpec {
    pub l1: f64,
    pub l2: f64,
    pub theta1_range: (f64, f64),
    pub theta2_range: (f64, f64),
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self { l1: 0.8, l2: 0.2, theta1_range: (0.3, 1.2), theta2_range: (FRAC_PI_2, 3.0 * FRAC_PI_2) }
    }
}

impl ArmSpec {
    pub fn contains(&self, theta: [f64; 2]) -> bool {
        let (a, b) = self.theta1_range;
        let (c, d) = self.theta2_range;
        (a..=b).contains(&theta[0]) && (c..=d).contains(&theta[1])
    }

    /// End-effector position for joint angles `theta`.
    pub fn forward(&self, theta: [f64; 2]) -> [f64; 2] {
        let (t1, t2) = (theta[0], theta[1]);
        [
            self.l1 * t1.cos() + self.l2 * (t1 + t2).cos(),
            self.l1 * t1.sin() + self.l2 * (t1 + t2).sin(),
        ]
    }

    /// Closed-form inverse kinematics restricted to the actuator space.
    ///
    /// Both elbow configurations are computed; those outside the actuator
    /// ranges (after wrapping angles by multiples of 2π) are dropped.
    /// Unreachable points give an empty list.
    pub fn inverse(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let c2 = (r2 - self.l1 * self.l1 - self.l2 * self.l2) / (2.0 * self.l1 * self.l2);
        if !(-1.0..=1.0).contains(&c2) {
            return Vec::new();
        }
        let base = c2.acos();
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(2);
        for t2 in [base, -base] {
            let t1 = x[1].atan2(x[0]) - (self.l2 * t2.sin()).atan2(self.l1 + self.l2 * t2.cos());
            if let Some(theta) = self.wrap_into_range([t1, t2]) {
                if !out.iter().any(|o| (o[0] - theta[0]).abs() < 1e-12 && (o[1] - theta[1]).abs() < 1e-12) {
                    out.push(theta);
                }
            }
        }
        out
    }

    fn wrap_into_range(&self, theta: [f64; 2]) -> Option<[f64; 2]> {
        let wrap = |v: f64, (lo, hi): (f64, f64)| -> Option<f64> {
            let k = ((lo - v) / (2.0 * PI)).ceil();
            let w = v + k * 2.0 * PI;
            (w <= hi).then_some(w)
        };
        Some([wrap(theta[0], self.theta1_range)?, wrap(theta[1], self.theta2_range)?])
    }
}

/// Forward kinematics of the default arm (`l₁ = 0.8`, `l₂ = 0.2`).
pub fn arm_forward(theta: [f64; 2]) -> [f64; 2] {
    ArmSpec::default().forward(theta)
}

/// Inverse kinematics of the default arm within its actuator space.
pub fn arm_inverse_analytic(x: [f64; 2]) -> Vec<[f64; 2]> {
    ArmSpec::default().inverse(x)
}

fn add_noise<R: Rng>(row: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        for v in row {
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
    }
}

/// Rows `(θ₁, θ₂, x₁, x₂)` with θ uniform on the actuator space and noise
/// added to all four columns.
pub fn arm_training_set(n: usize, noise_sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_sigma(noise_sigma)?;
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let arm = ArmSpec::default();
    let mut rng = math::rng_stream(seed, stream::ARM_TRAIN);
    Ok((0..n)
        .map(|_| {
            let t1 = rng.random_range(arm.theta1_range.0..=arm.theta1_range.1);
            let t2 = rng.random_range(arm.theta2_range.0..=arm.theta2_range.1);
            let x = arm.forward([t1, t2]);
            let mut row = vec![t1, t2, x[0], x[1]];
            add_noise(&mut row, noise_sigma, &mut rng);
            row
        })
        .collect())
}

/// Default evaluation trajectory in actuator space, before noise.
///
/// A closed loop sampled at `n` points that stays on the `θ₂ > π` elbow
/// branch: the shoulder swings once over `[0.4, 1.1]` while the elbow sweeps
/// twice over `[3.55, 4.45]`. About half the path lies where the mirrored
/// elbow configuration is reachable too, so the inverse is bivalued there.
/// The folded configuration `θ₂ = π` is avoided: at the fold the branches
/// meet and continuity alone cannot tell a crossing from a reflection.
pub fn arm_trajectory_angles(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let s = i as f64 / n as f64;
            let t1 = 0.75 + 0.35 * (2.0 * PI * s).sin();
            let t2 = 4.0 + 0.45 * (4.0 * PI * s + 0.3).sin();
            [t1, t2]
        })
        .collect()
}

/// Rows `(θ₁, θ₂, x₁, x₂)` along the default trajectory plus noise.
pub fn arm_trajectory(n: usize, noise_sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_sigma(noise_sigma)?;
    if n < 2 {
        return Err(Error::InvalidParameter("a trajectory needs at least 2 points".into()));
    }
    let arm = ArmSpec::default();
    let mut rng = math::rng_stream(seed, stream::ARM_TRAJECTORY);
    Ok(arm_trajectory_angles(n)
        .into_iter()
        .map(|theta| {
            let x = arm.forward(theta);
            let mut row = vec![theta[0], theta[1], x[0], x[1]];
            add_noise(&mut row, noise_sigma, &mut rng);
            row
        })
        .collect())
}

/// How to build a mask.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskKind {
    /// Regression `present → missing_cols` with the forward mapping.
    Fwd { missing_cols: Vec<usize> },
    /// Regression with the inverse mapping.
    Inv { missing_cols: Vec<usize> },
    /// Every cell missing independently with probability `p`.
    Random { p: f64, seed: u64 },
}

/// `n × d` presence mask (`true` = present).
pub fn make_mask(n: usize, d: usize, kind: &MaskKind) -> Result<Vec<Vec<bool>>> {
    match kind {
        MaskKind::Fwd { missing_cols } | MaskKind::Inv { missing_cols } => {
            if let Some(&c) = missing_cols.iter().find(|&&c| c >= d) {
                return Err(Error::InvalidIndex(format!("column {c} out of range 0..{d}")));
            }
            Ok((0..n).map(|_| (0..d).map(|c| !missing_cols.contains(&c)).collect()).collect())
        }
        MaskKind::Random { p, seed } => {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::InvalidParameter(format!("p must be in [0, 1], got {p}")));
            }
            let mut rng = math::rng_stream(*seed, stream::MASK);
            Ok((0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() >= *p).collect())
                .collect())
        }
    }
}

/// Toy masks: `t₂` missing.
pub fn toy_mask_fwd() -> MaskKind {
    MaskKind::Fwd { missing_cols: vec![1] }
}

/// Toy masks: `t₁` missing.
pub fn toy_mask_inv() -> MaskKind {
    MaskKind::Inv { missing_cols: vec![0] }
}

/// Arm masks: `x` missing.
pub fn arm_mask_fwd() -> MaskKind {
    MaskKind::Fwd { missing_cols: vec![2, 3] }
}

/// Arm masks: `θ` missing.
pub fn arm_mask_inv() -> MaskKind {
    MaskKind::Inv { missing_cols: vec![0, 1] }
}
