//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p seqfill --test acceptance`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use seqfill::constraints::{ConstraintSpec, NormKind, Term};
use seqfill::experiments::*;
use seqfill::mixture::{Covariance, GaussianMixture, IndexSplit};
use seqfill::modes::find_all_modes;
use seqfill::reconstruct::*;
use seqfill::training::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. DP equals exhaustive enumeration

fn random_layers(r: &mut ChaCha8Rng, n: usize, max_nu: usize, dim: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|_| {
            let nu = r.random_range(1..=max_nu);
            (0..nu).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect()
        })
        .collect()
}

fn enumerate_min(cands: &CandidateSet, bound: &seqfill::constraints::BoundConstraint<'_>) -> f64 {
    let sizes = cands.sizes();
    let mut idx = vec![0usize; sizes.len()];
    let mut best = f64::INFINITY;
    loop {
        let c = bound.path_cost(idx.iter().enumerate().map(|(n, &i)| cands.point(n, i)));
        if c < best {
            best = c;
        }
        let mut n = 0;
        loop {
            if n == sizes.len() {
                return best;
            }
            idx[n] += 1;
            if idx[n] < sizes[n] {
                break;
            }
            idx[n] = 0;
            n += 1;
        }
    }
}

fn polygon_length(seq: &[Vec<f64>]) -> f64 {
    seq.windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum()
}

fn dp_exactness() -> Outcome {
    let specs = [
        ConstraintSpec::default(),
        ConstraintSpec::squared_continuity(),
        ConstraintSpec::new(vec![
            Term::continuity(NormKind::Euclidean),
            Term::smoothness(NormKind::SquaredEuclidean).with_coef(0.5),
        ])
        .unwrap(),
    ];
    let mut r = rng(101);
    let mut mismatches = 0;
    let mut oracle_gap = 0.0f64;
    for g in 0..500 {
        let n = r.random_range(1..=8);
        let cands = CandidateSet::from_points(random_layers(&mut r, n, 4, 2)).unwrap();
        let spec = &specs[g % specs.len()];
        let bound = cands.bind(spec, None).unwrap();
        let dp = dp_reconstruct(&cands, &bound);
        if dp.cost != enumerate_min(&cands, &bound) {
            mismatches += 1;
        }
        if g % specs.len() == 0 {
            // cost function itself against a hand-written polygon length
            oracle_gap = oracle_gap.max((dp.cost - polygon_length(&dp.sequence)).abs());
        }
    }
    Outcome::new(
        mismatches == 0 && oracle_gap < 1e-12,
        format!("500 graphs, {mismatches} cost mismatches, length oracle gap {oracle_gap:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Modes against a grid search

// Coarse-to-fine grid maximisation of `f` in a box around `centre`.
fn grid_argmax(f: &dyn Fn(&[f64]) -> f64, centre: &[f64], half_width: f64, tol: f64) -> Vec<f64> {
    let d = centre.len();
    let per_axis = 21usize;
    let mut c = centre.to_vec();
    let mut h = half_width;
    loop {
        let step = 2.0 * h / (per_axis - 1) as f64;
        let mut best = (f64::NEG_INFINITY, c.clone());
        let total = per_axis.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let p: Vec<f64> = (0..d)
                .map(|j| {
                    let i = rem % per_axis;
                    rem /= per_axis;
                    c[j] - h + i as f64 * step
                })
                .collect();
            let v = f(&p);
            if v > best.0 {
                best = (v, p);
            }
        }
        c = best.1;
        if step < tol {
            return c;
        }
        h = 2.0 * step;
    }
}

fn separated_means(r: &mut ChaCha8Rng, k: usize, d: usize, min_sep: f64) -> Vec<Vec<f64>> {
    let span = min_sep * k as f64;
    let mut means: Vec<Vec<f64>> = Vec::new();
    while means.len() < k {
        let m: Vec<f64> = (0..d).map(|_| r.random_range(-span..span)).collect();
        let ok = means.iter().all(|o| {
            o.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_sep
        });
        if ok {
            means.push(m);
        }
    }
    means
}

fn mode_oracle() -> Outcome {
    let mut r = rng(202);
    let mut bad_count = 0;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = 1 + case % 2;
        let k = r.random_range(1..=5);
        let sigma = r.random_range(0.2..2.0);
        let means = separated_means(&mut r, k, d, 4.0 * sigma);
        let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let gm = GaussianMixture::new(weights.clone(), means.clone(), Covariance::SharedIsotropic(sigma * sigma))
            .unwrap();
        // density written out directly, independent of the library
        let density = |x: &[f64]| -> f64 {
            weights
                .iter()
                .zip(&means)
                .map(|(w, m)| {
                    let q: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * (-0.5 * q / (sigma * sigma)).exp()
                })
                .sum()
        };
        let found = find_all_modes(&gm);
        if found.len() != k {
            bad_count += 1;
            continue;
        }
        for m in &means {
            let g = grid_argmax(&density, m, 1.5 * sigma, 1e-5 * sigma);
            let near = found
                .points()
                .map(|p| p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(near / sigma);
        }
    }
    Outcome::new(
        bad_count == 0 && worst <= 1e-3,
        format!("100 mixtures, {bad_count} with mode count != K, worst distance {worst:.2e}·σ"),
    )
}

// ---------------------------------------------------------------------------
// 3. Conditional × marginal = joint

fn conditioning() -> Outcome {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = r.random_range(2..=4);
        let k = r.random_range(1..=5);
        let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let weights = weights.iter().map(|w| w / total).collect();
        let means: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let vars: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| r.random_range(0.1..2.0)).collect()).collect();
        let gm = GaussianMixture::new(weights, means, Covariance::Diagonal(vars)).unwrap();
        let mut mask: Vec<bool> = (0..d).map(|_| r.random_bool(0.5)).collect();
        if mask.iter().all(|&m| m) {
            mask[0] = false;
        }
        if mask.iter().all(|&m| !m) {
            mask[d - 1] = true;
        }
        let split = IndexSplit::from_mask(&mask);
        let marginal = gm.marginal(split.present()).unwrap();
        for _ in 0..20 {
            let t: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
            let tp = split.gather_present(&t);
            let cond = gm.condition(&split, &tp).unwrap();
            let lhs = cond.log_density(&split.gather_missing(&t)).unwrap() + marginal.log_density(&tp).unwrap();
            let rhs = gm.log_density(&t).unwrap();
            worst = worst.max(((lhs - rhs).exp() - 1.0).abs());
        }
    }
    Outcome::new(worst <= 1e-9, format!("1000 probes, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 4–6. Experiments

const MODE_METHODS: [&str; 5] = ["gmode", "rmode", "cmode", "grmode", "dpmode"];

struct Run {
    label: String,
    errors: Vec<(String, f64)>,
    greedy_cost: f64,
    dp_cost: f64,
    mode_counts: Vec<usize>,
}

impl Run {
    fn error(&self, method: &str) -> f64 {
        self.errors.iter().find(|(m, _)| m == method).expect("method was run").1
    }
}

fn run_all(gm: &GaussianMixture, truth: &[Vec<f64>], mask: &[Vec<bool>], label: &str) -> Run {
    let seq = MaskedSequence::from_truth(truth, mask).unwrap();
    let spec = ConstraintSpec::default();
    let options = ReconstructOptions::default();
    let mut rec = Reconstructor::new(gm, &seq, &spec, Some(truth), &options).unwrap();
    let mut errors = Vec::new();
    for name in Method::NAMES {
        let method = Method::parse(name, 1, DEFAULT_SAMPLES).unwrap();
        let out = rec.run(&method).unwrap();
        errors.push((name.to_string(), avg_squared_error(truth, &out.values).unwrap()));
    }
    let cands = rec.candidates(&CandidateKind::Modes).unwrap().clone();
    let bound = cands.bind(&spec, None).unwrap();
    let greedy = greedy_reconstruct(&cands, &bound, StartLayer::Auto).unwrap();
    let dp = dp_reconstruct(&cands, &bound);
    Run {
        label: label.into(),
        errors,
        greedy_cost: greedy.cost,
        dp_cost: dp.cost,
        mode_counts: cands.sizes(),
    }
}

fn describe(run: &Run, methods: &[&str]) -> String {
    let parts: Vec<String> = methods.iter().map(|m| format!("{m} {:.4}", run.error(m))).collect();
    format!("{}: {}", run.label, parts.join(", "))
}

fn toy_experiment() -> (Outcome, Vec<Run>, Duration) {
    let start = Instant::now();
    let data = toy_training_set(&ToySpec { noise_sigma: 0.2, n_points: 1000, seed: 1 }).unwrap();
    let cfg = TrainConfig { k: 200, latent_dim: 1, basis_count: 9, seed: 1, ..Default::default() };
    let gm = gtm_fit(&data, &cfg).unwrap().model.to_mixture().unwrap();

    let clean = toy_trajectory(100, 0.0, 2).unwrap();
    let inv = run_all(&gm, &clean, &make_mask(100, 2, &toy_mask_inv()).unwrap(), "M_inv");
    let fwd = run_all(&gm, &clean, &make_mask(100, 2, &toy_mask_fwd()).unwrap(), "M_fwd");
    let noisy = toy_trajectory(20, 0.2, 2).unwrap();
    let m50 = run_all(&gm, &noisy, &make_mask(20, 2, &MaskKind::Random { p: 0.5, seed: 3 }).unwrap(), "M_50%");
    let elapsed = start.elapsed();

    let inv_ok = inv.error("dpmode") <= 0.1 && inv.error("mean") >= 1.0 && inv.error("cmode") <= 0.05;
    let m50_ok = m50.error("cmode") <= 0.05
        && m50.error("dpmode") <= 0.3
        && 10.0 * m50.error("cmode") <= m50.error("mean")
        && 10.0 * m50.error("dpmode") <= m50.error("mean");
    let fwd_ok = fwd.error("dpmode") <= 2.0 * fwd.error("mean");
    let time_ok = elapsed < Duration::from_secs(300);
    let detail = format!(
        "[{}] {} | [{}] {} | [{}] {} | {:.1?}",
        if inv_ok { "ok" } else { "fail" },
        describe(&inv, &["mean", "cmode", "dpmode"]),
        if m50_ok { "ok" } else { "fail" },
        describe(&m50, &["mean", "cmode", "dpmode"]),
        if fwd_ok { "ok" } else { "fail" },
        describe(&fwd, &["mean", "dpmode"]),
        elapsed,
    );
    (Outcome::new(inv_ok && m50_ok && fwd_ok && time_ok, detail), vec![inv, fwd, m50], elapsed)
}

fn arm_experiment() -> (Outcome, Vec<Run>) {
    let start = Instant::now();
    let data = arm_training_set(1000, 0.05, 1).unwrap();
    let cfg = TrainConfig { k: 225, latent_dim: 2, basis_count: 49, seed: 1, ..Default::default() };
    let gm = gtm_fit(&data, &cfg).unwrap().model.to_mixture().unwrap();
    let traj = arm_trajectory(34, 0.01, 2).unwrap();
    let inv = run_all(&gm, &traj, &make_mask(34, 4, &arm_mask_inv()).unwrap(), "arm M_inv");
    let elapsed = start.elapsed();

    let order_ok = inv.error("dpmode") < inv.error("mean") && inv.error("dpmode") < inv.error("gmode");
    let in_range = inv.mode_counts.iter().filter(|&&c| (2..=17).contains(&c)).count();
    let counts_ok = in_range as f64 >= 0.9 * inv.mode_counts.len() as f64;
    let time_ok = elapsed < Duration::from_secs(300);
    let (lo, hi) = (inv.mode_counts.iter().min().unwrap(), inv.mode_counts.iter().max().unwrap());
    let detail = format!(
        "[{}] {} | [{}] mode counts {lo}..{hi}, {in_range}/{} steps in [2, 17] | {:.1?}",
        if order_ok { "ok" } else { "fail" },
        describe(&inv, &["mean", "gmode", "cmode", "dpmode"]),
        if counts_ok { "ok" } else { "fail" },
        inv.mode_counts.len(),
        elapsed,
    );
    (Outcome::new(order_ok && counts_ok && time_ok, detail), vec![inv])
}

fn dominance(runs: &[Run]) -> Outcome {
    let mut failures = Vec::new();
    for run in runs {
        if run.greedy_cost < run.dp_cost {
            failures.push(format!("{}: greedy {} < dp {}", run.label, run.greedy_cost, run.dp_cost));
        }
        let c = run.error("cmode");
        for m in MODE_METHODS {
            if run.error(m) < c {
                failures.push(format!("{}: {m} {} < cmode {c}", run.label, run.error(m)));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{} runs", runs.len())
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// 7. EM monotonicity

fn non_decreasing(ll: &[f64]) -> (bool, f64) {
    let worst = ll.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
    (worst <= 1e-9, worst)
}

fn em_monotonicity() -> Outcome {
    let mut r = rng(707);
    let mut bad = 0;
    let mut worst = 0.0f64;
    let mut steps = 0;
    for case in 0..20 {
        // GM-EM on blobs
        let d = r.random_range(1..=3);
        let k = r.random_range(2..=5);
        let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| r.random_range(-4.0..4.0)).collect()).collect();
        let noise = Normal::new(0.0, r.random_range(0.3..1.0)).unwrap();
        let blobs: Vec<Vec<f64>> = (0..r.random_range(100..300))
            .map(|i| centres[i % k].iter().map(|c| c + noise.sample(&mut r)).collect())
            .collect();
        let cfg = TrainConfig { seed: case, max_iter: 100, ..Default::default() };
        let fit = em_fit_isotropic(&blobs, k, &cfg).unwrap();
        let (ok, w) = non_decreasing(&fit.report.log_likelihood);
        bad += usize::from(!ok);
        worst = worst.max(w);
        steps += fit.report.log_likelihood.len().saturating_sub(1);

        // GTM-EM on a noisy random curve
        let a = r.random_range(0.5..3.0);
        let curve_noise = Normal::new(0.0, r.random_range(0.05..0.3)).unwrap();
        let curve: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let x: f64 = r.random_range(-2.0..2.0);
                vec![x + curve_noise.sample(&mut r), (a * x).sin() + curve_noise.sample(&mut r)]
            })
            .collect();
        let cfg = TrainConfig {
            k: r.random_range(10..=40),
            latent_dim: 1,
            basis_count: r.random_range(3..=9),
            seed: case,
            max_iter: 100,
            ..Default::default()
        };
        let fit = gtm_fit(&curve, &cfg).unwrap();
        let (ok, w) = non_decreasing(&fit.report.log_likelihood);
        bad += usize::from(!ok);
        worst = worst.max(w);
        steps += fit.report.log_likelihood.len().saturating_sub(1);
    }
    Outcome::new(
        bad == 0,
        format!("40 fits, {steps} EM steps, {bad} non-monotone, largest decrease {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Splitting at singleton layers

fn singleton_split() -> Outcome {
    let mut r = rng(808);
    let spec = ConstraintSpec::default();
    let mut mismatches = 0;
    let mut pieces = 0;
    for _ in 0..100 {
        let n = r.random_range(2..=30);
        let mut layers = random_layers(&mut r, n, 5, 2);
        for _ in 0..r.random_range(1..=4) {
            let at = r.random_range(0..n);
            layers[at].truncate(1);
        }
        let cands = CandidateSet::from_points(layers).unwrap();
        let bound = cands.bind(&spec, None).unwrap();
        pieces += split_at_singletons(&cands).len();
        let whole = dp_reconstruct(&cands, &bound);
        let chunked = dp_reconstruct_chunked(&cands, &bound).unwrap();
        if whole.cost != chunked.cost {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("100 sets, {pieces} pieces, {mismatches} cost mismatches"))
}

// ---------------------------------------------------------------------------
// 9. Arm inverse round trip

fn arm_round_trip() -> Outcome {
    let arm = ArmSpec::default();
    let mut r = rng(909);
    let margin = 1e-6;
    let mut misses = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let theta = [
            r.random_range(arm.theta1_range.0 + margin..arm.theta1_range.1 - margin),
            r.random_range(arm.theta2_range.0 + margin..arm.theta2_range.1 - margin),
        ];
        let best = arm_inverse_analytic(arm_forward(theta))
            .iter()
            .map(|s| (s[0] - theta[0]).abs().max((s[1] - theta[1]).abs()))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
        misses += usize::from(best.is_nan() || best > 1e-9);
    }
    Outcome::new(misses == 0, format!("1000 angles, {misses} misses, worst {worst:.1e}"))
}

// ---------------------------------------------------------------------------

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    let mut results: Vec<(&str, Outcome, Duration)> = Vec::new();

    let (o, t) = timed(dp_exactness);
    let o = Outcome::new(o.pass && t < Duration::from_secs(10), o.detail);
    results.push(("1 DP exactness", o, t));

    let (o, t) = timed(mode_oracle);
    let o = Outcome::new(o.pass && t < Duration::from_secs(60), o.detail);
    results.push(("2 mode oracle", o, t));

    let (o, t) = timed(conditioning);
    results.push(("3 conditioning", o, t));

    let (toy, mut runs, t) = toy_experiment();
    results.push(("4 toy experiment", toy, t));

    let start = Instant::now();
    let (arm, arm_runs) = arm_experiment();
    results.push(("5 robot arm", arm, start.elapsed()));
    runs.extend(arm_runs);

    let (o, t) = timed(|| dominance(&runs));
    results.push(("6 baseline dominance", o, t));

    let (o, t) = timed(em_monotonicity);
    results.push(("7 EM monotonicity", o, t));

    let (o, t) = timed(singleton_split);
    results.push(("8 singleton split", o, t));

    let (o, t) = timed(arm_round_trip);
    results.push(("9 arm round trip", o, t));

    println!();
    for (name, o, t) in &results {
        println!("{} {name}: {} ({:.2?})", if o.pass { "PASS" } else { "FAIL" }, o.detail, t);
    }
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
