//! Sequence reconstruction: candidate fills per step from conditional
//! distributions, and selection of one global reconstruction by dynamic
//! programming over the layered candidate graph (or by a baseline).

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{BoundConstraint, ConstraintSpec};
use crate::error::{Error, Result};
use crate::math::{self, stream};
use crate::mixture::{GaussianMixture, IndexSplit};
use crate::modes::{self, ModeSearch};

/// In-memory marker for a missing value. The mask is authoritative; this
/// value is never read.
pub const MISSING: f64 = f64::NAN;

/// A sequence of `N` vectors in `ℝ^D` with some entries missing.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    timestamps: Option<Vec<f64>>,
}

impl MaskedSequence {
    /// `mask[n][d]` is `true` when the value is present. Missing entries of
    /// `values` are replaced by [`MISSING`].
    pub fn new(mut values: Vec<Vec<f64>>, mask: Vec<Vec<bool>>, timestamps: Option<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("a sequence needs at least one step".into()));
        }
        if mask.len() != values.len() {
            return Err(Error::ShapeMismatch(format!("{} mask rows for {} steps", mask.len(), values.len())));
        }
        let d = values[0].len();
        if d == 0 {
            return Err(Error::InvalidParameter("a sequence needs at least one coordinate".into()));
        }
        for (row, m) in values.iter_mut().zip(&mask) {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            if m.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: m.len() });
            }
            for (v, &present) in row.iter_mut().zip(m) {
                if !present {
                    *v = MISSING;
                } else if !v.is_finite() {
                    return Err(Error::NonFinite("present value"));
                }
            }
        }
        if let Some(z) = &timestamps {
            if z.len() != values.len() {
                return Err(Error::DimensionMismatch { expected: values.len(), got: z.len() });
            }
            if z.iter().any(|v| !v.is_finite()) || z.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter("timestamps must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { values, mask, timestamps })
    }

    /// A sequence with nothing missing.
    pub fn complete(values: Vec<Vec<f64>>) -> Result<Self> {
        let mask = values.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(values, mask, None)
    }

    /// Hides the entries of a complete sequence where `mask` is `false`.
    pub fn from_truth(truth: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<Self> {
        Self::new(truth.to_vec(), mask.to_vec(), None)
    }

    pub fn with_timestamps(self, timestamps: Vec<f64>) -> Result<Self> {
        Self::new(self.values, self.mask, Some(timestamps))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.mask
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn split(&self, n: usize) -> IndexSplit {
        IndexSplit::from_mask(&self.mask[n])
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| !m).count()
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// The step had nothing missing.
    Observed,
    Mode,
    Mean,
    Centroid,
    Sample,
}

/// A full `D`-vector: observed values copied, missing values filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Vec<f64>,
    pub provenance: Provenance,
    /// Log-density of the filled block under the step's conditional
    /// distribution (`0` when nothing is missing).
    pub log_density: f64,
}

/// Candidates per step: the layers of the shortest-path graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    layers: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn new(layers: Vec<Vec<Candidate>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a candidate set needs at least one layer".into()));
        }
        let d = layers[0].first().map_or(0, |c| c.point.len());
        for (n, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(Error::InvalidParameter(format!("layer {n} has no candidates")));
            }
            if let Some(c) = layer.iter().find(|c| c.point.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: c.point.len() });
            }
        }
        Ok(Self { layers })
    }

    /// Plain points, all tagged as modes with zero log-density.
    pub fn from_points(layers: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            layers
                .into_iter()
                .map(|l| {
                    l.into_iter()
                        .map(|point| Candidate { point, provenance: Provenance::Mode, log_density: 0.0 })
                        .collect()
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.layers[0][0].point.len()
    }

    pub fn layers(&self) -> &[Vec<Candidate>] {
        &self.layers
    }

    pub fn layer(&self, n: usize) -> &[Candidate] {
        &self.layers[n]
    }

    pub fn point(&self, n: usize, i: usize) -> &[f64] {
        &self.layers[n][i].point
    }

    /// `ν_n` for every layer.
    pub fn sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn reversed(&self) -> Self {
        Self { layers: self.layers.iter().rev().cloned().collect() }
    }

    /// The sequence obtained by picking candidate `path[n]` at every step.
    pub fn sequence(&self, path: &[usize]) -> Vec<Vec<f64>> {
        path.iter().enumerate().map(|(n, &i)| self.layers[n][i].point.clone()).collect()
    }

    /// Constraint value of a path through the graph.
    pub fn path_cost(&self, bound: &BoundConstraint<'_>, path: &[usize]) -> f64 {
        bound.path_cost(path.iter().enumerate().map(|(n, &i)| self.point(n, i)))
    }

    /// Binds `spec` to this graph's length and dimension.
    pub fn bind<'a>(&self, spec: &'a ConstraintSpec, timestamps: Option<&[f64]>) -> Result<BoundConstraint<'a>> {
        spec.bind(self.len(), self.dim(), timestamps)
    }
}

/// What to offer as candidates for the missing block of a step.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateKind {
    /// All modes of the conditional distribution.
    Modes,
    /// The conditional mean when the conditional is unimodal, else its modes.
    ModesMeanIfUnimodal,
    /// `count` draws from the conditional. Step `n` uses its own random
    /// stream derived from `seed`.
    Samples { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePolicy {
    pub kind: CandidateKind,
    /// For steps with every coordinate missing, offer the `K` component
    /// centroids instead of applying `kind` to the joint density.
    pub all_centroids_when_all_missing: bool,
    pub search: ModeSearch,
}

impl CandidatePolicy {
    pub fn new(kind: CandidateKind) -> Self {
        Self { kind, all_centroids_when_all_missing: false, search: ModeSearch::default() }
    }
}

impl Default for CandidatePolicy {
    fn default() -> Self {
        Self::new(CandidateKind::Modes)
    }
}

fn check_row(gm: &GaussianMixture, row: &[f64], mask: &[bool]) -> Result<()> {
    if row.len() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: row.len() });
    }
    if mask.len() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: mask.len() });
    }
    Ok(())
}

/// Candidate reconstructions for one step.
///
/// `step` selects the random stream of [`CandidateKind::Samples`] and is
/// otherwise unused.
pub fn candidates_for_step(
    gm: &GaussianMixture,
    row: &[f64],
    mask: &[bool],
    policy: &CandidatePolicy,
    step: usize,
) -> Result<Vec<Candidate>> {
    candidates_cached(gm, row, mask, policy, step, &OnceLock::new())
}

fn candidates_cached(
    gm: &GaussianMixture,
    row: &[f64],
    mask: &[bool],
    policy: &CandidatePolicy,
    step: usize,
    joint: &OnceLock<Vec<Candidate>>,
) -> Result<Vec<Candidate>> {
    check_row(gm, row, mask)?;
    let split = IndexSplit::from_mask(mask);
    if split.missing().is_empty() {
        return Ok(vec![Candidate { point: row.to_vec(), provenance: Provenance::Observed, log_density: 0.0 }]);
    }
    if split.present().is_empty() {
        if policy.all_centroids_when_all_missing {
            return Ok(gm
                .means()
                .iter()
                .map(|m| Candidate {
                    point: m.clone(),
                    provenance: Provenance::Centroid,
                    log_density: gm.log_density(m).unwrap_or(f64::NEG_INFINITY),
                })
                .collect());
        }
        // the joint density does not depend on the row: share its candidates
        if !matches!(policy.kind, CandidateKind::Samples { .. }) {
            return Ok(joint.get_or_init(|| fill(gm, &split, &[], policy, step)).clone());
        }
    }
    let observed = split.gather_present(row);
    let cond = gm.condition(&split, &observed)?;
    Ok(fill(&cond, &split, &observed, policy, step))
}

fn fill(cond: &GaussianMixture, split: &IndexSplit, observed: &[f64], policy: &CandidatePolicy, step: usize) -> Vec<Candidate> {
    let make = |x: &[f64], provenance, log_density| Candidate {
        point: split.merge(observed, x),
        provenance,
        log_density,
    };
    let log_p = |x: &[f64]| cond.log_density(x).unwrap_or(f64::NEG_INFINITY);
    match &policy.kind {
        CandidateKind::Samples { count, seed } => {
            let mut rng = math::rng_stream(*seed, stream::STEP_SAMPLE_BASE + step as u64);
            cond.sample_with(*count, &mut rng)
                .iter()
                .map(|x| make(x, Provenance::Sample, log_p(x)))
                .collect()
        }
        CandidateKind::Modes | CandidateKind::ModesMeanIfUnimodal => {
            let found = modes::find_all_modes_with(cond, &policy.search);
            if found.len() == 1 && policy.kind == CandidateKind::ModesMeanIfUnimodal {
                let m = cond.mean();
                let lp = log_p(&m);
                return vec![make(&m, Provenance::Mean, lp)];
            }
            found.modes.iter().map(|m| make(&m.point, Provenance::Mode, m.log_density)).collect()
        }
    }
}

/// Candidates for every step of `seq`, generated in parallel.
pub fn candidate_set(gm: &GaussianMixture, seq: &MaskedSequence, policy: &CandidatePolicy) -> Result<CandidateSet> {
    if seq.dim() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: seq.dim() });
    }
    let joint = OnceLock::new();
    let layers = (0..seq.len())
        .into_par_iter()
        .map(|n| candidates_cached(gm, &seq.values()[n], &seq.mask()[n], policy, n, &joint))
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::new(layers)
}

/// Lengths and back-pointers of the dynamic programming recursion.
///
/// Without second-order terms the states of layer `n` are its nodes. With
/// smoothness, the states of layer `n ≥ 1` are node pairs `(j, i)` (node `j`
/// at `n − 1`, node `i` at `n`) stored at `j · ν_n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    pub pair_states: bool,
    /// `l_{n,s}`: cost of the best partial path ending in state `s`.
    pub lengths: Vec<Vec<f64>>,
    /// Best predecessor state in layer `n − 1` (unused in layer 0).
    pub predecessors: Vec<Vec<usize>>,
}

impl PathTable {
    /// Best length of a partial path ending at each node of layer `n`.
    pub fn node_lengths(&self, n: usize, nu: usize) -> Vec<f64> {
        if !self.pair_states || n == 0 {
            return self.lengths[n].clone();
        }
        (0..nu)
            .map(|i| self.lengths[n].iter().skip(i).step_by(nu).copied().fold(f64::INFINITY, f64::min))
            .collect()
    }
}

/// A selected path through the candidate graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChoice {
    /// Chosen candidate index per layer.
    pub path: Vec<usize>,
    pub sequence: Vec<Vec<f64>>,
    pub cost: f64,
}

fn argmin(xs: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, x) in xs.into_iter().enumerate() {
        // strict: ties keep the lowest index; NaN never wins
        if x < best.1 || (i == 0 && x.is_nan()) {
            best = (i, x);
        }
    }
    best
}

const PAR_LAYER_WORK: usize = 4096;

/// Exact minimum-cost path through the layered graph.
pub fn dp_reconstruct(cands: &CandidateSet, bound: &BoundConstraint<'_>) -> PathChoice {
    let (table, path) = dp_table(cands, bound);
    let cost = path_end_cost(&table, &path, cands);
    PathChoice { sequence: cands.sequence(&path), path, cost }
}

fn path_end_cost(table: &PathTable, path: &[usize], cands: &CandidateSet) -> f64 {
    let n = path.len() - 1;
    let s = if table.pair_states && n > 0 { path[n - 1] * cands.layer(n).len() + path[n] } else { path[n] };
    table.lengths[n][s]
}

/// Runs the recursion and backtracks the optimal path.
pub fn dp_table(cands: &CandidateSet, bound: &BoundConstraint<'_>) -> (PathTable, Vec<usize>) {
    if bound.has_smoothness() {
        dp_pairs(cands, bound)
    } else {
        dp_nodes(cands, bound, 0..cands.len(), None)
    }
}

/// First-order recursion over `range`. `entry` is the accumulated cost and
/// point of a fixed node just before the range.
fn dp_nodes(
    cands: &CandidateSet,
    bound: &BoundConstraint<'_>,
    range: Range<usize>,
    entry: Option<(f64, &[f64])>,
) -> (PathTable, Vec<usize>) {
    let first = range.start;
    let mut lengths: Vec<Vec<f64>> = Vec::with_capacity(range.len());
    let mut preds: Vec<Vec<usize>> = Vec::with_capacity(range.len());
    lengths.push(
        cands
            .layer(first)
            .iter()
            .map(|c| match entry {
                None => bound.node_cost(&c.point),
                Some((carry, prev)) => (carry + bound.transition_cost(first, None, prev, &c.point)) + bound.node_cost(&c.point),
            })
            .collect(),
    );
    preds.push(vec![0; cands.layer(first).len()]);
    for n in first + 1..range.end {
        let prev_layer = cands.layer(n - 1);
        let prev_len = lengths.last().expect("at least one layer");
        let relax = |c: &Candidate| {
            let (j, best) = argmin(
                prev_layer
                    .iter()
                    .zip(prev_len)
                    .map(|(p, &l)| l + bound.transition_cost(n, None, &p.point, &c.point)),
            );
            (best + bound.node_cost(&c.point), j)
        };
        let layer = cands.layer(n);
        let out: Vec<(f64, usize)> = if layer.len() * prev_layer.len() >= PAR_LAYER_WORK {
            layer.par_iter().map(relax).collect()
        } else {
            layer.iter().map(relax).collect()
        };
        lengths.push(out.iter().map(|o| o.0).collect());
        preds.push(out.iter().map(|o| o.1).collect());
    }
    let (mut s, _) = argmin(lengths.last().expect("at least one layer").iter().copied());
    let mut path = vec![0; range.len()];
    for k in (0..range.len()).rev() {
        path[k] = s;
        s = preds[k][s];
    }
    (PathTable { pair_states: false, lengths, predecessors: preds }, path)
}

/// Second-order recursion: states are node pairs of adjacent layers.
fn dp_pairs(cands: &CandidateSet, bound: &BoundConstraint<'_>) -> (PathTable, Vec<usize>) {
    let n_layers = cands.len();
    let mut lengths: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    let mut preds: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
    lengths.push(cands.layer(0).iter().map(|c| bound.node_cost(&c.point)).collect());
    preds.push(vec![0; cands.layer(0).len()]);
    for n in 1..n_layers {
        let (before, prev, cur) = (if n >= 2 { Some(cands.layer(n - 2)) } else { None }, cands.layer(n - 1), cands.layer(n));
        let prev_len = lengths.last().expect("at least one layer");
        let state = |s: usize| {
            let (j, i) = (s / cur.len(), s % cur.len());
            let c = &cur[i].point;
            let p = &prev[j].point;
            let (pred, best) = match before {
                // layer 1: the predecessor state is node j itself
                None => (j, prev_len[j] + bound.transition_cost(n, None, p, c)),
                Some(b) => {
                    let (h, best) = argmin(b.iter().enumerate().map(|(h, bh)| {
                        prev_len[h * prev.len() + j] + bound.transition_cost(n, Some(&bh.point), p, c)
                    }));
                    (h * prev.len() + j, best)
                }
            };
            (best + bound.node_cost(c), pred)
        };
        let n_states = prev.len() * cur.len();
        let out: Vec<(f64, usize)> = if n_states * before.map_or(1, <[_]>::len) >= PAR_LAYER_WORK {
            (0..n_states).into_par_iter().map(state).collect()
        } else {
            (0..n_states).map(state).collect()
        };
        lengths.push(out.iter().map(|o| o.0).collect());
        preds.push(out.iter().map(|o| o.1).collect());
    }
    let (mut s, _) = argmin(lengths[n_layers - 1].iter().copied());
    let mut path = vec![0; n_layers];
    for n in (0..n_layers).rev() {
        path[n] = if n == 0 { s } else { s % cands.layer(n).len() };
        s = preds[n][s];
    }
    (PathTable { pair_states: true, lengths, predecessors: preds }, path)
}

/// Where greedy selection starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartLayer {
    /// The first layer with the fewest candidates.
    #[default]
    Auto,
    Index(usize),
}

/// Greedy path: fix the lowest-index node of the start layer, then extend
/// leftwards to the first layer and rightwards to the last, each time
/// taking the locally cheapest node.
pub fn greedy_reconstruct(cands: &CandidateSet, bound: &BoundConstraint<'_>, start: StartLayer) -> Result<PathChoice> {
    let n_layers = cands.len();
    let s = match start {
        StartLayer::Auto => argmin(cands.layers().iter().map(|l| l.len() as f64)).0,
        StartLayer::Index(s) if s < n_layers => s,
        StartLayer::Index(s) => {
            return Err(Error::InvalidIndex(format!("start layer {s} out of range 0..{n_layers}")));
        }
    };
    let mut path = vec![0usize; n_layers];
    for n in (0..s).rev() {
        let next = cands.point(n + 1, path[n + 1]);
        let after = (n + 2 < n_layers).then(|| cands.point(n + 2, path[n + 2]));
        path[n] = argmin(cands.layer(n).iter().map(|c| {
            // terms that become determined once node n is fixed
            let step = bound.transition_cost(n + 1, None, &c.point, next);
            let curve = after.map_or(0.0, |a| {
                bound.transition_cost(n + 2, Some(&c.point), next, a) - bound.transition_cost(n + 2, None, next, a)
            });
            step + curve + bound.node_cost(&c.point)
        }))
        .0;
    }
    for n in s + 1..n_layers {
        let prev = cands.point(n - 1, path[n - 1]);
        let before = (n >= 2).then(|| cands.point(n - 2, path[n - 2]));
        path[n] = argmin(
            cands
                .layer(n)
                .iter()
                .map(|c| bound.transition_cost(n, before, prev, &c.point) + bound.node_cost(&c.point)),
        )
        .0;
    }
    let cost = cands.path_cost(bound, &path);
    Ok(PathChoice { sequence: cands.sequence(&path), path, cost })
}

/// Consecutive layer ranges, each ending at a layer with a single candidate
/// (except possibly the last). Every path must pass through those layers,
/// so the ranges can be solved one after another, each starting from the
/// fixed endpoint of the previous one.
pub fn split_at_singletons(cands: &CandidateSet) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (n, layer) in cands.layers().iter().enumerate() {
        if layer.len() == 1 {
            out.push(start..n + 1);
            start = n + 1;
        }
    }
    if start < cands.len() {
        out.push(start..cands.len());
    }
    out
}

/// Dynamic programming piece by piece over [`split_at_singletons`].
///
/// Each piece is seeded with the accumulated cost at the preceding
/// singleton, so the result equals [`dp_reconstruct`] exactly. Only
/// first-order constraints decouple at a singleton layer; a spec with a
/// smoothness term is rejected.
pub fn dp_reconstruct_chunked(cands: &CandidateSet, bound: &BoundConstraint<'_>) -> Result<PathChoice> {
    if bound.has_smoothness() {
        return Err(Error::InvalidParameter(
            "piecewise dynamic programming does not support smoothness terms".into(),
        ));
    }
    let mut path = Vec::with_capacity(cands.len());
    let mut carry: Option<f64> = None;
    for range in split_at_singletons(cands) {
        let entry = carry.map(|c| (c, cands.point(range.start - 1, path[range.start - 1])));
        let (table, piece) = dp_nodes(cands, bound, range.clone(), entry);
        let last = piece.len() - 1;
        carry = Some(table.lengths[last][piece[last]]);
        path.extend(piece);
    }
    let cost = carry.expect("at least one range");
    Ok(PathChoice { sequence: cands.sequence(&path), path, cost })
}

/// `(1/N) Σ_n ‖t⁽ⁿ⁾ − t̂⁽ⁿ⁾‖²`.
pub fn avg_squared_error(truth: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != recon.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} truth rows vs {} reconstructed rows", truth.len(), recon.len())));
    }
    let mut total = 0.0;
    for (t, r) in truth.iter().zip(recon) {
        if t.len() != r.len() {
            return Err(Error::ShapeMismatch(format!("row widths {} vs {}", t.len(), r.len())));
        }
        total += math::squared_distance(t, r);
    }
    Ok(total / truth.len() as f64)
}

/// Reconstruction methods.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Conditional mean per step.
    Mean,
    /// Highest conditional mode per step.
    Gmode,
    /// A uniformly chosen conditional mode per step.
    Rmode { seed: u64 },
    /// The conditional mode closest to the truth (an oracle lower bound).
    Cmode,
    /// Greedy path through the modes.
    Grmode,
    /// Optimal path through the modes.
    Dpmode,
    /// Optimal path, with the mean replacing the mode of unimodal steps.
    Meandp,
    /// Optimal path through `samples` draws per step.
    Sampdp { samples: usize, seed: u64 },
}

/// Samples per step for [`Method::Sampdp`] unless stated.
pub const DEFAULT_SAMPLES: usize = 6;

impl Method {
    pub const NAMES: [&'static str; 8] = ["mean", "gmode", "rmode", "cmode", "grmode", "dpmode", "meandp", "sampdp"];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mean => "mean",
            Method::Gmode => "gmode",
            Method::Rmode { .. } => "rmode",
            Method::Cmode => "cmode",
            Method::Grmode => "grmode",
            Method::Dpmode => "dpmode",
            Method::Meandp => "meandp",
            Method::Sampdp { .. } => "sampdp",
        }
    }

    /// Parses a method name; stochastic methods take `seed` (and `samples`).
    pub fn parse(name: &str, seed: u64, samples: usize) -> Result<Self> {
        Ok(match name {
            "mean" => Method::Mean,
            "gmode" => Method::Gmode,
            "rmode" => Method::Rmode { seed },
            "cmode" => Method::Cmode,
            "grmode" => Method::Grmode,
            "dpmode" => Method::Dpmode,
            "meandp" => Method::Meandp,
            "sampdp" => {
                if samples == 0 {
                    return Err(Error::InvalidParameter("sampdp needs at least one sample".into()));
                }
                Method::Sampdp { samples, seed }
            }
            _ => return Err(Error::InvalidParameter(format!("unknown method {name:?}"))),
        })
    }

    fn candidate_kind(&self) -> Option<CandidateKind> {
        match self {
            Method::Mean => None,
            Method::Meandp => Some(CandidateKind::ModesMeanIfUnimodal),
            Method::Sampdp { samples, seed } => Some(CandidateKind::Samples { count: *samples, seed: *seed }),
            _ => Some(CandidateKind::Modes),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Seeds default to 0 and `sampdp` to [`DEFAULT_SAMPLES`].
    fn from_str(s: &str) -> Result<Self> {
        Method::parse(s, 0, DEFAULT_SAMPLES)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconstructOptions {
    pub all_centroids_when_all_missing: bool,
    pub search: ModeSearch,
}

/// Per-step record of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// `ν_n`; 1 for the mean.
    pub candidates: usize,
    pub chosen: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: String,
    /// Constraint value of the reconstructed sequence.
    pub total_cost: f64,
    pub steps: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub method: Method,
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// Reconstructs `seq` with one method.
pub fn reconstruct(
    gm: &GaussianMixture,
    seq: &MaskedSequence,
    method: &Method,
    spec: &ConstraintSpec,
    truth: Option<&[Vec<f64>]>,
    options: &ReconstructOptions,
) -> Result<Reconstruction> {
    Reconstructor::new(gm, seq, spec, truth, options)?.run(method)
}

/// Runs several methods on one sequence, sharing candidate sets between
/// methods that use the same kind of candidates.
pub struct Reconstructor<'a> {
    gm: &'a GaussianMixture,
    seq: &'a MaskedSequence,
    spec: &'a ConstraintSpec,
    truth: Option<&'a [Vec<f64>]>,
    options: &'a ReconstructOptions,
    cache: Vec<(CandidateKind, CandidateSet)>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(
        gm: &'a GaussianMixture,
        seq: &'a MaskedSequence,
        spec: &'a ConstraintSpec,
        truth: Option<&'a [Vec<f64>]>,
        options: &'a ReconstructOptions,
    ) -> Result<Self> {
        if seq.dim() != gm.dim() {
            return Err(Error::DimensionMismatch { expected: gm.dim(), got: seq.dim() });
        }
        if let Some(t) = truth {
            if t.len() != seq.len() || t.iter().any(|r| r.len() != seq.dim()) {
                return Err(Error::ShapeMismatch("truth does not match the sequence shape".into()));
            }
            if t.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("truth"));
            }
        }
        for fm in spec.forward_mappings() {
            fm.check_pattern(seq.mask())?;
        }
        spec.bind(seq.len(), seq.dim(), seq.timestamps())?;
        Ok(Self { gm, seq, spec, truth, options, cache: Vec::new() })
    }

    /// The candidate graph of the given kind, generated on first use.
    pub fn candidates(&mut self, kind: &CandidateKind) -> Result<&CandidateSet> {
        if let Some(pos) = self.cache.iter().position(|(k, _)| k == kind) {
            return Ok(&self.cache[pos].1);
        }
        let policy = CandidatePolicy {
            kind: kind.clone(),
            all_centroids_when_all_missing: self.options.all_centroids_when_all_missing,
            search: self.options.search.clone(),
        };
        let set = candidate_set(self.gm, self.seq, &policy)?;
        self.cache.push((kind.clone(), set));
        Ok(&self.cache.last().expect("just pushed").1)
    }

    pub fn run(&mut self, method: &Method) -> Result<Reconstruction> {
        if *method == Method::Cmode && self.truth.is_none() {
            return Err(Error::MissingTruth);
        }
        let bound = self.spec.bind(self.seq.len(), self.seq.dim(), self.seq.timestamps())?;
        let Some(kind) = method.candidate_kind() else {
            return self.run_mean(method, &bound);
        };
        let truth = self.truth;
        let cands = self.candidates(&kind)?.clone();
        let path: Vec<usize> = match method {
            Method::Gmode => cands
                .layers()
                .iter()
                .map(|l| argmin(l.iter().map(|c| -c.log_density)).0)
                .collect(),
            Method::Rmode { seed } => {
                let mut rng = math::rng_stream(*seed, stream::RANDOM_MODE);
                cands.layers().iter().map(|l| rng.random_range(0..l.len())).collect()
            }
            Method::Cmode => {
                let truth = truth.expect("checked above");
                cands
                    .layers()
                    .iter()
                    .zip(truth)
                    .map(|(l, t)| argmin(l.iter().map(|c| math::squared_distance(&c.point, t))).0)
                    .collect()
            }
            Method::Grmode => greedy_reconstruct(&cands, &bound, StartLayer::Auto)?.path,
            Method::Dpmode | Method::Meandp | Method::Sampdp { .. } => dp_reconstruct(&cands, &bound).path,
            Method::Mean => unreachable!("handled above"),
        };
        let values = cands.sequence(&path);
        let steps = path
            .iter()
            .enumerate()
            .map(|(n, &i)| StepDiagnostics {
                candidates: cands.layer(n).len(),
                chosen: i,
                provenance: cands.layer(n)[i].provenance,
            })
            .collect();
        let total_cost = cands.path_cost(&bound, &path);
        Ok(Reconstruction {
            method: method.clone(),
            values,
            diagnostics: Diagnostics { method: method.name().into(), total_cost, steps },
        })
    }

    fn run_mean(&self, method: &Method, bound: &BoundConstraint<'_>) -> Result<Reconstruction> {
        let rows = (0..self.seq.len())
            .into_par_iter()
            .map(|n| {
                let row = &self.seq.values()[n];
                let split = self.seq.split(n);
                if split.missing().is_empty() {
                    return Ok((row.clone(), Provenance::Observed));
                }
                let observed = split.gather_present(row);
                let cond = self.gm.condition(&split, &observed)?;
                Ok((split.merge(&observed, &cond.mean()), Provenance::Mean))
            })
            .collect::<Result<Vec<_>>>()?;
        let steps = rows
            .iter()
            .map(|(_, p)| StepDiagnostics { candidates: 1, chosen: 0, provenance: *p })
            .collect();
        let values: Vec<Vec<f64>> = rows.into_iter().map(|(r, _)| r).collect();
        let total_cost = bound.path_cost(values.iter().map(Vec::as_slice));
        Ok(Reconstruction {
            method: method.clone(),
            values,
            diagnostics: Diagnostics { method: method.name().into(), total_cost, steps },
        })
    }
}
