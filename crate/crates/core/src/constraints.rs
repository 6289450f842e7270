//! Constraint functionals over whole sequences: continuity (trajectory
//! length), smoothness (second differences), quadratic energy and
//! forward-mapping consistency, plus their weighted combination.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments;

/// Vector norm used by the difference-based constraints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Euclidean,
    SquaredEuclidean,
    /// `sqrt(Σ w_d v_d²)` with strictly positive `w`.
    WeightedEuclidean(Vec<f64>),
}

impl NormKind {
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        if let NormKind::WeightedEuclidean(w) = self {
            if w.is_empty() || w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("norm weights must be finite and > 0".into()));
            }
            if let Some(d) = dim {
                if w.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: w.len() });
                }
            }
        }
        Ok(())
    }

    /// Norm of `a - b`.
    pub fn of_difference(&self, a: &[f64], b: &[f64]) -> f64 {
        self.of_iter(a.iter().zip(b).map(|(x, y)| x - y))
    }

    pub fn of_iter(&self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            NormKind::Euclidean => v.map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::SquaredEuclidean => v.map(|x| x * x).sum(),
            NormKind::WeightedEuclidean(w) => v.zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt(),
        }
    }
}

fn check_seq(seq: &[Vec<f64>]) -> Result<usize> {
    let d = seq.first().map_or(0, Vec::len);
    for row in seq {
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sequence"));
        }
    }
    Ok(d)
}

/// Weighted polygonal length `Σ w_n ‖t⁽ⁿ⁾ − t⁽ⁿ⁺¹⁾‖`; weights default to 1.
pub fn continuity_cost(seq: &[Vec<f64>], norm: &NormKind, step_weights: Option<&[f64]>) -> Result<f64> {
    let d = check_seq(seq)?;
    norm.validate(Some(d))?;
    if let Some(w) = step_weights {
        if w.len() != seq.len().saturating_sub(1) {
            return Err(Error::DimensionMismatch { expected: seq.len().saturating_sub(1), got: w.len() });
        }
    }
    Ok(seq
        .windows(2)
        .enumerate()
        .map(|(n, p)| step_weights.map_or(1.0, |w| w[n]) * norm.of_difference(&p[0], &p[1]))
        .sum())
}

/// `Σ ‖t⁽ⁿ⁺¹⁾ − 2t⁽ⁿ⁾ + t⁽ⁿ⁻¹⁾‖` over interior steps.
pub fn smoothness_cost(seq: &[Vec<f64>], norm: &NormKind) -> Result<f64> {
    let d = check_seq(seq)?;
    norm.validate(Some(d))?;
    Ok(seq.windows(3).map(|w| second_difference(norm, &w[0], &w[1], &w[2])).sum())
}

fn second_difference(norm: &NormKind, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    norm.of_iter(a.iter().zip(b).zip(c).map(|((a, b), c)| c - 2.0 * b + a))
}

/// Validated quadratic form `(t − t₀)ᵀ Q (t − t₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    q: Vec<Vec<f64>>,
    t0: Vec<f64>,
}

/// Absolute tolerance on `|Q_ij − Q_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-12;

impl Quadratic {
    pub fn new(q: Vec<Vec<f64>>, t0: Vec<f64>) -> Result<Self> {
        let d = t0.len();
        if q.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: q.len() });
        }
        for row in &q {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
        }
        if q.iter().flatten().chain(&t0).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quadratic constraint"));
        }
        for i in 0..d {
            for j in 0..i {
                if (q[i][j] - q[j][i]).abs() > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { tol: SYMMETRY_TOL });
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| q[i][j]);
        let scale = m.amax().max(1.0);
        if m.symmetric_eigenvalues().iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidParameter("quadratic matrix must be positive semidefinite".into()));
        }
        Ok(Self { q, t0 })
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn centre(&self) -> &[f64] {
        &self.t0
    }

    pub fn energy(&self, t: &[f64]) -> f64 {
        let v: Vec<f64> = t.iter().zip(&self.t0).map(|(a, b)| a - b).collect();
        self.q
            .iter()
            .zip(&v)
            .map(|(row, vi)| vi * row.iter().zip(&v).map(|(q, vj)| q * vj).sum::<f64>())
            .sum()
    }
}

/// `Σ_n (t⁽ⁿ⁾ − t₀)ᵀ Q (t⁽ⁿ⁾ − t₀)`.
pub fn quadratic_cost(seq: &[Vec<f64>], q: &[Vec<f64>], t0: &[f64]) -> Result<f64> {
    let quad = Quadratic::new(q.to_vec(), t0.to_vec())?;
    let d = check_seq(seq)?;
    if !seq.is_empty() && d != t0.len() {
        return Err(Error::DimensionMismatch { expected: t0.len(), got: d });
    }
    Ok(seq.iter().map(|t| quad.energy(t)).sum())
}

/// `Σ_n ‖t_𝒫⁽ⁿ⁾ − g(t_ℳ⁽ⁿ⁾)‖`, the present block against the image of the
/// missing block.
pub fn forward_mapping_cost(
    seq_present: &[Vec<f64>],
    seq_missing: &[Vec<f64>],
    map: &dyn Fn(&[f64]) -> Vec<f64>,
    norm: &NormKind,
) -> Result<f64> {
    if seq_present.len() != seq_missing.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} present rows vs {} missing rows",
            seq_present.len(),
            seq_missing.len()
        )));
    }
    check_seq(seq_present)?;
    check_seq(seq_missing)?;
    let mut total = 0.0;
    for (p, m) in seq_present.iter().zip(seq_missing) {
        let g = map(m);
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch { expected: p.len(), got: g.len() });
        }
        total += norm.of_difference(p, &g);
    }
    Ok(total)
}

type MapFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A forward mapping `g: ℝ^|ℳ| → ℝ^|𝒫|` together with the coordinates it
/// reads (`missing`) and predicts (`present`).
#[derive(Clone)]
pub struct ForwardMapping {
    name: String,
    present: Vec<usize>,
    missing: Vec<usize>,
    map: Arc<MapFn>,
}

impl fmt::Debug for ForwardMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardMapping")
            .field("name", &self.name)
            .field("present", &self.present)
            .field("missing", &self.missing)
            .finish()
    }
}

impl PartialEq for ForwardMapping {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.present == other.present && self.missing == other.missing
    }
}

impl ForwardMapping {
    pub fn new<F>(name: &str, present: Vec<usize>, missing: Vec<usize>, map: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        if present.is_empty() || missing.is_empty() {
            return Err(Error::InvalidParameter("forward mapping needs present and missing coordinates".into()));
        }
        let mut all: Vec<usize> = present.iter().chain(&missing).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidIndex("present and missing coordinates overlap".into()));
        }
        Ok(Self { name: name.to_string(), present, missing, map: Arc::new(map) })
    }

    /// Built-in mappings: `"arm"` (θ₁, θ₂ → x₁, x₂) and `"toy"` (x → x + 3 sin x).
    pub fn named(name: &str, present: Vec<usize>, missing: Vec<usize>) -> Result<Self> {
        let (din, dout) = match name {
            "arm" => (2, 2),
            "toy" => (1, 1),
            _ => return Err(Error::InvalidParameter(format!("unknown forward mapping {name:?}"))),
        };
        if missing.len() != din || present.len() != dout {
            return Err(Error::InvalidParameter(format!(
                "mapping {name:?} reads {din} and predicts {dout} coordinates"
            )));
        }
        match name {
            "arm" => Self::new(name, present, missing, |t| experiments::arm_forward([t[0], t[1]]).to_vec()),
            _ => Self::new(name, present, missing, |t| vec![experiments::toy_forward(t[0])]),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn present(&self) -> &[usize] {
        &self.present
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn apply(&self, t_missing: &[f64]) -> Vec<f64> {
        (self.map)(t_missing)
    }

    fn max_index(&self) -> usize {
        self.present.iter().chain(&self.missing).copied().max().unwrap_or(0)
    }

    /// Mismatch of one full vector.
    pub fn residual(&self, norm: &NormKind, t: &[f64]) -> f64 {
        let m: Vec<f64> = self.missing.iter().map(|&i| t[i]).collect();
        let g = self.apply(&m);
        norm.of_iter(self.present.iter().zip(&g).map(|(&i, g)| t[i] - g))
    }

    /// The constraint is only defined for a regression-type pattern: every row
    /// must have exactly `missing` absent and `present` observed.
    pub fn check_pattern(&self, mask: &[Vec<bool>]) -> Result<()> {
        for row in mask {
            let ok = self.missing.iter().all(|&i| row.get(i) == Some(&false))
                && row.iter().enumerate().all(|(i, &m)| m || self.missing.contains(&i));
            if !ok {
                return Err(Error::VaryingPattern);
            }
        }
        Ok(())
    }
}

/// Step weights of a continuity term.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum StepWeights {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
    /// `w_n = 1 / (z_{n+1} − z_n)` from the sequence timestamps.
    FromTimestamps,
}

impl StepWeights {
    /// Concrete weights for a sequence of length `n`.
    pub fn resolve(&self, n: usize, timestamps: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
        let steps = n.saturating_sub(1);
        match self {
            StepWeights::Uniform => Ok(None),
            StepWeights::Explicit(w) => {
                if w.len() != steps {
                    return Err(Error::DimensionMismatch { expected: steps, got: w.len() });
                }
                Ok(Some(w.clone()))
            }
            StepWeights::FromTimestamps => {
                let z = timestamps
                    .ok_or_else(|| Error::InvalidParameter("step weights from timestamps need timestamps".into()))?;
                if z.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: z.len() });
                }
                z.windows(2)
                    .map(|w| {
                        let dz = w[1] - w[0];
                        if dz > 0.0 && dz.is_finite() {
                            Ok(1.0 / dz)
                        } else {
                            Err(Error::InvalidParameter("timestamps must be strictly increasing".into()))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    Continuity { norm: NormKind, step_weights: StepWeights },
    Smoothness { norm: NormKind },
    Quadratic(Quadratic),
    ForwardMapping { map: ForwardMapping, norm: NormKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub kind: TermKind,
}

impl Term {
    pub fn continuity(norm: NormKind) -> Self {
        Term { coef: 1.0, kind: TermKind::Continuity { norm, step_weights: StepWeights::Uniform } }
    }

    pub fn smoothness(norm: NormKind) -> Self {
        Term { coef: 1.0, kind: TermKind::Smoothness { norm } }
    }

    pub fn quadratic(q: Quadratic) -> Self {
        Term { coef: 1.0, kind: TermKind::Quadratic(q) }
    }

    pub fn forward_mapping(map: ForwardMapping, norm: NormKind) -> Self {
        Term { coef: 1.0, kind: TermKind::ForwardMapping { map, norm } }
    }

    pub fn with_coef(mut self, coef: f64) -> Self {
        self.coef = coef;
        self
    }
}

/// Non-negative linear combination of constraint terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    terms: Vec<Term>,
}

impl Default for ConstraintSpec {
    /// Euclidean trajectory length.
    fn default() -> Self {
        Self { terms: vec![Term::continuity(NormKind::Euclidean)] }
    }
}

impl ConstraintSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter("constraint needs at least one term".into()));
        }
        if terms.iter().any(|t| !(t.coef >= 0.0) || !t.coef.is_finite()) {
            return Err(Error::InvalidParameter("constraint coefficients must be finite and >= 0".into()));
        }
        if terms.iter().all(|t| t.coef == 0.0) {
            return Err(Error::InvalidParameter("constraint coefficients are all zero".into()));
        }
        for t in &terms {
            match &t.kind {
                TermKind::Continuity { norm, step_weights } => {
                    norm.validate(None)?;
                    if let StepWeights::Explicit(w) = step_weights {
                        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                            return Err(Error::InvalidParameter("step weights must be finite and > 0".into()));
                        }
                    }
                }
                TermKind::Smoothness { norm } | TermKind::ForwardMapping { norm, .. } => norm.validate(None)?,
                TermKind::Quadratic(_) => {}
            }
        }
        Ok(Self { terms })
    }

    /// Squared-Euclidean trajectory length.
    pub fn squared_continuity() -> Self {
        Self { terms: vec![Term::continuity(NormKind::SquaredEuclidean)] }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    fn active(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| t.coef > 0.0)
    }

    pub fn has_smoothness(&self) -> bool {
        self.active().any(|t| matches!(t.kind, TermKind::Smoothness { .. }))
    }

    pub fn has_node_terms(&self) -> bool {
        self.active().any(|t| matches!(t.kind, TermKind::Quadratic(_) | TermKind::ForwardMapping { .. }))
    }

    pub fn forward_mappings(&self) -> impl Iterator<Item = &ForwardMapping> {
        self.active().filter_map(|t| match &t.kind {
            TermKind::ForwardMapping { map, .. } => Some(map),
            _ => None,
        })
    }

    /// Checks the spec against a sequence shape and binds step weights.
    pub fn bind(&self, n: usize, dim: usize, timestamps: Option<&[f64]>) -> Result<BoundConstraint<'_>> {
        let mut weights = Vec::new();
        for t in self.active() {
            match &t.kind {
                TermKind::Continuity { norm, step_weights } => {
                    norm.validate(Some(dim))?;
                    weights.push(step_weights.resolve(n, timestamps)?);
                }
                TermKind::Smoothness { norm } => {
                    norm.validate(Some(dim))?;
                    if let Some(z) = timestamps {
                        if !is_regular(z) {
                            return Err(Error::InvalidParameter(
                                "smoothness is only defined for regularly sampled sequences".into(),
                            ));
                        }
                    }
                }
                TermKind::Quadratic(q) => {
                    if q.centre().len() != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got: q.centre().len() });
                    }
                }
                TermKind::ForwardMapping { map, norm } => {
                    norm.validate(Some(map.present.len()))?;
                    if map.max_index() >= dim {
                        return Err(Error::InvalidIndex(format!(
                            "forward mapping coordinate {} out of range 0..{dim}",
                            map.max_index()
                        )));
                    }
                }
            }
        }
        Ok(BoundConstraint { spec: self, weights })
    }

    /// Direct evaluation on a complete sequence.
    pub fn total_cost(&self, seq: &[Vec<f64>], timestamps: Option<&[f64]>) -> Result<f64> {
        let d = check_seq(seq)?;
        let bound = self.bind(seq.len(), d, timestamps)?;
        Ok(bound.path_cost(seq.iter().map(Vec::as_slice)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SpecDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SpecDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

fn is_regular(z: &[f64]) -> bool {
    if z.len() < 3 {
        return true;
    }
    let dz0 = z[1] - z[0];
    z.windows(2).all(|w| ((w[1] - w[0]) - dz0).abs() <= 1e-9 * dz0.abs().max(1.0))
}

/// A constraint bound to one sequence length, split into the node,
/// transition and second-order pieces that dynamic programming needs.
#[derive(Debug)]
pub struct BoundConstraint<'a> {
    spec: &'a ConstraintSpec,
    /// One entry per active continuity term, in term order.
    weights: Vec<Option<Vec<f64>>>,
}

impl BoundConstraint<'_> {
    pub fn spec(&self) -> &ConstraintSpec {
        self.spec
    }

    pub fn has_smoothness(&self) -> bool {
        self.spec.has_smoothness()
    }

    /// Per-vector cost charged on entering a node.
    pub fn node_cost(&self, t: &[f64]) -> f64 {
        let mut c = 0.0;
        for term in self.spec.active() {
            match &term.kind {
                TermKind::Quadratic(q) => c += term.coef * q.energy(t),
                TermKind::ForwardMapping { map, norm } => c += term.coef * map.residual(norm, t),
                _ => {}
            }
        }
        c
    }

    /// Cost of the step from `prev` (layer `n − 1`) to `cur` (layer `n`),
    /// including the smoothness term centred at `prev` when `before` (layer
    /// `n − 2`) exists.
    pub fn transition_cost(&self, n: usize, before: Option<&[f64]>, prev: &[f64], cur: &[f64]) -> f64 {
        let mut c = 0.0;
        let mut k = 0;
        for term in self.spec.active() {
            match &term.kind {
                TermKind::Continuity { norm, .. } => {
                    let w = self.weights[k].as_ref().map_or(1.0, |w| w[n - 1]);
                    k += 1;
                    c += term.coef * w * norm.of_difference(prev, cur);
                }
                TermKind::Smoothness { norm } => {
                    if let Some(b) = before {
                        c += term.coef * second_difference(norm, b, prev, cur);
                    }
                }
                _ => {}
            }
        }
        c
    }

    /// Total cost of a path, accumulated in the same order as the dynamic
    /// programming recursion so that both agree bit for bit.
    pub fn path_cost<'s>(&self, path: impl IntoIterator<Item = &'s [f64]>) -> f64 {
        let mut before: Option<&[f64]> = None;
        let mut prev: Option<&[f64]> = None;
        let mut total = 0.0;
        for (n, t) in path.into_iter().enumerate() {
            total = match prev {
                None => self.node_cost(t),
                Some(p) => (total + self.transition_cost(n, before, p, t)) + self.node_cost(t),
            };
            before = prev;
            prev = Some(t);
        }
        total
    }
}

#[derive(Serialize, Deserialize)]
struct SpecDoc {
    terms: Vec<TermDoc>,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepWeightsDoc {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum TermDoc {
    Continuity {
        #[serde(default)]
        norm: NormKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_weights: Option<StepWeightsDoc>,
        #[serde(default = "one")]
        coef: f64,
    },
    Smoothness {
        #[serde(default)]
        norm: NormKind,
        #[serde(default = "one")]
        coef: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
        t0: Vec<f64>,
        #[serde(default = "one")]
        coef: f64,
    },
    ForwardMapping {
        map: String,
        present: Vec<usize>,
        missing: Vec<usize>,
        #[serde(default)]
        norm: NormKind,
        #[serde(default = "one")]
        coef: f64,
    },
}

impl From<&ConstraintSpec> for SpecDoc {
    fn from(spec: &ConstraintSpec) -> Self {
        let terms = spec
            .terms
            .iter()
            .map(|t| match &t.kind {
                TermKind::Continuity { norm, step_weights } => TermDoc::Continuity {
                    norm: norm.clone(),
                    step_weights: match step_weights {
                        StepWeights::Uniform => None,
                        StepWeights::Explicit(w) => Some(StepWeightsDoc::Explicit(w.clone())),
                        StepWeights::FromTimestamps => Some(StepWeightsDoc::Named("timestamps".into())),
                    },
                    coef: t.coef,
                },
                TermKind::Smoothness { norm } => TermDoc::Smoothness { norm: norm.clone(), coef: t.coef },
                TermKind::Quadratic(q) => {
                    TermDoc::Quadratic { q: q.q.clone(), t0: q.t0.clone(), coef: t.coef }
                }
                TermKind::ForwardMapping { map, norm } => TermDoc::ForwardMapping {
                    map: map.name.clone(),
                    present: map.present.clone(),
                    missing: map.missing.clone(),
                    norm: norm.clone(),
                    coef: t.coef,
                },
            })
            .collect();
        SpecDoc { terms }
    }
}

impl TryFrom<SpecDoc> for ConstraintSpec {
    type Error = Error;

    fn try_from(doc: SpecDoc) -> Result<Self> {
        let terms = doc
            .terms
            .into_iter()
            .map(|t| {
                Ok(match t {
                    TermDoc::Continuity { norm, step_weights, coef } => {
                        let step_weights = match step_weights {
                            None => StepWeights::Uniform,
                            Some(StepWeightsDoc::Named(s)) if s == "uniform" => StepWeights::Uniform,
                            Some(StepWeightsDoc::Named(s)) if s == "timestamps" => StepWeights::FromTimestamps,
                            Some(StepWeightsDoc::Named(s)) => {
                                return Err(Error::Format(format!("unknown step weights {s:?}")))
                            }
                            Some(StepWeightsDoc::Explicit(w)) => StepWeights::Explicit(w),
                        };
                        Term { coef, kind: TermKind::Continuity { norm, step_weights } }
                    }
                    TermDoc::Smoothness { norm, coef } => Term { coef, kind: TermKind::Smoothness { norm } },
                    TermDoc::Quadratic { q, t0, coef } => Term { coef, kind: TermKind::Quadratic(Quadratic::new(q, t0)?) },
                    TermDoc::ForwardMapping { map, present, missing, norm, coef } => Term {
                        coef,
                        kind: TermKind::ForwardMapping { map: ForwardMapping::named(&map, present, missing)?, norm },
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ConstraintSpec::new(terms)
    }
}
