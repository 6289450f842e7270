use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use seqfill::constraints::ConstraintSpec;
use seqfill::experiments::{self, MaskKind, ToySpec};
use seqfill::io;
use seqfill::mixture::{GaussianMixture, IndexSplit};
use seqfill::modes::find_all_modes;
use seqfill::reconstruct::{
    avg_squared_error, CandidateKind, Method, ReconstructOptions, Reconstructor, StepDiagnostics,
};
use seqfill::training::{em_fit_isotropic, gtm_fit, GtmModel, TrainConfig};
use seqfill::Error;

use crate::{
    EvaluateArgs, GenerateArgs, GenerateKind, MaskArgs, MaskKindArg, ModelKind, ModesArgs, ReconstructArgs,
    SampleArgs, TrainArgs,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_FORMAT: u8 = 4;
pub const EXIT_MODEL: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn format(message: impl Into<String>) -> Self {
        Self { code: EXIT_FORMAT, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_IO,
            Error::Csv(c) if c.is_io_error() => EXIT_IO,
            Error::Format(_) | Error::Json(_) | Error::Csv(_) | Error::ShapeMismatch(_) | Error::DimensionMismatch { .. } => {
                EXIT_FORMAT
            }
            Error::InvalidParameter(_) | Error::InvalidIndex(_) | Error::MissingTruth | Error::VaryingPattern => {
                EXIT_USAGE
            }
            _ => EXIT_MODEL,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_text(path, &(text + "\n"))
}

/// A model file and its SHA-256.
pub struct LoadedModel {
    pub mixture: GaussianMixture,
    pub kind: &'static str,
    pub sha256: String,
}

/// Loads a mixture or GTM JSON file.
pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::format(format!("{}: not UTF-8", path.display())))?;
    let doc: serde_json::Value = serde_json::from_str(text).map_err(Error::from)?;
    let (mixture, kind) = if doc.get("weight_matrix").is_some() {
        (GtmModel::from_json(text)?.to_mixture()?, "gtm")
    } else {
        (GaussianMixture::from_json(text)?, "mixture")
    };
    Ok(LoadedModel { mixture, kind, sha256 })
}

fn read_complete(path: &Path) -> CliResult<io::SequenceTable> {
    let table = io::read_sequence_file(path)?;
    if table.sequence.missing_count() > 0 {
        return Err(CliError::format(format!("{}: expected a complete sequence", path.display())));
    }
    Ok(table)
}

pub fn train(a: TrainArgs) -> CliResult {
    let (_, data) = io::read_matrix_file(&a.data)?;
    let cfg = TrainConfig {
        k: a.k,
        seed: a.seed,
        latent_dim: a.latent_dim,
        basis_count: a.gtm_basis,
        width_factor: a.gtm_width_factor,
        max_iter: a.max_iter,
        ..Default::default()
    };
    let start = Instant::now();
    let (json, report) = match a.model {
        ModelKind::Gm => {
            let fit = em_fit_isotropic(&data, a.k, &cfg)?;
            (fit.mixture.to_json()?, fit.report)
        }
        ModelKind::Gtm => {
            let fit = gtm_fit(&data, &cfg)?;
            (fit.model.to_json()?, fit.report)
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "trained on {} points: {} EM steps, log-likelihood {:.6}, {} ({:.2?})",
        data.len(),
        report.log_likelihood.len().saturating_sub(1),
        report.log_likelihood.last().copied().unwrap_or(f64::NAN),
        if report.converged { "converged" } else { "stopped at max_iter" },
        start.elapsed()
    );
    write_text(&a.out, &(json + "\n"))
}

fn parse_constraint(arg: Option<&str>) -> CliResult<(ConstraintSpec, serde_json::Value)> {
    let text = match arg {
        None => return Ok((ConstraintSpec::default(), serde_json::from_str(&ConstraintSpec::default().to_json()?).map_err(Error::from)?)),
        Some(s) if s.trim_start().starts_with('{') => s.to_string(),
        Some(path) => read_text(Path::new(path))?,
    };
    let spec = ConstraintSpec::from_json(&text)?;
    let echo = serde_json::from_str(&spec.to_json()?).map_err(Error::from)?;
    Ok((spec, echo))
}

fn candidate_kind(method: &Method) -> Option<CandidateKind> {
    match method {
        Method::Mean => None,
        Method::Meandp => Some(CandidateKind::ModesMeanIfUnimodal),
        Method::Sampdp { samples, seed } => Some(CandidateKind::Samples { count: *samples, seed: *seed }),
        _ => Some(CandidateKind::Modes),
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'static str,
    method: &'a str,
    config: serde_json::Value,
    model: serde_json::Value,
    steps: usize,
    dim: usize,
    missing_cells: usize,
    total_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    avg_squared_error: Option<f64>,
    timings_ms: serde_json::Value,
    step_diagnostics: &'a [StepDiagnostics],
}

pub fn reconstruct(a: ReconstructArgs) -> CliResult {
    let t0 = Instant::now();
    let model = load_model(&a.model)?;
    let table = io::read_sequence_file(&a.input)?;
    let truth = match &a.truth {
        Some(p) => {
            let t = read_complete(p)?;
            Some(t.sequence.values().to_vec())
        }
        None => None,
    };
    let (spec, constraint_echo) = parse_constraint(a.constraint.as_deref())?;
    let method = Method::parse(&a.method, a.seed, a.samples)?;
    let options = ReconstructOptions {
        all_centroids_when_all_missing: a.all_centroids_when_all_missing,
        ..Default::default()
    };
    let load_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let seq = &table.sequence;
    let mut rec = Reconstructor::new(&model.mixture, seq, &spec, truth.as_deref(), &options)?;
    let out = rec.run(&method)?;
    let run_ms = t1.elapsed().as_secs_f64() * 1e3;

    let mut w = create(&a.out)?;
    io::write_filled(&mut w, &table, &out.values)?;
    w.flush().map_err(|e| CliError::io(&a.out, e))?;

    let error = truth.as_deref().map(|t| avg_squared_error(t, &out.values)).transpose()?;
    if let Some(e) = error {
        eprintln!("{}: average squared error {e:.6}", method.name());
    }

    if let Some(dir) = &a.emit_plot_data {
        let cands = candidate_kind(&method).map(|k| rec.candidates(&k).cloned()).transpose()?;
        crate::plot::emit(dir, seq, truth.as_deref(), cands.as_ref(), &out.values, &out.diagnostics.steps)?;
    }

    if let Some(path) = &a.diagnostics {
        let report = RunReport {
            command: "reconstruct",
            method: method.name(),
            config: json!({
                "input": a.input,
                "truth": a.truth,
                "seed": a.seed,
                "samples": a.samples,
                "all_centroids_when_all_missing": a.all_centroids_when_all_missing,
                "constraint": constraint_echo,
                // one string per step, `1` = present
                "mask": seq.mask().iter().map(|r| r.iter().map(|&m| if m { '1' } else { '0' }).collect::<String>()).collect::<Vec<_>>(),
            }),
            model: json!({ "path": a.model, "kind": model.kind, "sha256": model.sha256 }),
            steps: seq.len(),
            dim: seq.dim(),
            missing_cells: seq.missing_count(),
            total_cost: out.diagnostics.total_cost,
            avg_squared_error: error,
            timings_ms: json!({ "load": load_ms, "reconstruct": run_ms }),
            step_diagnostics: &out.diagnostics.steps,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

/// One `[MASK:]METHOD=FILE` argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconSpec {
    pub mask: String,
    pub method: String,
    pub file: PathBuf,
}

pub fn parse_recon(s: &str) -> CliResult<ReconSpec> {
    let (label, file) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--recon {s:?}: expected [MASK:]METHOD=FILE")))?;
    let (mask, method) = match label.split_once(':') {
        Some((m, meth)) => (m.trim(), meth.trim()),
        None => ("all", label.trim()),
    };
    if mask.is_empty() || method.is_empty() || file.is_empty() {
        return Err(CliError::usage(format!("--recon {s:?}: expected [MASK:]METHOD=FILE")));
    }
    Ok(ReconSpec { mask: mask.into(), method: method.into(), file: file.into() })
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let truth = read_complete(&a.truth)?;
    let specs: Vec<ReconSpec> = a.recons.iter().map(|s| parse_recon(s)).collect::<CliResult<_>>()?;
    let mut entries = Vec::with_capacity(specs.len());
    for s in &specs {
        let recon = read_complete(&s.file)?;
        let e = avg_squared_error(truth.sequence.values(), recon.sequence.values())
            .map_err(|e| CliError::from(e).with_context(&s.file))?;
        entries.push(crate::report::Entry { mask: s.mask.clone(), method: s.method.clone(), file: s.file.clone(), error: e });
    }
    let report = crate::report::Report::new(a.truth.clone(), entries);
    let json_text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    let table = report.table();
    match &a.json {
        Some(p) => write_text(p, &json_text)?,
        None => print!("{json_text}"),
    }
    match &a.table {
        Some(p) => write_text(p, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

impl CliError {
    fn with_context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> CliResult {
    let mut w = create(path)?;
    io::write_matrix(&mut w, Some(header), rows)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

const TOY_HEADER: [&str; 2] = ["t1", "t2"];
const ARM_HEADER: [&str; 4] = ["theta1", "theta2", "x1", "x2"];

pub fn generate(a: GenerateArgs) -> CliResult {
    match a.what {
        GenerateKind::ToyTrain(s) => {
            let rows = experiments::toy_training_set(&ToySpec { noise_sigma: s.sigma, n_points: s.n, seed: s.seed })?;
            write_rows(&s.out, &TOY_HEADER, &rows)
        }
        GenerateKind::ToyTraj(s) => sample(&s, &TOY_HEADER, experiments::toy_trajectory),
        GenerateKind::ArmTrain(s) => sample(&s, &ARM_HEADER, experiments::arm_training_set),
        GenerateKind::ArmTraj(s) => sample(&s, &ARM_HEADER, experiments::arm_trajectory),
        GenerateKind::Mask(m) => mask(m),
    }
}

fn sample(s: &SampleArgs, header: &[&str], f: fn(usize, f64, u64) -> seqfill::Result<Vec<Vec<f64>>>) -> CliResult {
    let rows = f(s.n, s.sigma, s.seed)?;
    write_rows(&s.out, header, &rows)
}

fn default_missing(kind: MaskKindArg, cols: usize) -> Option<Vec<usize>> {
    // the two experiment layouts: (t₁, t₂) and (θ₁, θ₂, x₁, x₂)
    match (kind, cols) {
        (MaskKindArg::Fwd, 2) => Some(vec![1]),
        (MaskKindArg::Inv, 2) => Some(vec![0]),
        (MaskKindArg::Fwd, 4) => Some(vec![2, 3]),
        (MaskKindArg::Inv, 4) => Some(vec![0, 1]),
        _ => None,
    }
}

fn mask(m: MaskArgs) -> CliResult {
    let kind = match m.kind {
        MaskKindArg::Random => {
            let p = m.p.ok_or_else(|| CliError::usage("random masks need --p"))?;
            let seed = m.seed.ok_or_else(|| CliError::usage("random masks need --seed"))?;
            MaskKind::Random { p, seed }
        }
        k => {
            let cols = if m.missing_cols.is_empty() {
                default_missing(k, m.cols)
                    .ok_or_else(|| CliError::usage("--missing-cols is required unless --cols is 2 or 4"))?
            } else {
                m.missing_cols.clone()
            };
            match k {
                MaskKindArg::Fwd => MaskKind::Fwd { missing_cols: cols },
                _ => MaskKind::Inv { missing_cols: cols },
            }
        }
    };
    let mask = experiments::make_mask(m.rows, m.cols, &kind)?;
    let mut w = create(&m.out)?;
    io::write_mask(&mut w, &mask)?;
    w.flush().map_err(|e| CliError::io(&m.out, e))?;

    if let Some(src) = &m.apply {
        let dest = m.apply_out.as_ref().ok_or_else(|| CliError::usage("--apply needs --apply-out"))?;
        let (header, rows) = io::read_matrix_file(src)?;
        if rows.len() != m.rows || rows.iter().any(|r| r.len() != m.cols) {
            return Err(CliError::format(format!(
                "{}: expected {}×{} values to mask",
                src.display(),
                m.rows,
                m.cols
            )));
        }
        let names: Option<Vec<&str>> = header.as_ref().map(|h| h.iter().map(String::as_str).collect());
        let mut w = create(dest)?;
        io::write_masked(&mut w, names.as_deref(), &rows, &mask)?;
        w.flush().map_err(|e| CliError::io(dest, e))?;
    }
    Ok(())
}

/// Parses `d=value,...` into sorted coordinate indices and values.
pub fn parse_condition(s: &str, dim: usize) -> CliResult<(Vec<usize>, Vec<f64>)> {
    let bad = |what: &str| CliError::usage(format!("--condition {s:?}: {what}"));
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (d, v) = part.split_once('=').ok_or_else(|| bad("expected d=value pairs"))?;
        let d: usize = d.trim().parse().map_err(|_| bad("coordinate must be a non-negative integer"))?;
        let v: f64 = v.trim().parse().map_err(|_| bad("value must be a number"))?;
        if d >= dim {
            return Err(bad(&format!("coordinate {d} out of range 0..{dim}")));
        }
        if !v.is_finite() {
            return Err(bad("value must be finite"));
        }
        if pairs.iter().any(|&(e, _)| e == d) {
            return Err(bad(&format!("coordinate {d} given twice")));
        }
        pairs.push((d, v));
    }
    if pairs.is_empty() {
        return Err(bad("no coordinates given"));
    }
    if pairs.len() == dim {
        return Err(bad("every coordinate is fixed; nothing left to search"));
    }
    pairs.sort_by_key(|p| p.0);
    Ok(pairs.into_iter().unzip())
}

pub fn modes(a: ModesArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let gm = &model.mixture;
    let (split, observed, target) = match &a.condition {
        Some(c) => {
            let (present, values) = parse_condition(c, gm.dim())?;
            let missing: Vec<usize> = (0..gm.dim()).filter(|d| !present.contains(d)).collect();
            let split = IndexSplit::new(present, missing)?;
            let cond = gm.condition(&split, &values)?;
            (Some(split), values, cond)
        }
        None => (None, Vec::new(), gm.clone()),
    };
    let found = find_all_modes(&target);
    for d in &found.diagnostics {
        eprintln!("warning: climb from centroid {} stopped at max_iter (last step {:e})", d.start, d.last_step);
    }
    let modes: Vec<serde_json::Value> = found
        .modes
        .iter()
        .map(|m| {
            let point = match &split {
                Some(s) => s.merge(&observed, &m.point),
                None => m.point.clone(),
            };
            json!({ "point": point, "log_density": m.log_density })
        })
        .collect();
    let doc = json!({
        "model_sha256": model.sha256,
        "condition": split.as_ref().map(|s| json!({ "coordinates": s.present(), "values": observed })),
        "modes": modes,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
