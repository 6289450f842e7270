//! `--emit-plot-data`: CSV tables and an SVG sketch of a reconstruction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use seqfill::io::format_value;
use seqfill::reconstruct::{CandidateSet, MaskedSequence, StepDiagnostics};

use crate::commands::CliError;

fn save(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError { code: crate::commands::EXIT_IO, message: format!("{}: {e}", path.display()) })
}

fn coord_header(dim: usize) -> String {
    (0..dim).map(|d| format!("c{d}")).collect::<Vec<_>>().join(",")
}

fn rows_csv(rows: &[Vec<f64>]) -> String {
    let mut s = format!("step,{}\n", coord_header(rows.first().map_or(0, Vec::len)));
    for (n, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r.iter().map(|&v| if v.is_nan() { String::new() } else { format_value(v) }).collect();
        let _ = writeln!(s, "{n},{}", cells.join(","));
    }
    s
}

/// Writes `observed.csv`, `reconstruction.csv`, optionally `truth.csv` and
/// `candidates.csv`, and `trajectory.svg` into `dir`.
pub fn emit(
    dir: &Path,
    seq: &MaskedSequence,
    truth: Option<&[Vec<f64>]>,
    cands: Option<&CandidateSet>,
    recon: &[Vec<f64>],
    steps: &[StepDiagnostics],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError { code: crate::commands::EXIT_IO, message: format!("{}: {e}", dir.display()) })?;
    save(dir, "observed.csv", &rows_csv(seq.values()))?;
    save(dir, "reconstruction.csv", &rows_csv(recon))?;
    if let Some(t) = truth {
        save(dir, "truth.csv", &rows_csv(t))?;
    }
    if let Some(c) = cands {
        let mut s = format!("step,index,provenance,log_density,chosen,{}\n", coord_header(c.dim()));
        for (n, layer) in c.layers().iter().enumerate() {
            for (i, cand) in layer.iter().enumerate() {
                let prov = serde_json::to_value(cand.provenance).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                let coords: Vec<String> = cand.point.iter().map(|&v| format_value(v)).collect();
                let chosen = steps.get(n).is_some_and(|d| d.chosen == i);
                let _ = writeln!(s, "{n},{i},{prov},{},{},{}", format_value(cand.log_density), u8::from(chosen), coords.join(","));
            }
        }
        save(dir, "candidates.csv", &s)?;
    }
    save(dir, "trajectory.svg", &svg(truth, cands, recon))
}

// First two coordinates, or step against the only coordinate.
fn xy(n: usize, p: &[f64]) -> (f64, f64) {
    if p.len() >= 2 {
        (p[0], p[1])
    } else {
        (n as f64, p[0])
    }
}

fn svg(truth: Option<&[Vec<f64>]>, cands: Option<&CandidateSet>, recon: &[Vec<f64>]) -> String {
    let mut pts: Vec<(f64, f64)> = recon.iter().enumerate().map(|(n, p)| xy(n, p)).collect();
    if let Some(t) = truth {
        pts.extend(t.iter().enumerate().map(|(n, p)| xy(n, p)));
    }
    if let Some(c) = cands {
        for (n, layer) in c.layers().iter().enumerate() {
            pts.extend(layer.iter().map(|cand| xy(n, &cand.point)));
        }
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (w, h, pad) = (600.0, 600.0, 20.0);
    let sx = if x1 > x0 { (w - 2.0 * pad) / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { (h - 2.0 * pad) / (y1 - y0) } else { 1.0 };
    let map = |(x, y): (f64, f64)| (pad + (x - x0) * sx, h - pad - (y - y0) * sy);
    let polyline = |rows: &[Vec<f64>], style: &str| {
        let coords: Vec<String> = rows
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let (x, y) = map(xy(n, p));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
    };

    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if let Some(c) = cands {
        for (n, layer) in c.layers().iter().enumerate() {
            for cand in layer {
                let (x, y) = map(xy(n, &cand.point));
                let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"#999\"/>");
            }
        }
    }
    if let Some(t) = truth {
        s += &polyline(t, "stroke=\"black\" stroke-dasharray=\"4 3\"");
    }
    s += &polyline(recon, "stroke=\"#1f5fbf\" stroke-width=\"1.5\"");
    s += "</svg>\n";
    s
}
