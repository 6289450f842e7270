use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub mask: String,
    pub method: String,
    pub file: PathBuf,
    pub error: f64,
}

/// Average squared errors laid out as masks × methods.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub truth: PathBuf,
    pub entries: Vec<Entry>,
    pub masks: Vec<String>,
    pub methods: Vec<String>,
    /// `cells[mask][method]` as printed in the table; `null` where not run.
    pub cells: Vec<Vec<Option<String>>>,
}

impl Report {
    pub fn new(truth: PathBuf, entries: Vec<Entry>) -> Self {
        let mut masks: Vec<String> = Vec::new();
        let mut methods: Vec<String> = Vec::new();
        for e in &entries {
            if !masks.contains(&e.mask) {
                masks.push(e.mask.clone());
            }
            if !methods.contains(&e.method) {
                methods.push(e.method.clone());
            }
        }
        let cells = masks
            .iter()
            .map(|m| {
                methods
                    .iter()
                    .map(|meth| {
                        entries
                            .iter()
                            .rev()
                            .find(|e| &e.mask == m && &e.method == meth)
                            .map(|e| sig4(e.error))
                    })
                    .collect()
            })
            .collect();
        Self { truth, entries, masks, methods, cells }
    }

    /// Fixed-width text table, one row per mask.
    pub fn table(&self) -> String {
        let first = self.masks.iter().map(String::len).chain(["mask".len()]).max().unwrap_or(4);
        let widths: Vec<usize> = self
            .methods
            .iter()
            .enumerate()
            .map(|(j, m)| {
                self.cells
                    .iter()
                    .filter_map(|row| row[j].as_ref().map(String::len))
                    .chain([m.len(), 6])
                    .max()
                    .unwrap_or(6)
            })
            .collect();
        let mut out = format!("{:<first$}", "mask");
        for (m, w) in self.methods.iter().zip(&widths) {
            out += &format!("  {m:>w$}");
        }
        out.push('\n');
        out += &"-".repeat(first + widths.iter().map(|w| w + 2).sum::<usize>());
        out.push('\n');
        for (mask, row) in self.masks.iter().zip(&self.cells) {
            out += &format!("{mask:<first$}");
            for (cell, w) in row.iter().zip(&widths) {
                out += &format!("  {:>w$}", cell.as_deref().unwrap_or("-"));
            }
            out.push('\n');
        }
        out
    }
}

/// Four significant digits; scientific notation outside `[1e-4, 1e5)`.
pub fn sig4(v: f64) -> String {
    if v == 0.0 {
        return "0.000".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..5).contains(&mag) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // rounding can carry into a new digit (9.9996 → 10.000)
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    if digits.trim_start_matches('0').len() > 4 && decimals > 0 {
        let d = decimals - 1;
        return format!("{v:.d$}");
    }
    s
}
