//! `solver compare`: two run records side by side.

use std::fs;
use std::path::Path;

use fpk_core::RunRecord;

use crate::CliResult;

/// Placeholder for a metric the record does not have (no closed-form reference).
pub const MISSING: &str = "-";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub method: String,
    pub system: String,
    pub n_s: usize,
    pub eps_pde: f64,
    pub eps_rho: Option<f64>,
    pub wall_time_s: f64,
}

impl Row {
    pub fn from_record(label: &str, record: &RunRecord) -> Result<Self, String> {
        let last = record
            .last()
            .ok_or_else(|| format!("{label}: record has no entries"))?;
        Ok(Self {
            label: label.to_string(),
            method: record.method.clone(),
            system: record.system.clone(),
            n_s: last.train_size,
            eps_pde: last.metrics.eps_pde,
            eps_rho: last.metrics.eps_rho,
            wall_time_s: record.entries.iter().map(|e| e.wall_time_s).sum(),
        })
    }
}

/// Reads `record.json` from a path or from a run directory.
pub fn load_record(path: &Path) -> CliResult<RunRecord> {
    let file = if path.is_dir() {
        path.join(crate::run::RECORD)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", file.display()))?)
}

const HEADER: [&str; 8] = [
    "record",
    "method",
    "system",
    "N_S",
    "eps_pde",
    "eps_rho",
    "wall_time_s",
    "N_S_ratio",
];

fn opt(v: Option<f64>) -> String {
    v.map_or(MISSING.to_string(), |v| format!("{v:.3e}"))
}

/// Table cells: one row per record, then the `b − a` deltas. The ratio column is
/// relative to the first record.
pub fn table(a: &Row, b: &Row) -> Vec<Vec<String>> {
    let ratio = |r: &Row| format!("{:.3}", r.n_s as f64 / a.n_s as f64);
    let row = |r: &Row| {
        vec![
            r.label.clone(),
            r.method.clone(),
            r.system.clone(),
            r.n_s.to_string(),
            format!("{:.3e}", r.eps_pde),
            opt(r.eps_rho),
            format!("{:.1}", r.wall_time_s),
            ratio(r),
        ]
    };
    let delta_rho = match (a.eps_rho, b.eps_rho) {
        (Some(x), Some(y)) => Some(y - x),
        _ => None,
    };
    let delta = vec![
        "delta (b - a)".to_string(),
        String::new(),
        String::new(),
        (b.n_s as i64 - a.n_s as i64).to_string(),
        format!("{:.3e}", b.eps_pde - a.eps_pde),
        opt(delta_rho),
        format!("{:.1}", b.wall_time_s - a.wall_time_s),
        String::new(),
    ];
    vec![row(a), row(b), delta]
}

pub fn render_text(rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 3 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(&mut HEADER.iter().copied());
    out.push('\n');
    for r in rows {
        out.push_str(&line(&mut r.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

pub fn render_csv(rows: &[Vec<String>]) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn label(path: &Path) -> String {
    let p = if path.is_dir() {
        path
    } else {
        path.parent().unwrap_or(path)
    };
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn execute(a: &Path, b: &Path, csv: Option<&Path>) -> CliResult {
    let ra = Row::from_record(&label(a), &load_record(a)?)?;
    let rb = Row::from_record(&label(b), &load_record(b)?)?;
    let rows = table(&ra, &rb);
    print!("{}", render_text(&rows));
    if let Some(path) = csv {
        fs::write(path, render_csv(&rows))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n_s: usize, eps_rho: Option<f64>) -> Row {
        Row {
            label: "r".into(),
            method: "ot".into(),
            system: "vdp".into(),
            n_s,
            eps_pde: 1.5e-3,
            eps_rho,
            wall_time_s: 12.0,
        }
    }

    #[test]
    fn identical_records_have_zero_deltas() {
        let r = row(6241, Some(3.5e-5));
        let t = table(&r, &r);
        assert_eq!(t[2][3], "0");
        assert_eq!(t[2][4], "0.000e0");
        assert_eq!(t[2][5], "0.000e0");
        assert_eq!(t[1][7], "1.000");
    }

    #[test]
    fn missing_density_error_is_a_dash() {
        let t = table(&row(6241, None), &row(2225, None));
        assert_eq!(t[0][5], MISSING);
        assert_eq!(t[2][5], MISSING);
        assert_eq!(t[1][7], "0.357");
        let text = render_text(&t);
        assert_eq!(text.lines().count(), 4);
        let csv = render_csv(&t);
        assert!(csv.starts_with("record,method,system,N_S,eps_pde,eps_rho,wall_time_s,N_S_ratio\n"));
    }
}
