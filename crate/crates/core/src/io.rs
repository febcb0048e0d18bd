//! Text formats for scans, model densities, fit tables and reports.
//!
//! Scan file:
//!
//! ```text
//! # plane = image
//! # fixed_position_mm = 0.000000
//! # slit_um = 100.000
//! # seed = 7
//! position_mm	coincidences
//! -0.400000	0
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{EntanglementReport, FitMode, FringeMetrics, PeakFit};
use crate::detection::{Plane, ScanMeta, ScanRecord};

pub const SCAN_COLUMNS: &str = "position_mm\tcoincidences";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> IoError {
    IoError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn format_scan(scan: &ScanRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# plane = {}", scan.plane);
    let _ = writeln!(s, "# fixed_position_mm = {:.6}", scan.fixed_position * 1e3);
    let _ = writeln!(s, "# slit_um = {:.3}", scan.meta.slit_width * 1e6);
    if let Some(seed) = scan.meta.seed {
        let _ = writeln!(s, "# seed = {seed}");
    }
    let _ = writeln!(s, "# step_mm = {:.6}", scan.step() * 1e3);
    if let Some(label) = &scan.meta.integration {
        let _ = writeln!(s, "# integration = {label}");
    }
    s.push_str(SCAN_COLUMNS);
    s.push('\n');
    for (x, c) in scan.positions.iter().zip(&scan.counts) {
        let _ = writeln!(s, "{:.6}\t{c}", x * 1e3);
    }
    s
}

/// A parsed scan plus header lines that were understood but not used.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScan {
    pub record: ScanRecord,
    pub warnings: Vec<String>,
}

pub fn parse_scan(text: &str, path: &Path) -> Result<ParsedScan, IoError> {
    let err = |line: usize, message: String| IoError::Format { path: path.to_path_buf(), line, message };
    let mut plane = None;
    let mut fixed = None;
    let mut meta = ScanMeta::default();
    let mut warnings = Vec::new();
    let mut positions = Vec::new();
    let mut counts = Vec::new();
    let mut seen_columns = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let Some((k, v)) = h.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(n, format!("{k}: '{v}' is not a number")));
            match k {
                "plane" => plane = Some(v.parse::<Plane>().map_err(|m| err(n, m))?),
                "fixed_position_mm" => fixed = Some(num(v)? * 1e-3),
                "slit_um" => meta.slit_width = num(v)? * 1e-6,
                "seed" => meta.seed = Some(v.parse().map_err(|_| err(n, format!("seed: '{v}' is not a u64")))?),
                "step_mm" => {
                    num(v)?;
                }
                "integration" => meta.integration = Some(v.to_string()),
                other => warnings.push(format!("{}:{n}: ignored header key '{other}'", path.display())),
            }
            continue;
        }
        if !seen_columns {
            if line.trim() != SCAN_COLUMNS {
                return Err(err(n, format!("expected column header '{}'", SCAN_COLUMNS.replace('\t', "<TAB>"))));
            }
            seen_columns = true;
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(x), Some(c), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err(n, "expected two tab-separated columns".into()));
        };
        positions.push(x.trim().parse::<f64>().map_err(|_| err(n, format!("bad position '{x}'")))? * 1e-3);
        counts.push(c.trim().parse::<u64>().map_err(|_| err(n, format!("bad count '{c}' (non-negative integer expected)")))?);
    }
    let plane = plane.ok_or_else(|| err(0, "missing '# plane' header".into()))?;
    let fixed = fixed.ok_or_else(|| err(0, "missing '# fixed_position_mm' header".into()))?;
    if !seen_columns {
        return Err(err(0, "missing column header".into()));
    }
    let record = ScanRecord::new(plane, fixed, positions, counts, meta).map_err(|e| err(0, e.to_string()))?;
    Ok(ParsedScan { record, warnings })
}

pub fn read_scan(path: &Path) -> Result<ParsedScan, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_scan(&text, path)
}

/// Scan files (`*.tsv`) in a directory, sorted by file name.
pub fn scan_files(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Model density and expected counts on a scan grid.
pub fn format_density(positions: &[f64], density: &[f64], expected: &[f64]) -> String {
    let mut s = String::from("position_mm\tdensity\texpected_counts\n");
    for ((x, d), e) in positions.iter().zip(density).zip(expected) {
        let _ = writeln!(s, "{:.6}\t{d:e}\t{e:e}", x * 1e3);
    }
    s
}

fn mode_name(m: FitMode) -> &'static str {
    match m {
        FitMode::Full => "full",
        FitMode::FixedWidth => "fixed_width",
        FitMode::FixedShape => "fixed_shape",
        FitMode::Empty => "empty",
    }
}

pub const FIT_COLUMNS: &str =
    "fixed_path\tpeak_path\tcenter_mm\tcenter_err_mm\twidth_mm\twidth_err_mm\tarea\tarea_err\treduced_chi2\tmode\ttie";

/// One row per fitted peak; `rows[i]` holds the fits of the scan with detector 1 on path i.
pub fn format_fits(rows: &[Vec<PeakFit>]) -> String {
    let mut s = format!("{FIT_COLUMNS}\n");
    for (i, row) in rows.iter().enumerate() {
        for f in row {
            let _ = writeln!(
                s,
                "{i}\t{}\t{:.6}\t{:e}\t{:.6}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\t{}",
                f.index,
                f.center * 1e3,
                f.center_err * 1e3,
                f.width * 1e3,
                f.width_err * 1e3,
                f.area,
                f.area_err,
                f.reduced_chi2,
                mode_name(f.mode),
                f.tie
            );
        }
    }
    s
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn format_report(r: &EntanglementReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("dimension", r.dimension.to_string());
    kv("concurrence", r.concurrence.to_string());
    kv("concurrence_std", r.concurrence_std.to_string());
    kv("schmidt_kappa", join(&r.kappa));
    kv("schmidt_kappa_std", join(&r.kappa_std));
    kv("off_diagonal_mass", r.off_diagonal_mass.to_string());
    kv("tau_diag", r.tau_diag.to_string());
    kv("diagonal", r.diagonal.to_string());
    kv("bootstrap_resamples", r.bootstrap.resamples.to_string());
    kv("bootstrap_failures", r.bootstrap.failures.to_string());
    kv("bootstrap_concurrence_mean", r.bootstrap.concurrence.mean.to_string());
    for i in 0..r.dimension {
        for j in 0..r.dimension {
            kv(&format!("alpha_{i}_{j}"), r.coeffs.get(i, j).to_string());
            kv(&format!("alpha_{i}_{j}_std"), r.coeffs_std[(i, j)].to_string());
        }
    }
    s
}

/// Columnar |α_ij|² dump.
pub fn format_alpha(r: &EntanglementReport) -> String {
    let mut s = String::from("i\tj\tprobability\tstd\n");
    for i in 0..r.dimension {
        for j in 0..r.dimension {
            let _ = writeln!(s, "{i}\t{j}\t{}\t{}", r.coeffs.get(i, j), r.coeffs_std[(i, j)]);
        }
    }
    s
}

/// Fringe metrics of each Fourier scan, keyed by file stem.
pub fn format_fringes(entries: &[(String, Result<FringeMetrics, String>)]) -> String {
    let mut s = String::new();
    for (name, m) in entries {
        match m {
            Ok(m) => {
                let _ = writeln!(s, "{name}.period_mm = {}", m.period * 1e3);
                let _ = writeln!(s, "{name}.visibility = {}", m.visibility);
                let env = m.envelope_width.map_or("none".to_string(), |w| (w * 1e3).to_string());
                let _ = writeln!(s, "{name}.envelope_width_mm = {env}");
            }
            Err(e) => {
                let _ = writeln!(s, "{name}.error = {e}");
            }
        }
    }
    s
}

/// `key = value` lines; blank lines and `#` comments skipped.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_once(" = ")
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| IoError::Format { path: path.to_path_buf(), line: i + 1, message: "expected 'key = value'".into() })
        })
        .collect()
}

/// Header plus rows of a tab-separated table, checking the column count.
pub fn parse_tsv(text: &str, path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, head) = lines.next().ok_or_else(|| IoError::Format { path: path.to_path_buf(), line: 1, message: "empty table".into() })?;
    let header: Vec<String> = head.split('\t').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, l) in lines {
        let row: Vec<String> = l.split('\t').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{} columns, header has {}", row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ScanRecord {
        ScanRecord::new(
            Plane::Fourier,
            2e-4,
            vec![-4e-4, -2e-4, 0.0, 2e-4, 4e-4],
            vec![0, 3, 10000, 2, 0],
            ScanMeta { slit_width: 5e-5, seed: Some(u64::MAX), integration: Some("synthetic".into()) },
        )
        .unwrap()
    }

    #[test]
    fn scan_round_trip() {
        let s = sample();
        let text = format_scan(&s);
        let back = parse_scan(&text, Path::new("x.tsv")).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.record.counts, s.counts);
        assert_eq!(back.record.plane, s.plane);
        assert_eq!(back.record.meta.seed, s.meta.seed);
        for (a, b) in back.record.positions.iter().zip(&s.positions) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((back.record.fixed_position - 2e-4).abs() < 1e-15);
        assert_eq!(format_scan(&back.record), text);
    }

    #[test]
    fn scan_header_is_exact() {
        let text = format_scan(&sample());
        let head: Vec<&str> = text.lines().take(7).collect();
        assert_eq!(
            head,
            [
                "# plane = fourier",
                "# fixed_position_mm = 0.200000",
                "# slit_um = 50.000",
                "# seed = 18446744073709551615",
                "# step_mm = 0.200000",
                "# integration = synthetic",
                "position_mm\tcoincidences",
            ]
        );
        assert_eq!(text.lines().nth(9).unwrap(), "0.000000\t10000");
    }

    #[test]
    fn lab_file_without_seed() {
        let text = "# plane = image\n# fixed_position_mm = 1.0\n# operator = jb\nposition_mm\tcoincidences\n0.8\t12\n1.0\t130\n";
        let p = parse_scan(text, Path::new("lab.tsv")).unwrap();
        assert_eq!(p.record.meta.seed, None);
        assert_eq!(p.warnings.len(), 1);
        assert!((p.record.fixed_position - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn malformed_scans() {
        let bad_count = "# plane = image\n# fixed_position_mm = 0\nposition_mm\tcoincidences\n0.0\t-3\n";
        assert!(matches!(parse_scan(bad_count, Path::new("a")), Err(IoError::Format { line: 4, .. })));
        let unsorted = "# plane = image\n# fixed_position_mm = 0\nposition_mm\tcoincidences\n0.2\t1\n0.0\t1\n";
        assert!(parse_scan(unsorted, Path::new("a")).unwrap_err().to_string().contains("strictly increasing"));
        let no_plane = "# fixed_position_mm = 0\nposition_mm\tcoincidences\n0.0\t1\n";
        assert!(parse_scan(no_plane, Path::new("a")).unwrap_err().to_string().contains("plane"));
    }
}
