//! Merged rate tables and pass/fail matrices over one or more bundles.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use homlab::io::SCHEMA_VERSION;
use homlab::renorm::Check;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::summary::{regenerate, FitEntry, LevelEntry, Summary, SUMMARY_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub path: PathBuf,
    pub kind: String,
    pub seed: u64,
    pub levels: Vec<LevelEntry>,
    pub fits: Vec<FitEntry>,
    /// The bundle's own checks plus `solves` and `summary-regenerates`.
    pub checks: Vec<Check>,
}

/// Whether the confidence intervals of one fit overlap across all bundles of
/// the same kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub kind: String,
    pub fit: String,
    pub bundles: Vec<PathBuf>,
    pub slopes: Vec<f64>,
    pub overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub bundles: Vec<BundleReport>,
    pub consistency: Vec<Consistency>,
    pub passed: bool,
}

fn load_summary(dir: &Path) -> CliResult<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::file(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::file(&path, e))?;
    let found = value.get("schema").and_then(|v| v.as_u64()).ok_or_else(|| CliError::file(&path, "missing schema version"))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(CliError::SummarySchema { path: path.display().to_string(), found, expected: SCHEMA_VERSION });
    }
    serde_json::from_value(value).map_err(|e| CliError::file(&path, e))
}

fn bundle_report(dir: &Path) -> CliResult<BundleReport> {
    let stored = load_summary(dir)?;
    let fresh = regenerate(dir)?;
    let same = serde_json::to_value(&stored).ok() == serde_json::to_value(&fresh).ok();
    let mut checks = vec![Check {
        name: "solves".into(),
        passed: stored.failures == 0,
        detail: format!("{} failed tasks", stored.failures),
    }];
    if let Some(e) = &stored.error {
        checks.push(Check { name: "aggregation".into(), passed: false, detail: e.clone() });
    }
    checks.extend(stored.checks.iter().filter(|c| c.name != "aggregation").cloned());
    checks.push(Check {
        name: "summary-regenerates".into(),
        passed: same,
        detail: "summary.json equals the summary recomputed from the CSV tables".into(),
    });
    Ok(BundleReport {
        path: dir.to_path_buf(),
        kind: stored.kind.name().to_string(),
        seed: stored.seed,
        levels: stored.levels,
        fits: stored.fits,
        checks,
    })
}

fn consistency(bundles: &[BundleReport]) -> Vec<Consistency> {
    let mut out = Vec::new();
    let mut kinds: Vec<&str> = bundles.iter().map(|b| b.kind.as_str()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    for kind in kinds {
        let group: Vec<&BundleReport> = bundles.iter().filter(|b| b.kind == kind).collect();
        if group.len() < 2 {
            continue;
        }
        let mut names: Vec<&str> = group.iter().flat_map(|b| b.fits.iter().map(|f| f.name.as_str())).collect();
        names.sort_unstable();
        names.dedup();
        for name in names {
            let fits: Vec<(&PathBuf, &FitEntry)> =
                group.iter().filter_map(|b| b.fits.iter().find(|f| f.name == name).map(|f| (&b.path, f))).collect();
            if fits.len() < 2 {
                continue;
            }
            let lo = fits.iter().map(|(_, f)| f.ci_lo).fold(f64::NEG_INFINITY, f64::max);
            let hi = fits.iter().map(|(_, f)| f.ci_hi).fold(f64::INFINITY, f64::min);
            out.push(Consistency {
                kind: kind.to_string(),
                fit: name.to_string(),
                bundles: fits.iter().map(|(p, _)| (*p).clone()).collect(),
                slopes: fits.iter().map(|(_, f)| f.slope).collect(),
                overlap: lo <= hi,
            });
        }
    }
    out
}

pub fn report(dirs: &[PathBuf]) -> CliResult<Report> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one bundle".into()));
    }
    let bundles = dirs.iter().map(|d| bundle_report(d)).collect::<CliResult<Vec<_>>>()?;
    let consistency = consistency(&bundles);
    let passed = bundles.iter().all(|b| b.checks.iter().all(|c| c.passed)) && consistency.iter().all(|c| c.overlap);
    Ok(Report { schema: SCHEMA_VERSION, bundles, consistency, passed })
}

/// Plain-text rendering: rate table, invariant matrix, cross-run consistency.
pub fn render(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "RATES");
    let _ = writeln!(s, "{:<32} {:<28} {:>12} {:>12} {:>12}", "bundle", "statistic", "x", "value", "se");
    for b in &report.bundles {
        for l in &b.levels {
            let se = l.se.map_or(String::from("-"), |v| format!("{v:.4e}"));
            let _ = writeln!(s, "{:<32} {:<28} {:>12.6} {:>12.4e} {:>12}", b.path.display(), l.statistic, l.x, l.value, se);
        }
    }
    let _ = writeln!(s, "\nFITS");
    let _ = writeln!(s, "{:<32} {:<28} {:>10} {:>22} {:>8}", "bundle", "fit", "slope", "95% CI", "R2");
    for b in &report.bundles {
        for f in &b.fits {
            let ci = format!("[{:.4}, {:.4}]", f.ci_lo, f.ci_hi);
            let _ = writeln!(s, "{:<32} {:<28} {:>10.4} {:>22} {:>8.4}", b.path.display(), f.name, f.slope, ci, f.r2);
        }
    }
    let _ = writeln!(s, "\nINVARIANTS");
    for b in &report.bundles {
        for c in &b.checks {
            let status = if c.passed { "PASS" } else { "FAILED" };
            let _ = writeln!(s, "{:<32} {:<28} {:<7} {}", b.path.display(), c.name, status, c.detail);
        }
    }
    if !report.consistency.is_empty() {
        let _ = writeln!(s, "\nCONSISTENCY");
        for c in &report.consistency {
            let status = if c.overlap { "PASS" } else { "FAILED" };
            let slopes: Vec<String> = c.slopes.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{:<16} {:<28} {:<7} slopes {}", c.kind, c.fit, status, slopes.join(" "));
        }
    }
    let _ = writeln!(s, "\n{}", if report.passed { "ALL PASS" } else { "FAILURES PRESENT" });
    s
}
