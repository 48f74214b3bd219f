//! Rendering of the diagnostics report: a pass/fail table on stdout and a
//! one-row-per-entry summary CSV.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use lqlab::stats::DiagnosticReport;

use crate::error::{CliError, Result};

/// Prints the table, writes `summary.csv`, and returns whether every entry
/// passed.
pub fn render(out: &Path) -> Result<bool> {
    let path = out.join("diagnostics.json");
    if !path.exists() {
        return Err(CliError::MissingStage(format!(
            "diagnose (no diagnostics.json in {})",
            out.display()
        )));
    }
    let text = fs::read_to_string(path)?;
    let report: DiagnosticReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Other(format!("bad diagnostics.json: {e}")))?;

    let mut csv = fs::File::create(out.join("summary.csv"))?;
    writeln!(csv, "name,value,ci_lo,ci_hi,tolerance,pass,n")?;
    println!(
        "{:<34} {:>14} {:>24} {:>6} {:>8}",
        "statistic", "value", "ci / tolerance", "n", "status"
    );
    for e in &report.entries {
        let band = match (e.ci_lo, e.ci_hi, e.tolerance) {
            (Some(lo), Some(hi), _) => format!("[{lo:.4}, {hi:.4}]"),
            (_, _, Some(tol)) => format!("tol {tol:.2e}"),
            _ => String::from("-"),
        };
        println!(
            "{:<34} {:>14.6} {:>24} {:>6} {:>8}",
            e.name,
            e.value,
            band,
            e.n,
            if e.pass { "pass" } else { "FAIL" }
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            e.name,
            e.value,
            opt(e.ci_lo),
            opt(e.ci_hi),
            opt(e.tolerance),
            e.pass,
            e.n
        )?;
    }
    if report.entries.is_empty() {
        println!("(no diagnostics recorded)");
    }
    Ok(report.all_pass())
}
