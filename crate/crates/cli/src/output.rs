//! Deterministic writers for the CLI's file formats.

use std::fs;
use std::path::{Path, PathBuf};

use goi_kit::detectors::DynamicScan;
use goi_kit::sim::TrialRecord;

/// Fixed record schema for every grid experiment.
pub const RECORD_HEADER: &str = "experiment,n,d,trial,statistic,value,seed";

/// Fixed feature-report schema.
pub const REPORT_HEADER: &str =
    "feature_id,goi,rho1,psi_1,psi_2,psi_3,psi_4,psi_5,psi_6,flagged";

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.experiment, r.n, r.d, r.trial, r.statistic, r.value, r.seed
        ));
    }
    out
}

/// Feature report rows: raw spectral coefficients are placed in the eigen
/// slot they belong to (ascending eigenvalue order); unobservable slots stay
/// blank.
pub fn report_csv(scan: &DynamicScan) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    let observable = scan.spectrum.observable();
    for (report, &flag) in scan.reports.iter().zip(&scan.flags) {
        let mut slots: Vec<String> = vec![String::new(); 6];
        for (coeff, &slot) in report.coefficients.iter().zip(observable) {
            slots[slot] = format!("{coeff}");
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            report.feature_id,
            report.goi,
            report.rho1,
            slots[0],
            slots[1],
            slots[2],
            slots[3],
            slots[4],
            slots[5],
            flag
        ));
    }
    out
}

pub fn report_json(scan: &DynamicScan, seed: u64) -> serde_json::Value {
    let features: Vec<serde_json::Value> = scan
        .reports
        .iter()
        .zip(&scan.flags)
        .map(|(r, &flag)| {
            serde_json::json!({
                "feature_id": r.feature_id,
                "goi": r.goi,
                "rho1": r.rho1,
                "coefficients": r.coefficients,
                "per_direction": r.per_direction,
                "flagged": flag,
            })
        })
        .collect();
    serde_json::json!({
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "observable": scan.spectrum.observable(),
        "rank_warning": scan.rank_warning,
        "features": features,
    })
}

/// Write `text` to the file or stdout.
pub fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| format!("cannot write output file {}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Summary sidecar path `foo.summary.json` next to the records file.
pub fn summary_path(records_path: &Path) -> PathBuf {
    records_path.with_extension("summary.json")
}

/// Write the records CSV plus, when a file target is given, the JSON summary
/// sidecar; print the one-line summary to stdout.
pub fn emit_experiment(
    out: &Option<PathBuf>,
    records: &[TrialRecord],
    summary: &serde_json::Value,
    one_line: &str,
) -> Result<(), String> {
    let csv = records_csv(records);
    match out {
        Some(path) => {
            fs::write(path, csv)
                .map_err(|e| format!("cannot write output file {}: {e}", path.display()))?;
            let spath = summary_path(path);
            fs::write(&spath, format!("{summary:#}"))
                .map_err(|e| format!("cannot write summary file {}: {e}", spath.display()))?;
        }
        None => print!("{csv}"),
    }
    println!("{one_line}");
    Ok(())
}
