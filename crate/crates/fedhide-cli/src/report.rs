//! Rendered text tables over previously written metrics directories.
//!
//! Discovers experiments by their `run.json` manifests, takes the last
//! complete record of every seed's `metrics.jsonl`, and prints a prototype
//! similarity table plus a results table, both in deterministic
//! (method, parameters) order. Corrupt metrics lines are skipped and
//! counted in the footer.

use std::path::{Path, PathBuf};

use fedhide::metrics::RoundMetrics;
use fedhide::proxy::ProxyMethod;

use crate::runner::{MeanStd, RunManifest};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub struct Report {
    pub text: String,
    pub skipped_lines: usize,
}

struct ReportRow {
    method: ProxyMethod,
    label: String,
    finals: Vec<RoundMetrics>,
}

fn runtime_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn find_manifests(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let manifest = dir.join("run.json");
    if manifest.is_file() {
        found.push(manifest);
    }
    for entry in std::fs::read_dir(dir).map_err(runtime_err)? {
        let path = entry.map_err(runtime_err)?.path();
        if path.is_dir() {
            find_manifests(&path, found)?;
        }
    }
    Ok(())
}

// Last parseable record of a metrics file; corrupt or truncated lines are
// counted, not fatal.
fn last_record(path: &Path, skipped: &mut usize) -> Result<Option<RoundMetrics>> {
    let text = std::fs::read_to_string(path).map_err(runtime_err)?;
    let mut last = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RoundMetrics>(line) {
            Ok(record) => last = Some(record),
            Err(_) => *skipped += 1,
        }
    }
    Ok(last)
}

pub fn report(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(runtime_err(format!(
            "no metrics found: {} is not a directory",
            dir.display()
        )));
    }
    let mut manifests = Vec::new();
    find_manifests(dir, &mut manifests)?;
    if manifests.is_empty() {
        return Err(runtime_err(format!(
            "no metrics found under {}",
            dir.display()
        )));
    }

    let mut skipped = 0usize;
    let mut rows = Vec::new();
    for manifest_path in manifests {
        let text = std::fs::read_to_string(&manifest_path).map_err(runtime_err)?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| runtime_err(format!("{}: {e}", manifest_path.display())))?;
        let experiment_dir = manifest_path.parent().expect("manifest has a parent");
        let mut finals = Vec::new();
        for &seed in &manifest.seeds {
            let metrics_path = experiment_dir.join(format!("seed_{seed}")).join("metrics.jsonl");
            if !metrics_path.is_file() {
                continue;
            }
            if let Some(record) = last_record(&metrics_path, &mut skipped)? {
                finals.push(record);
            }
        }
        if finals.is_empty() {
            continue;
        }
        rows.push(ReportRow {
            label: manifest.label,
            method: manifest.method,
            finals,
        });
    }
    if rows.is_empty() {
        return Err(runtime_err(format!(
            "no metrics found under {}",
            dir.display()
        )));
    }
    rows.sort_by(|a, b| {
        a.method
            .sort_key()
            .partial_cmp(&b.method.sort_key())
            .expect("finite sort keys")
    });

    let mut text = String::new();
    text.push_str("similarity between true and proxy prototypes (final round)\n");
    text.push_str(&format!("{:<28} {:>8} {:>8}\n", "method", "AVG", "STD"));
    for row in &rows {
        let avg = mean(row.finals.iter().map(|m| m.proxy_similarity_avg));
        let std = mean(row.finals.iter().map(|m| m.proxy_similarity_std));
        text.push_str(&format!("{:<28} {:>8.2} {:>8.2}\n", row.label, avg, std));
    }

    text.push_str("\nresults (final round, mean ± std over seeds)\n");
    text.push_str(&format!(
        "{:<28} {:>14} {:>14} {:>14}\n",
        "method", "ACC [%]", "EER [%]", "PL [%]"
    ));
    for row in &rows {
        let acc = MeanStd::over(&row.finals.iter().filter_map(|m| m.accuracy).collect::<Vec<_>>());
        let eer = MeanStd::over(&row.finals.iter().filter_map(|m| m.eer).collect::<Vec<_>>());
        let pl = MeanStd::over(&row.finals.iter().map(|m| m.leakage).collect::<Vec<_>>());
        text.push_str(&format!(
            "{:<28} {:>14} {:>14} {:>14}\n",
            row.label,
            fmt_pct(acc),
            fmt_pct(eer),
            fmt_pct(pl)
        ));
    }

    if skipped > 0 {
        text.push_str(&format!("\nwarning: skipped {skipped} corrupt metrics line(s)\n"));
    }
    Ok(Report {
        text,
        skipped_lines: skipped,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = values.collect();
    collected.iter().sum::<f64>() / collected.len().max(1) as f64
}

fn fmt_pct(stat: Option<MeanStd>) -> String {
    match stat {
        Some(s) => format!("{:.1} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".to_string(),
    }
}
