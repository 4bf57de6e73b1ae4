//! Experiment execution: per-seed training runs with streaming metrics,
//! final checkpoints, cross-seed summaries, and parameter sweeps.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use fedhide::federation::{run_training, Checkpoint};
use fedhide::metrics::RoundMetrics;
use fedhide::proxy::ProxyMethod;

use crate::config::ExperimentConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Seed-aggregated statistic: mean and population std over the seed values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn over(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
        })
    }
}

/// Final-round results of one experiment, aggregated across its seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub method: ProxyMethod,
    pub seeds: Vec<u64>,
    pub final_rounds: Vec<RoundMetrics>,
    pub accuracy: Option<MeanStd>,
    pub eer: Option<MeanStd>,
    pub leakage: MeanStd,
    pub similarity_avg: MeanStd,
    pub similarity_std: MeanStd,
    pub mean_total_loss: MeanStd,
}

/// Metadata written next to each experiment's seed directories; the report
/// command discovers runs by these files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub label: String,
    pub method: ProxyMethod,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

fn runtime_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// Run one experiment (all seeds) into `out_dir`.
///
/// Layout: `run.json`, then per seed `seed_<s>/metrics.jsonl` (one record
/// per evaluated round, appended as the run progresses) and
/// `seed_<s>/checkpoint.cbor`. A cross-seed `summary.json`/`summary.txt`
/// pair is written last.
pub fn run_experiment_into(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out_dir).map_err(runtime_err)?;
    let method = config.proxy.to_method()?;
    let manifest = RunManifest {
        label: method.label(),
        method: method.clone(),
        seeds: config.seeds.clone(),
        config: config.clone(),
    };
    write_json(&out_dir.join("run.json"), &manifest)?;

    let mut final_rounds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let datasets = config.build_datasets(seed)?;
        let train_config = config.train_config(seed, &datasets)?;
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir).map_err(runtime_err)?;
        let metrics_path = seed_dir.join("metrics.jsonl");
        let file = std::fs::File::create(&metrics_path).map_err(runtime_err)?;
        let writer = Mutex::new(std::io::BufWriter::new(file));

        let (state, clients, history) = run_training(&train_config, datasets, |record| {
            let mut w = writer.lock().expect("metrics writer");
            // One self-describing record per line, flushed immediately so a
            // killed run leaves a parseable prefix.
            serde_json::to_writer(&mut *w, record).expect("serialize metrics");
            w.write_all(b"\n").expect("write metrics");
            w.flush().expect("flush metrics");
        })
        .map_err(runtime_err)?;

        Checkpoint::capture(&state, &clients)
            .save(&seed_dir.join("checkpoint.cbor"))
            .map_err(runtime_err)?;

        let last = history
            .last()
            .cloned()
            .ok_or_else(|| runtime_err("run produced no evaluated rounds (rounds = 0?)"))?;
        final_rounds.push(last);
    }

    let summary = summarize(method, config.seeds.clone(), final_rounds);
    write_json(&out_dir.join("summary.json"), &summary)?;
    std::fs::write(out_dir.join("summary.txt"), render_summary(&summary)).map_err(runtime_err)?;
    Ok(summary)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_into(config, &config.output_dir())
}

fn summarize(
    method: ProxyMethod,
    seeds: Vec<u64>,
    final_rounds: Vec<RoundMetrics>,
) -> ExperimentSummary {
    let collect = |f: &dyn Fn(&RoundMetrics) -> Option<f64>| -> Vec<f64> {
        final_rounds.iter().filter_map(f).collect()
    };
    let accuracy = MeanStd::over(&collect(&|m| m.accuracy));
    let eer = MeanStd::over(&collect(&|m| m.eer));
    let leakage = MeanStd::over(&collect(&|m| Some(m.leakage))).expect("at least one seed");
    let similarity_avg =
        MeanStd::over(&collect(&|m| Some(m.proxy_similarity_avg))).expect("at least one seed");
    let similarity_std =
        MeanStd::over(&collect(&|m| Some(m.proxy_similarity_std))).expect("at least one seed");
    let mean_total_loss =
        MeanStd::over(&collect(&|m| Some(m.mean_total_loss))).expect("at least one seed");
    ExperimentSummary {
        label: method.label(),
        method,
        seeds,
        final_rounds,
        accuracy,
        eer,
        leakage,
        similarity_avg,
        similarity_std,
        mean_total_loss,
    }
}

fn fmt_pct(stat: Option<MeanStd>) -> String {
    match stat {
        Some(s) => format!("{:.1} ± {:.2}", 100.0 * s.mean, 100.0 * s.std),
        None => "-".to_string(),
    }
}

fn render_summary(summary: &ExperimentSummary) -> String {
    let mut text = String::new();
    text.push_str(&format!("experiment: {}\n", summary.label));
    text.push_str(&format!("seeds: {:?}\n", summary.seeds));
    text.push_str(&format!("acc [%]: {}\n", fmt_pct(summary.accuracy)));
    text.push_str(&format!("eer [%]: {}\n", fmt_pct(summary.eer)));
    text.push_str(&format!("pl [%]: {}\n", fmt_pct(Some(summary.leakage))));
    text.push_str(&format!(
        "proxy similarity: avg {:.2} ± {:.2}, within-run std {:.2}\n",
        summary.similarity_avg.mean, summary.similarity_avg.std, summary.similarity_std.mean
    ));
    text.push_str(&format!(
        "final mean loss: {:.4} ± {:.4}\n",
        summary.mean_total_loss.mean, summary.mean_total_loss.std
    ));
    text
}

/// One sweep grid point's outcome.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub method: ProxyMethod,
    pub outcome: SweepOutcome,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SweepOutcome {
    Ok { summary: ExperimentSummary },
    Failed { error: String },
}

/// Directory-safe slug for a grid point, e.g. `fedhide_alpha0.1_k3`.
fn slug(method: &ProxyMethod) -> String {
    let mut s = String::new();
    for ch in method.label().chars() {
        match ch {
            '(' | ',' => s.push('_'),
            ')' => {}
            '=' => {}
            c => s.push(c),
        }
    }
    s
}

/// Run every grid point as its own experiment under `<out>/<slug>/`,
/// in parallel across up to `threads` workers. A failing point is recorded
/// in the combined table; it does not abort the sweep.
pub fn run_sweep(
    config: &ExperimentConfig,
    grid: &[ProxyMethod],
    threads: usize,
) -> Result<Vec<SweepRow>> {
    let out_root = config.output_dir();
    std::fs::create_dir_all(&out_root).map_err(runtime_err)?;

    let next = AtomicUsize::new(0);
    let rows: Vec<Mutex<Option<SweepRow>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let worker_count = threads.max(1).min(grid.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                let method = &grid[i];
                let mut point_config = config.clone();
                point_config.proxy = crate::config::ProxySection {
                    cold_start_sigma: config.proxy.cold_start_sigma,
                    ..crate::config::ProxySection::from_method(method)
                };
                let point_dir = out_root.join(slug(method));
                let outcome = match run_experiment_into(&point_config, &point_dir) {
                    Ok(summary) => SweepOutcome::Ok { summary },
                    Err(e) => SweepOutcome::Failed {
                        error: e.to_string(),
                    },
                };
                *rows[i].lock().expect("row slot") = Some(SweepRow {
                    label: method.label(),
                    method: method.clone(),
                    outcome,
                });
            });
        }
    });

    let mut rows: Vec<SweepRow> = rows
        .into_iter()
        .map(|slot| slot.into_inner().expect("row").expect("worker filled row"))
        .collect();
    rows.sort_by(|a, b| {
        a.method
            .sort_key()
            .partial_cmp(&b.method.sort_key())
            .expect("sort keys are finite")
    });

    write_json(&out_root.join("sweep_summary.json"), &rows)?;
    std::fs::write(out_root.join("sweep_summary.txt"), render_sweep(&rows))
        .map_err(runtime_err)?;
    Ok(rows)
}

/// The leakage-versus-utility table behind the sweep: one row per point.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut text = String::new();
    text.push_str(&format!(
        "{:<28} {:>14} {:>14} {:>14} {:>9} {:>9}\n",
        "method", "acc [%]", "eer [%]", "pl [%]", "sim avg", "sim std"
    ));
    for row in rows {
        match &row.outcome {
            SweepOutcome::Ok { summary } => {
                text.push_str(&format!(
                    "{:<28} {:>14} {:>14} {:>14} {:>9.2} {:>9.2}\n",
                    row.label,
                    fmt_pct(summary.accuracy),
                    fmt_pct(summary.eer),
                    fmt_pct(Some(summary.leakage)),
                    summary.similarity_avg.mean,
                    summary.similarity_std.mean,
                ));
            }
            SweepOutcome::Failed { error } => {
                text.push_str(&format!("{:<28} failed: {error}\n", row.label));
            }
        }
    }
    text
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(runtime_err)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value).map_err(runtime_err)?;
    Ok(())
}
