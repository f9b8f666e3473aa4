//! Run artifacts: metrics CSV, timing sidecar, ToA, summary and manifest
//! files, and the per-seed output layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fed::comm::{reference_estimates, CommReport, ReferenceEstimates};
use crate::fed::engine::{RoundMetrics, RunOutput};

pub const ARTIFACT_VERSION: u32 = 1;

/// Deterministic per-round metrics table. Wall times live in the timing
/// sidecar so this file is byte-identical across reruns.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,accuracy,n_selected,selected,up_floats,down_floats\n");
    for m in metrics {
        let ids: Vec<String> = m.selected.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.round,
            m.accuracy,
            m.selected.len(),
            ids.join(";"),
            m.up_floats,
            m.down_floats
        ));
    }
    out
}

/// Wall-clock sidecar, intentionally separate from the deterministic table.
pub fn timing_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from("round,wall_ms\n");
    for m in metrics {
        out.push_str(&format!("{},{}\n", m.round, m.wall_ms));
    }
    out
}

/// Accuracy column parsed back from a metrics CSV, as (round, accuracy).
pub fn parse_metrics_csv(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("metrics file is empty".into()))?;
    if !header.starts_with("round,accuracy") {
        return Err(Error::Format(format!("unexpected metrics header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let round: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad round", i + 2)))?;
        let accuracy: f64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad accuracy", i + 2)))?;
        rows.push((round, accuracy));
    }
    Ok(rows)
}

/// First main round (1-indexed) whose accuracy reaches `target`, if any.
/// The pretraining row (round 0) never counts as a communication round.
pub fn time_to_accuracy(rows: &[(usize, f64)], target: f64) -> Option<usize> {
    rows.iter().find(|(round, acc)| *round >= 1 && *acc >= target).map(|(round, _)| *round)
}

/// Render a ToA cell the way the tables print it.
pub fn toa_cell(toa: Option<usize>) -> String {
    match toa {
        Some(round) => round.to_string(),
        None => "-".into(),
    }
}

/// Content hash over images, labels, and shape of both splits.
pub fn dataset_fingerprint(train: &Dataset, test: &Dataset) -> String {
    let mut hasher = Sha256::new();
    for ds in [train, test] {
        hasher.update((ds.len() as u64).to_le_bytes());
        hasher.update((ds.dim() as u64).to_le_bytes());
        hasher.update((ds.num_classes as u64).to_le_bytes());
        for v in ds.images.data() {
            hasher.update(v.to_le_bytes());
        }
        for &l in &ds.labels {
            hasher.update((l as u64).to_le_bytes());
        }
    }
    format!("sha256:{:x}", hasher.finalize())
}

/// Reproducibility record written next to each seed's metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub run_name: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub dataset_fingerprint: String,
    pub paths: ManifestPaths,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPaths {
    pub metrics: String,
    pub timing: String,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_accuracy: f64,
    pub toa: Vec<Option<usize>>,
    pub comm: CommReport,
    pub events: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_name: String,
    pub seeds: Vec<u64>,
    pub final_accuracy_mean: f64,
    /// Across-seed population std of final accuracy.
    pub final_accuracy_std: f64,
    pub toa_targets: Vec<f64>,
    pub per_seed: Vec<SeedSummary>,
    pub reference_estimates: ReferenceEstimates,
    pub convention_note: String,
}

/// Build the across-seed summary for one run.
pub fn summarize(
    config: &ExperimentConfig,
    results: &[(u64, RunOutput)],
) -> RunSummary {
    let finals: Vec<f64> = results.iter().map(|(_, out)| out.final_accuracy).collect();
    let (mean, std) = mean_std(&finals);
    let per_seed = results
        .iter()
        .map(|(seed, out)| {
            let rows: Vec<(usize, f64)> =
                out.metrics.iter().map(|m| (m.round, m.accuracy)).collect();
            SeedSummary {
                seed: *seed,
                final_accuracy: out.final_accuracy,
                toa: config.toa_targets.iter().map(|&t| time_to_accuracy(&rows, t)).collect(),
                comm: out.comm.clone(),
                events: out.events.clone(),
            }
        })
        .collect();
    RunSummary {
        run_name: config.run_name.clone(),
        seeds: results.iter().map(|(s, _)| *s).collect(),
        final_accuracy_mean: mean,
        final_accuracy_std: std,
        toa_targets: config.toa_targets.clone(),
        per_seed,
        reference_estimates: reference_estimates(),
        convention_note: "mean and std are across-seed population statistics of final-round \
                          accuracy"
            .into(),
    }
}

/// Paths produced by `write_run` for one seed.
#[derive(Debug, Clone)]
pub struct SeedPaths {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
    pub manifest: PathBuf,
}

/// Write one seed's artifacts under `<root>/<run-name>/<seed>/`.
pub fn write_seed_artifacts(
    root: &Path,
    config: &ExperimentConfig,
    seed: u64,
    output: &RunOutput,
    fingerprint: &str,
) -> Result<SeedPaths> {
    let dir = root.join(&config.run_name).join(seed.to_string());
    fs::create_dir_all(&dir)?;
    let metrics = dir.join("metrics.csv");
    let timing = dir.join("timing.csv");
    let manifest_path = dir.join("manifest.json");
    fs::write(&metrics, metrics_csv(&output.metrics))?;
    fs::write(&timing, timing_csv(&output.metrics))?;
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION,
        run_name: config.run_name.clone(),
        master_seed: seed,
        config: config.clone(),
        dataset_fingerprint: fingerprint.to_string(),
        paths: ManifestPaths { metrics: "metrics.csv".into(), timing: "timing.csv".into() },
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
    json.push('\n');
    fs::write(&manifest_path, json)?;
    Ok(SeedPaths { dir, metrics, timing, manifest: manifest_path })
}

/// Write the across-seed summary under `<root>/<run-name>/summary.json`.
pub fn write_summary(root: &Path, summary: &RunSummary) -> Result<PathBuf> {
    let dir = root.join(&summary.run_name);
    fs::create_dir_all(&dir)?;
    let path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Format(format!("summary serialization failed: {e}")))?;
    json.push('\n');
    fs::write(&path, json)?;
    Ok(path)
}

/// Load a manifest back for re-running.
pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad manifest {}: {e}", path.display())))?;
    if manifest.artifact_version != ARTIFACT_VERSION {
        return Err(Error::Format(format!(
            "manifest version {} unsupported (expected {})",
            manifest.artifact_version, ARTIFACT_VERSION
        )));
    }
    manifest.config.validate()?;
    Ok(manifest)
}
