//! `dcfl`: run federated experiments, compare methods, compute
//! time-to-accuracy, and dump similarity matrices.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dcfl_core::config::{Aggregation, ExperimentConfig};
use dcfl_core::fed::engine::{run_experiment, RunOutput};
use dcfl_core::harness::{
    dataset_fingerprint, parse_metrics_csv, read_manifest, summarize, time_to_accuracy, toa_cell,
    write_seed_artifacts, write_summary, RunSummary,
};
use dcfl_core::study::{complementarity_study, cross_group_complement_fraction, emd_csv, StudyParams};

#[derive(Parser)]
#[command(name = "dcfl", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment once per seed and write artifacts.
    Run(RunArgs),
    /// Run tradition vs condensed-data variants across aggregation schemes.
    Compare(CompareArgs),
    /// Report the first round reaching each accuracy target.
    Toa(ToaArgs),
    /// Run the complementarity study and dump similarity/distance matrices.
    CkaMatrix(CkaMatrixArgs),
}

/// Flags mirroring config keys; values use the same syntax as config files.
#[derive(Args, Default, Clone)]
struct ConfigFlags {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    run_name: Option<String>,
    /// Comma-separated master seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    clients: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    pretrain_rounds: Option<String>,
    #[arg(long)]
    participation: Option<String>,
    #[arg(long)]
    pretrain_participation: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    lr_client: Option<String>,
    #[arg(long)]
    lr_finetune: Option<String>,
    #[arg(long)]
    batch_client: Option<String>,
    #[arg(long)]
    batch_finetune: Option<String>,
    #[arg(long)]
    epochs_client: Option<String>,
    #[arg(long)]
    epochs_finetune: Option<String>,
    /// on/off
    #[arg(long)]
    condensation: Option<String>,
    #[arg(long)]
    ipc: Option<String>,
    #[arg(long)]
    condense_iters: Option<String>,
    #[arg(long)]
    lr_syn: Option<String>,
    #[arg(long)]
    real_batch_cap: Option<String>,
    #[arg(long)]
    filter_ratio: Option<String>,
    /// low_loss or high_loss
    #[arg(long)]
    filter_keep: Option<String>,
    /// random or cka_guided
    #[arg(long)]
    selection: Option<String>,
    /// fedavg, fedprox or fednova
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    prox_mu: Option<String>,
    /// weights or activations
    #[arg(long)]
    cka_mode: Option<String>,
    #[arg(long)]
    probe_rows: Option<String>,
    /// on/off
    #[arg(long)]
    augmentation: Option<String>,
    /// Comma-separated op names.
    #[arg(long)]
    augment_ops: Option<String>,
    #[arg(long)]
    crop_pad: Option<String>,
    #[arg(long)]
    scale_lo: Option<String>,
    #[arg(long)]
    scale_hi: Option<String>,
    #[arg(long)]
    brightness_lo: Option<String>,
    #[arg(long)]
    brightness_hi: Option<String>,
    #[arg(long)]
    cutout_frac: Option<String>,
    /// blobs, mnist or fashion
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    blob_classes: Option<String>,
    #[arg(long)]
    blob_train_per_class: Option<String>,
    #[arg(long)]
    blob_test_per_class: Option<String>,
    #[arg(long)]
    blob_dim: Option<String>,
    #[arg(long)]
    blob_spread: Option<String>,
    #[arg(long)]
    blob_seed: Option<String>,
    /// dirichlet, pathological or grouped
    #[arg(long)]
    partition: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    classes_per_client: Option<String>,
    /// Comma-separated group sizes.
    #[arg(long)]
    group_sizes: Option<String>,
    /// Comma-separated hidden-layer widths.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    test_subset: Option<String>,
    /// Comma-separated accuracy targets.
    #[arg(long)]
    toa_targets: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigFlags {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        };
        push("run_name", &self.run_name);
        push("seeds", &self.seeds);
        push("clients", &self.clients);
        push("rounds", &self.rounds);
        push("pretrain_rounds", &self.pretrain_rounds);
        push("participation", &self.participation);
        push("pretrain_participation", &self.pretrain_participation);
        push("epsilon", &self.epsilon);
        push("lr_client", &self.lr_client);
        push("lr_finetune", &self.lr_finetune);
        push("batch_client", &self.batch_client);
        push("batch_finetune", &self.batch_finetune);
        push("epochs_client", &self.epochs_client);
        push("epochs_finetune", &self.epochs_finetune);
        push("condensation", &self.condensation);
        push("ipc", &self.ipc);
        push("condense_iters", &self.condense_iters);
        push("lr_syn", &self.lr_syn);
        push("real_batch_cap", &self.real_batch_cap);
        push("filter_ratio", &self.filter_ratio);
        push("filter_keep", &self.filter_keep);
        push("selection", &self.selection);
        push("aggregation", &self.aggregation);
        push("prox_mu", &self.prox_mu);
        push("cka_mode", &self.cka_mode);
        push("probe_rows", &self.probe_rows);
        push("augmentation", &self.augmentation);
        push("augment_ops", &self.augment_ops);
        push("crop_pad", &self.crop_pad);
        push("scale_lo", &self.scale_lo);
        push("scale_hi", &self.scale_hi);
        push("brightness_lo", &self.brightness_lo);
        push("brightness_hi", &self.brightness_hi);
        push("cutout_frac", &self.cutout_frac);
        push("dataset", &self.dataset);
        push("data_dir", &self.data_dir);
        push("blob_classes", &self.blob_classes);
        push("blob_train_per_class", &self.blob_train_per_class);
        push("blob_test_per_class", &self.blob_test_per_class);
        push("blob_dim", &self.blob_dim);
        push("blob_spread", &self.blob_spread);
        push("blob_seed", &self.blob_seed);
        push("partition", &self.partition);
        push("alpha", &self.alpha);
        push("classes_per_client", &self.classes_per_client);
        push("group_sizes", &self.group_sizes);
        push("hidden", &self.hidden);
        push("test_subset", &self.test_subset);
        push("toa_targets", &self.toa_targets);
        for entry in &self.set {
            let Some((key, value)) = entry.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{entry}`");
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(pairs)
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let file_text = match &self.config {
            Some(path) => Some(
                fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
            ),
            None => None,
        };
        let overrides = self.overrides()?;
        Ok(ExperimentConfig::from_sources(file_text.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    /// Output root directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Re-run a previously written manifest instead of building a config.
    #[arg(long, value_name = "FILE", conflicts_with = "config")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Aggregation schemes to include.
    #[arg(long, default_value = "fedavg,fedprox,fednova")]
    schemes: String,
}

#[derive(Args)]
struct ToaArgs {
    /// Comma-separated accuracy targets in (0, 1).
    #[arg(long)]
    targets: String,
    /// metrics.csv files to scan.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct CkaMatrixArgs {
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Toa(args) => cmd_toa(args),
        Command::CkaMatrix(args) => cmd_cka_matrix(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(cause.downcast_ref::<dcfl_core::Error>(), Some(dcfl_core::Error::Config(_)))
    })
}

/// Execute one config across its seeds, writing all artifacts.
fn run_config(config: &ExperimentConfig, out_root: &PathBuf) -> Result<RunSummary> {
    let (train, test) = config.load_dataset()?;
    let fingerprint = dataset_fingerprint(&train, &test);
    let mut results: Vec<(u64, RunOutput)> = Vec::new();
    for &seed in &config.seeds {
        let output = run_experiment(config, &train, &test, seed)
            .with_context(|| format!("seed {seed} failed"))?;
        write_seed_artifacts(out_root, config, seed, &output, &fingerprint)?;
        println!(
            "{} seed {seed}: final accuracy {:.4} ({} rounds)",
            config.run_name,
            output.final_accuracy,
            output.metrics.len().saturating_sub(1)
        );
        results.push((seed, output));
    }
    let summary = summarize(config, &results);
    write_summary(out_root, &summary)?;
    Ok(summary)
}

fn print_summary(summary: &RunSummary) {
    println!(
        "{}: final accuracy {:.4} ± {:.4} over {} seed(s)",
        summary.run_name,
        summary.final_accuracy_mean,
        summary.final_accuracy_std,
        summary.seeds.len()
    );
    for (i, target) in summary.toa_targets.iter().enumerate() {
        let cells: Vec<String> =
            summary.per_seed.iter().map(|s| toa_cell(s.toa[i])).collect();
        println!("  rounds to {target}: {}", cells.join(", "));
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = match &args.manifest {
        Some(path) => {
            let manifest = read_manifest(path)?;
            let mut config = manifest.config;
            config.seeds = vec![manifest.master_seed];
            config
        }
        None => args.flags.load()?,
    };
    let summary = run_config(&config, &args.out)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let base = args.flags.load()?;
    let mut schemes = Vec::new();
    for name in args.schemes.split(',') {
        let scheme = match name.trim() {
            "fedavg" => Aggregation::FedAvg,
            "fedprox" => Aggregation::FedProx,
            "fednova" => Aggregation::FedNova,
            other => {
                return Err(dcfl_core::Error::Config(format!(
                    "schemes: unknown aggregation `{other}`"
                ))
                .into())
            }
        };
        schemes.push((name.trim().to_string(), scheme));
    }

    let methods = ["tradition", "condensed"];
    let mut grid: Vec<Vec<RunSummary>> = Vec::new();
    for method in methods {
        let mut row = Vec::new();
        for (scheme_name, scheme) in &schemes {
            let mut config = base.clone();
            config.run_name = format!("{}-{method}-{scheme_name}", base.run_name);
            config.aggregation = *scheme;
            match method {
                "tradition" => {
                    config.condensation = false;
                    config.selection = dcfl_core::config::Selection::Random;
                    config.pretrain_rounds = 0;
                }
                _ => {
                    config.condensation = true;
                }
            }
            config.validate().map_err(anyhow::Error::from)?;
            let summary = run_config(&config, &args.out)?;
            row.push(summary);
        }
        grid.push(row);
    }

    println!("\nmethod        {}", schemes.iter().map(|(n, _)| format!("{n:>20}")).collect::<String>());
    for (m, method) in methods.iter().enumerate() {
        let cells: String = grid[m]
            .iter()
            .map(|s| format!("{:>20}", format!("{:.4} ± {:.4}", s.final_accuracy_mean, s.final_accuracy_std)))
            .collect();
        println!("{method:<14}{cells}");
    }
    for (i, target) in base.toa_targets.iter().enumerate() {
        println!("rounds to {target}:");
        for (m, method) in methods.iter().enumerate() {
            let cells: String = grid[m]
                .iter()
                .map(|s| {
                    let per_seed: Vec<String> =
                        s.per_seed.iter().map(|p| toa_cell(p.toa[i])).collect();
                    format!("{:>20}", per_seed.join(";"))
                })
                .collect();
            println!("{method:<14}{cells}");
        }
    }

    let report: Vec<serde_json::Value> = grid
        .iter()
        .zip(methods)
        .map(|(row, method)| {
            serde_json::json!({
                "method": method,
                "runs": row.iter().map(|s| serde_json::to_value(s).unwrap()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let dir = args.out.join(&base.run_name);
    fs::create_dir_all(&dir)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(dir.join("compare.json"), text)?;
    Ok(())
}

fn cmd_toa(args: ToaArgs) -> Result<()> {
    let mut targets = Vec::new();
    for part in args.targets.split(',') {
        let t: f64 = part
            .trim()
            .parse()
            .map_err(|_| dcfl_core::Error::Config(format!("targets: cannot parse `{part}`")))?;
        if !(t > 0.0 && t < 1.0) {
            return Err(dcfl_core::Error::Config(format!(
                "targets: must be in (0, 1), got {t}"
            ))
            .into());
        }
        targets.push(t);
    }
    let header: Vec<String> = targets.iter().map(|t| format!("{t:>10}")).collect();
    println!("{:<40}{}", "file", header.join(""));
    for path in &args.files {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading metrics {}", path.display()))?;
        let rows = parse_metrics_csv(&text)?;
        let cells: Vec<String> = targets
            .iter()
            .map(|&t| format!("{:>10}", toa_cell(time_to_accuracy(&rows, t))))
            .collect();
        println!("{:<40}{}", path.display().to_string(), cells.join(""));
    }
    Ok(())
}

fn cmd_cka_matrix(args: CkaMatrixArgs) -> Result<()> {
    let config = args.flags.load()?;
    let (train, _test) = config.load_dataset()?;
    let group_sizes = if config.group_sizes.is_empty() {
        vec![2, 3, 2, 2, 1]
    } else {
        config.group_sizes.clone()
    };
    let params = StudyParams {
        group_sizes,
        alpha: config.alpha,
        epochs: config.epochs_client,
        batch: config.batch_client,
        lr: config.lr_client,
        hidden: config.hidden.clone(),
        mode: config.cka_mode,
        probe_rows: config.probe_rows,
    };
    for &seed in &config.seeds {
        let outcome = complementarity_study(&train, &params, seed)?;
        let dir = args.out.join(&config.run_name).join(seed.to_string());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("cka.csv"), outcome.matrix.to_csv())?;
        fs::write(dir.join("emd.csv"), emd_csv(&outcome))?;
        let cross = cross_group_complement_fraction(&outcome, 2)?;
        println!(
            "seed {seed}: spearman(similarity, -distance) = {:.4}, same-group mean {:.4}, \
             cross-group mean {:.4}, cross-group complement share {:.2}",
            outcome.spearman_cka_vs_neg_emd,
            outcome.same_group_mean_cka,
            outcome.cross_group_mean_cka,
            cross
        );
    }
    Ok(())
}
