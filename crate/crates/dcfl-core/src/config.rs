//! Experiment configuration: defaults, key=value parsing, and validation.
//!
//! Config files are flat `key = value` lines with `#` comments. CLI flags
//! reuse the same keys and override file values one key at a time.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentOp, AugmentPolicy};
use crate::condense::{CondenseParams, FilterKeep};
use crate::data::{self, Dataset, Partition};
use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::partition::{dirichlet_partition, grouped_partition, pathological_partition};
use crate::similarity::CkaMode;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Random,
    CkaGuided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    FedAvg,
    FedProx,
    FedNova,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Dirichlet,
    Pathological,
    Grouped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Mnist,
    Fashion,
}

/// Full description of one experiment. Field names double as config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_name: String,
    pub seeds: Vec<u64>,

    // population and schedule
    pub clients: usize,
    pub rounds: usize,
    pub pretrain_rounds: usize,
    pub participation: f64,
    pub pretrain_participation: f64,
    pub epsilon: f64,

    // local training
    pub lr_client: f64,
    pub lr_finetune: f64,
    pub batch_client: usize,
    pub batch_finetune: usize,
    pub epochs_client: usize,
    pub epochs_finetune: usize,

    // condensation
    pub condensation: bool,
    pub ipc: usize,
    pub condense_iters: usize,
    pub lr_syn: f64,
    pub real_batch_cap: usize,
    pub filter_ratio: f64,
    pub filter_keep: FilterKeep,

    // protocol choices
    pub selection: Selection,
    pub aggregation: Aggregation,
    pub prox_mu: f64,
    pub cka_mode: CkaMode,
    pub probe_rows: usize,

    // augmentation
    pub augmentation: bool,
    pub augment_ops: Vec<AugmentOp>,
    pub crop_pad: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub brightness_lo: f64,
    pub brightness_hi: f64,
    pub cutout_frac: f64,

    // data
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub blob_classes: usize,
    pub blob_train_per_class: usize,
    pub blob_test_per_class: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    pub blob_seed: u64,

    // partition
    pub partition: PartitionKind,
    pub alpha: f64,
    pub classes_per_client: usize,
    pub group_sizes: Vec<usize>,

    // model and evaluation
    pub hidden: Vec<usize>,
    pub test_subset: usize,
    pub toa_targets: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_name: "run".into(),
            seeds: vec![17],
            clients: 20,
            rounds: 10,
            pretrain_rounds: 2,
            participation: 0.3,
            pretrain_participation: 0.5,
            epsilon: 0.5,
            lr_client: 0.1,
            lr_finetune: 0.02,
            batch_client: 32,
            batch_finetune: 32,
            epochs_client: 2,
            epochs_finetune: 2,
            condensation: true,
            ipc: 10,
            condense_iters: 40,
            lr_syn: 0.1,
            real_batch_cap: 64,
            filter_ratio: 0.0,
            filter_keep: FilterKeep::LowLoss,
            selection: Selection::CkaGuided,
            aggregation: Aggregation::FedAvg,
            prox_mu: 0.01,
            cka_mode: CkaMode::Weights,
            probe_rows: 64,
            augmentation: true,
            augment_ops: AugmentOp::ALL.to_vec(),
            crop_pad: 2,
            scale_lo: 0.9,
            scale_hi: 1.1,
            brightness_lo: -0.2,
            brightness_hi: 0.2,
            cutout_frac: 0.25,
            dataset: DatasetKind::Blobs,
            data_dir: PathBuf::from("data"),
            blob_classes: 4,
            blob_train_per_class: 200,
            blob_test_per_class: 50,
            blob_dim: 32,
            blob_spread: 0.08,
            blob_seed: 7,
            partition: PartitionKind::Dirichlet,
            alpha: 0.5,
            classes_per_client: 2,
            group_sizes: Vec::new(),
            hidden: vec![128],
            test_subset: 0,
            toa_targets: Vec::new(),
        }
    }
}

fn bad<T>(key: &str, detail: &str) -> Result<T> {
    Err(Error::Config(format!("{key}: {detail}")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().or_else(|_| bad(key, &format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        other => bad(key, &format!("expected on/off, got `{other}`")),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|part| parse_num::<T>(key, part))
        .collect()
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment. Unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run_name" => self.run_name = v.to_string(),
            "seeds" => self.seeds = parse_list(key, v)?,
            "clients" => self.clients = parse_num(key, v)?,
            "rounds" => self.rounds = parse_num(key, v)?,
            "pretrain_rounds" => self.pretrain_rounds = parse_num(key, v)?,
            "participation" => self.participation = parse_num(key, v)?,
            "pretrain_participation" => self.pretrain_participation = parse_num(key, v)?,
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "lr_client" => self.lr_client = parse_num(key, v)?,
            "lr_finetune" => self.lr_finetune = parse_num(key, v)?,
            "batch_client" => self.batch_client = parse_num(key, v)?,
            "batch_finetune" => self.batch_finetune = parse_num(key, v)?,
            "epochs_client" => self.epochs_client = parse_num(key, v)?,
            "epochs_finetune" => self.epochs_finetune = parse_num(key, v)?,
            "condensation" => self.condensation = parse_bool(key, v)?,
            "ipc" => self.ipc = parse_num(key, v)?,
            "condense_iters" => self.condense_iters = parse_num(key, v)?,
            "lr_syn" => self.lr_syn = parse_num(key, v)?,
            "real_batch_cap" => self.real_batch_cap = parse_num(key, v)?,
            "filter_ratio" => self.filter_ratio = parse_num(key, v)?,
            "filter_keep" => {
                self.filter_keep = match v {
                    "low_loss" => FilterKeep::LowLoss,
                    "high_loss" => FilterKeep::HighLoss,
                    other => return bad(key, &format!("expected low_loss or high_loss, got `{other}`")),
                }
            }
            "selection" => {
                self.selection = match v {
                    "random" => Selection::Random,
                    "cka_guided" => Selection::CkaGuided,
                    other => return bad(key, &format!("expected random or cka_guided, got `{other}`")),
                }
            }
            "aggregation" => {
                self.aggregation = match v {
                    "fedavg" => Aggregation::FedAvg,
                    "fedprox" => Aggregation::FedProx,
                    "fednova" => Aggregation::FedNova,
                    other => {
                        return bad(key, &format!("expected fedavg, fedprox or fednova, got `{other}`"))
                    }
                }
            }
            "prox_mu" => self.prox_mu = parse_num(key, v)?,
            "cka_mode" => {
                self.cka_mode = match v {
                    "weights" => CkaMode::Weights,
                    "activations" => CkaMode::Activations,
                    other => return bad(key, &format!("expected weights or activations, got `{other}`")),
                }
            }
            "probe_rows" => self.probe_rows = parse_num(key, v)?,
            "augmentation" => self.augmentation = parse_bool(key, v)?,
            "augment_ops" => {
                let mut ops = Vec::new();
                if !v.is_empty() {
                    for part in v.split(',') {
                        let name = part.trim();
                        match AugmentOp::from_name(name) {
                            Some(op) => ops.push(op),
                            None => return bad(key, &format!("unknown op `{name}`")),
                        }
                    }
                }
                self.augment_ops = ops;
            }
            "crop_pad" => self.crop_pad = parse_num(key, v)?,
            "scale_lo" => self.scale_lo = parse_num(key, v)?,
            "scale_hi" => self.scale_hi = parse_num(key, v)?,
            "brightness_lo" => self.brightness_lo = parse_num(key, v)?,
            "brightness_hi" => self.brightness_hi = parse_num(key, v)?,
            "cutout_frac" => self.cutout_frac = parse_num(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "blobs" => DatasetKind::Blobs,
                    "mnist" => DatasetKind::Mnist,
                    "fashion" => DatasetKind::Fashion,
                    other => return bad(key, &format!("expected blobs, mnist or fashion, got `{other}`")),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "blob_classes" => self.blob_classes = parse_num(key, v)?,
            "blob_train_per_class" => self.blob_train_per_class = parse_num(key, v)?,
            "blob_test_per_class" => self.blob_test_per_class = parse_num(key, v)?,
            "blob_dim" => self.blob_dim = parse_num(key, v)?,
            "blob_spread" => self.blob_spread = parse_num(key, v)?,
            "blob_seed" => self.blob_seed = parse_num(key, v)?,
            "partition" => {
                self.partition = match v {
                    "dirichlet" => PartitionKind::Dirichlet,
                    "pathological" => PartitionKind::Pathological,
                    "grouped" => PartitionKind::Grouped,
                    other => {
                        return bad(key, &format!("expected dirichlet, pathological or grouped, got `{other}`"))
                    }
                }
            }
            "alpha" => self.alpha = parse_num(key, v)?,
            "classes_per_client" => self.classes_per_client = parse_num(key, v)?,
            "group_sizes" => self.group_sizes = parse_list(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "test_subset" => self.test_subset = parse_num(key, v)?,
            "toa_targets" => self.toa_targets = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a config file body (`key = value` lines, `#` comments).
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
            };
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    /// Defaults, then the optional file, then flag overrides, then validation.
    pub fn from_sources(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        if let Some(text) = file {
            config.apply_file(text)?;
        }
        for (key, value) in overrides {
            config.apply(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Check every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        fn fraction(key: &str, v: f64) -> Result<()> {
            if !(v > 0.0 && v <= 1.0) {
                return bad(key, &format!("must be in (0, 1], got {v}"));
            }
            Ok(())
        }
        fn unit_interval(key: &str, v: f64) -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, &format!("must be in [0, 1], got {v}"));
            }
            Ok(())
        }
        fn positive(key: &str, v: f64) -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, &format!("must be positive, got {v}"));
            }
            Ok(())
        }
        fn at_least_one(key: &str, v: usize) -> Result<()> {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
            Ok(())
        }

        if self.run_name.is_empty() {
            return bad("run_name", "must not be empty");
        }
        if self.run_name.contains(['/', '\\']) {
            return bad("run_name", "must not contain path separators");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed");
        }
        at_least_one("clients", self.clients)?;
        fraction("participation", self.participation)?;
        fraction("pretrain_participation", self.pretrain_participation)?;
        unit_interval("epsilon", self.epsilon)?;
        unit_interval("filter_ratio", self.filter_ratio)?;
        positive("lr_client", self.lr_client)?;
        positive("lr_finetune", self.lr_finetune)?;
        positive("lr_syn", self.lr_syn)?;
        at_least_one("batch_client", self.batch_client)?;
        at_least_one("batch_finetune", self.batch_finetune)?;
        at_least_one("epochs_client", self.epochs_client)?;
        at_least_one("ipc", self.ipc)?;
        at_least_one("real_batch_cap", self.real_batch_cap)?;
        if self.prox_mu < 0.0 || !self.prox_mu.is_finite() {
            return bad("prox_mu", &format!("must be nonnegative, got {}", self.prox_mu));
        }
        if self.probe_rows < 2 {
            return bad("probe_rows", "need at least 2 rows for a usable probe");
        }
        if self.augmentation && self.augment_ops.is_empty() {
            return bad("augment_ops", "augmentation is on but the op list is empty");
        }
        if self.scale_lo <= 0.0 || self.scale_hi < self.scale_lo {
            return bad("scale_lo", "need 0 < scale_lo <= scale_hi");
        }
        if self.brightness_hi < self.brightness_lo {
            return bad("brightness_lo", "need brightness_lo <= brightness_hi");
        }
        if !(0.0..=1.0).contains(&self.cutout_frac) {
            return bad("cutout_frac", &format!("must be in [0, 1], got {}", self.cutout_frac));
        }
        if self.selection == Selection::CkaGuided && !self.condensation {
            return bad("selection", "cka_guided requires condensation = on");
        }
        if self.pretrain_rounds > 0 && !self.condensation {
            return bad("pretrain_rounds", "pretraining requires condensation = on");
        }
        match self.dataset {
            DatasetKind::Blobs => {
                at_least_one("blob_classes", self.blob_classes)?;
                at_least_one("blob_train_per_class", self.blob_train_per_class)?;
                at_least_one("blob_test_per_class", self.blob_test_per_class)?;
                at_least_one("blob_dim", self.blob_dim)?;
                positive("blob_spread", self.blob_spread)?;
            }
            DatasetKind::Mnist | DatasetKind::Fashion => {
                if self.data_dir.as_os_str().is_empty() {
                    return bad("data_dir", "must point at the IDX directory");
                }
            }
        }
        match self.partition {
            PartitionKind::Dirichlet => positive("alpha", self.alpha)?,
            PartitionKind::Pathological => at_least_one("classes_per_client", self.classes_per_client)?,
            PartitionKind::Grouped => {
                positive("alpha", self.alpha)?;
                if self.group_sizes.is_empty() {
                    return bad("group_sizes", "grouped partition needs group sizes");
                }
                let total: usize = self.group_sizes.iter().sum();
                if total != self.clients {
                    return bad(
                        "group_sizes",
                        &format!("sizes sum to {total}, but clients = {}", self.clients),
                    );
                }
            }
        }
        for (i, &h) in self.hidden.iter().enumerate() {
            if h == 0 {
                return bad("hidden", &format!("layer {i} has width 0"));
            }
        }
        for (i, &t) in self.toa_targets.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return bad("toa_targets", &format!("target {i} must be in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            enabled: self.augmentation,
            ops: self.augment_ops.clone(),
            crop_pad: self.crop_pad,
            scale_lo: self.scale_lo,
            scale_hi: self.scale_hi,
            brightness_lo: self.brightness_lo,
            brightness_hi: self.brightness_hi,
            cutout_frac: self.cutout_frac,
        }
    }

    pub fn condense_params(&self) -> CondenseParams {
        CondenseParams {
            ipc: self.ipc,
            iters: self.condense_iters,
            lr_syn: self.lr_syn,
            hidden_dims: self.hidden.clone(),
            policy: self.augment_policy(),
            real_batch_cap: self.real_batch_cap,
        }
    }

    /// Layer widths of the classifier network for input dimension `dim`
    /// over `classes` classes.
    pub fn model_dims(&self, dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }

    /// Load (train, test) for the configured dataset.
    pub fn load_dataset(&self) -> Result<(Dataset, Dataset)> {
        match self.dataset {
            DatasetKind::Blobs => {
                let train_pc = self.blob_train_per_class;
                let test_pc = self.blob_test_per_class;
                let all = data::synthetic_blobs(
                    self.blob_classes,
                    train_pc + test_pc,
                    self.blob_dim,
                    self.blob_spread,
                    self.blob_seed,
                )?;
                split_class_major(&all, train_pc, test_pc)
            }
            DatasetKind::Mnist | DatasetKind::Fashion => {
                let dir = &self.data_dir;
                let train = load_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let test = load_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                if train.num_classes != test.num_classes || train.images.cols() != test.images.cols() {
                    return Err(Error::Consistency(
                        "train and test sets disagree on classes or dimension".into(),
                    ));
                }
                Ok((train, test))
            }
        }
    }

    /// Partition `dataset` across `self.clients` clients.
    pub fn make_partition(&self, dataset: &Dataset, seed: u64) -> Result<Partition> {
        match self.partition {
            PartitionKind::Dirichlet => dirichlet_partition(dataset, self.clients, self.alpha, seed),
            PartitionKind::Pathological => {
                pathological_partition(dataset, self.clients, self.classes_per_client, seed)
            }
            PartitionKind::Grouped => grouped_partition(dataset, &self.group_sizes, self.alpha, seed),
        }
    }
}

/// Split a class-major dataset (each class contiguous, `train_pc + test_pc`
/// rows per class) into train and test sets drawing from identical class
/// distributions.
fn split_class_major(all: &Dataset, train_pc: usize, test_pc: usize) -> Result<(Dataset, Dataset)> {
    let per_class = train_pc + test_pc;
    let dim = all.images.cols();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for class in 0..all.num_classes {
        let base = class * per_class;
        train_rows.extend(base..base + train_pc);
        test_rows.extend(base + train_pc..base + per_class);
    }
    let build = |rows: &[usize]| -> Result<Dataset> {
        let mut images = Tensor2::zeros(rows.len(), dim);
        let mut labels = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            images.row_mut(i).copy_from_slice(all.images.row(r));
            labels.push(all.labels[r]);
        }
        Dataset::new(images, labels, all.num_classes, all.image_shape)
    };
    Ok((build(&train_rows)?, build(&test_rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_names_the_key() {
        let mut c = ExperimentConfig::default();
        let err = c.apply("warp_factor", "9").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("warp_factor"), "{msg}"),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn out_of_range_epsilon_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.apply("epsilon", "1.5").unwrap();
        let err = c.validate().unwrap_err();
        match err {
            Error::Config(msg) => {
                assert!(msg.contains("epsilon"), "{msg}");
                assert!(msg.contains("1.5"), "{msg}");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn file_then_overrides_win_in_order() {
        let text = "rounds = 5\nepsilon = 0.25 # inline comment\n\n# full comment\nclients=9\n";
        let overrides = vec![("rounds".to_string(), "7".to_string())];
        let c = ExperimentConfig::from_sources(Some(text), &overrides).unwrap();
        assert_eq!(c.rounds, 7);
        assert_eq!(c.clients, 9);
        assert!((c.epsilon - 0.25).abs() < 1e-12);
    }

    #[test]
    fn malformed_line_is_rejected() {
        let mut c = ExperimentConfig::default();
        let err = c.apply_file("rounds 5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn cka_guided_requires_condensation() {
        let mut c = ExperimentConfig::default();
        c.apply("condensation", "off").unwrap();
        let err = c.validate().unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("selection"), "{msg}"),
            other => panic!("wrong error: {other}"),
        }
        c.apply("selection", "random").unwrap();
        c.apply("pretrain_rounds", "0").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn grouped_sizes_must_sum_to_clients() {
        let mut c = ExperimentConfig::default();
        c.apply("partition", "grouped").unwrap();
        c.apply("group_sizes", "3,3").unwrap();
        c.apply("clients", "7").unwrap();
        let err = c.validate().unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("group_sizes"), "{msg}"),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn augment_ops_parse_and_reject() {
        let mut c = ExperimentConfig::default();
        c.apply("augment_ops", "flip, cutout").unwrap();
        assert_eq!(c.augment_ops, vec![AugmentOp::Flip, AugmentOp::Cutout]);
        assert!(c.apply("augment_ops", "flip,vortex").is_err());
    }

    #[test]
    fn blob_split_has_disjoint_rows_and_same_classes() {
        let mut c = ExperimentConfig::default();
        c.apply("blob_classes", "3").unwrap();
        c.apply("blob_train_per_class", "10").unwrap();
        c.apply("blob_test_per_class", "4").unwrap();
        c.apply("blob_dim", "9").unwrap();
        let (train, test) = c.load_dataset().unwrap();
        assert_eq!(train.len(), 30);
        assert_eq!(test.len(), 12);
        assert_eq!(train.num_classes, 3);
        for class in 0..3 {
            assert_eq!(train.labels.iter().filter(|&&l| l == class).count(), 10);
            assert_eq!(test.labels.iter().filter(|&&l| l == class).count(), 4);
        }
        // determinism: same config loads byte-identical data
        let (train2, _) = c.load_dataset().unwrap();
        assert_eq!(train.images.data(), train2.images.data());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let c = ExperimentConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
    }
}
