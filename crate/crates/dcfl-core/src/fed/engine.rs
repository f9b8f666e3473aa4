//! Server state machine: pretraining, main rounds, and full experiment runs.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;

use crate::condense::{filter_condensed, pool_sets, CondensedSet};
use crate::config::{Aggregation, ExperimentConfig};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::fed::aggregate::{aggregate, optimized_weights, ClientContribution};
use crate::fed::client::{
    client_update_w_cd, client_update_wo_cd, train_epochs, ClientState, LocalSpec,
};
use crate::fed::comm::{avg_classes_per_client, comm_volume, CommLedger, CommReport};
use crate::fed::selection::{cohort_size, complement_group_for, select_participants};
use crate::nn::{self, ModelParams};
use crate::similarity::{CkaMatrix, CkaMode};
use crate::streams::{derive_seed, substream, tag};
use crate::tensor::Tensor2;

/// One row of the per-round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub selected: Vec<usize>,
    pub up_floats: u64,
    pub down_floats: u64,
    pub wall_ms: u128,
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub round: usize,
    pub global: ModelParams,
    pub seen: BTreeSet<usize>,
    pub matrix: CkaMatrix,
    pub store: BTreeMap<usize, CondensedSet>,
    pub clients: Vec<ClientState>,
    pub metrics: Vec<RoundMetrics>,
    pub events: Vec<String>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub comm: CommReport,
    pub events: Vec<String>,
    pub cka_csv: String,
    pub final_accuracy: f64,
}

/// Driver for one experiment under one master seed.
pub struct Engine<'a> {
    pub config: &'a ExperimentConfig,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub master: u64,
    pub state: ServerState,
    pub total: CommLedger,
    model_floats: usize,
    classifier_floats: usize,
    test_indices: Vec<usize>,
}

/// Evenly spaced test indices so subsets stay class-balanced even when the
/// test set is stored class-major.
fn subset_indices(total: usize, subset: usize) -> Vec<usize> {
    if subset == 0 || subset >= total {
        return (0..total).collect();
    }
    (0..subset).map(|i| i * total / subset).collect()
}

impl<'a> Engine<'a> {
    pub fn new(
        config: &'a ExperimentConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        master: u64,
    ) -> Result<Self> {
        config.validate()?;
        if train.num_classes != test.num_classes || train.dim() != test.dim() {
            return Err(Error::Consistency(
                "train and test sets disagree on classes or dimension".into(),
            ));
        }
        let partition = config.make_partition(train, master)?;
        Self::with_partition(config, train, test, master, partition)
    }

    /// Build an engine on a caller-supplied partition (used by tests that
    /// need handcrafted shards).
    pub fn with_partition(
        config: &'a ExperimentConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        master: u64,
        partition: Partition,
    ) -> Result<Self> {
        partition.validate(train.len())?;
        if partition.num_clients() != config.clients {
            return Err(Error::Consistency(format!(
                "partition has {} clients, config says {}",
                partition.num_clients(),
                config.clients
            )));
        }
        let dims = config.model_dims(train.dim(), train.num_classes);
        let mut init_rng = substream(master, &[tag::INIT]);
        let global = ModelParams::init(&dims, &mut init_rng)?;
        let probe = match config.cka_mode {
            CkaMode::Weights => None,
            CkaMode::Activations => {
                let feat_dim = global.classifier().in_dim();
                let mut rng = substream(master, &[tag::PROBE]);
                let data: Vec<f64> =
                    (0..config.probe_rows * feat_dim).map(|_| rng.gen::<f64>()).collect();
                Some(Tensor2::from_vec(config.probe_rows, feat_dim, data)?)
            }
        };
        let matrix = CkaMatrix::new(config.cka_mode, probe)?;
        let clients = partition
            .client_indices
            .iter()
            .enumerate()
            .map(|(k, shard)| ClientState::new(k, shard.clone()))
            .collect();
        let model_floats = global.float_count();
        let classifier_floats = global.classifier().float_count();
        let test_indices = subset_indices(test.len(), config.test_subset);
        let state = ServerState {
            round: 0,
            global,
            seen: BTreeSet::new(),
            matrix,
            store: BTreeMap::new(),
            clients,
            metrics: Vec::new(),
            events: Vec::new(),
        };
        Ok(Engine {
            config,
            train,
            test,
            master,
            state,
            total: CommLedger::default(),
            model_floats,
            classifier_floats,
            test_indices,
        })
    }

    fn prox_anchor<'b>(&self, global: &'b ModelParams) -> Option<(f64, &'b ModelParams)> {
        match self.config.aggregation {
            Aggregation::FedProx => Some((self.config.prox_mu, global)),
            _ => None,
        }
    }

    fn evaluate(&self) -> Result<f64> {
        nn::evaluate(&self.state.global, self.test, &self.test_indices)
    }

    /// First contact with client `k`: it condenses once, trains on its real
    /// shard, and ships back its model, classifier, and condensed set.
    /// `stream` tags the per-client RNG; comm is charged to `ledger`.
    fn first_contact(
        &mut self,
        k: usize,
        round: usize,
        stream: &[u64],
        classifier_only_upload: bool,
        ledger: &mut CommLedger,
    ) -> Result<(ModelParams, usize)> {
        let policy = self.config.augment_policy();
        let global = self.state.global.clone();
        let spec = LocalSpec {
            epochs: self.config.epochs_client,
            batch: self.config.batch_client,
            lr: self.config.lr_client,
            prox: self.prox_anchor(&global),
            policy: &policy,
        };
        let cparams = self.config.condense_params();
        let condense_seed = derive_seed(self.master, &[tag::CONDENSE, k as u64]);
        let mut rng = substream(self.master, stream);
        ledger.add_down(self.model_floats);
        let shard = self.state.clients[k].shard.clone();
        let out = client_update_wo_cd(
            k,
            round,
            &global,
            self.train,
            &shard,
            &spec,
            &cparams,
            condense_seed,
            &mut rng,
        )?;
        let set = out.condensed.set;
        let payload = set.float_count()
            + if classifier_only_upload { self.classifier_floats } else { self.model_floats };
        ledger.add_up(payload);
        self.state.matrix.insert(k, out.params.classifier())?;
        self.state.clients[k].pool.insert(k, set.clone());
        self.state.store.insert(k, set);
        self.state.seen.insert(k);
        Ok((out.params, out.steps))
    }

    /// The pretraining phase: collect condensed sets and classifiers from
    /// randomly requested clients, then train the global model on the pooled
    /// store. Emits the round-0 metrics row.
    pub fn pretrain(&mut self) -> Result<()> {
        if self.state.round != 0 || !self.state.metrics.is_empty() {
            return Err(Error::State("pretraining must run on a fresh engine".into()));
        }
        let started = Instant::now();
        let mut ledger = CommLedger::default();
        let all: Vec<usize> = (0..self.config.clients).collect();
        for m in 0..self.config.pretrain_rounds {
            let mut rng = substream(self.master, &[tag::PRESELECT, m as u64]);
            let count = cohort_size(self.config.clients, self.config.pretrain_participation);
            let mut requested: Vec<usize> =
                rand::seq::index::sample(&mut rng, all.len(), count).into_iter().collect();
            requested.sort_unstable();
            for k in requested {
                if self.state.seen.contains(&k) {
                    continue;
                }
                let stream = [tag::CLIENT, 0, m as u64, k as u64];
                self.first_contact(k, 0, &stream, true, &mut ledger)?;
            }
        }
        if !self.state.store.is_empty() {
            let refs: Vec<&CondensedSet> = self.state.store.values().collect();
            if let Some((images, labels)) = pool_sets(&refs)? {
                let policy = self.config.augment_policy();
                let global = self.state.global.clone();
                let spec = LocalSpec {
                    epochs: self.config.epochs_client,
                    batch: self.config.batch_finetune,
                    lr: self.config.lr_finetune,
                    prox: None,
                    policy: &policy,
                };
                let mut rng = substream(self.master, &[tag::SERVER_TRAIN]);
                let mut params = global;
                train_epochs(
                    &mut params,
                    &images,
                    &labels,
                    self.train.image_shape,
                    &spec,
                    &mut rng,
                )?;
                self.state.global = params;
            }
        }
        let accuracy = self.evaluate()?;
        self.total.absorb(ledger);
        self.state.metrics.push(RoundMetrics {
            round: 0,
            accuracy,
            selected: self.state.seen.iter().copied().collect(),
            up_floats: ledger.up_floats,
            down_floats: ledger.down_floats,
            wall_ms: started.elapsed().as_millis(),
        });
        Ok(())
    }

    /// One main round: select, route, train, aggregate, evaluate.
    pub fn round(&mut self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::Argument("main rounds are numbered from 1".into()));
        }
        let started = Instant::now();
        let mut ledger = CommLedger::default();
        let n = cohort_size(self.config.clients, self.config.participation);
        let seen: Vec<usize> = self.state.seen.iter().copied().collect();
        let mut rng = substream(self.master, &[tag::SELECT, t as u64]);
        let outcome = select_participants(
            self.config.selection,
            self.config.clients,
            self.config.participation,
            self.config.epsilon,
            &seen,
            &self.state.matrix,
            &mut rng,
        )?;
        for note in &outcome.notes {
            self.state.events.push(format!("round {t}: {note}"));
        }

        let policy = self.config.augment_policy();
        let global = self.state.global.clone();
        let mut contributions: Vec<ClientContribution> = Vec::new();
        for &k in &outcome.selected {
            let shard_size = self.state.clients[k].shard.len();
            let stream = [tag::CLIENT, t as u64, k as u64];
            if !self.config.condensation {
                let spec = LocalSpec {
                    epochs: self.config.epochs_client,
                    batch: self.config.batch_client,
                    lr: self.config.lr_client,
                    prox: self.prox_anchor(&global),
                    policy: &policy,
                };
                ledger.add_down(self.model_floats);
                let mut rng = substream(self.master, &stream);
                let mut params = global.clone();
                let shard = &self.state.clients[k].shard;
                let images = self.train.images.gather_rows(shard)?;
                let labels: Vec<usize> = shard.iter().map(|&i| self.train.labels[i]).collect();
                let steps = train_epochs(
                    &mut params,
                    &images,
                    &labels,
                    self.train.image_shape,
                    &spec,
                    &mut rng,
                )?;
                ledger.add_up(self.model_floats);
                contributions.push(ClientContribution {
                    id: k,
                    params,
                    shard_size,
                    aux_count: 0,
                    steps,
                });
            } else if !self.state.seen.contains(&k) {
                let (params, steps) = self.first_contact(k, t, &stream, false, &mut ledger)?;
                contributions.push(ClientContribution {
                    id: k,
                    params,
                    shard_size,
                    aux_count: 0,
                    steps,
                });
            } else {
                let group_size = n.saturating_sub(1);
                let mut donors = complement_group_for(&self.state.matrix, k, group_size)?;
                donors.sort_unstable();
                let donor_sets: Vec<CondensedSet> = donors
                    .iter()
                    .map(|d| {
                        self.state.store.get(d).cloned().ok_or_else(|| {
                            Error::State(format!("client {d} in matrix but not in store"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let filtered = filter_condensed(
                    &donor_sets,
                    &global,
                    self.config.filter_ratio,
                    self.config.filter_keep,
                )?;
                let delivered: Vec<CondensedSet> =
                    filtered.into_iter().filter(|s| !s.is_empty()).collect();
                let condensed_floats: usize = delivered.iter().map(|s| s.float_count()).sum();
                ledger.add_down(self.model_floats + condensed_floats);
                let real_spec = LocalSpec {
                    epochs: self.config.epochs_client,
                    batch: self.config.batch_client,
                    lr: self.config.lr_client,
                    prox: self.prox_anchor(&global),
                    policy: &policy,
                };
                let tune_spec = LocalSpec {
                    epochs: self.config.epochs_finetune,
                    batch: self.config.batch_finetune,
                    lr: self.config.lr_finetune,
                    prox: self.prox_anchor(&global),
                    policy: &policy,
                };
                let mut rng = substream(self.master, &stream);
                let out = client_update_w_cd(
                    &mut self.state.clients[k],
                    &global,
                    self.train,
                    delivered,
                    &real_spec,
                    &tune_spec,
                    &mut rng,
                )?;
                ledger.add_up(self.model_floats);
                for note in out.notes {
                    self.state.events.push(format!("round {t}: {note}"));
                }
                contributions.push(ClientContribution {
                    id: k,
                    params: out.params,
                    shard_size,
                    aux_count: out.aux_count,
                    steps: out.steps,
                });
            }
        }

        let sizes: Vec<usize> = contributions.iter().map(|c| c.shard_size).collect();
        let auxes: Vec<usize> = contributions.iter().map(|c| c.aux_count).collect();
        let weights = optimized_weights(&sizes, &auxes)?;
        self.state.global =
            aggregate(self.config.aggregation, &global, &contributions, &weights)?;
        self.state.round = t;
        let accuracy = self.evaluate()?;
        self.total.absorb(ledger);
        self.state.metrics.push(RoundMetrics {
            round: t,
            accuracy,
            selected: outcome.selected,
            up_floats: ledger.up_floats,
            down_floats: ledger.down_floats,
            wall_ms: started.elapsed().as_millis(),
        });
        Ok(())
    }

    /// Wrap up: communication report and final outputs.
    pub fn finish(self) -> Result<RunOutput> {
        let partition = Partition {
            client_indices: self.state.clients.iter().map(|c| c.shard.clone()).collect(),
        };
        let cpc = avg_classes_per_client(self.train, &partition);
        let comm = comm_volume(
            self.config.clients,
            self.config.participation,
            cpc,
            self.config.ipc,
            self.train.dim(),
            self.model_floats,
            self.config.condensation,
            self.total,
        );
        let final_accuracy = self.state.metrics.last().map(|m| m.accuracy).unwrap_or(0.0);
        Ok(RunOutput {
            metrics: self.state.metrics,
            comm,
            events: self.state.events,
            cka_csv: self.state.matrix.to_csv(),
            final_accuracy,
        })
    }
}

/// Run the full protocol for one master seed: pretraining (when configured)
/// followed by the main rounds.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    master: u64,
) -> Result<RunOutput> {
    let mut engine = Engine::new(config, train, test, master)?;
    engine.pretrain()?;
    for t in 1..=config.rounds {
        engine.round(t)?;
    }
    engine.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentOp;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.apply("clients", "6").unwrap();
        c.apply("rounds", "2").unwrap();
        c.apply("pretrain_rounds", "1").unwrap();
        c.apply("participation", "0.5").unwrap();
        c.apply("pretrain_participation", "0.5").unwrap();
        c.apply("blob_classes", "3").unwrap();
        c.apply("blob_train_per_class", "40").unwrap();
        c.apply("blob_test_per_class", "10").unwrap();
        c.apply("blob_dim", "16").unwrap();
        c.apply("hidden", "12").unwrap();
        c.apply("ipc", "2").unwrap();
        c.apply("condense_iters", "3").unwrap();
        c.apply("epochs_client", "1").unwrap();
        c.apply("epochs_finetune", "1").unwrap();
        c.apply("batch_client", "16").unwrap();
        c.apply("batch_finetune", "8").unwrap();
        c.apply("alpha", "1.0").unwrap();
        c.validate().unwrap();
        c
    }

    fn load(c: &ExperimentConfig) -> (Dataset, Dataset) {
        c.load_dataset().unwrap()
    }

    #[test]
    fn run_is_deterministic() {
        let c = small_config();
        let (train, test) = load(&c);
        let a = run_experiment(&c, &train, &test, 41).unwrap();
        let b = run_experiment(&c, &train, &test, 41).unwrap();
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.round, y.round);
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
            assert_eq!(x.selected, y.selected);
            assert_eq!(x.up_floats, y.up_floats);
            assert_eq!(x.down_floats, y.down_floats);
        }
        assert_eq!(a.cka_csv, b.cka_csv);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn t_zero_emits_only_the_pretrain_row() {
        let mut c = small_config();
        c.apply("rounds", "0").unwrap();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 42).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].round, 0);
        assert!(out.metrics[0].up_floats > 0);
    }

    #[test]
    fn m_zero_leaves_state_untouched_except_the_stamp() {
        let mut c = small_config();
        c.apply("pretrain_rounds", "0").unwrap();
        c.apply("rounds", "0").unwrap();
        let (train, test) = load(&c);
        let mut engine = Engine::new(&c, &train, &test, 43).unwrap();
        let before = engine.state.global.clone();
        engine.pretrain().unwrap();
        assert_eq!(engine.state.global.max_abs_diff(&before), 0.0);
        assert!(engine.state.seen.is_empty());
        assert!(engine.state.store.is_empty());
        assert_eq!(engine.state.metrics.len(), 1);
        assert_eq!(engine.total.up_floats, 0);
        assert_eq!(engine.total.down_floats, 0);
    }

    #[test]
    fn pretrain_exhaustion_sees_every_client() {
        let mut c = small_config();
        c.apply("pretrain_rounds", "24").unwrap();
        c.apply("rounds", "0").unwrap();
        let (train, test) = load(&c);
        let mut engine = Engine::new(&c, &train, &test, 44).unwrap();
        engine.pretrain().unwrap();
        assert_eq!(engine.state.seen.len(), 6);
        assert_eq!(engine.state.matrix.len(), 6);
        assert_eq!(engine.state.store.len(), 6);
    }

    #[test]
    fn metrics_cover_pretrain_plus_each_round() {
        let c = small_config();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 45).unwrap();
        let rounds: Vec<usize> = out.metrics.iter().map(|m| m.round).collect();
        assert_eq!(rounds, vec![0, 1, 2]);
        // cohort of 3 distinct members each main round
        for m in &out.metrics[1..] {
            assert_eq!(m.selected.len(), 3);
            let mut s = m.selected.clone();
            s.dedup();
            assert_eq!(s.len(), 3);
        }
    }

    #[test]
    fn unseen_upload_counts_model_plus_condensed_floats() {
        let mut c = small_config();
        c.apply("pretrain_rounds", "0").unwrap();
        c.apply("rounds", "1").unwrap();
        c.apply("epsilon", "0").unwrap();
        let (train, test) = load(&c);
        let mut engine = Engine::new(&c, &train, &test, 46).unwrap();
        engine.pretrain().unwrap();
        engine.round(1).unwrap();
        let m = &engine.state.metrics[1];
        let model_floats = engine.state.global.float_count() as u64;
        let condensed: u64 =
            m.selected.iter().map(|k| engine.state.store[k].float_count() as u64).sum();
        assert_eq!(m.up_floats, m.selected.len() as u64 * model_floats + condensed);
        assert_eq!(m.down_floats, m.selected.len() as u64 * model_floats);
    }

    #[test]
    fn full_filtration_ships_zero_condensed_floats_down() {
        let mut c = small_config();
        c.apply("pretrain_rounds", "12").unwrap();
        c.apply("rounds", "1").unwrap();
        c.apply("epsilon", "1.0").unwrap();
        c.apply("filter_ratio", "1.0").unwrap();
        let (train, test) = load(&c);
        let mut engine = Engine::new(&c, &train, &test, 47).unwrap();
        engine.pretrain().unwrap();
        assert_eq!(engine.state.seen.len(), 6);
        engine.round(1).unwrap();
        let m = &engine.state.metrics[1];
        let model_floats = engine.state.global.float_count() as u64;
        // every participant is seen: downloads are the model alone
        assert_eq!(m.down_floats, m.selected.len() as u64 * model_floats);
    }

    #[test]
    fn store_keys_track_seen_set() {
        let c = small_config();
        let (train, test) = load(&c);
        let mut engine = Engine::new(&c, &train, &test, 48).unwrap();
        engine.pretrain().unwrap();
        for t in 1..=2 {
            engine.round(t).unwrap();
            let store_keys: Vec<usize> = engine.state.store.keys().copied().collect();
            let seen: Vec<usize> = engine.state.seen.iter().copied().collect();
            assert_eq!(store_keys, seen);
            assert_eq!(engine.state.matrix.len(), seen.len());
        }
    }

    #[test]
    fn condensation_off_is_plain_federated_averaging() {
        let mut c = small_config();
        c.apply("condensation", "off").unwrap();
        c.apply("selection", "random").unwrap();
        c.apply("pretrain_rounds", "0").unwrap();
        c.apply("augmentation", "off").unwrap();
        c.apply("rounds", "2").unwrap();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 49).unwrap();
        // no condensed traffic at all: both directions are pure model floats
        let dims = c.model_dims(train.dim(), train.num_classes);
        let mut rng = substream(49, &[tag::INIT]);
        let model_floats = ModelParams::init(&dims, &mut rng).unwrap().float_count() as u64;
        for m in &out.metrics[1..] {
            assert_eq!(m.up_floats, m.selected.len() as u64 * model_floats);
            assert_eq!(m.down_floats, m.selected.len() as u64 * model_floats);
        }
        assert_eq!(out.comm.formula_upload, 0.0);
    }

    #[test]
    fn accuracy_improves_over_random_init_on_blobs() {
        // augmentation off: geometric ops tuned for real images shred 4x4 blobs
        let mut c = small_config();
        c.apply("rounds", "10").unwrap();
        c.apply("pretrain_rounds", "2").unwrap();
        c.apply("condense_iters", "10").unwrap();
        c.apply("epochs_client", "2").unwrap();
        c.apply("lr_client", "0.05").unwrap();
        c.apply("alpha", "2.0").unwrap();
        c.apply("augmentation", "off").unwrap();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 50).unwrap();
        let first = out.metrics.first().unwrap().accuracy;
        let last = out.final_accuracy;
        assert!(last > 0.9, "final accuracy too low: {last}");
        assert!(last > first, "training went backwards: {first} -> {last}");
    }

    #[test]
    fn events_note_exhausted_pools() {
        // everyone seen after exhaustive pretrain, epsilon 0 forces explore
        let mut c = small_config();
        c.apply("pretrain_rounds", "12").unwrap();
        c.apply("epsilon", "0").unwrap();
        c.apply("rounds", "1").unwrap();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 51).unwrap();
        assert!(out.events.iter().any(|e| e.contains("exhausted")), "{:?}", out.events);
    }

    #[test]
    fn activations_mode_runs_end_to_end() {
        let mut c = small_config();
        c.apply("cka_mode", "activations").unwrap();
        c.apply("probe_rows", "16").unwrap();
        c.apply("rounds", "1").unwrap();
        let (train, test) = load(&c);
        let out = run_experiment(&c, &train, &test, 52).unwrap();
        assert_eq!(out.metrics.len(), 2);
        assert!(out.cka_csv.lines().count() > 1);
    }

    #[test]
    fn subset_indices_are_even_and_in_range() {
        let idx = subset_indices(100, 10);
        assert_eq!(idx.len(), 10);
        assert_eq!(idx[0], 0);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 100));
        assert_eq!(subset_indices(5, 0).len(), 5);
        assert_eq!(subset_indices(5, 9).len(), 5);
    }

    #[test]
    fn augment_ops_subset_still_runs() {
        let mut c = small_config();
        c.apply("augment_ops", "flip,brightness").unwrap();
        c.apply("rounds", "1").unwrap();
        c.validate().unwrap();
        assert_eq!(c.augment_ops, vec![AugmentOp::Flip, AugmentOp::Brightness]);
        let (train, test) = load(&c);
        run_experiment(&c, &train, &test, 53).unwrap();
    }

    #[test]
    fn fednova_and_fedprox_run_end_to_end() {
        for strat in ["fednova", "fedprox"] {
            let mut c = small_config();
            c.apply("aggregation", strat).unwrap();
            c.apply("rounds", "2").unwrap();
            let (train, test) = load(&c);
            let out = run_experiment(&c, &train, &test, 54).unwrap();
            assert_eq!(out.metrics.len(), 3);
            assert!(out.final_accuracy.is_finite());
        }
    }
}
