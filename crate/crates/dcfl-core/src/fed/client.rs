//! Client-side round work: local SGD, condensation hand-off, and the
//! fine-tune pass over pooled condensed data.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{dsa_augment, AugmentPolicy};
use crate::condense::{condense_dm, pool_sets, CondenseOutcome, CondenseParams, CondensedSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams};
use crate::tensor::Tensor2;

/// One client as the server tracks it between rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: Vec<usize>,
    /// Condensed sets this client holds, keyed by owner (its own included).
    pub pool: BTreeMap<usize, CondensedSet>,
}

impl ClientState {
    pub fn new(id: usize, shard: Vec<usize>) -> Self {
        ClientState { id, shard, pool: BTreeMap::new() }
    }
}

/// Hyperparameters for one training pass.
#[derive(Debug, Clone)]
pub struct LocalSpec<'a> {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// FedProx term: (mu, anchor). None for plain SGD.
    pub prox: Option<(f64, &'a ModelParams)>,
    pub policy: &'a AugmentPolicy,
}

/// Run `spec.epochs` of SGD over `(images, labels)`, batched once up front so
/// every epoch walks the same batches. Returns the number of SGD steps taken.
///
/// Augmentation seeds are drawn from `rng` only when the policy is enabled,
/// so disabled runs consume exactly the shuffle from the stream.
pub fn train_epochs(
    params: &mut ModelParams,
    images: &Tensor2,
    labels: &[usize],
    image_shape: (usize, usize, usize),
    spec: &LocalSpec,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if images.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.rows(),
            labels.len()
        )));
    }
    if spec.batch == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    if spec.epochs == 0 || images.rows() == 0 {
        return Ok(0);
    }
    let mut order: Vec<usize> = (0..images.rows()).collect();
    order.shuffle(rng);
    let batches: Vec<&[usize]> = order.chunks(spec.batch).collect();
    let mut steps = 0;
    for _ in 0..spec.epochs {
        for chunk in &batches {
            let mut batch = images.gather_rows(chunk)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            if spec.policy.enabled {
                let aug_seed: u64 = rng.gen();
                batch = dsa_augment(&batch, image_shape, spec.policy, aug_seed)?;
            }
            let pass = nn::forward(params, &batch)?;
            let (_, d_logits) = nn::cross_entropy(pass.logits(), &batch_labels)?;
            let grads = nn::backward(params, &pass, &d_logits, false)?;
            match spec.prox {
                Some((mu, anchor)) => nn::sgd_step_prox(params, &grads, spec.lr, mu, anchor)?,
                None => nn::sgd_step(params, &grads, spec.lr)?,
            }
            steps += 1;
        }
    }
    Ok(steps)
}

fn gather_shard(dataset: &Dataset, shard: &[usize]) -> Result<(Tensor2, Vec<usize>)> {
    let images = dataset.images.gather_rows(shard)?;
    let labels = shard.iter().map(|&i| dataset.labels[i]).collect();
    Ok((images, labels))
}

/// Result of a first-contact round.
#[derive(Debug, Clone)]
pub struct WoCdOutput {
    pub params: ModelParams,
    pub condensed: CondenseOutcome,
    pub steps: usize,
}

/// First-contact client work: condense the local shard, then train the
/// received model on the real shard.
pub fn client_update_wo_cd(
    id: usize,
    round: usize,
    global: &ModelParams,
    dataset: &Dataset,
    shard: &[usize],
    spec: &LocalSpec,
    cparams: &CondenseParams,
    condense_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<WoCdOutput> {
    let condensed = condense_dm(dataset, shard, id, round, condense_seed, cparams)?;
    let mut params = global.clone();
    let (images, labels) = gather_shard(dataset, shard)?;
    let steps = train_epochs(&mut params, &images, &labels, dataset.image_shape, spec, rng)?;
    Ok(WoCdOutput { params, condensed, steps })
}

/// Result of a returning-client round.
#[derive(Debug, Clone)]
pub struct WcdOutput {
    pub params: ModelParams,
    pub steps: usize,
    /// Condensed examples in the fine-tune pool, 0 when no fine-tune ran.
    pub aux_count: usize,
    pub notes: Vec<String>,
}

/// Returning-client work: fold the received complement sets into the local
/// pool, train on the real shard, then fine-tune on the pooled condensed
/// data (own set included).
pub fn client_update_w_cd(
    state: &mut ClientState,
    global: &ModelParams,
    dataset: &Dataset,
    received: Vec<CondensedSet>,
    real_spec: &LocalSpec,
    tune_spec: &LocalSpec,
    rng: &mut ChaCha8Rng,
) -> Result<WcdOutput> {
    for set in received {
        if set.owner == state.id {
            return Err(Error::Protocol(format!(
                "client {} received its own condensed set back",
                state.id
            )));
        }
        state.pool.insert(set.owner, set);
    }
    let mut params = global.clone();
    let (images, labels) = gather_shard(dataset, &state.shard)?;
    let mut steps =
        train_epochs(&mut params, &images, &labels, dataset.image_shape, real_spec, rng)?;

    let mut aux_count = 0;
    let mut notes = Vec::new();
    if tune_spec.epochs > 0 {
        let refs: Vec<&CondensedSet> = state.pool.values().collect();
        match pool_sets(&refs)? {
            Some((pool_images, pool_labels)) => {
                aux_count = pool_labels.len();
                steps += train_epochs(
                    &mut params,
                    &pool_images,
                    &pool_labels,
                    dataset.image_shape,
                    tune_spec,
                    rng,
                )?;
            }
            None => notes.push(format!("client {}: empty condensed pool, no fine-tune", state.id)),
        }
    }
    Ok(WcdOutput { params, steps, aux_count, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;
    use crate::streams::substream;

    fn blob_setup() -> (Dataset, Vec<usize>, ModelParams) {
        let ds = synthetic_blobs(3, 10, 16, 0.1, 5).unwrap();
        let shard: Vec<usize> = (0..30).collect();
        let mut rng = substream(5, &[1]);
        let model = ModelParams::init(&[16, 8, 3], &mut rng).unwrap();
        (ds, shard, model)
    }

    fn no_aug() -> AugmentPolicy {
        AugmentPolicy::identity()
    }

    fn cparams(policy: &AugmentPolicy) -> CondenseParams {
        CondenseParams {
            ipc: 2,
            iters: 0,
            lr_syn: 0.1,
            hidden_dims: vec![8],
            policy: policy.clone(),
            real_batch_cap: 16,
        }
    }

    #[test]
    fn step_count_is_epochs_times_batches() {
        let (ds, shard, mut model) = blob_setup();
        let policy = no_aug();
        let spec = LocalSpec { epochs: 3, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let (images, labels) = gather_shard(&ds, &shard).unwrap();
        let mut rng = substream(5, &[6, 1, 0]);
        let steps =
            train_epochs(&mut model, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();
        // 30 samples, batch 8 -> 4 batches per epoch
        assert_eq!(steps, 12);
    }

    #[test]
    fn zero_epochs_leaves_model_untouched() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let spec = LocalSpec { epochs: 0, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let mut trained = model.clone();
        let (images, labels) = gather_shard(&ds, &shard).unwrap();
        let mut rng = substream(5, &[6, 1, 1]);
        let steps =
            train_epochs(&mut trained, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();
        assert_eq!(steps, 0);
        assert!(trained.max_abs_diff(&model) == 0.0);
    }

    #[test]
    fn disabled_augmentation_consumes_only_the_shuffle() {
        let (ds, shard, mut model) = blob_setup();
        let policy = no_aug();
        let spec = LocalSpec { epochs: 2, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let (images, labels) = gather_shard(&ds, &shard).unwrap();
        let mut rng = substream(5, &[6, 1, 2]);
        train_epochs(&mut model, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();
        let probe: u64 = rng.gen();

        let mut control = substream(5, &[6, 1, 2]);
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut control);
        let expect: u64 = control.gen();
        assert_eq!(probe, expect);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, shard, model) = blob_setup();
        let policy = AugmentPolicy::default();
        let spec = LocalSpec { epochs: 2, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let (images, labels) = gather_shard(&ds, &shard).unwrap();
        let mut a = model.clone();
        let mut rng = substream(5, &[6, 1, 3]);
        train_epochs(&mut a, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();
        let mut b = model.clone();
        let mut rng = substream(5, &[6, 1, 3]);
        train_epochs(&mut b, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();
        assert!(a.max_abs_diff(&b) == 0.0);
    }

    #[test]
    fn prox_term_pulls_toward_anchor() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let (images, labels) = gather_shard(&ds, &shard).unwrap();

        let mut free = model.clone();
        let spec = LocalSpec { epochs: 4, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 4]);
        train_epochs(&mut free, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();

        let mut tied = model.clone();
        let spec =
            LocalSpec { epochs: 4, batch: 8, lr: 0.05, prox: Some((10.0, &model)), policy: &policy };
        let mut rng = substream(5, &[6, 1, 4]);
        train_epochs(&mut tied, &images, &labels, ds.image_shape, &spec, &mut rng).unwrap();

        assert!(tied.max_abs_diff(&model) < free.max_abs_diff(&model));
    }

    #[test]
    fn wo_cd_with_no_work_returns_the_global_model() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let spec = LocalSpec { epochs: 0, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let cp = cparams(&policy);
        let mut rng = substream(5, &[6, 1, 5]);
        let out =
            client_update_wo_cd(0, 1, &model, &ds, &shard, &spec, &cp, 900, &mut rng).unwrap();
        assert!(out.params.max_abs_diff(&model) == 0.0);
        assert_eq!(out.steps, 0);
        // ipc=2, 3 classes -> 6 synthetic rows initialized from real samples
        assert_eq!(out.condensed.set.len(), 6);
    }

    #[test]
    fn wo_cd_trains_when_asked() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let spec = LocalSpec { epochs: 2, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let cp = cparams(&policy);
        let mut rng = substream(5, &[6, 1, 6]);
        let out =
            client_update_wo_cd(0, 1, &model, &ds, &shard, &spec, &cp, 901, &mut rng).unwrap();
        assert!(out.params.max_abs_diff(&model) > 0.0);
        assert_eq!(out.steps, 8);
    }

    #[test]
    fn w_cd_merges_received_sets_by_owner() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let cp = cparams(&policy);
        let mut state = ClientState::new(0, shard.clone());
        let mut rng = substream(5, &[6, 1, 7]);
        let own =
            client_update_wo_cd(0, 1, &model, &ds, &shard, &LocalSpec {
                epochs: 0,
                batch: 8,
                lr: 0.05,
                prox: None,
                policy: &policy,
            }, &cp, 902, &mut rng)
            .unwrap();
        state.pool.insert(0, own.condensed.set);

        let donor = condense_dm(&ds, &(5..25).collect::<Vec<_>>(), 3, 1, 903, &cp).unwrap();
        let replacement = condense_dm(&ds, &(10..30).collect::<Vec<_>>(), 3, 2, 904, &cp).unwrap();

        let real = LocalSpec { epochs: 1, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let tune = LocalSpec { epochs: 1, batch: 4, lr: 0.01, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 8]);
        let out = client_update_w_cd(
            &mut state,
            &model,
            &ds,
            vec![donor.set],
            &real,
            &tune,
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.pool.len(), 2);
        assert_eq!(out.aux_count, 12);

        // same owner again: replaces, pool does not grow
        let mut rng = substream(5, &[6, 1, 9]);
        let out = client_update_w_cd(
            &mut state,
            &model,
            &ds,
            vec![replacement.set.clone()],
            &real,
            &tune,
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.pool.len(), 2);
        assert_eq!(state.pool[&3].round_created, 2);
        // the replacement covers two classes, so the pool shrinks to 6 + 4
        assert_eq!(out.aux_count, 10);
    }

    #[test]
    fn w_cd_rejects_own_set_in_delivery() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let cp = cparams(&policy);
        let mut state = ClientState::new(4, shard.clone());
        let own = condense_dm(&ds, &shard, 4, 1, 905, &cp).unwrap();
        let real = LocalSpec { epochs: 1, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 10]);
        let err = client_update_w_cd(
            &mut state,
            &model,
            &ds,
            vec![own.set],
            &real.clone(),
            &real,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn w_cd_empty_pool_skips_fine_tune_with_note() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let mut state = ClientState::new(2, shard);
        let real = LocalSpec { epochs: 1, batch: 8, lr: 0.05, prox: None, policy: &policy };
        let tune = LocalSpec { epochs: 2, batch: 4, lr: 0.01, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 11]);
        let out =
            client_update_w_cd(&mut state, &model, &ds, vec![], &real, &tune, &mut rng).unwrap();
        assert_eq!(out.aux_count, 0);
        assert_eq!(out.notes.len(), 1);
        assert_eq!(out.steps, 4);
    }

    #[test]
    fn w_cd_fine_tune_moves_the_model() {
        let (ds, shard, model) = blob_setup();
        let policy = no_aug();
        let cp = cparams(&policy);
        let mut state = ClientState::new(1, shard.clone());
        let own = condense_dm(&ds, &shard, 1, 1, 906, &cp).unwrap();
        state.pool.insert(1, own.set);
        let real = LocalSpec { epochs: 1, batch: 8, lr: 0.05, prox: None, policy: &policy };

        let tune_off = LocalSpec { epochs: 0, batch: 4, lr: 0.01, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 12]);
        let a = client_update_w_cd(
            &mut state.clone(),
            &model,
            &ds,
            vec![],
            &real,
            &tune_off,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.aux_count, 0);

        let tune_on = LocalSpec { epochs: 2, batch: 4, lr: 0.01, prox: None, policy: &policy };
        let mut rng = substream(5, &[6, 1, 12]);
        let b =
            client_update_w_cd(&mut state, &model, &ds, vec![], &real, &tune_on, &mut rng).unwrap();
        assert_eq!(b.aux_count, 6);
        assert!(b.params.max_abs_diff(&a.params) > 0.0);
        assert!(b.steps > a.steps);
    }
}
