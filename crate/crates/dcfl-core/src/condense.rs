//! Distribution-matching dataset condensation, plus server-side quality
//! filtering of condensed sets.
//!
//! Condensation optimizes synthetic pixels so that, under freshly sampled
//! random feature extractors, per-class feature means of the synthetic data
//! match those of the real data. Gradients flow through the shared siamese
//! augmentation back to the pixels.

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;

use crate::augment::{apply_transform, sample_transform, AugmentPolicy};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, read_f64s, read_u32, ForwardPass, ModelParams};
use crate::streams::{substream, tag};
use crate::tensor::Tensor2;

const CONDENSED_MAGIC: &[u8; 6] = b"DCFLC\0";

/// A client's condensed (synthetic) dataset. Rows are ordered class-major:
/// all slots of the lowest class first.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedSet {
    pub owner: usize,
    pub images: Tensor2,
    pub labels: Vec<usize>,
    pub ipc: usize,
    pub round_created: usize,
}

impl CondensedSet {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of f64 values in the image payload; the unit of the
    /// communication ledger.
    pub fn float_count(&self) -> usize {
        self.images.rows() * self.images.cols()
    }

    /// Distinct classes present, ascending.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut classes = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let classes = self.classes_present();
        let mut out = Vec::with_capacity(32 + self.float_count() * 8);
        out.extend_from_slice(CONDENSED_MAGIC);
        out.extend_from_slice(&(self.owner as u32).to_le_bytes());
        out.extend_from_slice(&(self.ipc as u32).to_le_bytes());
        out.extend_from_slice(&(self.round_created as u32).to_le_bytes());
        out.extend_from_slice(&(self.images.cols() as u32).to_le_bytes());
        out.extend_from_slice(&(classes.len() as u32).to_le_bytes());
        for c in &classes {
            out.extend_from_slice(&(*c as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&(*l as u32).to_le_bytes());
        }
        for v in self.images.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CONDENSED_MAGIC {
            return Err(Error::Format("bad condensed-set magic".into()));
        }
        let owner = read_u32(&mut r)? as usize;
        let ipc = read_u32(&mut r)? as usize;
        let round_created = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let class_count = read_u32(&mut r)? as usize;
        let mut classes = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            classes.push(read_u32(&mut r)? as usize);
        }
        let rows = read_u32(&mut r)? as usize;
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            let l = read_u32(&mut r)? as usize;
            if !classes.contains(&l) {
                return Err(Error::Format(format!("label {} not in declared class list", l)));
            }
            labels.push(l);
        }
        let mut data = vec![0.0; rows * dim];
        read_f64s(&mut r, &mut data)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite pixel in condensed set".into()));
        }
        Ok(CondensedSet {
            owner,
            images: Tensor2::from_vec(rows, dim, data)?,
            labels,
            ipc,
            round_created,
        })
    }
}

/// Concatenate several condensed sets into one training pool.
/// Returns None when every set is empty.
pub fn pool_sets(sets: &[&CondensedSet]) -> Result<Option<(Tensor2, Vec<usize>)>> {
    let nonempty: Vec<&&CondensedSet> = sets.iter().filter(|s| !s.is_empty()).collect();
    let total: usize = nonempty.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Ok(None);
    }
    let dim = nonempty[0].images.cols();
    if nonempty.iter().any(|s| s.images.cols() != dim) {
        return Err(Error::Shape("condensed sets have mismatched image dims".into()));
    }
    let mut images = Tensor2::zeros(total, dim);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for s in nonempty {
        for r in 0..s.len() {
            images.row_mut(row).copy_from_slice(s.images.row(r));
            labels.push(s.labels[r]);
            row += 1;
        }
    }
    Ok(Some((images, labels)))
}

/// Knobs for one condensation call.
#[derive(Debug, Clone)]
pub struct CondenseParams {
    pub ipc: usize,
    pub iters: usize,
    pub lr_syn: f64,
    /// Widths of the random feature extractor; empty means identity features.
    pub hidden_dims: Vec<usize>,
    pub policy: AugmentPolicy,
    /// Per-class cap on the real batch sampled each iteration.
    pub real_batch_cap: usize,
}

/// Result of a condensation run, with the matching loss measured under one
/// fixed probe extractor before and after optimization.
#[derive(Debug, Clone)]
pub struct CondenseOutcome {
    pub set: CondensedSet,
    pub losses: Vec<f64>,
    pub probe_loss_before: f64,
    pub probe_loss_after: f64,
}

fn make_extractor(dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Option<ModelParams>> {
    if hidden.is_empty() {
        return Ok(None);
    }
    let mut dims = Vec::with_capacity(hidden.len() + 1);
    dims.push(dim);
    dims.extend_from_slice(hidden);
    Ok(Some(ModelParams::init(&dims, rng)?))
}

/// Post-ReLU features of a batch under an optional extractor. Identity
/// extractor returns the batch itself.
fn extract_features(
    extractor: Option<&ModelParams>,
    batch: &Tensor2,
) -> Result<(Tensor2, Option<ForwardPass>)> {
    match extractor {
        None => Ok((batch.clone(), None)),
        Some(ex) => {
            let pass = nn::forward(ex, batch)?;
            let mut feat = pass.logits().clone();
            for v in feat.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Ok((feat, Some(pass)))
        }
    }
}

/// Squared distance between per-class feature means, and optionally its
/// gradient with respect to the synthetic batch entries.
fn matching_loss_grad(
    extractor: Option<&ModelParams>,
    real_aug: &Tensor2,
    syn_aug: &Tensor2,
    want_grad: bool,
) -> Result<(f64, Option<Tensor2>)> {
    let (real_feat, _) = extract_features(extractor, real_aug)?;
    let (syn_feat, syn_pass) = extract_features(extractor, syn_aug)?;
    if real_feat.cols() != syn_feat.cols() {
        return Err(Error::Shape("feature widths differ".into()));
    }
    let real_mean = real_feat.col_means();
    let syn_mean = syn_feat.col_means();
    let diff: Vec<f64> = real_mean.iter().zip(&syn_mean).map(|(r, s)| r - s).collect();
    let loss: f64 = diff.iter().map(|v| v * v).sum();
    if !want_grad {
        return Ok((loss, None));
    }
    let s = syn_feat.rows() as f64;
    let mut d_feat = Tensor2::zeros(syn_feat.rows(), syn_feat.cols());
    for row in 0..syn_feat.rows() {
        for (g, &dv) in d_feat.row_mut(row).iter_mut().zip(&diff) {
            *g = -2.0 * dv / s;
        }
    }
    let d_syn = match extractor {
        None => d_feat,
        Some(ex) => {
            // block gradient where the feature ReLU clipped
            for (g, &f) in d_feat.data_mut().iter_mut().zip(syn_feat.data()) {
                if f <= 0.0 {
                    *g = 0.0;
                }
            }
            let pass = syn_pass.ok_or_else(|| Error::State("missing extractor pass".into()))?;
            let grads = nn::backward(ex, &pass, &d_feat, true)?;
            grads.d_input.ok_or_else(|| Error::State("missing input gradient".into()))?
        }
    };
    Ok((loss, Some(d_syn)))
}

/// Matching loss of the synthetic set against the full real shard under a
/// fixed extractor, without augmentation. Used as the before/after probe.
fn probe_matching_loss(
    extractor: Option<&ModelParams>,
    dataset: &Dataset,
    by_class: &[Vec<usize>],
    classes: &[usize],
    syn: &Tensor2,
    ipc: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (ci, &c) in classes.iter().enumerate() {
        let real = dataset.images.gather_rows(&by_class[c])?;
        let rows: Vec<usize> = (ci * ipc..(ci + 1) * ipc).collect();
        let syn_batch = syn.gather_rows(&rows)?;
        let (loss, _) = matching_loss_grad(extractor, &real, &syn_batch, false)?;
        total += loss;
    }
    Ok(total)
}

/// Distribution-matching condensation of one client's shard.
pub fn condense_dm(
    dataset: &Dataset,
    indices: &[usize],
    owner: usize,
    round_created: usize,
    seed: u64,
    params: &CondenseParams,
) -> Result<CondenseOutcome> {
    if params.ipc == 0 {
        return Err(Error::Argument("ipc must be at least 1".into()));
    }
    if params.real_batch_cap == 0 {
        return Err(Error::Argument("real batch cap must be at least 1".into()));
    }
    if params.iters > 0 && params.lr_syn <= 0.0 {
        return Err(Error::Argument("synthetic learning rate must be positive".into()));
    }
    if indices.is_empty() {
        return Err(Error::Condensation(format!("client {} owns no samples", owner)));
    }
    let dim = dataset.dim();
    let shape = dataset.image_shape;
    let by_class = dataset.indices_by_class(indices)?;
    let classes: Vec<usize> = by_class
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(c, _)| c)
        .collect();
    if classes.is_empty() {
        return Err(Error::Condensation(format!("client {} owns no labeled samples", owner)));
    }
    let ipc = params.ipc;

    // synthetic pixels start as random real samples of the matching class
    let mut init_rng = substream(seed, &[tag::CONDENSE, owner as u64]);
    let mut syn = Tensor2::zeros(classes.len() * ipc, dim);
    let mut labels = Vec::with_capacity(classes.len() * ipc);
    for (ci, &c) in classes.iter().enumerate() {
        let pool = &by_class[c];
        let chosen: Vec<usize> = if pool.len() >= ipc {
            index::sample(&mut init_rng, pool.len(), ipc).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..ipc).map(|_| pool[init_rng.gen_range(0..pool.len())]).collect()
        };
        for (slot, &src) in chosen.iter().enumerate() {
            syn.row_mut(ci * ipc + slot).copy_from_slice(dataset.images.row(src));
            labels.push(c);
        }
    }

    let mut probe_rng = substream(seed, &[tag::CONDENSE, owner as u64, tag::PROBE]);
    let probe = make_extractor(dim, &params.hidden_dims, &mut probe_rng)?;
    let probe_loss_before =
        probe_matching_loss(probe.as_ref(), dataset, &by_class, &classes, &syn, ipc)?;

    let mut losses = Vec::with_capacity(params.iters);
    for iter in 0..params.iters {
        let mut iter_rng = substream(seed, &[tag::CONDENSE, owner as u64, 1, iter as u64]);
        let extractor = make_extractor(dim, &params.hidden_dims, &mut iter_rng)?;
        let mut total_loss = 0.0;
        let mut d_syn = Tensor2::zeros(syn.rows(), dim);
        for (ci, &c) in classes.iter().enumerate() {
            let pool = &by_class[c];
            let take = pool.len().min(params.real_batch_cap);
            let real_idx: Vec<usize> =
                index::sample(&mut iter_rng, pool.len(), take).into_iter().map(|i| pool[i]).collect();
            let real = dataset.images.gather_rows(&real_idx)?;
            let rows: Vec<usize> = (ci * ipc..(ci + 1) * ipc).collect();
            let syn_batch = syn.gather_rows(&rows)?;

            let aug_seed = iter_rng.gen::<u64>();
            let t = sample_transform(&params.policy, shape, aug_seed)?;
            let real_aug = apply_transform(&real, shape, &t)?;
            let syn_aug = apply_transform(&syn_batch, shape, &t)?;

            let (loss, d_aug) =
                matching_loss_grad(extractor.as_ref(), &real_aug.images, &syn_aug.images, true)?;
            total_loss += loss;
            let d_aug = d_aug.ok_or_else(|| Error::State("missing matching gradient".into()))?;
            let d_batch =
                crate::augment::backprop_transform(&d_aug, shape, &t, &syn_aug.pass_mask)?;
            for (bi, &row) in rows.iter().enumerate() {
                for (acc, &g) in d_syn.row_mut(row).iter_mut().zip(d_batch.row(bi)) {
                    *acc += g;
                }
            }
        }
        if !total_loss.is_finite() {
            return Err(Error::Numeric(format!("matching loss diverged at iteration {}", iter)));
        }
        losses.push(total_loss);
        for (v, &g) in syn.data_mut().iter_mut().zip(d_syn.data()) {
            *v = (*v - params.lr_syn * g).clamp(0.0, 1.0);
        }
    }

    let probe_loss_after =
        probe_matching_loss(probe.as_ref(), dataset, &by_class, &classes, &syn, ipc)?;

    Ok(CondenseOutcome {
        set: CondensedSet { owner, images: syn, labels, ipc, round_created },
        losses,
        probe_loss_before,
        probe_loss_after,
    })
}

/// Which scores survive filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKeep {
    /// Drop the highest-loss examples (default).
    LowLoss,
    /// Drop the lowest-loss examples.
    HighLoss,
}

/// Pooled filter decision: drop floor(r·N) examples by score, keeping the
/// rest. Ties drop the earlier-pooled example first (stable order).
pub fn survivors_by_score(scores: &[f64], r: f64, keep: FilterKeep) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!("filter ratio {} outside [0,1]", r)));
    }
    let n = scores.len();
    let drop = (r * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    match keep {
        FilterKeep::LowLoss => order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal)
        }),
        FilterKeep::HighLoss => order.sort_by(|&a, &b| {
            scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal)
        }),
    }
    let mut keep_mask = vec![true; n];
    for &i in order.iter().take(drop) {
        keep_mask[i] = false;
    }
    Ok(keep_mask)
}

/// Score every synthetic example by cross-entropy loss under the given model
/// and drop the worst floor(r·N) across the pooled sets. Per-set structure is
/// preserved for survivors.
pub fn filter_condensed(
    sets: &[CondensedSet],
    model: &ModelParams,
    r: f64,
    keep: FilterKeep,
) -> Result<Vec<CondensedSet>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!("filter ratio {} outside [0,1]", r)));
    }
    let mut scores = Vec::new();
    for set in sets {
        if set.is_empty() {
            continue;
        }
        let pass = nn::forward(model, &set.images)?;
        scores.extend(nn::per_example_loss(pass.logits(), &set.labels)?);
    }
    let keep_mask = survivors_by_score(&scores, r, keep)?;
    let mut out = Vec::with_capacity(sets.len());
    let mut cursor = 0;
    for set in sets {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for row in 0..set.len() {
            if keep_mask[cursor] {
                rows.push(row);
                labels.push(set.labels[row]);
            }
            cursor += 1;
        }
        out.push(CondensedSet {
            owner: set.owner,
            images: set.images.gather_rows(&rows)?,
            labels,
            ipc: set.ipc,
            round_created: set.round_created,
        });
    }
    Ok(out)
}
