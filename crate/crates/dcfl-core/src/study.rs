//! Complementarity study: train one classifier per client on a grouped
//! partition, then compare classifier similarity against label-distribution
//! distance.

use crate::augment::AugmentPolicy;
use crate::data::{label_distribution, Dataset, Partition};
use crate::error::{Error, Result};
use crate::fed::client::{train_epochs, LocalSpec};
use crate::fed::selection::complement_group_for;
use crate::nn::ModelParams;
use crate::partition::grouped_partition;
use crate::similarity::{emd, spearman, CkaMatrix, CkaMode};
use crate::streams::{substream, tag};
use crate::tensor::Tensor2;

/// Knobs for one study repetition.
#[derive(Debug, Clone)]
pub struct StudyParams {
    pub group_sizes: Vec<usize>,
    pub alpha: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub mode: CkaMode,
    pub probe_rows: usize,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            group_sizes: vec![2, 3, 2, 2, 1],
            alpha: 0.1,
            epochs: 10,
            batch: 32,
            lr: 0.1,
            hidden: vec![32],
            mode: CkaMode::Weights,
            probe_rows: 64,
        }
    }
}

/// Everything one repetition measures.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub matrix: CkaMatrix,
    pub partition: Partition,
    /// Client group labels aligned with client ids.
    pub groups: Vec<usize>,
    /// Pairwise label-distribution distances, full square matrix.
    pub emd: Vec<Vec<f64>>,
    /// Rank correlation between pairwise similarity and negated distance.
    pub spearman_cka_vs_neg_emd: f64,
    pub same_group_mean_cka: f64,
    pub cross_group_mean_cka: f64,
}

/// Map group sizes to a per-client group label.
pub fn group_labels(group_sizes: &[usize]) -> Vec<usize> {
    let mut labels = Vec::new();
    for (g, &size) in group_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(g).take(size));
    }
    labels
}

/// Run one repetition: partition, train per-client classifiers from a shared
/// initialization, and relate their similarity to label-distribution overlap.
pub fn complementarity_study(
    dataset: &Dataset,
    params: &StudyParams,
    seed: u64,
) -> Result<StudyOutcome> {
    let clients: usize = params.group_sizes.iter().sum();
    if clients < 2 {
        return Err(Error::Argument("study needs at least two clients".into()));
    }
    let partition = grouped_partition(dataset, &params.group_sizes, params.alpha, seed)?;
    let groups = group_labels(&params.group_sizes);

    let mut dims = Vec::with_capacity(params.hidden.len() + 2);
    dims.push(dataset.dim());
    dims.extend_from_slice(&params.hidden);
    dims.push(dataset.num_classes);
    let mut init_rng = substream(seed, &[tag::INIT]);
    let shared_init = ModelParams::init(&dims, &mut init_rng)?;

    let probe = match params.mode {
        CkaMode::Weights => None,
        CkaMode::Activations => {
            use rand::Rng;
            let feat_dim = shared_init.classifier().in_dim();
            let mut rng = substream(seed, &[tag::PROBE]);
            let data: Vec<f64> =
                (0..params.probe_rows * feat_dim).map(|_| rng.gen::<f64>()).collect();
            Some(Tensor2::from_vec(params.probe_rows, feat_dim, data)?)
        }
    };
    let mut matrix = CkaMatrix::new(params.mode, probe)?;

    let policy = AugmentPolicy::identity();
    let mut dists = Vec::with_capacity(clients);
    for (k, shard) in partition.client_indices.iter().enumerate() {
        let mut model = shared_init.clone();
        let spec = LocalSpec {
            epochs: params.epochs,
            batch: params.batch,
            lr: params.lr,
            prox: None,
            policy: &policy,
        };
        let images = dataset.images.gather_rows(shard)?;
        let labels: Vec<usize> = shard.iter().map(|&i| dataset.labels[i]).collect();
        let mut rng = substream(seed, &[tag::CLIENT, 0, k as u64]);
        train_epochs(&mut model, &images, &labels, dataset.image_shape, &spec, &mut rng)?;
        matrix.insert(k, model.classifier())?;
        dists.push(label_distribution(dataset, shard)?);
    }

    let mut emd_matrix = vec![vec![0.0; clients]; clients];
    for a in 0..clients {
        for b in 0..clients {
            if a != b {
                emd_matrix[a][b] = emd(&dists[a].probs, &dists[b].probs)?;
            }
        }
    }

    let mut cka_pairs = Vec::new();
    let mut neg_emd_pairs = Vec::new();
    let mut same = Vec::new();
    let mut cross = Vec::new();
    for a in 0..clients {
        for b in (a + 1)..clients {
            let score = matrix
                .score(a, b)
                .ok_or_else(|| Error::State(format!("pair ({a},{b}) missing from matrix")))?;
            cka_pairs.push(score);
            neg_emd_pairs.push(-emd_matrix[a][b]);
            if groups[a] == groups[b] {
                same.push(score);
            } else {
                cross.push(score);
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(StudyOutcome {
        matrix,
        partition,
        groups,
        emd: emd_matrix,
        spearman_cka_vs_neg_emd: spearman(&cka_pairs, &neg_emd_pairs)?,
        same_group_mean_cka: mean(&same),
        cross_group_mean_cka: mean(&cross),
    })
}

/// CSV export of the pairwise distance matrix, same layout as the
/// similarity matrix export.
pub fn emd_csv(outcome: &StudyOutcome) -> String {
    let n = outcome.groups.len();
    let mut out = String::from("id");
    for id in 0..n {
        out.push_str(&format!(",{id}"));
    }
    out.push('\n');
    for a in 0..n {
        out.push_str(&a.to_string());
        for b in 0..n {
            out.push_str(&format!(",{:.12}", outcome.emd[a][b]));
        }
        out.push('\n');
    }
    out
}

/// Fraction of complement-group members that sit outside the recipient's own
/// group, across every client; the study's routing check.
pub fn cross_group_complement_fraction(outcome: &StudyOutcome, group_size: usize) -> Result<f64> {
    let clients = outcome.groups.len();
    let mut cross = 0usize;
    let mut total = 0usize;
    for k in 0..clients {
        let donors = complement_group_for(&outcome.matrix, k, group_size)?;
        for d in donors {
            total += 1;
            if outcome.groups[d] != outcome.groups[k] {
                cross += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Argument("no complement members to classify".into()));
    }
    Ok(cross as f64 / total as f64)
}
