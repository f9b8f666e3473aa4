//! Non-IID partitioners: per-class Dirichlet splits, pathological
//! fixed-classes-per-client shards, and group-structured Dirichlet splits
//! where clients inside a group share a label distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution};

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::streams::{self, substream};

const REDRAW_ATTEMPTS: u64 = 32;

/// Draw a length-k proportion vector from Dirichlet(alpha·1_k). Returns None
/// when the draw degenerates numerically (all-zero gamma underflow).
fn draw_proportions(rng: &mut impl Rng, alpha: f64, k: usize) -> Option<Vec<f64>> {
    if k == 1 {
        return Some(vec![1.0]);
    }
    let dist = Dirichlet::new_with_size(alpha, k).ok()?;
    let props = dist.sample(rng);
    let sum: f64 = props.iter().sum();
    if props.iter().all(|p| p.is_finite()) && (sum - 1.0).abs() < 1e-6 {
        Some(props)
    } else {
        None
    }
}

/// Split an index list into consecutive chunks sized by cumulative-floor
/// proportions. Conserves every index.
fn split_by_proportions(indices: &[usize], props: &[f64]) -> Vec<Vec<usize>> {
    let n = indices.len();
    let mut out = Vec::with_capacity(props.len());
    let mut cum = 0.0;
    let mut start = 0usize;
    for (j, &p) in props.iter().enumerate() {
        cum += p;
        let end = if j + 1 == props.len() { n } else { ((cum * n as f64).floor() as usize).min(n) };
        let end = end.max(start);
        out.push(indices[start..end].to_vec());
        start = end;
    }
    out
}

fn shuffled_class_indices(dataset: &Dataset, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut by_class = dataset.indices_by_class(&all)?;
    for list in &mut by_class {
        list.shuffle(rng);
    }
    Ok(by_class)
}

/// Per-class Dirichlet partition: each class's samples are split across the
/// K clients with proportions drawn from Dirichlet(alpha·1_K). The whole
/// partition is re-drawn (bounded attempts) if any client ends up empty.
pub fn dirichlet_partition(dataset: &Dataset, k: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::Argument("need at least one client".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::Argument("dirichlet alpha must be positive".into()));
    }
    'attempt: for attempt in 0..REDRAW_ATTEMPTS {
        let mut rng = substream(seed, &[streams::tag::PARTITION, 0, attempt]);
        let by_class = shuffled_class_indices(dataset, &mut rng)?;
        let mut clients = vec![Vec::new(); k];
        for class_list in by_class.iter().filter(|l| !l.is_empty()) {
            let props = match draw_proportions(&mut rng, alpha, k) {
                Some(p) => p,
                None => continue 'attempt,
            };
            for (client, chunk) in split_by_proportions(class_list, &props).into_iter().enumerate() {
                clients[client].extend(chunk);
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            return Ok(Partition { client_indices: clients });
        }
    }
    Err(Error::Partition(format!(
        "no empty-free partition after {} attempts (K={}, alpha={})",
        REDRAW_ATTEMPTS, k, alpha
    )))
}

/// Pathological partition: every client holds samples from exactly
/// `classes_per_client` distinct classes. Classes are dealt cyclically from a
/// random offset, then each class is cut into equal shards for the clients
/// assigned to it.
pub fn pathological_partition(
    dataset: &Dataset,
    k: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    let c = dataset.num_classes;
    if k == 0 || classes_per_client == 0 {
        return Err(Error::Argument("client and class counts must be at least 1".into()));
    }
    if classes_per_client > c {
        return Err(Error::Partition(format!(
            "cannot give each client {} distinct classes out of {}",
            classes_per_client, c
        )));
    }
    if k * classes_per_client < c {
        return Err(Error::Partition(format!(
            "{} shard slots cannot cover {} classes",
            k * classes_per_client,
            c
        )));
    }
    let mut rng = substream(seed, &[streams::tag::PARTITION, 1]);
    let offset = rng.gen_range(0..c);
    // assignment[c] lists the clients that will receive a shard of class c,
    // in dealing order
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); c];
    for client in 0..k {
        for j in 0..classes_per_client {
            assignment[(offset + client * classes_per_client + j) % c].push(client);
        }
    }
    let by_class = shuffled_class_indices(dataset, &mut rng)?;
    let mut clients = vec![Vec::new(); k];
    for (class, holders) in assignment.iter().enumerate() {
        let shard_count = holders.len();
        if by_class[class].len() < shard_count {
            return Err(Error::Partition(format!(
                "class {} has {} samples but needs {} shards",
                class,
                by_class[class].len(),
                shard_count
            )));
        }
        let uniform = vec![1.0 / shard_count as f64; shard_count];
        for (holder, shard) in holders.iter().zip(split_by_proportions(&by_class[class], &uniform)) {
            clients[*holder].extend(shard);
        }
    }
    let partition = Partition { client_indices: clients };
    partition.validate(dataset.len())?;
    Ok(partition)
}

/// Group-structured partition: each group draws one Dirichlet(alpha·1_C)
/// label distribution; classes are allocated to groups proportional to that
/// distribution weighted by group size, and split uniformly inside the group.
/// Clients are numbered group by group in the order `group_sizes` lists them.
pub fn grouped_partition(
    dataset: &Dataset,
    group_sizes: &[usize],
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if group_sizes.is_empty() || group_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Argument("group sizes must be nonempty and positive".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::Argument("dirichlet alpha must be positive".into()));
    }
    let c = dataset.num_classes;
    let k: usize = group_sizes.iter().sum();
    let group_of_first_client: Vec<usize> = group_sizes
        .iter()
        .scan(0usize, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();

    'attempt: for attempt in 0..REDRAW_ATTEMPTS {
        let mut rng = substream(seed, &[streams::tag::PARTITION, 2, attempt]);
        let mut group_dists = Vec::with_capacity(group_sizes.len());
        for _ in group_sizes {
            match draw_proportions(&mut rng, alpha, c) {
                Some(p) => group_dists.push(p),
                None => continue 'attempt,
            }
        }
        let by_class = shuffled_class_indices(dataset, &mut rng)?;
        let mut clients = vec![Vec::new(); k];
        for (class, class_list) in by_class.iter().enumerate().filter(|(_, l)| !l.is_empty()) {
            let mut weights: Vec<f64> = group_dists
                .iter()
                .zip(group_sizes)
                .map(|(q, &size)| q[class] * size as f64)
                .collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                continue 'attempt;
            }
            for w in &mut weights {
                *w /= total;
            }
            for (g, group_chunk) in split_by_proportions(class_list, &weights).into_iter().enumerate() {
                let size = group_sizes[g];
                let uniform = vec![1.0 / size as f64; size];
                for (member, shard) in split_by_proportions(&group_chunk, &uniform).into_iter().enumerate() {
                    clients[group_of_first_client[g] + member].extend(shard);
                }
            }
        }
        if clients.iter().all(|cl| !cl.is_empty()) {
            return Ok(Partition { client_indices: clients });
        }
    }
    Err(Error::Partition(format!(
        "no empty-free grouped partition after {} attempts (groups={:?}, alpha={})",
        REDRAW_ATTEMPTS, group_sizes, alpha
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_distribution, synthetic_blobs};
    use crate::similarity::emd;

    fn check_conservation(p: &Partition, n: usize) {
        p.validate(n).unwrap();
        let mut count = 0;
        for c in &p.client_indices {
            count += c.len();
        }
        assert_eq!(count, n, "partition must cover the whole dataset");
    }

    #[test]
    fn dirichlet_single_client_gets_everything() {
        let ds = synthetic_blobs(3, 10, 4, 0.3, 1).unwrap();
        let p = dirichlet_partition(&ds, 1, 0.5, 7).unwrap();
        assert_eq!(p.client_indices.len(), 1);
        let mut got = p.client_indices[0].clone();
        got.sort_unstable();
        assert_eq!(got, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn dirichlet_conserves_indices() {
        let ds = synthetic_blobs(4, 25, 4, 0.3, 2).unwrap();
        for &(k, alpha, seed) in &[(2, 0.1, 1u64), (5, 0.5, 2), (7, 10.0, 3)] {
            let p = dirichlet_partition(&ds, k, alpha, seed).unwrap();
            check_conservation(&p, ds.len());
        }
    }

    #[test]
    fn dirichlet_deterministic() {
        let ds = synthetic_blobs(4, 25, 4, 0.3, 2).unwrap();
        let a = dirichlet_partition(&ds, 5, 0.5, 11).unwrap();
        let b = dirichlet_partition(&ds, 5, 0.5, 11).unwrap();
        assert_eq!(a.client_indices, b.client_indices);
        let c = dirichlet_partition(&ds, 5, 0.5, 12).unwrap();
        assert_ne!(a.client_indices, c.client_indices);
    }

    #[test]
    fn dirichlet_impossible_geometry_errors() {
        // more clients than samples can never avoid empty clients
        let ds = synthetic_blobs(1, 5, 4, 0.3, 2).unwrap();
        assert!(matches!(dirichlet_partition(&ds, 8, 1.0, 3), Err(Error::Partition(_))));
    }

    #[test]
    fn dirichlet_alpha_controls_skew() {
        // Monte-Carlo oracle: smaller alpha concentrates each client on
        // fewer classes, raising the mean max-class share
        let ds = synthetic_blobs(4, 50, 4, 0.3, 5).unwrap();
        let mean_max_share = |alpha: f64| -> f64 {
            let mut acc = 0.0;
            let mut cnt = 0usize;
            for seed in 0..200u64 {
                if let Ok(p) = dirichlet_partition(&ds, 5, alpha, seed) {
                    for client in &p.client_indices {
                        let d = label_distribution(&ds, client).unwrap();
                        acc += d.probs.iter().cloned().fold(0.0, f64::max);
                        cnt += 1;
                    }
                }
            }
            assert!(cnt >= 150 * 5, "too many failed draws");
            acc / cnt as f64
        };
        let skewed = mean_max_share(0.1);
        let uniform = mean_max_share(100.0);
        assert!(
            skewed > uniform,
            "max-class share should grow as alpha shrinks: {skewed} vs {uniform}"
        );
    }

    #[test]
    fn dirichlet_emd_to_global_decreases_with_alpha() {
        let ds = synthetic_blobs(4, 50, 4, 0.3, 5).unwrap();
        let all: Vec<usize> = (0..ds.len()).collect();
        let global = label_distribution(&ds, &all).unwrap();
        let mean_emd = |alpha: f64| -> f64 {
            let mut acc = 0.0;
            let mut cnt = 0usize;
            for seed in 0..200u64 {
                if let Ok(p) = dirichlet_partition(&ds, 5, alpha, seed) {
                    for client in &p.client_indices {
                        let d = label_distribution(&ds, client).unwrap();
                        acc += emd(&d.probs, &global.probs).unwrap();
                        cnt += 1;
                    }
                }
            }
            acc / cnt as f64
        };
        let e = [mean_emd(0.1), mean_emd(0.5), mean_emd(10.0)];
        assert!(e[0] >= e[1] && e[1] >= e[2], "EMD should fall as alpha grows: {e:?}");
    }

    #[test]
    fn pathological_class_cardinality() {
        let ds = synthetic_blobs(10, 30, 4, 0.3, 4).unwrap();
        for &(k, cpc) in &[(5usize, 2usize), (10, 3), (4, 5)] {
            let p = pathological_partition(&ds, k, cpc, 9).unwrap();
            check_conservation(&p, ds.len());
            for client in &p.client_indices {
                let mut classes: Vec<usize> = client.iter().map(|&i| ds.labels[i]).collect();
                classes.sort_unstable();
                classes.dedup();
                assert_eq!(classes.len(), cpc, "client must hold exactly {cpc} classes");
            }
        }
    }

    #[test]
    fn pathological_each_class_at_one_client() {
        let ds = synthetic_blobs(10, 20, 4, 0.3, 4).unwrap();
        let p = pathological_partition(&ds, 5, 2, 17).unwrap();
        // oracle scan: K*cpc == C means each class lands at exactly one client
        let mut holder = vec![Vec::new(); 10];
        for (k, client) in p.client_indices.iter().enumerate() {
            let mut classes: Vec<usize> = client.iter().map(|&i| ds.labels[i]).collect();
            classes.sort_unstable();
            classes.dedup();
            for c in classes {
                holder[c].push(k);
            }
        }
        for (c, holders) in holder.iter().enumerate() {
            assert_eq!(holders.len(), 1, "class {c} should appear at exactly one client");
        }
    }

    #[test]
    fn pathological_infeasible_geometry_errors() {
        let ds = synthetic_blobs(10, 5, 4, 0.3, 4).unwrap();
        assert!(matches!(pathological_partition(&ds, 2, 2, 1), Err(Error::Partition(_))));
        assert!(matches!(pathological_partition(&ds, 3, 11, 1), Err(Error::Partition(_))));
    }

    #[test]
    fn pathological_deterministic() {
        let ds = synthetic_blobs(6, 20, 4, 0.3, 4).unwrap();
        let a = pathological_partition(&ds, 4, 3, 5).unwrap();
        let b = pathological_partition(&ds, 4, 3, 5).unwrap();
        assert_eq!(a.client_indices, b.client_indices);
    }

    #[test]
    fn grouped_single_group_yields_near_identical_clients() {
        let ds = synthetic_blobs(4, 1000, 4, 0.3, 6).unwrap();
        let p = grouped_partition(&ds, &[4], 0.5, 21).unwrap();
        check_conservation(&p, ds.len());
        let dists: Vec<Vec<f64>> = p
            .client_indices
            .iter()
            .map(|c| label_distribution(&ds, c).unwrap().probs)
            .collect();
        for i in 0..dists.len() {
            for j in (i + 1)..dists.len() {
                let e = emd(&dists[i], &dists[j]).unwrap();
                assert!(e < 0.1, "same-group clients should match: emd {e}");
            }
        }
    }

    #[test]
    fn grouped_five_group_topology() {
        let sizes = [2usize, 3, 2, 2, 1];
        let ds = synthetic_blobs(10, 300, 4, 0.3, 6).unwrap();
        let mut same_acc = 0.0;
        let mut same_cnt = 0usize;
        let mut cross_acc = 0.0;
        let mut cross_cnt = 0usize;
        for seed in 0..20u64 {
            let p = grouped_partition(&ds, &sizes, 0.3, seed).unwrap();
            assert_eq!(p.client_indices.len(), 10);
            check_conservation(&p, ds.len());
            let mut group_of = Vec::new();
            for (g, &s) in sizes.iter().enumerate() {
                group_of.extend(std::iter::repeat(g).take(s));
            }
            let dists: Vec<Vec<f64>> = p
                .client_indices
                .iter()
                .map(|c| label_distribution(&ds, c).unwrap().probs)
                .collect();
            for i in 0..10 {
                for j in (i + 1)..10 {
                    let e = emd(&dists[i], &dists[j]).unwrap();
                    if group_of[i] == group_of[j] {
                        same_acc += e;
                        same_cnt += 1;
                    } else {
                        cross_acc += e;
                        cross_cnt += 1;
                    }
                }
            }
        }
        let same = same_acc / same_cnt as f64;
        let cross = cross_acc / cross_cnt as f64;
        assert!(
            same < cross,
            "same-group label distributions should be closer: {same} vs {cross}"
        );
    }

    #[test]
    fn grouped_deterministic() {
        let ds = synthetic_blobs(5, 60, 4, 0.3, 6).unwrap();
        let a = grouped_partition(&ds, &[2, 3], 0.5, 8).unwrap();
        let b = grouped_partition(&ds, &[2, 3], 0.5, 8).unwrap();
        assert_eq!(a.client_indices, b.client_indices);
    }

    #[test]
    fn grouped_rejects_zero_group() {
        let ds = synthetic_blobs(3, 10, 4, 0.3, 6).unwrap();
        assert!(matches!(grouped_partition(&ds, &[2, 0], 0.5, 8), Err(Error::Argument(_))));
    }
}
