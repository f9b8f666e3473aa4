//! Participant selection: uniform sampling plus the similarity-guided
//! exploitation/exploration split.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Selection;
use crate::error::{Error, Result};
use crate::similarity::CkaMatrix;

/// Who plays this round and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionOutcome {
    /// Every participant, ascending client id.
    pub selected: Vec<usize>,
    /// Seen clients picked by the complementarity rule (plus fills).
    pub exploited: Vec<usize>,
    /// Unseen clients picked uniformly.
    pub explored: Vec<usize>,
    /// Human-readable notes about fallbacks taken.
    pub notes: Vec<String>,
}

/// Per-client selection mass: each eligible client is weighted by the sum of
/// its similarity scores against the other eligible clients, normalized over
/// the pool. Returns a distribution aligned with `eligible`.
pub fn exploit_probabilities(matrix: &CkaMatrix, eligible: &[usize]) -> Result<Vec<f64>> {
    if eligible.is_empty() {
        return Err(Error::Argument("eligible pool is empty".into()));
    }
    let mut weights = Vec::with_capacity(eligible.len());
    for &i in eligible {
        let mut sum = 0.0;
        for &j in eligible {
            if i == j {
                continue;
            }
            let s = matrix
                .score(i, j)
                .ok_or_else(|| Error::State(format!("clients {i},{j} missing from matrix")))?;
            sum += s;
        }
        weights.push(sum);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // degenerate similarity mass: fall back to uniform
        let u = 1.0 / eligible.len() as f64;
        return Ok(vec![u; eligible.len()]);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Draw `count` clients from `eligible` without replacement, proportional to
/// the exploit probabilities, renormalizing after each draw.
pub fn select_for_exploit(
    matrix: &CkaMatrix,
    eligible: &[usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if count > eligible.len() {
        return Err(Error::Argument(format!(
            "cannot draw {count} from a pool of {}",
            eligible.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let probs = exploit_probabilities(matrix, eligible)?;
    let mut pool: Vec<(usize, f64)> = eligible.iter().copied().zip(probs).collect();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = pool.iter().map(|&(_, w)| w).sum();
        let at = if total > 0.0 && total.is_finite() {
            let mut u = rng.gen::<f64>() * total;
            let mut at = pool.len() - 1;
            for (idx, &(_, w)) in pool.iter().enumerate() {
                if u < w {
                    at = idx;
                    break;
                }
                u -= w;
            }
            at
        } else {
            rng.gen_range(0..pool.len())
        };
        picked.push(pool.remove(at).0);
    }
    Ok(picked)
}

/// Draw `count` clients uniformly without replacement.
fn uniform_draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = sample(rng, pool.len(), count).into_iter().collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// Pick this round's `n = max(floor(participation * clients), 1)` cohort.
///
/// Under guided selection, floor(epsilon * n) slots go to seen clients drawn
/// by complementarity and the rest go to unseen clients drawn uniformly.
/// Whichever pool runs short, the other fills the gap so the cohort size
/// stays n whenever the population allows it.
pub fn select_participants(
    mode: Selection,
    clients: usize,
    participation: f64,
    epsilon: f64,
    seen: &[usize],
    matrix: &CkaMatrix,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionOutcome> {
    if clients == 0 {
        return Err(Error::Argument("need at least one client".into()));
    }
    let n = cohort_size(clients, participation);
    let all: Vec<usize> = (0..clients).collect();
    let mut notes = Vec::new();

    if mode == Selection::Random {
        let mut selected = uniform_draw(&all, n, rng);
        selected.sort_unstable();
        return Ok(SelectionOutcome { selected, exploited: Vec::new(), explored: Vec::new(), notes });
    }

    let unseen: Vec<usize> = all.iter().copied().filter(|c| !seen.contains(c)).collect();
    let exploit_target = (epsilon * n as f64).floor() as usize;
    let exploit_count = exploit_target.min(seen.len());
    if exploit_target > 0 && seen.is_empty() {
        notes.push("no clients seen yet; full exploration".into());
    }
    let mut exploited = select_for_exploit(matrix, seen, exploit_count, rng)?;

    let explore_target = n - exploited.len();
    let explore_count = explore_target.min(unseen.len());
    if explore_target > unseen.len() {
        notes.push("unseen pool exhausted; filling from seen clients".into());
    }
    let explored = uniform_draw(&unseen, explore_count, rng);

    let shortfall = n - exploited.len() - explored.len();
    if shortfall > 0 {
        let leftover: Vec<usize> =
            seen.iter().copied().filter(|c| !exploited.contains(c)).collect();
        let fill = uniform_draw(&leftover, shortfall.min(leftover.len()), rng);
        exploited.extend(fill);
    }

    let mut selected: Vec<usize> =
        exploited.iter().chain(explored.iter()).copied().collect();
    selected.sort_unstable();
    selected.dedup();
    exploited.sort_unstable();
    Ok(SelectionOutcome { selected, exploited, explored, notes })
}

/// Cohort size shared by selection and complement sizing.
pub fn cohort_size(clients: usize, participation: f64) -> usize {
    ((participation * clients as f64).floor() as usize).max(1)
}

/// The complement pool donors for recipient `k`: the stored clients least
/// similar to `k`, capped at `group_size`. `k` itself never appears.
pub fn complement_group_for(
    matrix: &CkaMatrix,
    k: usize,
    group_size: usize,
) -> Result<Vec<usize>> {
    matrix
        .least_similar(k, group_size)
        .ok_or_else(|| Error::State(format!("client {k} missing from similarity matrix")))
}
