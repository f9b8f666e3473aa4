//! Aggregation weights and the three model-combination rules.

use crate::config::Aggregation;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// One participant's contribution to a round.
#[derive(Debug, Clone)]
pub struct ClientContribution {
    pub id: usize,
    pub params: ModelParams,
    /// Real samples the client owns.
    pub shard_size: usize,
    /// Auxiliary condensed examples used this round.
    pub aux_count: usize,
    /// Local SGD steps actually taken.
    pub steps: usize,
}

/// Aggregation weights proportional to shard size plus auxiliary count.
pub fn optimized_weights(shard_sizes: &[usize], aux_counts: &[usize]) -> Result<Vec<f64>> {
    if shard_sizes.len() != aux_counts.len() {
        return Err(Error::Argument(format!(
            "got {} shard sizes but {} aux counts",
            shard_sizes.len(),
            aux_counts.len()
        )));
    }
    if shard_sizes.is_empty() {
        return Err(Error::Argument("no participants to weight".into()));
    }
    let masses: Vec<f64> =
        shard_sizes.iter().zip(aux_counts).map(|(&s, &a)| (s + a) as f64).collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("every participant has zero mass".into()));
    }
    Ok(masses.into_iter().map(|m| m / total).collect())
}

/// Combine participant models into the next global model.
///
/// `weights` must align with `contributions` and sum to 1. FedAvg and FedProx
/// both average parameters directly (FedProx differs only in the local
/// objective); FedNova renormalizes each update by its local step count.
pub fn aggregate(
    strategy: Aggregation,
    global: &ModelParams,
    contributions: &[ClientContribution],
    weights: &[f64],
) -> Result<ModelParams> {
    if contributions.is_empty() {
        return Err(Error::Argument("nothing to aggregate".into()));
    }
    if contributions.len() != weights.len() {
        return Err(Error::Argument(format!(
            "{} contributions but {} weights",
            contributions.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("weights sum to {sum}, expected 1")));
    }
    match strategy {
        Aggregation::FedAvg | Aggregation::FedProx => {
            let mut next = global.zeros_like();
            for (c, &w) in contributions.iter().zip(weights) {
                next.axpy(w, &c.params)?;
            }
            Ok(next)
        }
        Aggregation::FedNova => {
            let mut grad = global.zeros_like();
            let mut tau_eff = 0.0;
            for (c, &w) in contributions.iter().zip(weights) {
                if c.steps == 0 {
                    return Err(Error::Protocol(format!(
                        "client {} reported zero local steps",
                        c.id
                    )));
                }
                // d_k = (w - w_k) / tau_k
                let mut d = global.clone();
                d.axpy(-1.0, &c.params)?;
                grad.axpy(w / c.steps as f64, &d)?;
                tau_eff += w * c.steps as f64;
            }
            let mut next = global.clone();
            next.axpy(-tau_eff, &grad)?;
            Ok(next)
        }
    }
}
