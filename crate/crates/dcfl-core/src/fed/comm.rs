//! Communication accounting: observed float traffic plus the closed-form
//! estimates it is compared against.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};

/// Running float counts for one direction pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub up_floats: u64,
    pub down_floats: u64,
}

impl CommLedger {
    pub fn add_up(&mut self, floats: usize) {
        self.up_floats += floats as u64;
    }

    pub fn add_down(&mut self, floats: usize) {
        self.down_floats += floats as u64;
    }

    pub fn absorb(&mut self, other: CommLedger) {
        self.up_floats += other.up_floats;
        self.down_floats += other.down_floats;
    }
}

/// Observed traffic next to the closed-form estimates for the same run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommReport {
    pub observed_up_floats: u64,
    pub observed_down_floats: u64,
    pub clients: usize,
    pub participation: f64,
    pub avg_classes_per_client: f64,
    pub ipc: usize,
    pub image_floats: usize,
    pub model_floats: usize,
    /// K · cpc · ipc · d: one condensed upload per client over a full run.
    pub formula_upload: f64,
    /// K · (K·C_com − 1) · cpc · ipc · d: complement deliveries over a run.
    pub formula_download: f64,
    /// |params| · (K·C_com) · 2: plain FL model traffic per round.
    pub baseline_model_floats_per_round: f64,
}

/// Mean number of distinct classes per client shard.
pub fn avg_classes_per_client(dataset: &Dataset, partition: &Partition) -> f64 {
    if partition.client_indices.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for shard in &partition.client_indices {
        let mut present = vec![false; dataset.num_classes];
        for &i in shard {
            present[dataset.labels[i]] = true;
        }
        total += present.iter().filter(|&&p| p).count();
    }
    total as f64 / partition.client_indices.len() as f64
}

/// Build the report for a finished run.
#[allow(clippy::too_many_arguments)]
pub fn comm_volume(
    clients: usize,
    participation: f64,
    avg_classes_per_client: f64,
    ipc: usize,
    image_floats: usize,
    model_floats: usize,
    condensation: bool,
    observed: CommLedger,
) -> CommReport {
    let k = clients as f64;
    let cpc = avg_classes_per_client;
    let per_set = cpc * ipc as f64 * image_floats as f64;
    let (formula_upload, formula_download) = if condensation {
        (k * per_set, k * (k * participation - 1.0) * per_set)
    } else {
        (0.0, 0.0)
    };
    CommReport {
        observed_up_floats: observed.up_floats,
        observed_down_floats: observed.down_floats,
        clients,
        participation,
        avg_classes_per_client: cpc,
        ipc,
        image_floats,
        model_floats,
        formula_upload,
        formula_download,
        baseline_model_floats_per_round: model_floats as f64 * k * participation * 2.0,
    }
}

/// The canonical worked example: closed-form values evaluated at the
/// reference inputs, next to the totals reported alongside those inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceEstimates {
    pub clients: usize,
    pub participation: f64,
    pub avg_classes_per_client: f64,
    pub ipc: usize,
    pub image_floats: usize,
    pub formula_upload: f64,
    pub reported_upload: f64,
    pub formula_download: f64,
    pub reported_download: f64,
    pub note: String,
}

pub fn reference_estimates() -> ReferenceEstimates {
    let clients = 20;
    let participation = 0.25;
    let cpc = 4.6;
    let ipc = 10;
    let image_floats = 3 * 32 * 32;
    let per_set = cpc * ipc as f64 * image_floats as f64;
    let formula_upload = clients as f64 * per_set;
    let formula_download =
        clients as f64 * (clients as f64 * participation - 1.0) * per_set;
    ReferenceEstimates {
        clients,
        participation,
        avg_classes_per_client: cpc,
        ipc,
        image_floats,
        formula_upload,
        reported_upload: 5.2e6,
        formula_download,
        reported_download: 2.08e7,
        note: "the reported totals do not match the closed forms evaluated at the same \
               inputs; both are shown"
            .into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_blobs;

    #[test]
    fn reference_upload_formula_value() {
        let r = reference_estimates();
        assert_eq!(r.formula_upload, 2_826_240.0);
        assert_eq!(r.formula_download, 11_304_960.0);
        assert!(r.reported_upload > r.formula_upload);
        assert!(!r.note.is_empty());
    }

    #[test]
    fn report_carries_formulas_and_observations() {
        let mut ledger = CommLedger::default();
        ledger.add_up(100);
        ledger.add_down(250);
        let report = comm_volume(20, 0.25, 4.6, 10, 3072, 500, true, ledger);
        assert_eq!(report.observed_up_floats, 100);
        assert_eq!(report.observed_down_floats, 250);
        assert_eq!(report.formula_upload, 2_826_240.0);
        assert_eq!(report.formula_download, 11_304_960.0);
        assert_eq!(report.baseline_model_floats_per_round, 500.0 * 5.0 * 2.0);
    }

    #[test]
    fn condensation_off_zeroes_condensed_terms() {
        let report = comm_volume(20, 0.25, 4.6, 10, 3072, 500, false, CommLedger::default());
        assert_eq!(report.formula_upload, 0.0);
        assert_eq!(report.formula_download, 0.0);
        assert!(report.baseline_model_floats_per_round > 0.0);
    }

    #[test]
    fn cpc_counts_distinct_classes() {
        let ds = synthetic_blobs(3, 4, 8, 0.1, 2).unwrap();
        // rows 0..4 class 0, 4..8 class 1, 8..12 class 2
        let partition = Partition {
            client_indices: vec![vec![0, 1, 4], vec![8, 9, 10, 11]],
        };
        let cpc = avg_classes_per_client(&ds, &partition);
        assert!((cpc - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ledger_accumulates_and_absorbs() {
        let mut a = CommLedger::default();
        a.add_up(3);
        a.add_down(4);
        let mut b = CommLedger::default();
        b.add_up(10);
        b.absorb(a);
        assert_eq!(b.up_floats, 13);
        assert_eq!(b.down_floats, 4);
    }
}
