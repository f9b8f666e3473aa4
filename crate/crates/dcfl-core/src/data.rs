//! Dataset container, label-distribution views, and a synthetic Gaussian-blob
//! generator for desk-scale runs.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::streams::{self, substream};
use crate::tensor::Tensor2;

/// An in-memory image classification dataset. Pixels live in [0,1], one
/// flattened image per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor2,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image_shape: (usize, usize, usize),
}

impl Dataset {
    pub fn new(
        images: Tensor2,
        labels: Vec<usize>,
        num_classes: usize,
        image_shape: (usize, usize, usize),
    ) -> Result<Self> {
        let (c, h, w) = image_shape;
        if c * h * w != images.cols() {
            return Err(Error::Shape(format!(
                "image shape {:?} does not flatten to {} columns",
                image_shape,
                images.cols()
            )));
        }
        if images.rows() == 0 {
            return Err(Error::Argument("dataset needs at least one sample".into()));
        }
        if labels.len() != images.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} images",
                labels.len(),
                images.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Argument(format!(
                "label {} out of range for {} classes",
                bad, num_classes
            )));
        }
        Ok(Dataset { images, labels, num_classes, image_shape })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Group a subset of sample indices by their class.
    pub fn indices_by_class(&self, subset: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for &i in subset {
            if i >= self.len() {
                return Err(Error::Argument(format!("index {} out of range", i)));
            }
            by_class[self.labels[i]].push(i);
        }
        Ok(by_class)
    }
}

/// Disjoint per-client index sets into one dataset.
#[derive(Debug, Clone)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Check disjointness, index range, and that no client is empty.
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let mut seen = vec![false; dataset_len];
        for (k, indices) in self.client_indices.iter().enumerate() {
            if indices.is_empty() {
                return Err(Error::Partition(format!("client {} received no samples", k)));
            }
            for &i in indices {
                if i >= dataset_len {
                    return Err(Error::Partition(format!("index {} out of range", i)));
                }
                if seen[i] {
                    return Err(Error::Partition(format!("index {} assigned twice", i)));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// A normalized class histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

/// Normalized label histogram over the given sample indices.
pub fn label_distribution(dataset: &Dataset, indices: &[usize]) -> Result<LabelDistribution> {
    if indices.is_empty() {
        return Err(Error::Argument("label distribution needs at least one index".into()));
    }
    let mut counts = vec![0usize; dataset.num_classes];
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::Argument(format!("index {} out of range", i)));
        }
        counts[dataset.labels[i]] += 1;
    }
    let total = indices.len() as f64;
    Ok(LabelDistribution { probs: counts.into_iter().map(|c| c as f64 / total).collect() })
}

/// Image shape for a flat feature dimension: square single-channel when the
/// dimension is a perfect square, otherwise a 1x1xd strip.
pub fn shape_for_dim(dim: usize) -> (usize, usize, usize) {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        (1, side, side)
    } else {
        (1, 1, dim)
    }
}

/// Deterministic per-class blob centers, uniform in [0,1]^dim.
pub fn blob_centers(num_classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, &[streams::tag::DATASET, 0]);
    (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}

/// Isotropic Gaussian blobs: `per_class` samples around each class center,
/// clamped to [0,1]. Samples are ordered class-major.
pub fn synthetic_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Argument("blob counts must be at least 1".into()));
    }
    if spread <= 0.0 {
        return Err(Error::Argument("blob spread must be positive".into()));
    }
    let centers = blob_centers(num_classes, dim, seed);
    let mut rng = substream(seed, &[streams::tag::DATASET, 1]);
    let n = num_classes * per_class;
    let mut images = Tensor2::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let dest = images.row_mut(row);
            for (v, &c) in dest.iter_mut().zip(center) {
                let z: f64 = rng.sample(StandardNormal);
                *v = (c + spread * z).clamp(0.0, 1.0);
            }
            labels.push(class);
            row += 1;
        }
    }
    Dataset::new(images, labels, num_classes, shape_for_dim(dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{self, ModelParams};

    #[test]
    fn dataset_validates_shape_product() {
        let r = Dataset::new(Tensor2::zeros(2, 5), vec![0, 0], 2, (1, 2, 2));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn dataset_validates_label_range() {
        let r = Dataset::new(Tensor2::zeros(2, 4), vec![0, 2], 2, (1, 2, 2));
        assert!(matches!(r, Err(Error::Argument(_))));
    }

    #[test]
    fn dataset_validates_label_count() {
        let r = Dataset::new(Tensor2::zeros(2, 4), vec![0], 2, (1, 2, 2));
        assert!(matches!(r, Err(Error::Consistency(_))));
    }

    #[test]
    fn indices_by_class_groups() {
        let ds = Dataset::new(Tensor2::zeros(4, 1), vec![1, 0, 1, 2], 3, (1, 1, 1)).unwrap();
        let groups = ds.indices_by_class(&[0, 1, 2, 3]).unwrap();
        assert_eq!(groups, vec![vec![1], vec![0, 2], vec![3]]);
    }

    #[test]
    fn label_distribution_single_class() {
        let ds = Dataset::new(Tensor2::zeros(3, 1), vec![2, 2, 2], 4, (1, 1, 1)).unwrap();
        let d = label_distribution(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn label_distribution_even_split() {
        let ds = Dataset::new(Tensor2::zeros(2, 1), vec![0, 1], 4, (1, 1, 1)).unwrap();
        let d = label_distribution(&ds, &[0, 1]).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn label_distribution_matches_hand_count() {
        let labels = vec![0, 3, 1, 1, 2, 0, 3, 3, 3, 1, 0, 2, 2, 1, 0, 0, 3, 1, 2, 2];
        let n = labels.len();
        let ds = Dataset::new(Tensor2::zeros(n, 1), labels.clone(), 4, (1, 1, 1)).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let d = label_distribution(&ds, &idx).unwrap();
        let mut counts = [0usize; 4];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..4 {
            assert!((d.probs[c] - counts[c] as f64 / n as f64).abs() < 1e-15);
        }
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn label_distribution_empty_rejected() {
        let ds = Dataset::new(Tensor2::zeros(1, 1), vec![0], 1, (1, 1, 1)).unwrap();
        assert!(matches!(label_distribution(&ds, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn partition_validate_catches_overlap() {
        let p = Partition { client_indices: vec![vec![0, 1], vec![1, 2]] };
        assert!(matches!(p.validate(3), Err(Error::Partition(_))));
    }

    #[test]
    fn partition_validate_catches_empty_client() {
        let p = Partition { client_indices: vec![vec![0], vec![]] };
        assert!(matches!(p.validate(2), Err(Error::Partition(_))));
    }

    #[test]
    fn blobs_deterministic() {
        let a = synthetic_blobs(3, 5, 8, 0.1, 42).unwrap();
        let b = synthetic_blobs(3, 5, 8, 0.1, 42).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        let c = synthetic_blobs(3, 5, 8, 0.1, 43).unwrap();
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn blobs_zero_variance_limit_hits_centers() {
        let centers = blob_centers(3, 6, 7);
        let ds = synthetic_blobs(3, 1, 6, 1e-12, 7).unwrap();
        for class in 0..3 {
            for (got, want) in ds.images.row(class).iter().zip(&centers[class]) {
                assert!((got - want).abs() < 1e-9);
            }
            assert_eq!(ds.labels[class], class);
        }
    }

    #[test]
    fn blobs_values_in_unit_range() {
        let ds = synthetic_blobs(4, 20, 10, 0.5, 3).unwrap();
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn blobs_shape_square_and_strip() {
        assert_eq!(synthetic_blobs(2, 1, 16, 0.1, 1).unwrap().image_shape, (1, 4, 4));
        assert_eq!(synthetic_blobs(2, 1, 10, 0.1, 1).unwrap().image_shape, (1, 1, 10));
    }

    #[test]
    fn blobs_linearly_separable_sanity_run() {
        let ds = synthetic_blobs(4, 50, 16, 0.05, 9).unwrap();
        let mut rng = substream(9, &[77]);
        let mut params = ModelParams::init(&[16, 4], &mut rng).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let batch = ds.images.clone();
        for _ in 0..100 {
            let pass = nn::forward(&params, &batch).unwrap();
            let (_, dz) = nn::cross_entropy(pass.logits(), &ds.labels).unwrap();
            let grads = nn::backward(&params, &pass, &dz, false).unwrap();
            nn::sgd_step(&mut params, &grads, 0.5).unwrap();
        }
        let acc = nn::evaluate(&params, &ds, &idx).unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
    }
}
