//! Reader for the big-endian IDX image/label format used by the MNIST-family
//! benchmarks.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Parse an IDX image stream and its matching label stream into a dataset.
/// Pixel bytes are scaled to [0,1].
pub fn parse_idx(mut images: impl Read, mut labels: impl Read) -> Result<Dataset> {
    let magic = read_u32_be(&mut images)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image magic {:#010x}, expected {:#010x}", magic, IMAGE_MAGIC)));
    }
    let n = read_u32_be(&mut images)? as usize;
    let h = read_u32_be(&mut images)? as usize;
    let w = read_u32_be(&mut images)? as usize;
    let dim = h * w;
    let mut pixels = vec![0u8; n * dim];
    images.read_exact(&mut pixels)?;

    let magic = read_u32_be(&mut labels)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label magic {:#010x}, expected {:#010x}", magic, LABEL_MAGIC)));
    }
    let n_labels = read_u32_be(&mut labels)? as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!("{} images but {} labels", n, n_labels)));
    }
    let mut label_bytes = vec![0u8; n];
    labels.read_exact(&mut label_bytes)?;

    let data: Vec<f64> = pixels.into_iter().map(|p| p as f64 / 255.0).collect();
    let label_vec: Vec<usize> = label_bytes.into_iter().map(|l| l as usize).collect();
    let num_classes = label_vec.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor2::from_vec(n, dim, data)?, label_vec, num_classes, (1, h, w))
}

/// Load a dataset from a pair of IDX files on disk.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = BufReader::new(File::open(images_path)?);
    let labels = BufReader::new(File::open(labels_path)?);
    parse_idx(images, labels)
}
