//! Differentiable siamese augmentation. One transform is sampled per call and
//! applied with identical parameters to every image in the batch, so real and
//! synthetic batches sharing a seed see the same transform. Every op is an
//! affine pixel map, which keeps the backward pass an exact transpose plus a
//! clamp mask.

use rand::Rng;

use crate::error::{Error, Result};
use crate::streams::{substream, tag};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Flip,
    Crop,
    Scale,
    Brightness,
    Cutout,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] =
        [AugmentOp::Flip, AugmentOp::Crop, AugmentOp::Scale, AugmentOp::Brightness, AugmentOp::Cutout];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Flip => "flip",
            AugmentOp::Crop => "crop",
            AugmentOp::Scale => "scale",
            AugmentOp::Brightness => "brightness",
            AugmentOp::Cutout => "cutout",
        }
    }

    pub fn from_name(name: &str) -> Option<AugmentOp> {
        AugmentOp::ALL.iter().copied().find(|op| op.name() == name)
    }
}

/// Which ops may be sampled and with what parameter ranges.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub ops: Vec<AugmentOp>,
    pub crop_pad: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub brightness_lo: f64,
    pub brightness_hi: f64,
    pub cutout_frac: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: true,
            ops: AugmentOp::ALL.to_vec(),
            crop_pad: 2,
            scale_lo: 0.9,
            scale_hi: 1.1,
            brightness_lo: -0.2,
            brightness_hi: 0.2,
            cutout_frac: 0.25,
        }
    }
}

impl AugmentPolicy {
    /// A policy that never transforms anything.
    pub fn identity() -> Self {
        AugmentPolicy { enabled: false, ops: Vec::new(), ..AugmentPolicy::default() }
    }
}

/// One concrete transform with all parameters fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    Flip,
    Crop { dy: isize, dx: isize },
    Scale { factor: f64 },
    Brightness { delta: f64 },
    Cutout { top: usize, left: usize, side: usize },
}

/// Draw one transform from the policy. Parameters depend only on
/// (policy, image_shape, seed), never on batch contents.
pub fn sample_transform(
    policy: &AugmentPolicy,
    image_shape: (usize, usize, usize),
    seed: u64,
) -> Result<Transform> {
    if !policy.enabled {
        return Ok(Transform::Identity);
    }
    if policy.ops.is_empty() {
        return Err(Error::Policy("augmentation enabled with no ops to sample".into()));
    }
    let (_, h, w) = image_shape;
    let mut rng = substream(seed, &[tag::AUGMENT]);
    let op = policy.ops[rng.gen_range(0..policy.ops.len())];
    Ok(match op {
        AugmentOp::Flip => Transform::Flip,
        AugmentOp::Crop => {
            let pad = policy.crop_pad as isize;
            Transform::Crop { dy: rng.gen_range(-pad..=pad), dx: rng.gen_range(-pad..=pad) }
        }
        AugmentOp::Scale => Transform::Scale { factor: rng.gen_range(policy.scale_lo..=policy.scale_hi) },
        AugmentOp::Brightness => {
            Transform::Brightness { delta: rng.gen_range(policy.brightness_lo..=policy.brightness_hi) }
        }
        AugmentOp::Cutout => {
            let side = ((policy.cutout_frac * (h * w) as f64).sqrt().round() as usize)
                .clamp(1, h.min(w));
            Transform::Cutout {
                top: rng.gen_range(0..=h - side),
                left: rng.gen_range(0..=w - side),
                side,
            }
        }
    })
}

/// An augmented batch plus the mask of entries that survived the [0,1] clamp
/// unmodified (gradient passes only where the mask is true).
#[derive(Debug, Clone)]
pub struct Augmented {
    pub images: Tensor2,
    pub pass_mask: Vec<bool>,
}

fn check_shape(batch: &Tensor2, image_shape: (usize, usize, usize)) -> Result<()> {
    let (c, h, w) = image_shape;
    if batch.cols() != c * h * w {
        return Err(Error::Shape(format!(
            "batch has {} columns, image shape {:?} needs {}",
            batch.cols(),
            image_shape,
            c * h * w
        )));
    }
    Ok(())
}

/// Apply a fixed transform to every image in the batch, clamping to [0,1].
pub fn apply_transform(
    batch: &Tensor2,
    image_shape: (usize, usize, usize),
    t: &Transform,
) -> Result<Augmented> {
    check_shape(batch, image_shape)?;
    let (c, h, w) = image_shape;
    let plane = h * w;
    let n = batch.rows();
    let mut out = match t {
        Transform::Identity => batch.clone(),
        Transform::Flip => {
            let mut o = Tensor2::zeros(n, batch.cols());
            for r in 0..n {
                let src = batch.row(r);
                let dst = o.row_mut(r);
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            dst[ch * plane + y * w + x] = src[ch * plane + y * w + (w - 1 - x)];
                        }
                    }
                }
            }
            o
        }
        Transform::Crop { dy, dx } => {
            let mut o = Tensor2::zeros(n, batch.cols());
            for r in 0..n {
                let src = batch.row(r);
                let dst = o.row_mut(r);
                for ch in 0..c {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dst[ch * plane + y * w + x] =
                                src[ch * plane + sy as usize * w + sx as usize];
                        }
                    }
                }
            }
            o
        }
        Transform::Scale { factor } => {
            let mut o = batch.clone();
            for v in o.data_mut() {
                *v *= factor;
            }
            o
        }
        Transform::Brightness { delta } => {
            let mut o = batch.clone();
            for v in o.data_mut() {
                *v += delta;
            }
            o
        }
        Transform::Cutout { top, left, side } => {
            let mut o = batch.clone();
            for r in 0..n {
                let dst = o.row_mut(r);
                for ch in 0..c {
                    for y in *top..top + side {
                        for x in *left..left + side {
                            dst[ch * plane + y * w + x] = 0.0;
                        }
                    }
                }
            }
            o
        }
    };
    let mut pass_mask = vec![true; out.data().len()];
    for (v, m) in out.data_mut().iter_mut().zip(&mut pass_mask) {
        if *v < 0.0 {
            *v = 0.0;
            *m = false;
        } else if *v > 1.0 {
            *v = 1.0;
            *m = false;
        }
    }
    Ok(Augmented { images: out, pass_mask })
}

/// Exact transpose of `apply_transform` for gradient flow: the incoming
/// gradient is masked by the clamp, then routed back through the affine map.
pub fn backprop_transform(
    d_out: &Tensor2,
    image_shape: (usize, usize, usize),
    t: &Transform,
    pass_mask: &[bool],
) -> Result<Tensor2> {
    check_shape(d_out, image_shape)?;
    if pass_mask.len() != d_out.data().len() {
        return Err(Error::Shape("clamp mask length mismatch".into()));
    }
    let mut d = d_out.clone();
    for (v, &m) in d.data_mut().iter_mut().zip(pass_mask) {
        if !m {
            *v = 0.0;
        }
    }
    let (c, h, w) = image_shape;
    let plane = h * w;
    let n = d.rows();
    Ok(match t {
        Transform::Identity => d,
        Transform::Flip => {
            let mut o = Tensor2::zeros(n, d.cols());
            for r in 0..n {
                let src = d.row(r);
                let dst = o.row_mut(r);
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            dst[ch * plane + y * w + (w - 1 - x)] += src[ch * plane + y * w + x];
                        }
                    }
                }
            }
            o
        }
        Transform::Crop { dy, dx } => {
            let mut o = Tensor2::zeros(n, d.cols());
            for r in 0..n {
                let src = d.row(r);
                let dst = o.row_mut(r);
                for ch in 0..c {
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + dx;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dst[ch * plane + sy as usize * w + sx as usize] +=
                                src[ch * plane + y * w + x];
                        }
                    }
                }
            }
            o
        }
        Transform::Scale { factor } => {
            for v in d.data_mut() {
                *v *= factor;
            }
            d
        }
        Transform::Brightness { .. } => d,
        Transform::Cutout { top, left, side } => {
            for r in 0..n {
                let dst = d.row_mut(r);
                for ch in 0..c {
                    for y in *top..top + side {
                        for x in *left..left + side {
                            dst[ch * plane + y * w + x] = 0.0;
                        }
                    }
                }
            }
            d
        }
    })
}

/// Sample one transform and apply it to the batch.
pub fn dsa_augment(
    batch: &Tensor2,
    image_shape: (usize, usize, usize),
    policy: &AugmentPolicy,
    seed: u64,
) -> Result<Tensor2> {
    let t = sample_transform(policy, image_shape, seed)?;
    Ok(apply_transform(batch, image_shape, &t)?.images)
}
