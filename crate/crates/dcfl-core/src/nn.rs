//! Dense MLP kernel: forward pass, hand-derived backward pass (including
//! gradients with respect to the inputs, which condensation needs), softmax
//! cross-entropy, and SGD updates.
//!
//! Hidden layers use ReLU; the final layer is linear. Everything is f64 and
//! fully deterministic.

use std::io::{Read, Write};

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{axpy, Tensor2};

const MODEL_MAGIC: &[u8; 6] = b"DCFLW\0";

/// One dense layer: weight is [out x in], bias has length out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn float_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// The full parameter set of an MLP. The final layer is the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("model needs at least one layer".into()));
        }
        for layer in &layers {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "bias length {} does not match out dim {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer dims do not chain: {} out vs {} in",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(ModelParams { layers })
    }

    /// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.
    /// `dims` lists the layer widths input-first, e.g. `[784, 128, 10]`.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Argument("need at least input and output dims".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            layers.push(Layer {
                weight: Tensor2::from_vec(fan_out, fan_in, data)?,
                bias: vec![0.0; fan_out],
            });
        }
        ModelParams::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// The classifier is the final layer; this is its single home.
    pub fn classifier(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    pub fn classifier_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().unwrap()
    }

    pub fn float_count(&self) -> usize {
        self.layers.iter().map(Layer::float_count).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.float_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor2::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    fn check_same_shape(&self, other: &ModelParams) -> Result<()> {
        let ok = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.out_dim() == b.out_dim() && a.in_dim() == b.in_dim());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("model shapes differ".into()))
        }
    }

    /// `self += coef * other`, parameter-wise.
    pub fn axpy(&mut self, coef: f64, other: &ModelParams) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(coef, b.weight.data(), a.weight.data_mut());
            axpy(coef, &b.bias, &mut a.bias);
        }
        Ok(())
    }

    pub fn scale(&mut self, coef: f64) {
        for l in &mut self.layers {
            for v in l.weight.data_mut() {
                *v *= coef;
            }
            for v in &mut l.bias {
                *v *= coef;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &ModelParams) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Versioned binary model format: magic, layer count, then per layer the
    /// dims followed by little-endian f64 weights and biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.float_count() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            for v in layer.weight.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &layer.bias {
                out.extend_from_slice(&v.to_le_bytes());
            }
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
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("bad model magic".into()));
        }
        let n_layers = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut wdata = vec![0.0; rows * cols];
            read_f64s(&mut r, &mut wdata)?;
            let mut bias = vec![0.0; rows];
            read_f64s(&mut r, &mut bias)?;
            let weight = Tensor2::from_vec(rows, cols, wdata)?;
            if !weight.is_finite() || bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite parameter in model file".into()));
            }
            layers.push(Layer { weight, bias });
        }
        ModelParams::new(layers)
    }
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    let mut b = [0u8; 8];
    for v in out {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(())
}

/// Activations captured by a forward pass. `acts[0]` is the input batch,
/// `acts[i]` the post-activation output of layer i-1; the last entry holds
/// the logits.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    acts: Vec<Tensor2>,
}

impl ForwardPass {
    pub fn logits(&self) -> &Tensor2 {
        self.acts.last().unwrap()
    }

    pub fn activations(&self) -> &[Tensor2] {
        &self.acts
    }
}

pub fn forward(params: &ModelParams, batch: &Tensor2) -> Result<ForwardPass> {
    if batch.cols() != params.in_dim() {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            params.in_dim()
        )));
    }
    let n_layers = params.layers().len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(batch.clone());
    for (i, layer) in params.layers().iter().enumerate() {
        let mut z = acts[i].matmul_bt(&layer.weight)?;
        for row in 0..z.rows() {
            for (v, b) in z.row_mut(row).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        if i + 1 < n_layers {
            for v in z.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        acts.push(z);
    }
    Ok(ForwardPass { acts })
}

/// Mean softmax cross-entropy and its gradient (softmax - onehot)/B.
pub fn cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<(f64, Tensor2)> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::Argument(format!("{} labels for {} logit rows", labels.len(), b)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Argument(format!("label {} out of range for {} classes", bad, c)));
    }
    let mut d = Tensor2::zeros(b, c);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for row in 0..b {
        let lr = logits.row(row);
        let max = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in lr {
            denom += (v - max).exp();
        }
        loss += denom.ln() - (lr[labels[row]] - max);
        let dr = d.row_mut(row);
        for (dv, &v) in dr.iter_mut().zip(lr) {
            *dv = (v - max).exp() / denom * inv_b;
        }
        dr[labels[row]] -= inv_b;
    }
    Ok((loss * inv_b, d))
}

/// Per-example softmax cross-entropy losses (no gradient). Used for scoring.
pub fn per_example_loss(logits: &Tensor2, labels: &[usize]) -> Result<Vec<f64>> {
    let (b, c) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::Argument(format!("{} labels for {} logit rows", labels.len(), b)));
    }
    let mut out = Vec::with_capacity(b);
    for row in 0..b {
        let l = labels[row];
        if l >= c {
            return Err(Error::Argument(format!("label {} out of range for {} classes", l, c)));
        }
        let lr = logits.row(row);
        let max = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = lr.iter().map(|&v| (v - max).exp()).sum();
        out.push(denom.ln() - (lr[l] - max));
    }
    Ok(out)
}

/// Parameter gradients matching a `ModelParams`, plus the optional gradient
/// with respect to the input batch.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub layers: Vec<(Tensor2, Vec<f64>)>,
    pub d_input: Option<Tensor2>,
}

pub fn backward(
    params: &ModelParams,
    pass: &ForwardPass,
    d_logits: &Tensor2,
    want_input_grad: bool,
) -> Result<GradBundle> {
    let layers = params.layers();
    let acts = pass.activations();
    if acts.len() != layers.len() + 1 {
        return Err(Error::State("activation cache does not match model depth".into()));
    }
    let batch_rows = acts[0].rows();
    for (i, layer) in layers.iter().enumerate() {
        if acts[i].cols() != layer.in_dim() || acts[i + 1].cols() != layer.out_dim()
            || acts[i].rows() != batch_rows || acts[i + 1].rows() != batch_rows
        {
            return Err(Error::State(format!("activation cache mismatches layer {}", i)));
        }
    }
    if d_logits.rows() != batch_rows || d_logits.cols() != layers.last().unwrap().out_dim() {
        return Err(Error::State("logit gradient shape mismatches cached logits".into()));
    }

    let mut grads: Vec<(Tensor2, Vec<f64>)> = Vec::with_capacity(layers.len());
    let mut dz = d_logits.clone();
    for i in (0..layers.len()).rev() {
        // dW = dzᵀ · input activations, db = column sums of dz
        let dw = dz.matmul_at(&acts[i])?;
        let mut db = vec![0.0; layers[i].out_dim()];
        for row in 0..dz.rows() {
            for (b, v) in db.iter_mut().zip(dz.row(row)) {
                *b += v;
            }
        }
        grads.push((dw, db));
        if i == 0 {
            if want_input_grad {
                let d_input = dz.matmul(&layers[0].weight)?;
                grads.reverse();
                return Ok(GradBundle { layers: grads, d_input: Some(d_input) });
            }
            break;
        }
        // propagate through the ReLU of the previous hidden layer
        let mut da = dz.matmul(&layers[i].weight)?;
        for (dv, &a) in da.data_mut().iter_mut().zip(acts[i].data()) {
            if a <= 0.0 {
                *dv = 0.0;
            }
        }
        dz = da;
    }
    grads.reverse();
    Ok(GradBundle { layers: grads, d_input: None })
}

fn check_grad_shapes(params: &ModelParams, grads: &GradBundle) -> Result<()> {
    if grads.layers.len() != params.layers().len() {
        return Err(Error::Shape("gradient layer count mismatch".into()));
    }
    for (layer, (dw, db)) in params.layers().iter().zip(&grads.layers) {
        if dw.rows() != layer.out_dim() || dw.cols() != layer.in_dim() || db.len() != layer.out_dim() {
            return Err(Error::Shape("gradient shape mismatch".into()));
        }
    }
    Ok(())
}

/// Plain SGD descent: p ← p − lr·g.
pub fn sgd_step(params: &mut ModelParams, grads: &GradBundle, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Argument("learning rate must be positive".into()));
    }
    check_grad_shapes(params, grads)?;
    for (layer, (dw, db)) in params.layers.iter_mut().zip(&grads.layers) {
        axpy(-lr, dw.data(), layer.weight.data_mut());
        axpy(-lr, db, &mut layer.bias);
    }
    Ok(())
}

/// SGD with a proximal term: p ← p − lr·(g + mu·(p − anchor)).
pub fn sgd_step_prox(
    params: &mut ModelParams,
    grads: &GradBundle,
    lr: f64,
    mu: f64,
    anchor: &ModelParams,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Argument("learning rate must be positive".into()));
    }
    if mu < 0.0 {
        return Err(Error::Argument("proximal coefficient must be nonnegative".into()));
    }
    check_grad_shapes(params, grads)?;
    params.check_same_shape(anchor)?;
    for ((layer, (dw, db)), ref_layer) in
        params.layers.iter_mut().zip(&grads.layers).zip(&anchor.layers)
    {
        let w = layer.weight.data_mut();
        for ((p, &g), &a) in w.iter_mut().zip(dw.data()).zip(ref_layer.weight.data()) {
            *p -= lr * (g + mu * (*p - a));
        }
        for ((p, &g), &a) in layer.bias.iter_mut().zip(db).zip(&ref_layer.bias) {
            *p -= lr * (g + mu * (*p - a));
        }
    }
    Ok(())
}

/// Fraction of rows whose argmax logit equals the label. Ties resolve to the
/// lowest class index.
pub fn evaluate(params: &ModelParams, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Argument("evaluate needs at least one index".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let batch = dataset.images.gather_rows(chunk)?;
        let pass = forward(params, &batch)?;
        let logits = pass.logits();
        for (row, &idx) in chunk.iter().enumerate() {
            let lr = logits.row(row);
            let mut best = 0usize;
            for (c, &v) in lr.iter().enumerate() {
                if v > lr[best] {
                    best = c;
                }
            }
            if best == dataset.labels[idx] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}
