//! Complementarity metrics: linear CKA between classifier layers, earth
//! mover's distance between label distributions, weight divergence, and the
//! symmetric CKA score matrix the server maintains.

use crate::error::{Error, Result};
use crate::nn::{Layer, ModelParams};
use crate::tensor::{dot, Tensor2};

/// Linear CKA between two representation matrices sharing a row count:
/// ‖YcᵀXc‖²_F / (‖XcᵀXc‖_F · ‖YcᵀYc‖_F) after column centering.
pub fn linear_cka(x: &Tensor2, y: &Tensor2) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!("row counts differ: {} vs {}", x.rows(), y.rows())));
    }
    if x.rows() < 2 {
        return Err(Error::Argument("CKA needs at least two rows".into()));
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    let sq = |t: &Tensor2| -> f64 { t.data().iter().map(|v| v * v).sum() };
    let self_x = sq(&xc.matmul_at(&xc)?);
    let self_y = sq(&yc.matmul_at(&yc)?);
    if self_x <= 0.0 || self_y <= 0.0 {
        return Err(Error::Degenerate("CKA input has zero variance after centering".into()));
    }
    let cross = sq(&yc.matmul_at(&xc)?);
    Ok(cross / (self_x.sqrt() * self_y.sqrt()))
}

/// How classifier layers are turned into CKA representation matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CkaMode {
    /// Classes as rows: [C x (h+1)] with the bias appended as a column.
    Weights,
    /// Responses of each classifier to a shared probe batch in feature space.
    Activations,
}

fn classifier_rows(layer: &Layer) -> Tensor2 {
    let (c, h) = (layer.out_dim(), layer.in_dim());
    let mut m = Tensor2::zeros(c, h + 1);
    for row in 0..c {
        let dest = m.row_mut(row);
        dest[..h].copy_from_slice(layer.weight.row(row));
        dest[h] = layer.bias[row];
    }
    m
}

fn probe_response(layer: &Layer, probe: &Tensor2) -> Result<Tensor2> {
    let mut z = probe.matmul_bt(&layer.weight)?;
    for row in 0..z.rows() {
        for (v, b) in z.row_mut(row).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    Ok(z)
}

/// CKA between two classifier layers using the classes-as-rows construction.
pub fn cka_between_classifiers(a: &Layer, b: &Layer) -> Result<f64> {
    if a.out_dim() != b.out_dim() || a.in_dim() != b.in_dim() {
        return Err(Error::Shape(format!(
            "classifier shapes differ: {}x{} vs {}x{}",
            a.out_dim(),
            a.in_dim(),
            b.out_dim(),
            b.in_dim()
        )));
    }
    linear_cka(&classifier_rows(a), &classifier_rows(b))
}

/// Symmetric matrix of pairwise CKA scores. Classifiers are retained so new
/// clients can be scored against everyone seen so far. A numerically
/// degenerate pair (zero variance) scores 0.0.
#[derive(Debug, Clone)]
pub struct CkaMatrix {
    mode: CkaMode,
    probe: Option<Tensor2>,
    ids: Vec<usize>,
    classifiers: Vec<Layer>,
    values: Vec<Vec<f64>>,
}

impl CkaMatrix {
    pub fn new(mode: CkaMode, probe: Option<Tensor2>) -> Result<Self> {
        if mode == CkaMode::Activations && probe.is_none() {
            return Err(Error::Argument("activation CKA needs a probe batch".into()));
        }
        Ok(CkaMatrix { mode, probe, ids: Vec::new(), classifiers: Vec::new(), values: Vec::new() })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn score(&self, a: usize, b: usize) -> Option<f64> {
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        Some(self.values[i][j])
    }

    fn representation(&self, layer: &Layer) -> Result<Tensor2> {
        match self.mode {
            CkaMode::Weights => Ok(classifier_rows(layer)),
            CkaMode::Activations => {
                let probe = self.probe.as_ref().ok_or_else(|| {
                    Error::State("activation CKA matrix lost its probe batch".into())
                })?;
                probe_response(layer, probe)
            }
        }
    }

    fn pair_score(&self, a: &Layer, b: &Layer) -> Result<f64> {
        let ra = self.representation(a)?;
        let rb = self.representation(b)?;
        match linear_cka(&ra, &rb) {
            Ok(v) => Ok(v),
            Err(Error::Degenerate(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    /// A classifier against itself is exactly 1 unless it is degenerate.
    fn self_score(&self, a: &Layer) -> Result<f64> {
        Ok(if self.pair_score(a, a)? == 0.0 { 0.0 } else { 1.0 })
    }

    /// Insert or replace one client's classifier and refresh its scores
    /// against every stored classifier.
    pub fn insert(&mut self, client_id: usize, classifier: &Layer) -> Result<()> {
        if let Some(first) = self.classifiers.first() {
            if first.out_dim() != classifier.out_dim() || first.in_dim() != classifier.in_dim() {
                return Err(Error::Shape(format!(
                    "classifier shape {}x{} does not match matrix entries {}x{}",
                    classifier.out_dim(),
                    classifier.in_dim(),
                    first.out_dim(),
                    first.in_dim()
                )));
            }
        }
        if self.mode == CkaMode::Activations {
            let probe_cols = self.probe.as_ref().map(Tensor2::cols).unwrap_or(0);
            if probe_cols != classifier.in_dim() {
                return Err(Error::Shape(format!(
                    "probe width {} does not match classifier input {}",
                    probe_cols,
                    classifier.in_dim()
                )));
            }
        }
        match self.index_of(client_id) {
            Some(i) => {
                self.classifiers[i] = classifier.clone();
                for j in 0..self.ids.len() {
                    let s = if j == i {
                        self.self_score(classifier)?
                    } else {
                        self.pair_score(&self.classifiers[i], &self.classifiers[j])?
                    };
                    self.values[i][j] = s;
                    self.values[j][i] = s;
                }
            }
            None => {
                let mut row = Vec::with_capacity(self.ids.len() + 1);
                for existing in &self.classifiers {
                    row.push(self.pair_score(classifier, existing)?);
                }
                row.push(self.self_score(classifier)?);
                for (j, v) in self.values.iter_mut().enumerate() {
                    v.push(row[j]);
                }
                self.ids.push(client_id);
                self.classifiers.push(classifier.clone());
                self.values.push(row);
            }
        }
        Ok(())
    }

    /// Sum of a client's scores against every other stored client.
    pub fn row_sum_excluding_self(&self, id: usize) -> Option<f64> {
        let i = self.index_of(id)?;
        Some(self.values[i].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
    }

    /// The `group_size` stored clients least similar to `id`, ascending by
    /// score, excluding `id` itself. Ties break on ascending client id.
    pub fn least_similar(&self, id: usize, group_size: usize) -> Option<Vec<usize>> {
        let i = self.index_of(id)?;
        let mut others: Vec<(usize, f64)> = self.values[i]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, &v)| (self.ids[j], v))
            .collect();
        others.sort_by(|a, b| {
            a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
        });
        Some(others.into_iter().take(group_size).map(|(id, _)| id).collect())
    }

    /// CSV export: header row of client ids, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(&id.to_string());
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&id.to_string());
            for v in &self.values[i] {
                out.push(',');
                out.push_str(&format!("{:.12}", v));
            }
            out.push('\n');
        }
        out
    }
}

/// Earth mover's distance between two discrete distributions over the same
/// label set: Σ_i |p_i − q_i|.
pub fn emd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("length mismatch: {} vs {}", p.len(), q.len())));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Relative weight divergence ‖w_a − w_ref‖₂ / ‖w_ref‖₂.
pub fn weight_divergence(w_a: &ModelParams, w_ref: &ModelParams) -> Result<f64> {
    pairwise_divergence(w_a, w_ref, w_ref)
}

/// Divergence between two models measured against a common reference norm:
/// ‖w_m − w_n‖₂ / ‖w_ref‖₂.
pub fn pairwise_divergence(w_m: &ModelParams, w_n: &ModelParams, w_ref: &ModelParams) -> Result<f64> {
    let m = w_m.flatten();
    let n = w_n.flatten();
    let r = w_ref.flatten();
    if m.len() != n.len() || m.len() != r.len() {
        return Err(Error::Shape("model parameter counts differ".into()));
    }
    let ref_norm = dot(&r, &r).sqrt();
    if ref_norm <= 0.0 {
        return Err(Error::Degenerate("reference model has zero norm".into()));
    }
    let diff_sq: f64 = m.iter().zip(&n).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff_sq.sqrt() / ref_norm)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("length mismatch".into()));
    }
    if xs.len() < 2 {
        return Err(Error::Argument("need at least two points".into()));
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &o in &order[i..=j] {
                ranks[o] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(xs);
    let rb = rank(ys);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (a, b) in ra.iter().zip(&rb) {
        num += (a - ma) * (b - mb);
        da += (a - ma) * (a - ma);
        db += (b - mb) * (b - mb);
    }
    if da <= 0.0 || db <= 0.0 {
        return Err(Error::Degenerate("constant rank vector".into()));
    }
    Ok(num / (da * db).sqrt())
}
