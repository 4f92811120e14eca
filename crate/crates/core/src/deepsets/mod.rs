//! Permutation-invariant impression regressor `p = f(Σ_l g(x_l))`.
//!
//! `g` maps each 128-D descriptor to a 128-D part embedding (no activation on
//! the last layer, so its norm is free to encode importance); `f` squashes the
//! pooled sum with `tanh` and predicts K independent sigmoid likelihoods.
//! Everything is 64-bit and the gradients are exact.

mod checkpoint;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::sift::{DescriptorSet, DESCRIPTOR_DIM};
use crate::{Error, Result};

pub use checkpoint::{read_checkpoint, read_train_state, write_checkpoint, write_train_state};
pub use train::{
    predict, predict_repeats, subsample_indices, train, EpochRecord, PredictConfig, TrainConfig, TrainExample,
    TrainState,
};

pub const EMBED_DIM: usize = 128;
pub const HIDDEN_DIM: usize = 256;
/// Probabilities are clipped to `[P_CLIP, 1 - P_CLIP]` inside the loss.
pub const P_CLIP: f64 = 1e-7;
pub const LAYER_NAMES: [&str; 6] = ["g1", "g2", "g3", "f1", "f2", "f3"];

/// One affine map `z = W x + b`, `W` stored as out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    /// He-style uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero bias.
    fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        // row-major draw order so the layout of the stream is obvious
        let mut values = Vec::with_capacity(inputs * outputs);
        for _ in 0..inputs * outputs {
            values.push(rng.random_range(-limit..limit));
        }
        Layer {
            weight: DMatrix::from_row_slice(outputs, inputs, &values),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the layer to every row of `x`.
    fn forward_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weight.transpose();
        for (c, &b) in self.bias.iter().enumerate() {
            z.column_mut(c).add_scalar_mut(b);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Weights of both networks. Also used as the gradient and Adam-moment
/// container, since those share the exact shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub g: [Layer; 3],
    pub f: [Layer; 3],
}

impl MlpParams {
    pub fn zeros(k: usize) -> Self {
        MlpParams {
            g: [
                Layer::zeros(DESCRIPTOR_DIM, EMBED_DIM),
                Layer::zeros(EMBED_DIM, EMBED_DIM),
                Layer::zeros(EMBED_DIM, EMBED_DIM),
            ],
            f: [
                Layer::zeros(EMBED_DIM, HIDDEN_DIM),
                Layer::zeros(HIDDEN_DIM, HIDDEN_DIM),
                Layer::zeros(HIDDEN_DIM, k),
            ],
        }
    }

    pub fn init(k: usize, rng: &mut impl Rng) -> Self {
        MlpParams {
            g: [
                Layer::he_uniform(DESCRIPTOR_DIM, EMBED_DIM, rng),
                Layer::he_uniform(EMBED_DIM, EMBED_DIM, rng),
                Layer::he_uniform(EMBED_DIM, EMBED_DIM, rng),
            ],
            f: [
                Layer::he_uniform(EMBED_DIM, HIDDEN_DIM, rng),
                Layer::he_uniform(HIDDEN_DIM, HIDDEN_DIM, rng),
                Layer::he_uniform(HIDDEN_DIM, k, rng),
            ],
        }
    }

    /// Number of impressions.
    pub fn k(&self) -> usize {
        self.f[2].outputs()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.g.iter().chain(self.f.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.g.iter_mut().chain(self.f.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    /// Flat view in layer order, weights (column-major) before biases.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Parameter `i` of the flat view.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Checks layer shapes against the fixed architecture and finiteness.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let expected = MlpParams::zeros(k);
        for ((l, e), name) in self.layers().zip(expected.layers()).zip(LAYER_NAMES) {
            if l.weight.shape() != e.weight.shape() || l.bias.len() != e.bias.len() {
                return Err(Error::format(
                    "model parameters",
                    format!(
                        "layer {name} is {}x{}, expected {}x{}",
                        l.outputs(),
                        l.inputs(),
                        e.outputs(),
                        e.inputs()
                    ),
                ));
            }
        }
        if k == 0 {
            return Err(Error::format("model parameters", "K must be positive"));
        }
        if !self.is_finite() {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Importance norm `‖g(x)‖₂` of each descriptor row.
    pub fn importances(&self, descriptors: &DMatrix<f64>) -> Result<Vec<f64>> {
        let g = self.g_rows(descriptors)?;
        Ok(g.row_iter().map(|r| r.norm()).collect())
    }

    /// `‖g(x)‖₂` for a single descriptor.
    pub fn importance(&self, x: &[f64]) -> Result<f64> {
        Ok(self.g_forward(x)?.importance)
    }

    pub fn g_forward(&self, x: &[f64]) -> Result<PartEmbedding> {
        if x.len() != DESCRIPTOR_DIM {
            return Err(Error::invalid(format!(
                "descriptor has {} components, expected {DESCRIPTOR_DIM}",
                x.len()
            )));
        }
        let rows = self.g_rows(&DMatrix::from_row_slice(1, DESCRIPTOR_DIM, x))?;
        Ok(PartEmbedding::new(rows.row(0).transpose()))
    }

    /// `g` applied to every row; rows are descriptors.
    pub fn g_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.g_trace(x)?.out)
    }

    fn g_trace(&self, x: &DMatrix<f64>) -> Result<GTrace> {
        if x.ncols() != DESCRIPTOR_DIM {
            return Err(Error::invalid(format!(
                "descriptor matrix has {} columns, expected {DESCRIPTOR_DIM}",
                x.ncols()
            )));
        }
        let z1 = self.g[0].forward_rows(x);
        let h1 = z1.map(relu);
        let z2 = self.g[1].forward_rows(&h1);
        let h2 = z2.map(relu);
        let out = self.g[2].forward_rows(&h2);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("numerical overflow in g".into()));
        }
        Ok(GTrace { z1, h1, z2, h2, out })
    }

    /// `f` applied to a pooled vector.
    pub fn f_forward(&self, pooled: &DVector<f64>) -> Result<DVector<f64>> {
        if pooled.len() != EMBED_DIM {
            return Err(Error::invalid(format!(
                "pooled vector has {} components, expected {EMBED_DIM}",
                pooled.len()
            )));
        }
        let trace = self.f_trace(&DMatrix::from_row_slice(1, EMBED_DIM, pooled.as_slice()))?;
        Ok(trace.p.row(0).transpose())
    }

    fn f_trace(&self, pooled: &DMatrix<f64>) -> Result<FTrace> {
        if !pooled.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite pooled vector".into()));
        }
        let t = pooled.map(f64::tanh);
        let a1 = self.f[0].forward_rows(&t);
        let r1 = a1.map(relu);
        let a2 = self.f[1].forward_rows(&r1);
        let r2 = a2.map(relu);
        let a3 = self.f[2].forward_rows(&r2);
        let p = a3.map(sigmoid);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("numerical overflow in f".into()));
        }
        Ok(FTrace { t, a1, r1, a2, r2, p })
    }

    /// Likelihoods for several descriptor sets at once, one row per set.
    pub fn forward_sets(&self, sets: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let (x, offsets) = stack(sets)?;
        let g = self.g_rows(&x)?;
        let pooled = pool_blocks(&g, &offsets);
        Ok(self.f_trace(&pooled)?.p)
    }

    /// `f(pool(g(rows)))` for one set.
    pub fn forward_set(&self, set: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_sets(std::slice::from_ref(set))?.row(0).transpose())
    }
}

struct GTrace {
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    z2: DMatrix<f64>,
    h2: DMatrix<f64>,
    out: DMatrix<f64>,
}

struct FTrace {
    t: DMatrix<f64>,
    a1: DMatrix<f64>,
    r1: DMatrix<f64>,
    a2: DMatrix<f64>,
    r2: DMatrix<f64>,
    p: DMatrix<f64>,
}

/// `y = g(x)` together with its norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PartEmbedding {
    pub values: DVector<f64>,
    pub importance: f64,
}

impl PartEmbedding {
    pub fn new(values: DVector<f64>) -> Self {
        let importance = values.norm();
        PartEmbedding { values, importance }
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[inline]
fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Sum of embeddings in ascending input order.
pub fn pool(embeddings: &[PartEmbedding]) -> Result<DVector<f64>> {
    let first = embeddings.first().ok_or(Error::EmptyPartSet)?;
    let mut acc = DVector::zeros(first.values.len());
    for e in embeddings {
        if e.values.len() != acc.len() {
            return Err(Error::invalid("embeddings differ in length"));
        }
        acc += &e.values;
    }
    Ok(acc)
}

fn stack(sets: &[DMatrix<f64>]) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let mut offsets = Vec::with_capacity(sets.len() + 1);
    offsets.push(0);
    for s in sets {
        if s.nrows() == 0 {
            return Err(Error::EmptyPartSet);
        }
        if s.ncols() != DESCRIPTOR_DIM {
            return Err(Error::invalid("descriptor set with wrong dimension"));
        }
        offsets.push(offsets.last().unwrap() + s.nrows());
    }
    let mut x = DMatrix::zeros(*offsets.last().unwrap(), DESCRIPTOR_DIM);
    for (s, &o) in sets.iter().zip(&offsets) {
        x.rows_mut(o, s.nrows()).copy_from(s);
    }
    Ok((x, offsets))
}

/// Per-block row sums, each accumulated top to bottom.
fn pool_blocks(g: &DMatrix<f64>, offsets: &[usize]) -> DMatrix<f64> {
    let n_sets = offsets.len() - 1;
    let mut pooled = DMatrix::zeros(n_sets, g.ncols());
    for b in 0..n_sets {
        for c in 0..g.ncols() {
            let mut acc = 0.0;
            for r in offsets[b]..offsets[b + 1] {
                acc += g[(r, c)];
            }
            pooled[(b, c)] = acc;
        }
    }
    pooled
}

/// Mean over K of the clipped binary cross-entropy.
pub fn bce_loss(p: &[f64], t: &[f64]) -> Result<f64> {
    if p.len() != t.len() || p.is_empty() {
        return Err(Error::invalid(format!(
            "prediction has {} entries, labels {}",
            p.len(),
            t.len()
        )));
    }
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Converts a cached descriptor set to an L x 128 matrix.
pub fn descriptor_matrix(set: &DescriptorSet) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(set.len(), DESCRIPTOR_DIM);
    for (r, d) in set.descriptors.iter().enumerate() {
        for (c, &v) in d.values.iter().enumerate() {
            m[(r, c)] = v as f64;
        }
    }
    m
}

/// Batch-mean loss and its exact gradient with respect to every parameter.
/// `sets[b]` holds font b's descriptor rows and `targets[b]` its m-hot labels.
pub fn loss_and_gradients(params: &MlpParams, sets: &[DMatrix<f64>], targets: &[&[f64]]) -> Result<(f64, MlpParams)> {
    if sets.is_empty() || sets.len() != targets.len() {
        return Err(Error::invalid("batch needs one target per descriptor set"));
    }
    let k = params.k();
    if let Some(t) = targets.iter().find(|t| t.len() != k) {
        return Err(Error::invalid(format!(
            "label vector has {} entries, model has K={k}",
            t.len()
        )));
    }
    let b = sets.len();
    let (x, offsets) = stack(sets)?;
    let g = params.g_trace(&x)?;
    let pooled = pool_blocks(&g.out, &offsets);
    let f = params.f_trace(&pooled)?;

    let scale = 1.0 / (k * b) as f64;
    let mut loss = 0.0;
    let mut da3 = DMatrix::zeros(b, k);
    for row in 0..b {
        let p_row: Vec<f64> = f.p.row(row).iter().copied().collect();
        loss += bce_loss(&p_row, targets[row])?;
        for c in 0..k {
            let p = p_row[c];
            // clipping flattens the loss, so no gradient flows there
            if p > P_CLIP && p < 1.0 - P_CLIP {
                da3[(row, c)] = (p - targets[row][c]) * scale;
            }
        }
    }
    loss /= b as f64;

    let mut grads = MlpParams::zeros(k);
    let dr2 = affine_backward(&mut grads.f[2], &params.f[2], &da3, &f.r2);
    let da2 = dr2.zip_map(&f.a2, |d, z| d * relu_grad(z));
    let dr1 = affine_backward(&mut grads.f[1], &params.f[1], &da2, &f.r1);
    let da1 = dr1.zip_map(&f.a1, |d, z| d * relu_grad(z));
    let dt = affine_backward(&mut grads.f[0], &params.f[0], &da1, &f.t);
    let dpooled = dt.zip_map(&f.t, |d, t| d * (1.0 - t * t));

    // sum pooling hands every part the same upstream gradient
    let mut dg = DMatrix::zeros(x.nrows(), EMBED_DIM);
    for set in 0..b {
        for r in offsets[set]..offsets[set + 1] {
            dg.row_mut(r).copy_from(&dpooled.row(set));
        }
    }
    g_backward(params, &mut grads, &g, &x, &dg);

    for (layer, name) in grads.layers().zip(LAYER_NAMES) {
        if !layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in layer {name}")));
        }
    }
    Ok((loss, grads))
}

/// Fills `grad` for `z = W x + b` given `dz` and the layer input; returns the
/// gradient with respect to the input rows.
fn affine_backward(grad: &mut Layer, layer: &Layer, dz: &DMatrix<f64>, input: &DMatrix<f64>) -> DMatrix<f64> {
    grad.weight = dz.transpose() * input;
    grad.bias = dz.row_sum().transpose();
    dz * &layer.weight
}

fn g_backward(params: &MlpParams, grads: &mut MlpParams, g: &GTrace, x: &DMatrix<f64>, dg: &DMatrix<f64>) {
    let dh2 = affine_backward(&mut grads.g[2], &params.g[2], dg, &g.h2);
    let dz2 = dh2.zip_map(&g.z2, |d, z| d * relu_grad(z));
    let dh1 = affine_backward(&mut grads.g[1], &params.g[1], &dz2, &g.h1);
    let dz1 = dh1.zip_map(&g.z1, |d, z| d * relu_grad(z));
    affine_backward(&mut grads.g[0], &params.g[0], &dz1, x);
}

/// Gradient of `<upstream, Σ_l g(x_l)>` with respect to the `g` parameters
/// (the `f` part of the result is zero). This is the share of the full
/// gradient that flows through the given parts.
pub fn g_param_gradients(params: &MlpParams, descriptors: &DMatrix<f64>, upstream: &DVector<f64>) -> Result<MlpParams> {
    if upstream.len() != EMBED_DIM {
        return Err(Error::invalid("upstream gradient must be 128-D"));
    }
    let g = params.g_trace(descriptors)?;
    let mut dg = DMatrix::zeros(descriptors.nrows(), EMBED_DIM);
    for mut row in dg.row_iter_mut() {
        row.copy_from(&upstream.transpose());
    }
    let mut grads = MlpParams::zeros(params.k());
    g_backward(params, &mut grads, &g, descriptors, &dg);
    Ok(grads)
}

#[cfg(test)]
mod tests;
