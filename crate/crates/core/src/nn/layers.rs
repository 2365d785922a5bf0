use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Variance epsilon used by every layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Norm below which a vector is treated as degenerate by [`cosine_sim`].
pub const MIN_NORM: f64 = 1e-12;

/// Gradients produced by one backward pass: one entry per named parameter
/// plus the gradient with respect to the layer input.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub params: BTreeMap<&'static str, Matrix>,
    pub input: Matrix,
}

/// A differentiable layer with a hand-derived backward pass.
///
/// `mask` marks valid rows (`true`) of a padded sequence; layers that act
/// row-wise ignore it.
pub trait Layer {
    type Cache;

    fn forward(&self, input: &Matrix, mask: Option<&[bool]>) -> Result<(Matrix, Self::Cache)>;

    fn backward(&self, cache: &Self::Cache, upstream: &Matrix) -> Result<LayerGrads>;

    fn params(&self) -> Vec<(&'static str, &Matrix)>;

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)>;
}

/// Xavier/Glorot uniform initialisation.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

fn check_mask(mask: Option<&[bool]>, rows: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != rows => Err(Error::Dimension(format!(
            "mask of length {} for {rows} rows",
            m.len()
        ))),
        _ => Ok(()),
    }
}

/// Row-wise softmax; masked-out columns receive probability zero.
pub fn softmax_rows(scores: &Matrix, key_mask: Option<&[bool]>) -> Result<Matrix> {
    check_mask(key_mask, scores.cols())?;
    let valid = |j: usize| key_mask.is_none_or(|m| m[j]);
    if !(0..scores.cols()).any(valid) {
        return Err(Error::EmptySequence);
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let max = (0..row.len())
            .filter(|&j| valid(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut total = 0.0;
        for j in 0..row.len() {
            if valid(j) {
                o[j] = (row[j] - max).exp();
                total += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Scaled dot-product attention `softmax(QKᵀ/√d_k)·V`.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    masked_attention(q, k, v, None).map(|(out, _)| out)
}

/// Attention with an optional key mask. Returns the output and the
/// attention probabilities (needed for the backward pass).
pub fn masked_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    key_mask: Option<&[bool]>,
) -> Result<(Matrix, Matrix)> {
    if q.cols() != k.cols() {
        return Err(Error::Dimension(format!(
            "query dim {} != key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::Dimension(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.matmul_t(k)?.scale(scale);
    let probs = softmax_rows(&scores, key_mask)?;
    Ok((probs.matmul(v)?, probs))
}

/// Backward of [`masked_attention`]: returns `(dQ, dK, dV)`.
pub fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    probs: &Matrix,
    d_out: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let d_v = probs.t_matmul(d_out)?;
    let d_p = d_out.matmul_t(v)?;
    let mut d_s = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let p = probs.row(i);
        let dp = d_p.row(i);
        let inner = dot(p, dp);
        for (j, ds) in d_s.row_mut(i).iter_mut().enumerate() {
            *ds = p[j] * (dp[j] - inner) * scale;
        }
    }
    let d_q = d_s.matmul(k)?;
    let d_k = d_s.t_matmul(q)?;
    Ok((d_q, d_k, d_v))
}

/// Fully connected layer `y = x·W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Matrix,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self { w: xavier_uniform(fan_in, fan_out, rng), b: Matrix::zeros(1, fan_out) }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Matrix::zeros(fan_in, fan_out), b: Matrix::zeros(1, fan_out) }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.w)?.add_row_broadcast(&self.b)
    }
}

impl Layer for Linear {
    type Cache = Matrix;

    fn forward(&self, input: &Matrix, _mask: Option<&[bool]>) -> Result<(Matrix, Matrix)> {
        Ok((self.apply(input)?, input.clone()))
    }

    fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<LayerGrads> {
        let mut params = BTreeMap::new();
        params.insert("w", x.t_matmul(upstream)?);
        params.insert("b", upstream.column_sums());
        Ok(LayerGrads { params, input: upstream.matmul_t(&self.w)? })
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        vec![("w", &self.w), ("b", &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![("w", &mut self.w), ("b", &mut self.b)]
    }
}

/// Position-wise feed-forward network `ReLU(S·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache {
    input: Matrix,
    pre_activation: Matrix,
    hidden: Matrix,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(dim: usize, inner: usize, rng: &mut R) -> Self {
        Self {
            w1: xavier_uniform(dim, inner, rng),
            b1: Matrix::zeros(1, inner),
            w2: xavier_uniform(inner, dim, rng),
            b2: Matrix::zeros(1, dim),
        }
    }
}

/// Functional form of [`FeedForward`].
pub fn ffn(s: &Matrix, w1: &Matrix, b1: &Matrix, w2: &Matrix, b2: &Matrix) -> Result<Matrix> {
    let layer = FeedForward { w1: w1.clone(), b1: b1.clone(), w2: w2.clone(), b2: b2.clone() };
    layer.forward(s, None).map(|(out, _)| out)
}

impl Layer for FeedForward {
    type Cache = FeedForwardCache;

    fn forward(&self, input: &Matrix, _mask: Option<&[bool]>) -> Result<(Matrix, FeedForwardCache)> {
        let pre_activation = input.matmul(&self.w1)?.add_row_broadcast(&self.b1)?;
        let hidden = pre_activation.map(|v| v.max(0.0));
        let out = hidden.matmul(&self.w2)?.add_row_broadcast(&self.b2)?;
        Ok((out, FeedForwardCache { input: input.clone(), pre_activation, hidden }))
    }

    fn backward(&self, cache: &FeedForwardCache, upstream: &Matrix) -> Result<LayerGrads> {
        let mut params = BTreeMap::new();
        params.insert("w2", cache.hidden.t_matmul(upstream)?);
        params.insert("b2", upstream.column_sums());
        let mut d_hidden = upstream.matmul_t(&self.w2)?;
        for (d, &z) in d_hidden.data_mut().iter_mut().zip(cache.pre_activation.data()) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        params.insert("w1", cache.input.t_matmul(&d_hidden)?);
        params.insert("b1", d_hidden.column_sums());
        Ok(LayerGrads { params, input: d_hidden.matmul_t(&self.w1)? })
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        vec![("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![("w1", &mut self.w1), ("b1", &mut self.b1), ("w2", &mut self.w2), ("b2", &mut self.b2)]
    }
}

/// Per-row layer normalisation with affine gain and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gain: Matrix::filled(1, dim, 1.0), bias: Matrix::zeros(1, dim) }
    }
}

impl Layer for LayerNorm {
    type Cache = LayerNormCache;

    fn forward(&self, input: &Matrix, _mask: Option<&[bool]>) -> Result<(Matrix, LayerNormCache)> {
        if self.gain.cols() != input.cols() || self.bias.cols() != input.cols() {
            return Err(Error::Dimension(format!(
                "layer norm of width {} applied to {:?}",
                self.gain.cols(),
                input.shape()
            )));
        }
        let d = input.cols() as f64;
        let mut normalized = Matrix::zeros(input.rows(), input.cols());
        let mut out = Matrix::zeros(input.rows(), input.cols());
        let mut inv_std = Vec::with_capacity(input.rows());
        for i in 0..input.rows() {
            let row = input.row(i);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..row.len() {
                let n = (row[j] - mean) * inv;
                normalized.set(i, j, n);
                out.set(i, j, n * self.gain.data()[j] + self.bias.data()[j]);
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    fn backward(&self, cache: &LayerNormCache, upstream: &Matrix) -> Result<LayerGrads> {
        let (rows, cols) = upstream.shape();
        let d = cols as f64;
        let mut d_gain = vec![0.0; cols];
        let mut d_input = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let up = upstream.row(i);
            let xn = cache.normalized.row(i);
            let d_xn: Vec<f64> = (0..cols).map(|j| up[j] * self.gain.data()[j]).collect();
            for j in 0..cols {
                d_gain[j] += up[j] * xn[j];
            }
            let mean_d = d_xn.iter().sum::<f64>() / d;
            let mean_dx = dot(&d_xn, xn) / d;
            let inv = cache.inv_std[i];
            for (j, o) in d_input.row_mut(i).iter_mut().enumerate() {
                *o = inv * (d_xn[j] - mean_d - xn[j] * mean_dx);
            }
        }
        let mut params = BTreeMap::new();
        params.insert("gain", Matrix::row_vector(d_gain));
        params.insert("bias", upstream.column_sums());
        Ok(LayerGrads { params, input: d_input })
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        vec![("gain", &self.gain), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![("gain", &mut self.gain), ("bias", &mut self.bias)]
    }
}

/// `LayerNorm(x + sublayer_out)` with the given affine parameters.
pub fn residual_layer_norm(x: &Matrix, sublayer_out: &Matrix, gain: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let sum = x.add(sublayer_out)?;
    let ln = LayerNorm { gain: gain.clone(), bias: bias.clone() };
    ln.forward(&sum, None).map(|(out, _)| out)
}

/// Multi-head self-attention with output projection `W_O`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Clone, Debug)]
pub struct MultiHeadCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(Self {
            heads,
            wq: xavier_uniform(dim, dim, rng),
            wk: xavier_uniform(dim, dim, rng),
            wv: xavier_uniform(dim, dim, rng),
            wo: xavier_uniform(dim, dim, rng),
        })
    }

    /// Identity projections; with one head this reduces to plain attention.
    pub fn identity(dim: usize, heads: usize) -> Result<Self> {
        check_heads(dim, heads)?;
        let eye = Matrix::identity(dim);
        Ok(Self { heads, wq: eye.clone(), wk: eye.clone(), wv: eye.clone(), wo: eye })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "embedding dim {dim} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Functional multi-head self-attention over `e`.
pub fn multi_head_attention(e: &Matrix, heads: usize, params: &MultiHeadAttention) -> Result<Matrix> {
    check_heads(e.cols(), heads)?;
    let mut layer = params.clone();
    layer.heads = heads;
    layer.forward(e, None).map(|(out, _)| out)
}

impl Layer for MultiHeadAttention {
    type Cache = MultiHeadCache;

    fn forward(&self, input: &Matrix, mask: Option<&[bool]>) -> Result<(Matrix, MultiHeadCache)> {
        check_heads(input.cols(), self.heads)?;
        check_mask(mask, input.rows())?;
        let q = input.matmul(&self.wq)?;
        let k = input.matmul(&self.wk)?;
        let v = input.matmul(&self.wv)?;
        let dh = input.cols() / self.heads;
        let mut concat = Matrix::zeros(input.rows(), input.cols());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = (q.column_block(h * dh, dh), k.column_block(h * dh, dh), v.column_block(h * dh, dh));
            let (out, p) = masked_attention(&qh, &kh, &vh, mask)?;
            concat.set_column_block(h * dh, &out);
            probs.push(p);
        }
        let out = concat.matmul(&self.wo)?;
        Ok((out, MultiHeadCache { input: input.clone(), q, k, v, probs, concat }))
    }

    fn backward(&self, cache: &MultiHeadCache, upstream: &Matrix) -> Result<LayerGrads> {
        let dh = cache.input.cols() / self.heads;
        let d_concat = upstream.matmul_t(&self.wo)?;
        let mut d_q = Matrix::zeros(cache.q.rows(), cache.q.cols());
        let mut d_k = d_q.clone();
        let mut d_v = d_q.clone();
        for h in 0..self.heads {
            let off = h * dh;
            let (dqh, dkh, dvh) = attention_backward(
                &cache.q.column_block(off, dh),
                &cache.k.column_block(off, dh),
                &cache.v.column_block(off, dh),
                &cache.probs[h],
                &d_concat.column_block(off, dh),
            )?;
            d_q.set_column_block(off, &dqh);
            d_k.set_column_block(off, &dkh);
            d_v.set_column_block(off, &dvh);
        }
        let x = &cache.input;
        let mut params = BTreeMap::new();
        params.insert("wo", cache.concat.t_matmul(upstream)?);
        params.insert("wq", x.t_matmul(&d_q)?);
        params.insert("wk", x.t_matmul(&d_k)?);
        params.insert("wv", x.t_matmul(&d_v)?);
        let mut d_x = d_q.matmul_t(&self.wq)?;
        d_x.add_assign(&d_k.matmul_t(&self.wk)?)?;
        d_x.add_assign(&d_v.matmul_t(&self.wv)?)?;
        Ok(LayerGrads { params, input: d_x })
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        vec![("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![("wq", &mut self.wq), ("wk", &mut self.wk), ("wv", &mut self.wv), ("wo", &mut self.wo)]
    }
}

/// Column-wise mean over the valid rows of `f`.
pub fn mean_pool(f: &Matrix, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_mask(mask, f.rows())?;
    let valid: Vec<usize> = (0..f.rows()).filter(|&i| mask.is_none_or(|m| m[i])).collect();
    if valid.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut out = vec![0.0; f.cols()];
    for &i in &valid {
        for (o, v) in out.iter_mut().zip(f.row(i)) {
            *o += v;
        }
    }
    let n = valid.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Backward of [`mean_pool`]: spreads `d_pooled` evenly over valid rows.
pub fn mean_pool_backward(d_pooled: &[f64], mask: Option<&[bool]>, rows: usize) -> Result<Matrix> {
    check_mask(mask, rows)?;
    let count = mask.map_or(rows, |m| m.iter().filter(|&&v| v).count());
    if count == 0 {
        return Err(Error::EmptySequence);
    }
    let n = count as f64;
    let mut out = Matrix::zeros(rows, d_pooled.len());
    for i in 0..rows {
        if mask.is_none_or(|m| m[i]) {
            for (o, d) in out.row_mut(i).iter_mut().zip(d_pooled) {
                *o = d / n;
            }
        }
    }
    Ok(out)
}

/// Inverted-dropout mask: entries are `0` or `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 - rate;
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_sim_with_grad(a, b).map(|(s, _, _)| s)
}

/// Cosine similarity and its gradients with respect to `a` and `b`.
pub fn cosine_sim_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    for n in [na, nb] {
        if n < MIN_NORM {
            return Err(Error::DegenerateVector { norm: n });
        }
    }
    let sim = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let da = a.iter().zip(b).map(|(x, y)| y / (na * nb) - sim * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / (na * nb) - sim * y / (nb * nb)).collect();
    Ok((sim, da, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn attention_single_row_is_identity() {
        let x = m(&[&[0.3, -1.2, 2.0]]);
        assert_eq!(attention(&x, &x, &x).unwrap(), x);
    }

    #[test]
    fn attention_identity_inputs_match_hand_softmax() {
        // softmax([1/√2, 0]) = [e^{1/√2}, 1] / (e^{1/√2} + 1)
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = attention(&x, &x, &x).unwrap();
        let e = (1.0 / 2f64.sqrt()).exp();
        let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((expected[0] - 0.6698).abs() < 1e-4);
        assert!((out.get(0, 0) - expected[0]).abs() < 1e-12);
        assert!((out.get(0, 1) - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = m(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        let k = m(&[&[0.7, 0.1], &[0.7, 0.1], &[0.7, 0.1]]);
        let v = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 9.0]]);
        let out = attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            assert!((out.get(i, 0) - 3.0).abs() < 1e-12);
            assert!((out.get(i, 1) - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rejects_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        assert!(matches!(attention(&a, &b, &b), Err(Error::Dimension(_))));
        assert!(matches!(attention(&a, &a, &Matrix::zeros(3, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let x = m(&[&[9.0, 9.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let mask = [false, true, true];
        let (_, p) = masked_attention(&x, &x, &x, Some(&mask)).unwrap();
        for i in 0..3 {
            assert_eq!(p.get(i, 0), 0.0);
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            masked_attention(&x, &x, &x, Some(&[false, false, false])),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn single_head_identity_projection_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = xavier_uniform(4, 6, &mut rng);
        let mha = MultiHeadAttention::identity(6, 1).unwrap();
        let got = multi_head_attention(&e, 1, &mha).unwrap();
        let want = attention(&e, &e, &e).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn eight_heads_on_dim_64_keep_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = xavier_uniform(5, 64, &mut rng);
        let mha = MultiHeadAttention::new(64, 8, &mut rng).unwrap();
        assert_eq!(mha.dim() / mha.heads, 8);
        let out = multi_head_attention(&e, 8, &mha).unwrap();
        assert_eq!(out.shape(), (5, 64));
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = xavier_uniform(3, 8, &mut rng);
        let mut mha = MultiHeadAttention::new(8, 2, &mut rng).unwrap();
        mha.wo = Matrix::zeros(8, 8);
        let out = multi_head_attention(&e, 2, &mha).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(matches!(MultiHeadAttention::new(10, 3, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn ffn_trivial_cases() {
        let w1 = m(&[&[1.0, -2.0], &[0.5, 1.0]]);
        let w2 = m(&[&[2.0, 1.0], &[-1.0, 3.0]]);
        let zero = Matrix::zeros(1, 2);
        let s = Matrix::zeros(3, 2);
        assert!(ffn(&s, &w1, &zero, &w2, &zero).unwrap().data().iter().all(|&v| v == 0.0));

        // strongly negative b1 kills every hidden unit
        let b1 = Matrix::row_vector(vec![-100.0, -100.0]);
        let b2 = Matrix::row_vector(vec![0.25, -0.75]);
        let s = m(&[&[1.0, 1.0], &[-2.0, 0.5]]);
        let out = ffn(&s, &w1, &b1, &w2, &b2).unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i), b2.data());
        }
    }

    #[test]
    fn ffn_matches_scalar_reference() {
        let s = m(&[&[0.3, -0.7], &[1.1, 0.4]]);
        let w1 = m(&[&[0.5, -1.0], &[0.25, 0.8]]);
        let b1 = Matrix::row_vector(vec![0.1, -0.2]);
        let w2 = m(&[&[1.5, -0.5], &[0.3, 0.9]]);
        let b2 = Matrix::row_vector(vec![0.05, 0.15]);
        let out = ffn(&s, &w1, &b1, &w2, &b2).unwrap();
        for i in 0..2 {
            let mut hidden = [0.0; 2];
            for (h, slot) in hidden.iter_mut().enumerate() {
                let z = s.get(i, 0) * w1.get(0, h) + s.get(i, 1) * w1.get(1, h) + b1.get(0, h);
                *slot = if z > 0.0 { z } else { 0.0 };
            }
            for j in 0..2 {
                let y = hidden[0] * w2.get(0, j) + hidden[1] * w2.get(1, j) + b2.get(0, j);
                assert!((out.get(i, j) - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let one = Matrix::filled(1, 2, 1.0);
        let zero = Matrix::zeros(1, 2);
        let constant = m(&[&[2.0, 2.0]]);
        let out = residual_layer_norm(&constant, &Matrix::zeros(1, 2), &one, &zero).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));

        let out = residual_layer_norm(&m(&[&[1.0, -1.0]]), &Matrix::zeros(1, 2), &one, &zero).unwrap();
        // var = 1, so the only deviation is the epsilon term
        let scale = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        assert!((out.get(0, 0) - scale).abs() < 1e-15);
        assert!((out.get(0, 0) - 1.0).abs() < 1e-5);
        assert!((out.get(0, 1) + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_matches_independent_moments() {
        let x = [0.4, -1.3, 2.2, 0.9];
        let s = [0.1, 0.2, -0.3, 0.0];
        let gain = Matrix::row_vector(vec![1.5, 0.5, -1.0, 2.0]);
        let bias = Matrix::row_vector(vec![0.1, 0.0, 0.2, -0.1]);
        let out = residual_layer_norm(
            &Matrix::row_vector(x.to_vec()),
            &Matrix::row_vector(s.to_vec()),
            &gain,
            &bias,
        )
        .unwrap();
        let z: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        for j in 0..4 {
            let want = (z[j] - mean) / (var + 1e-5).sqrt() * gain.get(0, j) + bias.get(0, j);
            assert!((out.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pool_cases() {
        assert_eq!(mean_pool(&m(&[&[3.0, -1.0]]), None).unwrap(), vec![3.0, -1.0]);
        assert_eq!(mean_pool(&m(&[&[0.0, 0.0], &[2.0, 4.0]]), None).unwrap(), vec![1.0, 2.0]);
        let padded = m(&[&[100.0, 100.0], &[1.0, 2.0], &[3.0, 6.0]]);
        let mask = [false, true, true];
        let got = mean_pool(&padded, Some(&mask)).unwrap();
        let oracle: Vec<f64> = (0..2).map(|j| (padded.get(1, j) + padded.get(2, j)) / 2.0).collect();
        assert_eq!(got, oracle);
        assert!(matches!(mean_pool(&padded, Some(&[false; 3])), Err(Error::EmptySequence)));
    }

    #[test]
    fn cosine_cases() {
        let x = [0.3, -2.0, 1.5];
        assert!((cosine_sim(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector { .. })));
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mask = dropout_mask(50, 40, 0.25, &mut rng);
        assert!(mask.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        let kept = mask.data().iter().filter(|&&v| v > 0.0).count() as f64 / 2000.0;
        assert!((kept - 0.75).abs() < 0.05);
        let none = dropout_mask(3, 3, 0.0, &mut rng);
        assert!(none.data().iter().all(|&v| v == 1.0));
    }
}
