use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_mask, FeedForward, FeedForwardCache, Layer, LayerGrads, LayerNorm, LayerNormCache,
    MultiHeadAttention, MultiHeadCache,
};
use super::matrix::Matrix;
use crate::error::Result;

/// One transformer block: MHA → residual+LN → FFN → residual+LN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerEncoder {
    pub mha: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct EncoderCache {
    mha: MultiHeadCache,
    drop_attn: Option<Matrix>,
    ln1: LayerNormCache,
    ffn: FeedForwardCache,
    drop_ffn: Option<Matrix>,
    ln2: LayerNormCache,
}

impl TransformerEncoder {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            mha: MultiHeadAttention::new(dim, heads, rng)?,
            ln1: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, ffn_dim, rng),
            ln2: LayerNorm::new(dim),
        })
    }

    /// Forward pass with inverted dropout after each sublayer (`rate == 0` disables it).
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        input: &Matrix,
        mask: Option<&[bool]>,
        rate: f64,
        rng: &mut R,
    ) -> Result<(Matrix, EncoderCache)> {
        let (attn, mha) = self.mha.forward(input, mask)?;
        let (attn, drop_attn) = apply_dropout(attn, rate, rng)?;
        let (s1, ln1) = self.ln1.forward(&input.add(&attn)?, None)?;
        let (f, ffn) = self.ffn.forward(&s1, None)?;
        let (f, drop_ffn) = apply_dropout(f, rate, rng)?;
        let (out, ln2) = self.ln2.forward(&s1.add(&f)?, None)?;
        Ok((out, EncoderCache { mha, drop_attn, ln1, ffn, drop_ffn, ln2 }))
    }
}

fn apply_dropout<R: Rng + ?Sized>(x: Matrix, rate: f64, rng: &mut R) -> Result<(Matrix, Option<Matrix>)> {
    if rate <= 0.0 {
        return Ok((x, None));
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng);
    Ok((x.hadamard(&mask)?, Some(mask)))
}

fn undo_dropout(d: Matrix, mask: &Option<Matrix>) -> Result<Matrix> {
    match mask {
        Some(m) => d.hadamard(m),
        None => Ok(d),
    }
}

impl Layer for TransformerEncoder {
    type Cache = EncoderCache;

    fn forward(&self, input: &Matrix, mask: Option<&[bool]>) -> Result<(Matrix, EncoderCache)> {
        // rate 0 never draws from the generator
        self.forward_train(input, mask, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn backward(&self, cache: &EncoderCache, upstream: &Matrix) -> Result<LayerGrads> {
        let mut params = BTreeMap::new();
        let g2 = self.ln2.backward(&cache.ln2, upstream)?;
        let d_sum2 = g2.input;
        let g_ffn = self.ffn.backward(&cache.ffn, &undo_dropout(d_sum2.clone(), &cache.drop_ffn)?)?;
        let mut d_s1 = d_sum2;
        d_s1.add_assign(&g_ffn.input)?;
        let g1 = self.ln1.backward(&cache.ln1, &d_s1)?;
        let d_sum1 = g1.input;
        let g_mha = self.mha.backward(&cache.mha, &undo_dropout(d_sum1.clone(), &cache.drop_attn)?)?;
        let mut d_input = d_sum1;
        d_input.add_assign(&g_mha.input)?;

        for (name, g) in g_mha.params {
            params.insert(mha_name(name), g);
        }
        for (name, g) in g1.params {
            params.insert(if name == "gain" { "ln1.gain" } else { "ln1.bias" }, g);
        }
        for (name, g) in g_ffn.params {
            params.insert(ffn_name(name), g);
        }
        for (name, g) in g2.params {
            params.insert(if name == "gain" { "ln2.gain" } else { "ln2.bias" }, g);
        }
        Ok(LayerGrads { params, input: d_input })
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("mha.wq", &self.mha.wq),
            ("mha.wk", &self.mha.wk),
            ("mha.wv", &self.mha.wv),
            ("mha.wo", &self.mha.wo),
            ("ln1.gain", &self.ln1.gain),
            ("ln1.bias", &self.ln1.bias),
            ("ffn.w1", &self.ffn.w1),
            ("ffn.b1", &self.ffn.b1),
            ("ffn.w2", &self.ffn.w2),
            ("ffn.b2", &self.ffn.b2),
            ("ln2.gain", &self.ln2.gain),
            ("ln2.bias", &self.ln2.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("mha.wq", &mut self.mha.wq),
            ("mha.wk", &mut self.mha.wk),
            ("mha.wv", &mut self.mha.wv),
            ("mha.wo", &mut self.mha.wo),
            ("ln1.gain", &mut self.ln1.gain),
            ("ln1.bias", &mut self.ln1.bias),
            ("ffn.w1", &mut self.ffn.w1),
            ("ffn.b1", &mut self.ffn.b1),
            ("ffn.w2", &mut self.ffn.w2),
            ("ffn.b2", &mut self.ffn.b2),
            ("ln2.gain", &mut self.ln2.gain),
            ("ln2.bias", &mut self.ln2.bias),
        ]
    }
}

fn mha_name(name: &str) -> &'static str {
    match name {
        "wq" => "mha.wq",
        "wk" => "mha.wk",
        "wv" => "mha.wv",
        _ => "mha.wo",
    }
}

fn ffn_name(name: &str) -> &'static str {
    match name {
        "w1" => "ffn.w1",
        "b1" => "ffn.b1",
        "w2" => "ffn.w2",
        _ => "ffn.b2",
    }
}
