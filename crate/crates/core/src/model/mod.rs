//! Cross-domain sequence model: three transformer encoders, contrastive
//! alignment/disentanglement losses and two CTR heads.

mod embed;
mod forward;
mod losses;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, Layer, Matrix, Mlp, TransformerEncoder};

pub use embed::{embed_sequence, encode_domain, side_embedding, ItemFeatures, SequenceEmbedding};
pub use forward::{
    batch_loss, encode_representations, model_backward, predict_ctr, score_targets, LossBreakdown, PairExample,
};
pub use losses::{
    cdrd_with_grad, idra_with_grad, loss_bce, loss_cdrd, loss_idra, loss_total, DomainRepresentations,
    RepresentationGrads, BCE_CLAMP,
};

fn default_d_id() -> usize {
    8
}
fn default_d_feat() -> usize {
    4
}
fn default_d_pos() -> usize {
    4
}
fn default_d_side() -> usize {
    8
}
fn default_heads() -> usize {
    8
}
fn default_mlp() -> Vec<usize> {
    vec![512, 256, 128]
}
fn default_dropout() -> f64 {
    0.1
}
fn default_max_len() -> usize {
    20
}
fn default_lambda_idra() -> f64 {
    0.3
}
fn default_lambda_cdrd() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    0.5
}
fn default_temperature() -> f64 {
    0.1
}

/// Architecture and loss hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_d_id")]
    pub d_id: usize,
    #[serde(default = "default_d_feat")]
    pub d_feat: usize,
    #[serde(default = "default_d_pos")]
    pub d_pos: usize,
    /// Width of the user side-information embedding.
    #[serde(default = "default_d_side")]
    pub d_side: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Inner FFN width; `None` means four times the item embedding width.
    #[serde(default)]
    pub ffn_dim: Option<usize>,
    #[serde(default = "default_mlp")]
    pub mlp_hidden: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_lambda_idra")]
    pub lambda_idra: f64,
    #[serde(default = "default_lambda_cdrd")]
    pub lambda_cdrd: f64,
    /// IDRA hinge margin.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// CDRD temperature.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_id: default_d_id(),
            d_feat: default_d_feat(),
            d_pos: default_d_pos(),
            d_side: default_d_side(),
            heads: default_heads(),
            ffn_dim: None,
            mlp_hidden: default_mlp(),
            dropout: default_dropout(),
            max_len: default_max_len(),
            lambda_idra: default_lambda_idra(),
            lambda_cdrd: default_lambda_cdrd(),
            margin: default_margin(),
            temperature: default_temperature(),
        }
    }
}

impl ModelConfig {
    /// Total item embedding width `d_id + d_feat + d_pos`.
    pub fn d_v(&self) -> usize {
        self.d_id + self.d_feat + self.d_pos
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.d_v())
    }

    /// Head input `[h_domain ⊕ h_M ⊕ e_side]`.
    pub fn head_input_dim(&self) -> usize {
        2 * self.d_v() + self.d_side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d_id == 0 || self.d_pos == 0 || self.d_side == 0 {
            return bad("model.d_id, model.d_pos and model.d_side must be positive".into());
        }
        if self.heads == 0 || !self.d_v().is_multiple_of(self.heads) {
            return bad(format!("model.heads = {} must divide d_v = {}", self.heads, self.d_v()));
        }
        if self.ffn_width() == 0 || self.max_len == 0 {
            return bad("model.ffn_dim and model.max_len must be positive".into());
        }
        if self.mlp_hidden.is_empty() || self.mlp_hidden.contains(&0) || self.mlp_hidden.len() > 7 {
            return bad("model.mlp_hidden needs 1 to 7 positive widths".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("model.dropout = {} outside [0, 1)", self.dropout));
        }
        for (name, v) in [("model.lambda_idra", self.lambda_idra), ("model.lambda_cdrd", self.lambda_cdrd)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("model.temperature = {} must be positive", self.temperature));
        }
        if !self.margin.is_finite() {
            return bad("model.margin must be finite".into());
        }
        Ok(())
    }
}

/// Vocabulary sizes fixed by the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub items_a: usize,
    pub items_b: usize,
    pub feat_vocab_a: usize,
    pub feat_vocab_b: usize,
    pub side_vocab: usize,
}

/// Every trainable tensor. Field order is the canonical flattening order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub item_a: Matrix,
    pub item_b: Matrix,
    pub feat_a: Matrix,
    pub feat_b: Matrix,
    pub pos_a: Matrix,
    pub pos_b: Matrix,
    pub pos_m: Matrix,
    pub side_a: Matrix,
    pub side_b: Matrix,
    pub enc_a: TransformerEncoder,
    pub enc_b: TransformerEncoder,
    pub enc_m: TransformerEncoder,
    pub head_a: Mlp,
    pub head_b: Mlp,
}

impl ModelParams {
    /// Xavier-initialised parameters.
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, shape: &ModelShape, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (dv, ffn) = (cfg.d_v(), cfg.ffn_width());
        Ok(Self {
            item_a: xavier_uniform(shape.items_a, cfg.d_id, rng),
            item_b: xavier_uniform(shape.items_b, cfg.d_id, rng),
            feat_a: xavier_uniform(shape.feat_vocab_a, cfg.d_feat, rng),
            feat_b: xavier_uniform(shape.feat_vocab_b, cfg.d_feat, rng),
            pos_a: xavier_uniform(cfg.max_len, cfg.d_pos, rng),
            pos_b: xavier_uniform(cfg.max_len, cfg.d_pos, rng),
            pos_m: xavier_uniform(cfg.max_len, cfg.d_pos, rng),
            side_a: xavier_uniform(shape.side_vocab, cfg.d_side, rng),
            side_b: xavier_uniform(shape.side_vocab, cfg.d_side, rng),
            enc_a: TransformerEncoder::new(dv, cfg.heads, ffn, rng)?,
            enc_b: TransformerEncoder::new(dv, cfg.heads, ffn, rng)?,
            enc_m: TransformerEncoder::new(dv, cfg.heads, ffn, rng)?,
            head_a: Mlp::new(cfg.head_input_dim(), &cfg.mlp_hidden, rng)?,
            head_b: Mlp::new(cfg.head_input_dim(), &cfg.mlp_hidden, rng)?,
        })
    }

    /// Same shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, m| m.data_mut().fill(0.0));
        out
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            items_a: self.item_a.rows(),
            items_b: self.item_b.rows(),
            feat_vocab_a: self.feat_a.rows(),
            feat_vocab_b: self.feat_b.rows(),
            side_vocab: self.side_a.rows(),
        }
    }

    pub fn encoder(&self, domain: Domain) -> &TransformerEncoder {
        match domain {
            Domain::A => &self.enc_a,
            Domain::B => &self.enc_b,
            Domain::M => &self.enc_m,
        }
    }

    pub fn encoder_mut(&mut self, domain: Domain) -> &mut TransformerEncoder {
        match domain {
            Domain::A => &mut self.enc_a,
            Domain::B => &mut self.enc_b,
            Domain::M => &mut self.enc_m,
        }
    }

    pub fn head(&self, domain: Domain) -> &Mlp {
        match domain {
            Domain::B => &self.head_b,
            _ => &self.head_a,
        }
    }

    /// Visits every tensor in canonical order with a qualified name.
    pub fn for_each(&self, mut f: impl FnMut(String, &Matrix)) {
        for (name, m) in [
            ("item_a", &self.item_a),
            ("item_b", &self.item_b),
            ("feat_a", &self.feat_a),
            ("feat_b", &self.feat_b),
            ("pos_a", &self.pos_a),
            ("pos_b", &self.pos_b),
            ("pos_m", &self.pos_m),
            ("side_a", &self.side_a),
            ("side_b", &self.side_b),
        ] {
            f(name.to_string(), m);
        }
        for (prefix, enc) in [("enc_a", &self.enc_a), ("enc_b", &self.enc_b), ("enc_m", &self.enc_m)] {
            for (name, m) in enc.params() {
                f(format!("{prefix}.{name}"), m);
            }
        }
        for (prefix, head) in [("head_a", &self.head_a), ("head_b", &self.head_b)] {
            for (name, m) in head.params() {
                f(format!("{prefix}.{name}"), m);
            }
        }
    }

    /// Mutable counterpart of [`ModelParams::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(String, &mut Matrix)) {
        for (name, m) in [
            ("item_a", &mut self.item_a),
            ("item_b", &mut self.item_b),
            ("feat_a", &mut self.feat_a),
            ("feat_b", &mut self.feat_b),
            ("pos_a", &mut self.pos_a),
            ("pos_b", &mut self.pos_b),
            ("pos_m", &mut self.pos_m),
            ("side_a", &mut self.side_a),
            ("side_b", &mut self.side_b),
        ] {
            f(name.to_string(), m);
        }
        for (prefix, enc) in [("enc_a", &mut self.enc_a), ("enc_b", &mut self.enc_b), ("enc_m", &mut self.enc_m)] {
            for (name, m) in enc.params_mut() {
                f(format!("{prefix}.{name}"), m);
            }
        }
        for (prefix, head) in [("head_a", &mut self.head_a), ("head_b", &mut self.head_b)] {
            for (name, m) in head.params_mut() {
                f(format!("{prefix}.{name}"), m);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, m| n += m.len());
        n
    }

    /// Concatenation of every tensor in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each(|_, m| out.extend_from_slice(m.data()));
        out
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat vector of length {} for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("non-finite parameter value".into()));
        }
        let mut offset = 0;
        self.for_each_mut(|_, m| {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// A copy with `flat` loaded into it.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.unflatten(flat)?;
        Ok(out)
    }
}

/// Adds a named layer gradient into the matching parameter of `target`.
pub(crate) fn accumulate_layer<L: Layer>(target: &mut L, grads: &std::collections::BTreeMap<&'static str, Matrix>) -> Result<()> {
    for (name, m) in target.params_mut() {
        if let Some(g) = grads.get(name) {
            m.add_assign(g)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ModelParams {
        let cfg = ModelConfig { heads: 2, mlp_hidden: vec![6, 3], ..ModelConfig::default() };
        let shape = ModelShape { items_a: 7, items_b: 5, feat_vocab_a: 4, feat_vocab_b: 3, side_vocab: 6 };
        ModelParams::new(&cfg, &shape, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn flatten_round_trips_exactly() {
        let p = toy();
        let flat = p.flatten();
        let mut q = p.zeros_like();
        assert_ne!(p, q);
        q.unflatten(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.unflatten(&flat[1..]).is_err());
    }

    #[test]
    fn parameter_count_depends_only_on_config() {
        let cfg = ModelConfig { heads: 2, mlp_hidden: vec![6, 3], ..ModelConfig::default() };
        let shape = toy().shape();
        let a = ModelParams::new(&cfg, &shape, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = ModelParams::new(&cfg, &shape, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.num_params(), b.num_params());
        assert_ne!(a.flatten(), b.flatten());
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let ok = ModelConfig::default();
        ok.validate().unwrap();
        assert_eq!(ok.d_v(), 16);
        for bad in [
            ModelConfig { heads: 3, ..ok.clone() },
            ModelConfig { lambda_idra: 1.5, ..ok.clone() },
            ModelConfig { temperature: 0.0, ..ok.clone() },
            ModelConfig { dropout: 1.0, ..ok.clone() },
        ] {
            assert!(bad.validate().unwrap_err().is_config());
        }
    }
}
