use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::data::{Domain, ItemRef};
use crate::error::{Error, Result};
use crate::nn::{mean_pool, mean_pool_backward, EncoderCache, Layer, LayerGrads, Matrix};

/// Feature-token ids attached to each item, per domain catalog.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub a: Vec<Vec<usize>>,
    pub b: Vec<Vec<usize>>,
}

impl ItemFeatures {
    /// No augmented features for any item.
    pub fn empty(items_a: usize, items_b: usize) -> Self {
        Self { a: vec![Vec::new(); items_a], b: vec![Vec::new(); items_b] }
    }

    pub fn tokens(&self, item: ItemRef) -> &[usize] {
        let table = if item.domain == Domain::B { &self.b } else { &self.a };
        table.get(item.item).map_or(&[], |v| v.as_slice())
    }
}

/// Embedded sequence: one row per position plus a validity mask.
#[derive(Clone, Debug)]
pub struct SequenceEmbedding {
    pub matrix: Matrix,
    pub mask: Vec<bool>,
    /// Item and position index behind each row (`None` for padding).
    slots: Vec<Option<(ItemRef, usize)>>,
    stack: Domain,
}

impl SequenceEmbedding {
    pub fn valid_rows(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn stack(&self) -> Domain {
        self.stack
    }
}

fn check_item(item: ItemRef, stack: Domain, params: &ModelParams) -> Result<()> {
    if stack != Domain::M && item.domain != stack {
        return Err(Error::Vocabulary { domain: stack.to_string(), item: item.item, size: 0 });
    }
    let size = match item.domain {
        Domain::A => params.item_a.rows(),
        Domain::B => params.item_b.rows(),
        Domain::M => 0,
    };
    if item.item >= size {
        return Err(Error::Vocabulary { domain: item.domain.to_string(), item: item.item, size });
    }
    Ok(())
}

fn tables(params: &ModelParams, item_domain: Domain) -> (&Matrix, &Matrix) {
    match item_domain {
        Domain::B => (&params.item_b, &params.feat_b),
        _ => (&params.item_a, &params.feat_a),
    }
}

fn pos_table(params: &ModelParams, stack: Domain) -> &Matrix {
    match stack {
        Domain::A => &params.pos_a,
        Domain::B => &params.pos_b,
        Domain::M => &params.pos_m,
    }
}

fn embed_rows(
    seq: &[ItemRef],
    stack: Domain,
    params: &ModelParams,
    features: &ItemFeatures,
    max_len: usize,
    padded: bool,
) -> Result<SequenceEmbedding> {
    let kept = &seq[seq.len().saturating_sub(max_len)..];
    for &item in kept {
        check_item(item, stack, params)?;
    }
    let (d_id, d_feat) = (params.item_a.cols(), params.feat_a.cols());
    let pos = pos_table(params, stack);
    let d_v = d_id + d_feat + pos.cols();
    let pad = max_len - kept.len();
    let rows = if padded { max_len } else { kept.len() };
    let first_pos = if padded { 0 } else { pad };
    let mut matrix = Matrix::zeros(rows, d_v);
    let mut mask = vec![false; rows];
    let mut slots = vec![None; rows];
    for (k, &item) in kept.iter().enumerate() {
        let position = pad + k;
        let r = position - first_pos;
        let (ids, feats) = tables(params, item.domain);
        let row = matrix.row_mut(r);
        row[..d_id].copy_from_slice(ids.row(item.item));
        let toks = features.tokens(item);
        let valid: Vec<usize> = toks.iter().copied().filter(|&t| t < feats.rows()).collect();
        if !valid.is_empty() {
            let n = valid.len() as f64;
            for &t in &valid {
                for (o, v) in row[d_id..d_id + d_feat].iter_mut().zip(feats.row(t)) {
                    *o += v / n;
                }
            }
        }
        row[d_id + d_feat..].copy_from_slice(pos.row(position));
        mask[r] = true;
        slots[r] = Some((item, position));
    }
    Ok(SequenceEmbedding { matrix, mask, slots, stack })
}

/// Embeds the most recent `max_len` items of `seq` for the `stack` encoder,
/// left-padded to `max_len` rows. Position index equals row index.
pub fn embed_sequence(
    seq: &[ItemRef],
    stack: Domain,
    params: &ModelParams,
    features: &ItemFeatures,
    max_len: usize,
) -> Result<SequenceEmbedding> {
    embed_rows(seq, stack, params, features, max_len, true)
}

/// Same rows as [`embed_sequence`] with the padding rows dropped. Encoder
/// outputs on valid rows are identical because padded keys carry zero
/// attention weight and padded rows are excluded from pooling.
pub(crate) fn embed_compact(
    seq: &[ItemRef],
    stack: Domain,
    params: &ModelParams,
    features: &ItemFeatures,
    max_len: usize,
) -> Result<SequenceEmbedding> {
    embed_rows(seq, stack, params, features, max_len, false)
}

/// Scatters the gradient of an embedded sequence into the embedding tables.
pub(crate) fn embed_backward(
    emb: &SequenceEmbedding,
    d_rows: &Matrix,
    features: &ItemFeatures,
    grads: &mut ModelParams,
) {
    let (d_id, d_feat) = (grads.item_a.cols(), grads.feat_a.cols());
    for (r, slot) in emb.slots.iter().enumerate() {
        let Some((item, position)) = *slot else { continue };
        let d = d_rows.row(r);
        let (ids, feats) = match item.domain {
            Domain::B => (&mut grads.item_b, &mut grads.feat_b),
            _ => (&mut grads.item_a, &mut grads.feat_a),
        };
        for (g, v) in ids.row_mut(item.item).iter_mut().zip(&d[..d_id]) {
            *g += v;
        }
        let valid: Vec<usize> = features.tokens(item).iter().copied().filter(|&t| t < feats.rows()).collect();
        let n = valid.len() as f64;
        for &t in &valid {
            for (g, v) in feats.row_mut(t).iter_mut().zip(&d[d_id..d_id + d_feat]) {
                *g += v / n;
            }
        }
        let pos = match emb.stack {
            Domain::A => &mut grads.pos_a,
            Domain::B => &mut grads.pos_b,
            Domain::M => &mut grads.pos_m,
        };
        for (g, v) in pos.row_mut(position).iter_mut().zip(&d[d_id + d_feat..]) {
            *g += v;
        }
    }
}

/// Encoder forward through the stack of `emb` followed by masked mean pooling.
pub fn encode_domain(emb: &SequenceEmbedding, params: &ModelParams) -> Result<Vec<f64>> {
    let (out, _) = params.encoder(emb.stack).forward(&emb.matrix, Some(&emb.mask))?;
    mean_pool(&out, Some(&emb.mask))
}

/// An encoded sequence with everything needed for its backward pass.
pub(crate) struct EncodedSequence {
    pub emb: SequenceEmbedding,
    pub cache: EncoderCache,
    pub h: Vec<f64>,
}

pub(crate) fn encode_train<R: Rng + ?Sized>(
    seq: &[ItemRef],
    stack: Domain,
    params: &ModelParams,
    features: &ItemFeatures,
    cfg: &ModelConfig,
    dropout: f64,
    rng: &mut R,
) -> Result<EncodedSequence> {
    let emb = embed_compact(seq, stack, params, features, cfg.max_len)?;
    if emb.matrix.rows() == 0 {
        return Err(Error::EmptySequence);
    }
    let (out, cache) = params.encoder(stack).forward_train(&emb.matrix, None, dropout, rng)?;
    let h = mean_pool(&out, None)?;
    Ok(EncodedSequence { emb, cache, h })
}

/// Backpropagates `d_h` through pooling, encoder and embedding tables.
pub(crate) fn encode_backward(
    enc: &EncodedSequence,
    d_h: &[f64],
    params: &ModelParams,
    features: &ItemFeatures,
    grads: &mut ModelParams,
) -> Result<()> {
    let d_out = mean_pool_backward(d_h, None, enc.emb.matrix.rows())?;
    let stack = enc.emb.stack;
    let LayerGrads { params: g, input } = params.encoder(stack).backward(&enc.cache, &d_out)?;
    super::accumulate_layer(grads.encoder_mut(stack), &g)?;
    embed_backward(&enc.emb, &input, features, grads);
    Ok(())
}

/// Mean of the side-information rows for `tokens` (zero vector when empty).
pub fn side_embedding(table: &Matrix, tokens: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; table.cols()];
    let valid: Vec<usize> = tokens.iter().copied().filter(|&t| t < table.rows()).collect();
    let n = valid.len() as f64;
    for &t in &valid {
        for (o, v) in out.iter_mut().zip(table.row(t)) {
            *o += v / n;
        }
    }
    out
}

pub(crate) fn side_backward(table_grad: &mut Matrix, tokens: &[usize], d: &[f64]) {
    let valid: Vec<usize> = tokens.iter().copied().filter(|&t| t < table_grad.rows()).collect();
    let n = valid.len() as f64;
    for &t in &valid {
        for (g, v) in table_grad.row_mut(t).iter_mut().zip(d) {
            *g += v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelConfig, ModelParams, ItemFeatures) {
        let cfg = ModelConfig { d_id: 4, d_feat: 2, d_pos: 2, heads: 2, mlp_hidden: vec![4], dropout: 0.0, ..ModelConfig::default() };
        let shape = ModelShape { items_a: 30, items_b: 30, feat_vocab_a: 5, feat_vocab_b: 5, side_vocab: 4 };
        let params = ModelParams::new(&cfg, &shape, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut features = ItemFeatures::empty(30, 30);
        features.a[2] = vec![0, 3];
        features.b[4] = vec![1];
        (cfg, params, features)
    }

    #[test]
    fn keeps_most_recent_max_len_items() {
        let (cfg, params, features) = setup();
        let seq: Vec<ItemRef> = (0..25).map(ItemRef::a).collect();
        let emb = embed_sequence(&seq, Domain::A, &params, &features, cfg.max_len).unwrap();
        assert_eq!(emb.matrix.rows(), 20);
        assert!(emb.mask.iter().all(|&m| m));
        assert_eq!(&emb.matrix.row(0)[..4], params.item_a.row(5));
        assert_eq!(&emb.matrix.row(19)[..4], params.item_a.row(24));
        assert_eq!(emb.matrix.cols(), cfg.d_v());
    }

    #[test]
    fn empty_sequence_is_all_padding_and_fails_downstream() {
        let (cfg, params, features) = setup();
        let emb = embed_sequence(&[], Domain::A, &params, &features, cfg.max_len).unwrap();
        assert_eq!(emb.valid_rows(), 0);
        assert!(emb.matrix.data().iter().all(|&v| v == 0.0));
        assert!(matches!(encode_domain(&emb, &params), Err(Error::EmptySequence)));
    }

    #[test]
    fn feature_part_is_mean_of_token_rows() {
        let (cfg, params, features) = setup();
        let emb = embed_sequence(&[ItemRef::a(2)], Domain::A, &params, &features, cfg.max_len).unwrap();
        let row = emb.matrix.row(19);
        for j in 0..2 {
            let want = (params.feat_a.get(0, j) + params.feat_a.get(3, j)) / 2.0;
            assert!((row[4 + j] - want).abs() < 1e-15);
        }
        assert_eq!(&row[6..], params.pos_a.row(19));
    }

    #[test]
    fn unknown_item_is_a_vocabulary_error() {
        let (cfg, params, features) = setup();
        let err = embed_sequence(&[ItemRef::a(30)], Domain::A, &params, &features, cfg.max_len).unwrap_err();
        assert!(matches!(err, Error::Vocabulary { item: 30, size: 30, .. }));
        assert!(embed_sequence(&[ItemRef::b(1)], Domain::A, &params, &features, cfg.max_len).is_err());
        assert!(embed_sequence(&[ItemRef::b(1), ItemRef::a(1)], Domain::M, &params, &features, cfg.max_len).is_ok());
    }

    #[test]
    fn compact_encoding_equals_padded_encoding() {
        let (cfg, params, features) = setup();
        let seq = [ItemRef::a(1), ItemRef::b(4), ItemRef::a(2)];
        let padded = embed_sequence(&seq, Domain::M, &params, &features, cfg.max_len).unwrap();
        let full = encode_domain(&padded, &params).unwrap();
        let enc = encode_train(&seq, Domain::M, &params, &features, &cfg, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in full.iter().zip(&enc.h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stacks_are_independent() {
        let (cfg, params, features) = setup();
        let seq_a = [ItemRef::a(3)];
        let seq_m = [ItemRef::a(3), ItemRef::b(3)];
        let embed = |p: &ModelParams, s: &[ItemRef], d| {
            encode_domain(&embed_sequence(s, d, p, &features, cfg.max_len).unwrap(), p).unwrap()
        };
        let mut zeroed = params.clone();
        let z = zeroed.enc_b.clone();
        zeroed.enc_b = {
            let mut e = z;
            e.params_mut().into_iter().for_each(|(_, m)| m.data_mut().fill(0.0));
            e
        };
        assert_eq!(embed(&params, &seq_a, Domain::A), embed(&zeroed, &seq_a, Domain::A));
        assert_eq!(embed(&params, &seq_m, Domain::M), embed(&zeroed, &seq_m, Domain::M));
        let seq_b = [ItemRef::b(3)];
        assert_ne!(embed(&params, &seq_b, Domain::B), embed(&zeroed, &seq_b, Domain::B));
    }
}
