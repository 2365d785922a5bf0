use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{encode_backward, encode_train, side_backward, side_embedding, EncodedSequence, ItemFeatures};
use super::losses::{cdrd_with_grad, idra_with_grad, loss_bce, loss_total, DomainRepresentations, BCE_CLAMP};
use super::{accumulate_layer, ModelConfig, ModelParams};
use crate::data::{Domain, ItemRef};
use crate::error::{Error, Result};
use crate::nn::{Layer, Matrix, Mlp};

/// One training pair: a labelled target in each domain plus the histories
/// that condition it. Histories exclude the targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    /// Augmented domain-A history.
    pub history_a: Vec<usize>,
    /// Original domain-A history.
    pub orig_a: Vec<usize>,
    pub target_a: usize,
    pub label_a: f64,
    pub history_b: Vec<usize>,
    pub orig_b: Vec<usize>,
    pub target_b: usize,
    pub label_b: f64,
    /// Augmented mixed history.
    pub history_m: Vec<ItemRef>,
    /// User side-information tokens.
    pub side: Vec<usize>,
}

fn refs(history: &[usize], domain: Domain) -> Vec<ItemRef> {
    history.iter().map(|&item| ItemRef { domain, item }).collect()
}

fn with_target(history: &[usize], target: usize, domain: Domain) -> Vec<ItemRef> {
    history
        .iter()
        .chain(std::iter::once(&target))
        .map(|&item| ItemRef { domain, item })
        .collect()
}

/// Loss terms of one batch. Contrastive terms are `None` when their weight
/// is zero, in which case they are neither evaluated nor differentiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce_a: f64,
    pub bce_b: f64,
    pub idra: Option<f64>,
    pub cdrd: Option<f64>,
    pub lambda_idra: f64,
    pub lambda_cdrd: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `λ1·L_IDRA` (exactly zero when `λ1 = 0`).
    pub fn idra_contribution(&self) -> f64 {
        self.idra.map_or(0.0, |v| self.lambda_idra * v)
    }

    pub fn cdrd_contribution(&self) -> f64 {
        self.cdrd.map_or(0.0, |v| self.lambda_cdrd * v)
    }
}

/// Encodings of one pair. `aug_*` end with the target row and feed the
/// heads; the contrastive terms see history-only encodings (`seq_*`,
/// `orig_*`), since `h_M` never contains a target.
struct PairForward {
    aug_a: EncodedSequence,
    aug_b: EncodedSequence,
    seq_a: Option<EncodedSequence>,
    seq_b: Option<EncodedSequence>,
    orig_a: Option<EncodedSequence>,
    orig_b: Option<EncodedSequence>,
    mixed: EncodedSequence,
}

fn head_inputs(forwards: &[PairForward], sides: &[Vec<f64>], domain: Domain) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = forwards
        .iter()
        .zip(sides)
        .map(|(f, side)| {
            let h = if domain == Domain::A { &f.aug_a.h } else { &f.aug_b.h };
            let mut row = Vec::with_capacity(2 * h.len() + side.len());
            row.extend_from_slice(h);
            row.extend_from_slice(&f.mixed.h);
            row.extend_from_slice(side);
            row
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// d(BCE)/d(logit) for each row; zero where the clamp is active.
fn bce_logit_grads(probs: &[f64], labels: &[f64]) -> Matrix {
    let n = probs.len() as f64;
    Matrix::new(
        probs.len(),
        1,
        probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) { (p - y) / n } else { 0.0 })
            .collect(),
    )
    .expect("finite probabilities")
}

struct BatchPass {
    loss: LossBreakdown,
    grads: Option<ModelParams>,
}

fn run_batch<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[PairExample],
    features: &ItemFeatures,
    cfg: &ModelConfig,
    rng: &mut R,
    with_grads: bool,
) -> Result<BatchPass> {
    if batch.is_empty() {
        return Err(Error::EmptySequence);
    }
    let use_idra = cfg.lambda_idra != 0.0;
    let use_cdrd = cfg.lambda_cdrd != 0.0;
    let rate = cfg.dropout;
    let mut forwards = Vec::with_capacity(batch.len());
    for ex in batch {
        let aug_a = encode_train(&with_target(&ex.history_a, ex.target_a, Domain::A), Domain::A, params, features, cfg, rate, rng)?;
        let aug_b = encode_train(&with_target(&ex.history_b, ex.target_b, Domain::B), Domain::B, params, features, cfg, rate, rng)?;
        let (seq_a, seq_b) = if use_idra || use_cdrd {
            (
                Some(encode_train(&refs(&ex.history_a, Domain::A), Domain::A, params, features, cfg, rate, rng)?),
                Some(encode_train(&refs(&ex.history_b, Domain::B), Domain::B, params, features, cfg, rate, rng)?),
            )
        } else {
            (None, None)
        };
        let (orig_a, orig_b) = if use_idra {
            (
                Some(encode_train(&refs(&ex.orig_a, Domain::A), Domain::A, params, features, cfg, rate, rng)?),
                Some(encode_train(&refs(&ex.orig_b, Domain::B), Domain::B, params, features, cfg, rate, rng)?),
            )
        } else {
            (None, None)
        };
        let mixed = encode_train(&ex.history_m, Domain::M, params, features, cfg, rate, rng)?;
        forwards.push(PairForward { aug_a, aug_b, seq_a, seq_b, orig_a, orig_b, mixed });
    }
    let sides_a: Vec<Vec<f64>> = batch.iter().map(|ex| side_embedding(&params.side_a, &ex.side)).collect();
    let sides_b: Vec<Vec<f64>> = batch.iter().map(|ex| side_embedding(&params.side_b, &ex.side)).collect();

    let x_a = head_inputs(&forwards, &sides_a, Domain::A)?;
    let x_b = head_inputs(&forwards, &sides_b, Domain::B)?;
    let (p_a, cache_a) = params.head_a.forward(&x_a, None)?;
    let (p_b, cache_b) = params.head_b.forward(&x_b, None)?;
    let labels_a: Vec<f64> = batch.iter().map(|e| e.label_a).collect();
    let labels_b: Vec<f64> = batch.iter().map(|e| e.label_b).collect();
    let bce_a = loss_bce(p_a.data(), &labels_a)?;
    let bce_b = loss_bce(p_b.data(), &labels_b)?;

    let h = |e: &Option<EncodedSequence>| e.as_ref().map_or_else(Vec::new, |e| e.h.clone());
    let reps: Vec<DomainRepresentations> = forwards
        .iter()
        .map(|f| DomainRepresentations {
            h_a: h(&f.seq_a),
            h_b: h(&f.seq_b),
            h_m: f.mixed.h.clone(),
            h_a_orig: h(&f.orig_a),
            h_b_orig: h(&f.orig_b),
        })
        .collect();
    let idra = if use_idra { Some(idra_with_grad(&reps, cfg.margin)?) } else { None };
    let cdrd = if use_cdrd { Some(cdrd_with_grad(&reps, cfg.temperature)?) } else { None };

    let total = loss_total(
        bce_a,
        bce_b,
        idra.as_ref().map_or(0.0, |v| v.0),
        cdrd.as_ref().map_or(0.0, |v| v.0),
        cfg.lambda_idra,
        cfg.lambda_cdrd,
    );
    let loss = LossBreakdown {
        bce_a,
        bce_b,
        idra: idra.as_ref().map(|v| v.0),
        cdrd: cdrd.as_ref().map(|v| v.0),
        lambda_idra: cfg.lambda_idra,
        lambda_cdrd: cfg.lambda_cdrd,
        total,
    };
    if !with_grads {
        return Ok(BatchPass { loss, grads: None });
    }

    let mut grads = params.zeros_like();
    let dv = cfg.d_v();
    let mut d_h: Vec<[Vec<f64>; 7]> = forwards
        .iter()
        .map(|_| std::array::from_fn(|_| vec![0.0; dv]))
        .collect();
    // slots: 0/1 = target-bearing h_A/h_B, 2 = h_M, 3/4 = h'_A/h'_B, 5/6 = history-only h_A/h_B
    for (head, grads_head, cache, probs, labels, slot, side_grad) in [
        (&params.head_a, &mut grads.head_a as &mut Mlp, &cache_a, &p_a, &labels_a, 0usize, Domain::A),
        (&params.head_b, &mut grads.head_b, &cache_b, &p_b, &labels_b, 1, Domain::B),
    ] {
        let d_logits = bce_logit_grads(probs.data(), labels);
        let g = head.backward_from_logits(cache, &d_logits)?;
        accumulate_layer(grads_head, &g.params)?;
        for (i, ex) in batch.iter().enumerate() {
            let row = g.input.row(i);
            for (acc, v) in d_h[i][slot].iter_mut().zip(&row[..dv]) {
                *acc += v;
            }
            for (acc, v) in d_h[i][2].iter_mut().zip(&row[dv..2 * dv]) {
                *acc += v;
            }
            let table = if side_grad == Domain::A { &mut grads.side_a } else { &mut grads.side_b };
            side_backward(table, &ex.side, &row[2 * dv..]);
        }
    }
    for (lambda, term) in [(cfg.lambda_idra, &idra), (cfg.lambda_cdrd, &cdrd)] {
        let Some((_, rep_grads)) = term else { continue };
        for (acc, g) in d_h.iter_mut().zip(rep_grads) {
            for (slot, src) in [(5, &g.h_a), (6, &g.h_b), (2, &g.h_m), (3, &g.h_a_orig), (4, &g.h_b_orig)] {
                for (a, v) in acc[slot].iter_mut().zip(src) {
                    *a += lambda * v;
                }
            }
        }
    }
    for (f, d) in forwards.iter().zip(&d_h) {
        encode_backward(&f.aug_a, &d[0], params, features, &mut grads)?;
        encode_backward(&f.aug_b, &d[1], params, features, &mut grads)?;
        encode_backward(&f.mixed, &d[2], params, features, &mut grads)?;
        for (enc, slot) in [(&f.orig_a, 3), (&f.orig_b, 4), (&f.seq_a, 5), (&f.seq_b, 6)] {
            if let Some(e) = enc {
                encode_backward(e, &d[slot], params, features, &mut grads)?;
            }
        }
    }
    Ok(BatchPass { loss, grads: Some(grads) })
}

/// Loss of `batch` without gradients.
pub fn batch_loss<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[PairExample],
    features: &ItemFeatures,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    run_batch(params, batch, features, cfg, rng, false).map(|p| p.loss)
}

/// Loss of `batch` and its gradient flattened in canonical parameter order.
pub fn model_backward<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[PairExample],
    features: &ItemFeatures,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let pass = run_batch(params, batch, features, cfg, rng, true)?;
    Ok((pass.loss, pass.grads.expect("gradients requested").flatten()))
}

/// Click probability from `[h_domain ⊕ h_M ⊕ e_side]`.
pub fn predict_ctr(h_domain: &[f64], h_m: &[f64], e_side: &[f64], head: &Mlp) -> Result<f64> {
    let mut row = Vec::with_capacity(h_domain.len() + h_m.len() + e_side.len());
    row.extend_from_slice(h_domain);
    row.extend_from_slice(h_m);
    row.extend_from_slice(e_side);
    Ok(head.predict(&Matrix::row_vector(row))?[0])
}

/// Inference-mode history-only encodings for one pair, as seen by the
/// contrastive terms.
pub fn encode_representations(
    params: &ModelParams,
    example: &PairExample,
    features: &ItemFeatures,
    cfg: &ModelConfig,
) -> Result<DomainRepresentations> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let enc = |seq: Vec<ItemRef>, d: Domain, rng: &mut ChaCha8Rng| {
        encode_train(&seq, d, params, features, cfg, 0.0, rng).map(|e| e.h)
    };
    Ok(DomainRepresentations {
        h_a: enc(refs(&example.history_a, Domain::A), Domain::A, &mut rng)?,
        h_b: enc(refs(&example.history_b, Domain::B), Domain::B, &mut rng)?,
        h_m: enc(example.history_m.clone(), Domain::M, &mut rng)?,
        h_a_orig: enc(refs(&example.orig_a, Domain::A), Domain::A, &mut rng)?,
        h_b_orig: enc(refs(&example.orig_b, Domain::B), Domain::B, &mut rng)?,
    })
}

/// Inference-mode logits of each candidate target in `domain` given the
/// user's augmented domain history, augmented mixed history and side tokens.
/// Logits rank identically to probabilities and never saturate into ties.
pub fn score_targets(
    params: &ModelParams,
    features: &ItemFeatures,
    cfg: &ModelConfig,
    domain: Domain,
    history: &[usize],
    history_m: &[ItemRef],
    side: &[usize],
    candidates: &[usize],
) -> Result<Vec<f64>> {
    if domain == Domain::M {
        return Err(Error::Evaluation("targets are scored in domain A or B".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h_m = encode_train(history_m, Domain::M, params, features, cfg, 0.0, &mut rng)?.h;
    let side_table = if domain == Domain::A { &params.side_a } else { &params.side_b };
    let e_side = side_embedding(side_table, side);
    let mut rows = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let h = encode_train(&with_target(history, c, domain), domain, params, features, cfg, 0.0, &mut rng)?.h;
        let mut row = h;
        row.extend_from_slice(&h_m);
        row.extend_from_slice(&e_side);
        rows.push(row);
    }
    let head = params.head(domain);
    let (_, cache) = head.forward(&Matrix::from_rows(&rows)?, None)?;
    Ok(cache.logits().to_vec())
}
