use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine_sim, cosine_sim_with_grad};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// History-only encodings for one training pair (targets excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRepresentations {
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub h_m: Vec<f64>,
    /// Encodings of the un-augmented sequences.
    pub h_a_orig: Vec<f64>,
    pub h_b_orig: Vec<f64>,
}

/// Gradient of a loss with respect to each field of [`DomainRepresentations`].
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationGrads {
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
    pub h_m: Vec<f64>,
    pub h_a_orig: Vec<f64>,
    pub h_b_orig: Vec<f64>,
}

impl RepresentationGrads {
    fn zeros(r: &DomainRepresentations) -> Self {
        Self {
            h_a: vec![0.0; r.h_a.len()],
            h_b: vec![0.0; r.h_b.len()],
            h_m: vec![0.0; r.h_m.len()],
            h_a_orig: vec![0.0; r.h_a_orig.len()],
            h_b_orig: vec![0.0; r.h_b_orig.len()],
        }
    }
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Mean over pairs of `max(0, α − sim(h_A, h'_A)) + max(0, α − sim(h_B, h'_B))`.
pub fn loss_idra(reps: &[DomainRepresentations], margin: f64) -> Result<f64> {
    if reps.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for r in reps {
        total += (margin - cosine_sim(&r.h_a, &r.h_a_orig)?).max(0.0);
        total += (margin - cosine_sim(&r.h_b, &r.h_b_orig)?).max(0.0);
    }
    Ok(total / reps.len() as f64)
}

/// [`loss_idra`] and its gradient. Inactive hinges contribute zero gradient.
pub fn idra_with_grad(reps: &[DomainRepresentations], margin: f64) -> Result<(f64, Vec<RepresentationGrads>)> {
    if reps.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = reps.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(reps.len());
    for r in reps {
        let mut g = RepresentationGrads::zeros(r);
        let (sa, da, da_o) = cosine_sim_with_grad(&r.h_a, &r.h_a_orig)?;
        if margin - sa > 0.0 {
            total += margin - sa;
            axpy(&mut g.h_a, -1.0 / n, &da);
            axpy(&mut g.h_a_orig, -1.0 / n, &da_o);
        }
        let (sb, db, db_o) = cosine_sim_with_grad(&r.h_b, &r.h_b_orig)?;
        if margin - sb > 0.0 {
            total += margin - sb;
            axpy(&mut g.h_b, -1.0 / n, &db);
            axpy(&mut g.h_b_orig, -1.0 / n, &db_o);
        }
        grads.push(g);
    }
    Ok((total / n, grads))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// `−(1/N) Σ_i log[(e^{sim(h_M,h_A)/τ} + e^{sim(h_M,h_B)/τ}) / Σ_j e^{sim(h_A_j,h_B_j)/τ}]`,
/// evaluated with max-shifted log-sum-exp.
pub fn loss_cdrd(reps: &[DomainRepresentations], tau: f64) -> Result<f64> {
    cdrd_with_grad(reps, tau).map(|(v, _)| v)
}

/// [`loss_cdrd`] and its gradient.
pub fn cdrd_with_grad(reps: &[DomainRepresentations], tau: f64) -> Result<(f64, Vec<RepresentationGrads>)> {
    check_temperature(tau)?;
    if reps.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = reps.len() as f64;
    let mut cross = Vec::with_capacity(reps.len());
    let mut numer = Vec::with_capacity(reps.len());
    for r in reps {
        let (sa, dm_a, da) = cosine_sim_with_grad(&r.h_m, &r.h_a)?;
        let (sb, dm_b, db) = cosine_sim_with_grad(&r.h_m, &r.h_b)?;
        let (sc, dc_a, dc_b) = cosine_sim_with_grad(&r.h_a, &r.h_b)?;
        numer.push(((sa / tau, sb / tau), (dm_a, da, dm_b, db)));
        cross.push((sc / tau, dc_a, dc_b));
    }
    let logits: Vec<f64> = cross.iter().map(|c| c.0).collect();
    let denom = log_sum_exp(&logits);
    let mut loss = denom;
    let mut grads: Vec<RepresentationGrads> = reps.iter().map(RepresentationGrads::zeros).collect();
    for (g, ((a, b), (dm_a, da, dm_b, db))) in grads.iter_mut().zip(&numer) {
        let lse = log_sum_exp(&[*a, *b]);
        loss -= lse / n;
        let (wa, wb) = ((a - lse).exp(), (b - lse).exp());
        let (ca, cb) = (-wa / (n * tau), -wb / (n * tau));
        axpy(&mut g.h_m, ca, dm_a);
        axpy(&mut g.h_a, ca, da);
        axpy(&mut g.h_m, cb, dm_b);
        axpy(&mut g.h_b, cb, db);
    }
    for (g, (c, dc_a, dc_b)) in grads.iter_mut().zip(&cross) {
        let w = (c - denom).exp() / tau;
        axpy(&mut g.h_a, w, dc_a);
        axpy(&mut g.h_b, w, dc_b);
    }
    Ok((loss, grads))
}

/// Mean binary cross-entropy with clamped predictions.
pub fn loss_bce(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptySequence);
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// `L_A + L_B + λ1·L_IDRA + λ2·L_CDRD`.
pub fn loss_total(l_a: f64, l_b: f64, l_idra: f64, l_cdrd: f64, lambda_idra: f64, lambda_cdrd: f64) -> f64 {
    l_a + l_b + lambda_idra * l_idra + lambda_cdrd * l_cdrd
}
