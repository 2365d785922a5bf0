use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::instances::ClientData;
use super::optimizer::{Optimizer, OptimizerConfig};
use super::wire::ClientMessage;
use crate::error::{Error, Result};
use crate::model::{model_backward, ItemFeatures, LossBreakdown, ModelConfig, ModelParams};
use crate::privacy::{NoisyGradient, PrivacyConfig, PrivacyState, StepOutcome};
use crate::rng::{label, stream};

fn default_rounds() -> usize {
    50
}
fn default_lr() -> f64 {
    5e-4
}
fn default_rho() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_negative_rate() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Communication rounds `T`.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Server learning rate `η`.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Client sampling ratio `ρ`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Mini-batch gradients averaged locally before the single protected release.
    #[serde(default = "default_one")]
    pub local_steps: usize,
    /// Chance that a drawn target is replaced by an uninteracted item with label 0.
    #[serde(default = "default_negative_rate")]
    pub negative_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Worker threads for client steps.
    #[serde(default = "default_one")]
    pub threads: usize,
    /// Write measured seconds into round reports (breaks byte reproducibility).
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: default_rounds(),
            lr: default_lr(),
            rho: default_rho(),
            batch_size: default_batch(),
            local_steps: 1,
            negative_rate: default_negative_rate(),
            optimizer: OptimizerConfig::Sgd,
            threads: 1,
            record_wall_time: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("federation.rho = {} outside (0, 1]", self.rho));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("federation.lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.local_steps == 0 || self.threads == 0 {
            return bad("federation.batch_size, local_steps and threads must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.negative_rate) {
            return bad(format!("federation.negative_rate = {} outside [0, 1]", self.negative_rate));
        }
        self.optimizer.validate()
    }
}

/// Shared read-only inputs of a training run.
pub struct TrainContext<'a> {
    pub model: &'a ModelConfig,
    pub fed: &'a FedConfig,
    pub features: &'a ItemFeatures,
    pub seed: u64,
}

/// Per-client simulator state. The dataset never changes during training.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub data: ClientData,
    pub privacy: PrivacyState,
    pub active: bool,
}

impl ClientState {
    /// Clients without instances in both domains, or whose budget cannot
    /// cover a single release, start inactive.
    pub fn new(data: ClientData, privacy: &PrivacyConfig, rho: f64) -> Result<Self> {
        let privacy = PrivacyState::new(privacy, rho)?;
        let active = if data.is_empty() {
            log::warn!("client {} has no training instances in one domain; skipped", data.user);
            false
        } else {
            !privacy.would_stop()
        };
        Ok(Self { data, privacy, active })
    }
}

/// `max(1, round(ρ·|U|))` active clients, uniformly without replacement, sorted.
pub fn sample_clients(total: usize, active: &[usize], rho: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if active.is_empty() {
        return Err(Error::Data("no active clients remain".into()));
    }
    let want = ((rho * total as f64).round() as usize).max(1).min(active.len());
    let mut rng = stream(seed, &[label::SAMPLE_CLIENTS, round as u64]);
    let mut out: Vec<usize> =
        rand::seq::index::sample(&mut rng, active.len(), want).into_iter().map(|i| active[i]).collect();
    out.sort_unstable();
    Ok(out)
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let avg = |f: &dyn Fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    let avg_opt = |f: &dyn Fn(&LossBreakdown) -> Option<f64>| -> Option<f64> {
        parts.iter().map(f).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / n)
    };
    LossBreakdown {
        bce_a: avg(&|l| l.bce_a),
        bce_b: avg(&|l| l.bce_b),
        idra: avg_opt(&|l| l.idra),
        cdrd: avg_opt(&|l| l.cdrd),
        lambda_idra: parts[0].lambda_idra,
        lambda_cdrd: parts[0].lambda_cdrd,
        total: avg(&|l| l.total),
    }
}

/// Loss and raw gradient of one client in one round, averaged over its
/// local mini-batches. Deterministic in (seed, user, round).
pub fn local_gradient(data: &ClientData, params: &ModelParams, round: usize, ctx: &TrainContext) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut losses = Vec::with_capacity(ctx.fed.local_steps);
    let mut grad: Vec<f64> = Vec::new();
    for s in 0..ctx.fed.local_steps {
        let parts = [data.user as u64, round as u64, s as u64];
        let mut batch_rng = stream(ctx.seed, &[label::BATCH, parts[0], parts[1], parts[2]]);
        let mut drop_rng = stream(ctx.seed, &[label::DROPOUT, parts[0], parts[1], parts[2]]);
        let batch = data.sample_batch(ctx.fed.batch_size, ctx.fed.negative_rate, &mut batch_rng);
        let (loss, g) = model_backward(params, &batch, ctx.features, ctx.model, &mut drop_rng)?;
        if grad.is_empty() {
            grad = g;
        } else {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        losses.push(loss);
    }
    if ctx.fed.local_steps > 1 {
        let k = ctx.fed.local_steps as f64;
        grad.iter_mut().for_each(|g| *g /= k);
    }
    Ok((mean_breakdown(&losses), grad))
}

/// Client-side telemetry the simulator records; never part of the message.
#[derive(Clone, Debug)]
pub struct ClientOutcome {
    pub client: usize,
    pub message: Vec<u8>,
    pub loss: LossBreakdown,
    pub sigma: f64,
}

/// One protected local step. The returned bytes are the only thing that
/// leaves the client.
pub fn client_step(index: usize, client: &mut ClientState, params: &ModelParams, round: usize, ctx: &TrainContext) -> Result<ClientOutcome> {
    if !client.active {
        return Err(Error::Data(format!("client {index} is inactive")));
    }
    let (loss, raw) = local_gradient(&client.data, params, round, ctx)?;
    let sigma = client.privacy.sigma_t;
    let mut noise_rng = stream(ctx.seed, &[label::NOISE, client.data.user as u64, round as u64]);
    let message = match client.privacy.step(&raw, round, &mut noise_rng) {
        StepOutcome::Released(gradient) => ClientMessage::Gradient { client: index, round, gradient },
        StepOutcome::StopParticipation => {
            client.active = false;
            ClientMessage::Stop { client: index, round }
        }
    };
    Ok(ClientOutcome { client: index, message: message.encode(), loss, sigma })
}

/// Global model held by the server.
#[derive(Clone, Debug)]
pub struct GlobalModel {
    pub params: ModelParams,
    pub round: usize,
    optimizer: Optimizer,
}

impl GlobalModel {
    pub fn new(params: ModelParams, optimizer: OptimizerConfig) -> Self {
        let n = params.num_params();
        Self { params, round: 0, optimizer: Optimizer::new(optimizer, n) }
    }
}

fn lexicographic(a: &NoisyGradient, b: &NoisyGradient) -> std::cmp::Ordering {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Unweighted mean of the received gradients, summed in a canonical order so
/// the result does not depend on arrival order. `None` when nothing arrived.
pub fn mean_gradient(gradients: &[NoisyGradient]) -> Result<Option<Vec<f64>>> {
    let Some(first) = gradients.first() else { return Ok(None) };
    if let Some(g) = gradients.iter().find(|g| g.len() != first.len()) {
        return Err(Error::Dimension(format!("gradient of length {} among length {}", g.len(), first.len())));
    }
    let mut order: Vec<&NoisyGradient> = gradients.iter().collect();
    order.sort_by(|a, b| lexicographic(a, b));
    let mut sum = vec![0.0; first.len()];
    for g in order {
        sum.iter_mut().zip(g.values()).for_each(|(s, v)| *s += v);
    }
    let n = gradients.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(Some(sum))
}

/// `Θ ← update(Θ, mean ∇̃)`; returns false (round skipped) when nothing arrived.
pub fn aggregate_and_update(global: &mut GlobalModel, gradients: &[NoisyGradient], lr: f64) -> Result<bool> {
    let Some(mean) = mean_gradient(gradients)? else { return Ok(false) };
    let mut flat = global.params.flatten();
    if flat.len() != mean.len() {
        return Err(Error::Dimension(format!("gradient of length {} for {} parameters", mean.len(), flat.len())));
    }
    global.optimizer.apply(&mut flat, &mean, lr);
    global.params.unflatten(&flat)?;
    global.round += 1;
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub sampled: Vec<usize>,
    pub received: usize,
    pub dropped: usize,
    /// Mean loss terms over clients whose gradient was received.
    pub loss: Option<LossBreakdown>,
    pub sigma_mean: f64,
    pub seconds: f64,
}

impl RoundReport {
    pub fn mean_loss(&self) -> f64 {
        self.loss.as_ref().map_or(f64::NAN, |l| l.total)
    }
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: GlobalModel,
    pub reports: Vec<RoundReport>,
    /// Every client stopped before the round cap.
    pub terminated: bool,
}

/// Algorithm loop: sample, local protected steps (in parallel), deliver
/// encoded messages, aggregate, update. `observer` sees every message that
/// crosses the client boundary.
pub fn run_training(
    init: ModelParams,
    clients: &mut [ClientState],
    ctx: &TrainContext,
    mut observer: Option<&mut dyn FnMut(&[u8])>,
) -> Result<TrainingOutcome> {
    ctx.model.validate()?;
    ctx.fed.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.fed.threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut global = GlobalModel::new(init, ctx.fed.optimizer);
    let mut reports = Vec::with_capacity(ctx.fed.rounds);
    let mut terminated = false;
    for round in 1..=ctx.fed.rounds {
        let active: Vec<usize> = (0..clients.len()).filter(|&i| clients[i].active).collect();
        if active.is_empty() {
            terminated = true;
            break;
        }
        let start = Instant::now();
        let sampled = sample_clients(clients.len(), &active, ctx.fed.rho, round, ctx.seed)?;
        let chosen: BTreeSet<usize> = sampled.iter().copied().collect();
        let params = &global.params;
        let outcomes: Vec<ClientOutcome> = pool.install(|| {
            clients
                .par_iter_mut()
                .enumerate()
                .filter(|(i, _)| chosen.contains(i))
                .map(|(i, c)| client_step(i, c, params, round, ctx))
                .collect::<Result<Vec<_>>>()
        })?;

        let mut gradients = Vec::new();
        let mut losses = Vec::new();
        let mut sigmas = Vec::new();
        let mut dropped = 0;
        for o in &outcomes {
            if let Some(obs) = observer.as_mut() {
                obs(&o.message);
            }
            match ClientMessage::decode(&o.message)? {
                ClientMessage::Gradient { gradient, .. } => {
                    gradients.push(gradient);
                    losses.push(o.loss.clone());
                    sigmas.push(o.sigma);
                }
                ClientMessage::Stop { .. } => dropped += 1,
            }
        }
        let applied = aggregate_and_update(&mut global, &gradients, ctx.fed.lr)?;
        if !applied {
            log::warn!("round {round}: no gradients received; update skipped");
        }
        reports.push(RoundReport {
            round,
            sampled,
            received: gradients.len(),
            dropped,
            loss: (!losses.is_empty()).then(|| mean_breakdown(&losses)),
            sigma_mean: if sigmas.is_empty() { 0.0 } else { sigmas.iter().sum::<f64>() / sigmas.len() as f64 },
            seconds: if ctx.fed.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        });
        log::info!(
            "round {round}: received {} dropped {} loss {:.5}",
            gradients.len(),
            dropped,
            reports.last().map_or(f64::NAN, RoundReport::mean_loss)
        );
    }
    if !terminated && ctx.fed.rounds > 0 {
        terminated = clients.iter().all(|c| !c.active);
    }
    Ok(TrainingOutcome { model: global, reports, terminated })
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    sampled: usize,
    received: usize,
    dropped: usize,
    mean_loss: f64,
    sigma_mean: f64,
    seconds: f64,
}

#[derive(Serialize)]
struct LossRow {
    round: usize,
    bce_a: f64,
    bce_b: f64,
    idra: f64,
    cdrd: f64,
    total: f64,
}

pub fn write_round_reports(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(RoundRow {
            round: r.round,
            sampled: r.sampled.len(),
            received: r.received,
            dropped: r.dropped,
            mean_loss: r.mean_loss(),
            sigma_mean: r.sigma_mean,
            seconds: r.seconds,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Weighted loss contributions per round; a disabled term logs exactly 0.
pub fn write_loss_terms(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        if let Some(l) = &r.loss {
            w.serialize(LossRow {
                round: r.round,
                bce_a: l.bce_a,
                bce_b: l.bce_b,
                idra: l.idra_contribution(),
                cdrd: l.cdrd_contribution(),
                total: l.total,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
