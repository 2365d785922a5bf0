//! Adaptive local differential privacy: clipping, decaying Gaussian noise
//! and a Rényi-DP budget accountant.

mod accountant;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::norm;

pub use accountant::{convert_rdp_to_dp, rdp_cost, rdp_cost_maintext, ZETA_GRID};

/// How the per-round RDP cost is charged against the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccountingMode {
    /// Subtract each round's cost from the remaining budget directly.
    Decrement,
    /// Accumulate RDP and compare its (ε, δ) conversion to the budget.
    RdpConvert,
}

/// Which per-round cost expression to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostFormula {
    /// Sensitivity `2θ`, `ε_GM = 2ζθ²/σ²`.
    Appendix,
    /// Exponent `(ζ−1)θ²/σ²`.
    MainText,
}

fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-5
}
fn default_zeta() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_decay() -> f64 {
    0.997
}
fn default_mode() -> AccountingMode {
    AccountingMode::Decrement
}
fn default_enabled() -> bool {
    true
}
fn default_formula() -> CostFormula {
    CostFormula::Appendix
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// When false clients release raw gradients; see [`PrivacyConfig::effective`].
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    /// Initial budget `ε_0`; `inf` disables accounting.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// RDP order.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    /// Track every order in [`ZETA_GRID`] and report the best conversion
    /// (rdp-convert mode only).
    #[serde(default)]
    pub optimize_zeta: bool,
    /// Clipping threshold; `inf` disables clipping.
    #[serde(default = "default_one")]
    pub theta: f64,
    #[serde(default = "default_one")]
    pub sigma0: f64,
    /// Per-participation noise decay `R`.
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_mode")]
    pub mode: AccountingMode,
    #[serde(default = "default_formula")]
    pub cost_formula: CostFormula,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: default_epsilon(),
            delta: default_delta(),
            zeta: default_zeta(),
            optimize_zeta: false,
            theta: default_one(),
            sigma0: default_one(),
            decay: default_decay(),
            mode: default_mode(),
            cost_formula: default_formula(),
        }
    }
}

impl PrivacyConfig {
    /// The settings clients run with: these, or pass-through when disabled.
    pub fn effective(&self) -> Self {
        if self.enabled {
            self.clone()
        } else {
            Self::disabled()
        }
    }

    /// No clipping, no noise, unbounded budget.
    pub fn disabled() -> Self {
        Self { epsilon: f64::INFINITY, theta: f64::INFINITY, sigma0: 0.0, decay: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon > 0.0) {
            return bad(format!("privacy.epsilon = {} must be positive", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("privacy.delta = {} outside (0, 1]", self.delta));
        }
        if !(self.zeta > 1.0) || !self.zeta.is_finite() {
            return bad(format!("privacy.zeta = {} must exceed 1", self.zeta));
        }
        if !(self.theta > 0.0) {
            return bad(format!("privacy.theta = {} must be positive", self.theta));
        }
        if !(self.sigma0 >= 0.0) || !self.sigma0.is_finite() {
            return bad(format!("privacy.sigma0 = {} must be non-negative", self.sigma0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("privacy.decay = {} outside (0, 1]", self.decay));
        }
        Ok(())
    }
}

/// Scales `g` by `1 / max(1, ‖g‖/θ)`.
pub fn clip_gradient(g: &[f64], theta: f64) -> Vec<f64> {
    let factor = (norm(g) / theta).max(1.0);
    if factor == 1.0 {
        return g.to_vec();
    }
    g.iter().map(|v| v / factor).collect()
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate.
pub fn add_noise<R: Rng + ?Sized>(g: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return g.to_vec();
    }
    g.iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

/// Static noise level whose squared sum over `steps` participations equals
/// that of the schedule `σ_0·R^t`.
pub fn matched_static_sigma(sigma0: f64, decay: f64, steps: usize) -> f64 {
    if steps == 0 {
        return sigma0;
    }
    let total: f64 = (0..steps).map(|t| (sigma0 * decay.powi(t as i32)).powi(2)).sum();
    (total / steps as f64).sqrt()
}

/// A clipped, noised gradient: the only payload a client may release.
/// It can only be produced by [`PrivacyState::step`] or decoded from bytes
/// that such a payload produced.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyGradient {
    values: Vec<f64>,
}

impl NoisyGradient {
    fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Little-endian `f64` wire encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Dimension(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
        }
        Ok(Self::new(
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect(),
        ))
    }
}

/// Result of one protected step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Released(NoisyGradient),
    /// Budget exhausted; nothing was released and nothing ever will be.
    StopParticipation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub sigma: f64,
    pub per_round_cost: f64,
    pub cumulative_rdp: f64,
    pub epsilon_remaining: f64,
    pub stopped: bool,
}

/// Per-client accountant.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyState {
    pub sigma_0: f64,
    pub sigma_t: f64,
    pub epsilon_0: f64,
    pub epsilon_remaining: f64,
    pub delta: f64,
    /// Order used for charging; with `optimize_zeta` the order of the best conversion so far.
    pub zeta: f64,
    pub rho: f64,
    pub theta: f64,
    pub decay: f64,
    pub cumulative_rdp: f64,
    pub mode: AccountingMode,
    pub formula: CostFormula,
    /// Participations so far.
    pub round: usize,
    pub stopped: bool,
    orders: Vec<f64>,
    cumulative_by_order: Vec<f64>,
    trace: Vec<TraceRow>,
}

impl PrivacyState {
    pub fn new(cfg: &PrivacyConfig, rho: f64) -> Result<Self> {
        cfg.validate()?;
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("sampling ratio rho = {rho} outside (0, 1]")));
        }
        let orders = if cfg.optimize_zeta && cfg.mode == AccountingMode::RdpConvert {
            ZETA_GRID.to_vec()
        } else {
            vec![cfg.zeta]
        };
        Ok(Self {
            sigma_0: cfg.sigma0,
            sigma_t: cfg.sigma0,
            epsilon_0: cfg.epsilon,
            epsilon_remaining: cfg.epsilon,
            delta: cfg.delta,
            zeta: cfg.zeta,
            rho,
            theta: cfg.theta,
            decay: cfg.decay,
            cumulative_rdp: 0.0,
            mode: cfg.mode,
            formula: cfg.cost_formula,
            round: 0,
            stopped: false,
            cumulative_by_order: vec![0.0; orders.len()],
            orders,
            trace: Vec::new(),
        })
    }

    /// Cost of the next participation at order `zeta`.
    pub fn cost_at(&self, zeta: f64) -> f64 {
        match self.formula {
            CostFormula::Appendix => rdp_cost(zeta, self.theta, self.sigma_t, self.rho),
            CostFormula::MainText => rdp_cost_maintext(zeta, self.theta, self.sigma_t, self.rho),
        }
    }

    pub fn next_cost(&self) -> f64 {
        self.cost_at(self.zeta)
    }

    /// `σ_{t+1} = σ_0·R^{t+1}`, evaluated in closed form.
    pub fn decay_sigma(&mut self) {
        self.round += 1;
        self.sigma_t = self.sigma_0 * self.decay.powi(self.round as i32);
    }

    /// Best (ε, δ) conversion over the tracked orders, with its order.
    fn best_conversion(&self, cumulative: &[f64]) -> (f64, f64) {
        self.orders
            .iter()
            .zip(cumulative)
            .map(|(&z, &c)| (convert_rdp_to_dp(c, z, self.delta), z))
            .fold((f64::INFINITY, self.zeta), |best, cur| if cur.0 < best.0 { cur } else { best })
    }

    /// Costs of the next participation at every tracked order, and the one charged.
    fn pending_costs(&self) -> (Vec<f64>, f64) {
        let costs: Vec<f64> = self.orders.iter().map(|&z| self.cost_at(z)).collect();
        let charged = costs[self.orders.iter().position(|&z| z == self.zeta).unwrap_or(0)];
        (costs, charged)
    }

    fn exceeds_budget(&self, costs: &[f64], charged: f64) -> bool {
        if self.epsilon_0.is_infinite() {
            return false;
        }
        match self.mode {
            AccountingMode::Decrement => !(charged <= self.epsilon_remaining),
            AccountingMode::RdpConvert => {
                let projected: Vec<f64> = self.cumulative_by_order.iter().zip(costs).map(|(c, d)| c + d).collect();
                !(self.best_conversion(&projected).0 <= self.epsilon_0)
            }
        }
    }

    /// True when the next call to [`step`](Self::step) would stop participation.
    pub fn would_stop(&self) -> bool {
        let (costs, charged) = self.pending_costs();
        self.stopped || self.exceeds_budget(&costs, charged)
    }

    /// Clip, noise and account for one participation in global round `round`.
    pub fn step<R: Rng + ?Sized>(&mut self, gradient: &[f64], round: usize, rng: &mut R) -> StepOutcome {
        if self.stopped {
            return StepOutcome::StopParticipation;
        }
        let unbounded = self.epsilon_0.is_infinite();
        let (costs, charged) = self.pending_costs();
        if self.exceeds_budget(&costs, charged) {
            self.stopped = true;
            self.trace.push(TraceRow {
                round,
                sigma: self.sigma_t,
                per_round_cost: 0.0,
                cumulative_rdp: self.cumulative_rdp,
                epsilon_remaining: self.epsilon_remaining,
                stopped: true,
            });
            return StepOutcome::StopParticipation;
        }
        let noisy = add_noise(&clip_gradient(gradient, self.theta), self.sigma_t, rng);
        if !unbounded {
            for (c, d) in self.cumulative_by_order.iter_mut().zip(&costs) {
                *c += d;
            }
            match self.mode {
                AccountingMode::Decrement => {
                    self.epsilon_remaining -= charged;
                    self.cumulative_rdp += charged;
                }
                AccountingMode::RdpConvert => {
                    let (eps, zeta) = self.best_conversion(&self.cumulative_by_order);
                    let idx = self.orders.iter().position(|&z| z == zeta).unwrap_or(0);
                    self.zeta = zeta;
                    self.cumulative_rdp = self.cumulative_by_order[idx];
                    self.epsilon_remaining = self.epsilon_0 - eps;
                }
            }
        }
        self.trace.push(TraceRow {
            round,
            sigma: self.sigma_t,
            per_round_cost: if unbounded { 0.0 } else { charged },
            cumulative_rdp: self.cumulative_rdp,
            epsilon_remaining: self.epsilon_remaining,
            stopped: false,
        });
        self.decay_sigma();
        StepOutcome::Released(NoisyGradient::new(noisy))
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clipping_cases() {
        let g = clip_gradient(&[2.0, 1.0, 2.0], 1.0);
        assert!((norm(&g) - 1.0).abs() < 1e-12);
        assert_eq!(clip_gradient(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip_gradient(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(clip_gradient(&[1e6, -3.0], f64::INFINITY), vec![1e6, -3.0]);
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let sigma = 0.7;
        let draws: Vec<f64> = (0..n).map(|_| add_noise(&[2.0], sigma, &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0).abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05);
        assert_eq!(add_noise(&[1.5, -2.0], 0.0, &mut rng), vec![1.5, -2.0]);
        let a = add_noise(&[0.0; 4], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let b = add_noise(&[0.0; 4], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn decay_follows_closed_form() {
        let cfg = PrivacyConfig { sigma0: 2.0, ..PrivacyConfig::default() };
        let mut s = PrivacyState::new(&cfg, 0.01).unwrap();
        s.decay_sigma();
        assert!((s.sigma_t - 1.994).abs() < 1e-15);
        let mut flat = PrivacyState::new(&PrivacyConfig { decay: 1.0, ..cfg }, 0.01).unwrap();
        for _ in 0..100 {
            flat.decay_sigma();
        }
        assert_eq!(flat.sigma_t, 2.0);
    }

    #[test]
    fn pass_through_when_privacy_disabled() {
        let mut s = PrivacyState::new(&PrivacyConfig::disabled(), 1.0).unwrap();
        let g = vec![3.0, -40.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for r in 0..5 {
            assert_eq!(s.step(&g, r, &mut rng), StepOutcome::Released(NoisyGradient::new(g.clone())));
        }
    }

    #[test]
    fn stop_is_absorbing_and_budget_is_conserved() {
        let cfg = PrivacyConfig { epsilon: 1e-3, theta: 0.5, ..PrivacyConfig::default() };
        let mut s = PrivacyState::new(&cfg, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut released = 0;
        let mut charged = 0.0;
        for r in 0..50 {
            let cost = s.next_cost();
            match s.step(&[1.0, 1.0], r, &mut rng) {
                StepOutcome::Released(_) => {
                    assert!(!s.stopped);
                    released += 1;
                    charged += cost;
                }
                StepOutcome::StopParticipation => assert!(s.stopped),
            }
        }
        assert!(released > 0 && released < 50);
        assert!((charged - (cfg.epsilon - s.epsilon_remaining)).abs() < 1e-12);
        assert_eq!(s.trace().iter().filter(|t| t.stopped).count(), 1);
        let rows = s.trace();
        assert!(rows.windows(2).all(|w| w[0].cumulative_rdp <= w[1].cumulative_rdp));
    }

    #[test]
    fn rdp_convert_mode_stops_on_converted_epsilon() {
        let cfg = PrivacyConfig { epsilon: 20.0, mode: AccountingMode::RdpConvert, ..PrivacyConfig::default() };
        let mut s = PrivacyState::new(&cfg, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rounds = 0;
        while let StepOutcome::Released(_) = s.step(&[0.1], rounds, &mut rng) {
            rounds += 1;
            assert!(convert_rdp_to_dp(s.cumulative_rdp, s.zeta, s.delta) <= 20.0);
            assert!(s.epsilon_remaining <= s.epsilon_0);
        }
        assert!(rounds > 0);
    }

    #[test]
    fn optimised_order_never_converts_worse() {
        let base = PrivacyConfig { epsilon: 50.0, mode: AccountingMode::RdpConvert, sigma0: 3.0, ..PrivacyConfig::default() };
        let count = |cfg: &PrivacyConfig| {
            let mut s = PrivacyState::new(cfg, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut n = 0;
            while n < 5000 && matches!(s.step(&[0.1], n, &mut rng), StepOutcome::Released(_)) {
                n += 1;
            }
            n
        };
        assert!(count(&PrivacyConfig { optimize_zeta: true, ..base.clone() }) >= count(&base));
    }

    #[test]
    fn payload_bytes_round_trip() {
        let g = NoisyGradient::new(vec![1.25, -0.0, 3e-300]);
        assert_eq!(NoisyGradient::from_bytes(&g.to_bytes()).unwrap(), g);
        assert!(NoisyGradient::from_bytes(&[0u8; 7]).is_err());
    }

    #[test]
    fn matched_sigma_equalises_total_noise() {
        let s = matched_static_sigma(1.0, 0.997, 50);
        let decayed: f64 = (0..50).map(|t| 0.997f64.powi(2 * t)).sum();
        assert!((50.0 * s * s - decayed).abs() < 1e-12);
        assert!((matched_static_sigma(0.4, 1.0, 10) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        for bad in [
            PrivacyConfig { zeta: 1.0, ..PrivacyConfig::default() },
            PrivacyConfig { delta: 0.0, ..PrivacyConfig::default() },
            PrivacyConfig { theta: 0.0, ..PrivacyConfig::default() },
            PrivacyConfig { decay: 1.5, ..PrivacyConfig::default() },
        ] {
            assert!(bad.validate().unwrap_err().is_config());
        }
        assert!(PrivacyState::new(&PrivacyConfig::default(), 0.0).is_err());
    }
}
