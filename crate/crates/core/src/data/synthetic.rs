use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Domain, RawInteraction};
use crate::error::{Error, Result};

fn default_users() -> usize {
    200
}
fn default_items() -> usize {
    500
}
fn default_latent() -> usize {
    8
}
fn default_sparsity() -> f64 {
    0.97
}
fn default_popularity() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    0.5
}
fn default_min_events() -> usize {
    1
}
fn default_time_span() -> i64 {
    1_000_000
}

/// Latent-factor cross-domain corpus generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default = "default_items")]
    pub items_per_domain: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// Fraction of empty user-item cells in each domain.
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    /// Scale of the per-item popularity offset.
    #[serde(default = "default_popularity")]
    pub popularity: f64,
    /// Scale of the per-cell affinity noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Events guaranteed to every user in each domain.
    #[serde(default = "default_min_events")]
    pub min_user_events: usize,
    #[serde(default = "default_time_span")]
    pub time_span: i64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: default_users(),
            items_per_domain: default_items(),
            latent_dim: default_latent(),
            sparsity: default_sparsity(),
            popularity: default_popularity(),
            noise: default_noise(),
            min_user_events: default_min_events(),
            time_span: default_time_span(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Events per domain implied by the sparsity target.
    pub fn events_per_domain(&self) -> usize {
        ((1.0 - self.sparsity) * (self.users * self.items_per_domain) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.users < 2 || self.items_per_domain < 2 || self.latent_dim == 0 {
            return Err(Error::Config("synthetic.users and synthetic.items_per_domain must be at least 2".into()));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(Error::Config(format!("synthetic.sparsity = {} outside (0, 1)", self.sparsity)));
        }
        let needed = self.users * self.min_user_events.max(1);
        if self.events_per_domain() < needed || self.min_user_events > self.items_per_domain {
            return Err(Error::Config(format!(
                "synthetic.sparsity = {} leaves {} events per domain, fewer than the {needed} needed for {} users",
                self.sparsity,
                self.events_per_domain(),
                self.users
            )));
        }
        if self.time_span <= 0 {
            return Err(Error::Config("synthetic.time_span must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

/// Generates interactions whose affinity is a shared user factor against
/// domain-specific item factors plus item popularity and noise. Each user
/// receives their `min_user_events` best items per domain; the remaining
/// events go to the globally highest-affinity cells.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<RawInteraction>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.latent_dim;
    let users = gaussian_rows(&mut rng, cfg.users, d);
    let scale = 1.0 / (d as f64).sqrt();
    let budget = cfg.events_per_domain();
    let mut out = Vec::with_capacity(2 * budget);
    for domain in [Domain::A, Domain::B] {
        let items = gaussian_rows(&mut rng, cfg.items_per_domain, d);
        let popularity: Vec<f64> =
            (0..cfg.items_per_domain).map(|_| cfg.popularity * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(cfg.users * cfg.items_per_domain);
        for (u, uv) in users.iter().enumerate() {
            for (i, iv) in items.iter().enumerate() {
                let dot: f64 = uv.iter().zip(iv).map(|(a, b)| a * b).sum();
                let noise: f64 = rng.sample(StandardNormal);
                cells.push((scale * dot + popularity[i] + cfg.noise * noise, u, i));
            }
        }
        let mut chosen = vec![false; cells.len()];
        let mut taken = 0;
        for u in 0..cfg.users {
            let row = u * cfg.items_per_domain;
            let mut order: Vec<usize> = (row..row + cfg.items_per_domain).collect();
            order.sort_by(|&x, &y| cells[y].0.total_cmp(&cells[x].0).then(x.cmp(&y)));
            for &c in order.iter().take(cfg.min_user_events) {
                chosen[c] = true;
                taken += 1;
            }
        }
        let mut order: Vec<usize> = (0..cells.len()).filter(|&c| !chosen[c]).collect();
        order.sort_by(|&x, &y| cells[y].0.total_cmp(&cells[x].0).then(x.cmp(&y)));
        for &c in order.iter().take(budget - taken) {
            chosen[c] = true;
        }
        let prefix = if domain == Domain::A { 'a' } else { 'b' };
        for (c, &(_, u, i)) in cells.iter().enumerate() {
            if chosen[c] {
                out.push(RawInteraction {
                    user: format!("u{u:05}"),
                    item: format!("{prefix}{i:05}"),
                    domain,
                    rating: 1.0,
                    ts: rng.random_range(0..cfg.time_span),
                });
            }
        }
    }
    Ok(out)
}

/// Fraction of empty user-item cells in `domain`.
pub fn realized_sparsity(records: &[RawInteraction], domain: Domain, users: usize, items: usize) -> f64 {
    let mut cells: Vec<(&str, &str)> =
        records.iter().filter(|r| r.domain == domain).map(|r| (r.user.as_str(), r.item.as_str())).collect();
    cells.sort_unstable();
    cells.dedup();
    1.0 - cells.len() as f64 / (users * items) as f64
}
