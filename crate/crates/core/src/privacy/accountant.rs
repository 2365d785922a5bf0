/// Orders scanned when optimising the RDP-to-DP conversion.
pub const ZETA_GRID: [f64; 64] = {
    let mut grid = [0.0; 64];
    grid[0] = 1.5;
    let mut i = 1;
    while i < 64 {
        grid[i] = (i + 1) as f64;
        i += 1;
    }
    grid
};

/// `(1/(ζ−1))·ln(1 + ρ²(e^x − 1))` for a per-step exponent `x`, with the
/// `ρ = 0` and `ρ = 1` identities exact and a log-space branch for large `x`.
fn amplified(zeta: f64, x: f64, unamplified: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    if rho == 1.0 || unamplified.is_infinite() {
        return unamplified;
    }
    let r2 = rho * rho;
    let log_term = if x < 500.0 {
        (r2 * x.exp_m1()).ln_1p()
    } else {
        // ln(ρ² e^x (1 + (1/ρ² − 1) e^{−x}))
        x + r2.ln() + ((1.0 / r2 - 1.0) * (-x).exp()).ln_1p()
    };
    log_term / (zeta - 1.0)
}

fn degenerate(theta: f64, sigma: f64) -> bool {
    sigma == 0.0 || theta.is_infinite()
}

/// Per-round RDP cost from the Gaussian mechanism with sensitivity `2θ`
/// (`ε_GM = 2ζθ²/σ²`) amplified by client sampling at ratio `ρ`.
/// Infinite when `σ = 0` or `θ = ∞` (unless `ρ = 0`).
pub fn rdp_cost(zeta: f64, theta: f64, sigma: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    if degenerate(theta, sigma) {
        return f64::INFINITY;
    }
    let eps_gm = 2.0 * zeta * theta * theta / (sigma * sigma);
    amplified(zeta, (zeta - 1.0) * eps_gm, eps_gm, rho)
}

/// Variant with exponent `(ζ−1)θ²/σ²`; equals `θ²/σ²` at `ρ = 1`.
pub fn rdp_cost_maintext(zeta: f64, theta: f64, sigma: f64, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    if degenerate(theta, sigma) {
        return f64::INFINITY;
    }
    let base = theta * theta / (sigma * sigma);
    amplified(zeta, (zeta - 1.0) * base, base, rho)
}

/// `ε = rdp − ln δ / (ζ − 1)`.
pub fn convert_rdp_to_dp(cumulative_rdp: f64, zeta: f64, delta: f64) -> f64 {
    cumulative_rdp - delta.ln() / (zeta - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spans_one_and_a_half_to_sixty_four() {
        assert_eq!(ZETA_GRID[0], 1.5);
        assert_eq!(ZETA_GRID[1], 2.0);
        assert_eq!(ZETA_GRID[63], 64.0);
    }

    #[test]
    fn worked_examples() {
        assert_eq!(rdp_cost(2.0, 0.5, 1.0, 0.0), 0.0);
        assert_eq!(rdp_cost(2.0, 0.5, 1.0, 1.0), 1.0);
        assert!((rdp_cost(2.0, 0.5, 1.0, 0.01) - 1.718_134_220_745_479e-4).abs() < 1e-15);
        assert_eq!(rdp_cost_maintext(2.0, 0.5, 1.0, 0.0), 0.0);
        assert!((rdp_cost_maintext(2.0, 0.5, 1.0, 0.01) - 2.840_213_832_422_485e-5).abs() < 1e-15);
        assert_eq!(convert_rdp_to_dp(0.7, 3.0, 1.0), 0.7);
        assert_eq!(convert_rdp_to_dp(1.0, 2.0, (-10.0f64).exp()), 11.0);
        assert!((convert_rdp_to_dp(0.5, 2.0, 1e-5) - 12.012_925_464_970_229).abs() < 1e-12);
    }

    #[test]
    fn log_space_branch_is_continuous() {
        let (z, rho) = (3.0, 0.05);
        let below = amplified(z, 499.999_999, f64::NAN, rho);
        let above = amplified(z, 500.000_001, f64::NAN, rho);
        assert!((above - below).abs() < 1e-6);
        assert!(rdp_cost(64.0, 10.0, 0.01, 0.01).is_finite());
    }

    #[test]
    fn degenerate_noise_is_infinite_cost() {
        assert_eq!(rdp_cost(2.0, 1.0, 0.0, 0.5), f64::INFINITY);
        assert_eq!(rdp_cost(2.0, f64::INFINITY, 1.0, 0.5), f64::INFINITY);
        assert_eq!(rdp_cost_maintext(2.0, 1.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn main_text_cost_is_smaller_when_two_zeta_exceeds_one() {
        for &z in &[1.5, 2.0, 4.0, 16.0] {
            for &s in &[0.5, 1.0, 3.0] {
                for &r in &[0.01, 0.3, 0.9] {
                    assert!(rdp_cost_maintext(z, 0.5, s, r) < rdp_cost(z, 0.5, s, r));
                }
            }
        }
    }
}
