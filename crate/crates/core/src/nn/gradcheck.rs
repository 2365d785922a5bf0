//! Finite-difference verification of hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::Layer;
use super::matrix::Matrix;
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central finite difference of `f` along every coordinate of `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the entry with the largest error, e.g. `ffn.w1[3]` or `input[0]`.
    pub worst_entry: String,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.entries_checked += 1;
        if err > self.max_rel_error || self.worst_entry.is_empty() {
            self.max_rel_error = err;
            self.worst_entry = format!("{name}[{idx}]");
        }
    }
}

/// Checks every parameter and input gradient of `layer` against central
/// differences of the scalar objective `Σ U ⊙ layer(input)`, where `U` is a
/// random upstream gradient drawn from `seed`.
pub fn grad_check<L: Layer + Clone>(
    layer: &L,
    input: &Matrix,
    mask: Option<&[bool]>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (out, cache) = layer.forward(input, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let upstream = Matrix::from_fn(out.rows(), out.cols(), |_, _| rng.random_range(-1.0..1.0));
    let grads = layer.backward(&cache, &upstream)?;

    let objective = |l: &L, x: &Matrix| -> f64 {
        let (y, _) = l.forward(x, mask).expect("forward succeeded once");
        y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_entry: String::new(),
        entries_checked: 0,
        tolerance,
    };

    let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
    for (p_idx, name) in names.iter().enumerate() {
        let analytic = grads.params.get(name).cloned().unwrap_or_else(|| {
            let (r, c) = layer.params()[p_idx].1.shape();
            Matrix::zeros(r, c)
        });
        let mut probe = layer.clone();
        for e in 0..analytic.len() {
            let orig = probe.params()[p_idx].1.data()[e];
            probe.params_mut()[p_idx].1.data_mut()[e] = orig + FD_STEP;
            let up = objective(&probe, input);
            probe.params_mut()[p_idx].1.data_mut()[e] = orig - FD_STEP;
            let down = objective(&probe, input);
            probe.params_mut()[p_idx].1.data_mut()[e] = orig;
            report.record(name, e, analytic.data()[e], (up - down) / (2.0 * FD_STEP));
        }
    }

    let numeric_input = numeric_gradient(
        |x| objective(layer, &Matrix::new(input.rows(), input.cols(), x.to_vec()).expect("finite probe")),
        input.data(),
    );
    for (e, (&a, &n)) in grads.input.data().iter().zip(&numeric_input).enumerate() {
        report.record("input", e, a, n);
    }
    Ok(report)
}
