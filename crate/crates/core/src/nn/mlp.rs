use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerGrads, Linear};
use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAX_LAYERS: usize = 8;
const WEIGHT_NAMES: [&str; MAX_LAYERS] = ["l0.w", "l1.w", "l2.w", "l3.w", "l4.w", "l5.w", "l6.w", "l7.w"];
const BIAS_NAMES: [&str; MAX_LAYERS] = ["l0.b", "l1.b", "l2.b", "l3.b", "l4.b", "l5.b", "l6.b", "l7.b"];

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// CTR head: ReLU hidden layers followed by a scalar sigmoid output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    probs: Matrix,
}

impl MlpCache {
    pub fn probabilities(&self) -> &Matrix {
        &self.probs
    }

    /// Pre-sigmoid outputs, one per input row.
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().expect("at least one layer").data()
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden)?;
        Ok(Self { layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect() })
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let dims = Self::dims(input_dim, hidden)?;
        Ok(Self { layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect() })
    }

    fn dims(input_dim: usize, hidden: &[usize]) -> Result<Vec<usize>> {
        if hidden.len() + 1 > MAX_LAYERS {
            return Err(Error::Config(format!("at most {} hidden layers", MAX_LAYERS - 1)));
        }
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(dims)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    /// Widths of the hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.w.cols()).collect()
    }

    /// Predicted probability for each input row.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.forward(x, None).map(|(p, _)| p.into_data())
    }

    /// Backward starting from the gradient w.r.t. the pre-sigmoid logits.
    pub fn backward_from_logits(&self, cache: &MlpCache, d_logits: &Matrix) -> Result<LayerGrads> {
        let mut params = BTreeMap::new();
        let mut d = d_logits.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if idx + 1 < self.layers.len() {
                for (g, &z) in d.data_mut().iter_mut().zip(cache.pre_activations[idx].data()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let input = &cache.inputs[idx];
            params.insert(WEIGHT_NAMES[idx], input.t_matmul(&d)?);
            params.insert(BIAS_NAMES[idx], d.column_sums());
            d = d.matmul_t(&layer.w)?;
        }
        Ok(LayerGrads { params, input: d })
    }
}

impl Layer for Mlp {
    type Cache = MlpCache;

    fn forward(&self, input: &Matrix, _mask: Option<&[bool]>) -> Result<(Matrix, MlpCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "head expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x)?;
            inputs.push(x);
            x = if idx + 1 < self.layers.len() { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre_activations.push(z);
        }
        let probs = x.map(sigmoid);
        Ok((probs.clone(), MlpCache { inputs, pre_activations, probs }))
    }

    fn backward(&self, cache: &MlpCache, upstream: &Matrix) -> Result<LayerGrads> {
        let d_logits = Matrix::from_fn(upstream.rows(), 1, |i, _| {
            let p = cache.probs.get(i, 0);
            upstream.get(i, 0) * p * (1.0 - p)
        });
        self.backward_from_logits(cache, &d_logits)
    }

    fn params(&self) -> Vec<(&'static str, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| [(WEIGHT_NAMES[i], &l.w), (BIAS_NAMES[i], &l.b)])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| [(WEIGHT_NAMES[i], &mut l.w), (BIAS_NAMES[i], &mut l.b)])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_predict_one_half() {
        let mlp = Mlp::zeros(6, &[512, 256, 128]).unwrap();
        let x = Matrix::filled(2, 6, 0.7);
        assert_eq!(mlp.predict(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn paper_widths_instantiate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(40, &[512, 256, 128], &mut rng).unwrap();
        assert_eq!(mlp.hidden_widths(), vec![512, 256, 128]);
        assert_eq!(mlp.layers.last().unwrap().w.cols(), 1);
    }

    #[test]
    fn matches_layer_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(3, &[4, 2], &mut rng).unwrap();
        let x = [0.2, -0.5, 1.3];
        let mut act = x.to_vec();
        for (idx, layer) in mlp.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.w.cols()];
            for (j, n) in next.iter_mut().enumerate() {
                *n = layer.b.get(0, j) + (0..act.len()).map(|i| act[i] * layer.w.get(i, j)).sum::<f64>();
                if idx + 1 < mlp.layers.len() {
                    *n = n.max(0.0);
                }
            }
            act = next;
        }
        let want = 1.0 / (1.0 + (-act[0]).exp());
        let got = mlp.predict(&Matrix::row_vector(x.to_vec())).unwrap()[0];
        assert!((got - want).abs() < 1e-14);
        assert!(got > 0.0 && got < 1.0);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mlp = Mlp::zeros(3, &[2]).unwrap();
        assert!(matches!(mlp.predict(&Matrix::zeros(1, 4)), Err(Error::Dimension(_))));
    }
}
