//! Fully connected network with ReLU hidden layers and a logistic output,
//! trained with Adam on binary cross-entropy.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    #[serde(rename = "cols")]
    pub inputs: usize,
    #[serde(rename = "rows")]
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform initialization with bound `sqrt(gain / fan_in)`, zero bias.
    pub fn random<R: Rng>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let bound = (gain / inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Model(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite layer parameter".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against target `y`, computed from the logit.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-style initialization for hidden layers, Glorot-style for the output.
    pub fn random<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        ensure_arg!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        ensure_arg!(*sizes.last().unwrap() == 1, "output layer must have one unit");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { 6.0 * w[0] as f64 / (w[0] + w[1]) as f64 } else { 6.0 };
                Dense::random(w[0], w[1], gain, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.inputs).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        s.extend(self.layers.last().map(|l| l.outputs));
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Model("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Model(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        if self.layers.last().unwrap().outputs != 1 {
            return Err(Error::Model("output layer must have one unit".into()));
        }
        self.layers.iter().try_for_each(Dense::validate)
    }

    /// Pre-activation of the output unit.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.outputs];
            layer.forward_into(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = next;
        }
        cur[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean loss and gradients over a batch; gradients share the layer layout.
    pub fn loss_and_grad(&self, batch: &[&[f64]], targets: &[f64]) -> (f64, Vec<Dense>) {
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        for (x, &y) in batch.iter().zip(targets) {
            acts.clear();
            acts.push(x.to_vec());
            for (i, layer) in self.layers.iter().enumerate() {
                let mut next = vec![0.0; layer.outputs];
                layer.forward_into(acts.last().unwrap(), &mut next);
                if i < last {
                    next.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(next);
            }
            let z = acts[last + 1][0];
            loss += bce_with_logit(z, y);

            let mut delta = vec![sigmoid(z) - y];
            for i in (0..self.layers.len()).rev() {
                let layer = &self.layers[i];
                let input = &acts[i];
                let g = &mut grads[i];
                for (o, &d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    for (gw, &v) in g.weights[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                        *gw += d * v;
                    }
                }
                if i > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for (o, &d) in delta.iter().enumerate() {
                        for (p, &w) in prev.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                            *p += d * w;
                        }
                    }
                    for (p, &a) in prev.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for g in &mut grads {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= scale);
        }
        (loss * scale, grads)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n_params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let g_iter = grads.iter().flat_map(|g| g.weights.iter().chain(&g.bias));
        for (((p, g), m), v) in net.params_mut().zip(g_iter).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

pub fn n_params(net: &Mlp) -> usize {
    net.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_scores_half() {
        let net = Mlp::zeros(&[102, 64, 32, 16, 1]);
        assert_eq!(net.predict(&[0.3; 102]), 0.5);
        assert_eq!(net.sizes(), vec![102, 64, 32, 16, 1]);
        net.validate().unwrap();
    }

    #[test]
    fn hand_computed_forward_pass() {
        // h = relu([1 -1; 2 0] x + [0, -1]) ; z = [0.5 1] h + 0.25
        let net = Mlp {
            layers: vec![
                Dense {
                    inputs: 2,
                    outputs: 2,
                    weights: vec![1.0, -1.0, 2.0, 0.0],
                    bias: vec![0.0, -1.0],
                },
                Dense {
                    inputs: 2,
                    outputs: 1,
                    weights: vec![0.5, 1.0],
                    bias: vec![0.25],
                },
            ],
        };
        // x = (1, 3): h = relu(-2, 1) = (0, 1), z = 1.25
        assert_eq!(net.logit(&[1.0, 3.0]), 1.25);
        assert!((net.predict(&[1.0, 3.0]) - 1.0 / (1.0 + (-1.25f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::random(&[4, 5, 3, 1], &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect()).collect();
        let batch: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let ys = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let (_, grads) = net.loss_and_grad(&batch, &ys);
        let h = 1e-6;
        for (li, layer) in net.layers.iter().enumerate() {
            for wi in 0..layer.weights.len() {
                let mut plus = net.clone();
                plus.layers[li].weights[wi] += h;
                let mut minus = net.clone();
                minus.layers[li].weights[wi] -= h;
                let num = (plus.loss_and_grad(&batch, &ys).0 - minus.loss_and_grad(&batch, &ys).0) / (2.0 * h);
                assert!((num - grads[li].weights[wi]).abs() < 1e-6, "layer {li} w{wi}");
            }
            for bi in 0..layer.bias.len() {
                let mut plus = net.clone();
                plus.layers[li].bias[bi] += h;
                let mut minus = net.clone();
                minus.layers[li].bias[bi] -= h;
                let num = (plus.loss_and_grad(&batch, &ys).0 - minus.loss_and_grad(&batch, &ys).0) / (2.0 * h);
                assert!((num - grads[li].bias[bi]).abs() < 1e-6, "layer {li} b{bi}");
            }
        }
    }

    #[test]
    fn stable_loss_at_extremes() {
        assert!(bce_with_logit(800.0, 1.0) < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn validate_catches_shape_errors() {
        let mut net = Mlp::zeros(&[3, 2, 1]);
        net.layers[1].inputs = 4;
        assert!(net.validate().is_err());
        let mut net = Mlp::zeros(&[3, 2, 1]);
        net.layers[0].bias.pop();
        assert!(net.validate().is_err());
    }
}
