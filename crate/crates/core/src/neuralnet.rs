//! Dense tanh networks with an analytic backward pass and Adam.
//!
//! Parameters live in one flat vector (per layer: row-major weights, then
//! biases) so gradients, optimizer moments and checkpoints share a layout.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`DenseNetwork::forward_trace`]: the input
/// followed by every layer's output.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl DenseNetwork {
    /// Seeded initialization with weights drawn from N(0, 1/fan_in) and zero
    /// biases.
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = normal.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(DenseNetwork {
            layer_sizes: layer_sizes.to_vec(),
            params: vec![0.0; count],
        })
    }

    pub fn from_parts(layer_sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(&layer_sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters for {:?}, got {}",
                net.params.len(),
                layer_sizes,
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let layers = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let x = &activations[l];
            let hidden = l + 1 < layers;
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if hidden {
                        z.tanh()
                    } else {
                        z
                    }
                })
                .collect();
            activations.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Trace { activations })
    }

    /// Adds d(upstream · output)/d(params) into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() || grads.len() != self.params.len() {
            return Err(Error::invalid("gradient shape mismatch"));
        }
        let layers = self.layer_sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.activations[l];
            let mut input_delta = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = off + o * fan_in;
                for i in 0..fan_in {
                    grads[row + i] += d * x[i];
                    input_delta[i] += d * self.params[row + i];
                }
                grads[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                // x = tanh(z) for hidden layers
                for (d, a) in input_delta.iter_mut().zip(x) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = input_delta;
        }
        Ok(delta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, &Checkpoint::new(self.clone()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint<DenseNetwork> = load_json(path)?;
        let net = ck.into_inner()?;
        DenseNetwork::from_parts(net.layer_sizes, net.params)
    }
}

/// Versioned checkpoint envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub model: T,
}

impl<T> Checkpoint<T> {
    pub fn new(model: T) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
        }
    }

    pub fn into_inner(self) -> Result<T> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::ModelMissing(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        Ok(self.model)
    }
}

pub(crate) fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ModelMissing(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::ModelMissing(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("adam: parameter and gradient shapes differ"));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Largest relative disagreement between `analytic` and central finite
/// differences of `loss` around `params` with step `h`. Relative error is
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let up = loss(&work);
        work[i] = orig - h;
        let down = loss(&work);
        work[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = DenseNetwork::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let net = DenseNetwork::from_parts(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[0.3, -4.0]).unwrap(), vec![0.3, -4.0]);
    }

    #[test]
    fn two_three_one_matches_hand_evaluation() {
        // W1 rows: [0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]; b1 = [0.01, 0.02, 0.03]
        // W2 = [0.7, -0.8, 0.9]; b2 = 0.05
        let params = vec![
            0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.01, 0.02, 0.03, 0.7, -0.8, 0.9, 0.05,
        ];
        let net = DenseNetwork::from_parts(vec![2, 3, 1], params).unwrap();
        let x = [1.0, 2.0];
        let h1 = (0.1f64 * 1.0 + 0.2 * 2.0 + 0.01).tanh();
        let h2 = (-0.3f64 * 1.0 + 0.4 * 2.0 + 0.02).tanh();
        let h3 = (0.5f64 * 1.0 - 0.6 * 2.0 + 0.03).tanh();
        let expect = 0.7 * h1 - 0.8 * h2 + 0.9 * h3 + 0.05;
        let out = net.forward(&x).unwrap();
        assert!((out[0] - expect).abs() < 1e-15);
        // frozen from the hand evaluation above
        assert!((out[0] + 0.529_680_265_074_327_9).abs() < 1e-12, "{}", out[0]);
    }

    #[test]
    fn rejects_wrong_input_length() {
        let net = DenseNetwork::zeros(&[3, 2]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = DenseNetwork::new(&[3, 2], &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let trace = net.forward_trace(&x).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.backward(&trace, &[1.0, 1.0], &mut g).unwrap();
        assert_eq!(&g[..6], &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(&g[6..], &[1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        let trace = net.forward_trace(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let dx = net.backward(&trace, &[0.0; 3], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1, 0.05];
        let up = [0.4, -1.3, 0.8];
        let trace = net.forward_trace(&x).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let dx = net.backward(&trace, &up, &mut g).unwrap();
        let loss = |p: &[f64]| {
            let n = DenseNetwork::from_parts(vec![4, 8, 3], p.to_vec()).unwrap();
            n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        assert!(gradient_check(net.params(), &g, 1e-5, loss) < 1e-4);

        let loss_x = |xs: &[f64]| net.forward(xs).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        assert!(gradient_check(&x, &dx, 1e-5, loss_x) < 1e-4);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0, 0.0];
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(2, cfg);
        adam_step(&mut p, &[3.0, -0.2], &mut s).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        assert!((p[0] + cfg.lr).abs() < 1e-10);
        assert!((p[1] - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut net = DenseNetwork::new(&[2, 4, 1], &mut rng).unwrap();
            let mut s = AdamState::new(net.param_count(), AdamConfig::default());
            for k in 0..20 {
                let x = [k as f64 * 0.1, 1.0];
                let t = net.forward_trace(&x).unwrap();
                let mut g = vec![0.0; net.param_count()];
                net.backward(&t, &[t.output()[0] - 0.5], &mut g).unwrap();
                adam_step(net.params_mut(), &g, &mut s).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNetwork::new(&[5, 7, 3], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(DenseNetwork::load(&path).unwrap(), net);
        assert!(matches!(
            DenseNetwork::load(&dir.path().join("missing.json")),
            Err(Error::ModelMissing(_))
        ));
    }
}
