//! Conditional VAE over joint configurations.
//!
//! The condition (obstacles, start, goal) goes through a shared encoder; a
//! posterior network maps the encoded target plus condition to a diagonal
//! Gaussian over the latent space, and a decoder maps a latent sample plus
//! condition back to joint angles. Reconstruction is measured in the
//! kinematic/positional feature space rather than raw angles, and the
//! latent prior is the standard normal.

use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{encode_into, encoding_dim, feature_distance_grad, FeatureParams, JointConfig, RobotModel};
use crate::neuralnet::{adam_step, load_json, save_json, AdamConfig, AdamState, Checkpoint, DenseNetwork};
use crate::world::{encode_world, World};

pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Network sizes and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeShape {
    pub latent_dim: usize,
    pub beta: f64,
    pub k_max: usize,
    pub encoder_hidden: Vec<usize>,
    pub condition_dim: usize,
    pub posterior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub features: FeatureParams,
}

impl Default for CvaeShape {
    fn default() -> Self {
        CvaeShape {
            latent_dim: 4,
            beta: 0.01,
            k_max: 8,
            encoder_hidden: vec![64],
            condition_dim: 32,
            posterior_hidden: vec![64],
            decoder_hidden: vec![64, 64],
            features: FeatureParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeModel {
    pub robot: RobotModel,
    pub shape: CvaeShape,
    pub encoder: DenseNetwork,
    pub posterior: DenseNetwork,
    pub decoder: DenseNetwork,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeLossReport {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// One training pair: the raw encoder input for a condition and the target
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeSample {
    pub condition_input: Vec<f64>,
    pub x: JointConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

fn layers(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(hidden.len() + 2);
    v.push(input);
    v.extend_from_slice(hidden);
    v.push(output);
    v
}

/// Encoder input for `(world, a, b)`: packed obstacles then the positional
/// encodings of both configurations.
pub fn condition_input(
    world: &World,
    a: &JointConfig,
    b: &JointConfig,
    k_max: usize,
    levels: usize,
) -> Result<Vec<f64>> {
    let mut v = encode_world(world, k_max)?;
    encode_into(a.as_slice(), levels, &mut v);
    encode_into(b.as_slice(), levels, &mut v);
    Ok(v)
}

/// `½ Σ (σ² + μ² − 1 − ln σ²)`: KL divergence of N(μ, diag σ²) from N(0, I).
pub fn kl_normal(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::invalid("kl_normal: μ and σ lengths differ"));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("kl_normal: σ must be positive".into()));
    }
    Ok(0.5
        * mu
            .iter()
            .zip(sigma)
            .map(|(m, s)| s * s + m * m - 1.0 - (s * s).ln())
            .sum::<f64>())
}

/// Reparametrized draw `μ + σ ⊙ ε` with ε ~ N(0, I).
pub fn sample_latent(mu: &[f64], sigma: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| {
            let e: f64 = rng.sample(StandardNormal);
            m + s * e
        })
        .collect()
}

impl CvaeModel {
    pub fn new(robot: RobotModel, shape: CvaeShape, seed: u64) -> Result<Self> {
        if shape.latent_dim == 0 || shape.condition_dim == 0 {
            return Err(Error::invalid("latent and condition dimensions must be positive"));
        }
        let n = robot.dof();
        let enc = encoding_dim(n, shape.features.levels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = DenseNetwork::new(
            &layers(3 * shape.k_max + 2 * enc, &shape.encoder_hidden, shape.condition_dim),
            &mut rng,
        )?;
        let posterior = DenseNetwork::new(
            &layers(enc + shape.condition_dim, &shape.posterior_hidden, 2 * shape.latent_dim),
            &mut rng,
        )?;
        let decoder = DenseNetwork::new(
            &layers(shape.latent_dim + shape.condition_dim, &shape.decoder_hidden, n),
            &mut rng,
        )?;
        Ok(CvaeModel {
            robot,
            shape,
            encoder,
            posterior,
            decoder,
        })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.posterior.param_count() + self.decoder.param_count()
    }

    /// Encoder, posterior and decoder parameters concatenated.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.encoder.params());
        v.extend_from_slice(self.posterior.params());
        v.extend_from_slice(self.decoder.params());
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid("parameter vector length mismatch"));
        }
        let (e, rest) = params.split_at(self.encoder.param_count());
        let (p, d) = rest.split_at(self.posterior.param_count());
        self.encoder.params_mut().copy_from_slice(e);
        self.posterior.params_mut().copy_from_slice(p);
        self.decoder.params_mut().copy_from_slice(d);
        Ok(())
    }

    pub fn condition_input(&self, world: &World, start: &JointConfig, goal: &JointConfig) -> Result<Vec<f64>> {
        self.robot.check_dim(start)?;
        self.robot.check_dim(goal)?;
        condition_input(world, start, goal, self.shape.k_max, self.shape.features.levels)
    }

    /// Encoded condition features. Depends on obstacle insertion order.
    pub fn encode_condition(&self, world: &World, start: &JointConfig, goal: &JointConfig) -> Result<Vec<f64>> {
        self.encoder.forward(&self.condition_input(world, start, goal)?)
    }

    /// Loss for one sample with latent noise `eps`. When `grads` is given,
    /// `scale · ∂total/∂params` is added to it (flat layout of [`params`]).
    ///
    /// [`params`]: CvaeModel::params
    pub fn loss_with_noise(
        &self,
        sample: &CvaeSample,
        eps: &[f64],
        grads: Option<(&mut [f64], f64)>,
    ) -> Result<CvaeLossReport> {
        let m = self.shape.latent_dim;
        let beta = self.shape.beta;
        if eps.len() != m {
            return Err(Error::invalid("latent noise has the wrong dimension"));
        }
        self.robot.check_dim(&sample.x)?;
        let levels = self.shape.features.levels;

        let e_tr = self.encoder.forward_trace(&sample.condition_input)?;
        let cond = e_tr.output();

        let mut p_in = Vec::with_capacity(self.posterior.input_dim());
        encode_into(sample.x.as_slice(), levels, &mut p_in);
        p_in.extend_from_slice(cond);
        let p_tr = self.posterior.forward_trace(&p_in)?;
        let (mu, raw_log_sigma) = p_tr.output().split_at(m);
        let log_sigma: Vec<f64> = raw_log_sigma
            .iter()
            .map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX))
            .collect();
        let sigma: Vec<f64> = log_sigma.iter().map(|v| v.exp()).collect();
        let z: Vec<f64> = (0..m).map(|i| mu[i] + sigma[i] * eps[i]).collect();

        let mut d_in = z;
        d_in.extend_from_slice(cond);
        let d_tr = self.decoder.forward_trace(&d_in)?;
        let x_hat = d_tr.output();

        let n = self.robot.dof();
        let mut g_xhat = vec![0.0; n];
        let reconstruction = feature_distance_grad(
            &self.robot,
            self.shape.features,
            sample.x.as_slice(),
            x_hat,
            grads.is_some().then_some(&mut g_xhat[..]),
        );
        let kl = 0.5
            * (0..m)
                .map(|i| sigma[i] * sigma[i] + mu[i] * mu[i] - 1.0 - 2.0 * log_sigma[i])
                .sum::<f64>();
        let report = CvaeLossReport {
            reconstruction,
            kl,
            total: reconstruction + beta * kl,
        };

        if let Some((grads, scale)) = grads {
            let ne = self.encoder.param_count();
            let np = self.posterior.param_count();
            let (ge, rest) = grads.split_at_mut(ne);
            let (gp, gd) = rest.split_at_mut(np);

            g_xhat.iter_mut().for_each(|g| *g *= scale);
            let d_dec_in = self.decoder.backward(&d_tr, &g_xhat, gd)?;
            let (dz, dcond_dec) = d_dec_in.split_at(m);

            let mut d_post_out = vec![0.0; 2 * m];
            for i in 0..m {
                d_post_out[i] = dz[i] + scale * beta * mu[i];
                let clamped = raw_log_sigma[i] < LOG_SIGMA_MIN || raw_log_sigma[i] > LOG_SIGMA_MAX;
                if !clamped {
                    d_post_out[m + i] =
                        dz[i] * sigma[i] * eps[i] + scale * beta * (sigma[i] * sigma[i] - 1.0);
                }
            }
            let d_post_in = self.posterior.backward(&p_tr, &d_post_out, gp)?;
            let enc_len = encoding_dim(n, levels);
            let dcond: Vec<f64> = dcond_dec
                .iter()
                .zip(&d_post_in[enc_len..])
                .map(|(a, b)| a + b)
                .collect();
            self.encoder.backward(&e_tr, &dcond, ge)?;
        }
        Ok(report)
    }

    /// Loss for one training pair drawing the latent noise from `rng`.
    pub fn loss(&self, x: &JointConfig, world: &World, start: &JointConfig, goal: &JointConfig, rng: &mut impl Rng) -> Result<CvaeLossReport> {
        let sample = CvaeSample {
            condition_input: self.condition_input(world, start, goal)?,
            x: x.clone(),
        };
        let eps: Vec<f64> = (0..self.shape.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
        self.loss_with_noise(&sample, &eps, None)
    }

    /// Minibatch Adam training. Returns the mean total loss of every epoch.
    pub fn train(&mut self, samples: &[CvaeSample], epochs: usize, seed: u64, config: TrainConfig) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = self.params();
        let mut state = AdamState::new(params.len(), config.adam);
        let mut grads = vec![0.0; params.len()];
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        let m = self.shape.latent_dim;

        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut epoch_total = 0.0;
            for batch in order.chunks(config.batch_size) {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let eps: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
                    let r = self.loss_with_noise(&samples[i], &eps, Some((&mut grads, scale)))?;
                    epoch_total += r.total;
                }
                adam_step(&mut params, &grads, &mut state)?;
                self.set_params(&params)?;
            }
            let mean = epoch_total / samples.len() as f64;
            if !mean.is_finite() || !params.iter().all(|p| p.is_finite()) {
                return Err(Error::Domain("CVAE training diverged".into()));
            }
            history.push(mean);
        }
        Ok(history)
    }

    /// Decodes `count` prior samples into joint-limit-clamped configurations.
    pub fn generate_candidates(
        &self,
        world: &World,
        start: &JointConfig,
        goal: &JointConfig,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<JointConfig>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let cond = self.encode_condition(world, start, goal)?;
        let m = self.shape.latent_dim;
        let mut out = Vec::with_capacity(count);
        let mut d_in = vec![0.0; m + cond.len()];
        d_in[m..].copy_from_slice(&cond);
        for _ in 0..count {
            for v in &mut d_in[..m] {
                *v = rng.sample(StandardNormal);
            }
            let x = self.decoder.forward(&d_in)?;
            out.push(self.robot.clamp(&JointConfig::new(x)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, &Checkpoint::new(self.clone()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint<CvaeModel> = load_json(path)?;
        let model = ck.into_inner()?;
        let fresh = CvaeModel::new(model.robot.clone(), model.shape.clone(), 0)
            .map_err(|e| Error::ModelMissing(e.to_string()))?;
        if fresh.encoder.layer_sizes() != model.encoder.layer_sizes()
            || fresh.posterior.layer_sizes() != model.posterior.layer_sizes()
            || fresh.decoder.layer_sizes() != model.decoder.layer_sizes()
        {
            return Err(Error::ModelMissing("checkpoint network shapes do not match its metadata".into()));
        }
        Ok(model)
    }
}
