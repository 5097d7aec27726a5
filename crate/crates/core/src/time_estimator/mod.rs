//! Learned plan-cost distributions.
//!
//! The estimator reuses the generative model's condition encoder as a frozen
//! feature extractor: it encodes `(world, from, candidate)`, appends the
//! positional encodings of both configurations, and a small head predicts a
//! distribution over the cost of planning `from → candidate`. Training only
//! ever touches the head.
//!
//! Costs are standardized before they reach the loss: log-normal models see
//! `(ln c − m) / s`, normal models see `(c − m) / s`, with `(m, s)` taken
//! from the training set. Predictions are mapped back to checks.

mod distribution;

pub use distribution::{
    fit_empirical, nll, percentile, std_normal_cdf, std_normal_quantile, DistParams, Family,
    SIGMA_MIN_LINEAR, SIGMA_MIN_LOG,
};

use std::f64::consts::PI;
use std::path::Path;

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvae::{condition_input, CvaeModel, TrainConfig};
use crate::error::{Error, Result};
use crate::kinematics::{encode_into, encoding_dim, JointConfig};
use crate::neuralnet::{adam_step, load_json, save_json, AdamState, Checkpoint, DenseNetwork};
use crate::world::World;

/// Affine standardization of (log-)costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostNormalization {
    pub mean: f64,
    pub std: f64,
}

impl CostNormalization {
    fn value(family: Family, cost: f64) -> f64 {
        match family {
            Family::Normal => cost,
            Family::Lognormal => cost.max(f64::MIN_POSITIVE).ln(),
        }
    }

    pub fn fit(family: Family, costs: impl Iterator<Item = f64>) -> Self {
        let vals: Vec<f64> = costs.map(|c| Self::value(family, c)).collect();
        if vals.is_empty() {
            return CostNormalization { mean: 0.0, std: 1.0 };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        CostNormalization { mean, std }
    }

    pub fn normalize(&self, family: Family, cost: f64) -> f64 {
        (Self::value(family, cost) - self.mean) / self.std
    }
}

/// One supervised row: plan `from → to` in `world` produced `costs`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSample {
    pub world: World,
    pub from: JointConfig,
    pub to: JointConfig,
    pub costs: Vec<u64>,
    pub theta_normal: DistParams,
    pub theta_lognormal: DistParams,
}

impl CostSample {
    pub fn theta(&self, family: Family) -> DistParams {
        match family {
            Family::Normal => self.theta_normal,
            Family::Lognormal => self.theta_lognormal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimatorModel {
    pub family: Family,
    /// Weight of the parameter-matching term.
    pub w: f64,
    pub k_max: usize,
    pub levels: usize,
    pub dof: usize,
    /// Frozen copy of the generative model's condition encoder.
    pub encoder: DenseNetwork,
    pub head: DenseNetwork,
    pub norm: CostNormalization,
}

/// A training row in standardized space with its head input precomputed.
struct PreparedRow {
    input: Vec<f64>,
    ys: Vec<f64>,
    mu: f64,
    ln_sigma: f64,
}

impl TimeEstimatorModel {
    pub fn new(cvae: &CvaeModel, family: Family, w: f64, hidden: &[usize], seed: u64) -> Result<Self> {
        Self::with_encoder(
            cvae.encoder.clone(),
            cvae.shape.k_max,
            cvae.shape.features.levels,
            cvae.robot.dof(),
            family,
            w,
            hidden,
            seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_encoder(
        encoder: DenseNetwork,
        k_max: usize,
        levels: usize,
        dof: usize,
        family: Family,
        w: f64,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if !(w >= 0.0) {
            return Err(Error::invalid("w must be nonnegative"));
        }
        let enc = encoding_dim(dof, levels);
        if encoder.input_dim() != 3 * k_max + 2 * enc {
            return Err(Error::invalid("encoder input does not match k_max/levels/dof"));
        }
        let mut sizes = vec![encoder.output_dim() + 2 * enc];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = DenseNetwork::new(&sizes, &mut rng)?;
        Ok(TimeEstimatorModel {
            family,
            w,
            k_max,
            levels,
            dof,
            encoder,
            head,
            norm: CostNormalization { mean: 0.0, std: 1.0 },
        })
    }

    /// σ floor in standardized units.
    fn ln_sigma_floor(&self) -> f64 {
        (self.family.sigma_min() / self.norm.std).ln()
    }

    /// Head input for `from → to`; the encoder runs forward only.
    pub fn head_input(&self, world: &World, from: &JointConfig, to: &JointConfig) -> Result<Vec<f64>> {
        if from.len() != self.dof || to.len() != self.dof {
            return Err(Error::invalid("configuration dimension does not match the estimator"));
        }
        let cond = self
            .encoder
            .forward(&condition_input(world, from, to, self.k_max, self.levels)?)?;
        let mut input = cond;
        encode_into(from.as_slice(), self.levels, &mut input);
        encode_into(to.as_slice(), self.levels, &mut input);
        Ok(input)
    }

    /// Standardized `(μ̂, ln σ̂)` with the σ floor applied; also reports
    /// whether the floor was active.
    fn head_params(&self, out: &[f64]) -> (f64, f64, bool) {
        let floor = self.ln_sigma_floor();
        if out[1] < floor {
            (out[0], floor, true)
        } else {
            (out[0], out[1], false)
        }
    }

    /// Predicted cost distribution in checks.
    pub fn predict(&self, world: &World, from: &JointConfig, to: &JointConfig) -> Result<DistParams> {
        let out = self.head.forward(&self.head_input(world, from, to)?)?;
        let (mu, ln_sigma, _) = self.head_params(&out);
        let (m, s) = (self.norm.mean, self.norm.std);
        DistParams::new(self.family, m + s * mu, s * ln_sigma.exp())
    }

    /// Cost (checks) not exceeded with probability `confidence`; at least one
    /// check.
    pub fn predict_quantile(&self, world: &World, from: &JointConfig, to: &JointConfig, confidence: f64) -> Result<f64> {
        let q = self.predict(world, from, to)?.quantile(confidence)?;
        Ok(q.max(1.0))
    }

    pub fn predict_t95(&self, world: &World, from: &JointConfig, to: &JointConfig) -> Result<f64> {
        self.predict_quantile(world, from, to, 0.95)
    }

    fn prepare(&self, sample: &CostSample) -> Result<PreparedRow> {
        if sample.costs.is_empty() {
            return Err(Error::invalid("cost sample without costs"));
        }
        let theta = sample.theta(self.family);
        let (m, s) = (self.norm.mean, self.norm.std);
        let floor = self.family.sigma_min() / s;
        Ok(PreparedRow {
            input: self.head_input(&sample.world, &sample.from, &sample.to)?,
            ys: sample
                .costs
                .iter()
                .map(|c| self.norm.normalize(self.family, *c as f64))
                .collect(),
            mu: (theta.mu - m) / s,
            ln_sigma: (theta.sigma / s).max(floor).ln(),
        })
    }

    /// Mean standardized NLL plus `w · ‖θ − θ̂‖²` on `(μ, ln σ)`; adds
    /// `scale · ∂loss/∂head` into `grads` when given.
    fn row_loss(&self, row: &PreparedRow, grads: Option<(&mut [f64], f64)>) -> Result<f64> {
        let trace = self.head.forward_trace(&row.input)?;
        let (mu, ln_sigma, clamped) = self.head_params(trace.output());
        let inv_var = (-2.0 * ln_sigma).exp();
        let n = row.ys.len() as f64;
        let mut nll = 0.0;
        let mut d_mu = 0.0;
        let mut sq = 0.0;
        for y in &row.ys {
            let r = y - mu;
            nll += 0.5 * (2.0 * PI).ln() + ln_sigma + 0.5 * r * r * inv_var;
            d_mu -= r * inv_var;
            sq += r * r * inv_var;
        }
        nll /= n;
        d_mu /= n;
        let d_ln_sigma = 1.0 - sq / n;
        let mse = (mu - row.mu).powi(2) + (ln_sigma - row.ln_sigma).powi(2);
        let loss = nll + self.w * mse;

        if let Some((grads, scale)) = grads {
            let g_mu = d_mu + 2.0 * self.w * (mu - row.mu);
            let g_ls = if clamped {
                0.0
            } else {
                d_ln_sigma + 2.0 * self.w * (ln_sigma - row.ln_sigma)
            };
            self.head.backward(&trace, &[scale * g_mu, scale * g_ls], grads)?;
        }
        Ok(loss)
    }

    /// Loss of one row under the current normalization.
    pub fn estimator_loss(&self, sample: &CostSample) -> Result<f64> {
        self.row_loss(&self.prepare(sample)?, None)
    }

    /// Loss and its gradient with respect to the head parameters.
    pub fn estimator_loss_grad(&self, sample: &CostSample) -> Result<(f64, Vec<f64>)> {
        let row = self.prepare(sample)?;
        let mut g = vec![0.0; self.head.param_count()];
        let loss = self.row_loss(&row, Some((&mut g, 1.0)))?;
        Ok((loss, g))
    }

    /// Fits the cost standardization to `samples` and trains the head.
    /// Returns the mean loss per epoch. With `epochs == 0` nothing changes.
    pub fn train(&mut self, samples: &[CostSample], epochs: usize, seed: u64, config: TrainConfig) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if epochs == 0 {
            return Ok(Vec::new());
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let family = self.family;
        self.norm = CostNormalization::fit(
            family,
            samples.iter().flat_map(|s| s.costs.iter().map(|c| *c as f64)),
        );
        let rows = samples.iter().map(|s| self.prepare(s)).collect::<Result<Vec<_>>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = AdamState::new(self.head.param_count(), config.adam);
        let mut grads = vec![0.0; self.head.param_count()];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                grads.iter_mut().for_each(|g| *g = 0.0);
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    total += self.row_loss(&rows[i], Some((&mut grads, scale)))?;
                }
                let mut params = self.head.params().to_vec();
                adam_step(&mut params, &grads, &mut state)?;
                self.head.params_mut().copy_from_slice(&params);
            }
            let mean = total / rows.len() as f64;
            if !mean.is_finite() || !self.head.is_finite() {
                return Err(Error::Domain("time estimator training diverged".into()));
            }
            history.push(mean);
        }
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, &Checkpoint::new(self.clone()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json::<Checkpoint<TimeEstimatorModel>>(path)?.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::CvaeShape;
    use crate::kinematics::{FeatureParams, RobotModel};
    use crate::neuralnet::{gradient_check, AdamConfig};
    use crate::world::{Bounds, Obstacle};
    use rand::Rng;
    use rand_distr::{Distribution, LogNormal};

    fn cvae() -> CvaeModel {
        let shape = CvaeShape {
            latent_dim: 2,
            k_max: 3,
            encoder_hidden: vec![6],
            condition_dim: 4,
            posterior_hidden: vec![4],
            decoder_hidden: vec![4],
            features: FeatureParams::new(0.5, 1).unwrap(),
            ..CvaeShape::default()
        };
        CvaeModel::new(RobotModel::new(vec![1.0, 0.8, 0.6], 0.05).unwrap(), shape, 1).unwrap()
    }

    fn world() -> World {
        World::new("w", Bounds::square(3.0), vec![Obstacle::new(1.0, 1.0, 0.3).unwrap()]).unwrap()
    }

    fn sample(costs: Vec<u64>) -> CostSample {
        let c: Vec<f64> = costs.iter().map(|c| *c as f64).collect();
        CostSample {
            world: world(),
            from: JointConfig::new(vec![0.1, 0.2, -0.3]),
            to: JointConfig::new(vec![1.0, -0.5, 0.4]),
            theta_normal: fit_empirical(&c, Family::Normal).unwrap(),
            theta_lognormal: fit_empirical(&c, Family::Lognormal).unwrap(),
            costs,
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for family in [Family::Normal, Family::Lognormal] {
            let mut est = TimeEstimatorModel::new(&cvae(), family, 0.7, &[5], 3).unwrap();
            let s = sample(vec![120, 340, 95, 410, 150, 220]);
            est.norm = CostNormalization::fit(family, s.costs.iter().map(|c| *c as f64));
            let (_, g) = est.estimator_loss_grad(&s).unwrap();
            let base = est.head.params().to_vec();
            let err = gradient_check(&base, &g, 1e-5, |p| {
                let mut e = est.clone();
                e.head.params_mut().copy_from_slice(p);
                e.estimator_loss(&s).unwrap()
            });
            assert!(err < 1e-4, "{family}: {err}");
        }
    }

    #[test]
    fn loss_at_empirical_theta_is_mle_nll() {
        let s = sample(vec![120, 340, 95, 410, 150, 220]);
        for family in [Family::Normal, Family::Lognormal] {
            let mut est = TimeEstimatorModel::new(&cvae(), family, 2.0, &[5], 3).unwrap();
            est.norm = CostNormalization::fit(family, s.costs.iter().map(|c| *c as f64));
            // zero the head and put θ (standardized) into the output bias
            let np = est.head.param_count();
            let theta = s.theta(family);
            let (mu0, ls0) = ((theta.mu - est.norm.mean) / est.norm.std, (theta.sigma / est.norm.std).ln());
            let params = est.head.params_mut();
            params.iter_mut().for_each(|p| *p = 0.0);
            params[np - 2] = mu0;
            params[np - 1] = ls0;
            let loss = est.estimator_loss(&s).unwrap();

            let ys: Vec<f64> = s.costs.iter().map(|c| est.norm.normalize(family, *c as f64)).collect();
            let std_theta = DistParams::normal(mu0, ls0.exp()).unwrap();
            let expect = nll(&std_theta, &ys).unwrap();
            assert!((loss - expect).abs() < 1e-10, "{loss} vs {expect}");

            // w = 0 gives the pure NLL for any head
            let mut pure = TimeEstimatorModel::new(&cvae(), family, 0.0, &[5], 9).unwrap();
            pure.norm = est.norm;
            let out = pure.head.forward(&pure.head_input(&s.world, &s.from, &s.to).unwrap()).unwrap();
            let p = DistParams::normal(out[0], out[1].max(pure.ln_sigma_floor()).exp()).unwrap();
            assert!((pure.estimator_loss(&s).unwrap() - nll(&p, &ys).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn training_never_touches_the_encoder() {
        let model = cvae();
        let mut est = TimeEstimatorModel::new(&model, Family::Lognormal, 1.0, &[8], 5).unwrap();
        let before = est.encoder.clone();
        let samples: Vec<CostSample> = (0..20)
            .map(|i| sample(vec![100 + i, 200 + 3 * i, 150, 90 + 2 * i]))
            .collect();
        let hist = est.train(&samples, 5, 1, TrainConfig::default()).unwrap();
        assert_eq!(hist.len(), 5);
        assert_eq!(est.encoder, before);
        assert_eq!(est.encoder, model.encoder);
    }

    #[test]
    fn training_determinism_and_noop() {
        let samples: Vec<CostSample> = (0..10).map(|i| sample(vec![50 + i, 80, 60 + 2 * i])).collect();
        let base = TimeEstimatorModel::new(&cvae(), Family::Normal, 1.0, &[8], 5).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        a.train(&samples, 3, 11, TrainConfig::default()).unwrap();
        b.train(&samples, 3, 11, TrainConfig::default()).unwrap();
        assert_eq!(a, b);
        let mut c = base.clone();
        c.train(&samples, 0, 11, TrainConfig::default()).unwrap();
        assert_eq!(c, base);
        assert!(matches!(c.train(&[], 3, 1, TrainConfig::default()), Err(Error::EmptyTrainingSet)));
    }

    #[test]
    fn prediction_is_positive_and_monotone_in_confidence() {
        let samples: Vec<CostSample> = (0..10).map(|i| sample(vec![50 + i, 80, 60 + 2 * i])).collect();
        for family in [Family::Normal, Family::Lognormal] {
            let mut est = TimeEstimatorModel::new(&cvae(), family, 1.0, &[8], 5).unwrap();
            est.train(&samples, 2, 1, TrainConfig::default()).unwrap();
            let s = &samples[0];
            let t90 = est.predict_quantile(&s.world, &s.from, &s.to, 0.9).unwrap();
            let t95 = est.predict_t95(&s.world, &s.from, &s.to).unwrap();
            let t99 = est.predict_quantile(&s.world, &s.from, &s.to, 0.99).unwrap();
            assert!(t90 > 0.0 && t90 <= t95 && t95 <= t99);
            assert_eq!(t95, est.predict_t95(&s.world, &s.from, &s.to).unwrap());
        }
    }

    #[test]
    fn learns_cost_from_joint_distance() {
        // cost ~ lognormal with median growing in the joint distance
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = cvae();
        let mut samples = Vec::new();
        for _ in 0..300 {
            let from = JointConfig::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let to = JointConfig::new((0..3).map(|_| rng.random_range(-2.0..2.0)).collect());
            let d = from.distance(&to);
            let dist = LogNormal::new(3.0 + 0.8 * d, 0.3).unwrap();
            let costs: Vec<u64> = (0..20).map(|_| dist.sample(&mut rng).round().max(1.0) as u64).collect();
            let c: Vec<f64> = costs.iter().map(|v| *v as f64).collect();
            samples.push(CostSample {
                world: world(),
                from,
                to,
                theta_normal: fit_empirical(&c, Family::Normal).unwrap(),
                theta_lognormal: fit_empirical(&c, Family::Lognormal).unwrap(),
                costs,
            });
        }
        let mut est = TimeEstimatorModel::new(&model, Family::Lognormal, 1.0, &[32], 2).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        };
        let hist = est.train(&samples, 60, 4, cfg).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
        let near = est
            .predict_t95(&world(), &JointConfig::new(vec![0.0; 3]), &JointConfig::new(vec![0.1, 0.0, 0.0]))
            .unwrap();
        let far = est
            .predict_t95(&world(), &JointConfig::new(vec![-1.5; 3]), &JointConfig::new(vec![1.5; 3]))
            .unwrap();
        assert!(near < far, "near {near} far {far}");
    }
}
