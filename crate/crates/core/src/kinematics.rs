//! Planar serial-chain arm: forward kinematics and the configuration
//! feature map used by the generative model's reconstruction loss.
//!
//! The base sits at the origin and joint angles accumulate along the chain,
//! so link `k` points along `q[0] + ... + q[k]`. The feature map mixes two
//! views of a configuration: the placement of every link endpoint (errors at
//! proximal joints move more of the arm and so cost more) and a positional
//! encoding of the raw angles (which separates `q` from `q + 2π`, something
//! the kinematic view alone cannot do).

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the arm's plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A vector of joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(q: Vec<f64>) -> Self {
        JointConfig(q)
    }

    pub fn zeros(n: usize) -> Self {
        JointConfig(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean joint-space distance.
    pub fn distance(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest per-joint absolute difference.
    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self + t * (other - self)`.
    pub fn lerp(&self, other: &JointConfig, t: f64) -> JointConfig {
        JointConfig(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + t * (b - a))
                .collect(),
        )
    }
}

impl Index<usize> for JointConfig {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointConfig {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(q: Vec<f64>) -> Self {
        JointConfig(q)
    }
}

/// Planar serial chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    link_lengths: Vec<f64>,
    link_radius: f64,
    joint_lo: Vec<f64>,
    joint_hi: Vec<f64>,
}

impl RobotModel {
    /// Builds a model with the default joint range of `[-2π, 2π]`.
    pub fn new(link_lengths: Vec<f64>, link_radius: f64) -> Result<Self> {
        let n = link_lengths.len();
        Self::with_limits(link_lengths, link_radius, vec![-2.0 * PI; n], vec![2.0 * PI; n])
    }

    pub fn with_limits(
        link_lengths: Vec<f64>,
        link_radius: f64,
        joint_lo: Vec<f64>,
        joint_hi: Vec<f64>,
    ) -> Result<Self> {
        let n = link_lengths.len();
        if n < 2 {
            return Err(Error::invalid(format!("robot needs at least 2 joints, got {n}")));
        }
        if link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid("link lengths must be positive and finite"));
        }
        if !(link_radius.is_finite() && link_radius >= 0.0) {
            return Err(Error::invalid("link radius must be nonnegative and finite"));
        }
        if joint_lo.len() != n || joint_hi.len() != n {
            return Err(Error::invalid(format!(
                "joint limits must have {n} entries (got {} and {})",
                joint_lo.len(),
                joint_hi.len()
            )));
        }
        if joint_lo.iter().zip(&joint_hi).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid("joint_lo must be < joint_hi elementwise"));
        }
        Ok(RobotModel {
            link_lengths,
            link_radius,
            joint_lo,
            joint_hi,
        })
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn link_radius(&self) -> f64 {
        self.link_radius
    }

    pub fn joint_lo(&self) -> &[f64] {
        &self.joint_lo
    }

    pub fn joint_hi(&self) -> &[f64] {
        &self.joint_hi
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn check_dim(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::invalid(format!(
                "configuration has {} joints, robot has {}",
                q.len(),
                self.dof()
            )));
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.iter()
            .zip(self.joint_lo.iter().zip(&self.joint_hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, q: &JointConfig) -> JointConfig {
        JointConfig(
            q.iter()
                .zip(self.joint_lo.iter().zip(&self.joint_hi))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                .collect(),
        )
    }
}

/// Weights of the configuration feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub alpha: f64,
    pub levels: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            alpha: 0.5,
            levels: 2,
        }
    }
}

impl FeatureParams {
    pub fn new(alpha: f64, levels: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(FeatureParams { alpha, levels })
    }
}

/// Base point followed by every link endpoint.
pub fn forward_kinematics(model: &RobotModel, q: &JointConfig) -> Result<Vec<Point2>> {
    model.check_dim(q)?;
    if !q.is_finite() {
        return Err(Error::invalid("configuration contains non-finite angles"));
    }
    Ok(fk_points(model.link_lengths(), q.as_slice()))
}

pub(crate) fn fk_points(links: &[f64], q: &[f64]) -> Vec<Point2> {
    let mut pts = Vec::with_capacity(links.len() + 1);
    let mut p = Point2::ORIGIN;
    let mut angle = 0.0;
    pts.push(p);
    for (len, dq) in links.iter().zip(q) {
        angle += dq;
        p = Point2::new(p.x + len * angle.cos(), p.y + len * angle.sin());
        pts.push(p);
    }
    pts
}

/// Length of the positional encoding for `n` joints at `levels` levels.
pub fn encoding_dim(n: usize, levels: usize) -> usize {
    n * (2 * (levels + 1) + 1)
}

/// `[q, cos q, sin q, cos 2q, sin 2q, ..., cos 2^l q, sin 2^l q]`.
pub fn positional_encode(q: &JointConfig, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoding_dim(q.len(), levels));
    encode_into(q.as_slice(), levels, &mut out);
    out
}

pub(crate) fn encode_into(q: &[f64], levels: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(q);
    let mut freq = 1.0;
    for _ in 0..=levels {
        out.extend(q.iter().map(|v| (freq * v).cos()));
        out.extend(q.iter().map(|v| (freq * v).sin()));
        freq *= 2.0;
    }
}

/// `α‖fk(x) − fk(x̂)‖² + (1 − α)‖enc(x) − enc(x̂)‖²`.
pub fn feature_distance_sq(
    x: &JointConfig,
    x_hat: &JointConfig,
    model: &RobotModel,
    params: FeatureParams,
) -> Result<f64> {
    model.check_dim(x)?;
    model.check_dim(x_hat)?;
    Ok(feature_distance_grad(model, params, x.as_slice(), x_hat.as_slice(), None))
}

/// Value of the feature distance; when `grad` is given, also writes
/// d/dx̂ into it.
pub(crate) fn feature_distance_grad(
    model: &RobotModel,
    params: FeatureParams,
    x: &[f64],
    x_hat: &[f64],
    grad: Option<&mut [f64]>,
) -> f64 {
    let n = x.len();
    let alpha = params.alpha;
    let links = model.link_lengths();

    // kinematic term
    let px = fk_points(links, x);
    let ph = fk_points(links, x_hat);
    let mut fk_sq = 0.0;
    for (a, b) in px.iter().zip(&ph) {
        fk_sq += (b.x - a.x).powi(2) + (b.y - a.y).powi(2);
    }

    // encoding term
    let mut ex = Vec::with_capacity(encoding_dim(n, params.levels));
    let mut eh = Vec::with_capacity(encoding_dim(n, params.levels));
    encode_into(x, params.levels, &mut ex);
    encode_into(x_hat, params.levels, &mut eh);
    let enc_sq: f64 = ex.iter().zip(&eh).map(|(a, b)| (b - a).powi(2)).sum();

    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);

        // d fk_sq / d x̂_j: point k (k ≥ 1) depends on links i < k with
        // cumulative angle θ_i = Σ_{j ≤ i} x̂_j.
        let mut theta = Vec::with_capacity(n);
        let mut acc = 0.0;
        for v in x_hat {
            acc += v;
            theta.push(acc);
        }
        // residual on each point
        let res: Vec<(f64, f64)> = px
            .iter()
            .zip(&ph)
            .map(|(a, b)| (b.x - a.x, b.y - a.y))
            .collect();
        // S_i = Σ_{k > i} res_k: link i moves every point beyond it.
        let mut suffix = vec![(0.0, 0.0); n + 2];
        for k in (1..=n).rev() {
            suffix[k] = (suffix[k + 1].0 + res[k].0, suffix[k + 1].1 + res[k].1);
        }
        // d p_k / d θ_i = L_i (−sin θ_i, cos θ_i) for i < k; θ_i depends on x̂_j, j ≤ i
        let mut per_link = vec![0.0; n];
        for i in 0..n {
            let (s, c) = theta[i].sin_cos();
            let (sx, sy) = suffix[i + 1];
            per_link[i] = 2.0 * links[i] * (-s * sx + c * sy);
        }
        let mut tail = 0.0;
        for j in (0..n).rev() {
            tail += per_link[j];
            g[j] += alpha * tail;
        }

        // encoding gradient
        for j in 0..n {
            g[j] += (1.0 - alpha) * 2.0 * (eh[j] - ex[j]);
        }
        let mut freq = 1.0;
        let mut offset = n;
        for _ in 0..=params.levels {
            for j in 0..n {
                let (s, c) = (freq * x_hat[j]).sin_cos();
                let dc = eh[offset + j] - ex[offset + j];
                let ds = eh[offset + n + j] - ex[offset + n + j];
                g[j] += (1.0 - alpha) * 2.0 * (dc * (-freq * s) + ds * (freq * c));
            }
            offset += 2 * n;
            freq *= 2.0;
        }
    }

    alpha * fk_sq + (1.0 - alpha) * enc_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_link() -> RobotModel {
        RobotModel::new(vec![1.0, 1.0], 0.0).unwrap()
    }

    fn close(a: Point2, b: Point2) -> bool {
        a.distance(b) < 1e-12
    }

    #[test]
    fn fk_zero_config_lies_on_x_axis() {
        let pts = forward_kinematics(&two_link(), &JointConfig::zeros(2)).unwrap();
        assert!(close(pts[0], Point2::new(0.0, 0.0)));
        assert!(close(pts[1], Point2::new(1.0, 0.0)));
        assert!(close(pts[2], Point2::new(2.0, 0.0)));

        let m = RobotModel::new(vec![0.5, 1.5, 2.0], 0.1).unwrap();
        let pts = forward_kinematics(&m, &JointConfig::zeros(3)).unwrap();
        let expect = [0.0, 0.5, 2.0, 4.0];
        for (p, x) in pts.iter().zip(expect) {
            assert!(close(*p, Point2::new(x, 0.0)));
        }
    }

    #[test]
    fn fk_quarter_turn() {
        let pts = forward_kinematics(&two_link(), &JointConfig::new(vec![PI / 2.0, 0.0])).unwrap();
        assert!(close(pts[1], Point2::new(0.0, 1.0)));
        assert!(close(pts[2], Point2::new(0.0, 2.0)));
    }

    #[test]
    fn fk_cumulative_angles() {
        let q = JointConfig::new(vec![PI / 4.0, PI / 4.0]);
        let pts = forward_kinematics(&two_link(), &q).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!(close(pts[1], Point2::new(h, h)));
        assert!(close(pts[2], Point2::new(h, h + 1.0)));
    }

    #[test]
    fn fk_rejects_dimension_mismatch() {
        let err = forward_kinematics(&two_link(), &JointConfig::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn fk_reach_bound_on_random_configs() {
        let m = RobotModel::new(vec![1.0, 0.8, 0.6, 0.3], 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = JointConfig::new((0..4).map(|_| rng.random_range(-7.0..7.0)).collect());
            let pts = forward_kinematics(&m, &q).unwrap();
            assert!(pts.last().unwrap().norm() <= m.reach() + 1e-12);
        }
    }

    #[test]
    fn positional_encoding_examples() {
        assert_eq!(positional_encode(&JointConfig::new(vec![0.0]), 0), vec![0.0, 1.0, 0.0]);
        assert_eq!(
            positional_encode(&JointConfig::new(vec![0.0]), 1),
            vec![0.0, 1.0, 0.0, 1.0, 0.0]
        );
        let e = positional_encode(&JointConfig::new(vec![PI / 2.0]), 1);
        let expect = [PI / 2.0, 0.0, 1.0, -1.0, 0.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{e:?}");
        }
        assert_eq!(e.len(), encoding_dim(1, 1));
    }

    #[test]
    fn feature_distance_examples() {
        let m = two_link();
        let p = FeatureParams::new(1.0, 2).unwrap();
        let d = feature_distance_sq(
            &JointConfig::zeros(2),
            &JointConfig::new(vec![PI, 0.0]),
            &m,
            p,
        )
        .unwrap();
        assert!((d - 20.0).abs() < 1e-12);

        // one-joint encoding term only; the robot is irrelevant when α = 0
        let m1 = RobotModel {
            link_lengths: vec![1.0],
            link_radius: 0.0,
            joint_lo: vec![-10.0],
            joint_hi: vec![10.0],
        };
        let p0 = FeatureParams::new(0.0, 0).unwrap();
        let d = feature_distance_sq(
            &JointConfig::new(vec![0.0]),
            &JointConfig::new(vec![2.0 * PI]),
            &m1,
            p0,
        )
        .unwrap();
        assert!((d - 39.478_417_604_357_43).abs() < 1e-9, "{d}");
    }

    #[test]
    fn feature_distance_gradient_matches_finite_differences() {
        let m = RobotModel::new(vec![1.0, 0.7, 0.4], 0.05).unwrap();
        let p = FeatureParams::new(0.3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let xh: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut g = vec![0.0; 3];
            feature_distance_grad(&m, p, &x, &xh, Some(&mut g));
            for j in 0..3 {
                let h = 1e-6;
                let mut a = xh.clone();
                let mut b = xh.clone();
                a[j] += h;
                b[j] -= h;
                let fd = (feature_distance_grad(&m, p, &x, &a, None)
                    - feature_distance_grad(&m, p, &x, &b, None))
                    / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_models() {
        assert!(RobotModel::new(vec![1.0], 0.1).is_err());
        assert!(RobotModel::new(vec![1.0, -1.0], 0.1).is_err());
        assert!(RobotModel::with_limits(vec![1.0, 1.0], 0.1, vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(FeatureParams::new(1.5, 2).is_err());
    }

    proptest! {
        #[test]
        fn feature_distance_is_symmetric(
            x in proptest::collection::vec(-6.0f64..6.0, 3),
            y in proptest::collection::vec(-6.0f64..6.0, 3),
            alpha in 0.0f64..=1.0,
            levels in 0usize..4,
        ) {
            let m = RobotModel::new(vec![1.0, 0.8, 0.6], 0.05).unwrap();
            let p = FeatureParams::new(alpha, levels).unwrap();
            let a = JointConfig::new(x);
            let b = JointConfig::new(y);
            let dab = feature_distance_sq(&a, &b, &m, p).unwrap();
            let dba = feature_distance_sq(&b, &a, &m, p).unwrap();
            prop_assert!(dab >= 0.0);
            prop_assert!((dab - dba).abs() <= 1e-9 * (1.0 + dab));
            prop_assert_eq!(feature_distance_sq(&a, &a, &m, p).unwrap(), 0.0);
        }

        #[test]
        fn encoding_separates_full_turns(
            q in proptest::collection::vec(-6.0f64..6.0, 1..5),
            levels in 0usize..4,
        ) {
            let base = JointConfig::new(q.clone());
            for i in 0..q.len() {
                let mut shifted = base.clone();
                shifted[i] += 2.0 * PI;
                prop_assert_ne!(positional_encode(&base, levels), positional_encode(&shifted, levels));
            }
        }
    }
}
