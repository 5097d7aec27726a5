//! Normal and log-normal plan-cost distributions.
//!
//! A log-normal `(μ, σ)` describes `t = e^X` with `X ~ N(μ, σ²)`, so its
//! support is strictly positive and it carries the long right tail that
//! repeated planner runs show.

use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Smallest σ a log-space fit may report.
pub const SIGMA_MIN_LOG: f64 = 0.05;
/// Smallest σ a linear (checks) fit may report.
pub const SIGMA_MIN_LINEAR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Lognormal,
}

impl Family {
    pub fn sigma_min(self) -> f64 {
        match self {
            Family::Normal => SIGMA_MIN_LINEAR,
            Family::Lognormal => SIGMA_MIN_LOG,
        }
    }

    /// Variant-name letter (`N` / `L`).
    pub fn letter(self) -> char {
        match self {
            Family::Normal => 'N',
            Family::Lognormal => 'L',
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Normal => "normal",
            Family::Lognormal => "lognormal",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Family::Normal),
            "lognormal" => Ok(Family::Lognormal),
            other => Err(Error::invalid(format!("unknown distribution family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub family: Family,
    pub mu: f64,
    pub sigma: f64,
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile by bisection on [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + lo.abs().min(hi.abs())) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl DistParams {
    pub fn new(family: Family, mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("bad distribution parameters μ={mu}, σ={sigma}")));
        }
        Ok(DistParams { family, mu, sigma })
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Normal, mu, sigma)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Lognormal, mu, sigma)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self.family {
            Family::Normal => std_normal_cdf((t - self.mu) / self.sigma),
            Family::Lognormal => {
                if t <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((t.ln() - self.mu) / self.sigma)
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        let z = std_normal_quantile(p)?;
        Ok(match self.family {
            Family::Normal => self.mu + self.sigma * z,
            Family::Lognormal => (self.mu + self.sigma * z).exp(),
        })
    }

    pub fn t95(&self) -> f64 {
        self.quantile(0.95).expect("0.95 is a valid level")
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        let half_ln_2pi = 0.5 * (LN_2 + PI.ln());
        match self.family {
            Family::Normal => {
                let z = (t - self.mu) / self.sigma;
                -half_ln_2pi - self.sigma.ln() - 0.5 * z * z
            }
            Family::Lognormal => {
                if t <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lt = t.ln();
                let z = (lt - self.mu) / self.sigma;
                -lt - half_ln_2pi - self.sigma.ln() - 0.5 * z * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            Family::Normal => self.mu,
            Family::Lognormal => (self.mu + 0.5 * self.sigma * self.sigma).exp(),
        }
    }

    pub fn median(&self) -> f64 {
        match self.family {
            Family::Normal => self.mu,
            Family::Lognormal => self.mu.exp(),
        }
    }
}

/// Maximum-likelihood fit: sample mean and (1/N) standard deviation of the
/// samples (normal) or of their logarithms (log-normal). σ is clamped up to
/// the family's floor.
pub fn fit_empirical(samples: &[f64], family: Family) -> Result<DistParams> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {}", samples.len())));
    }
    let values: Vec<f64> = match family {
        Family::Normal => samples.to_vec(),
        Family::Lognormal => {
            if let Some(bad) = samples.iter().find(|s| !(**s > 0.0)) {
                return Err(Error::Domain(format!("log-normal sample {bad} is not positive")));
            }
            samples.iter().map(|s| s.ln()).collect()
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite sample".into()));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sigma = var.sqrt().max(family.sigma_min());
    DistParams::new(family, mu, sigma)
}

/// Mean negative log-likelihood of `samples`.
pub fn nll(params: &DistParams, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("nll of an empty sample"));
    }
    if params.family == Family::Lognormal && samples.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("log-normal nll needs positive samples".into()));
    }
    Ok(-samples.iter().map(|t| params.ln_pdf(*t)).sum::<f64>() / samples.len() as f64)
}

/// Nearest-rank percentile (`p` in (0, 1]): the ⌈p·N⌉-th smallest sample.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    if samples.is_empty() || !(p > 0.0 && p <= 1.0) {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}
