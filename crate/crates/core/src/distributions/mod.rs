//! Priors, likelihoods and proposals.
//!
//! Every distribution samples through [`Rng`] with a fixed word budget:
//!
//! | distribution             | raw words per draw                          |
//! |--------------------------|---------------------------------------------|
//! | `Uniform`                | 1                                           |
//! | `Normal`                 | 1 (inversion)                               |
//! | `TruncatedNormal`        | 1 (inversion on the truncated interval)     |
//! | `Categorical`            | 1                                           |
//! | `Poisson`, rate < 30     | 1 (sequential inversion)                    |
//! | `Poisson`, rate ≥ 30     | 2 per PTRS round, ≈ 1.1 rounds on average   |
//! | `MixtureTruncatedNormal` | 2 (component, then inversion)               |

pub mod rng;
pub mod special;

use std::fmt;

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub use rng::Rng;

use crate::value::Value;
use special::{ln_norm_interval, ln_norm_pdf, norm_cdf, norm_inv_cdf, norm_inv_sf, norm_sf};

/// Tolerance on simplex sums (categorical probabilities, mixture weights).
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Poisson rates at or above this use PTRS rejection instead of inversion.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("invalid {distribution} parameter: {reason}")]
    InvalidParameter {
        distribution: &'static str,
        reason: String,
    },
    #[error("{distribution} cannot score a {found} value")]
    TypeMismatch {
        distribution: &'static str,
        found: &'static str,
    },
}

/// Protocol tag of each distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum DistributionKind {
    Uniform = 0x01,
    Normal = 0x02,
    TruncatedNormal = 0x03,
    Categorical = 0x04,
    Poisson = 0x05,
    MixtureTruncatedNormal = 0x06,
}

impl DistributionKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0x01 => Self::Uniform,
            0x02 => Self::Normal,
            0x03 => Self::TruncatedNormal,
            0x04 => Self::Categorical,
            0x05 => Self::Poisson,
            0x06 => Self::MixtureTruncatedNormal,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "Uniform",
            Self::Normal => "Normal",
            Self::TruncatedNormal => "TruncatedNormal",
            Self::Categorical => "Categorical",
            Self::Poisson => "Poisson",
            Self::MixtureTruncatedNormal => "MixtureTruncatedNormal",
        }
    }
}

/// Normal restricted to `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std: f64,
    pub low: f64,
    pub high: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, std: f64, low: f64, high: f64) -> Result<Self, DistributionError> {
        let tn = Self {
            mean,
            std,
            low,
            high,
        };
        tn.validate()?;
        Ok(tn)
    }

    fn validate(&self) -> Result<(), DistributionError> {
        let bad = |reason: String| DistributionError::InvalidParameter {
            distribution: "TruncatedNormal",
            reason,
        };
        if !self.mean.is_finite() {
            return Err(bad(format!("mean {} is not finite", self.mean)));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(bad(format!("std {} must be positive", self.std)));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(bad(format!("bounds [{}, {}] invalid", self.low, self.high)));
        }
        Ok(())
    }

    /// ln of the untruncated mass inside the bounds.
    pub fn ln_mass(&self) -> f64 {
        ln_norm_interval(
            (self.low - self.mean) / self.std,
            (self.high - self.mean) / self.std,
        )
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(x >= self.low && x <= self.high) {
            return f64::NEG_INFINITY;
        }
        ln_norm_pdf((x - self.mean) / self.std) - self.std.ln() - self.ln_mass()
    }

    /// Inverse CDF at `u`, computed on whichever tail keeps precision.
    pub fn quantile(&self, u: f64) -> f64 {
        let a = (self.low - self.mean) / self.std;
        let b = (self.high - self.mean) / self.std;
        let z = if a > 0.0 {
            upper_tail_quantile(a, b, u)
        } else if b < 0.0 {
            -upper_tail_quantile(-b, -a, 1.0 - u)
        } else {
            let pa = norm_cdf(a);
            let pb = norm_cdf(b);
            norm_inv_cdf(pa + u * (pb - pa))
        };
        (self.mean + self.std * z).clamp(self.low, self.high)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.low {
            return 0.0;
        }
        if x >= self.high {
            return 1.0;
        }
        let a = (self.low - self.mean) / self.std;
        let z = (x - self.mean) / self.std;
        (ln_norm_interval(a, z) - self.ln_mass()).exp()
    }
}

/// Quantile of a standard normal truncated to `[a, b]` with `a > 0`.
fn upper_tail_quantile(a: f64, b: f64, u: f64) -> f64 {
    let qa = norm_sf(a);
    if qa > 1e-300 {
        let qb = norm_sf(b);
        norm_inv_sf(qa - u * (qa - qb)).clamp(a, b)
    } else {
        // Far tail: the density is proportional to z·exp(−z²/2) to first order.
        let span = 1.0 - (-(b * b - a * a) / 2.0).exp();
        (a * a - 2.0 * (-u * span).ln_1p()).sqrt().clamp(a, b)
    }
}

/// A distribution with validated parameters.
///
/// Categorical probabilities and mixture weights are stored exactly as given
/// (so protocol encodings stay canonical) and normalized when evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Uniform {
        low: f64,
        high: f64,
    },
    Normal {
        mean: f64,
        std: f64,
    },
    TruncatedNormal(TruncatedNormal),
    Categorical {
        probs: Vec<f64>,
    },
    Poisson {
        rate: f64,
    },
    MixtureTruncatedNormal {
        weights: Vec<f64>,
        components: Vec<TruncatedNormal>,
    },
}

/// Set of values with positive density or mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    /// Closed interval `[low, high]`.
    Interval { low: f64, high: f64 },
    /// `{0, .., count - 1}`.
    Indices { count: usize },
    /// `{0, 1, 2, ..}`.
    Naturals,
    Reals,
}

impl Support {
    /// True when every point of `other` lies in `self`.
    pub fn contains_support(&self, other: &Support) -> bool {
        match (self, other) {
            (Support::Reals, Support::Reals | Support::Interval { .. }) => true,
            (Support::Interval { low, high }, Support::Interval { low: l, high: h }) => {
                l >= low && h <= high
            }
            (Support::Indices { count }, Support::Indices { count: c }) => c <= count,
            (Support::Naturals, Support::Indices { .. } | Support::Naturals) => true,
            _ => false,
        }
    }
}

fn check_simplex(distribution: &'static str, xs: &[f64]) -> Result<(), DistributionError> {
    let bad = |reason: String| DistributionError::InvalidParameter {
        distribution,
        reason,
    };
    if xs.is_empty() {
        return Err(bad("empty probability vector".into()));
    }
    if let Some(p) = xs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(bad(format!("entry {p} is not a non-negative real")));
    }
    let sum: f64 = xs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(bad(format!("entries sum to {sum}, not 1")));
    }
    Ok(())
}

impl DistributionSpec {
    pub fn uniform(low: f64, high: f64) -> Result<Self, DistributionError> {
        let d = Self::Uniform { low, high };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mean: f64, std: f64) -> Result<Self, DistributionError> {
        let d = Self::Normal { mean, std };
        d.validate()?;
        Ok(d)
    }

    pub fn truncated_normal(
        mean: f64,
        std: f64,
        low: f64,
        high: f64,
    ) -> Result<Self, DistributionError> {
        Ok(Self::TruncatedNormal(TruncatedNormal::new(
            mean, std, low, high,
        )?))
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self, DistributionError> {
        let d = Self::Categorical { probs };
        d.validate()?;
        Ok(d)
    }

    pub fn poisson(rate: f64) -> Result<Self, DistributionError> {
        let d = Self::Poisson { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn mixture_truncated_normal(
        weights: Vec<f64>,
        components: Vec<TruncatedNormal>,
    ) -> Result<Self, DistributionError> {
        let d = Self::MixtureTruncatedNormal {
            weights,
            components,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn kind(&self) -> DistributionKind {
        match self {
            Self::Uniform { .. } => DistributionKind::Uniform,
            Self::Normal { .. } => DistributionKind::Normal,
            Self::TruncatedNormal(_) => DistributionKind::TruncatedNormal,
            Self::Categorical { .. } => DistributionKind::Categorical,
            Self::Poisson { .. } => DistributionKind::Poisson,
            Self::MixtureTruncatedNormal { .. } => DistributionKind::MixtureTruncatedNormal,
        }
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        match self {
            Self::Uniform { low, high } => {
                if low.is_finite() && high.is_finite() && low < high {
                    Ok(())
                } else {
                    Err(DistributionError::InvalidParameter {
                        distribution: "Uniform",
                        reason: format!("bounds [{low}, {high}] invalid"),
                    })
                }
            }
            Self::Normal { mean, std } => {
                if mean.is_finite() && *std > 0.0 && std.is_finite() {
                    Ok(())
                } else {
                    Err(DistributionError::InvalidParameter {
                        distribution: "Normal",
                        reason: format!("mean {mean}, std {std}"),
                    })
                }
            }
            Self::TruncatedNormal(tn) => tn.validate(),
            Self::Categorical { probs } => check_simplex("Categorical", probs),
            Self::Poisson { rate } => {
                if rate.is_finite() && *rate >= 0.0 {
                    Ok(())
                } else {
                    Err(DistributionError::InvalidParameter {
                        distribution: "Poisson",
                        reason: format!("rate {rate} must be non-negative"),
                    })
                }
            }
            Self::MixtureTruncatedNormal {
                weights,
                components,
            } => {
                check_simplex("MixtureTruncatedNormal", weights)?;
                let bad = |reason: String| DistributionError::InvalidParameter {
                    distribution: "MixtureTruncatedNormal",
                    reason,
                };
                if weights.len() != components.len() {
                    return Err(bad(format!(
                        "{} weights for {} components",
                        weights.len(),
                        components.len()
                    )));
                }
                for c in components {
                    c.validate()?;
                }
                let first = components[0];
                if components
                    .iter()
                    .any(|c| c.low != first.low || c.high != first.high)
                {
                    return Err(bad("components must share bounds".into()));
                }
                Ok(())
            }
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Self::Uniform { low, high } => Support::Interval {
                low: *low,
                high: *high,
            },
            Self::Normal { .. } => Support::Reals,
            Self::TruncatedNormal(tn) => Support::Interval {
                low: tn.low,
                high: tn.high,
            },
            Self::Categorical { probs } => Support::Indices { count: probs.len() },
            Self::Poisson { .. } => Support::Naturals,
            Self::MixtureTruncatedNormal { components, .. } => Support::Interval {
                low: components[0].low,
                high: components[0].high,
            },
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Categorical { .. } | Self::Poisson { .. })
    }

    /// Draws one value. See the module table for the word budget.
    pub fn sample(&self, rng: &mut Rng) -> Value {
        match self {
            Self::Uniform { low, high } => {
                let x = low + (high - low) * rng.uniform();
                Value::Real(x.min(*high))
            }
            Self::Normal { mean, std } => Value::Real(mean + std * rng.standard_normal()),
            Self::TruncatedNormal(tn) => Value::Real(tn.quantile(rng.uniform_open())),
            Self::Categorical { probs } => {
                Value::Integer(pick_index(probs, rng.uniform()) as i64)
            }
            Self::Poisson { rate } => Value::Integer(sample_poisson(*rate, rng)),
            Self::MixtureTruncatedNormal {
                weights,
                components,
            } => {
                let k = pick_index(weights, rng.uniform());
                Value::Real(components[k].quantile(rng.uniform_open()))
            }
        }
    }

    /// Log density (continuous) or log mass (discrete); −∞ outside the support.
    pub fn log_prob(&self, value: &Value) -> Result<f64, DistributionError> {
        if self.is_discrete() {
            let k = match value {
                Value::Integer(k) => *k,
                other => {
                    return Err(DistributionError::TypeMismatch {
                        distribution: self.kind().name(),
                        found: value_kind_name(other),
                    })
                }
            };
            return Ok(match self {
                Self::Categorical { probs } => {
                    if k < 0 || k as usize >= probs.len() {
                        f64::NEG_INFINITY
                    } else {
                        let sum: f64 = probs.iter().sum();
                        (probs[k as usize] / sum).ln()
                    }
                }
                Self::Poisson { rate } => poisson_ln_pmf(*rate, k),
                _ => unreachable!(),
            });
        }
        let x = match value {
            Value::Real(x) => *x,
            other => {
                return Err(DistributionError::TypeMismatch {
                    distribution: self.kind().name(),
                    found: value_kind_name(other),
                })
            }
        };
        if x.is_nan() {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            Self::Uniform { low, high } => {
                if x >= *low && x <= *high {
                    -(high - low).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Normal { mean, std } => ln_norm_pdf((x - mean) / std) - std.ln(),
            Self::TruncatedNormal(tn) => tn.log_density(x),
            Self::MixtureTruncatedNormal {
                weights,
                components,
            } => {
                let sum: f64 = weights.iter().sum();
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| (w / sum).ln() + c.log_density(x))
                    .collect();
                special::log_sum_exp(&terms)
            }
            _ => unreachable!(),
        })
    }

    /// Tempered categorical `p_k^α / Σ p_j^α`; `α = 0` gives uniform over the
    /// classes with positive prior mass. Other distributions are returned unchanged.
    pub fn inflate(&self, alpha: f64) -> DistributionSpec {
        match self {
            Self::Categorical { probs } => {
                let tempered: Vec<f64> = probs
                    .iter()
                    .map(|&p| if p > 0.0 { p.powf(alpha) } else { 0.0 })
                    .collect();
                let sum: f64 = tempered.iter().sum();
                Self::Categorical {
                    probs: tempered.into_iter().map(|p| p / sum).collect(),
                }
            }
            other => other.clone(),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { low, high } => write!(f, "Uniform({low}, {high})"),
            Self::Normal { mean, std } => write!(f, "Normal({mean}, {std})"),
            Self::TruncatedNormal(t) => write!(
                f,
                "TruncatedNormal({}, {}, [{}, {}])",
                t.mean, t.std, t.low, t.high
            ),
            Self::Categorical { probs } => write!(f, "Categorical({})", probs.len()),
            Self::Poisson { rate } => write!(f, "Poisson({rate})"),
            Self::MixtureTruncatedNormal { weights, .. } => {
                write!(f, "MixtureTruncatedNormal({})", weights.len())
            }
        }
    }
}

pub(crate) fn value_kind_name(v: &Value) -> &'static str {
    match v {
        Value::Real(_) => "Real",
        Value::Integer(_) => "Integer",
        Value::RealVector(_) => "RealVector",
        Value::Boolean(_) => "Boolean",
    }
}

/// Inverse-CDF pick over unnormalized non-negative weights; never returns a zero-weight index.
fn pick_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last_positive = i;
        if target < cum {
            return i;
        }
    }
    last_positive
}

pub fn poisson_ln_pmf(rate: f64, k: i64) -> f64 {
    if k < 0 {
        return f64::NEG_INFINITY;
    }
    if rate == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = k as f64;
    k * rate.ln() - rate - ln_gamma(k + 1.0)
}

fn sample_poisson(rate: f64, rng: &mut Rng) -> i64 {
    if rate < POISSON_INVERSION_LIMIT {
        let u = rng.uniform();
        let mut k = 0i64;
        let mut p = (-rate).exp();
        let mut cdf = p;
        let cap = (rate + 40.0 * rate.sqrt() + 40.0) as i64;
        while u >= cdf && k < cap {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
        }
        return k;
    }
    // PTRS, Hörmann (1993).
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as i64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -rate + k * loglam - ln_gamma(k + 1.0)
        {
            return k as i64;
        }
    }
}
