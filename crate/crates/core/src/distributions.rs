//! Light-tailed positive distributions for interarrival and service times.
//!
//! Every supported law has a closed-form moment generating function, a
//! closed-form exponential tilt and a closed-form equilibrium (stationary
//! excess) law, so the samplers never fall back to numerical inversion.
//!
//! | Literal | Law | Mean |
//! |---|---|---|
//! | `exp(rate=r)` | Exponential(r) | 1/r |
//! | `erlang(k=k, rate=r)` | Erlang(k, r) | k/r |
//! | `hyperexp(w=[..], rate=[..])` | mixture of exponentials | Σ wᵢ/rᵢ |
//! | `uniform(lo=a, hi=b)` | Uniform(a, b), service only | (a+b)/2 |
//!
//! All sampling goes through a caller-supplied random stream.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngExt};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("moment generating function diverges at s={s} (abscissa {abscissa})")]
    Divergent { s: f64, abscissa: f64 },
    #[error("cannot parse distribution literal `{literal}`: {reason}")]
    Parse { literal: String, reason: String },
}

/// A positive, absolutely continuous law with finite exponential moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistributionSpec {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    UniformShifted { lo: f64, hi: f64 },
}

impl DistributionSpec {
    pub fn exponential(rate: f64) -> Self {
        DistributionSpec::Exponential { rate }
    }

    pub fn erlang(shape: u32, rate: f64) -> Self {
        DistributionSpec::Erlang { shape, rate }
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Self {
        DistributionSpec::HyperExponential { weights, rates }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        DistributionSpec::UniformShifted { lo, hi }
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        let bad = |msg: String| Err(DistributionError::Invalid(msg));
        match self {
            DistributionSpec::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
            }
            DistributionSpec::Erlang { shape, rate } => {
                if *shape == 0 {
                    return bad("erlang shape must be at least 1".into());
                }
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("erlang rate must be positive, got {rate}"));
                }
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return bad("hyperexp needs equally many weights and rates".into());
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return bad("hyperexp weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > WEIGHT_TOL {
                    return bad(format!("hyperexp weights sum to {total}, not 1"));
                }
                if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                    return bad("hyperexp rates must be positive".into());
                }
            }
            DistributionSpec::UniformShifted { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && hi > lo) {
                    return bad(format!("uniform needs 0 <= lo < hi, got lo={lo}, hi={hi}"));
                }
            }
        }
        Ok(())
    }

    /// Interarrival laws must put mass on arbitrarily large values.
    pub fn has_unbounded_support(&self) -> bool {
        !matches!(self, DistributionSpec::UniformShifted { .. })
    }

    pub fn is_exponential(&self) -> bool {
        match self {
            DistributionSpec::Exponential { .. } => true,
            DistributionSpec::Erlang { shape, .. } => *shape == 1,
            DistributionSpec::HyperExponential { weights, rates } => {
                let active: Vec<f64> = weights
                    .iter()
                    .zip(rates)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(_, r)| *r)
                    .collect();
                active.windows(2).all(|p| p[0] == p[1])
            }
            DistributionSpec::UniformShifted { .. } => false,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistributionSpec::Exponential { rate } => 1.0 / rate,
            DistributionSpec::Erlang { shape, rate } => f64::from(*shape) / rate,
            DistributionSpec::HyperExponential { weights, rates } => {
                weights.iter().zip(rates).map(|(w, r)| w / r).sum()
            }
            DistributionSpec::UniformShifted { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            DistributionSpec::Exponential { rate } => 2.0 / (rate * rate),
            DistributionSpec::Erlang { shape, rate } => {
                let k = f64::from(*shape);
                k * (k + 1.0) / (rate * rate)
            }
            DistributionSpec::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| 2.0 * w / (r * r))
                .sum(),
            DistributionSpec::UniformShifted { lo, hi } => (hi * hi + hi * lo + lo * lo) / 3.0,
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    /// Supremum of the arguments at which the mgf is finite.
    pub fn abscissa(&self) -> f64 {
        match self {
            DistributionSpec::Exponential { rate } | DistributionSpec::Erlang { rate, .. } => *rate,
            DistributionSpec::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .filter(|(w, _)| **w > 0.0)
                .map(|(_, r)| *r)
                .fold(f64::INFINITY, f64::min),
            DistributionSpec::UniformShifted { .. } => f64::INFINITY,
        }
    }

    fn check_finite(&self, s: f64) -> Result<(), DistributionError> {
        let abscissa = self.abscissa();
        if s.is_nan() || s >= abscissa {
            return Err(DistributionError::Divergent { s, abscissa });
        }
        Ok(())
    }

    /// E[exp(sX)].
    pub fn mgf(&self, s: f64) -> Result<f64, DistributionError> {
        self.log_mgf(s).map(f64::exp)
    }

    /// log E[exp(sX)], evaluated without forming the mgf itself so that large
    /// arguments do not overflow.
    pub fn log_mgf(&self, s: f64) -> Result<f64, DistributionError> {
        self.check_finite(s)?;
        Ok(match self {
            DistributionSpec::Exponential { rate } => (rate / (rate - s)).ln(),
            DistributionSpec::Erlang { shape, rate } => f64::from(*shape) * (rate / (rate - s)).ln(),
            DistributionSpec::HyperExponential { weights, rates } => {
                let terms: Vec<f64> = weights
                    .iter()
                    .zip(rates)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, r)| w.ln() + (r / (r - s)).ln())
                    .collect();
                log_sum_exp(&terms)
            }
            DistributionSpec::UniformShifted { lo, hi } => {
                let width = hi - lo;
                let x = s * width;
                if x == 0.0 {
                    0.0
                } else if x.abs() < 1e-8 {
                    s * lo + (x * 0.5) + x * x / 24.0
                } else if s > 0.0 {
                    s * hi + (-(-x).exp_m1()).ln() - x.ln()
                } else {
                    s * lo + (-x.exp_m1()).ln() - (-x).ln()
                }
            }
        })
    }

    /// A prepared sampler for the nominal law.
    pub fn sampler(&self) -> Sampler {
        match self {
            DistributionSpec::Exponential { rate } => Sampler::Exponential { rate: *rate },
            DistributionSpec::Erlang { shape, rate } => Sampler::Erlang {
                shape: *shape,
                rate: *rate,
            },
            DistributionSpec::HyperExponential { weights, rates } => {
                Sampler::mixture(weights.clone(), rates.clone())
            }
            DistributionSpec::UniformShifted { lo, hi } => Sampler::Uniform { lo: *lo, hi: *hi },
        }
    }

    /// A prepared sampler for the exponentially tilted law with density
    /// exp(sx) f(x) / E[exp(sX)].
    pub fn tilted_sampler(&self, s: f64) -> Result<Sampler, DistributionError> {
        self.check_finite(s)?;
        if s == 0.0 {
            return Ok(self.sampler());
        }
        Ok(match self {
            DistributionSpec::Exponential { rate } => Sampler::Exponential { rate: rate - s },
            DistributionSpec::Erlang { shape, rate } => Sampler::Erlang {
                shape: *shape,
                rate: rate - s,
            },
            DistributionSpec::HyperExponential { weights, rates } => {
                // Component k is reweighted by its own mgf r_k / (r_k - s).
                let log_w: Vec<f64> = weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| {
                        if *w > 0.0 {
                            w.ln() + (r / (r - s)).ln()
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                let norm = log_sum_exp(&log_w);
                let new_w = log_w.iter().map(|lw| (lw - norm).exp()).collect();
                let new_r = rates.iter().map(|r| r - s).collect();
                Sampler::mixture(new_w, new_r)
            }
            DistributionSpec::UniformShifted { lo, hi } => Sampler::TiltedUniform {
                lo: *lo,
                hi: *hi,
                s,
            },
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler().sample(rng)
    }

    pub fn tilted_sample<R: Rng + ?Sized>(&self, s: f64, rng: &mut R) -> Result<f64, DistributionError> {
        Ok(self.tilted_sampler(s)?.sample(rng))
    }

    /// Draw from the stationary-excess law with density P(X > x) / E[X]: the
    /// time from an arbitrary instant to the next epoch of a stationary renewal
    /// process with this gap law.
    pub fn equilibrium_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Exponential { rate } => exp1(rng) / rate,
            DistributionSpec::Erlang { shape, rate } => {
                // Uniform mixture of Erlang(1..=k).
                let phases = rng.random_range(1..=*shape);
                erlang(phases, *rate, rng)
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                let w: Vec<f64> = weights.iter().zip(rates).map(|(w, r)| w / r).collect();
                let total: f64 = w.iter().sum();
                let w = w.into_iter().map(|x| x / total).collect();
                Sampler::mixture(w, rates.clone()).sample(rng)
            }
            DistributionSpec::UniformShifted { lo, hi } => {
                let mean = 0.5 * (lo + hi);
                let u: f64 = rng.random();
                if u * mean < *lo {
                    // Flat part of the density on [0, lo].
                    u * mean
                } else {
                    let v: f64 = rng.random();
                    hi - (hi - lo) * v.sqrt()
                }
            }
        }
    }

    /// Draw X - age conditional on X > age.
    pub fn excess_given_age<R: Rng + ?Sized>(&self, age: f64, rng: &mut R) -> f64 {
        let age = age.max(0.0);
        match self {
            DistributionSpec::Exponential { rate } => exp1(rng) / rate,
            DistributionSpec::Erlang { shape, rate } => {
                // Phases already completed by `age` follow a truncated Poisson law.
                let x = rate * age;
                let log_w: Vec<f64> = (0..*shape)
                    .map(|j| f64::from(j) * x.ln() - ln_factorial(j))
                    .map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v })
                    .collect();
                let log_w = if age == 0.0 {
                    let mut v = vec![f64::NEG_INFINITY; *shape as usize];
                    v[0] = 0.0;
                    v
                } else {
                    log_w
                };
                let done = categorical_from_logs(&log_w, rng);
                erlang(*shape - done as u32, *rate, rng)
            }
            DistributionSpec::HyperExponential { weights, rates } => {
                let log_w: Vec<f64> = weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| if *w > 0.0 { w.ln() - r * age } else { f64::NEG_INFINITY })
                    .collect();
                let k = categorical_from_logs(&log_w, rng);
                exp1(rng) / rates[k]
            }
            DistributionSpec::UniformShifted { lo, hi } => {
                let u: f64 = rng.random();
                if age < *lo {
                    lo + u * (hi - lo) - age
                } else if age < *hi {
                    u * (hi - age)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            DistributionSpec::Exponential { rate } => -(-rate * x).exp_m1(),
            DistributionSpec::Erlang { shape, rate } => {
                let y = rate * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..*shape {
                    term *= y / f64::from(j);
                    sum += term;
                }
                1.0 - (-y).exp() * sum
            }
            DistributionSpec::HyperExponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(w, r)| w * -(-r * x).exp_m1())
                .sum(),
            DistributionSpec::UniformShifted { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    /// The law of `a·X`.
    pub fn scaled(&self, a: f64) -> DistributionSpec {
        match self {
            DistributionSpec::Exponential { rate } => DistributionSpec::Exponential { rate: rate / a },
            DistributionSpec::Erlang { shape, rate } => DistributionSpec::Erlang {
                shape: *shape,
                rate: rate / a,
            },
            DistributionSpec::HyperExponential { weights, rates } => DistributionSpec::HyperExponential {
                weights: weights.clone(),
                rates: rates.iter().map(|r| r / a).collect(),
            },
            DistributionSpec::UniformShifted { lo, hi } => DistributionSpec::UniformShifted {
                lo: lo * a,
                hi: hi * a,
            },
        }
    }
}

/// A distribution with its parameters laid out for repeated draws.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Exponential { rate: f64 },
    Erlang { shape: u32, rate: f64 },
    Mixture { cumulative: Vec<f64>, rates: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    TiltedUniform { lo: f64, hi: f64, s: f64 },
}

impl Sampler {
    fn mixture(weights: Vec<f64>, rates: Vec<f64>) -> Sampler {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Sampler::Mixture { cumulative, rates }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exponential { rate } => exp1(rng) / rate,
            Sampler::Erlang { shape, rate } => erlang(*shape, *rate, rng),
            Sampler::Mixture { cumulative, rates } => {
                let u: f64 = rng.random();
                let k = cumulative.iter().position(|c| u < *c).unwrap_or(rates.len() - 1);
                exp1(rng) / rates[k]
            }
            Sampler::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                lo + u * (hi - lo)
            }
            Sampler::TiltedUniform { lo, hi, s } => {
                let u: f64 = rng.random();
                let x = s * (hi - lo);
                let y = if *s > 0.0 {
                    hi + (u + (1.0 - u) * (-x).exp()).ln() / s
                } else {
                    lo + ((1.0 - u) + u * x.exp()).ln() / s
                };
                y.clamp(*lo, *hi)
            }
        }
    }
}

#[inline]
fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

#[inline]
fn erlang<R: Rng + ?Sized>(shape: u32, rate: f64, rng: &mut R) -> f64 {
    (0..shape).map(|_| exp1(rng)).sum::<f64>() / rate
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| f64::from(k).ln()).sum()
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn categorical_from_logs<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let norm = log_sum_exp(log_w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lw) in log_w.iter().enumerate() {
        acc += (lw - norm).exp();
        if u < acc {
            return k;
        }
    }
    log_w
        .iter()
        .rposition(|lw| lw.is_finite())
        .unwrap_or(log_w.len() - 1)
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        match self {
            DistributionSpec::Exponential { rate } => write!(f, "exp(rate={rate})"),
            DistributionSpec::Erlang { shape, rate } => write!(f, "erlang(k={shape}, rate={rate})"),
            DistributionSpec::HyperExponential { weights, rates } => {
                write!(f, "hyperexp(w=[{}], rate=[{}])", list(weights), list(rates))
            }
            DistributionSpec::UniformShifted { lo, hi } => write!(f, "uniform(lo={lo}, hi={hi})"),
        }
    }
}

#[derive(Debug, Clone)]
enum ArgValue {
    Scalar(f64),
    List(Vec<f64>),
}

impl FromStr for DistributionSpec {
    type Err = DistributionError;

    fn from_str(literal: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| DistributionError::Parse {
            literal: literal.to_string(),
            reason: reason.to_string(),
        };
        let text = literal.trim();
        let open = text.find('(').ok_or_else(|| fail("expected `name(args)`"))?;
        if !text.ends_with(')') {
            return Err(fail("missing closing parenthesis"));
        }
        let name = text[..open].trim().to_ascii_lowercase();
        let body = &text[open + 1..text.len() - 1];

        let mut args: Vec<(String, ArgValue)> = Vec::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            let eq = rest.find('=').ok_or_else(|| fail("expected `key=value`"))?;
            let key = rest[..eq].trim().to_ascii_lowercase();
            rest = rest[eq + 1..].trim_start();
            let (value, tail) = if let Some(inner) = rest.strip_prefix('[') {
                let close = inner.find(']').ok_or_else(|| fail("unterminated list"))?;
                let items = inner[..close]
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse::<f64>().map_err(|_| fail("bad number in list")))
                    .collect::<Result<Vec<_>, _>>()?;
                (ArgValue::List(items), &inner[close + 1..])
            } else {
                let end = rest.find(',').unwrap_or(rest.len());
                let v = rest[..end]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| fail("bad number"))?;
                (ArgValue::Scalar(v), &rest[end..])
            };
            args.push((key, value));
            rest = tail.trim_start();
            if let Some(r) = rest.strip_prefix(',') {
                rest = r.trim_start();
            } else if !rest.is_empty() {
                return Err(fail("expected `,` between arguments"));
            }
        }

        let scalar = |key: &str| -> Result<f64, DistributionError> {
            match args.iter().find(|(k, _)| k == key) {
                Some((_, ArgValue::Scalar(v))) => Ok(*v),
                Some(_) => Err(fail(&format!("`{key}` must be a number"))),
                None => Err(fail(&format!("missing `{key}`"))),
            }
        };
        let list = |key: &str| -> Result<Vec<f64>, DistributionError> {
            match args.iter().find(|(k, _)| k == key) {
                Some((_, ArgValue::List(v))) => Ok(v.clone()),
                Some((_, ArgValue::Scalar(v))) => Ok(vec![*v]),
                None => Err(fail(&format!("missing `{key}`"))),
            }
        };

        let spec = match name.as_str() {
            "exp" | "exponential" => DistributionSpec::Exponential { rate: scalar("rate")? },
            "erlang" => {
                let k = scalar("k")?;
                if k < 1.0 || k.fract() != 0.0 || k > f64::from(u32::MAX) {
                    return Err(fail("`k` must be a positive integer"));
                }
                DistributionSpec::Erlang {
                    shape: k as u32,
                    rate: scalar("rate")?,
                }
            }
            "hyperexp" | "hyperexponential" => DistributionSpec::HyperExponential {
                weights: list("w")?,
                rates: list("rate")?,
            },
            "uniform" => DistributionSpec::UniformShifted {
                lo: scalar("lo")?,
                hi: scalar("hi")?,
            },
            other => return Err(fail(&format!("unknown distribution `{other}`"))),
        };
        spec.validate().map_err(|e| fail(&e.to_string()))?;
        Ok(spec)
    }
}

impl TryFrom<String> for DistributionSpec {
    type Error = DistributionError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<DistributionSpec> for String {
    fn from(value: DistributionSpec) -> Self {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_one_sample, ks_two_sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn all_specs() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::exponential(2.0),
            DistributionSpec::erlang(3, 6.0),
            DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![1.0, 4.0]),
            DistributionSpec::uniform(1.0, 2.0),
            DistributionSpec::uniform(0.0, 1.0),
        ]
    }

    #[test]
    fn means() {
        assert_eq!(DistributionSpec::exponential(2.0).mean(), 0.5);
        assert_eq!(DistributionSpec::erlang(3, 6.0).mean(), 0.5);
        let h = DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![1.0, 4.0]);
        assert!((h.mean() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn mgf_values() {
        let e = DistributionSpec::exponential(1.0);
        assert!((e.mgf(0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(e.mgf(1.0), Err(DistributionError::Divergent { .. })));
        let er = DistributionSpec::erlang(2, 3.0);
        assert!((er.mgf(1.0).unwrap() - 2.25).abs() < 1e-12);
        let h = DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![1.0, 4.0]);
        assert!(h.mgf(1.5).is_err());
        let h0 = DistributionSpec::hyperexponential(vec![0.0, 1.0], vec![1.0, 4.0]);
        assert!(h0.mgf(1.5).is_ok());
    }

    #[test]
    fn mgf_matches_quadrature() {
        // Midpoint-rule oracle on the density; independent of the closed forms.
        fn density(spec: &DistributionSpec, x: f64) -> f64 {
            match spec {
                DistributionSpec::Exponential { rate } => rate * (-rate * x).exp(),
                DistributionSpec::Erlang { shape, rate } => {
                    let k = *shape as i32;
                    let fact: f64 = (1..k).map(f64::from).product();
                    rate.powi(k) * x.powi(k - 1) * (-rate * x).exp() / fact
                }
                DistributionSpec::HyperExponential { weights, rates } => weights
                    .iter()
                    .zip(rates)
                    .map(|(w, r)| w * r * (-r * x).exp())
                    .sum(),
                DistributionSpec::UniformShifted { lo, hi } => {
                    if x >= *lo && x <= *hi {
                        1.0 / (hi - lo)
                    } else {
                        0.0
                    }
                }
            }
        }
        for spec in all_specs() {
            for s in [-1.5, -0.3, 0.4, 0.9] {
                let upper = if spec.abscissa().is_finite() {
                    40.0 / (spec.abscissa() - s)
                } else {
                    10.0
                };
                let n = 600_000;
                let h = upper / n as f64;
                let quad: f64 = (0..n)
                    .map(|k| {
                        let x = (k as f64 + 0.5) * h;
                        (s * x).exp() * density(&spec, x) * h
                    })
                    .sum();
                let closed = spec.mgf(s).unwrap();
                assert!(
                    (quad - closed).abs() < 1e-4 * closed,
                    "{spec} s={s}: quad {quad} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn log_mgf_slope_at_zero_is_mean() {
        for spec in all_specs() {
            let h = 1e-5;
            let slope = (spec.log_mgf(h).unwrap() - spec.log_mgf(-h).unwrap()) / (2.0 * h);
            assert!((slope - spec.mean()).abs() < 1e-8, "{spec}: {slope}");
        }
    }

    #[test]
    fn uniform_log_mgf_is_stable_for_large_arguments() {
        let u = DistributionSpec::uniform(1.0, 2.0);
        let v = u.log_mgf(2000.0).unwrap();
        assert!(v.is_finite() && v > 3000.0);
        let w = u.log_mgf(-2000.0).unwrap();
        assert!(w.is_finite() && w < -1900.0);
    }

    #[test]
    fn exponential_sample_mean() {
        let spec = DistributionSpec::exponential(2.5);
        let mut r = rng(1);
        let n = 1_000_000;
        let mean = (0..n).map(|_| spec.sample(&mut r)).sum::<f64>() / n as f64;
        let sigma = (1.0 / 2.5) / (n as f64).sqrt();
        assert!((mean - 0.4).abs() < 4.0 * sigma);
    }

    #[test]
    fn erlang_matches_convolution_of_exponentials() {
        let spec = DistributionSpec::erlang(3, 2.0);
        let exp = DistributionSpec::exponential(2.0);
        let mut r = rng(2);
        let a: Vec<f64> = (0..100_000).map(|_| spec.sample(&mut r)).collect();
        let b: Vec<f64> = (0..100_000)
            .map(|_| (0..3).map(|_| exp.sample(&mut r)).sum())
            .collect();
        let (_, p) = ks_two_sample(&a, &b);
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn uniform_support() {
        let spec = DistributionSpec::uniform(1.0, 2.0);
        let mut r = rng(3);
        for _ in 0..10_000 {
            let x = spec.sample(&mut r);
            assert!((1.0..=2.0).contains(&x));
            let t = spec.tilted_sample(3.0, &mut r).unwrap();
            assert!((1.0..=2.0).contains(&t));
        }
    }

    #[test]
    fn tilted_exponential_is_rate_shifted() {
        let spec = DistributionSpec::exponential(3.0);
        let target = DistributionSpec::exponential(2.2);
        let mut r = rng(4);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| spec.tilted_sample(0.8, &mut r).unwrap())
            .collect();
        let (_, p) = ks_one_sample(&xs, |x| target.cdf(x));
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn tilted_erlang_is_rate_shifted() {
        let spec = DistributionSpec::erlang(2, 3.0);
        let target = DistributionSpec::erlang(2, 2.0);
        let mut r = rng(5);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| spec.tilted_sample(1.0, &mut r).unwrap())
            .collect();
        let (_, p) = ks_one_sample(&xs, |x| target.cdf(x));
        assert!(p > 0.01, "p={p}");
    }

    #[test]
    fn tilted_uniform_matches_weighted_cdf() {
        for s in [-2.0, 1.5] {
            let spec = DistributionSpec::uniform(1.0, 3.0);
            let mut r = rng(6);
            let xs: Vec<f64> = (0..100_000)
                .map(|_| spec.tilted_sample(s, &mut r).unwrap())
                .collect();
            let cdf = |x: f64| {
                let x = x.clamp(1.0, 3.0);
                ((s * (x - 1.0)).exp() - 1.0) / ((s * 2.0).exp() - 1.0)
            };
            let (_, p) = ks_one_sample(&xs, cdf);
            assert!(p > 0.01, "s={s} p={p}");
        }
    }

    #[test]
    fn zero_tilt_is_identity() {
        for spec in all_specs() {
            let mut r1 = rng(7);
            let mut r2 = rng(8);
            let a: Vec<f64> = (0..100_000).map(|_| spec.sample(&mut r1)).collect();
            let b: Vec<f64> = (0..100_000)
                .map(|_| spec.tilted_sample(0.0, &mut r2).unwrap())
                .collect();
            let (_, p) = ks_two_sample(&a, &b);
            assert!(p > 0.01, "{spec}: p={p}");
        }
    }

    #[test]
    fn tilted_draws_reproduce_inverse_mgf() {
        // E_tilt[exp(-sX)] = 1 / E[exp(sX)].
        let spec = DistributionSpec::hyperexponential(vec![0.3, 0.7], vec![1.0, 5.0]);
        let s = 0.5;
        let mut r = rng(9);
        let n = 1_000_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| (-s * spec.tilted_sample(s, &mut r).unwrap()).exp())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 1.0 / spec.mgf(s).unwrap();
        assert!((mean - target).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn equilibrium_laws() {
        let mut r = rng(10);
        let n = 200_000;
        // Erlang(2,3): E[X^2] / (2 E[X]) = 0.5.
        let spec = DistributionSpec::erlang(2, 3.0);
        let xs: Vec<f64> = (0..n).map(|_| spec.equilibrium_sample(&mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 4.0 * (var / n as f64).sqrt());

        // Exponential is its own equilibrium law.
        let e = DistributionSpec::exponential(1.7);
        let xs: Vec<f64> = (0..100_000).map(|_| e.equilibrium_sample(&mut r)).collect();
        assert!(ks_one_sample(&xs, |x| e.cdf(x)).1 > 0.01);

        // Uniform(0,1): density 2(1-x), CDF 1-(1-x)^2.
        let u = DistributionSpec::uniform(0.0, 1.0);
        let xs: Vec<f64> = (0..100_000).map(|_| u.equilibrium_sample(&mut r)).collect();
        let cdf = |x: f64| {
            let x = x.clamp(0.0, 1.0);
            1.0 - (1.0 - x) * (1.0 - x)
        };
        assert!(ks_one_sample(&xs, cdf).1 > 0.01);

        // Shifted uniform: density P(X > x) / mean integrated by hand.
        let u = DistributionSpec::uniform(1.0, 2.0);
        let xs: Vec<f64> = (0..100_000).map(|_| u.equilibrium_sample(&mut r)).collect();
        let cdf = |x: f64| {
            let m = 1.5;
            if x <= 1.0 {
                x / m
            } else if x <= 2.0 {
                (1.0 + (x - 1.0) - 0.5 * (x - 1.0) * (x - 1.0)) / m
            } else {
                1.0
            }
        };
        assert!(ks_one_sample(&xs, cdf).1 > 0.01);
    }

    #[test]
    fn excess_given_age_matches_rejection_oracle() {
        let mut r = rng(11);
        for spec in [
            DistributionSpec::erlang(3, 2.0),
            DistributionSpec::hyperexponential(vec![0.4, 0.6], vec![0.5, 3.0]),
            DistributionSpec::uniform(1.0, 2.0),
        ] {
            for age in [0.0, 0.7, 1.3] {
                let direct: Vec<f64> = (0..50_000).map(|_| spec.excess_given_age(age, &mut r)).collect();
                let mut oracle = Vec::with_capacity(50_000);
                while oracle.len() < 50_000 {
                    let x = spec.sample(&mut r);
                    if x > age {
                        oracle.push(x - age);
                    }
                }
                let (_, p) = ks_two_sample(&direct, &oracle);
                assert!(p > 0.001, "{spec} age={age}: p={p}");
            }
        }
    }

    #[test]
    fn scaled_law_has_scaled_mean() {
        for spec in all_specs() {
            assert!((spec.scaled(1.5).mean() - 1.5 * spec.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn literals_round_trip() {
        for text in [
            "exp(rate=1.0)",
            "erlang(k=2, rate=3.0)",
            "hyperexp(w=[0.5,0.5], rate=[1,4])",
            "uniform(lo=0,hi=1)",
        ] {
            let spec: DistributionSpec = text.parse().unwrap();
            let again: DistributionSpec = spec.to_string().parse().unwrap();
            assert_eq!(spec, again);
        }
        assert_eq!(
            "erlang(k=2, rate=3.0)".parse::<DistributionSpec>().unwrap(),
            DistributionSpec::erlang(2, 3.0)
        );
    }

    #[test]
    fn literal_errors() {
        for bad in [
            "exp(rate=-1)",
            "erlang(k=1.5, rate=2)",
            "hyperexp(w=[0.5,0.6], rate=[1,2])",
            "uniform(lo=2, hi=1)",
            "gamma(shape=2)",
            "exp rate=1",
        ] {
            assert!(bad.parse::<DistributionSpec>().is_err(), "{bad}");
        }
    }

    fn any_spec() -> impl proptest::strategy::Strategy<Value = DistributionSpec> {
        use proptest::prelude::*;
        prop_oneof![
            (0.05f64..20.0).prop_map(DistributionSpec::exponential),
            (1u32..6, 0.05f64..20.0).prop_map(|(k, r)| DistributionSpec::erlang(k, r)),
            (0.05f64..0.95, 0.05f64..20.0, 0.05f64..20.0)
                .prop_map(|(w, a, b)| DistributionSpec::hyperexponential(vec![w, 1.0 - w], vec![a, b])),
            (0.0f64..5.0, 0.01f64..5.0).prop_map(|(lo, w)| DistributionSpec::uniform(lo, lo + w)),
        ]
    }

    proptest::proptest! {
        #[test]
        fn literal_display_parses_back(spec in any_spec()) {
            proptest::prop_assert_eq!(spec.to_string().parse::<DistributionSpec>().unwrap(), spec);
        }

        #[test]
        fn cdf_is_monotone(spec in any_spec(), x in 0.0f64..10.0, dx in 0.0f64..10.0) {
            let (a, b) = (spec.cdf(x), spec.cdf(x + dx));
            proptest::prop_assert!((0.0..=1.0).contains(&a) && a <= b + 1e-15);
        }

        #[test]
        fn excess_is_positive_and_scaling_scales_mean(spec in any_spec(), age in 0.0f64..20.0, a in 1.0f64..4.0, seed in 0u64..1000) {
            let e = spec.excess_given_age(age, &mut rng(seed));
            proptest::prop_assert!(e.is_finite() && e >= 0.0);
            proptest::prop_assert!((spec.scaled(a).mean() - a * spec.mean()).abs() < 1e-9 * a * spec.mean().max(1.0));
        }
    }

}
