//! Seedable random-variate streams.
//!
//! Every stream is a ChaCha12 generator keyed by a 64-bit seed, with the
//! ChaCha stream counter set to a caller-chosen `stream_id`. Streams with the
//! same seed and different ids are independent keystreams; the same
//! `(seed, stream_id)` pair reproduces the same draws on every platform.
//!
//! Continuous variates are produced by inverse transform where a closed-form
//! quantile exists (logistic, uniform, empirical CDF) and by Box–Muller for
//! normals. Each normal consumes exactly two uniforms and each mixture
//! component choice exactly one, so the number of draws per sample never
//! depends on the values drawn.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of the PRNG recorded in every metrics and trace header.
pub const RNG_ALGORITHM: &str = "chacha12/seed_from_u64+stream_id";

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1), 53 bits of resolution.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Standard normal via Box–Muller; always consumes two uniforms.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Location, equal to the mean.
    pub mu: f64,
    /// Scale; the standard deviation is `s * PI / sqrt(3)`.
    pub s: f64,
}

impl LogisticParams {
    /// A zero scale is accepted and yields the point mass at `mu`; the
    /// density and CDF require `s > 0`.
    pub fn new(mu: f64, s: f64) -> Result<Self> {
        if !mu.is_finite() || !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "logistic(mu={mu}, s={s}) needs finite mu and s >= 0"
            )));
        }
        Ok(Self { mu, s })
    }

    /// Parameters with the given mean and standard deviation.
    pub fn from_mean_std(mean: f64, std: f64) -> Result<Self> {
        Self::new(mean, std * 3f64.sqrt() / PI)
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn std(&self) -> f64 {
        self.s * PI / 3f64.sqrt()
    }

    fn positive_scale(&self) -> Result<f64> {
        if self.s > 0.0 {
            Ok(self.s)
        } else {
            Err(Error::InvalidParameter(format!(
                "logistic scale must be positive, got {}",
                self.s
            )))
        }
    }
}

pub fn logistic_pdf(x: f64, p: &LogisticParams) -> Result<f64> {
    let s = p.positive_scale()?;
    // The density is symmetric in (x - mu); using |z| keeps exp() from overflowing.
    let z = ((x - p.mu) / s).abs();
    let e = (-z).exp();
    Ok(e / (s * (1.0 + e) * (1.0 + e)))
}

pub fn logistic_cdf(x: f64, p: &LogisticParams) -> Result<f64> {
    let s = p.positive_scale()?;
    let z = (x - p.mu) / s;
    Ok(if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    })
}

pub fn logistic_quantile(u: f64, p: &LogisticParams) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain {
            value: u,
            domain: "(0, 1)",
        });
    }
    Ok(p.mu + p.s * (u / (1.0 - u)).ln())
}

pub fn logistic_sample(p: &LogisticParams, rng: &mut RngStream) -> f64 {
    let u = rng.uniform_open();
    p.mu + p.s * (u / (1.0 - u)).ln()
}

/// Two-component univariate Gaussian mixture. The "hi" component is the one
/// with the larger mean (I-frames in the VR model), "lo" the smaller (P-frames).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gmm2Params {
    pub w_hi: f64,
    pub mu_hi: f64,
    pub sigma_hi: f64,
    pub mu_lo: f64,
    pub sigma_lo: f64,
}

impl Gmm2Params {
    pub fn new(w_hi: f64, mu_hi: f64, sigma_hi: f64, mu_lo: f64, sigma_lo: f64) -> Result<Self> {
        let p = Self {
            w_hi,
            mu_hi,
            sigma_hi,
            mu_lo,
            sigma_lo,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.w_hi,
            self.mu_hi,
            self.sigma_hi,
            self.mu_lo,
            self.sigma_lo,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(format!(
                "non-finite mixture {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.w_hi) {
            return Err(Error::InvalidParameter(format!(
                "mixture weight {} outside [0, 1]",
                self.w_hi
            )));
        }
        if self.sigma_hi < 0.0 || self.sigma_lo < 0.0 {
            return Err(Error::InvalidParameter("negative mixture sigma".into()));
        }
        if self.mu_hi < self.mu_lo {
            return Err(Error::InvalidParameter(format!(
                "mu_hi {} < mu_lo {}",
                self.mu_hi, self.mu_lo
            )));
        }
        Ok(())
    }

    pub fn w_lo(&self) -> f64 {
        1.0 - self.w_hi
    }

    pub fn mean(&self) -> f64 {
        self.w_hi * self.mu_hi + self.w_lo() * self.mu_lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Hi,
    Lo,
}

/// Draws one mixture sample and reports which component produced it.
pub fn gmm2_sample_labeled(p: &Gmm2Params, rng: &mut RngStream) -> (f64, Component) {
    if rng.uniform() < p.w_hi {
        (rng.normal(p.mu_hi, p.sigma_hi), Component::Hi)
    } else {
        (rng.normal(p.mu_lo, p.sigma_lo), Component::Lo)
    }
}

pub fn gmm2_sample(p: &Gmm2Params, rng: &mut RngStream) -> f64 {
    gmm2_sample_labeled(p, rng).0
}

/// Piecewise-linear inverse CDF over `(value, cumulative probability)` knots.
///
/// A uniform draw below the first knot's probability returns the first
/// value, so the first knot carries a point mass; between knots the value is
/// interpolated linearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    points: Vec<(f64, f64)>,
}

impl EmpiricalCdf {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let Some(&(_, last)) = points.last() else {
            return Err(Error::InvalidParameter("empty CDF".into()));
        };
        if (last - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "CDF must end at probability 1, ends at {last}"
            )));
        }
        for (i, &(v, p)) in points.iter().enumerate() {
            if !v.is_finite() || !(p > 0.0 || (i == 0 && p == 0.0)) || p > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "CDF knot {i} ({v}, {p}) out of range"
                )));
            }
            if i > 0 {
                let (pv, pp) = points[i - 1];
                if p <= pp || v < pv {
                    return Err(Error::InvalidParameter(format!(
                        "CDF knots must be sorted with strictly increasing probability (knot {i})"
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let idx = self.points.partition_point(|&(_, p)| p < u);
        if idx == 0 {
            return self.points[0].0;
        }
        let Some(&(v1, p1)) = self.points.get(idx) else {
            return self.points[self.points.len() - 1].0;
        };
        let (v0, p0) = self.points[idx - 1];
        v0 + (v1 - v0) * (u - p0) / (p1 - p0)
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        self.quantile(rng.uniform_open())
    }
}

pub fn empirical_cdf_sample(cdf: &EmpiricalCdf, rng: &mut RngStream) -> f64 {
    cdf.sample(rng)
}

/// A scalar distribution for the simple burst generator.
///
/// The textual form (used on the command line) is one of
/// `const:V`, `uniform:MIN:MAX`, `normal:MEAN:STD`, `logistic:MU:S` or
/// `ecdf:V1=P1,V2=P2,...`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variate {
    Constant { value: f64 },
    Uniform { min: f64, max: f64 },
    Normal { mean: f64, std: f64 },
    Logistic(LogisticParams),
    Empirical(EmpiricalCdf),
}

impl Variate {
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            Variate::Constant { value } => *value,
            Variate::Uniform { min, max } => min + (max - min) * rng.uniform(),
            Variate::Normal { mean, std } => rng.normal(*mean, *std),
            Variate::Logistic(p) => logistic_sample(p, rng),
            Variate::Empirical(cdf) => cdf.sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Variate::Constant { value } => *value,
            Variate::Uniform { min, max } => 0.5 * (min + max),
            Variate::Normal { mean, .. } => *mean,
            Variate::Logistic(p) => p.mu,
            Variate::Empirical(cdf) => {
                let pts = cdf.points();
                let mut mean = pts[0].0 * pts[0].1;
                for w in pts.windows(2) {
                    mean += 0.5 * (w[0].0 + w[1].0) * (w[1].1 - w[0].1);
                }
                mean
            }
        }
    }
}

impl fmt::Display for Variate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variate::Constant { value } => write!(f, "const:{value}"),
            Variate::Uniform { min, max } => write!(f, "uniform:{min}:{max}"),
            Variate::Normal { mean, std } => write!(f, "normal:{mean}:{std}"),
            Variate::Logistic(p) => write!(f, "logistic:{}:{}", p.mu, p.s),
            Variate::Empirical(cdf) => {
                write!(f, "ecdf:")?;
                for (i, (v, p)) in cdf.points().iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}={p}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Variate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse distribution {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let args: Vec<&str> = rest.split(':').collect();
        let v = match (kind, args.as_slice()) {
            ("const", [v]) => Variate::Constant { value: num(v)? },
            ("uniform", [a, b]) => {
                let (min, max) = (num(a)?, num(b)?);
                if max < min {
                    return Err(bad());
                }
                Variate::Uniform { min, max }
            }
            ("normal", [m, sd]) => {
                let (mean, std) = (num(m)?, num(sd)?);
                if std < 0.0 {
                    return Err(bad());
                }
                Variate::Normal { mean, std }
            }
            ("logistic", [m, sc]) => Variate::Logistic(LogisticParams::new(num(m)?, num(sc)?)?),
            ("ecdf", [knots]) => {
                let points = knots
                    .split(',')
                    .map(|k| {
                        let (v, p) = k.split_once('=').ok_or_else(bad)?;
                        Ok((num(v)?, num(p)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Variate::Empirical(EmpiricalCdf::new(points)?)
            }
            _ => return Err(bad()),
        };
        Ok(v)
    }
}
