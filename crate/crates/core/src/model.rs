//! The VR traffic model.
//!
//! A stream is configured by its target data rate `R` (bit/s) and frame rate
//! `F` (frame/s). Frames are i.i.d.:
//!
//! - inter-frame intervals are logistic with mean `1/F` and standard
//!   deviation `c/F`;
//! - frame sizes follow a two-component Gaussian mixture whose means are
//!   `s_I * S` and `s_P * S` and whose standard deviations are
//!   `a_I * S^b_I` and `a_P * S^b_P`, with `S = R / (8F)`.
//!
//! **Units:** `S` and every size-valued quantity are in *bytes*. The
//! power-law coefficients only reproduce the published fits when `S` is
//! expressed in bytes (e.g. `S = 22836` gives `sigma_P ~ 4795 B`).
//!
//! The mixture weight is fixed by requiring the mixture mean to equal `S`:
//! `w_I = (1 - s_P) / (s_I - s_P)`, independent of `S`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rv::{gmm2_sample, logistic_sample, Gmm2Params, LogisticParams, RngStream};
use crate::{Error, Result};

/// Rejection budget for non-positive frame-size draws.
pub const MAX_FRAME_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrModelConstants {
    /// IFI standard deviation times frame rate (seconds * fps).
    pub c: f64,
    pub s_i: f64,
    pub s_p: f64,
    pub a_i: f64,
    pub b_i: f64,
    pub a_p: f64,
    pub b_p: f64,
}

impl Default for VrModelConstants {
    fn default() -> Self {
        Self::FITTED
    }
}

impl VrModelConstants {
    /// Constants fitted to the reference VR captures.
    pub const FITTED: Self = Self {
        c: 0.0827,
        s_i: 1.1764,
        s_p: 0.9008,
        a_i: 26.2065,
        b_i: 0.5730,
        a_p: 9.0399,
        b_p: 0.6251,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c, self.s_i, self.s_p, self.a_i, self.b_i, self.a_p, self.b_p,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite constants {self:?}"
            )));
        }
        if self.c < 0.0 || self.a_i < 0.0 || self.a_p < 0.0 {
            return Err(Error::InvalidParameter(
                "c, a_I and a_P must be non-negative".into(),
            ));
        }
        derive_weights(self.s_i, self.s_p).map(|_| ())
    }

    /// Reads constants from JSON. Both a bare constants object and a fit
    /// report (which carries them under `"constants"`) are accepted.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum ParamFile {
            Report { constants: VrModelConstants },
            Bare(VrModelConstants),
        }
        let k = match serde_json::from_str::<ParamFile>(text)? {
            ParamFile::Report { constants } => constants,
            ParamFile::Bare(k) => k,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Mixture weights `(w_I, w_P)` that make the mixture mean equal `S`.
pub fn derive_weights(s_i: f64, s_p: f64) -> Result<(f64, f64)> {
    if !(s_p <= 1.0 && 1.0 <= s_i) || s_i == s_p {
        return Err(Error::InvalidSlopes { s_i, s_p });
    }
    let span = s_i - s_p;
    Ok(((1.0 - s_p) / span, (s_i - 1.0) / span))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VrStreamParams {
    pub target_rate_bps: f64,
    pub frame_rate: f64,
}

impl VrStreamParams {
    pub fn new(target_rate_bps: f64, frame_rate: f64) -> Result<Self> {
        if !(target_rate_bps > 0.0 && target_rate_bps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "target rate must be positive, got {target_rate_bps}"
            )));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        Ok(Self {
            target_rate_bps,
            frame_rate,
        })
    }

    pub fn from_mbps(rate_mbps: f64, fps: f64) -> Result<Self> {
        Self::new(rate_mbps * 1e6, fps)
    }

    /// `S = R / (8F)` in bytes.
    pub fn mean_frame_size(&self) -> f64 {
        self.target_rate_bps / (8.0 * self.frame_rate)
    }
}

pub fn derive_ifi_model(params: &VrStreamParams, k: &VrModelConstants) -> LogisticParams {
    let mean = 1.0 / params.frame_rate;
    let std = k.c / params.frame_rate;
    LogisticParams {
        mu: mean,
        s: std * 3f64.sqrt() / std::f64::consts::PI,
    }
}

pub fn derive_frame_size_model(
    params: &VrStreamParams,
    k: &VrModelConstants,
) -> Result<Gmm2Params> {
    if k.s_i == k.s_p {
        return Err(Error::DegenerateModel(format!(
            "equal slopes s_I = s_P = {} leave the weights undefined",
            k.s_i
        )));
    }
    let (w_hi, _) = derive_weights(k.s_i, k.s_p)?;
    let s = params.mean_frame_size();
    Gmm2Params::new(
        w_hi,
        k.s_i * s,
        k.a_i * s.powf(k.b_i),
        k.s_p * s,
        k.a_p * s.powf(k.b_p),
    )
}

/// A configured stream: the derived IFI and frame-size distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct VrModel {
    pub params: VrStreamParams,
    pub constants: VrModelConstants,
    pub ifi: LogisticParams,
    pub frame_size: Gmm2Params,
}

impl VrModel {
    pub fn new(params: VrStreamParams, constants: VrModelConstants) -> Result<Self> {
        constants.validate()?;
        Ok(Self {
            params,
            constants,
            ifi: derive_ifi_model(&params, &constants),
            frame_size: derive_frame_size_model(&params, &constants)?,
        })
    }

    /// Frame size in whole bytes. Non-positive mixture draws are redrawn.
    pub fn sample_frame(&self, rng: &mut RngStream) -> Result<u64> {
        for _ in 0..MAX_FRAME_ATTEMPTS {
            let x = gmm2_sample(&self.frame_size, rng);
            if x > 0.0 {
                return Ok((x.round() as u64).max(1));
            }
        }
        Err(Error::DegenerateModel(format!(
            "{MAX_FRAME_ATTEMPTS} consecutive non-positive frame sizes from {:?}",
            self.frame_size
        )))
    }

    /// Inter-frame interval in seconds, clamped below at zero.
    pub fn sample_ifi(&self, rng: &mut RngStream) -> f64 {
        logistic_sample(&self.ifi, rng).max(0.0)
    }

    /// Inter-frame interval rounded to whole nanoseconds.
    pub fn sample_ifi_ns(&self, rng: &mut RngStream) -> u64 {
        (self.sample_ifi(rng) * 1e9).round() as u64
    }
}

pub fn sample_vr_frame(
    params: &VrStreamParams,
    k: &VrModelConstants,
    rng: &mut RngStream,
) -> Result<u64> {
    VrModel::new(*params, *k)?.sample_frame(rng)
}

pub fn sample_vr_ifi(params: &VrStreamParams, k: &VrModelConstants, rng: &mut RngStream) -> f64 {
    logistic_sample(&derive_ifi_model(params, k), rng).max(0.0)
}
