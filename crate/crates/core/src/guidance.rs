//! Guidance rules combining conditional and unconditional noise estimates,
//! each paired with its DDIM update.
//!
//! | mode    | combine base            | scale     | re-noise direction      |
//! |---------|-------------------------|-----------|-------------------------|
//! | CFG     | dilated `eps_null`      | omega >= 0 | guided eps             |
//! | CFGPP   | dilated `eps_null`      | lambda in [0,1] | dilated `eps_null` |
//! | NDCFG   | vanilla `eps_null`      | omega >= 0 | guided eps             |
//! | NDCFGPP | vanilla `eps_null`      | lambda in [0,1] | vanilla `eps_null` |
//!
//! In every mode the steering residual is `eps_c - eps_null` from the
//! dilated estimator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{check_input, Conditioning, NoiseEstimator};
use crate::schedule::{ddim_step, NoiseSchedule};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuidanceMode {
    #[serde(rename = "CFG")]
    Cfg,
    #[serde(rename = "CFGPP")]
    CfgPp,
    #[serde(rename = "NDCFG")]
    NdCfg,
    #[serde(rename = "NDCFGPP")]
    NdCfgPp,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 4] = [Self::Cfg, Self::CfgPp, Self::NdCfg, Self::NdCfgPp];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cfg => "CFG",
            Self::CfgPp => "CFGPP",
            Self::NdCfg => "NDCFG",
            Self::NdCfgPp => "NDCFGPP",
        }
    }

    /// Interpolating (`lambda`) modes, as opposed to extrapolating `omega`
    /// modes.
    pub fn is_interpolating(self) -> bool {
        matches!(self, Self::CfgPp | Self::NdCfgPp)
    }

    pub fn check_scale(self, scale: f64) -> Result<()> {
        let ok = if self.is_interpolating() {
            (0.0..=1.0).contains(&scale)
        } else {
            scale.is_finite() && scale >= 0.0
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ScaleOutOfRange {
                mode: self.as_str(),
                scale,
            })
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidRange(format!("unknown guidance mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    /// `omega` for CFG/NDCFG, `lambda` for CFGPP/NDCFGPP.
    pub scale: f64,
    /// Switch index: steps with `t <= tau` use the noise-damped rule.
    pub tau: usize,
    pub dilation_factor: usize,
}

impl GuidanceConfig {
    pub fn validate(&self, num_steps: usize) -> Result<()> {
        self.mode.check_scale(self.scale)?;
        if self.tau > num_steps {
            return Err(Error::InvalidRange(format!("tau {} exceeds T = {num_steps}", self.tau)));
        }
        if self.dilation_factor == 0 {
            return Err(Error::InvalidRange("dilation factor must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub z_prev: LatentTensor,
    pub eps_guided: LatentTensor,
    /// Unconditional estimate the combination starts from: vanilla for the
    /// noise-damped modes, dilated otherwise.
    pub eps_uncond: LatentTensor,
    /// Noise used for the re-noising term of the DDIM update.
    pub eps_direction: LatentTensor,
    /// Dilated `eps_c - eps_null`.
    pub residual: LatentTensor,
}

/// `eps_uncond + omega (eps_cond - eps_uncond)`, evaluated as
/// `(1 - omega) eps_uncond + omega eps_cond` in `f64` so both endpoints are
/// reproduced exactly and `omega in [0, 1]` never leaves the segment.
pub fn cfg_combine(eps_cond: &LatentTensor, eps_uncond: &LatentTensor, omega: f64) -> Result<LatentTensor> {
    eps_uncond.zip_map(eps_cond, |u, c| ((1.0 - omega) * u as f64 + omega * c as f64) as f32)
}

/// `base + scale (cond - uncond)` where `base` need not equal `uncond`.
/// Written as `cfg_combine(cond, uncond) + (base - uncond)` so that
/// `base == uncond` reproduces [`cfg_combine`] bit for bit.
fn damped_combine(base: &LatentTensor, cond: &LatentTensor, uncond: &LatentTensor, scale: f64) -> Result<LatentTensor> {
    base.ensure_same_shape(cond)?;
    base.ensure_same_shape(uncond)?;
    let data = base
        .data()
        .iter()
        .zip(cond.data())
        .zip(uncond.data())
        .map(|((&b, &c), &u)| {
            let (b, c, u) = (b as f64, c as f64, u as f64);
            ((1.0 - scale) * u + scale * c + (b - u)) as f32
        })
        .collect();
    LatentTensor::from_vec(base.height(), base.width(), base.channels(), data)
}

#[derive(Clone, Copy)]
enum Direction {
    Guided,
    Uncond,
}

struct Predictions {
    base_uncond: LatentTensor,
    cond: LatentTensor,
    uncond: LatentTensor,
}

fn dilated_pair(
    dilated: &dyn NoiseEstimator,
    z_t: &LatentTensor,
    t: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
) -> Result<(LatentTensor, LatentTensor)> {
    check_input(dilated, z_t)?;
    dilated.predict_pair(z_t, &schedule.timestep(t)?, cond)
}

fn damped_predictions(
    z_t: &LatentTensor,
    t: usize,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
) -> Result<Predictions> {
    check_input(vanilla, z_t)?;
    let ts = schedule.timestep(t)?;
    let (base, pair) = rayon::join(
        || vanilla.predict(z_t, &ts, &Conditioning::Null),
        || dilated_pair(dilated, z_t, t, cond, schedule),
    );
    let (cond, uncond) = pair?;
    Ok(Predictions {
        base_uncond: base?,
        cond,
        uncond,
    })
}

fn finish_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    p: Predictions,
    scale: f64,
    direction: Direction,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    let eps_guided = damped_combine(&p.base_uncond, &p.cond, &p.uncond, scale)?;
    let eps_direction = match direction {
        Direction::Guided => eps_guided.clone(),
        Direction::Uncond => p.base_uncond.clone(),
    };
    let z_prev = ddim_step(z_t, &eps_direction, &eps_guided, t, t_prev, schedule)?;
    let residual = p.cond.sub(&p.uncond)?;
    Ok(StepOutput {
        z_prev,
        eps_guided,
        eps_uncond: p.base_uncond,
        eps_direction,
        residual,
    })
}

#[allow(clippy::too_many_arguments)]
fn plain_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    scale: f64,
    direction: Direction,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    let (c, u) = dilated_pair(dilated, z_t, t, cond, schedule)?;
    let eps_guided = cfg_combine(&c, &u, scale)?;
    let eps_direction = match direction {
        Direction::Guided => eps_guided.clone(),
        Direction::Uncond => u.clone(),
    };
    let z_prev = ddim_step(z_t, &eps_direction, &eps_guided, t, t_prev, schedule)?;
    let residual = c.sub(&u)?;
    Ok(StepOutput {
        z_prev,
        eps_guided,
        eps_uncond: u,
        eps_direction,
        residual,
    })
}

/// Dilated CFG: combine around the dilated unconditional estimate and
/// re-noise with the guided estimate.
#[allow(clippy::too_many_arguments)]
pub fn cfg_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    GuidanceMode::Cfg.check_scale(omega)?;
    plain_step(z_t, t, t_prev, dilated, cond, omega, Direction::Guided, schedule)
}

/// CFG++ on the dilated estimator: interpolate with `lambda`, re-noise with
/// the dilated unconditional estimate.
pub fn cfgpp_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    lambda: f64,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    GuidanceMode::CfgPp.check_scale(lambda)?;
    plain_step(z_t, t, t_prev, dilated, cond, lambda, Direction::Uncond, schedule)
}

/// Noise-damped CFG: vanilla unconditional estimate plus `omega` times the
/// dilated residual; re-noise with the guided estimate.
#[allow(clippy::too_many_arguments)]
pub fn ndcfg_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    omega: f64,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    GuidanceMode::NdCfg.check_scale(omega)?;
    let p = damped_predictions(z_t, t, vanilla, dilated, cond, schedule)?;
    finish_step(z_t, t, t_prev, p, omega, Direction::Guided, schedule)
}

/// Noise-damped CFG++: vanilla unconditional estimate plus `lambda` times the
/// dilated residual; re-noise with the vanilla unconditional estimate.
#[allow(clippy::too_many_arguments)]
pub fn ndcfgpp_step(
    z_t: &LatentTensor,
    t: usize,
    t_prev: usize,
    vanilla: &dyn NoiseEstimator,
    dilated: &dyn NoiseEstimator,
    cond: &Conditioning,
    lambda: f64,
    schedule: &NoiseSchedule,
) -> Result<StepOutput> {
    GuidanceMode::NdCfgPp.check_scale(lambda)?;
    let p = damped_predictions(z_t, t, vanilla, dilated, cond, schedule)?;
    finish_step(z_t, t, t_prev, p, lambda, Direction::Uncond, schedule)
}
