//! Noise schedules and the deterministic DDIM step algebra.
//!
//! Sampler indices run `1..=T`; index `0` denotes the clean endpoint with
//! `alpha_bar = 1`. All coefficients are kept in `f64`, latents in `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    /// Betas linear in `[beta_start, beta_end]`.
    Linear,
    /// Betas linear in square-root space, then squared.
    Quadratic,
}

impl std::str::FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Spacing::Linear),
            "quadratic" => Ok(Spacing::Quadratic),
            other => Err(Error::InvalidRange(format!("unknown spacing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub num_train_steps: usize,
    pub num_sample_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub spacing: Spacing,
}

impl ScheduleParams {
    /// Latent-diffusion defaults subsampled to `num_sample_steps`.
    pub fn stable_diffusion(num_sample_steps: usize) -> Self {
        Self {
            num_train_steps: 1000,
            num_sample_steps,
            beta_start: 0.00085,
            beta_end: 0.012,
            spacing: Spacing::Quadratic,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(
            self.num_train_steps,
            self.num_sample_steps,
            self.beta_start,
            self.beta_end,
            self.spacing,
        )
    }
}

/// Coefficients needed by an estimator at one sampler index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    /// Sampler index in `0..=T`.
    pub index: usize,
    /// Underlying training timestep (1-based; 0 for the clean endpoint).
    pub model_timestep: usize,
    pub num_train_steps: usize,
    pub alpha_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_steps: usize,
    num_train_steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    timestep_map: Vec<usize>,
    params: Option<ScheduleParams>,
}

pub fn build_schedule(
    num_train_steps: usize,
    num_sample_steps: usize,
    beta_start: f64,
    beta_end: f64,
    spacing: Spacing,
) -> Result<NoiseSchedule> {
    if num_sample_steps == 0 || num_sample_steps > num_train_steps {
        return Err(Error::InvalidRange(format!(
            "need 1 <= num_sample_steps ({num_sample_steps}) <= num_train_steps ({num_train_steps})"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidRange(format!(
            "need 0 < beta_start ({beta_start}) <= beta_end ({beta_end}) < 1"
        )));
    }

    let n = num_train_steps;
    let lerp = |a: f64, b: f64, i: usize| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let train_betas: Vec<f64> = (0..n)
        .map(|i| match spacing {
            Spacing::Linear => lerp(beta_start, beta_end, i),
            Spacing::Quadratic => lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2),
        })
        .collect();
    let train_alpha_bars: Vec<f64> = train_betas
        .iter()
        .scan(1.0, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect();

    // "Leading" spacing: 1, 1 + r, 1 + 2r, ... with r = N / T.
    let ratio = num_train_steps / num_sample_steps;
    let timestep_map: Vec<usize> = (0..num_sample_steps).map(|k| k * ratio + 1).collect();
    let alpha_bars: Vec<f64> = timestep_map.iter().map(|&m| train_alpha_bars[m - 1]).collect();

    let mut schedule = NoiseSchedule::from_alpha_bars(alpha_bars, timestep_map, num_train_steps);
    schedule.params = Some(ScheduleParams {
        num_train_steps,
        num_sample_steps,
        beta_start,
        beta_end,
        spacing,
    });
    Ok(schedule)
}

impl NoiseSchedule {
    /// Builds a schedule from raw per-step betas with the identity timestep
    /// map. Betas of exactly zero are accepted so analytic identity cases
    /// (e.g. `alpha_bar == 1` everywhere) can be expressed; production code
    /// should go through [`build_schedule`].
    pub fn from_raw_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidRange("empty beta sequence".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::InvalidRange(format!("beta {b} outside [0, 1)")));
        }
        let alpha_bars: Vec<f64> = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        let n = betas.len();
        let mut s = Self::from_alpha_bars(alpha_bars, (1..=n).collect(), n);
        // Keep the caller's betas verbatim instead of the re-derived ratios.
        s.betas = betas.to_vec();
        s.alphas = betas.iter().map(|b| 1.0 - b).collect();
        Ok(s)
    }

    fn from_alpha_bars(alpha_bars: Vec<f64>, timestep_map: Vec<usize>, num_train_steps: usize) -> Self {
        let mut prev = 1.0;
        let alphas: Vec<f64> = alpha_bars
            .iter()
            .map(|&ab| {
                let a = ab / prev;
                prev = ab;
                a
            })
            .collect();
        let betas = alphas.iter().map(|a| 1.0 - a).collect();
        Self {
            num_steps: alpha_bars.len(),
            num_train_steps,
            betas,
            alphas,
            alpha_bars,
            timestep_map,
            params: None,
        }
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_train_steps(&self) -> usize {
        self.num_train_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn timestep_map(&self) -> &[usize] {
        &self.timestep_map
    }

    /// Parameters this schedule was built from, if it came from
    /// [`build_schedule`].
    pub fn params(&self) -> Option<&ScheduleParams> {
        self.params.as_ref()
    }

    /// `alpha_bar` at sampler index `t`, with `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_index(t)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bars[t - 1] })
    }

    pub fn timestep(&self, t: usize) -> Result<Timestep> {
        let alpha_bar = self.alpha_bar(t)?;
        Ok(Timestep {
            index: t,
            model_timestep: if t == 0 { 0 } else { self.timestep_map[t - 1] },
            num_train_steps: self.num_train_steps,
            alpha_bar,
        })
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t > self.num_steps {
            return Err(Error::IndexOutOfRange {
                index: t,
                max: self.num_steps,
            });
        }
        Ok(())
    }
}

#[inline]
fn clean_coeffs(alpha_bar: f64) -> (f64, f64) {
    (alpha_bar.sqrt(), (1.0 - alpha_bar).max(0.0).sqrt())
}

/// `(z_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)`.
pub fn predict_clean(
    z_t: &LatentTensor,
    eps: &LatentTensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    z_t.ensure_same_shape(eps)?;
    let (a, s) = clean_coeffs(schedule.alpha_bar(t)?);
    z_t.zip_map(eps, |z, e| ((z as f64 - s * e as f64) / a) as f32)
}

/// Moves `z_t` to `t_target` along the deterministic DDIM path:
/// `sqrt(ab_target) * x0 + sqrt(1 - ab_target) * eps_direction`, where `x0`
/// is predicted from `eps_clean`.
fn ddim_transfer(
    z_t: &LatentTensor,
    eps_direction: &LatentTensor,
    eps_clean: &LatentTensor,
    t: usize,
    t_target: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    z_t.ensure_same_shape(eps_direction)?;
    z_t.ensure_same_shape(eps_clean)?;
    let (a, s) = clean_coeffs(schedule.alpha_bar(t)?);
    let (a_next, s_next) = clean_coeffs(schedule.alpha_bar(t_target)?);
    let data = z_t
        .data()
        .iter()
        .zip(eps_clean.data())
        .zip(eps_direction.data())
        .map(|((&z, &ec), &ed)| {
            let x0 = (z as f64 - s * ec as f64) / a;
            (a_next * x0 + s_next * ed as f64) as f32
        })
        .collect();
    LatentTensor::from_vec(z_t.height(), z_t.width(), z_t.channels(), data)
}

/// One reverse DDIM step `t -> t_prev`.
///
/// `eps_for_clean` drives the clean-sample prediction and `eps_for_direction`
/// the re-noising direction; they coincide for a plain DDIM step.
pub fn ddim_step(
    z_t: &LatentTensor,
    eps_for_direction: &LatentTensor,
    eps_for_clean: &LatentTensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    if t_prev >= t {
        return Err(Error::InvalidRange(format!(
            "reverse step requires t_prev ({t_prev}) < t ({t})"
        )));
    }
    ddim_transfer(z_t, eps_for_direction, eps_for_clean, t, t_prev, schedule)
}

/// One DDIM inversion step `t -> t_next` using a single noise estimate.
pub fn ddim_inverse_step(
    z_t: &LatentTensor,
    eps: &LatentTensor,
    t: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    if t_next <= t {
        return Err(Error::InvalidRange(format!(
            "inversion step requires t_next ({t_next}) > t ({t})"
        )));
    }
    ddim_transfer(z_t, eps, eps, t, t_next, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> LatentTensor {
        LatentTensor::filled(1, 1, 1, v)
    }

    #[test]
    fn default_schedule_is_strictly_decreasing() {
        let s = build_schedule(1000, 50, 1e-4, 2e-2, Spacing::Linear).unwrap();
        assert_eq!(s.num_steps(), 50);
        assert_eq!(s.alpha_bars().len(), 50);
        assert_eq!(s.betas().len(), 50);
        assert!(s.alpha_bars().windows(2).all(|w| w[0] > w[1]));
        assert!(s.timestep_map().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.timestep_map()[0], 1);
        assert_eq!(s.timestep_map()[49], 981);
        assert!(s.alpha_bars().iter().all(|&a| a > 0.0 && a <= 1.0));
    }

    #[test]
    fn subsampled_alpha_bars_are_running_products() {
        let s = build_schedule(1000, 50, 0.00085, 0.012, Spacing::Quadratic).unwrap();
        let mut acc = 1.0;
        for (i, (&a, &ab)) in s.alphas().iter().zip(s.alpha_bars()).enumerate() {
            acc *= a;
            assert!((acc - ab).abs() <= 1e-12 * (i + 1) as f64, "step {i}");
        }
    }

    #[test]
    fn raw_betas_products() {
        let s = NoiseSchedule::from_raw_betas(&[0.1, 0.2]).unwrap();
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.72).abs() < 1e-15);
        let id = NoiseSchedule::from_raw_betas(&[0.0]).unwrap();
        assert_eq!(id.alpha_bar(1).unwrap(), 1.0);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(matches!(
            build_schedule(10, 11, 1e-4, 2e-2, Spacing::Linear),
            Err(Error::InvalidRange(_))
        ));
        assert!(build_schedule(10, 0, 1e-4, 2e-2, Spacing::Linear).is_err());
        assert!(build_schedule(10, 5, 0.0, 2e-2, Spacing::Linear).is_err());
        assert!(build_schedule(10, 5, 0.3, 0.2, Spacing::Linear).is_err());
        assert!(build_schedule(10, 5, 0.1, 1.0, Spacing::Linear).is_err());
        assert!(NoiseSchedule::from_raw_betas(&[1.0]).is_err());
    }

    #[test]
    fn predict_clean_cases() {
        // alpha_bar = 0.64 at index 1.
        let s = NoiseSchedule::from_raw_betas(&[0.36]).unwrap();
        let x0 = predict_clean(&scalar(1.0), &scalar(0.5), 1, &s).unwrap();
        assert!((x0.data()[0] - 0.875).abs() < 1e-7);

        let x0 = predict_clean(&scalar(2.0), &scalar(0.0), 1, &s).unwrap();
        assert!((x0.data()[0] - 2.5).abs() < 1e-7);

        let id = NoiseSchedule::from_raw_betas(&[0.0]).unwrap();
        let z = scalar(1.234);
        assert_eq!(predict_clean(&z, &scalar(9.0), 1, &id).unwrap(), z);

        assert!(matches!(
            predict_clean(&z, &scalar(0.0), 2, &s),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            predict_clean(&z, &LatentTensor::zeros(1, 2, 1), 1, &s),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ddim_step_matches_scalar_reference() {
        let s = build_schedule(1000, 20, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let (z, e) = (0.7f64, -0.3f64);
        // Independent scalar transcription of the reverse update.
        let ab_t = s.alpha_bars()[9];
        let ab_p = s.alpha_bars()[4];
        let x0 = (z - (1.0 - ab_t).sqrt() * e) / ab_t.sqrt();
        let expected = ab_p.sqrt() * x0 + (1.0 - ab_p).sqrt() * e;
        let out = ddim_step(&scalar(z as f32), &scalar(e as f32), &scalar(e as f32), 10, 5, &s).unwrap();
        assert!((out.data()[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn ddim_inverse_matches_scalar_reference() {
        let s = build_schedule(1000, 20, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let (z, e) = (0.25f64, 1.1f64);
        let ab_t = s.alpha_bars()[2];
        let ab_n = s.alpha_bars()[3];
        let x0 = (z - (1.0 - ab_t).sqrt() * e) / ab_t.sqrt();
        let expected = ab_n.sqrt() * x0 + (1.0 - ab_n).sqrt() * e;
        let out = ddim_inverse_step(&scalar(z as f32), &scalar(e as f32), 3, 4, &s).unwrap();
        assert!((out.data()[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn terminal_step_returns_clean_prediction_exactly() {
        let s = build_schedule(1000, 10, 1e-4, 2e-2, Spacing::Linear).unwrap();
        let z = LatentTensor::from_fn(3, 3, 2, |r, c, k| (r as f32 - c as f32) * 0.3 + k as f32);
        let e = LatentTensor::from_fn(3, 3, 2, |r, c, k| (r * c + k) as f32 * 0.1 - 0.2);
        let clean = predict_clean(&z, &e, 4, &s).unwrap();
        let stepped = ddim_step(&z, &e, &e, 4, 0, &s).unwrap();
        assert_eq!(clean, stepped);
    }

    #[test]
    fn zero_noise_constant_schedule_is_identity() {
        let s = NoiseSchedule::from_raw_betas(&[0.0, 0.0, 0.0]).unwrap();
        let z = LatentTensor::from_fn(2, 2, 1, |r, c, _| (r + 2 * c) as f32);
        let out = ddim_inverse_step(&z, &LatentTensor::zeros(2, 2, 1), 1, 3, &s).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn direction_order_is_enforced() {
        let s = NoiseSchedule::from_raw_betas(&[0.1, 0.1]).unwrap();
        let z = scalar(0.0);
        assert!(ddim_step(&z, &z, &z, 1, 2, &s).is_err());
        assert!(ddim_inverse_step(&z, &z, 2, 1, &s).is_err());
    }
}
