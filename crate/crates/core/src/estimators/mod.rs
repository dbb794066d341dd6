//! Noise estimators `eps(z_t, t, c)` and their re-dilated variants.

mod adapter;
mod analytic;
pub mod conv;
pub mod corpus;
mod dilation;
mod tiled;
mod toy;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, Timestep};
use crate::tensor::LatentTensor;

pub use adapter::{pretrained_adapter, AdapterEstimator, ExternalDenoiser};
pub use analytic::{analytic_epsilon, AnalyticEstimator, Covariance, GaussianComponent, GaussianMixtureWorld};
pub use dilation::{DilationProfile, DilationRule};
pub use tiled::TiledEstimator;
pub use toy::{train_toy, ToyConfig, ToyDenoiser, TrainOptions, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    Embedding(Vec<f32>),
    ClassLabel(usize),
    Null,
}

impl Conditioning {
    pub fn is_null(&self) -> bool {
        matches!(self, Conditioning::Null)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Conditioning::Embedding(_) => "embedding",
            Conditioning::ClassLabel(_) => "class_label",
            Conditioning::Null => "null",
        }
    }
}

pub trait NoiseEstimator: Send + Sync {
    /// Identifier recorded in run manifests.
    fn backend_id(&self) -> String;

    /// Training resolution in latent cells.
    fn base_dims(&self) -> (usize, usize);

    fn channels(&self) -> usize;

    fn supports_dilation(&self) -> bool;

    /// Current dilation multiplier (1 for an undilated estimator).
    fn dilation_factor(&self) -> usize {
        1
    }

    /// Whether a latent of this spatial size can be evaluated.
    fn accepts(&self, height: usize, width: usize) -> bool;

    fn predict(&self, z_t: &LatentTensor, t: &Timestep, cond: &Conditioning) -> Result<LatentTensor>;

    /// Conditional and unconditional predictions at the same point. Backends
    /// that batch must return exactly what two `predict` calls would.
    fn predict_pair(
        &self,
        z_t: &LatentTensor,
        t: &Timestep,
        cond: &Conditioning,
    ) -> Result<(LatentTensor, LatentTensor)> {
        Ok((self.predict(z_t, t, cond)?, self.predict(z_t, t, &Conditioning::Null)?))
    }

    /// Estimator sharing these weights with convolution dilation multiplied
    /// by `factor`.
    fn redilated(self: Arc<Self>, factor: usize) -> Result<Arc<dyn NoiseEstimator>>;

    /// Maps a user prompt (class name for toy backends) to a conditioning.
    fn resolve_prompt(&self, prompt: &str) -> Result<Conditioning> {
        Err(Error::UnknownConditioning(format!(
            "backend {} cannot resolve prompt `{prompt}`",
            self.backend_id()
        )))
    }
}

/// Validates the input against the estimator and evaluates it at sampler
/// index `t` of `schedule`.
pub fn predict(
    estimator: &dyn NoiseEstimator,
    z_t: &LatentTensor,
    t: usize,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
) -> Result<LatentTensor> {
    check_input(estimator, z_t)?;
    estimator.predict(z_t, &schedule.timestep(t)?, cond)
}

pub fn redilate(estimator: Arc<dyn NoiseEstimator>, factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
    if factor == 0 {
        return Err(Error::InvalidRange("dilation factor must be >= 1".into()));
    }
    estimator.redilated(factor)
}

pub(crate) fn check_input(estimator: &dyn NoiseEstimator, z_t: &LatentTensor) -> Result<()> {
    if z_t.channels() != estimator.channels() || !estimator.accepts(z_t.height(), z_t.width()) {
        let (bh, bw) = estimator.base_dims();
        let f = estimator.dilation_factor();
        return Err(Error::shape(&[bh * f, bw * f, estimator.channels()], &z_t.shape()));
    }
    Ok(())
}

/// Estimator that predicts zero noise everywhere. Any input size.
#[derive(Debug, Clone, Copy)]
pub struct ZeroEstimator {
    pub channels: usize,
}

impl NoiseEstimator for ZeroEstimator {
    fn backend_id(&self) -> String {
        "zero".into()
    }

    fn base_dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn supports_dilation(&self) -> bool {
        false
    }

    fn accepts(&self, _height: usize, _width: usize) -> bool {
        true
    }

    fn predict(&self, z_t: &LatentTensor, _t: &Timestep, _cond: &Conditioning) -> Result<LatentTensor> {
        Ok(LatentTensor::zeros(z_t.height(), z_t.width(), z_t.channels()))
    }

    fn redilated(self: Arc<Self>, _factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
        Err(Error::UnsupportedBackend(self.backend_id()))
    }
}
