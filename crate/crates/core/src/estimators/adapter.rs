//! Seam for wrapping an externally hosted denoiser (e.g. a latent diffusion
//! U-Net) behind [`NoiseEstimator`].

use std::collections::HashMap;
use std::sync::Arc;

use super::dilation::DilationProfile;
use super::{Conditioning, NoiseEstimator};
use crate::codec::MODEL_CACHE_ENV;
use crate::error::{Error, Result};
use crate::schedule::Timestep;
use crate::tensor::LatentTensor;

/// What an external model must provide to be driven by the samplers.
pub trait ExternalDenoiser: Send + Sync {
    fn name(&self) -> String;

    /// Training resolution in latent cells.
    fn base_latent_dims(&self) -> (usize, usize);

    fn latent_channels(&self) -> usize;

    /// Names of the convolution layers a dilation profile may target.
    fn conv_layers(&self) -> Vec<String>;

    fn encode_prompt(&self, prompt: &str) -> Result<Vec<f32>>;

    /// Embedding of the empty prompt.
    fn null_embedding(&self) -> Vec<f32>;

    /// One forward pass with per-layer dilation rates.
    fn forward(
        &self,
        z_t: &LatentTensor,
        t: &Timestep,
        embedding: &[f32],
        dilations: &HashMap<String, usize>,
    ) -> Result<LatentTensor>;
}

/// Strict-size estimator over an [`ExternalDenoiser`]: accepts exactly
/// `base * dilation_factor` latents.
#[derive(Clone)]
pub struct AdapterEstimator {
    model: Arc<dyn ExternalDenoiser>,
    profile: DilationProfile,
    factor: usize,
}

impl AdapterEstimator {
    pub fn new(model: Arc<dyn ExternalDenoiser>) -> Self {
        Self {
            model,
            profile: DilationProfile::default(),
            factor: 1,
        }
    }

    /// Applies a user-supplied profile. The accepted input size scales with
    /// the profile's largest factor.
    pub fn with_profile(&self, profile: DilationProfile) -> Self {
        Self {
            model: Arc::clone(&self.model),
            factor: profile.max_factor(),
            profile,
        }
    }

    /// Per-layer dilation over the model's layer inventory at a timestep.
    pub fn layer_dilations(&self, model_timestep: usize) -> HashMap<String, usize> {
        self.model
            .conv_layers()
            .into_iter()
            .map(|name| {
                let d = self.profile.dilation_for(&name, model_timestep);
                (name, d)
            })
            .collect()
    }
}

impl NoiseEstimator for AdapterEstimator {
    fn backend_id(&self) -> String {
        format!("adapter:{}", self.model.name())
    }

    fn base_dims(&self) -> (usize, usize) {
        self.model.base_latent_dims()
    }

    fn channels(&self) -> usize {
        self.model.latent_channels()
    }

    fn supports_dilation(&self) -> bool {
        true
    }

    fn dilation_factor(&self) -> usize {
        self.factor
    }

    fn accepts(&self, height: usize, width: usize) -> bool {
        let (bh, bw) = self.base_dims();
        (height, width) == (bh * self.factor, bw * self.factor)
    }

    fn predict(&self, z_t: &LatentTensor, t: &Timestep, cond: &Conditioning) -> Result<LatentTensor> {
        super::check_input(self, z_t)?;
        let embedding = match cond {
            Conditioning::Embedding(e) => e.clone(),
            Conditioning::Null => self.model.null_embedding(),
            Conditioning::ClassLabel(k) => {
                return Err(Error::UnknownConditioning(format!(
                    "adapter {} expects prompt embeddings, got class {k}",
                    self.model.name()
                )))
            }
        };
        let out = self
            .model
            .forward(z_t, t, &embedding, &self.layer_dilations(t.model_timestep))?;
        z_t.ensure_same_shape(&out)?;
        Ok(out)
    }

    fn redilated(self: Arc<Self>, factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
        let profile = if self.profile.rules.is_empty() {
            DilationProfile::uniform(factor)
        } else {
            self.profile.scaled(factor)
        };
        Ok(Arc::new(self.with_profile(profile)))
    }

    fn resolve_prompt(&self, prompt: &str) -> Result<Conditioning> {
        Ok(Conditioning::Embedding(self.model.encode_prompt(prompt)?))
    }
}

/// Resolves a pretrained model locator. No inference runtime for external
/// checkpoints is linked into this build, so every locator reports
/// [`Error::ModelUnavailable`]; embedders construct an [`AdapterEstimator`]
/// around their own [`ExternalDenoiser`] instead.
pub fn pretrained_adapter(model_locator: &str) -> Result<Arc<dyn NoiseEstimator>> {
    let cache = std::env::var(MODEL_CACHE_ENV).unwrap_or_else(|_| "<unset>".into());
    Err(Error::ModelUnavailable(format!(
        "`{model_locator}`: no external model runtime available (cache dir: {cache})"
    )))
}
