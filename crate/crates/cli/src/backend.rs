//! Backend locators: `toy` (trained weights file), `analytic[:two-tone]`.
//! Anything else is looked up as an external model and reported
//! unavailable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use tiledit_core::estimators::{
    pretrained_adapter, AnalyticEstimator, GaussianMixtureWorld, NoiseEstimator, ToyDenoiser,
};

use crate::error::{CliError, CliResult};
use crate::io::load_toy;

pub enum Backend {
    Toy {
        net: Arc<ToyDenoiser>,
        weights: PathBuf,
        codec: String,
        tile_size: usize,
    },
    Analytic(Arc<AnalyticEstimator>),
}

pub const ANALYTIC_CODEC: &str = "box:1";
pub const ANALYTIC_TILE: usize = 64;

impl Backend {
    pub fn load(locator: &str, weights: Option<&Path>) -> CliResult<Self> {
        match locator {
            "toy" => {
                let weights = weights.ok_or_else(|| {
                    CliError::usage("missing-weights", "the toy backend needs --weights (see train-toy)")
                })?;
                let (net, manifest) = load_toy(weights)?;
                let codec = manifest
                    .codec
                    .clone()
                    .ok_or_else(|| CliError::usage("bad-manifest", "weights manifest lacks codec"))?;
                let f = tiledit_core::codec::codec_from_locator(&codec)?.spatial_factor();
                let tile_size = net.config().base_height * f;
                Ok(Backend::Toy {
                    net: Arc::new(net),
                    weights: weights.to_path_buf(),
                    codec,
                    tile_size,
                })
            }
            "analytic" | "analytic:two-tone" => Ok(Backend::Analytic(Arc::new(AnalyticEstimator::new(
                GaussianMixtureWorld::two_tone(),
            )))),
            other => match pretrained_adapter(other) {
                Ok(_) => unreachable!("no external adapters are compiled in"),
                Err(e) => Err(CliError::usage("unknown-backend", e.to_string())),
            },
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Backend::Toy { .. } => "toy",
            Backend::Analytic(_) => "analytic:two-tone",
        }
    }

    pub fn weights(&self) -> Option<&Path> {
        match self {
            Backend::Toy { weights, .. } => Some(weights),
            Backend::Analytic(_) => None,
        }
    }

    pub fn vanilla(&self) -> Arc<dyn NoiseEstimator> {
        match self {
            Backend::Toy { net, .. } => net.clone(),
            Backend::Analytic(a) => a.clone(),
        }
    }

    pub fn default_codec(&self) -> &str {
        match self {
            Backend::Toy { codec, .. } => codec,
            Backend::Analytic(_) => ANALYTIC_CODEC,
        }
    }

    /// Pixel tile size the backend was built for.
    pub fn default_tile(&self) -> usize {
        match self {
            Backend::Toy { tile_size, .. } => *tile_size,
            Backend::Analytic(_) => ANALYTIC_TILE,
        }
    }

    pub fn world(&self) -> Option<&GaussianMixtureWorld> {
        match self {
            Backend::Toy { .. } => None,
            Backend::Analytic(a) => Some(a.world()),
        }
    }
}
