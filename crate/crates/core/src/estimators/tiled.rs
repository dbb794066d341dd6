use std::sync::Arc;

use super::{Conditioning, NoiseEstimator};
use crate::error::{Error, Result};
use crate::schedule::Timestep;
use crate::tensor::LatentTensor;
use crate::tiling::{self, Space};

/// Evaluates a base-resolution estimator on a larger latent by splitting it
/// into non-overlapping base-size tiles. Used for vanilla (undilated)
/// predictions when the wrapped backend only accepts its training size.
#[derive(Clone)]
pub struct TiledEstimator {
    inner: Arc<dyn NoiseEstimator>,
}

impl TiledEstimator {
    pub fn new(inner: Arc<dyn NoiseEstimator>) -> Self {
        Self { inner }
    }
}

impl NoiseEstimator for TiledEstimator {
    fn backend_id(&self) -> String {
        format!("tiled({})", self.inner.backend_id())
    }

    fn base_dims(&self) -> (usize, usize) {
        self.inner.base_dims()
    }

    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn supports_dilation(&self) -> bool {
        false
    }

    fn accepts(&self, height: usize, width: usize) -> bool {
        let (bh, bw) = self.inner.base_dims();
        height > 0 && width > 0 && height.is_multiple_of(bh) && width.is_multiple_of(bw)
    }

    fn predict(&self, z_t: &LatentTensor, t: &Timestep, cond: &Conditioning) -> Result<LatentTensor> {
        let (bh, bw) = self.inner.base_dims();
        let plan = tiling::plan_tiles(z_t.height(), z_t.width(), bh, bw, 1)?;
        let tiles = tiling::crop_all(z_t, &plan, Space::Pixel)?
            .iter()
            .map(|tile| {
                super::check_input(self.inner.as_ref(), tile)?;
                self.inner.predict(tile, t, cond)
            })
            .collect::<Result<Vec<_>>>()?;
        tiling::stitch(&tiles, &plan, Space::Pixel)
    }

    fn redilated(self: Arc<Self>, _factor: usize) -> Result<Arc<dyn NoiseEstimator>> {
        Err(Error::UnsupportedBackend(self.backend_id()))
    }
}
