//! Pixel <-> latent codecs.
//!
//! Pixel images are `(H, W, 3)` tensors with values in `[0, 1]`. Decoding
//! always clamps to that range.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;
use crate::tiling::{self, Space, TilePlan};

pub trait LatentCodec: Send + Sync {
    /// Spatial downsampling factor `f` of the latent grid.
    fn spatial_factor(&self) -> usize;

    fn pixel_channels(&self) -> usize {
        3
    }

    fn latent_channels(&self) -> usize;

    fn encode(&self, image: &LatentTensor) -> Result<LatentTensor>;

    fn decode(&self, latent: &LatentTensor) -> Result<LatentTensor>;

    /// Locator string that [`codec_from_locator`] maps back to this codec.
    fn locator(&self) -> String;
}

fn check_pixels(codec: &dyn LatentCodec, image: &LatentTensor) -> Result<()> {
    let f = codec.spatial_factor();
    if image.channels() != codec.pixel_channels() {
        return Err(Error::shape(
            &[image.height(), image.width(), codec.pixel_channels()],
            &image.shape(),
        ));
    }
    if !image.height().is_multiple_of(f) {
        return Err(Error::NotDivisible {
            what: "image height",
            value: image.height(),
            divisor: f,
        });
    }
    if !image.width().is_multiple_of(f) {
        return Err(Error::NotDivisible {
            what: "image width",
            value: image.width(),
            divisor: f,
        });
    }
    Ok(())
}

fn check_latent(codec: &dyn LatentCodec, latent: &LatentTensor) -> Result<()> {
    if latent.channels() != codec.latent_channels() {
        return Err(Error::shape(
            &[latent.height(), latent.width(), codec.latent_channels()],
            &latent.shape(),
        ));
    }
    Ok(())
}

/// `f = 1` codec whose latent space is pixel space.
#[derive(Debug, Clone, Copy)]
pub struct IdentityCodec {
    channels: usize,
}

impl IdentityCodec {
    pub fn new(channels: usize) -> Self {
        Self { channels }
    }
}

impl Default for IdentityCodec {
    fn default() -> Self {
        Self::new(3)
    }
}

impl LatentCodec for IdentityCodec {
    fn spatial_factor(&self) -> usize {
        1
    }

    fn pixel_channels(&self) -> usize {
        self.channels
    }

    fn latent_channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, image: &LatentTensor) -> Result<LatentTensor> {
        check_pixels(self, image)?;
        Ok(image.clone())
    }

    fn decode(&self, latent: &LatentTensor) -> Result<LatentTensor> {
        check_latent(self, latent)?;
        Ok(latent.map(|v| v.clamp(0.0, 1.0)))
    }

    fn locator(&self) -> String {
        "identity".into()
    }
}

/// Lossy `f x f` box codec: encoding averages each block and maps `[0, 1]`
/// to `[-1, 1]`; decoding inverts the affine map and upsamples by
/// nearest neighbour.
#[derive(Debug, Clone, Copy)]
pub struct BoxCodec {
    factor: usize,
}

impl BoxCodec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidRange("box codec factor must be positive".into()));
        }
        Ok(Self { factor })
    }
}

impl LatentCodec for BoxCodec {
    fn spatial_factor(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        3
    }

    fn encode(&self, image: &LatentTensor) -> Result<LatentTensor> {
        check_pixels(self, image)?;
        let f = self.factor;
        let inv = 1.0 / (f * f) as f64;
        let (h, w, c) = (image.height() / f, image.width() / f, image.channels());
        Ok(LatentTensor::from_fn(h, w, c, |r, col, k| {
            let mut acc = 0.0f64;
            for dr in 0..f {
                for dc in 0..f {
                    acc += image.get(r * f + dr, col * f + dc, k) as f64;
                }
            }
            (2.0 * acc * inv - 1.0) as f32
        }))
    }

    fn decode(&self, latent: &LatentTensor) -> Result<LatentTensor> {
        check_latent(self, latent)?;
        Ok(latent
            .map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
            .upsample_nearest(self.factor))
    }

    fn locator(&self) -> String {
        format!("box:{}", self.factor)
    }
}

/// Environment variable naming the cache directory consulted by external
/// model/codec adapters.
pub const MODEL_CACHE_ENV: &str = "TILEDIT_MODEL_CACHE";

/// Resolves `identity`, `box:<f>`; any other locator is treated as an
/// external autoencoder, none of which ship with this build.
pub fn codec_from_locator(locator: &str) -> Result<Arc<dyn LatentCodec>> {
    match locator.split_once(':') {
        None if locator == "identity" => Ok(Arc::new(IdentityCodec::default())),
        Some(("box", f)) => {
            let f = f
                .parse::<usize>()
                .map_err(|_| Error::InvalidRange(format!("bad box codec factor `{f}`")))?;
            Ok(Arc::new(BoxCodec::new(f)?))
        }
        _ => Err(Error::ModelUnavailable(format!(
            "no autoencoder adapter is compiled in for `{locator}` (cache dir: {})",
            std::env::var(MODEL_CACHE_ENV).unwrap_or_else(|_| "<unset>".into())
        ))),
    }
}

/// Encodes every pixel tile independently and returns latent tiles in plan
/// order.
pub fn encode_tiles(codec: &dyn LatentCodec, image: &LatentTensor, plan: &TilePlan) -> Result<Vec<LatentTensor>> {
    if codec.spatial_factor() != plan.latent_factor {
        return Err(Error::InvalidFactor {
            tile: plan.tile_height,
            factor: codec.spatial_factor(),
        });
    }
    tiling::crop_all(image, plan, Space::Pixel)?
        .iter()
        .map(|tile| codec.encode(tile))
        .collect()
}

/// Decodes a latent canvas tile by tile and stitches the result in pixel
/// space.
pub fn decode_tiled(codec: &dyn LatentCodec, latent: &LatentTensor, plan: &TilePlan) -> Result<LatentTensor> {
    let tiles = tiling::crop_all(latent, plan, Space::Latent)?
        .iter()
        .map(|tile| codec.decode(tile))
        .collect::<Result<Vec<_>>>()?;
    tiling::stitch(&tiles, plan, Space::Pixel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::plan_tiles;

    fn image(h: usize, w: usize) -> LatentTensor {
        LatentTensor::from_fn(h, w, 3, |r, c, k| ((r * 7 + c * 3 + k) % 11) as f32 / 10.0)
    }

    #[test]
    fn identity_round_trip_is_bit_exact() {
        let codec = IdentityCodec::default();
        assert_eq!(codec.spatial_factor(), 1);
        let x = image(5, 7);
        let z = codec.encode(&x).unwrap();
        assert_eq!(z, x);
        assert_eq!(codec.decode(&z).unwrap(), x);
    }

    #[test]
    fn decode_clamps() {
        let codec = IdentityCodec::default();
        let z = LatentTensor::from_vec(1, 2, 3, vec![-0.5, 0.5, 1.5, 0.0, 1.0, 2.0]).unwrap();
        let x = codec.decode(&z).unwrap();
        assert_eq!(x.data(), &[0.0, 0.5, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn box_codec_geometry() {
        let codec = BoxCodec::new(8).unwrap();
        let x = image(64, 32);
        let z = codec.encode(&x).unwrap();
        assert_eq!(z.shape(), [8, 4, 3]);
        assert_eq!(codec.decode(&z).unwrap().shape(), [64, 32, 3]);
        assert!(matches!(codec.encode(&image(60, 32)), Err(Error::NotDivisible { .. })));
    }

    #[test]
    fn box_codec_round_trips_blockwise_constant_images() {
        let codec = BoxCodec::new(4).unwrap();
        let x = LatentTensor::from_fn(16, 8, 3, |r, c, k| ((r / 4 + c / 4 + k) % 3) as f32 * 0.5);
        let back = codec.decode(&codec.encode(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn locators() {
        assert_eq!(codec_from_locator("identity").unwrap().spatial_factor(), 1);
        assert_eq!(codec_from_locator("box:8").unwrap().spatial_factor(), 8);
        assert_eq!(codec_from_locator("box:8").unwrap().locator(), "box:8");
        assert!(matches!(
            codec_from_locator("sd-vae:stabilityai/sd-vae-ft-mse"),
            Err(Error::ModelUnavailable(_))
        ));
        assert!(codec_from_locator("box:x").is_err());
    }

    #[test]
    fn tiled_decode_matches_full_decode_for_identity() {
        let codec = IdentityCodec::default();
        let plan = plan_tiles(8, 12, 4, 4, 1).unwrap();
        let x = image(8, 12);
        let tiles = encode_tiles(&codec, &x, &plan).unwrap();
        let z = tiling::stitch(&tiles, &plan, Space::Latent).unwrap();
        assert_eq!(decode_tiled(&codec, &z, &plan).unwrap(), codec.decode(&z).unwrap());
    }
}
