//! Tiled, null-conditioned DDIM inversion.
//!
//! Each pixel tile is encoded on its own, pushed from `t = 0` to `t = T`
//! with the unconditional estimate, and placed at its latent rect. Step
//! `k -> k + 1` evaluates the estimator at `(z_k, k + 1)`; replaying
//! [`ddim_step`] with the same noise undoes it exactly.

use rayon::prelude::*;

use crate::codec::{encode_tiles, LatentCodec};
use crate::error::{Error, Result};
use crate::estimators::{check_input, Conditioning, NoiseEstimator};
use crate::schedule::{ddim_inverse_step, ddim_step, NoiseSchedule};
use crate::tensor::LatentTensor;
use crate::tiling::{self, Space, TilePlan};

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedLatent {
    /// Assembled latent at `t = T`, `(H / f, W / f, c)`.
    pub z_t_star: LatentTensor,
    pub plan: TilePlan,
    pub schedule: NoiseSchedule,
    /// `eps_cache[tile][k]` is the noise used for step `k -> k + 1`.
    pub eps_cache: Option<Vec<Vec<LatentTensor>>>,
    pub seed: u64,
}

impl InvertedLatent {
    pub fn validate(&self) -> Result<()> {
        let (lh, lw) = self.plan.canvas_dims(Space::Latent);
        if (self.z_t_star.height(), self.z_t_star.width()) != (lh, lw) {
            return Err(Error::shape(
                &[lh, lw, self.z_t_star.channels()],
                &self.z_t_star.shape(),
            ));
        }
        if let Some(cache) = &self.eps_cache {
            if cache.len() != self.plan.len() {
                return Err(Error::CountMismatch {
                    expected: self.plan.len(),
                    actual: cache.len(),
                });
            }
            if let Some(bad) = cache.iter().find(|c| c.len() != self.schedule.num_steps()) {
                return Err(Error::CountMismatch {
                    expected: self.schedule.num_steps(),
                    actual: bad.len(),
                });
            }
        }
        Ok(())
    }
}

/// Inverts one latent tile from `t = 0` to `t = T`. Returns `z_T` and, when
/// `cache_eps` is set, the `T` noise estimates in step order.
pub fn invert_single_tile(
    z_0: &LatentTensor,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
    cache_eps: bool,
) -> Result<(LatentTensor, Vec<LatentTensor>)> {
    check_input(estimator, z_0)?;
    let mut z = z_0.clone();
    let mut cache = Vec::with_capacity(if cache_eps { schedule.num_steps() } else { 0 });
    for k in 0..schedule.num_steps() {
        let eps = estimator.predict(&z, &schedule.timestep(k + 1)?, &Conditioning::Null)?;
        z = ddim_inverse_step(&z, &eps, k, k + 1, schedule)?;
        if cache_eps {
            cache.push(eps);
        }
    }
    Ok((z, cache))
}

/// Runs the reverse of [`invert_single_tile`] with the cached noise: pure
/// algebra, no estimator calls.
pub fn replay_single_tile(z_t: &LatentTensor, eps: &[LatentTensor], schedule: &NoiseSchedule) -> Result<LatentTensor> {
    if eps.len() != schedule.num_steps() {
        return Err(Error::CountMismatch {
            expected: schedule.num_steps(),
            actual: eps.len(),
        });
    }
    let mut z = z_t.clone();
    for k in (0..schedule.num_steps()).rev() {
        z = ddim_step(&z, &eps[k], &eps[k], k + 1, k, schedule)?;
    }
    Ok(z)
}

fn check_preconditions(
    image: &LatentTensor,
    plan: &TilePlan,
    estimator: &dyn NoiseEstimator,
    codec: &dyn LatentCodec,
) -> Result<()> {
    let (h, w) = plan.canvas_dims(Space::Pixel);
    if (image.height(), image.width()) != (h, w) {
        return Err(Error::shape(&[h, w, image.channels()], &image.shape()));
    }
    let (th, tw) = plan.tile_dims(Space::Latent);
    if !estimator.accepts(th, tw) || estimator.channels() != codec.latent_channels() {
        let (bh, bw) = estimator.base_dims();
        return Err(Error::shape(
            &[bh, bw, estimator.channels()],
            &[th, tw, codec.latent_channels()],
        ));
    }
    Ok(())
}

fn assemble(
    plan: &TilePlan,
    schedule: &NoiseSchedule,
    results: Vec<(LatentTensor, Vec<LatentTensor>)>,
    cache_eps: bool,
) -> Result<InvertedLatent> {
    let (tiles, caches): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(InvertedLatent {
        z_t_star: tiling::stitch(&tiles, plan, Space::Latent)?,
        plan: plan.clone(),
        schedule: schedule.clone(),
        eps_cache: cache_eps.then_some(caches),
        seed: 0,
    })
}

/// Tiled inversion of a pixel-space image. Tiles run in parallel; each
/// tile's result depends only on that tile, so the output does not depend on
/// scheduling.
pub fn tiled_ddim_invert(
    image: &LatentTensor,
    plan: &TilePlan,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
    codec: &dyn LatentCodec,
    cache_eps: bool,
) -> Result<InvertedLatent> {
    check_preconditions(image, plan, estimator, codec)?;
    let latents = encode_tiles(codec, image, plan)?;
    let results = latents
        .par_iter()
        .map(|z0| invert_single_tile(z0, schedule, estimator, cache_eps))
        .collect::<Result<Vec<_>>>()?;
    assemble(plan, schedule, results, cache_eps)
}

/// Sequential variant processing tiles in the given order (a permutation of
/// `0..plan.len()`).
pub fn tiled_ddim_invert_ordered(
    image: &LatentTensor,
    plan: &TilePlan,
    schedule: &NoiseSchedule,
    estimator: &dyn NoiseEstimator,
    codec: &dyn LatentCodec,
    cache_eps: bool,
    order: &[usize],
) -> Result<InvertedLatent> {
    check_preconditions(image, plan, estimator, codec)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..plan.len()).collect::<Vec<_>>() {
        return Err(Error::InvalidRange(format!(
            "tile order must be a permutation of 0..{}",
            plan.len()
        )));
    }
    let latents = encode_tiles(codec, image, plan)?;
    let mut results: Vec<Option<(LatentTensor, Vec<LatentTensor>)>> = vec![None; plan.len()];
    for &i in order {
        results[i] = Some(invert_single_tile(&latents[i], schedule, estimator, cache_eps)?);
    }
    assemble(
        plan,
        schedule,
        results.into_iter().map(Option::unwrap).collect(),
        cache_eps,
    )
}
