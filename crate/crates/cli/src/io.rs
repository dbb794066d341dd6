//! PNG images, inverted latents, toy weights and trajectory directories on
//! disk.

use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use tiledit_core::container::TensorContainer;
use tiledit_core::estimators::{ToyConfig, ToyDenoiser};
use tiledit_core::guidance::GuidanceConfig;
use tiledit_core::inversion::InvertedLatent;
use tiledit_core::sampler::{Branch, TrajectoryRecord};
use tiledit_core::schedule::ScheduleParams;
use tiledit_core::tiling::{self, Space};
use tiledit_core::LatentTensor;

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path, PlanSummary, RunManifest};

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::input_not_found(path))
    }
}

pub fn read_png(path: &Path) -> CliResult<LatentTensor> {
    require_file(path)?;
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Ok(LatentTensor::from_vec(h as usize, w as usize, 3, data)?)
}

/// Round-half-up quantization of `[0, 1]` values to 8 bits.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn to_rgb(image: &LatentTensor) -> CliResult<RgbImage> {
    if image.channels() != 3 {
        return Err(CliError::runtime(
            "bad-image",
            format!("expected 3 channels, got {}", image.channels()),
        ));
    }
    let buf = image.data().iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, buf)
        .ok_or_else(|| CliError::runtime("bad-image", "buffer size mismatch"))
}

pub fn write_png(path: &Path, image: &LatentTensor) -> CliResult<()> {
    to_rgb(image)?.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn eps_path(out: &Path) -> PathBuf {
    sibling(out, ".eps")
}

/// Writes `z_T*` to `out`, the noise cache (if any) to `<out>.eps` as a
/// `[tiles, T, h, w, c]` tensor, and the manifest.
pub fn save_inverted(out: &Path, inv: &InvertedLatent, manifest: &mut RunManifest) -> CliResult<()> {
    ensure_parent(out)?;
    TensorContainer::from_latent(&inv.z_t_star).save(out)?;
    manifest.output("latent", out);
    let eps = eps_path(out);
    match &inv.eps_cache {
        Some(cache) => {
            let [h, w, c] = cache[0][0].shape();
            let dims = vec![cache.len(), cache[0].len(), h, w, c];
            let data = cache.iter().flatten().flat_map(|t| t.data().iter().copied()).collect();
            TensorContainer::new(dims, data)?.save(&eps)?;
            manifest.output("eps_cache", &eps);
        }
        None if eps.exists() => std::fs::remove_file(&eps)?,
        None => {}
    }
    manifest.plan = Some(PlanSummary::of(&inv.plan));
    manifest.save(&manifest_path(out))
}

pub struct LoadedInversion {
    pub inv: InvertedLatent,
    pub manifest: RunManifest,
    pub params: ScheduleParams,
}

pub fn load_inverted(path: &Path) -> CliResult<LoadedInversion> {
    require_file(path)?;
    let manifest = RunManifest::load(&manifest_path(path))?;
    let bad = |what: &str| CliError::usage("bad-manifest", format!("{}: missing {what}", path.display()));
    let params = manifest.schedule.ok_or_else(|| bad("schedule"))?;
    let p = manifest.plan.clone().ok_or_else(|| bad("plan"))?;
    let plan = tiling::plan_tiles(
        p.canvas_height,
        p.canvas_width,
        p.tile_height,
        p.tile_width,
        p.latent_factor,
    )?;
    let z = TensorContainer::load(path)?.into_latent()?;
    let (lh, lw) = plan.canvas_dims(Space::Latent);
    let eps_cache = match manifest.outputs.get("eps_cache") {
        Some(_) => {
            let eps = eps_path(path);
            require_file(&eps)?;
            let t = TensorContainer::load(&eps)?;
            let [tiles, steps, h, w, c] = t.dims[..] else {
                return Err(CliError::usage("bad-container", "eps cache must be rank 5"));
            };
            let per = h * w * c;
            let mut chunks = t.data.chunks_exact(per);
            let mut cache = Vec::with_capacity(tiles);
            for _ in 0..tiles {
                let mut steps_vec = Vec::with_capacity(steps);
                for _ in 0..steps {
                    let chunk = chunks.next().expect("length checked by container");
                    steps_vec.push(LatentTensor::from_vec(h, w, c, chunk.to_vec())?);
                }
                cache.push(steps_vec);
            }
            Some(cache)
        }
        None => None,
    };
    let inv = InvertedLatent {
        z_t_star: z,
        plan,
        schedule: params.build()?,
        eps_cache,
        seed: manifest.seed,
    };
    if (inv.z_t_star.height(), inv.z_t_star.width()) != (lh, lw) {
        return Err(CliError::usage(
            "bad-container",
            "latent dims disagree with manifest plan",
        ));
    }
    inv.validate()?;
    Ok(LoadedInversion { inv, manifest, params })
}

pub fn save_toy(out: &Path, net: &ToyDenoiser, manifest: &mut RunManifest) -> CliResult<()> {
    ensure_parent(out)?;
    let flat = net.to_flat();
    TensorContainer::new(vec![flat.len()], flat)?.save(out)?;
    let config = toml::Value::try_from(net.config()).map_err(|e| CliError::runtime("manifest", e.to_string()))?;
    manifest.info.insert("toy_config".into(), config);
    manifest.output("weights", out);
    manifest.save(&manifest_path(out))
}

pub fn load_toy(path: &Path) -> CliResult<(ToyDenoiser, RunManifest)> {
    require_file(path)?;
    let manifest = RunManifest::load(&manifest_path(path))?;
    let config: ToyConfig = manifest
        .info
        .get("toy_config")
        .cloned()
        .ok_or_else(|| CliError::usage("bad-manifest", "weights manifest lacks toy_config"))?
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage("bad-manifest", e.to_string()))?;
    let flat = TensorContainer::load(path)?;
    Ok((ToyDenoiser::from_flat(config, &flat.data)?, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub t: usize,
    pub branch: Branch,
    pub residual: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub seed: u64,
    pub schedule_id: String,
    pub guidance: GuidanceConfig,
    pub steps: Vec<IndexEntry>,
}

pub const TRAJECTORY_INDEX: &str = "index.toml";

pub fn save_trajectory(dir: &Path, record: &TrajectoryRecord) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    let mut steps = Vec::with_capacity(record.entries.len());
    for e in &record.entries {
        let residual = format!("residual_{:04}.ltsr", e.t);
        TensorContainer::from_latent(&e.residual).save(dir.join(&residual))?;
        let preview = match &e.preview {
            Some(p) => {
                let name = format!("preview_{:04}.ltsr", e.t);
                TensorContainer::from_latent(p).save(dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        steps.push(IndexEntry {
            t: e.t,
            branch: e.branch,
            residual,
            preview,
        });
    }
    let index = TrajectoryIndex {
        seed: record.seed,
        schedule_id: record.schedule_id.clone(),
        guidance: record.config,
        steps,
    };
    let text = toml::to_string(&index).map_err(|e| CliError::runtime("manifest", e.to_string()))?;
    std::fs::write(dir.join(TRAJECTORY_INDEX), text)?;
    Ok(())
}

pub fn load_trajectory_index(dir: &Path) -> CliResult<TrajectoryIndex> {
    let path = dir.join(TRAJECTORY_INDEX);
    require_file(&path)?;
    toml::from_str(&std::fs::read_to_string(&path)?)
        .map_err(|e| CliError::usage("bad-trajectory", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(2.0), 255);
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = LatentTensor::from_fn(5, 7, 3, |r, c, k| ((r * 40 + c * 11 + k * 3) % 256) as f32 / 255.0);
        let path = dir.path().join("x.png");
        write_png(&path, &img).unwrap();
        assert_eq!(read_png(&path).unwrap(), img);
    }
}
