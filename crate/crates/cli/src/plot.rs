//! Trajectory grids: decoded previews on the top row, guidance residual
//! magnitude (mean `|eps_c - eps_null|` over channels, shared scale) below.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage};
use tiledit_core::container::TensorContainer;
use tiledit_core::LatentTensor;

use crate::error::{CliError, CliResult};
use crate::io::{to_rgb, TrajectoryIndex};

const GAP: u32 = 4;

pub struct Grid {
    pub image: RgbImage,
    pub columns: usize,
}

fn load(dir: &Path, name: &str) -> CliResult<LatentTensor> {
    Ok(TensorContainer::load(dir.join(name))?.into_latent()?)
}

fn magnitude(r: &LatentTensor) -> Vec<f32> {
    (0..r.height())
        .flat_map(|row| (0..r.width()).map(move |col| (row, col)))
        .map(|(row, col)| {
            let cell = r.cell(row, col);
            cell.iter().map(|v| v.abs()).sum::<f32>() / cell.len() as f32
        })
        .collect()
}

pub fn trajectory_grid(dir: &Path, index: &TrajectoryIndex, panel_height: usize) -> CliResult<Grid> {
    let shown: Vec<_> = index.steps.iter().filter(|e| e.preview.is_some()).collect();
    if shown.is_empty() {
        return Err(CliError::usage("empty-trajectory", "trajectory has no preview panels"));
    }
    let previews = shown
        .iter()
        .map(|e| load(dir, e.preview.as_deref().unwrap()))
        .collect::<CliResult<Vec<_>>>()?;
    let residuals = shown
        .iter()
        .map(|e| load(dir, &e.residual))
        .collect::<CliResult<Vec<_>>>()?;

    let (h, w) = (previews[0].height(), previews[0].width());
    let ph = panel_height.max(1) as u32;
    let pw = ((w as f64 * ph as f64 / h as f64).round() as u32).max(1);

    let mags: Vec<Vec<f32>> = residuals.iter().map(magnitude).collect();
    let peak = mags
        .iter()
        .flatten()
        .fold(0.0f32, |m, &v| m.max(v))
        .max(f32::MIN_POSITIVE);

    let cols = shown.len() as u32;
    let mut grid = RgbImage::from_pixel(GAP + cols * (pw + GAP), GAP + 2 * (ph + GAP), Rgb([255, 255, 255]));
    for (i, (preview, (mag, res))) in previews.iter().zip(mags.iter().zip(&residuals)).enumerate() {
        let x = GAP + i as u32 * (pw + GAP);
        let panel = imageops::resize(&to_rgb(preview)?, pw, ph, FilterType::Triangle);
        imageops::replace(&mut grid, &panel, x as i64, GAP as i64);

        let heat = GrayImage::from_fn(res.width() as u32, res.height() as u32, |c, r| {
            let v = mag[r as usize * res.width() + c as usize] / peak;
            Luma([(v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8])
        });
        let heat = imageops::resize(&heat, pw, ph, FilterType::Nearest);
        let heat = RgbImage::from_fn(pw, ph, |c, r| {
            let v = heat.get_pixel(c, r)[0];
            Rgb([v, v, v])
        });
        imageops::replace(&mut grid, &heat, x as i64, (2 * GAP + ph) as i64);
    }
    Ok(Grid {
        image: grid,
        columns: shown.len(),
    })
}
