//! Non-overlapping tiling of a canvas into base-resolution tiles, in pixel
//! space and in the latent space of a codec with spatial factor `f`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRect {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl TileRect {
    /// The same rect measured in cells of a grid `factor` times coarser.
    pub fn scaled_down(&self, factor: usize) -> TileRect {
        TileRect {
            row0: self.row0 / factor,
            col0: self.col0 / factor,
            height: self.height / factor,
            width: self.width / factor,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn intersects(&self, other: &TileRect) -> bool {
        self.row0 < other.row0 + other.height
            && other.row0 < self.row0 + self.height
            && self.col0 < other.col0 + other.width
            && other.col0 < self.col0 + self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Pixel,
    Latent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub latent_factor: usize,
    /// Pixel-space rects in row-major order.
    pub rects: Vec<TileRect>,
}

pub fn plan_tiles(
    height: usize,
    width: usize,
    tile_height: usize,
    tile_width: usize,
    latent_factor: usize,
) -> Result<TilePlan> {
    if height == 0 || width == 0 || tile_height == 0 || tile_width == 0 || latent_factor == 0 {
        return Err(Error::InvalidRange("tiling dimensions must be positive".into()));
    }
    if height < tile_height || width < tile_width {
        return Err(Error::InvalidRange(format!(
            "canvas {height}x{width} smaller than tile {tile_height}x{tile_width}"
        )));
    }
    if !height.is_multiple_of(tile_height) {
        return Err(Error::NotDivisible {
            what: "canvas height",
            value: height,
            divisor: tile_height,
        });
    }
    if !width.is_multiple_of(tile_width) {
        return Err(Error::NotDivisible {
            what: "canvas width",
            value: width,
            divisor: tile_width,
        });
    }
    for tile in [tile_height, tile_width] {
        if tile % latent_factor != 0 {
            return Err(Error::InvalidFactor {
                tile,
                factor: latent_factor,
            });
        }
    }

    let mut rects = Vec::with_capacity((height / tile_height) * (width / tile_width));
    for row0 in (0..height).step_by(tile_height) {
        for col0 in (0..width).step_by(tile_width) {
            rects.push(TileRect {
                row0,
                col0,
                height: tile_height,
                width: tile_width,
            });
        }
    }
    Ok(TilePlan {
        canvas_height: height,
        canvas_width: width,
        tile_height,
        tile_width,
        latent_factor,
        rects,
    })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// Canvas `(height, width)` in the given space.
    pub fn canvas_dims(&self, space: Space) -> (usize, usize) {
        let f = self.factor(space);
        (self.canvas_height / f, self.canvas_width / f)
    }

    pub fn tile_dims(&self, space: Space) -> (usize, usize) {
        let f = self.factor(space);
        (self.tile_height / f, self.tile_width / f)
    }

    pub fn rect(&self, index: usize, space: Space) -> TileRect {
        self.rects[index].scaled_down(self.factor(space))
    }

    /// Ratio of canvas area to tile area (the "x4 / x8 / x16" setting).
    pub fn area_factor(&self) -> usize {
        (self.canvas_height * self.canvas_width) / (self.tile_height * self.tile_width)
    }

    fn factor(&self, space: Space) -> usize {
        match space {
            Space::Pixel => 1,
            Space::Latent => self.latent_factor,
        }
    }
}

pub fn crop(canvas: &LatentTensor, rect: TileRect) -> Result<LatentTensor> {
    if rect.row0 + rect.height > canvas.height() || rect.col0 + rect.width > canvas.width() {
        return Err(Error::OutOfBounds {
            row0: rect.row0,
            col0: rect.col0,
            height: rect.height,
            width: rect.width,
            canvas_h: canvas.height(),
            canvas_w: canvas.width(),
        });
    }
    let ch = canvas.channels();
    let mut data = Vec::with_capacity(rect.area() * ch);
    for r in rect.row0..rect.row0 + rect.height {
        let start = canvas.index(r, rect.col0, 0);
        data.extend_from_slice(&canvas.data()[start..start + rect.width * ch]);
    }
    LatentTensor::from_vec(rect.height, rect.width, ch, data)
}

/// Writes `tile` into `canvas` at `rect`.
pub fn paste(canvas: &mut LatentTensor, tile: &LatentTensor, rect: TileRect) -> Result<()> {
    if tile.height() != rect.height || tile.width() != rect.width || tile.channels() != canvas.channels() {
        return Err(Error::shape(
            &[rect.height, rect.width, canvas.channels()],
            &tile.shape(),
        ));
    }
    if rect.row0 + rect.height > canvas.height() || rect.col0 + rect.width > canvas.width() {
        return Err(Error::OutOfBounds {
            row0: rect.row0,
            col0: rect.col0,
            height: rect.height,
            width: rect.width,
            canvas_h: canvas.height(),
            canvas_w: canvas.width(),
        });
    }
    let ch = canvas.channels();
    let row_len = rect.width * ch;
    for r in 0..rect.height {
        let dst = canvas.index(rect.row0 + r, rect.col0, 0);
        let src = tile.index(r, 0, 0);
        canvas.data_mut()[dst..dst + row_len].copy_from_slice(&tile.data()[src..src + row_len]);
    }
    Ok(())
}

/// Crops every tile of the plan from a canvas in the given space.
pub fn crop_all(canvas: &LatentTensor, plan: &TilePlan, space: Space) -> Result<Vec<LatentTensor>> {
    let (h, w) = plan.canvas_dims(space);
    if canvas.height() != h || canvas.width() != w {
        return Err(Error::shape(&[h, w, canvas.channels()], &canvas.shape()));
    }
    (0..plan.len()).map(|i| crop(canvas, plan.rect(i, space))).collect()
}

/// Assembles tiles (given in the plan's row-major order) into a canvas.
pub fn stitch(tiles: &[LatentTensor], plan: &TilePlan, space: Space) -> Result<LatentTensor> {
    if tiles.len() != plan.len() {
        return Err(Error::CountMismatch {
            expected: plan.len(),
            actual: tiles.len(),
        });
    }
    let (th, tw) = plan.tile_dims(space);
    let channels = tiles.first().map_or(0, |t| t.channels());
    let (h, w) = plan.canvas_dims(space);
    let mut canvas = LatentTensor::zeros(h, w, channels);
    for (i, tile) in tiles.iter().enumerate() {
        if tile.height() != th || tile.width() != tw || tile.channels() != channels {
            return Err(Error::shape(&[th, tw, channels], &tile.shape()));
        }
        paste(&mut canvas, tile, plan.rect(i, space))?;
    }
    Ok(canvas)
}
