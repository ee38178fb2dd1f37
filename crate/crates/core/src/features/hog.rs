//! Histogram of oriented gradients with unsigned orientation bins, bilinear
//! spatial and linear orientation vote interpolation, and L2-Hys block
//! normalization over overlapping blocks (one-cell stride).

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

const NORM_EPS2: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell: usize,
    /// Block side in cells.
    pub block: usize,
    pub bins: usize,
    pub clip: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell: 8,
            block: 2,
            bins: 9,
            clip: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogLayout {
    pub cell: usize,
    pub block: usize,
    pub bins: usize,
    pub cells_x: usize,
    pub cells_y: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl HogLayout {
    pub fn new(width: usize, height: usize, cfg: &HogConfig) -> Result<Self> {
        if cfg.cell == 0 || cfg.block == 0 || cfg.bins == 0 {
            return Err(Error::Parameter("HOG cell, block and bins must be positive".into()));
        }
        if !width.is_multiple_of(cfg.cell) || !height.is_multiple_of(cfg.cell) {
            return Err(Error::Shape(format!(
                "image {width}x{height} is not divisible into {}-pixel cells",
                cfg.cell
            )));
        }
        let cells_x = width / cfg.cell;
        let cells_y = height / cfg.cell;
        if cells_x < cfg.block || cells_y < cfg.block {
            return Err(Error::Shape(format!(
                "{cells_x}x{cells_y} cells cannot hold a {0}x{0} block",
                cfg.block
            )));
        }
        Ok(Self {
            cell: cfg.cell,
            block: cfg.block,
            bins: cfg.bins,
            cells_x,
            cells_y,
            blocks_x: cells_x - cfg.block + 1,
            blocks_y: cells_y - cfg.block + 1,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block * self.block * self.bins
    }

    /// `blocks_x · blocks_y · block² · bins`.
    pub fn descriptor_len(&self) -> usize {
        self.blocks_x * self.blocks_y * self.block_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub layout: HogLayout,
}

fn l2_normalize(v: &mut [f64]) {
    let norm = (v.iter().map(|x| x * x).sum::<f64>() + NORM_EPS2).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

fn cell_histograms(img: &GrayImage, layout: &HogLayout) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let bins = layout.bins;
    let bin_width = 180.0 / bins as f64;
    let cell = layout.cell as f64;
    let mut hist = vec![0.0; layout.cells_x * layout.cells_y * bins];

    for y in 0..h {
        for x in 0..w {
            let gx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
            let gy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            // bin b is centered at b·bin_width
            let pos = theta / bin_width;
            let b0f = pos.floor();
            let wb1 = pos - b0f;
            let b0 = (b0f as usize) % bins;
            let b1 = (b0 + 1) % bins;

            let cx = (x as f64 + 0.5) / cell - 0.5;
            let cy = (y as f64 + 0.5) / cell - 0.5;
            let x0 = cx.floor();
            let y0 = cy.floor();
            let fx = cx - x0;
            let fy = cy - y0;
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                let yy = y0 as i64 + dy;
                if yy < 0 || yy >= layout.cells_y as i64 || wy == 0.0 {
                    continue;
                }
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    let xx = x0 as i64 + dx;
                    if xx < 0 || xx >= layout.cells_x as i64 || wx == 0.0 {
                        continue;
                    }
                    let base = ((yy as usize) * layout.cells_x + xx as usize) * bins;
                    let vote = mag * wx * wy;
                    hist[base + b0] += vote * (1.0 - wb1);
                    hist[base + b1] += vote * wb1;
                }
            }
        }
    }
    hist
}

/// HOG descriptor of `img`. Blocks are emitted row-major; within a block,
/// cells are row-major and each cell contributes `bins` values.
pub fn hog(img: &GrayImage, cfg: &HogConfig) -> Result<HogDescriptor> {
    let layout = HogLayout::new(img.width, img.height, cfg)?;
    let hist = cell_histograms(img, &layout);
    let bins = layout.bins;
    let mut values = Vec::with_capacity(layout.descriptor_len());
    let mut block = Vec::with_capacity(layout.block_len());
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            block.clear();
            for cy in by..by + layout.block {
                for cx in bx..bx + layout.block {
                    let base = (cy * layout.cells_x + cx) * bins;
                    block.extend_from_slice(&hist[base..base + bins]);
                }
            }
            l2_normalize(&mut block);
            for v in block.iter_mut() {
                *v = v.min(cfg.clip);
            }
            l2_normalize(&mut block);
            values.extend_from_slice(&block);
        }
    }
    Ok(HogDescriptor { values, layout })
}
