use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{Point, SpineAnnotation, Vertebra};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub width: usize,
    pub height: usize,
    /// Extent of the annotation coordinate frame mapped onto the image.
    pub frame_width: f64,
    pub frame_height: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_level: f64,
    pub background: f64,
    pub foreground: f64,
    /// Sub-samples per pixel side for area coverage.
    pub supersample: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width: 64,
            height: 256,
            frame_width: 64.0,
            frame_height: 256.0,
            noise_level: 0.05,
            background: 0.2,
            foreground: 0.8,
            supersample: 4,
        }
    }
}

fn inside_convex(ring: &[Point; 4], p: Point) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let a = ring[i];
        let b = ring[(i + 1) % 4];
        let cross = (b.h - a.h) * (p.v - a.v) - (b.v - a.v) * (p.h - a.h);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Draws each vertebra as a filled bright quadrilateral over a darker
/// background, adds seeded Gaussian noise and clamps to `[0, 1]`.
pub fn render(annotation: &SpineAnnotation, opts: &RenderOptions, seed: u64) -> Result<GrayImage> {
    if annotation.vertebrae.is_empty() {
        return Err(Error::Shape("annotation has no vertebrae".into()));
    }
    if opts.width == 0 || opts.height == 0 || opts.supersample == 0 {
        return Err(Error::Parameter("image size and supersampling must be positive".into()));
    }
    if !(opts.noise_level >= 0.0) {
        return Err(Error::Parameter("noise level must be nonnegative".into()));
    }
    let sx = opts.width as f64 / opts.frame_width;
    let sy = opts.height as f64 / opts.frame_height;
    if !(sx.is_finite() && sy.is_finite() && sx > 0.0 && sy > 0.0) {
        return Err(Error::Parameter("frame size must be positive".into()));
    }
    let rings: Vec<[Point; 4]> = annotation
        .vertebrae
        .iter()
        .map(|q: &Vertebra| {
            // perimeter order TL, TR, BR, BL in pixel units
            [q[0], q[1], q[3], q[2]].map(|p| Point::new(p.h * sx, p.v * sy))
        })
        .collect();
    for (k, ring) in rings.iter().enumerate() {
        if ring.iter().any(|p| {
            !(p.h >= 0.0 && p.v >= 0.0 && p.h <= opts.width as f64 && p.v <= opts.height as f64)
        }) {
            return Err(Error::Render(format!("vertebra {k} lies outside the image frame")));
        }
    }

    let ss = opts.supersample;
    let per_pixel = (ss * ss) as f64;
    let mut coverage = vec![0.0; opts.width * opts.height];
    for ring in &rings {
        let (lo_h, hi_h, lo_v, hi_v) = ring.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.h), b.max(p.h), c.min(p.v), d.max(p.v)),
        );
        let x0 = lo_h.floor().max(0.0) as usize;
        let x1 = (hi_h.ceil() as usize).min(opts.width);
        let y0 = lo_v.floor().max(0.0) as usize;
        let y1 = (hi_v.ceil() as usize).min(opts.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0usize;
                for sy_i in 0..ss {
                    for sx_i in 0..ss {
                        let p = Point::new(
                            x as f64 + (sx_i as f64 + 0.5) / ss as f64,
                            y as f64 + (sy_i as f64 + 0.5) / ss as f64,
                        );
                        if inside_convex(ring, p) {
                            hits += 1;
                        }
                    }
                }
                let c = &mut coverage[y * opts.width + x];
                *c = (*c + hits as f64 / per_pixel).min(1.0);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, opts.noise_level.max(0.0))
        .map_err(|e| Error::Parameter(format!("noise distribution: {e}")))?;
    let pixels = coverage
        .iter()
        .map(|&c| {
            let base = opts.background + (opts.foreground - opts.background) * c;
            let n = if opts.noise_level > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (base + n).clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(opts.width, opts.height, pixels)
}

/// Writes a 16-bit grayscale PNG.
pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let data: Vec<u16> = img
        .pixels
        .iter()
        .map(|&p| (p * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        img.width as u32,
        img.height as u32,
        data,
    )
    .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn load_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let luma = img.to_luma16();
    let (w, h) = luma.dimensions();
    let pixels = luma.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
    GrayImage::new(w as usize, h as usize, pixels)
}
