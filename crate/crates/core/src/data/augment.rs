//! Input transformation chain: horizontal flip, random resized crop,
//! brightness/contrast jitter. Labels and the [0, 1] range are preserved.

use crate::data::Sample;
use crate::numerics::Rng;

/// Concrete draws for one augmentation application; tests can force them.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDecisions {
    pub flip: bool,
    /// Area fraction of the crop, in [0.7, 1.0].
    pub crop_scale: f64,
    /// Fractional positions of the crop window inside its slack, in [0, 1].
    pub crop_top_frac: f64,
    pub crop_left_frac: f64,
    /// Additive brightness jitter in [-0.1, 0.1].
    pub brightness: f64,
    /// Multiplicative contrast jitter in [0.9, 1.1].
    pub contrast: f64,
}

impl AugmentDecisions {
    /// All randomness disabled: the chain becomes the identity.
    pub fn identity() -> Self {
        AugmentDecisions {
            flip: false,
            crop_scale: 1.0,
            crop_top_frac: 0.0,
            crop_left_frac: 0.0,
            brightness: 0.0,
            contrast: 1.0,
        }
    }

    pub fn draw(rng: &mut Rng) -> Self {
        AugmentDecisions {
            flip: rng.bernoulli(0.5),
            crop_scale: rng.range(0.7, 1.0),
            crop_top_frac: rng.uniform(),
            crop_left_frac: rng.uniform(),
            brightness: rng.range(-0.1, 0.1),
            contrast: rng.range(0.9, 1.1),
        }
    }
}

/// Mirror the image left-right.
pub fn hflip(pixels: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = pixels[y * width + (width - 1 - x)];
        }
    }
    out
}

fn bilinear(pixels: &[f64], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (height - 1) as f64);
    let x = x.clamp(0.0, (width - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let p00 = pixels[y0 * width + x0];
    let p01 = pixels[y0 * width + x1];
    let p10 = pixels[y1 * width + x0];
    let p11 = pixels[y1 * width + x1];
    p00 * (1.0 - fy) * (1.0 - fx) + p01 * (1.0 - fy) * fx + p10 * fy * (1.0 - fx) + p11 * fy * fx
}

/// Crop a window spanning `span_y` x `span_x` (in pixel units of the
/// sample-point lattice) anchored at (top, left), bilinearly resized back
/// to the full size. A full-span window at the origin is the identity.
pub fn resized_crop(
    pixels: &[f64],
    height: usize,
    width: usize,
    top: f64,
    left: f64,
    span_y: f64,
    span_x: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len());
    for dy in 0..height {
        let sy = if height > 1 {
            top + dy as f64 * span_y / (height - 1) as f64
        } else {
            top
        };
        for dx in 0..width {
            let sx = if width > 1 {
                left + dx as f64 * span_x / (width - 1) as f64
            } else {
                left
            };
            out.push(bilinear(pixels, height, width, sy, sx));
        }
    }
    out
}

/// Apply forced decisions, in order: flip, resized crop, photometric
/// jitter, clamp.
pub fn augment_apply(
    sample: &Sample,
    height: usize,
    width: usize,
    d: &AugmentDecisions,
) -> Sample {
    let mut pixels = if d.flip {
        hflip(&sample.pixels, height, width)
    } else {
        sample.pixels.clone()
    };
    let side = d.crop_scale.sqrt();
    let span_y = side * (height - 1) as f64;
    let span_x = side * (width - 1) as f64;
    let top = d.crop_top_frac * ((height - 1) as f64 - span_y);
    let left = d.crop_left_frac * ((width - 1) as f64 - span_x);
    pixels = resized_crop(&pixels, height, width, top, left, span_y, span_x);
    for p in &mut pixels {
        *p = (*p * d.contrast + (0.5 - 0.5 * d.contrast) + d.brightness).clamp(0.0, 1.0);
    }
    Sample {
        pixels,
        label: sample.label,
    }
}

/// Randomized training transform.
pub fn augment(sample: &Sample, height: usize, width: usize, rng: &mut Rng) -> Sample {
    augment_apply(sample, height, width, &AugmentDecisions::draw(rng))
}

/// Inference-time transform: the same chain with all randomness disabled,
/// which reduces to the identity.
pub fn transform_inference(sample: &Sample) -> Sample {
    sample.clone()
}
