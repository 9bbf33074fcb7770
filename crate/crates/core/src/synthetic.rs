//! Seeded synthetic pavement images with thin dark cracks and exact masks.
//!
//! Used for tests and for smoke-running the pipeline when no real corpus is
//! at hand. The texture is a noisy mid-gray with soft blotches; cracks are
//! random-walk polylines 1 to 4 pixels wide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::morphology::BinaryImage;
use crate::patch::RawImage;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// 3 for colour, 1 for grayscale.
    pub channels: usize,
    pub min_cracks: usize,
    pub max_cracks: usize,
    /// Crack half-width range in pixels.
    pub min_half_width: f64,
    pub max_half_width: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 480,
            height: 320,
            channels: 3,
            min_cracks: 1,
            max_cracks: 2,
            min_half_width: 0.6,
            max_half_width: 1.6,
        }
    }
}

struct Blotch {
    r: f64,
    c: f64,
    sigma: f64,
    amp: f64,
}

/// One image and its crack mask, fully determined by `seed`.
pub fn synth_crack_image(spec: &SyntheticSpec, seed: u64) -> (RawImage, BinaryImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut mask = BinaryImage::new(w, h);
    let mut depth = vec![0.0f64; w * h];

    let n = rng.gen_range(spec.min_cracks..=spec.max_cracks.max(spec.min_cracks));
    for _ in 0..n {
        draw_crack(&mut rng, spec, &mut mask, &mut depth);
    }

    let base: f64 = rng.gen_range(115.0..165.0);
    let blotches: Vec<Blotch> = (0..rng.gen_range(2..6))
        .map(|_| Blotch {
            r: rng.gen_range(0.0..h as f64),
            c: rng.gen_range(0.0..w as f64),
            sigma: rng.gen_range(15.0..60.0),
            amp: rng.gen_range(-22.0..22.0),
        })
        .collect();
    let tint = if spec.channels == 3 {
        [1.0, rng.gen_range(0.95..1.0), rng.gen_range(0.88..0.97)]
    } else {
        [1.0; 3]
    };

    let mut data = Vec::with_capacity(w * h * spec.channels);
    for r in 0..h {
        for c in 0..w {
            let mut v = base;
            for b in &blotches {
                let d2 = (r as f64 - b.r).powi(2) + (c as f64 - b.c).powi(2);
                v += b.amp * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            }
            // Grainy aggregate texture.
            v += (0..3).map(|_| rng.gen_range(-9.0..9.0)).sum::<f64>();
            let d = depth[r * w + c];
            v *= 1.0 - 0.6 * d;
            for ch in tint.iter().take(spec.channels) {
                data.push((v * ch).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    (
        RawImage {
            width: w,
            height: h,
            channels: spec.channels,
            data,
        },
        mask,
    )
}

fn draw_crack(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, mask: &mut BinaryImage, depth: &mut [f64]) {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut r = rng.gen_range(0.1 * h..0.9 * h);
    let mut c = rng.gen_range(0.1 * w..0.9 * w);
    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut half = rng.gen_range(spec.min_half_width..=spec.max_half_width);
    let steps = rng.gen_range((0.5 * w.max(h)) as usize..=(1.1 * w.max(h)) as usize);
    for _ in 0..steps {
        paint_disk(mask, depth, r, c, half);
        angle += rng.gen_range(-0.25..0.25);
        half = (half + rng.gen_range(-0.08..0.08)).clamp(spec.min_half_width, spec.max_half_width);
        r += angle.sin();
        c += angle.cos();
        if r < 0.0 || c < 0.0 || r >= h || c >= w {
            break;
        }
    }
}

fn paint_disk(mask: &mut BinaryImage, depth: &mut [f64], r: f64, c: f64, half: f64) {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let reach = half.ceil() as isize + 1;
    for y in (r.round() as isize - reach)..=(r.round() as isize + reach) {
        for x in (c.round() as isize - reach)..=(c.round() as isize + reach) {
            if y < 0 || x < 0 || y >= h || x >= w {
                continue;
            }
            let d = ((y as f64 - r).powi(2) + (x as f64 - c).powi(2)).sqrt();
            let i = (y * w + x) as usize;
            if d <= half {
                mask.set(y as usize, x as usize, true);
                depth[i] = 1.0;
            } else if d <= half + 1.0 {
                // Soft shoulder outside the labeled crack.
                depth[i] = depth[i].max(0.4 * (half + 1.0 - d));
            }
        }
    }
}
