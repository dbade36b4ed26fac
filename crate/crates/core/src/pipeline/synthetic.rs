//! Procedurally generated clean clips for tests, demos and smoke training.

use rand::Rng;

use crate::clip::{Shape, VideoClip};
use crate::error::Result;
use crate::rng::RandomSource;

struct Blob {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    square: bool,
    level: f64,
    stripe: f64,
    angle: f64,
}

/// A smooth shaded background with a few moving textured shapes.
pub fn procedural_clip(seed: u64, shape: Shape) -> Result<VideoClip> {
    let mut g = RandomSource::new(seed, "procedural").rng();
    let (h, w) = (shape.height as f64, shape.width as f64);
    let base: f64 = g.gen_range(0.15..0.6);
    let gx: f64 = g.gen_range(-0.3..0.3);
    let gy: f64 = g.gen_range(-0.3..0.3);
    let wave_amp: f64 = g.gen_range(0.0..0.12);
    let wave_fx: f64 = g.gen_range(0.5..3.0);
    let wave_fy: f64 = g.gen_range(0.5..3.0);
    let tint: Vec<f64> = (0..shape.channels).map(|_| g.gen_range(0.85..1.15)).collect();
    let blobs: Vec<Blob> = (0..g.gen_range(2..6))
        .map(|_| Blob {
            cx: g.gen_range(0.0..w),
            cy: g.gen_range(0.0..h),
            vx: g.gen_range(-1.5..1.5),
            vy: g.gen_range(-1.5..1.5),
            radius: g.gen_range(0.08..0.3) * h.min(w),
            square: g.gen_bool(0.5),
            level: g.gen_range(0.05..0.95),
            stripe: g.gen_range(0.0..0.15),
            angle: g.gen_range(0.0..std::f64::consts::PI),
        })
        .collect();
    VideoClip::from_fn(shape, |t, c, y, x| {
        let (xf, yf) = (x as f64 / w, y as f64 / h);
        let tau = std::f64::consts::TAU;
        let mut v = base
            + gx * (xf - 0.5)
            + gy * (yf - 0.5)
            + wave_amp * (tau * wave_fx * xf + 0.3 * t as f64).sin() * (tau * wave_fy * yf).cos();
        for b in &blobs {
            let dx = x as f64 - (b.cx + b.vx * t as f64);
            let dy = y as f64 - (b.cy + b.vy * t as f64);
            let inside = if b.square {
                dx.abs() < b.radius && dy.abs() < b.radius
            } else {
                dx * dx + dy * dy < b.radius * b.radius
            };
            if inside {
                let u = dx * b.angle.cos() + dy * b.angle.sin();
                v = b.level + b.stripe * (u * 0.7).sin();
            }
        }
        (v * tint[c]).clamp(0.0, 1.0)
    })
}
