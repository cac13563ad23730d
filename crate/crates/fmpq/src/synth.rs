//! Seeded synthetic images for desk-scale experiments: smooth colour
//! gradients with overlapping discs, boxes and stripe patches plus mild
//! texture noise.

use std::fs;
use std::path::{Path, PathBuf};

use fmpq_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::save_image;
use crate::error::{IoContext, Result};

fn rgb<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)]
}

/// One `[1, 3, size, size]` image.
pub fn toy_image<R: Rng>(size: usize, rng: &mut R) -> Tensor<f32> {
    let s = size as f32;
    let (c0, c1) = (rgb(rng), rgb(rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut img = vec![[0.0f32; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let t = (((x as f32 / s - 0.5) * dx + (y as f32 / s - 0.5) * dy) + 0.75) / 1.5;
            for c in 0..3 {
                img[y * size + x][c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    for _ in 0..rng.gen_range(2..5) {
        let col = rgb(rng);
        let (cx, cy) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
        let r = rng.gen_range(0.08..0.3) * s;
        let kind = rng.gen_range(0..3);
        let freq: f32 = rng.gen_range(0.15..0.4);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f32 - cx, y as f32 - cy);
                let inside = match kind {
                    0 => fx * fx + fy * fy < r * r,
                    1 => fx.abs() < r && fy.abs() < 0.6 * r,
                    _ => fx.abs() < r && fy.abs() < r && (fx * freq).sin() > 0.0,
                };
                if inside {
                    img[y * size + x] = col;
                }
            }
        }
    }
    let mut data = vec![0.0f32; 3 * size * size];
    for (i, px) in img.iter().enumerate() {
        for c in 0..3 {
            let n: f32 = rng.gen_range(-0.01..0.01);
            data[c * size * size + i] = (px[c] + n).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec([1, 3, size, size], data)
}

/// `count` seeded toy images (image `i` depends only on `seed` and `i`).
pub fn toy_images(count: usize, size: usize, seed: u64) -> Vec<Tensor<f32>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            toy_image(size, &mut rng)
        })
        .collect()
}

/// Write `count` toy images as `toy_0000.png`, … into `dir`.
pub fn write_toy_dataset(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).at(dir)?;
    toy_images(count, size, seed)
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let p = dir.join(format!("toy_{i:04}.png"));
            save_image(&p, t)?;
            Ok(p)
        })
        .collect()
}
