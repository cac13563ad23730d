//! Image directories, crops, padding and calibration subsets.

use std::fs;
use std::path::{Path, PathBuf};

use fmpq_core::train::TrainData;
use fmpq_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files in `dir`, sorted lexicographically by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Decode an image into a `[1, 3, H, W]` tensor in `[0, 1]`. Grayscale and
/// alpha inputs are converted to RGB.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec([1, 3, h, w], data))
}

/// Write a `[1, 3, H, W]` tensor in `[0, 1]` as an 8-bit PNG.
pub fn save_image(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let [_, _, h, w] = t.shape;
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (t.data[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

/// Reflected index into `0..n` (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Window of size `size_h × size_w` at offset `(top, left)`; coordinates
/// outside the image are filled by reflection.
pub fn window(t: &Tensor<f32>, top: isize, left: isize, size_h: usize, size_w: usize) -> Tensor<f32> {
    let [n, c, h, w] = t.shape;
    let mut out = Tensor::zeros([n, c, size_h, size_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = &t.data[(b * c + ch) * h * w..][..h * w];
            let dst = &mut out.data[(b * c + ch) * size_h * size_w..][..size_h * size_w];
            for y in 0..size_h {
                let sy = reflect(top + y as isize, h);
                for x in 0..size_w {
                    dst[y * size_w + x] = src[sy * w + reflect(left + x as isize, w)];
                }
            }
        }
    }
    out
}

pub fn center_crop(t: &Tensor<f32>, size: usize) -> Tensor<f32> {
    let top = (t.height() as isize - size as isize) / 2;
    let left = (t.width() as isize - size as isize) / 2;
    window(t, top, left, size, size)
}

/// Uniform random crop; images smaller than `size` are reflect-padded.
pub fn random_crop<R: Rng>(t: &Tensor<f32>, size: usize, rng: &mut R) -> Tensor<f32> {
    let top = rng.gen_range(0..=t.height().saturating_sub(size)) as isize;
    let left = rng.gen_range(0..=t.width().saturating_sub(size)) as isize;
    window(t, top, left, size, size)
}

/// Pad bottom and right by reflection up to a multiple of `multiple`.
pub fn reflect_pad_to(t: &Tensor<f32>, multiple: usize) -> Tensor<f32> {
    let up = |v: usize| v.div_ceil(multiple) * multiple;
    let (h, w) = (up(t.height()), up(t.width()));
    if (h, w) == (t.height(), t.width()) {
        return t.clone();
    }
    window(t, 0, 0, h, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Random crops drawn from the training generator.
    Train,
    /// Fixed center crops.
    Eval,
}

#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub paths: Vec<PathBuf>,
    pub images: Vec<Tensor<f32>>,
    pub crop_size: usize,
    pub split: Split,
    /// Files that failed to decode.
    pub skipped: usize,
}

impl ImageDataset {
    pub fn from_tensors(images: Vec<Tensor<f32>>, crop_size: usize, split: Split) -> Self {
        Self {
            paths: Vec::new(),
            images,
            crop_size,
            split,
            skipped: 0,
        }
    }

    /// Every image center-cropped to `crop_size`.
    pub fn center_crops(&self) -> Vec<Tensor<f32>> {
        self.images.iter().map(|t| center_crop(t, self.crop_size)).collect()
    }
}

impl TrainData<f32> for ImageDataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn get(&self, index: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let t = &self.images[index];
        match self.split {
            Split::Train => random_crop(t, self.crop_size, rng),
            Split::Eval => center_crop(t, self.crop_size),
        }
    }
}

/// Load every decodable image of `dir`. Undecodable files are skipped with a
/// warning and counted.
pub fn load_image_dataset(dir: &Path, crop_size: usize, split: Split) -> Result<ImageDataset> {
    if crop_size == 0 {
        return Err(Error::InvalidInput("crop size must be positive".into()));
    }
    let mut paths = Vec::new();
    let mut images = Vec::new();
    let mut skipped = 0;
    for path in list_images(dir)? {
        match load_image(&path) {
            Ok(t) => {
                images.push(t);
                paths.push(path);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_owned()));
    }
    Ok(ImageDataset {
        paths,
        images,
        crop_size,
        split,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibSet {
    pub paths: Vec<PathBuf>,
    pub seed: u64,
    pub count: usize,
    /// SHA-256 over the selected files' bytes, in selection order.
    pub hash: String,
}

impl CalibSet {
    /// Center crops of the selected images.
    pub fn load(&self, crop_size: usize) -> Result<Vec<Tensor<f32>>> {
        self.paths.iter().map(|p| Ok(center_crop(&load_image(p)?, crop_size))).collect()
    }
}

/// Seeded choice of `count` images. Depends only on the sorted listing, the
/// seed and the count.
pub fn select_calibration(dir: &Path, count: usize, seed: u64) -> Result<CalibSet> {
    let all = list_images(dir)?;
    if count == 0 || all.len() < count {
        return Err(Error::TooFewImages {
            dir: dir.to_owned(),
            need: count.max(1),
            found: all.len(),
        });
    }
    let mut idx: Vec<usize> = (0..all.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let paths: Vec<PathBuf> = idx[..count].iter().map(|&i| all[i].clone()).collect();
    let mut h = Sha256::new();
    for p in &paths {
        let bytes = fs::read(p).at(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(CalibSet {
        paths,
        seed,
        count,
        hash: hex::encode(h.finalize()),
    })
}

/// SHA-256 of in-memory tensors, used to key caches on calibration content.
pub fn tensor_hash(items: &[Tensor<f32>]) -> String {
    let mut h = Sha256::new();
    for t in items {
        for d in t.shape {
            h.update((d as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
