//! Eval-mode RD evaluation over image sets.

use std::path::Path;

use fmpq_core::metrics::psnr;
use fmpq_core::model::ForwardOutput;
use fmpq_core::rd::{mse_255, rd_loss};
use fmpq_core::{LicModel, Mode, QuantizedModel, RDMetrics, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{list_images, load_image, reflect_pad_to, window};
use crate::error::{Error, Result};
use crate::zeta::thread_pool;

/// A model that can be evaluated: float or fake-quantized.
pub trait Codec: Sync {
    fn downsampling(&self) -> usize;
    fn lambda(&self) -> f64;
    fn forward_eval(&self, x: &Tensor<f32>) -> Result<ForwardOutput<f32>>;
}

// Eval mode draws no noise; the generator only satisfies the signature.
fn unused_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl Codec for LicModel<f32> {
    fn downsampling(&self) -> usize {
        LicModel::downsampling(self)
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn forward_eval(&self, x: &Tensor<f32>) -> Result<ForwardOutput<f32>> {
        Ok(self.forward_compress(x, Mode::Eval, &mut unused_rng())?)
    }
}

impl Codec for QuantizedModel<f32> {
    fn downsampling(&self) -> usize {
        self.base.downsampling()
    }

    fn lambda(&self) -> f64 {
        self.base.lambda
    }

    fn forward_eval(&self, x: &Tensor<f32>) -> Result<ForwardOutput<f32>> {
        Ok(self.forward(x, Mode::Eval, &mut unused_rng())?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageScore {
    pub metrics: RDMetrics,
    pub psnr_db: f64,
}

impl Serialize for ImageScore {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ImageScore", 4)?;
        st.serialize_field("bpp", &self.metrics.rate_bpp)?;
        st.serialize_field("mse", &self.metrics.distortion)?;
        st.serialize_field("loss", &self.metrics.loss)?;
        st.serialize_field("psnr_db", &self.psnr_db)?;
        st.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub mean_bpp: f64,
    pub mean_psnr_db: f64,
    pub mean_distortion: f64,
    pub mean_loss: f64,
    pub images: Vec<ImageScore>,
    /// Files that could not be decoded.
    pub skipped: usize,
}

/// Score one image. It is reflect-padded to the model's stride; the
/// metrics cover only the original region.
pub fn score_image<C: Codec + ?Sized>(model: &C, image: &Tensor<f32>) -> Result<ImageScore> {
    let padded = reflect_pad_to(image, model.downsampling());
    let out = model.forward_eval(&padded)?;
    let recon = window(&out.reconstruction, 0, 0, image.height(), image.width());
    let metrics = rd_loss(
        &recon,
        image,
        &out.likelihoods_y.data,
        &out.likelihoods_z.data,
        model.lambda(),
    )?;
    Ok(ImageScore {
        psnr_db: psnr(mse_255(&recon, image)),
        metrics,
    })
}

/// Unweighted means over `images`, evaluated on `jobs` threads.
pub fn evaluate_images<C: Codec + ?Sized>(model: &C, images: &[Tensor<f32>], jobs: usize) -> Result<EvalSummary> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no images to evaluate".into()));
    }
    let scores: Vec<ImageScore> = thread_pool(jobs)?.install(|| {
        images
            .par_iter()
            .map(|img| score_image(model, img))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(summarize(scores, 0))
}

fn summarize(images: Vec<ImageScore>, skipped: usize) -> EvalSummary {
    let n = images.len() as f64;
    let mean = |f: &dyn Fn(&ImageScore) -> f64| images.iter().map(f).sum::<f64>() / n;
    EvalSummary {
        mean_bpp: mean(&|s| s.metrics.rate_bpp),
        mean_psnr_db: mean(&|s| s.psnr_db),
        mean_distortion: mean(&|s| s.metrics.distortion),
        mean_loss: mean(&|s| s.metrics.loss),
        images,
        skipped,
    }
}

/// Evaluate every decodable image of `dir` at full resolution.
pub fn evaluate_model<C: Codec + ?Sized>(model: &C, dir: &Path, jobs: usize) -> Result<EvalSummary> {
    let mut images = Vec::new();
    let mut skipped = 0;
    for p in list_images(dir)? {
        match load_image(&p) {
            Ok(t) => images.push(t),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_owned()));
    }
    let mut s = evaluate_images(model, &images, jobs)?;
    s.skipped = skipped;
    Ok(s)
}
