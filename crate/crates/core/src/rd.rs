//! Rate-distortion objective.
//!
//! `loss = rate_bpp + λ · mse`, with the rate taken from entropy-model
//! likelihoods and the MSE measured on the 0–255 intensity scale.

use crate::real::Real;
use crate::tensor::Tensor;
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RDMetrics {
    pub rate_bpp: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub loss: f64,
}

impl RDMetrics {
    pub fn new(rate_bpp: f64, distortion: f64, lambda: f64) -> Self {
        Self {
            rate_bpp,
            distortion,
            lambda,
            loss: rate_bpp + lambda * distortion,
        }
    }
}

const PIXEL_MAX: f64 = 255.0;

fn bits<T: Real>(liks: &[T]) -> Result<f64, Error> {
    let mut total = 0.0;
    for &l in liks {
        let v = l.to_f64_lossy();
        if !(v > 0.0) {
            return Err(Error::NonPositiveLikelihood(v));
        }
        total -= libm::log2(v);
    }
    Ok(total)
}

/// Pixels per image plane times batch size.
fn pixel_count<T: Real>(original: &Tensor<T>) -> f64 {
    (original.batch() * original.height() * original.width()) as f64
}

pub fn mse_255<T: Real>(reconstruction: &Tensor<T>, original: &Tensor<T>) -> f64 {
    let sum: f64 = reconstruction
        .data
        .iter()
        .zip(&original.data)
        .map(|(&a, &b)| {
            let d = PIXEL_MAX * (a.to_f64_lossy() - b.to_f64_lossy());
            d * d
        })
        .sum();
    sum / original.len() as f64
}

pub fn rd_loss<T: Real>(
    reconstruction: &Tensor<T>,
    original: &Tensor<T>,
    likelihoods_y: &[T],
    likelihoods_z: &[T],
    lambda: f64,
) -> Result<RDMetrics, Error> {
    if reconstruction.shape != original.shape {
        return Err(Error::ShapeMismatch(alloc::format!(
            "reconstruction {:?} vs original {:?}",
            reconstruction.shape,
            original.shape
        )));
    }
    let rate = (bits(likelihoods_y)? + bits(likelihoods_z)?) / pixel_count(original);
    Ok(RDMetrics::new(rate, mse_255(reconstruction, original), lambda))
}

/// Gradients of the loss with respect to the reconstruction and to each
/// likelihood.
pub struct RdGrads<T> {
    pub metrics: RDMetrics,
    pub reconstruction: Tensor<T>,
    pub likelihoods_y: Tensor<T>,
    pub likelihoods_z: Tensor<T>,
}

pub fn rd_loss_with_grads<T: Real>(
    reconstruction: &Tensor<T>,
    original: &Tensor<T>,
    likelihoods_y: &Tensor<T>,
    likelihoods_z: &Tensor<T>,
    lambda: f64,
) -> Result<RdGrads<T>, Error> {
    let metrics = rd_loss(reconstruction, original, &likelihoods_y.data, &likelihoods_z.data, lambda)?;
    let px = pixel_count(original);
    let k = T::lit(-1.0 / (core::f64::consts::LN_2 * px));
    let dist_k = T::lit(2.0 * lambda * PIXEL_MAX * PIXEL_MAX / original.len() as f64);
    let mut grad_rec = Tensor::zeros(reconstruction.shape);
    for ((g, &a), &b) in grad_rec.data.iter_mut().zip(&reconstruction.data).zip(&original.data) {
        *g = dist_k * (a - b);
    }
    Ok(RdGrads {
        metrics,
        reconstruction: grad_rec,
        likelihoods_y: likelihoods_y.map(|l| k / l),
        likelihoods_z: likelihoods_z.map(|l| k / l),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_distortion_loss_is_rate() {
        let x = Tensor::from_vec([1, 3, 2, 2], vec![0.5f64; 12]);
        // 4 px at 0.5 bpp = 2 bits = two elements with likelihood 0.5
        let m = rd_loss(&x, &x, &[0.5, 0.5], &[], 0.0130).unwrap();
        assert_eq!(m.rate_bpp, 0.5);
        assert_eq!(m.loss, 0.5);
    }

    #[test]
    fn one_bit_per_pixel() {
        let x = Tensor::from_vec([1, 3, 4, 4], vec![0.0f64; 48]);
        let m = rd_loss(&x, &x, &[0.5; 16], &[], 0.01).unwrap();
        assert_eq!(m.rate_bpp, 1.0);
    }

    #[test]
    fn loss_combines_terms() {
        let m = RDMetrics::new(1.0, 100.0, 0.0130);
        assert!((m.loss - 2.3).abs() < 1e-12);
        // distortion on the 0-255 scale: uniform error of 10/255 gives mse 100
        let a = Tensor::from_vec([1, 3, 1, 1], vec![0.0f64; 3]);
        let b = Tensor::from_vec([1, 3, 1, 1], vec![10.0 / 255.0; 3]);
        assert!((mse_255(&a, &b) - 100.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_likelihood_is_an_error() {
        let x = Tensor::from_vec([1, 3, 1, 1], vec![0.0f64; 3]);
        assert!(matches!(rd_loss(&x, &x, &[0.5, 0.0], &[], 0.01), Err(Error::NonPositiveLikelihood(_))));
    }

    #[test]
    fn rate_is_pixel_weighted_over_batch() {
        let one = Tensor::from_vec([1, 3, 2, 2], vec![0.0f64; 12]);
        let two = Tensor::from_vec([2, 3, 2, 2], vec![0.0f64; 24]);
        let a = rd_loss(&one, &one, &[0.5; 4], &[], 0.01).unwrap();
        let b = rd_loss(&one, &one, &[0.25; 4], &[], 0.01).unwrap();
        let mut both = vec![0.5; 4];
        both.extend([0.25; 4]);
        let ab = rd_loss(&two, &two, &both, &[], 0.01).unwrap();
        assert!((ab.rate_bpp - (a.rate_bpp + b.rate_bpp) / 2.0).abs() < 1e-12);
    }
}
