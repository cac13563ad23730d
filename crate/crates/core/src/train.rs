//! Full-precision training and quantization-aware fine-tuning, both on the
//! RD loss alone.
//!
//! Every epoch `e` draws data order and crops from ChaCha8 stream `2e` and
//! latent noise from stream `2e + 1` of the configured seed, so a run resumed
//! at epoch `e` sees the same samples as an uninterrupted one. Optimizer
//! moments are not carried across a resume.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{LicModel, Mode};
use crate::optim::{clip_grad_norm, Adam, Schedule};
use crate::quant::{QuantizedModel, SCALE_EPS};
use crate::rd::{rd_loss_with_grads, RDMetrics};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_weights: f64,
    pub lr_quant: f64,
    /// Overrides the model's λ when set.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub crop_size: usize,
    pub schedule: Schedule,
    pub clip_grad_norm: Option<f64>,
    /// First epoch to run; earlier epochs are treated as already done.
    pub start_epoch: usize,
}

impl TrainConfig {
    /// Baseline training: Adam, batch 16, cosine decay from 1e-4.
    pub fn baseline() -> Self {
        Self {
            epochs: 90,
            batch_size: 16,
            lr_weights: 1e-4,
            lr_quant: 1e-4,
            lambda: None,
            seed: 0,
            crop_size: 64,
            schedule: Schedule::Cosine,
            clip_grad_norm: Some(1.0),
            start_epoch: 0,
        }
    }

    /// Quantization-aware fine-tuning: 1e-5 for network parameters and 1e-4
    /// for quantizer parameters.
    pub fn qat() -> Self {
        Self {
            epochs: 30,
            lr_weights: 1e-5,
            lr_quant: 1e-4,
            schedule: Schedule::Constant,
            ..Self::baseline()
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if !(self.lr_weights > 0.0 && self.lr_quant > 0.0) {
            return Err(Error::InvalidConfig(alloc::string::String::from("learning rates must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from("batch_size must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub rate_bpp: f64,
    pub distortion: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: Vec<EpochStats>,
    /// Epoch at which a non-finite loss appeared. The returned model holds
    /// the weights from the end of the last finite epoch.
    pub diverged_at: Option<usize>,
}

/// A training set. `get` may crop or augment using the provided generator.
pub trait TrainData<T> {
    fn len(&self) -> usize;
    fn get(&self, index: usize, rng: &mut ChaCha8Rng) -> Tensor<T>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Real> TrainData<T> for [Tensor<T>] {
    fn len(&self) -> usize {
        <[Tensor<T>]>::len(self)
    }

    fn get(&self, index: usize, _rng: &mut ChaCha8Rng) -> Tensor<T> {
        self[index].clone()
    }
}

impl<T: Real> TrainData<T> for Vec<Tensor<T>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize, _rng: &mut ChaCha8Rng) -> Tensor<T> {
        self[index].clone()
    }
}

fn epoch_rngs(seed: u64, epoch: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(2 * epoch as u64);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(2 * epoch as u64 + 1);
    (data, noise)
}

fn epoch_batches<T: Real, D: TrainData<T> + ?Sized>(data: &D, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .map(|idx| {
            let items: Vec<Tensor<T>> = idx.iter().map(|&i| data.get(i, rng)).collect();
            Tensor::stack(&items)
        })
        .collect()
}

#[derive(Default)]
struct Accum {
    loss: f64,
    rate: f64,
    dist: f64,
    n: f64,
}

impl Accum {
    fn add(&mut self, m: &RDMetrics, w: usize) {
        let w = w as f64;
        self.loss += m.loss * w;
        self.rate += m.rate_bpp * w;
        self.dist += m.distortion * w;
        self.n += w;
    }

    fn stats(&self, epoch: usize) -> EpochStats {
        EpochStats {
            epoch,
            loss: self.loss / self.n,
            rate_bpp: self.rate / self.n,
            distortion: self.dist / self.n,
        }
    }
}

fn batches_per_epoch(len: usize, batch: usize) -> usize {
    len.div_ceil(batch)
}

pub fn train_baseline<T: Real, D: TrainData<T> + ?Sized>(
    model: LicModel<T>,
    data: &D,
    config: &TrainConfig,
) -> Result<TrainOutcome<LicModel<T>>, Error> {
    train_baseline_with(model, data, config, &mut |_| {})
}

/// Full-precision training; `observer` sees every completed epoch.
pub fn train_baseline_with<T: Real, D: TrainData<T> + ?Sized>(
    mut model: LicModel<T>,
    data: &D,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<LicModel<T>>, Error> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lambda = config.lambda.unwrap_or(model.lambda);
    let mut opt = Adam::new(model.params().iter().map(|p| p.len()));
    let bpe = batches_per_epoch(data.len(), config.batch_size);
    let total = config.epochs * bpe;
    let mut history = Vec::new();
    let mut diverged_at = None;
    for epoch in config.start_epoch..config.epochs {
        let snapshot = model.clone();
        let (mut drng, mut nrng) = epoch_rngs(config.seed, epoch);
        let mut acc = Accum::default();
        let mut finite = true;
        for (i, batch) in epoch_batches(data, config.batch_size, &mut drng).iter().enumerate() {
            let out = model.forward_compress(batch, Mode::Train, &mut nrng)?;
            let g = rd_loss_with_grads(&out.reconstruction, batch, &out.likelihoods_y, &out.likelihoods_z, lambda)?;
            if !g.metrics.loss.is_finite() {
                finite = false;
                break;
            }
            acc.add(&g.metrics, batch.batch());
            let params = model.layer_params();
            let grads = model.backward(&out, &params, &g.reconstruction, &g.likelihoods_y, &g.likelihoods_z);
            let mut flat: Vec<Vec<T>> = grads.flat().into_iter().map(<[T]>::to_vec).collect();
            if let Some(c) = config.clip_grad_norm {
                clip_grad_norm(&mut flat, c);
            }
            let lr = config.lr_weights * config.schedule.factor(epoch * bpe + i, total);
            let lrs: Vec<f64> = alloc::vec![lr; flat.len()];
            let grefs: Vec<&[T]> = flat.iter().map(Vec::as_slice).collect();
            opt.step(&mut model.params_mut(), &grefs, &lrs);
        }
        if !finite || !acc.loss.is_finite() {
            model = snapshot;
            diverged_at = Some(epoch);
            break;
        }
        let s = acc.stats(epoch);
        observer(&s);
        history.push(s);
    }
    Ok(TrainOutcome {
        model,
        history,
        diverged_at,
    })
}

pub fn qat_finetune<T: Real, D: TrainData<T> + ?Sized>(
    qmodel: QuantizedModel<T>,
    data: &D,
    config: &TrainConfig,
) -> Result<TrainOutcome<QuantizedModel<T>>, Error> {
    qat_finetune_with(qmodel, data, config, &mut |_| {})
}

/// Quantization-aware fine-tuning of network weights together with the
/// per-channel weight scales (through `s = exp(θ)`) and zero points. Bit
/// widths and the dynamic activation quantizers are left untouched.
pub fn qat_finetune_with<T: Real, D: TrainData<T> + ?Sized>(
    mut qmodel: QuantizedModel<T>,
    data: &D,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome<QuantizedModel<T>>, Error> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.epochs <= config.start_epoch {
        return Ok(TrainOutcome {
            model: qmodel,
            history: Vec::new(),
            diverged_at: None,
        });
    }
    let lambda = config.lambda.unwrap_or(qmodel.base.lambda);
    let n_base = qmodel.base.params().len();
    let layers = qmodel.weight_quantizers.len();
    let mut log_scales: Vec<Vec<T>> = qmodel
        .weight_quantizers
        .iter()
        .map(|q| q.scale.iter().map(|s| s.ln()).collect())
        .collect();
    let shapes: Vec<usize> = qmodel
        .base
        .params()
        .iter()
        .map(|p| p.len())
        .chain(log_scales.iter().map(Vec::len))
        .chain(qmodel.weight_quantizers.iter().map(|q| q.zero_point.len()))
        .collect();
    let mut opt = Adam::new(shapes);
    let bpe = batches_per_epoch(data.len(), config.batch_size);
    let total = config.epochs * bpe;
    let mut history = Vec::new();
    let mut diverged_at = None;
    let eps = T::lit(SCALE_EPS);

    for epoch in config.start_epoch..config.epochs {
        let snapshot = (qmodel.clone(), log_scales.clone());
        let (mut drng, mut nrng) = epoch_rngs(config.seed, epoch);
        let mut acc = Accum::default();
        let mut finite = true;
        for (i, batch) in epoch_batches(data, config.batch_size, &mut drng).iter().enumerate() {
            let qw = qmodel.quantized_weights();
            let params = qw.params();
            let out = qmodel
                .base
                .forward_with(batch, Mode::Train, &params, Some(qmodel.activation_bits), &mut nrng)?;
            let g = rd_loss_with_grads(&out.reconstruction, batch, &out.likelihoods_y, &out.likelihoods_z, lambda)?;
            if !g.metrics.loss.is_finite() {
                finite = false;
                break;
            }
            acc.add(&g.metrics, batch.batch());
            let mg = qmodel
                .base
                .backward(&out, &params, &g.reconstruction, &g.likelihoods_y, &g.likelihoods_z);
            let chained = qmodel.quantizer_backward(&mg.layers);

            let mut flat: Vec<Vec<T>> = Vec::with_capacity(n_base + 2 * layers);
            let mut scale_grads = Vec::with_capacity(layers);
            let mut zero_grads = Vec::with_capacity(layers);
            for (l, (dw, db, qg)) in chained.into_iter().enumerate() {
                flat.push(dw);
                flat.push(db);
                let s = &qmodel.weight_quantizers[l].scale;
                scale_grads.push(qg.scale.iter().zip(s).map(|(&g, &s)| g * s).collect::<Vec<T>>());
                zero_grads.push(qg.zero_point);
            }
            flat.extend(mg.prior.flat().cloned());
            flat.extend(scale_grads);
            flat.extend(zero_grads);
            if let Some(c) = config.clip_grad_norm {
                clip_grad_norm(&mut flat, c);
            }
            let f = config.schedule.factor(epoch * bpe + i, total);
            let lrs: Vec<f64> = (0..flat.len())
                .map(|k| if k < n_base { config.lr_weights * f } else { config.lr_quant * f })
                .collect();
            let grefs: Vec<&[T]> = flat.iter().map(Vec::as_slice).collect();

            let QuantizedModel { base, weight_quantizers, .. } = &mut qmodel;
            let mut prefs = base.params_mut();
            prefs.extend(log_scales.iter_mut().map(Vec::as_mut_slice));
            prefs.extend(weight_quantizers.iter_mut().map(|q| q.zero_point.as_mut_slice()));
            opt.step(&mut prefs, &grefs, &lrs);
            for (q, ls) in weight_quantizers.iter_mut().zip(&log_scales) {
                for (s, &l) in q.scale.iter_mut().zip(ls) {
                    *s = l.exp().max(eps);
                }
            }
        }
        if !finite || !acc.loss.is_finite() {
            qmodel = snapshot.0;
            diverged_at = Some(epoch);
            break;
        }
        let s = acc.stats(epoch);
        observer(&s);
        history.push(s);
    }
    Ok(TrainOutcome {
        model: qmodel,
        history,
        diverged_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::BitAssignment;
    use crate::model::{build_model, Variant, WidthConfig};
    use crate::quant::attach_quantizers;
    use crate::rd::rd_loss;

    fn tiny() -> (LicModel<f32>, Vec<Tensor<f32>>) {
        let w = WidthConfig {
            main: 4,
            latent: 4,
            hyper: 4,
            hyper_strides: [1, 1],
            ..WidthConfig::default()
        };
        let m = build_model(Variant::MeanScaleHyperprior, w, 3, 1).unwrap();
        let data = (0..4)
            .map(|k| {
                Tensor::from_vec(
                    [1, 3, 16, 16],
                    (0..768)
                        .map(|i| {
                            let (y, x) = ((i % 256) / 16, i % 16);
                            0.5 + 0.4 * libm::sinf((x + k) as f32 * 0.4) * libm::cosf(y as f32 * 0.3)
                        })
                        .collect(),
                )
            })
            .collect();
        (m, data)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            lr_weights: 1e-3,
            lr_quant: 1e-3,
            crop_size: 16,
            ..TrainConfig::baseline()
        }
    }

    #[test]
    fn baseline_reduces_loss_and_is_deterministic() {
        let (m, data) = tiny();
        let a = train_baseline(m.clone(), &data, &cfg(15)).unwrap();
        let b = train_baseline(m, &data, &cfg(15)).unwrap();
        assert_eq!(a.history, b.history);
        assert!(a.diverged_at.is_none());
        assert!(a.history.last().unwrap().loss < a.history[0].loss);
    }

    #[test]
    fn qat_zero_epochs_is_identity() {
        let (m, data) = tiny();
        let q = attach_quantizers(m, &BitAssignment::uniform(14, 6, 8), 8, None).unwrap();
        let out = qat_finetune(q.clone(), &data, &cfg(0)).unwrap();
        assert_eq!(out.model, q);
        assert!(out.history.is_empty());
    }

    #[test]
    fn qat_keeps_bits_and_learns_quantizers() {
        let (m, data) = tiny();
        let bits: Vec<u32> = (0..14).map(|i| 3 + (i % 5) as u32).collect();
        let q = attach_quantizers(m, &BitAssignment::new(bits.clone(), 8, 1.0), 8, None).unwrap();
        let out = qat_finetune(q.clone(), &data, &cfg(10)).unwrap();
        let t = out.model;
        assert_eq!(t.bit_assignment.bits, bits);
        for (a, b) in t.weight_quantizers.iter().zip(&q.weight_quantizers) {
            assert_eq!(a.bits, b.bits);
            assert!(a.scale.iter().all(|&s| s > 0.0));
        }
        assert!(t.weight_quantizers.iter().zip(&q.weight_quantizers).any(|(a, b)| a.scale != b.scale));
        let h = &out.history;
        assert!(h.last().unwrap().loss < h[0].loss);
    }

    #[test]
    fn training_loss_is_the_rd_loss() {
        let (m, data) = tiny();
        let batch = Tensor::stack(&data[..2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = m.forward_compress(&batch, Mode::Train, &mut rng).unwrap();
        let g = rd_loss_with_grads(&out.reconstruction, &batch, &out.likelihoods_y, &out.likelihoods_z, m.lambda).unwrap();
        let direct = rd_loss(&out.reconstruction, &batch, &out.likelihoods_y.data, &out.likelihoods_z.data, m.lambda).unwrap();
        assert_eq!(g.metrics, direct);
    }

    #[test]
    fn resume_matches_uninterrupted_data_stream() {
        let (m, data) = tiny();
        let (mut a, _) = epoch_rngs(5, 3);
        let (mut b, _) = epoch_rngs(5, 3);
        let ba = epoch_batches(&data, 2, &mut a);
        let bb = epoch_batches(&data, 2, &mut b);
        assert_eq!(ba, bb);
        let _ = m;
    }
}
