//! Compact hyperprior compression networks.
//!
//! Both variants have fourteen quantizable layers with a fixed index layout:
//!
//! | indices | path          | layers                          |
//! |---------|---------------|---------------------------------|
//! | 0..=3   | main encoder  | 4 × conv 5×5                    |
//! | 4..=7   | main decoder  | 4 × transposed conv 5×5         |
//! | 8..=10  | hyper encoder | conv 3×3 (stride 1), 2 × conv 5×5 |
//! | 11..=13 | hyper decoder | 2 × transposed conv 5×5, conv 3×3 |
//!
//! A leaky rectifier follows every layer except the last one of each path.
//! The mean-scale variant's hyper decoder emits `2M` channels (scale logits
//! then means); the scale variant emits `M` scale logits and reads `|y|`.
//! Scales go through softplus to stay positive.
//!
//! Weights are initialized uniformly in `±sqrt(6 / fan_in)`, where `fan_in`
//! is `c_in·k²` for convolutions and `c_in·k²/stride²` for transposed
//! convolutions; biases start at zero. The random stream is ChaCha8 seeded
//! with the model seed, consumed layer by layer in index order and then by
//! the factorized prior.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads};
use crate::entropy::{gaussian_likelihood, gaussian_likelihood_backward, FactorizedPrior, PriorGrads};
use crate::quant::quantize_dynamic;
use crate::real::{round_half_even, sigmoid, softplus, Real};
use crate::tensor::Tensor;
use crate::Error;

/// Rate-distortion multipliers of the six quality levels.
pub const LAMBDAS: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483];

pub const QUANTIZABLE_LAYERS: usize = 14;
pub const MAIN_ENCODER: [usize; 4] = [0, 1, 2, 3];
pub const MAIN_DECODER: [usize; 4] = [4, 5, 6, 7];
pub const HYPER_ENCODER: [usize; 3] = [8, 9, 10];
pub const HYPER_DECODER: [usize; 3] = [11, 12, 13];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    ScaleHyperprior,
    MeanScaleHyperprior,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::ScaleHyperprior => "scale-hyperprior",
            Variant::MeanScaleHyperprior => "mean-scale-hyperprior",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scale-hyperprior" | "scale" => Ok(Variant::ScaleHyperprior),
            "mean-scale-hyperprior" | "mean-scale" => Ok(Variant::MeanScaleHyperprior),
            other => Err(Error::InvalidVariant(String::from(other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Conv,
    TConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    MainEncoder,
    MainDecoder,
    HyperEncoder,
    HyperDecoder,
}

impl PathKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathKind::MainEncoder => "main-encoder",
            PathKind::MainDecoder => "main-decoder",
            PathKind::HyperEncoder => "hyper-encoder",
            PathKind::HyperDecoder => "hyper-decoder",
        }
    }

    pub fn is_main(&self) -> bool {
        matches!(self, PathKind::MainEncoder | PathKind::MainDecoder)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub path: PathKind,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    /// Weight elements in one output channel.
    pub fn channel_len(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Channel counts and strides of the toy and full-size networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WidthConfig {
    /// Hidden channels of the main encoder/decoder.
    pub main: usize,
    /// Channels of the latent `y`.
    pub latent: usize,
    /// Channels of the hyper path and of `z`.
    pub hyper: usize,
    /// Strides of main-encoder layers 0..=3 (the decoder mirrors them).
    pub main_strides: [usize; 4],
    /// Strides of hyper-encoder layers 9 and 10 (layer 8 is always stride 1).
    pub hyper_strides: [usize; 2],
    pub negative_slope: f64,
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self {
            main: 32,
            latent: 32,
            hyper: 16,
            main_strides: [2, 2, 2, 2],
            hyper_strides: [2, 2],
            negative_slope: 0.1,
        }
    }
}

impl WidthConfig {
    /// Widths of the published mean-scale hyperprior.
    pub fn full() -> Self {
        Self {
            main: 192,
            latent: 320,
            hyper: 192,
            ..Self::default()
        }
    }

    pub fn uniform(channels: usize) -> Self {
        Self {
            main: channels,
            latent: channels,
            hyper: channels,
            ..Self::default()
        }
    }

    pub fn main_factor(&self) -> usize {
        self.main_strides.iter().product()
    }

    /// Total spatial downsampling from image to `z`.
    pub fn downsampling(&self) -> usize {
        self.main_factor() * self.hyper_strides.iter().product::<usize>()
    }

    fn validate(&self) -> Result<(), Error> {
        if self.main < 4 || self.latent < 4 || self.hyper < 4 {
            return Err(Error::InvalidWidth(format!(
                "channel counts must be >= 4, got main={} latent={} hyper={}",
                self.main, self.latent, self.hyper
            )));
        }
        if self.main_strides.iter().chain(&self.hyper_strides).any(|&s| s == 0) {
            return Err(Error::InvalidWidth(String::from("strides must be positive")));
        }
        if !(self.negative_slope >= 0.0 && self.negative_slope < 1.0) {
            return Err(Error::InvalidWidth(String::from("negative_slope must be in [0, 1)")));
        }
        Ok(())
    }

    pub fn layer_specs(&self, variant: Variant) -> Vec<LayerSpec> {
        use LayerKind::*;
        use PathKind::*;
        let (n, m, h) = (self.main, self.latent, self.hyper);
        let [s0, s1, s2, s3] = self.main_strides;
        let [h1, h2] = self.hyper_strides;
        let mut v = vec![
            (Conv, n, 3, 5, s0, MainEncoder),
            (Conv, n, n, 5, s1, MainEncoder),
            (Conv, n, n, 5, s2, MainEncoder),
            (Conv, m, n, 5, s3, MainEncoder),
            (TConv, n, m, 5, s3, MainDecoder),
            (TConv, n, n, 5, s2, MainDecoder),
            (TConv, n, n, 5, s1, MainDecoder),
            (TConv, 3, n, 5, s0, MainDecoder),
            (Conv, h, m, 3, 1, HyperEncoder),
            (Conv, h, h, 5, h1, HyperEncoder),
            (Conv, h, h, 5, h2, HyperEncoder),
        ];
        match variant {
            Variant::ScaleHyperprior => v.extend([
                (TConv, h, h, 5, h2, HyperDecoder),
                (TConv, h, h, 5, h1, HyperDecoder),
                (Conv, m, h, 3, 1, HyperDecoder),
            ]),
            Variant::MeanScaleHyperprior => {
                let mid = m * 3 / 2;
                v.extend([
                    (TConv, m, h, 5, h2, HyperDecoder),
                    (TConv, mid, m, 5, h1, HyperDecoder),
                    (Conv, 2 * m, mid, 3, 1, HyperDecoder),
                ])
            }
        }
        v.into_iter()
            .enumerate()
            .map(|(index, (kind, c_out, c_in, k, stride, path))| LayerSpec {
                index,
                kind,
                c_out,
                c_in,
                k,
                stride,
                path,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: LayerSpec,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Borrowed weights used for one forward pass; lets callers substitute
/// quantized copies without touching the model.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams<'a, T> {
    pub weight: &'a [T],
    pub bias: &'a [T],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LicModel<T> {
    pub variant: Variant,
    pub widths: WidthConfig,
    pub quality_index: usize,
    pub lambda: f64,
    pub seed: u64,
    pub layers: Vec<ConvLayer<T>>,
    pub prior: FactorizedPrior<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Additive uniform noise on the latents.
    Train,
    /// Hard rounding of the latents, reconstruction clamped to `[0, 1]`.
    Eval,
}

/// Build a model of the given variant with the quality level's λ.
pub fn build_model<T: Real>(
    variant: Variant,
    widths: WidthConfig,
    quality_index: usize,
    seed: u64,
) -> Result<LicModel<T>, Error> {
    let lambda = *LAMBDAS
        .get(quality_index)
        .ok_or(Error::InvalidQuality(quality_index))?;
    build_model_with_lambda(variant, widths, quality_index, lambda, seed)
}

pub fn build_model_with_lambda<T: Real>(
    variant: Variant,
    widths: WidthConfig,
    quality_index: usize,
    lambda: f64,
    seed: u64,
) -> Result<LicModel<T>, Error> {
    widths.validate()?;
    if quality_index >= LAMBDAS.len() {
        return Err(Error::InvalidQuality(quality_index));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .layer_specs(variant)
        .into_iter()
        .map(|spec| {
            let fan_in = match spec.kind {
                LayerKind::Conv => (spec.c_in * spec.k * spec.k) as f64,
                LayerKind::TConv => {
                    (spec.c_in * spec.k * spec.k) as f64 / (spec.stride * spec.stride) as f64
                }
            };
            let bound = libm::sqrt(6.0 / fan_in);
            let weight = (0..spec.weight_len())
                .map(|_| T::lit(rng.gen_range(-bound..bound)))
                .collect();
            ConvLayer {
                spec,
                weight,
                bias: vec![T::zero(); spec.c_out],
            }
        })
        .collect();
    let prior = FactorizedPrior::new(widths.hyper, &mut rng);
    Ok(LicModel {
        variant,
        widths,
        quality_index,
        lambda,
        seed,
        layers,
        prior,
    })
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    inputs: Vec<Tensor<T>>,
    pre_act: Vec<Option<Tensor<T>>>,
    y: Tensor<T>,
    hyper_raw: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub reconstruction: Tensor<T>,
    pub likelihoods_y: Tensor<T>,
    pub likelihoods_z: Tensor<T>,
    /// Latent fed to the decoder (noisy in train mode, integer in eval).
    pub y_hat: Tensor<T>,
    pub z_hat: Tensor<T>,
    pub cache: ForwardCache<T>,
}

#[derive(Clone, Debug)]
pub struct ModelGrads<T> {
    pub layers: Vec<ConvGrads<T>>,
    pub prior: PriorGrads<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(model: &LicModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| ConvGrads::zeros(l.weight.len(), l.bias.len()))
                .collect(),
            prior: PriorGrads::zeros_like(&model.prior),
        }
    }

    /// Flat view in the same order as [`LicModel::params_mut`].
    pub fn flat(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v.extend(self.prior.flat().map(|x| x.as_slice()));
        v
    }
}

impl<T: Real> LicModel<T> {
    pub fn layer_params(&self) -> Vec<LayerParams<'_, T>> {
        self.layers
            .iter()
            .map(|l| LayerParams {
                weight: &l.weight,
                bias: &l.bias,
            })
            .collect()
    }

    /// All trainable parameters: per layer weight then bias, then the prior.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::new();
        for l in self.layers.iter_mut() {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        v.extend(self.prior.params_mut().map(|x| x.as_mut_slice()));
        v
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        v.extend(self.prior.params().map(|x| x.as_slice()));
        v
    }

    pub fn downsampling(&self) -> usize {
        self.widths.downsampling()
    }

    fn has_activation(&self, index: usize) -> bool {
        !matches!(index, 3 | 7 | 10 | 13)
    }

    fn leaky(&self) -> T {
        T::lit(self.widths.negative_slope)
    }

    fn apply(&self, index: usize, x: &Tensor<T>, p: &LayerParams<'_, T>) -> Tensor<T> {
        let s = &self.layers[index].spec;
        match s.kind {
            LayerKind::Conv => conv2d(x, p.weight, p.bias, s.c_out, s.k, s.stride),
            LayerKind::TConv => conv_transpose2d(x, p.weight, p.bias, s.c_out, s.k, s.stride),
        }
    }

    fn run_path(
        &self,
        path: &[usize],
        mut x: Tensor<T>,
        params: &[LayerParams<'_, T>],
        act_bits: Option<u32>,
        inputs: &mut [Option<Tensor<T>>],
        pre_act: &mut [Option<Tensor<T>>],
    ) -> Tensor<T> {
        let slope = self.leaky();
        for &l in path {
            if let Some(b) = act_bits {
                x = quantize_dynamic(&x, b);
            }
            let mut out = self.apply(l, &x, &params[l]);
            inputs[l] = Some(x);
            if self.has_activation(l) {
                pre_act[l] = Some(out.clone());
                for v in out.data.iter_mut() {
                    if *v < T::zero() {
                        *v *= slope;
                    }
                }
            }
            x = out;
        }
        x
    }

    /// Forward compression pass using the model's own weights.
    pub fn forward_compress<R: Rng>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>, Error> {
        let params = self.layer_params();
        self.forward_with(batch, mode, &params, None, rng)
    }

    /// Forward pass with substituted layer parameters and optional dynamic
    /// activation quantization at `act_bits`.
    pub fn forward_with<R: Rng>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        params: &[LayerParams<'_, T>],
        act_bits: Option<u32>,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>, Error> {
        let [_, c, h, w] = batch.shape;
        let f = self.downsampling();
        if c != 3 || h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {c}x{h}x{w} must have 3 channels and spatial dims divisible by {f}"
            )));
        }
        if params.len() != self.layers.len() {
            return Err(Error::AssignmentLength {
                expected: self.layers.len(),
                got: params.len(),
            });
        }
        let nl = self.layers.len();
        let mut inputs: Vec<Option<Tensor<T>>> = vec![None; nl];
        let mut pre_act: Vec<Option<Tensor<T>>> = vec![None; nl];

        let y = self.run_path(&MAIN_ENCODER, batch.clone(), params, act_bits, &mut inputs, &mut pre_act);
        let hyper_in = match self.variant {
            Variant::ScaleHyperprior => y.map(|v| v.abs()),
            Variant::MeanScaleHyperprior => y.clone(),
        };
        let z = self.run_path(&HYPER_ENCODER, hyper_in, params, act_bits, &mut inputs, &mut pre_act);
        let z_hat = quantize_latent(&z, mode, rng);
        let likelihoods_z = Tensor::from_vec(z_hat.shape, self.prior.likelihoods(&z_hat.data, z_hat.plane()));
        let hyper_raw = self.run_path(&HYPER_DECODER, z_hat.clone(), params, act_bits, &mut inputs, &mut pre_act);
        let y_hat = match (mode, self.variant) {
            // symbols are the rounded residuals around the predicted mean
            (Mode::Eval, Variant::MeanScaleHyperprior) => {
                let mu = self.means_of(&hyper_raw, y.shape);
                let mut t = y.clone();
                for (v, &m) in t.data.iter_mut().zip(&mu.data) {
                    *v = round_half_even(*v - m) + m;
                }
                t
            }
            _ => quantize_latent(&y, mode, rng),
        };
        let likelihoods_y = self.gaussian_likelihoods(&y_hat, &hyper_raw);
        let mut reconstruction = self.run_path(&MAIN_DECODER, y_hat.clone(), params, act_bits, &mut inputs, &mut pre_act);
        if mode == Mode::Eval {
            for v in reconstruction.data.iter_mut() {
                *v = v.max(T::zero()).min(T::one());
            }
        }
        Ok(ForwardOutput {
            reconstruction,
            likelihoods_y,
            likelihoods_z,
            y_hat,
            z_hat,
            cache: ForwardCache {
                inputs: inputs.into_iter().map(|t| t.expect("every layer ran")).collect(),
                pre_act,
                y,
                hyper_raw,
            },
        })
    }

    /// `(mu, sigma)` for element `i` of `y` given the hyper decoder output.
    #[inline]
    fn gauss_params(&self, raw: &Tensor<T>, n: usize, ch: usize, p: usize) -> (T, T, usize, Option<usize>) {
        let m = self.widths.latent;
        let plane = raw.plane();
        let c_raw = raw.channels();
        let si = (n * c_raw + ch) * plane + p;
        match self.variant {
            Variant::ScaleHyperprior => (T::zero(), softplus(raw.data[si]), si, None),
            Variant::MeanScaleHyperprior => {
                let mi = (n * c_raw + m + ch) * plane + p;
                (raw.data[mi], softplus(raw.data[si]), si, Some(mi))
            }
        }
    }

    fn gaussian_likelihoods(&self, y_hat: &Tensor<T>, raw: &Tensor<T>) -> Tensor<T> {
        let [n, m, h, w] = y_hat.shape;
        debug_assert_eq!(raw.plane(), h * w);
        let mut out = Tensor::zeros(y_hat.shape);
        for b in 0..n {
            for ch in 0..m {
                for p in 0..h * w {
                    let i = (b * m + ch) * h * w + p;
                    let (mu, sigma, _, _) = self.gauss_params(raw, b, ch, p);
                    out.data[i] = gaussian_likelihood(y_hat.data[i], mu, sigma);
                }
            }
        }
        out
    }

    fn means_of(&self, raw: &Tensor<T>, shape: [usize; 4]) -> Tensor<T> {
        let [n, m, h, w] = shape;
        let mut mu = Tensor::zeros(shape);
        for b in 0..n {
            for ch in 0..m {
                for p in 0..h * w {
                    mu.data[(b * m + ch) * h * w + p] = self.gauss_params(raw, b, ch, p).0;
                }
            }
        }
        mu
    }

    /// Means of the conditional Gaussian; all zero for the scale-only variant.
    pub fn means(&self, out: &ForwardOutput<T>) -> Tensor<T> {
        self.means_of(&out.cache.hyper_raw, out.y_hat.shape)
    }

    /// Scales of the conditional Gaussian after the positivity mapping.
    pub fn scales(&self, out: &ForwardOutput<T>) -> Tensor<T> {
        let [n, m, h, w] = out.y_hat.shape;
        let mut s = Tensor::zeros([n, m, h, w]);
        for b in 0..n {
            for ch in 0..m {
                for p in 0..h * w {
                    s.data[(b * m + ch) * h * w + p] = self.gauss_params(&out.cache.hyper_raw, b, ch, p).1;
                }
            }
        }
        s
    }

    fn back_path(
        &self,
        path: &[usize],
        mut grad: Tensor<T>,
        params: &[LayerParams<'_, T>],
        cache: &ForwardCache<T>,
        grads: &mut ModelGrads<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let slope = self.leaky();
        for (pos, &l) in path.iter().enumerate().rev() {
            if let Some(pre) = &cache.pre_act[l] {
                for (g, &v) in grad.data.iter_mut().zip(&pre.data) {
                    if v < T::zero() {
                        *g *= slope;
                    }
                }
            }
            let s = &self.layers[l].spec;
            let input = &cache.inputs[l];
            let want = pos > 0 || need_input_grad;
            let gi = match s.kind {
                LayerKind::Conv => conv2d_backward(input, params[l].weight, &grad, s.k, s.stride, &mut grads.layers[l], want),
                LayerKind::TConv => {
                    conv_transpose2d_backward(input, params[l].weight, &grad, s.k, s.stride, &mut grads.layers[l], want)
                }
            };
            {
                let g = gi?;
                grad = g
            }
        }
        Some(grad)
    }

    /// Back-propagate upstream gradients on the three forward outputs into
    /// gradients w.r.t. the layer parameters used in `forward_with` and the
    /// prior. Dynamic activation quantization and latent rounding pass
    /// gradients straight through.
    pub fn backward(
        &self,
        out: &ForwardOutput<T>,
        params: &[LayerParams<'_, T>],
        grad_reconstruction: &Tensor<T>,
        grad_lik_y: &Tensor<T>,
        grad_lik_z: &Tensor<T>,
    ) -> ModelGrads<T> {
        let cache = &out.cache;
        let mut grads = ModelGrads::zeros_like(self);
        let mut dy_hat = self
            .back_path(&MAIN_DECODER, grad_reconstruction.clone(), params, cache, &mut grads, true)
            .expect("input grad requested");

        let raw = &cache.hyper_raw;
        let mut draw = Tensor::zeros(raw.shape);
        let [n, m, h, w] = out.y_hat.shape;
        for b in 0..n {
            for ch in 0..m {
                for p in 0..h * w {
                    let i = (b * m + ch) * h * w + p;
                    let (mu, sigma, si, mi) = self.gauss_params(raw, b, ch, p);
                    let (dy, dmu, dsigma) = gaussian_likelihood_backward(out.y_hat.data[i], mu, sigma, grad_lik_y.data[i]);
                    dy_hat.data[i] += dy;
                    draw.data[si] += dsigma * sigmoid(raw.data[si]);
                    if let Some(mi) = mi {
                        draw.data[mi] += dmu;
                    }
                }
            }
        }
        let mut dz = self
            .back_path(&HYPER_DECODER, draw, params, cache, &mut grads, true)
            .expect("input grad requested");
        let dz_prior = self.prior.likelihoods_backward(&out.z_hat.data, out.z_hat.plane(), &grad_lik_z.data, &mut grads.prior);
        for (a, b) in dz.data.iter_mut().zip(dz_prior) {
            *a += b;
        }
        let mut dh = self
            .back_path(&HYPER_ENCODER, dz, params, cache, &mut grads, true)
            .expect("input grad requested");
        if self.variant == Variant::ScaleHyperprior {
            for (g, &v) in dh.data.iter_mut().zip(&cache.y.data) {
                if v < T::zero() {
                    *g = -*g;
                } else if v == T::zero() {
                    *g = T::zero();
                }
            }
        }
        for (a, b) in dy_hat.data.iter_mut().zip(&dh.data) {
            *a += *b;
        }
        self.back_path(&MAIN_ENCODER, dy_hat, params, cache, &mut grads, false);
        grads
    }
}

fn quantize_latent<T: Real, R: Rng>(x: &Tensor<T>, mode: Mode, rng: &mut R) -> Tensor<T> {
    match mode {
        Mode::Eval => x.map(round_half_even),
        Mode::Train => {
            let mut out = x.clone();
            for v in out.data.iter_mut() {
                *v += T::lit(rng.gen_range(-0.5..0.5));
            }
            out
        }
    }
}

/// Quantizable layers of `model` in index order. Entropy-model parameters
/// are never included.
pub fn list_quantizable_layers<T: Real>(model: &LicModel<T>) -> Vec<LayerSpec> {
    model.layers.iter().map(|l| l.spec).collect()
}
