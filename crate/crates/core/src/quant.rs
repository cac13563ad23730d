//! Uniform affine quantization.
//!
//! `x̂ = s · (round(clip(x/s + z, 0, 2^b)) − z)`, with ties rounded to even.
//! The clip range is `[0, 2^b]` inclusive, which gives `2^b + 1` levels.
//!
//! Weights use static per-output-channel parameters; a channel covers the
//! `c_in·k²` kernel weights plus that channel's bias. Activations use
//! dynamic per-tensor parameters recomputed from every sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::assign::BitAssignment;
use crate::model::{LayerParams, LicModel, Mode};
use crate::real::{round_half_even, Real};
use crate::tensor::{min_max, Tensor};
use crate::Error;

/// Floor applied to every scale.
pub const SCALE_EPS: f64 = 1e-8;
pub const MIN_BITS: u32 = 2;
pub const DEFAULT_LEAK: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    PerChannel,
    PerTensor,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::PerChannel => "per-channel",
            Granularity::PerTensor => "per-tensor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantParams<T> {
    /// One entry per channel, or a single entry for per-tensor.
    pub scale: Vec<T>,
    pub zero_point: Vec<T>,
    pub bits: u32,
    pub mode: QuantMode,
    pub granularity: Granularity,
}

impl<T: Real> QuantParams<T> {
    pub fn per_tensor(scale: T, zero_point: T, bits: u32) -> Self {
        Self {
            scale: vec![scale],
            zero_point: vec![zero_point],
            bits,
            mode: QuantMode::Static,
            granularity: Granularity::PerTensor,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Upper clip bound `2^b`.
    pub fn levels(&self) -> T {
        T::lit((1u64 << self.bits) as f64)
    }
}

/// Scalar form of the quantizer.
#[inline]
pub fn quantize_scalar<T: Real>(x: T, s: T, z: T, bits: u32) -> T {
    let top = T::lit((1u64 << bits) as f64);
    let u = (x / s + z).max(T::zero()).min(top);
    s * (round_half_even(u) - z)
}

/// Apply `params` to `x`. For per-channel parameters `x` is split into
/// `params.channels()` equal contiguous blocks.
pub fn quantize_affine<T: Real>(x: &[T], params: &QuantParams<T>) -> Vec<T> {
    let ch = params.channels();
    assert!(ch > 0 && x.len().is_multiple_of(ch), "tensor not divisible into channels");
    let block = x.len() / ch;
    let mut out = Vec::with_capacity(x.len());
    for c in 0..ch {
        let (s, z) = (params.scale[c], params.zero_point[c]);
        out.extend(x[c * block..(c + 1) * block].iter().map(|&v| quantize_scalar(v, s, z, params.bits)));
    }
    out
}

/// Min-max parameters for one range: `s = (max − min) / 2^b`,
/// `z = round(−min / s)`. A zero-width range gets `s = ε, z = 0`.
pub fn min_max_params<T: Real>(lo: T, hi: T, bits: u32) -> (T, T) {
    let s = (hi - lo) / T::lit((1u64 << bits) as f64);
    if !(s > T::lit(SCALE_EPS)) {
        return (T::lit(SCALE_EPS), T::zero());
    }
    (s, round_half_even(-lo / s))
}

/// Calibrate static parameters from `x`. `channels` is ignored for
/// per-tensor granularity.
pub fn calibrate_params<T: Real>(x: &[T], bits: u32, granularity: Granularity, channels: usize) -> QuantParams<T> {
    assert!(!x.is_empty(), "cannot calibrate on an empty tensor");
    let ch = match granularity {
        Granularity::PerChannel => channels,
        Granularity::PerTensor => 1,
    };
    assert!(ch > 0 && x.len().is_multiple_of(ch));
    let block = x.len() / ch;
    let (scale, zero_point) = (0..ch)
        .map(|c| {
            let (lo, hi) = min_max(&x[c * block..(c + 1) * block]);
            min_max_params(lo, hi, bits)
        })
        .unzip();
    QuantParams {
        scale,
        zero_point,
        bits,
        mode: QuantMode::Static,
        granularity,
    }
}

/// Per-sample dynamic per-tensor quantization of an activation tensor.
pub fn quantize_dynamic<T: Real>(x: &Tensor<T>, bits: u32) -> Tensor<T> {
    let mut out = x.clone();
    for n in 0..x.batch() {
        let sample = out.sample_mut(n);
        let (lo, hi) = min_max(sample);
        let (s, z) = min_max_params(lo, hi, bits);
        for v in sample.iter_mut() {
            *v = quantize_scalar(*v, s, z, bits);
        }
    }
    out
}

/// Dynamic parameters that [`quantize_dynamic`] would use for one sample.
pub fn dynamic_params<T: Real>(sample: &[T], bits: u32) -> QuantParams<T> {
    let (lo, hi) = min_max(sample);
    let (s, z) = min_max_params(lo, hi, bits);
    QuantParams {
        scale: vec![s],
        zero_point: vec![z],
        bits,
        mode: QuantMode::Dynamic,
        granularity: Granularity::PerTensor,
    }
}

/// Output of the quantizer and its surrogate partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FakeQuantGrad<T> {
    pub value: T,
    pub dx: T,
    pub ds: T,
    pub dz: T,
}

/// Forward value plus surrogate gradients.
///
/// Rounding is treated as identity. Inside `[0, 2^b]` the clip passes the
/// gradient unchanged; outside it the slope is `leak`. The scale gradient
/// flows through both the `x/s` and the outer `s ·` occurrences.
#[inline]
pub fn fake_quant_forward_backward<T: Real>(x: T, s: T, z: T, bits: u32, leak: T) -> FakeQuantGrad<T> {
    let top = T::lit((1u64 << bits) as f64);
    let u = x / s + z;
    let inside = u >= T::zero() && u <= top;
    let q = round_half_even(u.max(T::zero()).min(top));
    let slope = if inside { T::one() } else { leak };
    FakeQuantGrad {
        value: s * (q - z),
        dx: slope,
        ds: q - z - slope * x / s,
        dz: s * (slope - T::one()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel<T> {
    pub base: LicModel<T>,
    /// One per quantizable layer, per-channel static.
    pub weight_quantizers: Vec<QuantParams<T>>,
    /// One per quantizable layer, applied to that layer's input.
    pub activation_quantizers: Vec<QuantParams<T>>,
    pub bit_assignment: BitAssignment,
    pub activation_bits: u32,
    pub leak: f64,
}

/// Weights and bias of one channel block laid out as `[w..., b]`.
fn channel_blocks<T: Real>(weight: &[T], bias: &[T]) -> Vec<T> {
    let c_out = bias.len();
    let per = weight.len() / c_out;
    let mut v = Vec::with_capacity(weight.len() + c_out);
    for c in 0..c_out {
        v.extend_from_slice(&weight[c * per..(c + 1) * per]);
        v.push(bias[c]);
    }
    v
}

/// Calibrate per-channel weight parameters for one layer at `bits`.
pub fn calibrate_layer<T: Real>(weight: &[T], bias: &[T], bits: u32) -> QuantParams<T> {
    calibrate_params(&channel_blocks(weight, bias), bits, Granularity::PerChannel, bias.len())
}

/// Quantize one layer's weights and bias with per-channel `params`.
pub fn quantize_layer<T: Real>(weight: &[T], bias: &[T], params: &QuantParams<T>) -> (Vec<T>, Vec<T>) {
    let c_out = bias.len();
    let per = weight.len() / c_out;
    let mut w = Vec::with_capacity(weight.len());
    let mut b = Vec::with_capacity(c_out);
    for c in 0..c_out {
        let (s, z) = (params.scale[c], params.zero_point[c]);
        w.extend(weight[c * per..(c + 1) * per].iter().map(|&v| quantize_scalar(v, s, z, params.bits)));
        b.push(quantize_scalar(bias[c], s, z, params.bits));
    }
    (w, b)
}

/// Attach per-layer weight quantizers (calibrated from the current weights)
/// and dynamic activation quantizers to `model`.
///
/// `calib_batch` is accepted so callers can attach with the same inputs they
/// calibrated on; weight parameters depend only on weights, and activation
/// parameters are recomputed per input, so it only has to be well-formed.
pub fn attach_quantizers<T: Real>(
    model: LicModel<T>,
    assignment: &BitAssignment,
    activation_bits: u32,
    calib_batch: Option<&Tensor<T>>,
) -> Result<QuantizedModel<T>, Error> {
    if assignment.bits.len() != model.layers.len() {
        return Err(Error::AssignmentLength {
            expected: model.layers.len(),
            got: assignment.bits.len(),
        });
    }
    if !(MIN_BITS..=32).contains(&activation_bits) {
        return Err(Error::InvalidBits(activation_bits));
    }
    if let Some(b) = calib_batch {
        if b.channels() != 3 || b.is_empty() {
            return Err(Error::ShapeMismatch(alloc::string::String::from(
                "calibration batch must be a non-empty 3-channel tensor",
            )));
        }
    }
    let mut weight_quantizers = Vec::with_capacity(model.layers.len());
    for (layer, &bits) in model.layers.iter().zip(&assignment.bits) {
        if !(MIN_BITS..=32).contains(&bits) {
            return Err(Error::InvalidBits(bits));
        }
        weight_quantizers.push(calibrate_layer(&layer.weight, &layer.bias, bits));
    }
    let activation_quantizers = (0..model.layers.len())
        .map(|_| QuantParams {
            scale: vec![T::one()],
            zero_point: vec![T::zero()],
            bits: activation_bits,
            mode: QuantMode::Dynamic,
            granularity: Granularity::PerTensor,
        })
        .collect();
    Ok(QuantizedModel {
        base: model,
        weight_quantizers,
        activation_quantizers,
        bit_assignment: assignment.clone(),
        activation_bits,
        leak: DEFAULT_LEAK,
    })
}

/// Fake-quantized copies of every layer's weights and bias.
#[derive(Clone, Debug)]
pub struct QuantizedWeights<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> QuantizedWeights<T> {
    pub fn params(&self) -> Vec<LayerParams<'_, T>> {
        self.layers
            .iter()
            .map(|(w, b)| LayerParams { weight: w, bias: b })
            .collect()
    }
}

/// Gradients w.r.t. per-channel scale and zero point of one layer.
#[derive(Clone, Debug)]
pub struct QuantGrads<T> {
    pub scale: Vec<T>,
    pub zero_point: Vec<T>,
}

impl<T: Real> QuantizedModel<T> {
    pub fn quantized_weights(&self) -> QuantizedWeights<T> {
        QuantizedWeights {
            layers: self
                .base
                .layers
                .iter()
                .zip(&self.weight_quantizers)
                .map(|(l, q)| quantize_layer(&l.weight, &l.bias, q))
                .collect(),
        }
    }

    /// Eval- or train-mode forward with fake-quantized weights and dynamic
    /// activation quantization.
    pub fn forward<R: rand::Rng>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<crate::model::ForwardOutput<T>, Error> {
        let qw = self.quantized_weights();
        self.base
            .forward_with(batch, mode, &qw.params(), Some(self.activation_bits), rng)
    }

    /// Chain `dL/dŵ` (from the network backward pass) through the weight
    /// quantizers. Returns per layer `(dL/dw, dL/db, scale/zero grads)`.
    pub fn quantizer_backward(
        &self,
        grad_wq: &[crate::conv::ConvGrads<T>],
    ) -> Vec<(Vec<T>, Vec<T>, QuantGrads<T>)> {
        let leak = T::lit(self.leak);
        self.base
            .layers
            .iter()
            .zip(&self.weight_quantizers)
            .zip(grad_wq)
            .map(|((layer, q), g)| {
                let c_out = layer.bias.len();
                let per = layer.weight.len() / c_out;
                let mut dw = vec![T::zero(); layer.weight.len()];
                let mut db = vec![T::zero(); c_out];
                let mut ds = vec![T::zero(); c_out];
                let mut dz = vec![T::zero(); c_out];
                for c in 0..c_out {
                    let (s, z) = (q.scale[c], q.zero_point[c]);
                    for i in c * per..(c + 1) * per {
                        let fq = fake_quant_forward_backward(layer.weight[i], s, z, q.bits, leak);
                        dw[i] = g.weight[i] * fq.dx;
                        ds[c] += g.weight[i] * fq.ds;
                        dz[c] += g.weight[i] * fq.dz;
                    }
                    let fq = fake_quant_forward_backward(layer.bias[c], s, z, q.bits, leak);
                    db[c] = g.bias[c] * fq.dx;
                    ds[c] += g.bias[c] * fq.ds;
                    dz[c] += g.bias[c] * fq.dz;
                }
                (dw, db, QuantGrads { scale: ds, zero_point: dz })
            })
            .collect()
    }
}
