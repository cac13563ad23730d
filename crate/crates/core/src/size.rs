//! Storage accounting for quantized layers.
//!
//! A layer of shape `(c_out, c_in, k, k)` at `b` bits costs
//! `(c_out·c_in·k² + c_out)·b + c_out·2·32` bits: weights and bias at `b`
//! bits plus a 32-bit scale and zero point per output channel. Parameters
//! that are never quantized (the factorized prior) are reported separately
//! at 32 bits each and do not enter the compression ratio.

use alloc::vec::Vec;

use crate::assign::BitAssignment;
use crate::model::{LayerSpec, LicModel};
use crate::real::Real;

pub const BITS_PER_MB: f64 = 8.0 * 1024.0 * 1024.0;
/// Width of the reference all-same-width model used as the CR denominator.
pub const REFERENCE_BITS: u32 = 8;

pub fn layer_size_bits(layer: &LayerSpec, bits: u32) -> u64 {
    let (c_out, c_in, k) = (layer.c_out as u64, layer.c_in as u64, layer.k as u64);
    (c_out * c_in * k * k + c_out) * bits as u64 + c_out * 2 * 32
}

pub fn bits_to_mb(bits: u64) -> f64 {
    bits as f64 / BITS_PER_MB
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeReport {
    pub per_layer_bits: Vec<u64>,
    pub total_bits: u64,
    pub total_mb: f64,
    pub cr_vs_8bit: f64,
    /// Unquantized entropy-model parameters at 32 bits each.
    pub non_quantized_bits: u64,
}

fn total_bits(layers: &[LayerSpec], bits: &[u32]) -> u64 {
    assert_eq!(layers.len(), bits.len(), "assignment length must match layer count");
    layers.iter().zip(bits).map(|(l, &b)| layer_size_bits(l, b)).sum()
}

/// Size of the mixed assignment over the all-8-bit size of the same layers.
pub fn compression_ratio_for(layers: &[LayerSpec], bits: &[u32]) -> f64 {
    let reference = total_bits(layers, &alloc::vec![REFERENCE_BITS; layers.len()]);
    if reference == 0 {
        return 1.0;
    }
    total_bits(layers, bits) as f64 / reference as f64
}

pub fn compression_ratio<T: Real>(assignment: &BitAssignment, model: &LicModel<T>) -> f64 {
    let specs: Vec<LayerSpec> = model.layers.iter().map(|l| l.spec).collect();
    compression_ratio_for(&specs, &assignment.bits)
}

pub fn size_report_for(layers: &[LayerSpec], bits: &[u32], non_quantized_params: usize) -> SizeReport {
    let per_layer_bits: Vec<u64> = layers.iter().zip(bits).map(|(l, &b)| layer_size_bits(l, b)).collect();
    let total_bits = per_layer_bits.iter().sum();
    SizeReport {
        total_mb: bits_to_mb(total_bits),
        cr_vs_8bit: compression_ratio_for(layers, bits),
        per_layer_bits,
        total_bits,
        non_quantized_bits: non_quantized_params as u64 * 32,
    }
}

pub fn model_size_report<T: Real>(model: &LicModel<T>, assignment: &BitAssignment) -> SizeReport {
    let specs: Vec<LayerSpec> = model.layers.iter().map(|l| l.spec).collect();
    size_report_for(&specs, &assignment.bits, model.prior.param_count())
}
