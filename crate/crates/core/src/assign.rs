//! Per-layer sensitivity and mixed-precision bit assignment.
//!
//! The sensitivity of layer `n` at `b` bits is the percentage change of the
//! calibration RD loss when only that layer's weights are quantized:
//! `ζ_n(b) = |RD_q,n(b) − RD_fp| / RD_fp × 100`. Each layer is then given the
//! lowest width whose ζ stays below the tolerance β, found by scanning down
//! from `b_max` and stopping at the first failure.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{LayerParams, LicModel, Mode};
use crate::quant::{calibrate_layer, quantize_layer, MIN_BITS};
use crate::rd::rd_loss;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::Error;

pub const DEFAULT_B_MAX: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct BitAssignment {
    pub bits: Vec<u32>,
    /// Candidate widths are `2..=b_max`.
    pub b_max: u32,
    pub beta_used: f64,
}

impl BitAssignment {
    pub fn new(bits: Vec<u32>, b_max: u32, beta_used: f64) -> Self {
        Self { bits, b_max, beta_used }
    }

    pub fn uniform(layers: usize, bits: u32, b_max: u32) -> Self {
        Self::new(vec![bits; layers], b_max.max(bits), 0.0)
    }

    pub fn candidates(&self) -> core::ops::RangeInclusive<u32> {
        MIN_BITS..=self.b_max
    }

    pub fn validate(&self, layers: usize) -> Result<(), Error> {
        if self.bits.len() != layers {
            return Err(Error::AssignmentLength {
                expected: layers,
                got: self.bits.len(),
            });
        }
        if let Some(&b) = self.bits.iter().find(|&&b| !self.candidates().contains(&b)) {
            return Err(Error::InvalidBits(b));
        }
        Ok(())
    }

    pub fn mean_bits(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().map(|&b| b as f64).sum::<f64>() / self.bits.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityRecord {
    pub layer: usize,
    pub bits: u32,
    pub rd_full: f64,
    pub rd_quant: f64,
    pub zeta: f64,
}

impl SensitivityRecord {
    pub fn new(layer: usize, bits: u32, rd_full: f64, rd_quant: f64) -> Result<Self, Error> {
        if !(rd_full > 0.0) {
            return Err(Error::DegenerateModel(rd_full));
        }
        Ok(Self {
            layer,
            bits,
            rd_full,
            rd_quant,
            zeta: ((rd_quant - rd_full) / rd_full).abs() * 100.0,
        })
    }
}

/// Anything that can report ζ for a `(layer, bits)` pair.
pub trait ZetaSource {
    fn layer_count(&self) -> usize;
    fn zeta(&mut self, layer: usize, bits: u32) -> Result<f64, Error>;
}

/// Precomputed ζ values. Lookups of missing pairs are errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ZetaTable {
    pub layers: usize,
    pub records: BTreeMap<(usize, u32), SensitivityRecord>,
}

impl ZetaTable {
    pub fn new(layers: usize) -> Self {
        Self {
            layers,
            records: BTreeMap::new(),
        }
    }

    /// Table from raw ζ values, `zetas[layer][b - 2]` for `b` in `2..=b_max`.
    pub fn from_values(zetas: &[Vec<f64>]) -> Self {
        let mut t = Self::new(zetas.len());
        for (n, row) in zetas.iter().enumerate() {
            for (i, &z) in row.iter().enumerate() {
                let b = i as u32 + MIN_BITS;
                t.records.insert(
                    (n, b),
                    SensitivityRecord {
                        layer: n,
                        bits: b,
                        rd_full: 1.0,
                        rd_quant: 1.0 + z / 100.0,
                        zeta: z,
                    },
                );
            }
        }
        t
    }

    pub fn insert(&mut self, rec: SensitivityRecord) {
        self.records.insert((rec.layer, rec.bits), rec);
    }

    pub fn get(&self, layer: usize, bits: u32) -> Option<&SensitivityRecord> {
        self.records.get(&(layer, bits))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

impl ZetaSource for ZetaTable {
    fn layer_count(&self) -> usize {
        self.layers
    }

    fn zeta(&mut self, layer: usize, bits: u32) -> Result<f64, Error> {
        self.get(layer, bits)
            .map(|r| r.zeta)
            .ok_or(Error::MissingZeta { layer, bits })
    }
}

/// Assigned width for one layer given its ζ lookup.
pub fn assign_layer(
    mut zeta: impl FnMut(u32) -> Result<f64, Error>,
    beta: f64,
    b_max: u32,
) -> Result<u32, Error> {
    let mut assigned = b_max;
    for b in (MIN_BITS..=b_max).rev() {
        if zeta(b)? >= beta {
            // last width that passed, or b_max if even that failed
            assigned = if b == b_max { b_max } else { b + 1 };
            break;
        }
        assigned = b;
    }
    Ok(assigned)
}

pub fn assign_bits_with<S: ZetaSource + ?Sized>(source: &mut S, beta: f64, b_max: u32) -> Result<BitAssignment, Error> {
    if !(beta > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("beta must be positive, got {beta}")));
    }
    if b_max < MIN_BITS {
        return Err(Error::InvalidBits(b_max));
    }
    let bits = (0..source.layer_count())
        .map(|n| assign_layer(|b| source.zeta(n, b), beta, b_max))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BitAssignment::new(bits, b_max, beta))
}

/// Mean eval-mode RD loss over `calib`, with optional substituted layer
/// parameters.
pub fn calibration_rd<T: Real>(
    model: &LicModel<T>,
    params: &[LayerParams<'_, T>],
    calib: &[Tensor<T>],
) -> Result<f64, Error> {
    if calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // eval mode draws no noise; the generator only satisfies the signature
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for x in calib {
        let out = model.forward_with(x, Mode::Eval, params, None, &mut rng)?;
        let m = rd_loss(&out.reconstruction, x, &out.likelihoods_y.data, &out.likelihoods_z.data, model.lambda)?;
        total += m.loss;
    }
    Ok(total / calib.len() as f64)
}

/// Full-precision calibration RD loss.
pub fn full_precision_rd<T: Real>(model: &LicModel<T>, calib: &[Tensor<T>]) -> Result<f64, Error> {
    calibration_rd(model, &model.layer_params(), calib)
}

/// ζ for layer `n` at `bits`, with only that layer's weights quantized
/// (freshly calibrated). The model is only borrowed.
pub fn sensitivity<T: Real>(
    model: &LicModel<T>,
    n: usize,
    bits: u32,
    calib: &[Tensor<T>],
    rd_full: f64,
) -> Result<SensitivityRecord, Error> {
    let layer = model.layers.get(n).ok_or(Error::InvalidLayer(n))?;
    if bits < MIN_BITS {
        return Err(Error::InvalidBits(bits));
    }
    let q = calibrate_layer(&layer.weight, &layer.bias, bits);
    let (w, b) = quantize_layer(&layer.weight, &layer.bias, &q);
    let mut params = model.layer_params();
    params[n] = LayerParams { weight: &w, bias: &b };
    let rd_quant = calibration_rd(model, &params, calib)?;
    SensitivityRecord::new(n, bits, rd_full, rd_quant)
}

/// ζ source backed by a model and calibration set, evaluating lazily and
/// caching every result.
pub struct ModelZeta<'a, T> {
    pub model: &'a LicModel<T>,
    pub calib: &'a [Tensor<T>],
    pub rd_full: f64,
    pub table: ZetaTable,
    pub evaluations: usize,
}

impl<'a, T: Real> ModelZeta<'a, T> {
    pub fn new(model: &'a LicModel<T>, calib: &'a [Tensor<T>]) -> Result<Self, Error> {
        let rd_full = full_precision_rd(model, calib)?;
        if !(rd_full > 0.0) {
            return Err(Error::DegenerateModel(rd_full));
        }
        Ok(Self {
            model,
            calib,
            rd_full,
            table: ZetaTable::new(model.layers.len()),
            evaluations: 0,
        })
    }

    /// Reuse a previously computed table (e.g. loaded from disk).
    pub fn with_table(mut self, table: ZetaTable) -> Self {
        self.table = table;
        self.table.layers = self.model.layers.len();
        self
    }
}

impl<T: Real> ZetaSource for ModelZeta<'_, T> {
    fn layer_count(&self) -> usize {
        self.model.layers.len()
    }

    fn zeta(&mut self, layer: usize, bits: u32) -> Result<f64, Error> {
        if let Some(r) = self.table.get(layer, bits) {
            return Ok(r.zeta);
        }
        let rec = sensitivity(self.model, layer, bits, self.calib, self.rd_full)?;
        self.evaluations += 1;
        self.table.insert(rec);
        Ok(rec.zeta)
    }
}

/// Bit assignment for `model` on `calib` at tolerance `beta` (percent).
pub fn assign_bits<T: Real>(
    model: &LicModel<T>,
    calib: &[Tensor<T>],
    beta: f64,
    b_max: u32,
) -> Result<BitAssignment, Error> {
    let mut source = ModelZeta::new(model, calib)?;
    assign_bits_with(&mut source, beta, b_max)
}
