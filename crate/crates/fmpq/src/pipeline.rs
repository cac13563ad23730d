//! The quantize, size-check, β-adjust and fine-tune flow as library calls.

use std::collections::BTreeMap;
use std::path::Path;

use fmpq_core::assign::assign_bits_with;
use fmpq_core::model::list_quantizable_layers;
use fmpq_core::search::{adaptive_search, exhaustive_search, zeta_evaluator, SearchResult};
use fmpq_core::size::{compression_ratio, model_size_report, SizeReport};
use fmpq_core::{BitAssignment, LicModel, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::SearchMode;
use crate::error::{Error, IoContext, Result};
use crate::zeta::{zeta_table, ZetaResult};

/// Bit assignment as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFile {
    /// Layer index to bit width.
    pub bits: BTreeMap<usize, u32>,
    pub beta_used: f64,
    /// Candidate widths, inclusive bounds.
    pub candidate_set: [u32; 2],
    #[serde(default)]
    pub compression_ratio: Option<f64>,
    #[serde(default)]
    pub model_size_mb: Option<f64>,
}

impl AssignmentFile {
    pub fn new(a: &BitAssignment, size: Option<&SizeReport>) -> Self {
        Self {
            bits: a.bits.iter().copied().enumerate().collect(),
            beta_used: a.beta_used,
            candidate_set: [fmpq_core::quant::MIN_BITS, a.b_max],
            compression_ratio: size.map(|s| s.cr_vs_8bit),
            model_size_mb: size.map(|s| s.total_mb),
        }
    }

    pub fn assignment(&self) -> Result<BitAssignment> {
        let n = self.bits.len();
        if self.bits.keys().copied().ne(0..n) {
            return Err(Error::InvalidInput("assignment layer indices must be 0..N".into()));
        }
        Ok(BitAssignment::new(
            self.bits.values().copied().collect(),
            self.candidate_set[1],
            self.beta_used,
        ))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path).at(path)?)?)
    }
}

pub struct AssignOutcome {
    pub assignment: BitAssignment,
    pub zeta: ZetaResult,
    pub size: SizeReport,
}

/// Bit assignment at a fixed tolerance, with a cached, fully evaluated ζ table.
pub fn run_assign(
    model: &LicModel<f32>,
    calib: &[Tensor<f32>],
    beta: f64,
    b_max: u32,
    jobs: usize,
    cache_dir: Option<&Path>,
) -> Result<AssignOutcome> {
    let mut zeta = zeta_table(model, calib, b_max, jobs, cache_dir)?;
    let assignment = assign_bits_with(&mut zeta.table, beta, b_max)?;
    let size = model_size_report(model, &assignment);
    Ok(AssignOutcome { assignment, zeta, size })
}

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub cr_target: f64,
    pub beta_init: f64,
    pub mode: SearchMode,
    pub step: f64,
    pub max_iterations: usize,
    pub b_max: u32,
}

pub struct SearchOutcome {
    pub result: SearchResult,
    pub zeta: ZetaResult,
    pub size: SizeReport,
}

/// Search over β against a ζ table.
pub fn search_with_table(table: &mut fmpq_core::ZetaTable, model: &LicModel<f32>, opts: &SearchOptions) -> Result<SearchResult> {
    let layers = list_quantizable_layers(model);
    let eval = zeta_evaluator(table, &layers, opts.b_max);
    Ok(match opts.mode {
        SearchMode::Adaptive => adaptive_search(eval, opts.cr_target, opts.beta_init, opts.max_iterations)?,
        SearchMode::Exhaustive => exhaustive_search(eval, opts.cr_target, opts.beta_init, opts.step, opts.max_iterations)?,
    })
}

pub fn run_search(
    model: &LicModel<f32>,
    calib: &[Tensor<f32>],
    opts: &SearchOptions,
    jobs: usize,
    cache_dir: Option<&Path>,
) -> Result<SearchOutcome> {
    let mut zeta = zeta_table(model, calib, opts.b_max, jobs, cache_dir)?;
    let result = search_with_table(&mut zeta.table, model, opts)?;
    let size = model_size_report(model, &result.assignment);
    debug_assert_eq!(size.cr_vs_8bit, compression_ratio(&result.assignment, model));
    Ok(SearchOutcome { result, zeta, size })
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub beta: f64,
    pub alpha_beta: f64,
    pub cr: f64,
    pub mean_bits: f64,
}

pub fn trace_rows(r: &SearchResult) -> Vec<TraceRow> {
    r.state
        .history
        .iter()
        .map(|s| TraceRow {
            iteration: s.iteration,
            beta: s.beta,
            alpha_beta: s.alpha_beta,
            cr: s.cr,
            mean_bits: s.bits.iter().map(|&b| b as f64).sum::<f64>() / s.bits.len().max(1) as f64,
        })
        .collect()
}
