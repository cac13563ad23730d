//! Sensitivity tables: parallel evaluation and a persistent cache keyed on
//! model and calibration content.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fmpq_core::assign::{full_precision_rd, sensitivity, SensitivityRecord, ZetaTable};
use fmpq_core::quant::MIN_BITS;
use fmpq_core::{LicModel, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::model_hash;
use crate::data::tensor_hash;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaRow {
    pub layer: usize,
    pub bits: u32,
    pub rd_full: f64,
    pub rd_quant: f64,
    pub zeta: f64,
}

impl From<&SensitivityRecord> for ZetaRow {
    fn from(r: &SensitivityRecord) -> Self {
        Self {
            layer: r.layer,
            bits: r.bits,
            rd_full: r.rd_full,
            rd_quant: r.rd_quant,
            zeta: r.zeta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheFile {
    model_hash: String,
    calib_hash: String,
    layers: usize,
    rd_full: f64,
    rows: Vec<ZetaRow>,
}

#[derive(Clone, Debug)]
pub struct ZetaResult {
    pub table: ZetaTable,
    pub rd_full: f64,
    /// Pairs evaluated in this call (the rest came from the cache).
    pub evaluated: usize,
    pub cache_file: Option<PathBuf>,
}

impl ZetaResult {
    pub fn rows(&self) -> Vec<ZetaRow> {
        self.table.records.values().map(ZetaRow::from).collect()
    }
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn cache_path(dir: &Path, model: &str, calib: &str) -> PathBuf {
    dir.join(format!("zeta_{}_{}.json", &model[..16], &calib[..16]))
}

/// ζ for every layer and every width in `2..=b_max`. Cached pairs are
/// reused; missing ones are evaluated on `jobs` threads and written back.
pub fn zeta_table(
    model: &LicModel<f32>,
    calib: &[Tensor<f32>],
    b_max: u32,
    jobs: usize,
    cache_dir: Option<&Path>,
) -> Result<ZetaResult> {
    if calib.is_empty() {
        return Err(fmpq_core::Error::EmptyDataset.into());
    }
    let mhash = model_hash(model);
    let chash = tensor_hash(calib);
    let path = cache_dir.map(|d| cache_path(d, &mhash, &chash));

    let cached: Option<CacheFile> = match &path {
        Some(p) if p.exists() => {
            let f: CacheFile = serde_json::from_slice(&fs::read(p).at(p)?)?;
            (f.model_hash == mhash && f.calib_hash == chash).then_some(f)
        }
        _ => None,
    };
    let layers = model.layers.len();
    let rd_full = match &cached {
        Some(f) => f.rd_full,
        None => full_precision_rd(model, calib)?,
    };
    let table = Mutex::new(ZetaTable::new(layers));
    if let Some(f) = &cached {
        let mut t = table.lock().expect("poisoned");
        for r in &f.rows {
            t.insert(SensitivityRecord {
                layer: r.layer,
                bits: r.bits,
                rd_full: r.rd_full,
                rd_quant: r.rd_quant,
                zeta: r.zeta,
            });
        }
    }
    let todo: Vec<(usize, u32)> = {
        let t = table.lock().expect("poisoned");
        (0..layers)
            .flat_map(|n| (MIN_BITS..=b_max).map(move |b| (n, b)))
            .filter(|&(n, b)| t.get(n, b).is_none())
            .collect()
    };
    thread_pool(jobs)?.install(|| {
        todo.par_iter().try_for_each(|&(n, b)| -> Result<()> {
            let rec = sensitivity(model, n, b, calib, rd_full)?;
            table.lock().expect("poisoned").insert(rec);
            Ok(())
        })
    })?;
    let table = table.into_inner().expect("poisoned");

    if let (Some(p), false) = (&path, todo.is_empty()) {
        let file = CacheFile {
            model_hash: mhash,
            calib_hash: chash,
            layers,
            rd_full,
            rows: table.records.values().map(ZetaRow::from).collect(),
        };
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).at(d)?;
        }
        fs::write(p, serde_json::to_vec_pretty(&file)?).at(p)?;
    }
    Ok(ZetaResult {
        table,
        rd_full,
        evaluated: todo.len(),
        cache_file: path,
    })
}
