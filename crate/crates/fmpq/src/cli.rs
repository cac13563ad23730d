//! Command-line interface. Every command writes into a run directory with a
//! `manifest.json` that embeds the full configuration used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fmpq_core::metrics::{bd_rate_with, bit_distribution_report, BdInterpolation, RDCurve, RdPoint};
use fmpq_core::model::build_model;
use fmpq_core::quant::attach_quantizers;
use fmpq_core::size::model_size_report;
use fmpq_core::train::{qat_finetune_with, train_baseline_with, EpochStats, TrainConfig};
use fmpq_core::{BitAssignment, LicModel, QuantizedModel};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_model, save_quantized, Checkpoint, Metadata};
use crate::config::{RunConfig, SearchMode};
use crate::data::{load_image_dataset, select_calibration, Split};
use crate::error::{Error, IoContext, Result};
use crate::eval::{evaluate_model, Codec};
use crate::manifest::Manifest;
use crate::pipeline::{run_assign, run_search, trace_rows, AssignmentFile, SearchOptions};
use crate::report::{bit_distribution_svg, loss_svg, rd_curves_svg, write_csv, write_json, write_svg};
use crate::synth::write_toy_dataset;
use crate::zeta::ZetaRow;

#[derive(Debug, Parser)]
#[command(name = "fmpq", version, about = "Mixed-precision quantization of learned image codecs")]
pub struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sensitivity and evaluation (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a full-precision model for one or all quality levels.
    TrainBaseline(TrainArgs),
    /// Per-layer bit assignment at a fixed tolerance.
    Assign(AssignArgs),
    /// Search the tolerance for a target compression ratio.
    Search(SearchArgs),
    /// Quantization-aware fine-tuning.
    Qat(QatArgs),
    /// RD curves, BD-rate and bit-width tables.
    Eval(EvalArgs),
    /// Write a seeded synthetic image set.
    GenToyData(GenArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quality: Option<usize>,
    /// Train all six quality levels.
    #[arg(long)]
    pub all_qualities: bool,
    /// Continue from a checkpoint written by this command.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibArgs {
    /// Calibration image directory (default: the configured one).
    #[arg(long)]
    pub calib_dir: Option<PathBuf>,
    /// Directory of the persistent sensitivity cache.
    #[arg(long, default_value = "fmpq-cache")]
    pub cache_dir: PathBuf,
    /// Disable the sensitivity cache.
    #[arg(long)]
    pub no_cache: bool,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub calib: CalibArgs,
    /// Tolerance in percent.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub bmax: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QatFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_weights: Option<f64>,
    #[arg(long)]
    pub lr_quant: Option<f64>,
    #[arg(long)]
    pub activation_bits: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub calib: CalibArgs,
    #[arg(long)]
    pub cr_target: Option<f64>,
    #[arg(long)]
    pub beta_init: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<SearchMode>,
    /// Step of the exhaustive sweep.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub bmax: Option<u32>,
    /// Fine-tune the found assignment when the search converges.
    #[arg(long)]
    pub then_qat: bool,
    /// Training images for --then-qat.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub qat: QatFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QatArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Assignment JSON; optional when the checkpoint is already quantized.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    pub qat: QatFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoints forming one curve labelled `model`.
    pub checkpoints: Vec<PathBuf>,
    /// Labelled curve, `LABEL=CKPT[,CKPT...]`; repeatable.
    #[arg(long)]
    pub curve: Vec<String>,
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Label of the reference curve (default: the first curve).
    #[arg(long)]
    pub reference: Option<String>,
    /// Piecewise cubic Hermite interpolation instead of the cubic fit.
    #[arg(long)]
    pub pchip: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse arguments and run; returns the process exit status.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::TrainBaseline(a) => train_cmd(cfg, a),
        Command::Assign(a) => assign_cmd(cfg, a),
        Command::Search(a) => search_cmd(cfg, a),
        Command::Qat(a) => qat_cmd(cfg, a),
        Command::Eval(a) => eval_cmd(cfg, a),
        Command::GenToyData(a) => gen_cmd(cfg, a),
    }
}

fn run_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).at(p)
}

fn print_epoch(prefix: &str, s: &EpochStats) {
    println!(
        "{prefix} epoch {:>4}  rate {:.4} bpp  mse {:.3}  loss {:.4}",
        s.epoch, s.rate_bpp, s.distortion, s.loss
    );
}

fn meta(cfg: &RunConfig, epoch: Option<usize>) -> Metadata {
    Metadata {
        epoch,
        config: Some(cfg.to_json()),
    }
}

fn train_cmd(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(q) = a.quality {
        cfg.quality = q;
    }
    if let Some(d) = &a.train_dir {
        cfg.data.train_dir = d.clone();
    }
    if a.all_qualities && a.resume.is_some() {
        return Err(Error::InvalidInput("--resume applies to a single quality level".into()));
    }
    let qualities: Vec<usize> = if a.all_qualities {
        (0..fmpq_core::model::LAMBDAS.len()).collect()
    } else {
        vec![cfg.quality]
    };
    run_dir(&a.out)?;
    let data = load_image_dataset(&cfg.train_dir(), cfg.data.crop_size, Split::Train)?;
    let mut manifest = Manifest::new("train-baseline", cfg.seed, cfg.to_json());
    manifest.result("train_images", data.images.len());
    manifest.result("skipped_images", data.skipped);

    let mut failure = None;
    for q in qualities {
        let mut tc = cfg.baseline_train_config();
        let model: LicModel<f32> = match &a.resume {
            Some(p) => {
                let ck: Checkpoint<f32> = load_checkpoint(p)?;
                if ck.is_quantized() {
                    return Err(Error::InvalidInput("cannot resume baseline training from a quantized checkpoint".into()));
                }
                tc.start_epoch = ck.meta.epoch.map_or(0, |e| e + 1);
                ck.model
            }
            None => build_model(cfg.variant(), cfg.widths(), q, cfg.seed)?,
        };
        let tag = format!("q{}", model.quality_index);
        let out = train_baseline_with(model, &data, &tc, &mut |s| print_epoch(&tag, s))?;
        let last_epoch = out.history.last().map(|s| s.epoch).or(tc.start_epoch.checked_sub(1));
        let ckpt = a.out.join(format!("baseline_{tag}.ckpt"));
        save_model(&ckpt, &out.model, &meta(&cfg, last_epoch))?;
        manifest.output(&ckpt);
        let csv = a.out.join(format!("loss_{tag}.csv"));
        write_csv(&csv, &out.history.iter().map(EpochRow::from).collect::<Vec<_>>())?;
        manifest.output(&csv);
        if !out.history.is_empty() {
            let svg = a.out.join(format!("loss_{tag}.svg"));
            let losses: Vec<f64> = out.history.iter().map(|s| s.loss).collect();
            write_svg(&svg, &loss_svg(&format!("baseline {tag}"), &losses))?;
            manifest.output(&svg);
        }
        if let Some(e) = out.diverged_at {
            failure = Some(e);
            break;
        }
    }
    finish(manifest, &a.out, failure.map(Error::Diverged))
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    rate_bpp: f64,
    mse: f64,
    loss: f64,
}

impl From<&EpochStats> for EpochRow {
    fn from(s: &EpochStats) -> Self {
        Self {
            epoch: s.epoch,
            rate_bpp: s.rate_bpp,
            mse: s.distortion,
            loss: s.loss,
        }
    }
}

fn finish(mut manifest: Manifest, dir: &Path, failure: Option<Error>) -> Result<()> {
    manifest.status = match &failure {
        None => "ok".into(),
        Some(e) => e.to_string(),
    };
    manifest.write(dir)?;
    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

fn load_float(path: &Path) -> Result<LicModel<f32>> {
    let ck: Checkpoint<f32> = load_checkpoint(path)?;
    Ok(ck.model)
}

fn calibration(cfg: &RunConfig, a: &CalibArgs, manifest: &mut Manifest) -> Result<Vec<fmpq_core::Tensor<f32>>> {
    let dir = a.calib_dir.clone().map_or_else(|| cfg.calib_dir(), |d| cfg.resolve(&d));
    let set = select_calibration(&dir, cfg.data.calib_count, cfg.data.calib_seed)?;
    manifest.result("calibration", &set);
    set.load(cfg.data.crop_size)
}

fn cache(a: &CalibArgs) -> Option<&Path> {
    (!a.no_cache).then_some(a.cache_dir.as_path())
}

fn write_zeta(dir: &Path, rows: &[ZetaRow], manifest: &mut Manifest) -> Result<()> {
    let p = dir.join("zeta.csv");
    write_csv(&p, rows)?;
    manifest.output(p);
    Ok(())
}

fn assign_cmd(mut cfg: RunConfig, a: AssignArgs) -> Result<()> {
    if let Some(b) = a.beta {
        cfg.assign.beta = b;
    }
    if let Some(b) = a.bmax {
        cfg.assign.b_max = b;
    }
    run_dir(&a.out)?;
    let model = load_float(&a.checkpoint)?;
    let mut manifest = Manifest::new("assign", cfg.seed, cfg.to_json());
    let calib = calibration(&cfg, &a.calib, &mut manifest)?;
    let o = run_assign(&model, &calib, cfg.assign.beta, cfg.assign.b_max, cfg.jobs, cache(&a.calib))?;
    write_zeta(&a.out, &o.zeta.rows(), &mut manifest)?;
    let p = a.out.join("assignment.json");
    write_json(&p, &AssignmentFile::new(&o.assignment, Some(&o.size)))?;
    manifest.output(p);
    manifest.result("bits", &o.assignment.bits);
    manifest.result("compression_ratio", o.size.cr_vs_8bit);
    manifest.result("zeta_evaluations", o.zeta.evaluated);
    println!("bits {:?}  CR {:.4}", o.assignment.bits, o.size.cr_vs_8bit);
    finish(manifest, &a.out, None)
}

fn apply_qat_flags(cfg: &mut RunConfig, f: &QatFlags) {
    if let Some(e) = f.epochs {
        cfg.qat.epochs = e;
    }
    if let Some(l) = f.lr_weights {
        cfg.qat.lr_weights = l;
    }
    if let Some(l) = f.lr_quant {
        cfg.qat.lr_quant = l;
    }
    if let Some(b) = f.activation_bits {
        cfg.qat.activation_bits = b;
    }
}

fn search_cmd(mut cfg: RunConfig, a: SearchArgs) -> Result<()> {
    let s = &mut cfg.search;
    if let Some(v) = a.cr_target {
        s.cr_target = v;
    }
    if let Some(v) = a.beta_init {
        s.beta_init = v;
    }
    if let Some(v) = a.mode {
        s.mode = v;
    }
    if let Some(v) = a.step {
        s.step = v;
    }
    if let Some(v) = a.max_iterations {
        s.max_iterations = v;
    }
    if let Some(v) = a.bmax {
        cfg.assign.b_max = v;
    }
    apply_qat_flags(&mut cfg, &a.qat);
    run_dir(&a.out)?;
    let model = load_float(&a.checkpoint)?;
    let mut manifest = Manifest::new("search", cfg.seed, cfg.to_json());
    let calib = calibration(&cfg, &a.calib, &mut manifest)?;
    let opts = SearchOptions {
        cr_target: cfg.search.cr_target,
        beta_init: cfg.search.beta_init,
        mode: cfg.search.mode,
        step: cfg.search.step,
        max_iterations: cfg.search.max_iterations,
        b_max: cfg.assign.b_max,
    };
    let o = run_search(&model, &calib, &opts, cfg.jobs, cache(&a.calib))?;
    write_zeta(&a.out, &o.zeta.rows(), &mut manifest)?;
    let trace = a.out.join("trace.csv");
    write_csv(&trace, &trace_rows(&o.result))?;
    manifest.output(&trace);
    let p = a.out.join("assignment.json");
    write_json(&p, &AssignmentFile::new(&o.result.assignment, Some(&o.size)))?;
    manifest.output(&p);
    manifest.result("iterations", o.result.iterations());
    manifest.result("converged", o.result.converged);
    manifest.result("beta", o.result.state.beta);
    manifest.result("compression_ratio", o.size.cr_vs_8bit);
    manifest.result("model_size_mb", o.size.total_mb);
    println!(
        "{} after {} iterations: beta {:.4}  CR {:.4}  bits {:?}",
        if o.result.converged { "converged" } else { "not converged" },
        o.result.iterations(),
        o.result.state.beta,
        o.size.cr_vs_8bit,
        o.result.assignment.bits
    );
    if !o.result.converged {
        let e = Error::NonConvergence {
            iterations: o.result.iterations(),
            cr: o.size.cr_vs_8bit,
        };
        return finish(manifest, &a.out, Some(e));
    }
    if a.then_qat {
        let dir = a.data_dir.clone().map_or_else(|| cfg.train_dir(), |d| cfg.resolve(&d));
        let q = attach_quantizers(model, &o.result.assignment, cfg.qat.activation_bits, None)?;
        if let Err(e) = qat_into(&cfg, q, &dir, &a.out, &mut manifest) {
            return finish(manifest, &a.out, Some(e));
        }
    }
    finish(manifest, &a.out, None)
}

/// Fine-tune `q` on `data_dir`, writing `qat.ckpt` and the loss history.
fn qat_into(cfg: &RunConfig, mut q: QuantizedModel<f32>, data_dir: &Path, out: &Path, manifest: &mut Manifest) -> Result<()> {
    q.leak = cfg.qat.leak;
    let data = load_image_dataset(data_dir, cfg.data.crop_size, Split::Train)?;
    let tc: TrainConfig = cfg.qat_train_config();
    let r = qat_finetune_with(q, &data, &tc, &mut |s| print_epoch("qat", s))?;
    let ckpt = out.join("qat.ckpt");
    save_quantized(&ckpt, &r.model, &meta(cfg, r.history.last().map(|s| s.epoch)))?;
    manifest.output(&ckpt);
    let csv = out.join("qat_loss.csv");
    write_csv(&csv, &r.history.iter().map(EpochRow::from).collect::<Vec<_>>())?;
    manifest.output(csv);
    let size = model_size_report(&r.model.base, &r.model.bit_assignment);
    manifest.result("qat_model_size_mb", size.total_mb);
    manifest.result("qat_bits", &r.model.bit_assignment.bits);
    match r.diverged_at {
        Some(e) => Err(Error::Diverged(e)),
        None => Ok(()),
    }
}

fn qat_cmd(mut cfg: RunConfig, a: QatArgs) -> Result<()> {
    apply_qat_flags(&mut cfg, &a.qat);
    run_dir(&a.out)?;
    let ck: Checkpoint<f32> = load_checkpoint(&a.checkpoint)?;
    let q = match (&a.assignment, ck.is_quantized()) {
        (Some(p), _) => {
            let asg = AssignmentFile::load(p)?.assignment()?;
            attach_quantizers(ck.model, &asg, cfg.qat.activation_bits, None)?
        }
        (None, true) => ck.into_quantized()?,
        (None, false) => return Err(Error::InvalidInput("--assignment is required for a float checkpoint".into())),
    };
    let mut manifest = Manifest::new("qat", cfg.seed, cfg.to_json());
    let dir = a.data_dir.clone().map_or_else(|| cfg.train_dir(), |d| cfg.resolve(&d));
    let r = qat_into(&cfg, q, &dir, &a.out, &mut manifest);
    finish(manifest, &a.out, r.err())
}

/// One evaluated checkpoint.
#[derive(Clone, Debug, Serialize)]
struct RdRow {
    curve: String,
    checkpoint: String,
    quality: usize,
    lambda: f64,
    bpp: f64,
    psnr: f64,
    loss: f64,
    model_size_mb: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct BdRow {
    method: String,
    reference: String,
    dataset: String,
    bd_rate_percent: Option<f64>,
    model_size_mb: Option<f64>,
    note: Option<String>,
}

fn parse_curves(a: &EvalArgs) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut curves = Vec::new();
    if !a.checkpoints.is_empty() {
        curves.push(("model".to_string(), a.checkpoints.clone()));
    }
    for spec in &a.curve {
        let (label, list) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("--curve expects LABEL=CKPT[,CKPT...], got `{spec}`")))?;
        curves.push((label.to_string(), list.split(',').filter(|s| !s.is_empty()).map(PathBuf::from).collect()));
    }
    if curves.is_empty() {
        return Err(Error::InvalidInput("no checkpoints given".into()));
    }
    Ok(curves)
}

fn eval_cmd(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let curves = parse_curves(&a)?;
    run_dir(&a.out)?;
    let image_dir = a.image_dir.clone().map_or_else(|| cfg.eval_dir(), |d| cfg.resolve(&d));
    let dataset = image_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut manifest = Manifest::new("eval", cfg.seed, cfg.to_json());
    let mut rows = Vec::new();
    let mut rd_curves = Vec::new();
    let mut sizes: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut distributions = Vec::new();
    for (label, paths) in &curves {
        let mut points = Vec::new();
        let mut assignments: BTreeMap<usize, BitAssignment> = BTreeMap::new();
        for p in paths {
            let ck: Checkpoint<f32> = load_checkpoint(p)?;
            let (quality, lambda) = (ck.model.quality_index, ck.model.lambda);
            let (summary, size) = if ck.is_quantized() {
                let q = ck.into_quantized()?;
                let size = model_size_report(&q.base, &q.bit_assignment).total_mb;
                assignments.insert(quality, q.bit_assignment.clone());
                (evaluate_model(&q as &dyn Codec, &image_dir, cfg.jobs)?, Some(size))
            } else {
                (evaluate_model(&ck.model as &dyn Codec, &image_dir, cfg.jobs)?, None)
            };
            if let Some(s) = size {
                sizes.entry(label.clone()).or_default().push(s);
            }
            println!(
                "{label}  q{quality}  {:.4} bpp  {:.3} dB  loss {:.4}",
                summary.mean_bpp, summary.mean_psnr_db, summary.mean_loss
            );
            points.push(RdPoint {
                bpp: summary.mean_bpp,
                psnr_db: summary.mean_psnr_db,
            });
            rows.push(RdRow {
                curve: label.clone(),
                checkpoint: p.display().to_string(),
                quality,
                lambda,
                bpp: summary.mean_bpp,
                psnr: summary.mean_psnr_db,
                loss: summary.mean_loss,
                model_size_mb: size,
            });
        }
        if !assignments.is_empty() {
            distributions.push((label.clone(), bit_distribution_report(&assignments)?));
        }
        match RDCurve::new(label.clone(), points) {
            Ok(c) => rd_curves.push(c),
            Err(e) => log::warn!("curve `{label}` left out of BD-rate: {e}"),
        }
    }
    let csv = a.out.join("rd.csv");
    write_csv(&csv, &rows)?;
    manifest.output(&csv);

    let reference = a.reference.clone().unwrap_or_else(|| curves[0].0.clone());
    let method = if a.pchip { BdInterpolation::Pchip } else { BdInterpolation::Cubic };
    let mut bd = Vec::new();
    if let Some(rc) = rd_curves.iter().find(|c| c.label == reference) {
        for c in &rd_curves {
            let r = bd_rate_with(rc, c, method);
            let mean_size = sizes.get(&c.label).map(|v| v.iter().sum::<f64>() / v.len() as f64);
            bd.push(BdRow {
                method: c.label.clone(),
                reference: reference.clone(),
                dataset: dataset.clone(),
                bd_rate_percent: r.as_ref().ok().copied(),
                model_size_mb: mean_size,
                note: r.err().map(|e| e.to_string()),
            });
        }
    } else {
        log::warn!("reference curve `{reference}` has fewer than two valid points; no BD-rate computed");
    }
    let p = a.out.join("bd_rate.json");
    write_json(&p, &bd)?;
    manifest.output(&p);
    manifest.result("bd_rate", &bd);
    manifest.result("anchors", curves.iter().map(|(l, p)| (l.clone(), p.len())).collect::<BTreeMap<_, _>>());
    if !rd_curves.is_empty() {
        let p = a.out.join("rd.svg");
        write_svg(&p, &rd_curves_svg(&format!("RD curves ({dataset})"), &rd_curves))?;
        manifest.output(p);
    }
    for (label, d) in &distributions {
        let p = a.out.join(format!("bits_{label}.json"));
        write_json(
            &p,
            &serde_json::json!({
                "qualities": d.qualities,
                "bits": d.bits,
                "paths": d.paths.iter().map(|p| p.map(|p| p.as_str())).collect::<Vec<_>>(),
                "main_mean": d.main_mean,
                "hyper_mean": d.hyper_mean,
                "main_ge_hyper": d.main_ge_hyper,
            }),
        )?;
        manifest.output(&p);
        let s = a.out.join(format!("bits_{label}.svg"));
        write_svg(&s, &bit_distribution_svg(d))?;
        manifest.output(s);
        manifest.result(&format!("bits_{label}_main_ge_hyper"), d.main_ge_hyper);
    }
    finish(manifest, &a.out, None)
}

fn gen_cmd(cfg: RunConfig, a: GenArgs) -> Result<()> {
    if a.count == 0 || a.size == 0 {
        return Err(Error::InvalidInput("count and size must be positive".into()));
    }
    let paths = write_toy_dataset(&a.out, a.count, a.size, a.seed)?;
    let mut manifest = Manifest::new("gen-toy-data", a.seed, cfg.to_json());
    manifest.result("images", paths.len());
    println!("wrote {} images to {}", paths.len(), a.out.display());
    finish(manifest, &a.out, None)
}
