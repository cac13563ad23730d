//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! A failing exact criterion always fails the run. The directional toy
//! experiments (5, 7, 8) are reported either way and fail the run only
//! when `FMPQ_ACCEPTANCE_STRICT` is set.
//!
//! Criteria 5, 7, 8, 9 and 11 share one set of toy baselines, trained once.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::collections::BTreeMap;
use std::time::Instant;

use fmpq::checkpoint::{from_bytes, load_checkpoint, model_to_bytes, save_model, save_quantized, Metadata};
use fmpq::data::{ImageDataset, Split};
use fmpq::eval::{evaluate_images, EvalSummary};
use fmpq::manifest::Manifest;
use fmpq::pipeline::{search_with_table, SearchOptions};
use fmpq::config::SearchMode;
use fmpq::synth::toy_images;
use fmpq::zeta::zeta_table;
use fmpq_core::assign::{assign_bits_with, BitAssignment, ZetaTable};
use fmpq_core::metrics::{bd_rate, bd_rate_with, bit_distribution_report, BdInterpolation, RDCurve};
use fmpq_core::model::{build_model, LayerKind, LayerSpec, Mode, PathKind, Variant, WidthConfig, QUANTIZABLE_LAYERS};
use fmpq_core::optim::Schedule;
use fmpq_core::quant::{attach_quantizers, quantize_affine, quantize_scalar, QuantParams};
use fmpq_core::rd::rd_loss;
use fmpq_core::search::{adaptive_search, exhaustive_search};
use fmpq_core::size::{layer_size_bits, model_size_report};
use fmpq_core::train::{qat_finetune, train_baseline, TrainConfig};
use fmpq_core::{LicModel, QuantizedModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn oracle_quant_f64(x: f64, s: f64, z: f64, b: u32) -> f64 {
    let top = 2f64.powi(b as i32);
    let u = x / s + z;
    let c = if u < 0.0 {
        0.0
    } else if u > top {
        top
    } else {
        u
    };
    s * (c.round_ties_even() - z)
}

fn oracle_quant_f32(x: f32, s: f32, z: f32, b: u32) -> f32 {
    let top = 2f32.powi(b as i32);
    let u = x / s + z;
    let c = if u < 0.0 {
        0.0
    } else if u > top {
        top
    } else {
        u
    };
    s * (c.round_ties_even() - z)
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut bound_violations = 0;
    let mut idem_violations = 0;
    let mut ties = 0;
    for case in 0..10_000 {
        let b = rng.gen_range(2..=16u32);
        let top = 2f64.powi(b as i32);
        let (x, s, z) = if case % 10 == 0 {
            // exact half-way points: power-of-two scale, integer zero point
            let s = 2f64.powi(rng.gen_range(-8..4));
            let z = rng.gen_range(0..(1u64 << b)) as f64;
            let k = rng.gen_range(0..(1u64 << b)) as f64;
            ties += 1;
            ((k + 0.5 - z) * s, s, z)
        } else {
            let s = 10f64.powf(rng.gen_range(-4.0..1.0));
            let z = rng.gen_range(0.0..top);
            let u = rng.gen_range(-0.5 * top..1.5 * top);
            ((u - z) * s, s, z)
        };
        let got = quantize_scalar(x, s, z, b);
        if got.to_bits() != oracle_quant_f64(x, s, z, b).to_bits() {
            mismatches += 1;
        }
        let (xf, sf, zf) = (x as f32, s as f32, z as f32);
        if quantize_scalar(xf, sf, zf, b).to_bits() != oracle_quant_f32(xf, sf, zf, b).to_bits() {
            mismatches += 1;
        }
        let via_params = quantize_affine(&[x], &QuantParams::per_tensor(s, z, b))[0];
        if via_params.to_bits() != got.to_bits() {
            mismatches += 1;
        }
        let u = x / s + z;
        if (0.0..=top).contains(&u) {
            // the inequality is exact in real arithmetic; allow a few ulps of
            // the operands for the floating-point evaluation
            let slack = 1e-12 * (x.abs() + s * top);
            if (got - x).abs() > s / 2.0 + slack {
                bound_violations += 1;
            }
        }
        if quantize_scalar(got, s, z, b).to_bits() != got.to_bits() {
            idem_violations += 1;
        }
    }

    // monotonicity along sorted inputs for random parameter sets
    let mut mono_violations = 0;
    for _ in 0..200 {
        let b = rng.gen_range(2..=10u32);
        let top = 2f64.powi(b as i32);
        let s = 10f64.powf(rng.gen_range(-3.0..0.0));
        let z = rng.gen_range(0.0..top);
        let mut xs: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.5 * top..1.5 * top) * s - z * s).collect();
        xs.sort_by(f64::total_cmp);
        let q: Vec<f64> = xs.iter().map(|&x| quantize_scalar(x, s, z, b)).collect();
        mono_violations += q.windows(2).filter(|w| w[0] > w[1]).count();
    }
    let pass = mismatches == 0 && bound_violations == 0 && idem_violations == 0 && mono_violations == 0;
    verdict(
        pass,
        format!(
            "10000 cases ({ties} exact ties), bit mismatches {mismatches}, bound violations {bound_violations}, \
             idempotence violations {idem_violations}, monotonicity violations {mono_violations}"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn spec(c_out: usize, c_in: usize, k: usize) -> LayerSpec {
    LayerSpec {
        index: 0,
        kind: LayerKind::Conv,
        c_out,
        c_in,
        k,
        stride: 1,
        path: PathKind::MainEncoder,
    }
}

fn size_oracle(c_out: u128, c_in: u128, k: u128, b: u128) -> u128 {
    // weights, then biases, then two 32-bit parameters per output channel
    let weights = c_out * c_in * k * k * b;
    let biases = c_out * b;
    let params = c_out * 64;
    weights + biases + params
}

fn criterion_2() -> Verdict {
    let mut bad = Vec::new();
    if layer_size_bits(&spec(2, 3, 1), 4) != 160 {
        bad.push("(2,3,1) b=4".to_string());
    }
    if layer_size_bits(&spec(192, 128, 5), 8) != 4_929_024 {
        bad.push("(192,128,5) b=8".to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (c_out, c_in, k, b) = (
            rng.gen_range(1..=512usize),
            rng.gen_range(1..=512usize),
            rng.gen_range(1..=9usize),
            rng.gen_range(2..=16u32),
        );
        let got = layer_size_bits(&spec(c_out, c_in, k), b) as u128;
        if got != size_oracle(c_out as u128, c_in as u128, k as u128, b as u128) {
            mismatches += 1;
        }
    }
    verdict(
        bad.is_empty() && mismatches == 0,
        format!("worked examples failing: {bad:?}; random-shape mismatches {mismatches}/1000"),
    )
}

// ---------------------------------------------------------------- 3

fn brute_force_bits(zeta: &[f64], beta: f64, b_max: u32) -> u32 {
    (2..=b_max).find(|&b| zeta[(b - 2) as usize] < beta).unwrap_or(b_max)
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut monotone_violations = 0;
    let mut cases = 0;
    for _ in 0..100 {
        let layers = rng.gen_range(3..=20);
        let b_max = rng.gen_range(4..=16u32);
        let widths = (b_max - 1) as usize;
        // ζ[b] non-increasing in b: built from b_max downwards, with ties
        let table: Vec<Vec<f64>> = (0..layers)
            .map(|_| {
                let mut row = vec![0.0; widths];
                let mut v = rng.gen_range(0.0..0.5);
                for i in (0..widths).rev() {
                    row[i] = v;
                    if rng.gen_bool(0.8) {
                        v += rng.gen_range(0.0..3.0) * (1.0 + (widths - i) as f64);
                    }
                }
                row
            })
            .collect();
        let mut betas: Vec<f64> = (0..12).map(|_| 10f64.powf(rng.gen_range(-2.0..2.5))).collect();
        // thresholds exactly equal to stored values exercise the strict test
        betas.push(table[0][widths / 2]);
        betas.push(table[layers - 1][0]);
        betas.sort_by(f64::total_cmp);
        let mut previous: Option<Vec<u32>> = None;
        for &beta in &betas {
            let mut source = ZetaTable::from_values(&table);
            let got = assign_bits_with(&mut source, beta, b_max).expect("valid table");
            let want: Vec<u32> = table.iter().map(|row| brute_force_bits(row, beta, b_max)).collect();
            cases += 1;
            if got.bits != want {
                mismatches += 1;
            }
            if let Some(prev) = &previous {
                if got.bits.iter().zip(prev).any(|(now, before)| now > before) {
                    monotone_violations += 1;
                }
            }
            previous = Some(got.bits);
        }
    }
    verdict(
        mismatches == 0 && monotone_violations == 0,
        format!("100 tables, {cases} (table, beta) cases, mismatches {mismatches}, beta-monotonicity violations {monotone_violations}"),
    )
}

// ---------------------------------------------------------------- 4

type Trace = Vec<(f64, f64, f64)>;

/// Straight-line transcription of the variable-step search.
fn reference_search(cr_of: &dyn Fn(f64) -> f64, target: f64, beta_init: f64, max_iterations: usize) -> (Trace, bool) {
    let mut beta = beta_init;
    let mut alpha = 1.0;
    let mut trace = Vec::new();
    while trace.len() < max_iterations {
        let cr = cr_of(beta);
        trace.push((beta, alpha, cr));
        if (cr - target).abs() <= 0.01 {
            return (trace, true);
        }
        if cr <= target {
            beta -= alpha;
            if beta < 1e-3 {
                beta = 1e-3;
            }
            alpha *= 0.1;
            beta += alpha;
        } else {
            let gap = (cr - target).abs();
            if gap >= 0.25 {
                alpha *= 5.0;
            } else if gap >= 0.10 {
                alpha *= 2.0;
            }
            beta += alpha;
        }
    }
    (trace, false)
}

type CrOracle = Box<dyn Fn(f64) -> f64>;

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut oracles: Vec<(String, CrOracle, f64)> = vec![(
        "linear 0.05".into(),
        Box::new(|b: f64| (1.02 - 0.05 * b).max(0.3)),
        0.75,
    )];
    while oracles.len() < 20 {
        let floor = rng.gen_range(0.26..0.4);
        let target = [0.9, 0.75, 0.6, 0.5][oracles.len() % 4];
        match oracles.len() % 3 {
            0 => {
                let k = 10f64.powf(rng.gen_range(-2.0..0.0));
                oracles.push((format!("linear {k:.4}"), Box::new(move |b| (1.05 - k * b).max(floor)), target));
            }
            1 => {
                let tau = 10f64.powf(rng.gen_range(-1.0..1.5));
                oracles.push((
                    format!("exp tau {tau:.3}"),
                    Box::new(move |b| floor + (1.1 - floor) * (-b / tau).exp()),
                    target,
                ));
            }
            _ => {
                // staircase with treads narrower than the band
                let k = 10f64.powf(rng.gen_range(-1.5..0.5));
                oracles.push((
                    format!("stairs {k:.4}"),
                    Box::new(move |b| ((1.0 / (1.0 + k * b)).max(floor) / 0.015).round() * 0.015),
                    target,
                ));
            }
        }
    }
    let mut trace_mismatch = Vec::new();
    let mut band_violations = 0;
    let mut converged = 0;
    for (name, f, target) in &oracles {
        let eval = |beta: f64| Ok((BitAssignment::uniform(1, 8, 8), f(beta)));
        let got = adaptive_search(eval, *target, 0.01, 100).expect("valid search");
        let (want, want_conv) = reference_search(f.as_ref(), *target, 0.01, 100);
        let got_trace: Trace = got.state.history.iter().map(|s| (s.beta, s.alpha_beta, s.cr)).collect();
        let same = got_trace.len() == want.len()
            && got_trace.iter().zip(&want).all(|(a, b)| {
                a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits() && a.2.to_bits() == b.2.to_bits()
            })
            && got.converged == want_conv;
        if !same {
            trace_mismatch.push(name.clone());
        }
        if got.converged {
            converged += 1;
            if (got.state.cr - target).abs() > 0.01 {
                band_violations += 1;
            }
        }
    }
    verdict(
        trace_mismatch.is_empty() && band_violations == 0,
        format!(
            "20 oracles, {converged} converged, trace mismatches {trace_mismatch:?}, band violations {band_violations}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Verdict {
    let surrogate = gradcheck::surrogate_max_error(1000, 6);
    let (model, checked) = gradcheck::model_max_error(4, 6);
    verdict(
        surrogate <= 1e-4 && model <= 1e-3,
        format!(
            "quantizer surrogate worst rel. error {surrogate:.2e} over 1000 points (tol 1e-4); \
             full-model train-mode RD loss worst rel. error {model:.2e} over {checked} coordinates (tol 1e-3)"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Verdict {
    let reference = [(0.12, 28.1), (0.21, 30.4), (0.37, 32.9), (0.66, 35.0), (1.05, 36.8)];
    let other = [(0.10, 27.5), (0.19, 30.1), (0.35, 32.7), (0.70, 35.3), (1.10, 37.1)];
    let curve = |label: &str, pts: &[(f64, f64)], scale: f64| {
        let pairs: Vec<(f64, f64)> = pts.iter().map(|&(r, p)| (r * scale, p)).collect();
        RDCurve::from_pairs(label, &pairs).expect("valid curve")
    };
    let mut notes = Vec::new();
    let mut pass = true;
    for method in [BdInterpolation::Cubic, BdInterpolation::Pchip] {
        let a = curve("a", &reference, 1.0);
        let same = bd_rate_with(&a, &a, method).expect("overlap");
        let doubled = bd_rate_with(&a, &curve("b", &reference, 2.0), method).expect("overlap");
        let base = bd_rate_with(&a, &curve("c", &other, 1.0), method).expect("overlap");
        let worst_scale = [1e-3, 0.37, 3.0, 250.0]
            .iter()
            .map(|&c| {
                let v = bd_rate_with(&curve("a", &reference, c), &curve("c", &other, c), method).expect("overlap");
                (v - base).abs()
            })
            .fold(0.0, f64::max);
        pass &= same == 0.0 && (doubled - 100.0).abs() <= 1e-6 && worst_scale <= 1e-9;
        notes.push(format!(
            "{method:?}: identical {same}, 2x {doubled:.9}, scale drift {worst_scale:.1e}"
        ));
    }
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------- toy lab

const TOY_SEEDS: [u64; 3] = [0, 1, 2];
const QUALITIES: [usize; 2] = [1, 4];
const CROP: usize = 64;

fn toy_widths() -> WidthConfig {
    WidthConfig {
        main: 16,
        latent: 16,
        hyper: 8,
        ..WidthConfig::default()
    }
}

fn baseline_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 4,
        lr_weights: 3e-3,
        lr_quant: 3e-3,
        lambda: None,
        seed,
        crop_size: CROP,
        schedule: Schedule::Cosine,
        clip_grad_norm: None,
        start_epoch: 0,
    }
}

fn qat_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 10,
        batch_size: 8,
        seed,
        crop_size: CROP,
        ..TrainConfig::qat()
    }
}

struct Lab {
    train: ImageDataset,
    calib: Vec<Tensor<f32>>,
    heldout: Vec<Tensor<f32>>,
    baselines: BTreeMap<(u64, usize), LicModel<f32>>,
    tables: BTreeMap<(u64, usize), ZetaTable>,
    train_secs: BTreeMap<(u64, usize), f64>,
    zeta_secs: BTreeMap<(u64, usize), f64>,
    /// FMPQ assignments of seed 0, by quality.
    fmpq_assignments: BTreeMap<usize, BitAssignment>,
    /// A fine-tuned mixed-precision model for the persistence check.
    qat_model: Option<QuantizedModel<f32>>,
}

impl Lab {
    fn new() -> Self {
        let train = ImageDataset::from_tensors(toy_images(32, 96, 100), CROP, Split::Train);
        let calib = ImageDataset::from_tensors(train.images[..16].to_vec(), CROP, Split::Eval).center_crops();
        Self {
            train,
            calib,
            // the toy model only sees crops, so held-out images are cropped too
            heldout: ImageDataset::from_tensors(toy_images(64, 96, 7777), CROP, Split::Eval).center_crops(),
            baselines: BTreeMap::new(),
            tables: BTreeMap::new(),
            train_secs: BTreeMap::new(),
            zeta_secs: BTreeMap::new(),
            fmpq_assignments: BTreeMap::new(),
            qat_model: None,
        }
    }

    fn baseline(&mut self, seed: u64, q: usize) -> LicModel<f32> {
        if let Some(m) = self.baselines.get(&(seed, q)) {
            return m.clone();
        }
        let t = Instant::now();
        let m = build_model(Variant::MeanScaleHyperprior, toy_widths(), q, seed).expect("toy model");
        let out = train_baseline(m, &self.train, &baseline_config(seed)).expect("training runs");
        let last = out.history.last().expect("epochs ran");
        eprintln!(
            "  baseline seed {seed} q{q}: {:.1}s, final loss {:.4} ({:.4} bpp, mse {:.2})",
            t.elapsed().as_secs_f64(),
            last.loss,
            last.rate_bpp,
            last.distortion
        );
        self.train_secs.insert((seed, q), t.elapsed().as_secs_f64());
        self.baselines.insert((seed, q), out.model.clone());
        out.model
    }

    /// ζ for b in 2..=16; narrower candidate sets read a subset.
    fn table(&mut self, seed: u64, q: usize) -> ZetaTable {
        if let Some(t) = self.tables.get(&(seed, q)) {
            return t.clone();
        }
        let model = self.baseline(seed, q);
        let t = Instant::now();
        let z = zeta_table(&model, &self.calib, 16, 1, None).expect("sensitivities");
        self.zeta_secs.insert((seed, q), t.elapsed().as_secs_f64());
        self.tables.insert((seed, q), z.table.clone());
        z.table
    }

    fn qat(&self, q: QuantizedModel<f32>, seed: u64) -> QuantizedModel<f32> {
        let out = qat_finetune(q, &self.train, &qat_config(seed)).expect("fine-tuning runs");
        assert!(out.diverged_at.is_none(), "toy fine-tuning diverged");
        out.model
    }

    fn eval<M: fmpq::eval::Codec>(&self, m: &M) -> EvalSummary {
        evaluate_images(m, &self.heldout, 1).expect("held-out evaluation")
    }
}

fn search_opts(cr_target: f64, b_max: u32) -> SearchOptions {
    SearchOptions {
        cr_target,
        beta_init: 0.01,
        mode: SearchMode::Adaptive,
        step: 0.01,
        max_iterations: 100,
        b_max,
    }
}

// ---------------------------------------------------------------- 7

fn criterion_7(lab: &mut Lab) -> Verdict {
    let mut wins = 0;
    let mut notes = Vec::new();
    for &seed in &TOY_SEEDS {
        let mut float_pts = Vec::new();
        let mut fp8_pts = Vec::new();
        let mut fm_pts = Vec::new();
        let (mut fp8_loss, mut fm_loss) = (0.0, 0.0);
        let mut size_ok = true;
        let mut converged = true;
        for &q in &QUALITIES {
            let base = lab.baseline(seed, q);
            let mut table = lab.table(seed, q);
            let found = search_with_table(&mut table, &base, &search_opts(1.0, 16)).expect("search runs");
            converged &= found.converged;

            let uniform = BitAssignment::uniform(QUANTIZABLE_LAYERS, 8, 8);
            let fp8 = lab.qat(attach_quantizers(base.clone(), &uniform, 8, None).expect("attach"), seed);
            let fm = lab.qat(attach_quantizers(base.clone(), &found.assignment, 8, None).expect("attach"), seed);
            let size_fp8 = model_size_report(&base, &uniform).total_mb;
            let size_fm = model_size_report(&base, &found.assignment).total_mb;
            size_ok &= (size_fm / size_fp8 - 1.0).abs() <= 0.01;

            let (ef, e8, em) = (lab.eval(&base), lab.eval(&fp8), lab.eval(&fm));
            eprintln!(
                "  seed {seed} q{q}: bits {:?} CR {:.4} | loss float {:.4} fpq8 {:.4} fmpq {:.4}",
                found.assignment.bits, found.state.cr, ef.mean_loss, e8.mean_loss, em.mean_loss
            );
            float_pts.push((ef.mean_bpp, ef.mean_psnr_db));
            fp8_pts.push((e8.mean_bpp, e8.mean_psnr_db));
            fm_pts.push((em.mean_bpp, em.mean_psnr_db));
            fp8_loss += e8.mean_loss / QUALITIES.len() as f64;
            fm_loss += em.mean_loss / QUALITIES.len() as f64;
            if seed == TOY_SEEDS[0] {
                lab.fmpq_assignments.insert(q, found.assignment.clone());
                lab.qat_model = Some(fm);
            }
        }
        let bd = |pts: &[(f64, f64)], label: &str| -> Result<f64, String> {
            let reference = RDCurve::from_pairs("float", &float_pts).map_err(|e| e.to_string())?;
            let test = RDCurve::from_pairs(label, pts).map_err(|e| e.to_string())?;
            bd_rate(&reference, &test).map_err(|e| e.to_string())
        };
        let (bd8, bdm) = (bd(&fp8_pts, "fpq8"), bd(&fm_pts, "fmpq"));
        let seed_pass = match (&bd8, &bdm) {
            (Ok(a), Ok(b)) => converged && size_ok && fm_loss <= fp8_loss && b <= a,
            _ => false,
        };
        wins += usize::from(seed_pass);
        notes.push(format!(
            "seed {seed}: {} (loss fmpq {fm_loss:.4} vs fpq8 {fp8_loss:.4}, BD fmpq {} vs fpq8 {}, size within 1% {size_ok}, converged {converged})",
            if seed_pass { "win" } else { "loss" },
            fmt_bd(&bdm),
            fmt_bd(&bd8),
        ));
    }
    let slowest = lab.train_secs.values().copied().fold(0.0, f64::max);
    verdict(
        wins >= 2 && slowest <= 1800.0,
        format!("{wins}/3 seeds; {}; slowest baseline {slowest:.0}s", notes.join("; ")),
    )
}

fn fmt_bd(r: &Result<f64, String>) -> String {
    match r {
        Ok(v) => format!("{v:+.3}%"),
        Err(e) => format!("n/a ({e})"),
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8(lab: &mut Lab) -> Verdict {
    let (seed, q) = (TOY_SEEDS[0], QUALITIES[1]);
    let base = lab.baseline(seed, q);
    let mut table = lab.table(seed, q);
    let mut sizes = Vec::new();
    let mut losses = Vec::new();
    let mut converged = true;
    for cr in [1.0, 0.9, 0.75, 0.6] {
        let found = search_with_table(&mut table, &base, &search_opts(cr, 8)).expect("search runs");
        converged &= found.converged;
        let m = lab.qat(attach_quantizers(base.clone(), &found.assignment, 8, None).expect("attach"), seed);
        sizes.push(model_size_report(&base, &found.assignment).total_mb);
        losses.push(lab.eval(&m).mean_loss);
    }
    let size_ok = sizes.windows(2).all(|w| w[1] <= w[0]);
    let inversions = losses.windows(2).filter(|w| w[1] < w[0]).count();
    verdict(
        converged && size_ok && inversions <= 1,
        format!(
            "CR 1.0/0.9/0.75/0.6: sizes MB {:?}, held-out loss {:?}, loss inversions {inversions}, all converged {converged}",
            sizes.iter().map(|s| format!("{s:.5}")).collect::<Vec<_>>(),
            losses.iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5(lab: &mut Lab) -> Verdict {
    let (seed, q) = (TOY_SEEDS[0], QUALITIES[1]);
    let base = lab.baseline(seed, q);
    let t = Instant::now();
    let mut table = lab.table(seed, q);
    let layers = fmpq_core::model::list_quantizable_layers(&base);
    let mut pass = true;
    let mut notes = Vec::new();
    for target in [0.9, 0.75, 0.6, 0.5] {
        let adaptive = adaptive_search(
            fmpq_core::search::zeta_evaluator(&mut table, &layers, 8),
            target,
            0.01,
            100,
        )
        .expect("search");
        let exhaustive = exhaustive_search(
            fmpq_core::search::zeta_evaluator(&mut table, &layers, 8),
            target,
            0.01,
            0.01,
            1_000_000,
        )
        .expect("search");
        let (a, e) = (adaptive.iterations(), exhaustive.iterations());
        let ok = adaptive.converged && exhaustive.converged && a <= e && (target > 0.6 || (a as f64) < 0.25 * e as f64);
        pass &= ok;
        notes.push(format!(
            "CR {target}: adaptive {a}{} vs exhaustive {e}{}",
            if adaptive.converged { "" } else { " (not converged)" },
            if exhaustive.converged { "" } else { " (not converged)" }
        ));
    }
    let secs = t.elapsed().as_secs_f64() + lab.zeta_secs.get(&(seed, q)).copied().unwrap_or(0.0) + lab.train_secs.get(&(seed, q)).copied().unwrap_or(0.0);
    pass &= secs < 1800.0;
    verdict(pass, format!("{}; {secs:.0}s including training and sensitivity evaluation", notes.join(", ")))
}

// ---------------------------------------------------------------- 9

fn criterion_9(lab: &Lab) -> Verdict {
    if lab.fmpq_assignments.is_empty() {
        return verdict(false, "no assignments available");
    }
    let report = match bit_distribution_report(&lab.fmpq_assignments) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let mut manifest = Manifest::new("acceptance-bit-distribution", 0, serde_json::json!({}));
    manifest.result("bit_matrix", &report.bits);
    manifest.result("main_ge_hyper", report.main_ge_hyper);
    manifest.status = "ok".into();
    manifest.write(dir.path()).expect("manifest");
    let back: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).expect("read")).expect("json");
    let rows = back["results"]["bit_matrix"].as_array().map_or(0, Vec::len);
    let cols = back["results"]["bit_matrix"][0].as_array().map_or(0, Vec::len);
    let flag = back["results"]["main_ge_hyper"].as_bool();
    verdict(
        rows == QUANTIZABLE_LAYERS && cols == lab.fmpq_assignments.len() && flag.is_some(),
        format!(
            "{rows}x{cols} matrix written; mean bits main {:.2} vs hyper {:.2}, main >= hyper: {} (reported, not asserted)",
            report.main_mean,
            report.hyper_mean,
            flag.map_or("missing".into(), |f| f.to_string())
        ),
    )
}

// ---------------------------------------------------------------- 11

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_11(lab: &mut Lab) -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let base = lab.baseline(TOY_SEEDS[0], QUALITIES[1]);
    let mut problems = Vec::new();

    let bytes = model_to_bytes(&base, &Metadata::default()).expect("serialize");
    let back = from_bytes::<f32>(&bytes).expect("parse").model;
    if !base.params().iter().zip(back.params()).all(|(a, b)| same_bits(a, b)) {
        problems.push("float parameters differ after round trip");
    }
    let path = dir.path().join("float.ckpt");
    save_model(&path, &base, &Metadata::default()).expect("save");
    let again = std::fs::read(&path).expect("read");
    let reloaded = load_checkpoint::<f32>(&path).expect("load").model;
    if model_to_bytes(&reloaded, &Metadata::default()).expect("serialize") != again {
        problems.push("float checkpoint bytes differ after reload");
    }

    let q = match lab.qat_model.clone() {
        Some(q) => q,
        None => {
            let a = BitAssignment::new(vec![6; QUANTIZABLE_LAYERS], 8, 1.0);
            attach_quantizers(base, &a, 8, None).expect("attach")
        }
    };
    let qpath = dir.path().join("quant.ckpt");
    save_quantized(&qpath, &q, &Metadata::default()).expect("save");
    let r = load_checkpoint::<f32>(&qpath).expect("load").into_quantized().expect("quantized");
    if r.bit_assignment.bits != q.bit_assignment.bits || r.activation_bits != q.activation_bits {
        problems.push("bit assignment differs");
    }
    let params_equal = q.weight_quantizers.iter().zip(&r.weight_quantizers).all(|(a, b)| {
        a.bits == b.bits && same_bits(&a.scale, &b.scale) && same_bits(&a.zero_point, &b.zero_point)
    });
    if !params_equal {
        problems.push("scales or zero points differ");
    }
    if !q.base.params().iter().zip(r.base.params()).all(|(a, b)| same_bits(a, b)) {
        problems.push("quantized model weights differ");
    }
    let batch = Tensor::stack(&[
        fmpq::data::center_crop(&lab.heldout[0], CROP),
        fmpq::data::center_crop(&lab.heldout[1], CROP),
    ]);
    let loss = |m: &QuantizedModel<f32>| {
        let out = m.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).expect("forward");
        let l = rd_loss(&out.reconstruction, &batch, &out.likelihoods_y.data, &out.likelihoods_z.data, m.base.lambda)
            .expect("loss");
        (l.loss, out.reconstruction.data)
    };
    let ((l1, x1), (l2, x2)) = (loss(&q), loss(&r));
    if l1.to_bits() != l2.to_bits() || !same_bits(&x1, &x2) {
        problems.push("eval-mode RD loss differs");
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("float and quantized checkpoints round-trip bitwise; eval RD loss {l1} reproduced with 0 ULP difference")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- main

fn timed(budget_secs: Option<f64>, f: impl FnOnce() -> Verdict) -> Verdict {
    let t = Instant::now();
    let mut v = f();
    let secs = t.elapsed().as_secs_f64();
    if let Some(b) = budget_secs {
        if secs >= b {
            v.pass = false;
        }
        v.detail = format!("{} [{secs:.2}s, budget {b:.0}s]", v.detail);
    } else {
        v.detail = format!("{} [{secs:.1}s]", v.detail);
    }
    v
}

/// Toy experiments whose outcome depends on training noise.
const DIRECTIONAL: [u8; 3] = [5, 7, 8];

fn main() {
    let mut results: BTreeMap<u8, (&str, Verdict)> = BTreeMap::new();
    let mut record = |id: u8, name: &'static str, v: Verdict| {
        eprintln!("criterion {id} done");
        results.insert(id, (name, v));
    };
    record(1, "quantizer exactness", timed(Some(10.0), criterion_1));
    record(2, "size formula exactness", timed(Some(5.0), criterion_2));
    record(3, "bit assignment oracle", timed(Some(10.0), criterion_3));
    record(4, "search trace equivalence", timed(Some(10.0), criterion_4));
    record(6, "gradient checks", timed(Some(120.0), criterion_6));
    record(10, "BD-rate oracle", timed(Some(1.0), criterion_10));

    let mut lab = Lab::new();
    record(7, "FMPQ vs FPQ-8 ordering", timed(None, || criterion_7(&mut lab)));
    record(8, "size/loss trade-off trend", timed(Some(7200.0), || criterion_8(&mut lab)));
    record(5, "adaptive vs exhaustive search", timed(None, || criterion_5(&mut lab)));
    record(9, "bit-distribution report", timed(None, || criterion_9(&lab)));
    record(11, "checkpoint persistence", timed(None, || criterion_11(&mut lab)));

    println!();
    let mut failed = 0;
    for (id, (name, v)) in &results {
        println!("criterion {id:>2} {:<4} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    let strict = std::env::var_os("FMPQ_ACCEPTANCE_STRICT").is_some();
    let gating = results
        .iter()
        .filter(|(id, (_, v))| !v.pass && (strict || !DIRECTIONAL.contains(id)))
        .count();
    if gating > 0 {
        std::process::exit(1);
    }
}
