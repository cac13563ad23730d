//! Finite-difference checks shared by the core gradient tests and the
//! acceptance run.

use fmpq_core::model::{build_model, Mode, Variant, WidthConfig};
use fmpq_core::quant::fake_quant_forward_backward;
use fmpq_core::rd::{rd_loss, rd_loss_with_grads};
use fmpq_core::{LicModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between the analytic quantizer gradients and central
/// differences of the smooth surrogate, over `points` samples kept away from
/// rounding and clip boundaries.
///
/// At a base point `(x0, s0, z0)` with `u0 = x0/s0 + z0` and `q0` its
/// clipped rounding, the surrogate is
/// `f(x, s, z) = s · (q0 + slope · (x/s + z − u0) − z)`,
/// which replaces rounding by the identity and the clip by a line of slope
/// 1 inside the range and `leak` outside, as the backward pass assumes.
pub fn surrogate_max_error(points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leak = 0.01;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < points {
        let bits = rng.gen_range(2..=8u32);
        let top = (1u64 << bits) as f64;
        let s0 = 10f64.powf(rng.gen_range(-3.0..0.0));
        let z0 = rng.gen_range(0.0..top);
        // a quarter of the points land outside the clip range
        let u_target = rng.gen_range(-0.25 * top..1.25 * top);
        let x0 = (u_target - z0) * s0;
        let u0 = x0 / s0 + z0;
        let frac = u0 - u0.floor();
        if (frac - 0.5).abs() < 0.02 || u0.abs() < 0.05 || (u0 - top).abs() < 0.05 {
            continue;
        }
        let g = fake_quant_forward_backward(x0, s0, z0, bits, leak);
        let inside = (0.0..=top).contains(&u0);
        let slope = if inside { 1.0 } else { leak };
        let q0 = u0.clamp(0.0, top).round_ties_even();
        let f = |x: f64, s: f64, z: f64| s * (q0 + slope * (x / s + z - u0) - z);
        assert_eq!(f(x0, s0, z0), g.value, "surrogate must agree with the forward value at the base point");

        // f is affine in each argument, so wide steps cost no truncation
        // error and keep cancellation small
        let hx = 1e-2 * s0;
        let hs = 1e-2 * s0;
        let hz = 1e-2;
        let nx = (f(x0 + hx, s0, z0) - f(x0 - hx, s0, z0)) / (2.0 * hx);
        let ns = (f(x0, s0 + hs, z0) - f(x0, s0 - hs, z0)) / (2.0 * hs);
        let nz = (f(x0, s0, z0 + hz) - f(x0, s0, z0 - hz)) / (2.0 * hz);
        worst = worst
            .max(rel_err(g.dx, nx, 1e-6))
            .max(rel_err(g.ds, ns, 1e-6))
            .max(rel_err(g.dz, nz, 1e-6 * s0.max(1e-3)));
        done += 1;
    }
    worst
}

/// A complete mean-scale model with every width set to 4, in f64.
pub fn tiny_model(seed: u64) -> LicModel<f64> {
    let widths = WidthConfig {
        main: 4,
        latent: 4,
        hyper: 4,
        ..WidthConfig::default()
    };
    build_model(Variant::MeanScaleHyperprior, widths, 3, seed).expect("valid toy model")
}

fn smooth_image(size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b): (f64, f64) = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3));
    let data = (0..3 * size * size)
        .map(|i| {
            let (c, p) = (i / (size * size), i % (size * size));
            let (y, x) = ((p / size) as f64, (p % size) as f64);
            0.5 + 0.3 * (a * x + c as f64).sin() * (b * y).cos() + 0.05 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    Tensor::from_vec([1, 3, size, size], data)
}

const NOISE_SEED: u64 = 99;

/// Train-mode RD loss with the latent noise pinned by a reseeded generator.
pub fn train_loss(model: &LicModel<f64>, x: &Tensor<f64>) -> f64 {
    let out = model
        .forward_compress(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(NOISE_SEED))
        .expect("forward");
    rd_loss(&out.reconstruction, x, &out.likelihoods_y.data, &out.likelihoods_z.data, model.lambda)
        .expect("finite loss")
        .loss
}

/// Worst relative error of the backward pass against central differences,
/// over `per_tensor` sampled coordinates of every parameter tensor.
#[allow(clippy::needless_range_loop)]
pub fn model_max_error(per_tensor: usize, seed: u64) -> (f64, usize) {
    let mut model = tiny_model(seed);
    let x = smooth_image(64, seed + 1);

    let out = model
        .forward_compress(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(NOISE_SEED))
        .expect("forward");
    let g = rd_loss_with_grads(&out.reconstruction, &x, &out.likelihoods_y, &out.likelihoods_z, model.lambda)
        .expect("finite loss");
    let params = model.layer_params();
    let grads = model.backward(&out, &params, &g.reconstruction, &g.likelihoods_y, &g.likelihoods_z);
    let analytic: Vec<Vec<f64>> = grads.flat().into_iter().map(|s| s.to_vec()).collect();
    drop(params);

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..analytic.len() {
        for _ in 0..per_tensor {
            let i = rng.gen_range(0..analytic[t].len());
            let h = 1e-5;
            let orig = model.params_mut()[t][i];
            model.params_mut()[t][i] = orig + h;
            let up = train_loss(&model, &x);
            model.params_mut()[t][i] = orig - h;
            let down = train_loss(&model, &x);
            model.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[t][i], numeric, 1e-4));
            checked += 1;
        }
    }
    (worst, checked)
}
