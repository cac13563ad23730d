//! Entropy models used to estimate the rate of the quantized latents.
//!
//! [`FactorizedPrior`] is the per-channel non-parametric density used for the
//! hyper-latent `z`; it is built from a small monotone network whose output is
//! the logit of a CDF. The Gaussian conditional over `y` is a pair of free
//! functions, since it carries no parameters of its own.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::real::{sigmoid, softplus, std_normal_cdf, std_normal_pdf, Real};

pub const LIKELIHOOD_BOUND: f64 = 1e-9;
pub const SCALE_BOUND: f64 = 0.11;

/// Width of each hidden stage of the CDF network: 1 -> 3 -> 3 -> 3 -> 1.
const DIMS: [usize; 5] = [1, 3, 3, 3, 1];
const STAGES: usize = DIMS.len() - 1;
const MAXW: usize = 3;

/// Learned factorized density over an integer-quantized latent, one
/// independent univariate model per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior<T> {
    pub channels: usize,
    /// Per stage: `channels × out × in`, passed through softplus before use.
    pub matrices: Vec<Vec<T>>,
    /// Per stage: `channels × out`.
    pub biases: Vec<Vec<T>>,
    /// Per hidden stage: `channels × out`, passed through tanh before use.
    pub factors: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct PriorGrads<T> {
    pub matrices: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    pub factors: Vec<Vec<T>>,
}

impl<T: Real> PriorGrads<T> {
    pub fn zeros_like(p: &FactorizedPrior<T>) -> Self {
        let z = |v: &Vec<Vec<T>>| v.iter().map(|x| vec![T::zero(); x.len()]).collect();
        Self {
            matrices: z(&p.matrices),
            biases: z(&p.biases),
            factors: z(&p.factors),
        }
    }
}

/// Intermediate values of one CDF-network evaluation.
#[derive(Clone, Copy)]
struct Tape<T> {
    /// Input to each stage.
    inputs: [[T; MAXW]; STAGES],
    /// Affine output of each stage before the tanh correction.
    pre: [[T; MAXW]; STAGES],
}

impl<T: Real> FactorizedPrior<T> {
    /// Standard initialization with `init_scale = 10`: matrices give an
    /// initial density of roughly that width, biases are uniform in
    /// `[-0.5, 0.5]`, factors start at zero.
    pub fn new<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let init_scale: f64 = 10.0;
        let scale = libm::pow(init_scale, 1.0 / STAGES as f64);
        let mut matrices = Vec::with_capacity(STAGES);
        let mut biases = Vec::with_capacity(STAGES);
        let mut factors = Vec::with_capacity(STAGES - 1);
        for i in 0..STAGES {
            let (fin, fout) = (DIMS[i], DIMS[i + 1]);
            let init = libm::log(libm::expm1(1.0 / scale / fout as f64));
            matrices.push(vec![T::lit(init); channels * fout * fin]);
            biases.push(
                (0..channels * fout)
                    .map(|_| T::lit(rng.gen_range(-0.5..0.5)))
                    .collect(),
            );
            if i + 1 < STAGES {
                factors.push(vec![T::zero(); channels * fout]);
            }
        }
        Self {
            channels,
            matrices,
            biases,
            factors,
        }
    }

    fn logits_cumulative(&self, c: usize, x: T) -> (T, Tape<T>) {
        let mut tape = Tape {
            inputs: [[T::zero(); MAXW]; STAGES],
            pre: [[T::zero(); MAXW]; STAGES],
        };
        let mut h = [T::zero(); MAXW];
        h[0] = x;
        for i in 0..STAGES {
            let (fin, fout) = (DIMS[i], DIMS[i + 1]);
            tape.inputs[i] = h;
            let m = &self.matrices[i][c * fout * fin..(c + 1) * fout * fin];
            let b = &self.biases[i][c * fout..(c + 1) * fout];
            let mut next = [T::zero(); MAXW];
            for j in 0..fout {
                let mut acc = b[j];
                for k in 0..fin {
                    acc += softplus(m[j * fin + k]) * h[k];
                }
                next[j] = acc;
            }
            tape.pre[i] = next;
            if i + 1 < STAGES {
                let f = &self.factors[i][c * fout..(c + 1) * fout];
                for j in 0..fout {
                    next[j] += f[j].tanh() * next[j].tanh();
                }
            }
            h = next;
        }
        (h[0], tape)
    }

    /// Back-propagate `g = dL/dlogit` through one evaluation; accumulates
    /// parameter gradients and returns `dL/dx`.
    fn logits_backward(&self, c: usize, tape: &Tape<T>, g: T, grads: &mut PriorGrads<T>) -> T {
        let mut dh = [T::zero(); MAXW];
        dh[0] = g;
        for i in (0..STAGES).rev() {
            let (fin, fout) = (DIMS[i], DIMS[i + 1]);
            let mut dpre = dh;
            if i + 1 < STAGES {
                let f = &self.factors[i][c * fout..(c + 1) * fout];
                let gf = &mut grads.factors[i][c * fout..(c + 1) * fout];
                for j in 0..fout {
                    let tf = f[j].tanh();
                    let tp = tape.pre[i][j].tanh();
                    gf[j] += dh[j] * (T::one() - tf * tf) * tp;
                    dpre[j] = dh[j] * (T::one() + tf * (T::one() - tp * tp));
                }
            }
            let m = &self.matrices[i][c * fout * fin..(c + 1) * fout * fin];
            let gm = &mut grads.matrices[i][c * fout * fin..(c + 1) * fout * fin];
            let gb = &mut grads.biases[i][c * fout..(c + 1) * fout];
            let mut din = [T::zero(); MAXW];
            for j in 0..fout {
                gb[j] += dpre[j];
                for k in 0..fin {
                    let raw = m[j * fin + k];
                    gm[j * fin + k] += dpre[j] * tape.inputs[i][k] * sigmoid(raw);
                    din[k] += softplus(raw) * dpre[j];
                }
            }
            dh = din;
        }
        dh[0]
    }

    /// CDF of channel `c` at `x`.
    pub fn cdf(&self, c: usize, x: T) -> T {
        sigmoid(self.logits_cumulative(c, x).0)
    }

    fn interval(&self, c: usize, x: T) -> (T, T, T, Tape<T>, Tape<T>) {
        let half = T::lit(0.5);
        let (lo, tl) = self.logits_cumulative(c, x - half);
        let (up, tu) = self.logits_cumulative(c, x + half);
        // evaluate in the tail where both sigmoids are small
        let sign = if lo + up > T::zero() { -T::one() } else { T::one() };
        (sign, lo, up, tl, tu)
    }

    /// Probability mass of the unit interval centred at `x`, before the
    /// lower bound is applied.
    pub fn raw_likelihood(&self, c: usize, x: T) -> T {
        let (s, lo, up, _, _) = self.interval(c, x);
        (sigmoid(s * up) - sigmoid(s * lo)).abs()
    }

    /// Bounded likelihoods of a `(n, channels, h, w)` latent.
    pub fn likelihoods(&self, z: &[T], plane: usize) -> Vec<T> {
        let bound = T::lit(LIKELIHOOD_BOUND);
        z.iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / plane) % self.channels;
                self.raw_likelihood(c, v).max(bound)
            })
            .collect()
    }

    /// Given `dL/dlikelihood`, accumulate parameter gradients and return
    /// `dL/dz`.
    pub fn likelihoods_backward(
        &self,
        z: &[T],
        plane: usize,
        grad_lik: &[T],
        grads: &mut PriorGrads<T>,
    ) -> Vec<T> {
        let bound = T::lit(LIKELIHOOD_BOUND);
        let mut out = vec![T::zero(); z.len()];
        for (i, (&v, &g)) in z.iter().zip(grad_lik).enumerate() {
            let c = (i / plane) % self.channels;
            let (s, lo, up, tl, tu) = self.interval(c, v);
            let su = sigmoid(s * up);
            let sl = sigmoid(s * lo);
            let diff = su - sl;
            if diff.abs() < bound && g >= T::zero() {
                continue;
            }
            let sd = if diff >= T::zero() { T::one() } else { -T::one() };
            let gu = g * sd * s * su * (T::one() - su);
            let gl = -g * sd * s * sl * (T::one() - sl);
            out[i] = self.logits_backward(c, &tu, gu, grads) + self.logits_backward(c, &tl, gl, grads);
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<T>> {
        self.matrices.iter().chain(&self.biases).chain(&self.factors)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.matrices
            .iter_mut()
            .chain(self.biases.iter_mut())
            .chain(self.factors.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Vec::len).sum()
    }
}

impl<T: Real> PriorGrads<T> {
    pub fn flat(&self) -> impl Iterator<Item = &Vec<T>> {
        self.matrices.iter().chain(&self.biases).chain(&self.factors)
    }
}

/// Likelihood of `y` under `N(mu, sigma)` integrated over a unit bin, with
/// `sigma` floored at [`SCALE_BOUND`] and the result at [`LIKELIHOOD_BOUND`].
#[inline]
pub fn gaussian_likelihood<T: Real>(y: T, mu: T, sigma: T) -> T {
    let s = sigma.max(T::lit(SCALE_BOUND));
    let v = (y - mu).abs();
    let half = T::lit(0.5);
    let upper = std_normal_cdf((half - v) / s);
    let lower = std_normal_cdf((-half - v) / s);
    (upper - lower).max(T::lit(LIKELIHOOD_BOUND))
}

/// Gradients `(dy, dmu, dsigma)` of [`gaussian_likelihood`] scaled by the
/// upstream gradient `g`. Both lower bounds let the gradient through when it
/// would push the bounded value upward.
#[inline]
pub fn gaussian_likelihood_backward<T: Real>(y: T, mu: T, sigma: T, g: T) -> (T, T, T) {
    let sb = T::lit(SCALE_BOUND);
    let s = sigma.max(sb);
    let d = y - mu;
    let v = d.abs();
    let half = T::lit(0.5);
    let a = (half - v) / s;
    let b = (-half - v) / s;
    let lik = std_normal_cdf(a) - std_normal_cdf(b);
    if lik < T::lit(LIKELIHOOD_BOUND) && g >= T::zero() {
        return (T::zero(), T::zero(), T::zero());
    }
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let dv = g * (pb - pa) / s;
    let ds = g * (b * pb - a * pa) / s;
    let sgn = if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let dy = dv * sgn;
    let dsigma = if sigma >= sb || ds < T::zero() { ds } else { T::zero() };
    (dy, -dy, dsigma)
}
