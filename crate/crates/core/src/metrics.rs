//! PSNR, RD curves, Bjontegaard delta rate and bit-width distribution tables.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::assign::BitAssignment;
use crate::model::{PathKind, HYPER_DECODER, HYPER_ENCODER, MAIN_DECODER, MAIN_ENCODER};
use crate::Error;

pub const PSNR_CAP: f64 = 100.0;

/// PSNR in dB for an MSE measured on the 0–255 scale, capped for zero error.
pub fn psnr(mse_255: f64) -> f64 {
    if mse_255 <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * libm::log10(255.0 * 255.0 / mse_255)).min(PSNR_CAP)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    pub points: Vec<RdPoint>,
    pub label: String,
}

impl RDCurve {
    /// Builds a curve, sorting by rate. Needs two points with strictly
    /// increasing positive rates and finite PSNR.
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self, Error> {
        if points.len() < 2 {
            return Err(Error::TooFewPoints(points.len()));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        for p in &points {
            if !(p.bpp > 0.0 && p.bpp.is_finite()) || !p.psnr_db.is_finite() {
                return Err(Error::InvalidCurve(alloc::format!("bad point ({}, {})", p.bpp, p.psnr_db)));
            }
        }
        if points.windows(2).any(|w| w[0].bpp >= w[1].bpp) {
            return Err(Error::InvalidCurve(String::from("rates must be strictly increasing")));
        }
        Ok(Self {
            points,
            label: label.into(),
        })
    }

    pub fn from_pairs(label: impl Into<String>, pairs: &[(f64, f64)]) -> Result<Self, Error> {
        Self::new(
            label,
            pairs.iter().map(|&(bpp, psnr_db)| RdPoint { bpp, psnr_db }).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BdInterpolation {
    /// Least-squares cubic in PSNR, lowered to degree `n − 1` for fewer
    /// than four points.
    #[default]
    Cubic,
    /// Piecewise cubic Hermite (monotone slopes) through the points.
    Pchip,
}

/// Log-rate model of one curve over PSNR.
enum LogRate {
    Poly(Vec<f64>),
    Pchip { x: Vec<f64>, y: Vec<f64>, d: Vec<f64> },
}

impl LogRate {
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        match self {
            LogRate::Poly(c) => {
                let anti = |x: f64| c.iter().enumerate().rev().fold(0.0, |acc, (i, &ci)| acc * x + ci / (i + 1) as f64) * x;
                anti(hi) - anti(lo)
            }
            LogRate::Pchip { x, y, d } => {
                let mut total = 0.0;
                for i in 0..x.len() - 1 {
                    let (a, b) = (x[i].max(lo), x[i + 1].min(hi));
                    if a >= b {
                        continue;
                    }
                    total += hermite_integral(x[i], x[i + 1], y[i], y[i + 1], d[i], d[i + 1], a, b);
                }
                total
            }
        }
    }
}

/// Exact integral over `[a, b] ⊆ [x0, x1]` of the cubic Hermite segment.
#[allow(clippy::too_many_arguments)]
fn hermite_integral(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, a: f64, b: f64) -> f64 {
    let h = x1 - x0;
    // antiderivatives of the Hermite basis in t, scaled by h
    let anti = |t: f64| {
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let h00 = t4 / 2.0 - t3 + t;
        let h10 = t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0;
        let h01 = -t4 / 2.0 + t3;
        let h11 = t4 / 4.0 - t3 / 3.0;
        h * (h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1)
    };
    anti((b - x0) / h) - anti((a - x0) / h)
}

/// Fritsch–Carlson slopes with the three-point end conditions.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return alloc::vec![del[0]; 2];
    }
    let mut d = alloc::vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let mut e = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if e.signum() != m0.signum() {
            e = 0.0;
        } else if m0.signum() != m1.signum() && e.abs() > 3.0 * m0.abs() {
            e = 3.0 * m0;
        }
        e
    };
    d[0] = end(h[0], h[1], del[0], del[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

/// Least-squares polynomial fit of `y` on `x`, coefficients in ascending order.
fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Vec<f64> {
    let m = degree + 1;
    // normal equations, solved with partial pivoting
    let mut a = alloc::vec![alloc::vec![0.0; m + 1]; m];
    for (&xi, &yi) in x.iter().zip(y) {
        let mut pows = alloc::vec![1.0; 2 * m];
        for k in 1..2 * m {
            pows[k] = pows[k - 1] * xi;
        }
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r + c];
            }
            a[r][m] += pows[r] * yi;
        }
    }
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut coef = alloc::vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * coef[c]).sum();
        coef[r] = (a[r][m] - s) / a[r][r];
    }
    coef
}

/// Bjontegaard delta rate of `test` against `reference`, in percent.
/// Positive means `test` spends more rate for the same quality.
pub fn bd_rate(reference: &RDCurve, test: &RDCurve) -> Result<f64, Error> {
    bd_rate_with(reference, test, BdInterpolation::Cubic)
}

pub fn bd_rate_with(reference: &RDCurve, test: &RDCurve, method: BdInterpolation) -> Result<f64, Error> {
    for c in [reference, test] {
        if c.points.len() < 2 {
            return Err(Error::TooFewPoints(c.points.len()));
        }
    }
    let range = |c: &RDCurve| {
        c.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.psnr_db), hi.max(p.psnr_db)))
    };
    let (r_lo, r_hi) = range(reference);
    let (t_lo, t_hi) = range(test);
    let lo = r_lo.max(t_lo);
    let hi = r_hi.min(t_hi);
    if !(hi > lo) {
        return Err(Error::NoOverlap);
    }
    // PSNR is centred and scaled on the shared interval so the normal
    // equations stay well conditioned.
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fit = |c: &RDCurve| -> Result<LogRate, Error> {
        let mut pts: Vec<(f64, f64)> = c
            .points
            .iter()
            .map(|p| ((p.psnr_db - mid) / half, libm::log10(p.bpp)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        match method {
            BdInterpolation::Cubic => Ok(LogRate::Poly(polyfit(&x, &y, (x.len() - 1).min(3)))),
            BdInterpolation::Pchip => {
                if x.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidCurve(String::from("PSNR values must be distinct")));
                }
                let d = pchip_slopes(&x, &y);
                Ok(LogRate::Pchip { x, y, d })
            }
        }
    };
    let r = fit(reference)?;
    let t = fit(test)?;
    let diff = (t.integral(-1.0, 1.0) - r.integral(-1.0, 1.0)) / 2.0;
    Ok(100.0 * (libm::pow(10.0, diff) - 1.0))
}

pub fn path_of(layer: usize) -> Option<PathKind> {
    if MAIN_ENCODER.contains(&layer) {
        Some(PathKind::MainEncoder)
    } else if MAIN_DECODER.contains(&layer) {
        Some(PathKind::MainDecoder)
    } else if HYPER_ENCODER.contains(&layer) {
        Some(PathKind::HyperEncoder)
    } else if HYPER_DECODER.contains(&layer) {
        Some(PathKind::HyperDecoder)
    } else {
        None
    }
}

/// Layer × quality table of bit widths.
#[derive(Clone, Debug, PartialEq)]
pub struct BitDistribution {
    pub qualities: Vec<usize>,
    /// `bits[layer][column]`, columns in `qualities` order.
    pub bits: Vec<Vec<u32>>,
    pub paths: Vec<Option<PathKind>>,
    pub main_mean: f64,
    pub hyper_mean: f64,
    pub main_ge_hyper: bool,
}

pub fn bit_distribution_report(assignments: &BTreeMap<usize, BitAssignment>) -> Result<BitDistribution, Error> {
    let layers = assignments.values().next().map(|a| a.bits.len()).unwrap_or(0);
    if let Some(bad) = assignments.values().find(|a| a.bits.len() != layers) {
        return Err(Error::InconsistentLayerCount {
            expected: layers,
            got: bad.bits.len(),
        });
    }
    let qualities: Vec<usize> = assignments.keys().copied().collect();
    let bits: Vec<Vec<u32>> = (0..layers)
        .map(|l| assignments.values().map(|a| a.bits[l]).collect())
        .collect();
    let paths: Vec<Option<PathKind>> = (0..layers).map(path_of).collect();
    let mean = |main: bool| {
        let vals: Vec<f64> = bits
            .iter()
            .zip(&paths)
            .filter(|(_, p)| p.is_some_and(|p| p.is_main() == main))
            .flat_map(|(row, _)| row.iter().map(|&b| b as f64))
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let main_mean = mean(true);
    let hyper_mean = mean(false);
    Ok(BitDistribution {
        qualities,
        bits,
        paths,
        main_mean,
        hyper_mean,
        main_ge_hyper: main_mean >= hyper_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn curve(rates: &[f64], psnrs: &[f64]) -> RDCurve {
        let pairs: Vec<(f64, f64)> = rates.iter().copied().zip(psnrs.iter().copied()).collect();
        RDCurve::from_pairs("c", &pairs).unwrap()
    }

    const R: [f64; 6] = [0.12, 0.2, 0.31, 0.48, 0.7, 0.95];
    const P: [f64; 6] = [27.1, 28.9, 30.6, 32.4, 34.1, 35.9];

    #[test]
    fn psnr_closed_forms() {
        assert!((psnr(1.0) - 48.130803608679).abs() < 1e-9);
        assert_eq!(psnr(255.0 * 255.0), 0.0);
        assert_eq!(psnr(0.0), PSNR_CAP);
    }

    #[test]
    fn identical_curves_give_zero() {
        let c = curve(&R, &P);
        assert_eq!(bd_rate(&c, &c).unwrap(), 0.0);
        assert_eq!(bd_rate_with(&c, &c, BdInterpolation::Pchip).unwrap(), 0.0);
    }

    #[test]
    fn uniform_shifts() {
        let c = curve(&R, &P);
        let r2: Vec<f64> = R.iter().map(|r| 2.0 * r).collect();
        let rh: Vec<f64> = R.iter().map(|r| 0.5 * r).collect();
        for m in [BdInterpolation::Cubic, BdInterpolation::Pchip] {
            assert!((bd_rate_with(&c, &curve(&r2, &P), m).unwrap() - 100.0).abs() < 1e-6);
            assert!((bd_rate_with(&c, &curve(&rh, &P), m).unwrap() + 50.0).abs() < 1e-6);
        }
    }

    #[test]
    fn two_point_curves_fall_back_to_lines() {
        let a = curve(&[0.2, 0.5], &[28.0, 32.0]);
        let b = curve(&[0.4, 1.0], &[28.0, 32.0]);
        assert!((bd_rate(&a, &b).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn pchip_matches_linear_data_exactly() {
        // log-rate linear in PSNR: both methods integrate it exactly
        let psnr = [28.0, 30.0, 31.0, 34.0];
        let a: Vec<f64> = psnr.iter().map(|p| libm::pow(10.0, 0.05 * p - 2.0)).collect();
        let b: Vec<f64> = psnr.iter().map(|p| libm::pow(10.0, 0.05 * (p - 1.0) - 2.0)).collect();
        let expect = 100.0 * (libm::pow(10.0, -0.05) - 1.0);
        for m in [BdInterpolation::Cubic, BdInterpolation::Pchip] {
            let v = bd_rate_with(&curve(&a, &psnr), &curve(&b, &psnr), m).unwrap();
            assert!((v - expect).abs() < 1e-9, "{m:?}: {v}");
        }
    }

    #[test]
    fn errors() {
        let a = curve(&[0.1, 0.2], &[20.0, 22.0]);
        let b = curve(&[0.1, 0.2], &[30.0, 32.0]);
        assert!(matches!(bd_rate(&a, &b), Err(Error::NoOverlap)));
        assert!(matches!(RDCurve::from_pairs("x", &[(0.1, 20.0)]), Err(Error::TooFewPoints(1))));
        assert!(RDCurve::from_pairs("x", &[(0.1, 20.0), (0.1, 21.0)]).is_err());
    }

    #[test]
    fn distribution_shapes() {
        let mut m = BTreeMap::new();
        for q in 0..4 {
            m.insert(q, BitAssignment::uniform(14, 4 + q as u32, 8));
        }
        let d = bit_distribution_report(&m).unwrap();
        assert_eq!(d.bits.len(), 14);
        assert!(d.bits.iter().all(|r| r.len() == 4));
        assert_eq!(d.paths[9], Some(PathKind::HyperEncoder));
        assert!(d.main_ge_hyper);

        let single: BTreeMap<_, _> = [(2, BitAssignment::uniform(14, 6, 8))].into();
        assert!(bit_distribution_report(&single).unwrap().bits.iter().all(|r| r.len() == 1));

        m.insert(9, BitAssignment::uniform(13, 6, 8));
        assert!(bit_distribution_report(&m).is_err());
        let _ = vec![0];
    }
}
