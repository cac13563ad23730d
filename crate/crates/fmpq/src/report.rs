//! CSV, JSON and SVG outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fmpq_core::metrics::{BitDistribution, RDCurve};
use serde::Serialize;

use crate::error::{IoContext, Result};

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).at(path)
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    w: f64,
    h: f64,
    margin: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.margin + (x - self.x.0) / (self.x.1 - self.x.0) * (self.w - 2.0 * self.margin)
    }

    fn py(&self, y: f64) -> f64 {
        self.h - self.margin - (y - self.y.0) / (self.y.1 - self.y.0) * (self.h - 2.0 * self.margin)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let (w, h, m) = (self.w, self.h, self.margin);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{}</text>\n\
             <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            w / 2.0,
            escape(title),
            w / 2.0,
            h - 10.0,
            escape(xlabel),
            h / 2.0,
            h / 2.0,
            escape(ylabel),
            w - 2.0 * m,
            h - 2.0 * m,
        );
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
                self.px(fx),
                h - m + 15.0,
                tick(fx)
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
                m - 4.0,
                self.py(fy) + 4.0,
                tick(fy)
            );
        }
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// PSNR-versus-bpp curves.
pub fn rd_curves_svg(title: &str, curves: &[RDCurve]) -> String {
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.psnr_db);
        y1 = y1.max(p.psnr_db);
    }
    let f = Frame {
        w: 640.0,
        h: 440.0,
        margin: 60.0,
        x: padded(x0, x1),
        y: padded(y0, y1),
    };
    let mut s = f.open(title, "rate (bpp)", "PSNR (dB)");
    for (i, c) in curves.iter().enumerate() {
        let col = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.px(p.bpp), f.py(p.psnr_db)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{col}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{col}\"/>",
                f.px(p.bpp),
                f.py(p.psnr_db)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{col}\">{}</text>",
            f.margin + 10.0,
            f.margin + 18.0 * (i + 1) as f64,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per layer, one bar per quality level.
pub fn bit_distribution_svg(d: &BitDistribution) -> String {
    let layers = d.bits.len();
    let max_bits = d.bits.iter().flatten().copied().max().unwrap_or(8) as f64;
    let f = Frame {
        w: 760.0,
        h: 420.0,
        margin: 60.0,
        x: (0.0, layers.max(1) as f64),
        y: (0.0, max_bits),
    };
    let mut s = f.open("Bit-width per layer", "layer index", "bits");
    let q = d.qualities.len().max(1) as f64;
    let group = f.px(1.0) - f.px(0.0);
    let bar = 0.8 * group / q;
    for (l, row) in d.bits.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            let x = f.px(l as f64) + 0.1 * group + j as f64 * bar;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                f.py(b as f64),
                f.py(0.0) - f.py(b as f64),
                PALETTE[j % PALETTE.len()]
            );
        }
        let path = d.paths[l].map(|p| p.as_str()).unwrap_or("");
        let _ = writeln!(
            s,
            "<title>layer {l} {path}</title><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{l}</text>",
            f.px(l as f64 + 0.5),
            f.h - f.margin + 28.0
        );
    }
    for (j, q) in d.qualities.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{}\">q{q}</text>",
            f.w - f.margin + 8.0,
            f.margin + 16.0 * (j + 1) as f64,
            PALETTE[j % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-epoch loss curve.
pub fn loss_svg(title: &str, losses: &[f64]) -> String {
    let (lo, hi) = losses
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let f = Frame {
        w: 560.0,
        h: 380.0,
        margin: 60.0,
        x: (0.0, (losses.len().max(2) - 1) as f64),
        y: padded(lo, hi),
    };
    let mut s = f.open(title, "epoch", "RD loss");
    let pts: Vec<String> = losses
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", f.px(i as f64), f.py(v)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
        pts.join(" "),
        PALETTE[0]
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).at(path)
}
