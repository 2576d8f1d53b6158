//! Confusion-based metrics, rank-based AUC and TP/FN overlays.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{check_same_dims, Plane};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const TP_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const FN_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const FP_COLOR: Rgb<u8> = Rgb([0, 0, 255]);
pub const TN_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

pub const REPORT_HEADER: &str = "image,se,sp,acc,auc,threshold,pixels";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN)`; `None` without positive pixels.
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `TN / (TN + FP)`; `None` without negative pixels.
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_inputs(prob: &Plane<f64>, label: &Plane<u8>, mask: Option<&Plane<u8>>) -> Result<()> {
    check_same_dims("label", prob, label)?;
    if let Some(m) = mask {
        check_same_dims("mask", prob, m)?;
    }
    Ok(())
}

/// `(score, is_positive)` for every in-mask pixel.
fn scored_pixels<'a>(
    prob: &'a Plane<f64>,
    label: &'a Plane<u8>,
    mask: Option<&'a Plane<u8>>,
) -> impl Iterator<Item = (f64, bool)> + 'a {
    prob.data()
        .iter()
        .zip(label.data())
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m.data()[*i] != 0))
        .map(|(_, (&p, &l))| (p, l != 0))
}

/// Confusion counts over in-mask pixels; a pixel is predicted positive when
/// its probability is at least `threshold`.
pub fn confusion(
    prob: &Plane<f64>,
    label: &Plane<u8>,
    mask: Option<&Plane<u8>>,
    threshold: f64,
) -> Result<ConfusionCounts> {
    check_inputs(prob, label, mask)?;
    let mut c = ConfusionCounts::default();
    for (p, positive) in scored_pixels(prob, label, mask) {
        match (p >= threshold, positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(c)
}

/// Mann-Whitney AUC with midranks for ties over `(score, is_positive)` pairs.
pub fn auc_from_scores(scored: &[(f64, bool)]) -> Result<f64> {
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateAuc { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));

    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scored[order[j]].0 == scored[order[i]].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        let pos_in_block = order[i..j].iter().filter(|&&k| scored[k].1).count();
        rank_sum += midrank * pos_in_block as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Area under the ROC curve over in-mask pixels.
pub fn auc(prob: &Plane<f64>, label: &Plane<u8>, mask: Option<&Plane<u8>>) -> Result<f64> {
    check_inputs(prob, label, mask)?;
    let scored: Vec<(f64, bool)> = scored_pixels(prob, label, mask).collect();
    auc_from_scores(&scored)
}

/// TP green, FN red, FP blue, TN and out-of-mask black.
pub fn render_overlay(
    prob: &Plane<f64>,
    label: &Plane<u8>,
    threshold: f64,
    mask: Option<&Plane<u8>>,
) -> Result<RgbImage> {
    check_inputs(prob, label, mask)?;
    let (h, w) = prob.dims();
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let inside = mask.is_none_or(|m| m.get(r, c) != 0);
            let color = match (inside, prob.get(r, c) >= threshold, label.get(r, c) != 0) {
                (false, _, _) => TN_COLOR,
                (true, true, true) => TP_COLOR,
                (true, false, true) => FN_COLOR,
                (true, true, false) => FP_COLOR,
                (true, false, false) => TN_COLOR,
            };
            img.put_pixel(c as u32, r as u32, color);
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub se: f64,
    pub sp: f64,
    pub acc: f64,
    pub auc: f64,
    pub threshold: f64,
    pub pixels: u64,
}

impl MetricsReport {
    pub fn from_parts(counts: &ConfusionCounts, auc: f64, threshold: f64) -> Result<Self> {
        let degenerate = || Error::DegenerateAuc {
            positives: (counts.tp + counts.fn_) as usize,
            negatives: (counts.tn + counts.fp) as usize,
        };
        Ok(Self {
            se: counts.sensitivity().ok_or_else(degenerate)?,
            sp: counts.specificity().ok_or_else(degenerate)?,
            acc: counts.accuracy().ok_or(Error::EmptyEvaluation)?,
            auc,
            threshold,
            pixels: counts.total(),
        })
    }

    pub fn evaluate(prob: &Plane<f64>, label: &Plane<u8>, mask: Option<&Plane<u8>>, threshold: f64) -> Result<Self> {
        let counts = confusion(prob, label, mask, threshold)?;
        Self::from_parts(&counts, auc(prob, label, mask)?, threshold)
    }

    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.se, self.sp, self.acc, self.auc, self.threshold, self.pixels
        )
    }
}

/// Metrics report text: header plus one row per named report.
pub fn report_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for (name, r) in rows {
        let _ = writeln!(out, "{}", r.csv_row(name));
    }
    out
}
