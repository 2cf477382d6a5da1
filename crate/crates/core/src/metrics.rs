//! Threshold segmentation scores of a reconstruction against a ground-truth mask.
//!
//! A pixel is predicted positive when its value is `>= tau`. Curves are swept
//! over the distinct image values in descending order, preceded by a `+inf`
//! anchor at which nothing is positive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::model::GroundTruthMask;

/// Default share of image rows, counted from the bottom, left out of scoring.
pub const DEFAULT_BOTTOM_EXCLUSION: f64 = 0.1;

/// Pixels left out of the evaluation: a band of rows at the bottom (largest depth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exclusion {
    pub bottom_fraction: f64,
}

impl Default for Exclusion {
    fn default() -> Self {
        Self {
            bottom_fraction: DEFAULT_BOTTOM_EXCLUSION,
        }
    }
}

impl Exclusion {
    pub fn none() -> Self {
        Self {
            bottom_fraction: 0.0,
        }
    }

    pub fn bottom(fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "exclusion fraction {fraction} outside [0, 1)"
            )));
        }
        Ok(Self {
            bottom_fraction: fraction,
        })
    }

    pub fn excluded_rows(&self, ny: usize) -> usize {
        ((self.bottom_fraction * ny as f64).round() as usize).min(ny)
    }

    pub fn excluded_pixels(&self, nx: usize, ny: usize) -> usize {
        nx * self.excluded_rows(ny)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, 0.0)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn, 0.0)
    }

    /// Precision; 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, 1.0)
    }

    pub fn recall(&self) -> f64 {
        self.tpr()
    }
}

fn ratio(a: usize, b: usize, empty: f64) -> f64 {
    if b == 0 {
        empty
    } else {
        a as f64 / b as f64
    }
}

/// `tp / (tp + (fp + fn) / 2)`, defined as 0 when all three counts are zero.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let den = c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64;
    if den == 0.0 {
        0.0
    } else {
        c.tp as f64 / den
    }
}

/// `(value, is_defect)` for every evaluated pixel.
fn scored_pixels(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    exclusion: &Exclusion,
) -> Result<Vec<(f64, bool)>> {
    image.grid.ensure_matches(&truth.grid)?;
    let g = image.grid;
    let rows = g.ny - exclusion.excluded_rows(g.ny);
    let mut out = Vec::with_capacity(rows * g.nx);
    for j in 0..rows {
        for i in 0..g.nx {
            let k = g.index(i, j);
            out.push((image.values[k], truth.mask[k] != 0));
        }
    }
    Ok(out)
}

pub fn confusion(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    tau: f64,
    exclusion: &Exclusion,
) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for (v, t) in scored_pixels(image, truth, exclusion)? {
        match (v >= tau, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Confusion counts at every candidate threshold, starting with the `+inf` anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    pub counts: Vec<ConfusionCounts>,
}

impl ThresholdSweep {
    pub fn new(image: &ImageGrid, truth: &GroundTruthMask, exclusion: &Exclusion) -> Result<Self> {
        let mut px = scored_pixels(image, truth, exclusion)?;
        let positives = px.iter().filter(|p| p.1).count();
        let negatives = px.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::SingleClass {
                positives,
                negatives,
            });
        }
        px.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut thresholds = vec![f64::INFINITY];
        let mut counts = vec![ConfusionCounts {
            tp: 0,
            fp: 0,
            fn_: positives,
            tn: negatives,
        }];
        let (mut tp, mut fp) = (0, 0);
        let mut k = 0;
        while k < px.len() {
            let v = px[k].0;
            while k < px.len() && px[k].0 == v {
                if px[k].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                k += 1;
            }
            thresholds.push(v);
            counts.push(ConfusionCounts {
                tp,
                fp,
                fn_: positives - tp,
                tn: negatives - fp,
            });
        }
        Ok(Self { thresholds, counts })
    }

    /// Real thresholds (the anchor excluded) with their counts.
    fn candidates(&self) -> impl Iterator<Item = (f64, &ConfusionCounts)> {
        self.thresholds.iter().copied().zip(&self.counts).skip(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// `(FPR, TPR)` per threshold.
pub fn roc_curve(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    exclusion: &Exclusion,
) -> Result<Vec<CurvePoint>> {
    Ok(roc_from(&ThresholdSweep::new(image, truth, exclusion)?))
}

/// `(recall, precision)` per threshold.
pub fn prc_curve(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    exclusion: &Exclusion,
) -> Result<Vec<CurvePoint>> {
    Ok(prc_from(&ThresholdSweep::new(image, truth, exclusion)?))
}

pub fn roc_from(s: &ThresholdSweep) -> Vec<CurvePoint> {
    s.thresholds
        .iter()
        .zip(&s.counts)
        .map(|(&threshold, c)| CurvePoint {
            threshold,
            x: c.fpr(),
            y: c.tpr(),
        })
        .collect()
}

pub fn prc_from(s: &ThresholdSweep) -> Vec<CurvePoint> {
    s.thresholds
        .iter()
        .zip(&s.counts)
        .map(|(&threshold, c)| CurvePoint {
            threshold,
            x: c.recall(),
            y: c.precision(),
        })
        .collect()
}

fn trapezoid(curve: &[CurvePoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * 0.5 * (w[1].y + w[0].y))
        .sum()
}

pub fn auroc(curve: &[CurvePoint]) -> f64 {
    trapezoid(curve)
}

pub fn auprc(curve: &[CurvePoint]) -> f64 {
    trapezoid(curve)
}

/// Finite threshold minimising `dist`; ties go to the larger threshold.
fn argmin_threshold(curve: &[CurvePoint], dist: impl Fn(&CurvePoint) -> f64) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for p in curve.iter().filter(|p| p.threshold.is_finite()) {
        let d = dist(p);
        // curves run from high to low thresholds, so keep the first minimum
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, p.threshold));
        }
    }
    best.map_or(f64::INFINITY, |b| b.1)
}

/// Threshold closest to the ideal ROC corner `(0, 1)`.
pub fn tau_roc(curve: &[CurvePoint]) -> f64 {
    argmin_threshold(curve, |p| p.x.hypot(1.0 - p.y))
}

/// Threshold closest to `(recall, precision) = (1, 1)`.
pub fn tau_prc(curve: &[CurvePoint]) -> f64 {
    argmin_threshold(curve, |p| (1.0 - p.x).hypot(1.0 - p.y))
}

/// Threshold with the highest F1 and that F1.
pub fn tau_f1(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    exclusion: &Exclusion,
) -> Result<(f64, f64)> {
    Ok(best_f1(&ThresholdSweep::new(image, truth, exclusion)?))
}

pub fn best_f1(s: &ThresholdSweep) -> (f64, f64) {
    let mut best = (f64::INFINITY, -1.0);
    for (t, c) in s.candidates() {
        let f = f1(c);
        if f > best.1 {
            best = (t, f);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub f1_max: f64,
    pub tau_roc: f64,
    pub tau_prc: f64,
    pub tau_f1: f64,
    pub f1_at_tau_roc: f64,
    pub f1_at_tau_prc: f64,
    pub roc: Vec<CurvePoint>,
    pub prc: Vec<CurvePoint>,
    pub exclusion: Exclusion,
    pub evaluated_pixels: usize,
}

/// Score an image after min-max normalisation to `[0, 1]`.
pub fn evaluate(
    image: &ImageGrid,
    truth: &GroundTruthMask,
    exclusion: &Exclusion,
) -> Result<EvalReport> {
    let norm = image.normalized();
    let sweep = ThresholdSweep::new(&norm, truth, exclusion)?;
    let roc = roc_from(&sweep);
    let prc = prc_from(&sweep);
    let (tau_f1, f1_max) = best_f1(&sweep);
    let tr = tau_roc(&roc);
    let tp = tau_prc(&prc);
    let f1_at = |tau: f64| {
        sweep
            .candidates()
            .find(|(t, _)| *t == tau)
            .map_or(0.0, |(_, c)| f1(c))
    };
    Ok(EvalReport {
        auroc: auroc(&roc),
        auprc: auprc(&prc),
        f1_max,
        tau_roc: tr,
        tau_prc: tp,
        tau_f1,
        f1_at_tau_roc: f1_at(tr),
        f1_at_tau_prc: f1_at(tp),
        evaluated_pixels: sweep.counts[0].total(),
        roc,
        prc,
        exclusion: *exclusion,
    })
}

impl EvalReport {
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("auroc", self.auroc),
            ("auprc", self.auprc),
            ("f1_max", self.f1_max),
            ("tau_roc", self.tau_roc),
            ("tau_prc", self.tau_prc),
            ("tau_f1", self.tau_f1),
            ("f1_at_tau_roc", self.f1_at_tau_roc),
            ("f1_at_tau_prc", self.f1_at_tau_prc),
            ("exclude_bottom", self.exclusion.bottom_fraction),
            ("evaluated_pixels", self.evaluated_pixels as f64),
        ]
    }

    /// `scenario,method,metric,value` rows.
    pub fn to_csv(&self, scenario: &str, method: &str) -> String {
        let mut s = String::from("scenario,method,metric,value\n");
        for (k, v) in self.scalars() {
            let _ = writeln!(s, "{scenario},{method},{k},{v}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path, scenario: &str, method: &str) -> Result<()> {
        fs::write(path, self.to_csv(scenario, method)).map_err(|e| Error::io(path, e))
    }
}

pub fn curve_csv(curve: &[CurvePoint], x_name: &str, y_name: &str) -> String {
    let mut s = format!("threshold,{x_name},{y_name}\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.x, p.y);
    }
    s
}

/// One scored reconstruction for the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub method: String,
    pub metrics: Vec<(String, f64)>,
}

impl ReportRow {
    pub fn parse_csv(text: &str) -> Result<ReportRow> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty metrics file"))?;
        if header.trim() != "scenario,method,metric,value" {
            return Err(Error::invalid(format!(
                "unexpected metrics header '{header}'"
            )));
        }
        let mut row: Option<ReportRow> = None;
        for l in lines {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::invalid(format!("malformed metrics line '{l}'")));
            }
            let v: f64 = f[3]
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad metric value '{}'", f[3])))?;
            let r = row.get_or_insert_with(|| ReportRow {
                scenario: f[0].to_string(),
                method: f[1].to_string(),
                metrics: Vec::new(),
            });
            if r.scenario != f[0] || r.method != f[1] {
                return Err(Error::invalid("metrics file mixes scenarios or methods"));
            }
            r.metrics.push((f[2].to_string(), v));
        }
        row.ok_or_else(|| Error::invalid("metrics file has no rows"))
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == metric)
            .map(|(_, v)| *v)
    }
}

/// Metrics compared across methods (higher is better).
pub const COMPARED_METRICS: [&str; 3] = ["f1_max", "auroc", "auprc"];

/// Table with one row per metric and method and one column pair per
/// scenario: the value and a `*` marker on the best method for that metric.
/// Missing combinations are left blank.
pub fn comparison_table(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("no reports to compare"));
    }
    let mut scenarios: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let value = |s: &str, m: &str, k: &str| {
        rows.iter()
            .find(|r| r.scenario == s && r.method == m)
            .and_then(|r| r.get(k))
    };
    let mut out = String::from("metric,method");
    for s in &scenarios {
        let _ = write!(out, ",{s},{s}_best");
    }
    out.push('\n');
    for k in COMPARED_METRICS {
        for m in &methods {
            let _ = write!(out, "{k},{m}");
            for s in &scenarios {
                let best = methods
                    .iter()
                    .filter_map(|mm| value(s, mm, k))
                    .fold(f64::NEG_INFINITY, f64::max);
                match value(s, m, k) {
                    Some(v) => {
                        let mark = if v == best { "*" } else { "" };
                        let _ = write!(out, ",{v:.4},{mark}");
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}
