//! Pixel and patch scores, precision-recall curves and threshold selection.
//!
//! Counts are micro-aggregated: confusion counts are pooled over every map of
//! an evaluation set before any ratio is taken.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with crack as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Confusion {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl std::ops::AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    match v.iter().position(|&x| x > 1) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{name} must be binary (0/1), found {} at {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("maps differ in size: {a} vs {b} pixels")));
    }
    Ok(())
}

pub fn confusion_counts(pred: &[u8], gt: &[u8]) -> Result<Confusion> {
    check_same_len(pred.len(), gt.len())?;
    check_binary("prediction", pred)?;
    check_binary("ground truth", gt)?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall, F1 and foreground IoU; any zero denominator gives 0.
pub fn pixel_scores(c: &Confusion) -> PixelScores {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    PixelScores {
        precision,
        recall,
        f1: f1_score(precision, recall),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
    }
}

/// A probability map with its ground truth, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMap {
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f32>,
    pub gt: Vec<u8>,
}

impl ScoredMap {
    pub fn new(height: usize, width: usize, probs: Vec<f32>, gt: Vec<u8>) -> Result<Self> {
        check_same_len(probs.len(), height * width)?;
        check_same_len(gt.len(), height * width)?;
        check_binary("ground truth", &gt)?;
        Ok(Self {
            height,
            width,
            probs,
            gt,
        })
    }

    pub fn binarize(&self, threshold: f64) -> Vec<u8> {
        binarize(&self.probs, threshold)
    }
}

/// `1` where `p >= threshold`.
pub fn binarize(probs: &[f32], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(f64::from(p) >= threshold)).collect()
}

/// The thresholds 0.01, 0.02, …, 0.99.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Probabilities split by ground-truth class and sorted, so the number of
/// positives at any threshold is one binary search.
struct SortedScores {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl SortedScores {
    fn new(maps: &[ScoredMap]) -> Self {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for m in maps {
            for (&p, &g) in m.probs.iter().zip(&m.gt) {
                if g == 1 {
                    pos.push(f64::from(p));
                } else {
                    neg.push(f64::from(p));
                }
            }
        }
        pos.sort_by(f64::total_cmp);
        neg.sort_by(f64::total_cmp);
        Self { pos, neg }
    }

    fn confusion(&self, t: f64) -> Confusion {
        let at_least = |v: &[f64]| (v.len() - v.partition_point(|&p| p < t)) as u64;
        let tp = at_least(&self.pos);
        let fp = at_least(&self.neg);
        Confusion {
            tp,
            fp,
            fn_: self.pos.len() as u64 - tp,
            tn: self.neg.len() as u64 - fp,
        }
    }
}

fn check_grid(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("threshold list is empty".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

/// Pooled confusion counts at every threshold.
pub fn confusion_sweep(maps: &[ScoredMap], thresholds: &[f64]) -> Result<Vec<Confusion>> {
    check_grid(thresholds)?;
    let s = SortedScores::new(maps);
    Ok(thresholds.iter().map(|&t| s.confusion(t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per threshold, in threshold order.
pub fn pr_curve(maps: &[ScoredMap], thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    let sweep = confusion_sweep(maps, thresholds)?;
    Ok(thresholds
        .iter()
        .zip(sweep)
        .map(|(&threshold, c)| {
            let s = pixel_scores(&c);
            PrPoint {
                threshold,
                recall: s.recall,
                precision: s.precision,
            }
        })
        .collect())
}

/// Trapezoidal area under a precision-recall curve.
///
/// Points are ordered by recall (ties: higher precision first). Points with
/// both recall and precision zero carry no curve information and are
/// dropped. The curve is extended flat to recall 0 at the precision of its
/// first point.
pub fn auprc(points: &[PrPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "AUPRC needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.recall > 0.0 || p.precision > 0.0)
        .map(|p| (p.recall, p.precision))
        .collect();
    if pts.is_empty() {
        return Ok(0.0);
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = pts[0].0 * pts[0].1;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    Ok(area.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Grid threshold with the highest pooled F1; the smallest wins ties.
pub fn iterative_threshold(maps: &[ScoredMap], grid: &[f64]) -> Result<ThresholdChoice> {
    let sweep = confusion_sweep(maps, grid)?;
    let mut best = ThresholdChoice {
        threshold: grid[0],
        f1: pixel_scores(&sweep[0]).f1,
    };
    for (&t, c) in grid.iter().zip(&sweep).skip(1) {
        let f1 = pixel_scores(c).f1;
        if f1 > best.f1 {
            best = ThresholdChoice { threshold: t, f1 };
        }
    }
    Ok(best)
}

/// Patch-level evaluation rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionRule {
    pub patch: usize,
    /// Minimum crack share of a patch for it to count as a crack patch.
    pub gt_fraction: f64,
    /// Minimum share of a patch's crack pixels that must be predicted.
    pub detect_fraction: f64,
}

impl Default for RegionRule {
    fn default() -> Self {
        Self {
            patch: 32,
            gt_fraction: 0.05,
            detect_fraction: 0.5,
        }
    }
}

// `count >= fraction * total`, inclusive at the boundary despite rounding in
// the product.
fn at_least(count: usize, fraction: f64, total: usize) -> bool {
    let need = fraction * total as f64;
    count as f64 >= need - 1e-9 * need.max(1.0)
}

/// Patch confusion counts for one binary prediction.
///
/// A patch is a crack patch when at least `gt_fraction` of its pixels are
/// crack. It is predicted positive when at least `detect_fraction` of its
/// crack pixels are predicted; a patch with no crack pixels is predicted
/// positive when at least `gt_fraction` of its pixels are predicted. Border
/// patches use their actual pixel count.
pub fn region_confusion(pred: &[u8], gt: &[u8], height: usize, width: usize, rule: &RegionRule) -> Result<Confusion> {
    check_same_len(pred.len(), height * width)?;
    check_same_len(gt.len(), height * width)?;
    check_binary("prediction", pred)?;
    check_binary("ground truth", gt)?;
    if rule.patch == 0 || rule.patch > height || rule.patch > width {
        return Err(Error::InvalidArgument(format!(
            "patch size {} does not fit a {height}×{width} map",
            rule.patch
        )));
    }
    let mut c = Confusion::default();
    for r0 in (0..height).step_by(rule.patch) {
        for c0 in (0..width).step_by(rule.patch) {
            let (r1, c1) = ((r0 + rule.patch).min(height), (c0 + rule.patch).min(width));
            let n = (r1 - r0) * (c1 - c0);
            let (mut g, mut p, mut hit) = (0, 0, 0);
            for r in r0..r1 {
                for col in c0..c1 {
                    let i = r * width + col;
                    g += usize::from(gt[i]);
                    p += usize::from(pred[i]);
                    hit += usize::from(gt[i] & pred[i]);
                }
            }
            let truth = at_least(g, rule.gt_fraction, n);
            let predicted = if g > 0 {
                at_least(hit, rule.detect_fraction, g)
            } else {
                at_least(p, rule.gt_fraction, n)
            };
            match (predicted, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// Region precision, recall and F1 pooled over several maps at one threshold.
pub fn region_scores(maps: &[ScoredMap], threshold: f64, rule: &RegionRule) -> Result<(Confusion, PixelScores)> {
    let mut total = Confusion::default();
    for m in maps {
        total += region_confusion(&m.binarize(threshold), &m.gt, m.height, m.width, rule)?;
    }
    Ok((total, pixel_scores(&total)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub region_precision: f64,
    pub region_recall: f64,
    pub region_f1: f64,
    pub auprc: f64,
    pub confusion: Confusion,
    pub curve: Vec<PrPoint>,
}

pub const METRICS_SCHEMA: &str = "scnet-metrics-v1";

impl MetricReport {
    /// Picks the threshold on `grid` and fills every score at it.
    pub fn compute(maps: &[ScoredMap], grid: &[f64], rule: &RegionRule) -> Result<Self> {
        let best = iterative_threshold(maps, grid)?;
        Self::at_threshold(maps, grid, best.threshold, rule)
    }

    /// Scores at a fixed threshold; the curve still spans `grid`.
    pub fn at_threshold(maps: &[ScoredMap], grid: &[f64], threshold: f64, rule: &RegionRule) -> Result<Self> {
        let curve = pr_curve(maps, grid)?;
        let confusion = SortedScores::new(maps).confusion(threshold);
        let px = pixel_scores(&confusion);
        let (_, region) = region_scores(maps, threshold, rule)?;
        Ok(Self {
            threshold,
            precision: px.precision,
            recall: px.recall,
            f1: px.f1,
            iou: px.iou,
            region_precision: region.precision,
            region_recall: region.recall,
            region_f1: region.f1,
            auprc: auprc(&curve)?,
            confusion,
            curve,
        })
    }

    /// `metrics.csv`: a header and one row.
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
        w.write_record([
            "schema",
            "threshold",
            "precision",
            "recall",
            "f1",
            "iou",
            "region_precision",
            "region_recall",
            "region_f1",
            "auprc",
            "tp",
            "fp",
            "fn",
            "tn",
        ])
        .map_err(io)?;
        let c = &self.confusion;
        w.write_record([
            METRICS_SCHEMA.to_string(),
            self.threshold.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.f1.to_string(),
            self.iou.to_string(),
            self.region_precision.to_string(),
            self.region_recall.to_string(),
            self.region_f1.to_string(),
            self.auprc.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
        ])
        .map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `prc.csv`: `threshold,recall,precision`.
    pub fn write_prc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
        w.write_record(["threshold", "recall", "precision"]).map_err(io)?;
        for p in &self.curve {
            w.write_record([p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads back a file written by [`write_metrics_csv`](Self::write_metrics_csv)
    /// together with its `prc.csv` sibling if present.
    pub fn read_csv(metrics: &Path, prc: Option<&Path>) -> Result<Self> {
        let bad = |why: String| Error::Data(format!("{}: {why}", metrics.display()));
        let mut r = csv::Reader::from_path(metrics).map_err(|e| bad(e.to_string()))?;
        let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        let row = r
            .records()
            .next()
            .ok_or_else(|| bad("no data row".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let field = |name: &str| -> Result<&str> {
            headers
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .ok_or_else(|| bad(format!("missing column `{name}`")))
        };
        if field("schema")? != METRICS_SCHEMA {
            return Err(bad(format!("unsupported schema `{}`", field("schema")?)));
        }
        let real = |name: &str| -> Result<f64> { field(name)?.parse().map_err(|_| bad(format!("bad `{name}`"))) };
        let int = |name: &str| -> Result<u64> { field(name)?.parse().map_err(|_| bad(format!("bad `{name}`"))) };
        let mut curve = Vec::new();
        if let Some(prc) = prc {
            let bad = |why: String| Error::Data(format!("{}: {why}", prc.display()));
            let mut r = csv::Reader::from_path(prc).map_err(|e| bad(e.to_string()))?;
            for rec in r.records() {
                let rec = rec.map_err(|e| bad(e.to_string()))?;
                let get = |i: usize| -> Result<f64> {
                    rec.get(i)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("malformed row".into()))
                };
                curve.push(PrPoint {
                    threshold: get(0)?,
                    recall: get(1)?,
                    precision: get(2)?,
                });
            }
        }
        Ok(Self {
            threshold: real("threshold")?,
            precision: real("precision")?,
            recall: real("recall")?,
            f1: real("f1")?,
            iou: real("iou")?,
            region_precision: real("region_precision")?,
            region_recall: real("region_recall")?,
            region_f1: real("region_f1")?,
            auprc: real("auprc")?,
            confusion: Confusion {
                tp: int("tp")?,
                fp: int("fp")?,
                fn_: int("fn")?,
                tn: int("tn")?,
            },
            curve,
        })
    }
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Each model's share (percent) of the pooled TP, FP and FN counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorShare {
    pub model: String,
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

/// Shares are rounded to two decimals; a count that is zero for every model
/// is split evenly.
pub fn error_breakdown(reports: &[(String, Confusion)]) -> Result<Vec<ErrorShare>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("error breakdown needs at least one report".into()));
    }
    let k = reports.len() as f64;
    let share = |get: fn(&Confusion) -> u64, c: &Confusion| {
        let total: u64 = reports.iter().map(|(_, c)| get(c)).sum();
        let s = if total == 0 {
            100.0 / k
        } else {
            100.0 * get(c) as f64 / total as f64
        };
        (s * 100.0).round() / 100.0
    };
    Ok(reports
        .iter()
        .map(|(name, c)| ErrorShare {
            model: name.clone(),
            tp: share(|c| c.tp, c),
            fp: share(|c| c.fp, c),
            fn_: share(|c| c.fn_, c),
        })
        .collect())
}

pub fn write_error_breakdown(path: &Path, rows: &[ErrorShare]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    w.write_record(["model", "tp_share", "fp_share", "fn_share"]).map_err(io)?;
    for r in rows {
        w.write_record([r.model.clone(), format!("{:.2}", r.tp), format!("{:.2}", r.fp), format!("{:.2}", r.fn_)])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a text summary line, used by the CLI.
pub fn summary_line(out: &mut impl Write, name: &str, r: &MetricReport) -> std::io::Result<()> {
    writeln!(
        out,
        "{name}: t*={:.2} P={:.4} R={:.4} F1={:.4} IoU={:.4} regionF1={:.4} AUPRC={:.4}",
        r.threshold, r.precision, r.recall, r.f1, r.iou, r.region_f1, r.auprc
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(probs: &[f32], gt: &[u8]) -> Vec<ScoredMap> {
        vec![ScoredMap::new(1, probs.len(), probs.to_vec(), gt.to_vec()).unwrap()]
    }

    #[test]
    fn two_by_two_confusion() {
        let c = confusion_counts(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(c, Confusion { tp: 1, fp: 0, fn_: 1, tn: 2 });
        let s = pixel_scores(&c);
        assert_eq!((s.precision, s.recall, s.iou), (1.0, 0.5, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_identities() {
        let gt = [1, 0, 1, 1, 0];
        let c = confusion_counts(&gt, &gt).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv: Vec<u8> = gt.iter().map(|v| 1 - v).collect();
        let c = confusion_counts(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion_counts(&[2], &[1]).is_err());
        assert!(confusion_counts(&[1, 0], &[1]).is_err());
    }

    #[test]
    fn zero_counts_score_zero_and_perfect_scores_one() {
        assert_eq!(pixel_scores(&Confusion::default()), PixelScores::default());
        let s = pixel_scores(&Confusion { tp: 3, fp: 0, fn_: 0, tn: 9 });
        assert_eq!((s.precision, s.recall, s.f1, s.iou), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn curve_endpoints() {
        let maps = single(&[0.3, 0.4, 0.6, 0.7], &[0, 1, 0, 1]);
        let pts = pr_curve(&maps, &[0.1, 0.9]).unwrap();
        assert_eq!((pts[0].recall, pts[0].precision), (1.0, 0.5));
        assert_eq!((pts[1].recall, pts[1].precision), (0.0, 0.0));
        let sep = single(&[0.1, 0.9], &[0, 1]);
        let pts = pr_curve(&sep, &default_grid()).unwrap();
        assert!(pts.iter().any(|p| p.recall == 1.0 && p.precision == 1.0));
        assert!(pr_curve(&maps, &[]).is_err());
        assert!(pr_curve(&maps, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn auprc_closed_forms() {
        let pt = |recall, precision| PrPoint {
            threshold: 0.0,
            recall,
            precision,
        };
        let flat: Vec<_> = (0..=10).map(|i| pt(i as f64 / 10.0, 0.3)).collect();
        assert!((auprc(&flat).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(auprc(&[pt(0.0, 1.0), pt(1.0, 0.0)]).unwrap(), 0.5);
        assert_eq!(auprc(&[pt(0.5, 1.0), pt(1.0, 1.0)]).unwrap(), 1.0);
        assert!(auprc(&[pt(1.0, 1.0)]).is_err());
    }

    #[test]
    fn threshold_tie_break_is_smallest() {
        let maps = single(&[0.2, 0.6, 0.8], &[0, 1, 1]);
        let best = iterative_threshold(&maps, &default_grid()).unwrap();
        assert_eq!(best.threshold, 0.21);
        assert_eq!(best.f1, 1.0);
        let empty = single(&[0.2, 0.6, 0.8], &[0, 0, 0]);
        let best = iterative_threshold(&empty, &default_grid()).unwrap();
        assert_eq!((best.threshold, best.f1), (0.01, 0.0));
    }

    fn patch_with(gt_pixels: usize, pred_pixels: usize) -> (Vec<u8>, Vec<u8>) {
        let gt: Vec<u8> = (0..1024).map(|i| u8::from(i < gt_pixels)).collect();
        let pred: Vec<u8> = (0..1024).map(|i| u8::from(i < pred_pixels)).collect();
        (pred, gt)
    }

    #[test]
    fn region_gt_rule_boundary() {
        let rule = RegionRule::default();
        let (pred, gt) = patch_with(52, 52);
        assert_eq!(region_confusion(&pred, &gt, 32, 32, &rule).unwrap().tp, 1);
        let (pred, gt) = patch_with(51, 0);
        assert_eq!(region_confusion(&pred, &gt, 32, 32, &rule).unwrap().tn, 1);
        // 20×20 border patch: exactly 5% is 20 pixels.
        let gt: Vec<u8> = (0..400).map(|i| u8::from(i < 20)).collect();
        let pred: Vec<u8> = (0..400).map(|i| u8::from(i < 10)).collect();
        let rule = RegionRule { patch: 20, ..rule };
        assert_eq!(region_confusion(&pred, &gt, 20, 20, &rule).unwrap().tp, 1, "50% detection is inclusive");
    }

    #[test]
    fn region_false_positive_patch_needs_five_percent() {
        let rule = RegionRule::default();
        let (pred, gt) = patch_with(0, 52);
        assert_eq!(region_confusion(&pred, &gt, 32, 32, &rule).unwrap().fp, 1);
        let (pred, gt) = patch_with(0, 51);
        assert_eq!(region_confusion(&pred, &gt, 32, 32, &rule).unwrap().tn, 1);
        assert!(region_confusion(&pred, &gt, 16, 64, &RegionRule { patch: 32, ..rule }).is_err());
    }

    #[test]
    fn breakdown_shares() {
        let c = Confusion { tp: 5, fp: 2, fn_: 1, tn: 0 };
        let one = error_breakdown(&[("a".into(), c)]).unwrap();
        assert_eq!((one[0].tp, one[0].fp, one[0].fn_), (100.0, 100.0, 100.0));
        let two = error_breakdown(&[("a".into(), c), ("b".into(), c)]).unwrap();
        assert!(two.iter().all(|r| r.tp == 50.0 && r.fp == 50.0 && r.fn_ == 50.0));
        let three = error_breakdown(&[("a".into(), c), ("b".into(), c), ("c".into(), c)]).unwrap();
        let sum: f64 = three.iter().map(|r| r.tp).sum();
        assert!((sum - 100.0).abs() <= 0.01 + 1e-9);
        assert!(error_breakdown(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let maps = single(&[0.1, 0.8, 0.4, 0.9], &[0, 1, 0, 1]);
        let maps = vec![ScoredMap::new(2, 2, maps[0].probs.clone(), maps[0].gt.clone()).unwrap()];
        let rule = RegionRule { patch: 2, ..Default::default() };
        let r = MetricReport::compute(&maps, &default_grid(), &rule).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (m, p) = (dir.path().join("metrics.csv"), dir.path().join("prc.csv"));
        r.write_metrics_csv(&m).unwrap();
        r.write_prc_csv(&p).unwrap();
        let back = MetricReport::read_csv(&m, Some(&p)).unwrap();
        assert_eq!(back, r);
    }
}
