//! Detection and proposal evaluation: VOC matching, precision/recall, AP under
//! the 11-point (VOC07) and envelope-area (VOC12) rules, recall and average
//! recall over IoU 0.50:0.05:0.95, and confusion matrices with a background
//! row/column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aabb_of, rotated_iou, Aabb, OrientedBox};
use crate::postproc::{by_score_desc, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: OrientedBox,
    pub label: usize,
    /// Parsed from annotations, not used for scoring.
    pub difficult: bool,
}

impl GroundTruth {
    pub fn new(bbox: OrientedBox, label: usize) -> Self {
        Self {
            bbox,
            label,
            difficult: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Voc07,
    #[default]
    Voc12,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voc07" => Ok(Metric::Voc07),
            "voc12" => Ok(Metric::Voc12),
            _ => Err(Error::InvalidInput(format!("unknown metric `{s}` (voc07|voc12)"))),
        }
    }
}

/// IoU thresholds `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Outcome of greedy matching within one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in descending score order (ties by index).
    pub order: Vec<usize>,
    /// `tp[k]` for detection `order[k]`.
    pub tp: Vec<bool>,
    /// Ground truth claimed by `order[k]`, if any.
    pub matched_gt: Vec<Option<usize>>,
    pub unmatched_gts: Vec<usize>,
}

fn same_class(det: &Detection, gt: &GroundTruth) -> bool {
    det.label.is_none_or(|l| l == gt.label)
}

fn bounds(boxes: impl Iterator<Item = OrientedBox>) -> Result<Vec<Aabb>> {
    boxes.map(|b| aabb_of(&b)).collect()
}

/// Greedy matching by descending score: each detection takes the unclaimed
/// ground truth of its class with the highest IoU, and is a true positive iff
/// that IoU is at least `iou_thr`. Unlabelled detections match any class.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Result<MatchResult> {
    greedy_match(dets, gts, iou_thr, same_class)
}

fn greedy_match(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
    eligible: impl Fn(&Detection, &GroundTruth) -> bool,
) -> Result<MatchResult> {
    let order = by_score_desc(&dets.iter().map(|d| d.score).collect::<Vec<_>>());
    let gb = bounds(gts.iter().map(|g| g.bbox))?;
    let mut claimed = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(order.len());
    let mut matched_gt = Vec::with_capacity(order.len());
    for &di in &order {
        let d = &dets[di];
        let db = aabb_of(&d.bbox)?;
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if claimed[gi] || !eligible(d, g) || !db.intersects(&gb[gi]) {
                continue;
            }
            let iou = rotated_iou(&d.bbox, &g.bbox)?;
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= iou_thr => {
                claimed[gi] = true;
                tp.push(true);
                matched_gt.push(Some(gi));
            }
            _ => {
                tp.push(false);
                matched_gt.push(None);
            }
        }
    }
    let unmatched_gts = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    Ok(MatchResult {
        order,
        tp,
        matched_gt,
        unmatched_gts,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Cumulative precision and recall along a score-sorted TP/FP list. With no
/// ground truths recall is reported as zero.
pub fn pr_curve(tp_flags: &[bool], num_gt: usize) -> PrCurve {
    let mut curve = PrCurve::default();
    let mut tp = 0usize;
    for (k, &is_tp) in tp_flags.iter().enumerate() {
        tp += is_tp as usize;
        curve.precision.push(tp as f64 / (k + 1) as f64);
        curve
            .recall
            .push(if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 });
    }
    curve
}

/// 11-point AP: mean over recall levels `0, 0.1, ..., 1` of the best
/// precision at recall at least that level.
pub fn ap_voc07(curve: &PrCurve) -> f64 {
    let total: f64 = (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            curve
                .recall
                .iter()
                .zip(&curve.precision)
                .filter(|(rec, _)| **rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
        })
        .sum();
    total / 11.0
}

/// Area under the monotone (non-increasing) precision envelope.
pub fn ap_voc12(curve: &PrCurve) -> f64 {
    let mut mrec = Vec::with_capacity(curve.recall.len() + 2);
    let mut mpre = Vec::with_capacity(curve.recall.len() + 2);
    mrec.push(0.0);
    mpre.push(0.0);
    mrec.extend_from_slice(&curve.recall);
    mpre.extend_from_slice(&curve.precision);
    mrec.push(1.0);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    (1..mrec.len())
        .filter(|&i| mrec[i] != mrec[i - 1])
        .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
        .sum()
}

pub fn average_precision(curve: &PrCurve, metric: Metric) -> f64 {
    match metric {
        Metric::Voc07 => ap_voc07(curve),
        Metric::Voc12 => ap_voc12(curve),
    }
}

/// Best IoU of every ground truth against a proposal set.
pub fn best_ious(proposals: &[Detection], gts: &[OrientedBox]) -> Result<Vec<f64>> {
    let pb = bounds(proposals.iter().map(|p| p.bbox))?;
    gts.iter()
        .map(|g| {
            let gb = aabb_of(g)?;
            let mut best = 0.0f64;
            for (p, b) in proposals.iter().zip(&pb) {
                if b.intersects(&gb) {
                    best = best.max(rotated_iou(&p.bbox, g)?);
                }
            }
            Ok(best)
        })
        .collect()
}

/// Fraction of ground truths covered by some proposal at `iou >= iou_thr`.
/// Callers truncate `proposals` to the budget first.
pub fn recall_at(proposals: &[Detection], gts: &[OrientedBox], iou_thr: f64) -> Result<f64> {
    if gts.is_empty() {
        return Ok(0.0);
    }
    let best = best_ious(proposals, gts)?;
    Ok(best.iter().filter(|&&v| v >= iou_thr).count() as f64 / gts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallRow {
    pub budget: usize,
    /// Recall at each of [`iou_thresholds`].
    pub recall: Vec<f64>,
    pub ar: f64,
}

impl RecallRow {
    pub fn at(&self, thr: f64) -> f64 {
        let i = iou_thresholds()
            .iter()
            .position(|t| (t - thr).abs() < 1e-9)
            .expect("threshold on the 0.05 grid");
        self.recall[i]
    }
}

/// One image's proposals and ground truths.
#[derive(Debug, Clone, Copy)]
pub struct ProposalImage<'a> {
    pub proposals: &'a [Detection],
    pub gts: &'a [OrientedBox],
}

/// Recall over several images at each budget (top proposals by score per
/// image), pooled over all ground truths, plus its mean over
/// [`iou_thresholds`].
pub fn average_recall(images: &[ProposalImage<'_>], budgets: &[usize]) -> Result<Vec<RecallRow>> {
    let thrs = iou_thresholds();
    let total: usize = images.iter().map(|i| i.gts.len()).sum();
    budgets
        .iter()
        .map(|&budget| {
            let mut covered = [0usize; 10];
            for img in images {
                let order = by_score_desc(&img.proposals.iter().map(|d| d.score).collect::<Vec<_>>());
                let top: Vec<Detection> = order.into_iter().take(budget).map(|i| img.proposals[i]).collect();
                for best in best_ious(&top, img.gts)? {
                    for (c, t) in covered.iter_mut().zip(&thrs) {
                        *c += (best >= *t) as usize;
                    }
                }
            }
            let recall: Vec<f64> = covered
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            let ar = recall.iter().sum::<f64>() / recall.len() as f64;
            Ok(RecallRow { budget, recall, ar })
        })
        .collect()
}

/// Rows are ground-truth classes, columns predicted classes; index
/// `num_classes` is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes + 1]; num_classes + 1],
        }
    }

    pub fn bg(&self) -> usize {
        self.num_classes
    }

    pub fn add(&mut self, o: &ConfusionMatrix) {
        for (r, ro) in self.counts.iter_mut().zip(&o.counts) {
            for (c, co) in r.iter_mut().zip(ro) {
                *c += co;
            }
        }
    }

    /// Matched pairs whose predicted class differs from the true class, over
    /// all matched pairs.
    pub fn off_diagonal_fraction(&self) -> f64 {
        let n = self.num_classes;
        let (mut off, mut all) = (0u64, 0u64);
        for r in 0..n {
            for c in 0..n {
                all += self.counts[r][c];
                if r != c {
                    off += self.counts[r][c];
                }
            }
        }
        if all == 0 {
            0.0
        } else {
            off as f64 / all as f64
        }
    }
}

/// Drops detections below `score_thr`, matches the rest to ground truths
/// greedily by score with class-agnostic IoU, and tallies matched pairs as
/// (true, predicted); leftovers go to the background row or column.
pub fn confusion_matrix(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
    score_thr: f64,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= score_thr).copied().collect();
    for d in &kept {
        if d.label.is_none_or(|l| l >= num_classes) {
            return Err(Error::InvalidInput(format!("detection label {:?} outside 0..{num_classes}", d.label)));
        }
    }
    if let Some(g) = gts.iter().find(|g| g.label >= num_classes) {
        return Err(Error::InvalidInput(format!("gt label {} outside 0..{num_classes}", g.label)));
    }
    let m = greedy_match(&kept, gts, iou_thr, |_, _| true)?;
    let mut cm = ConfusionMatrix::new(num_classes);
    let bg = cm.bg();
    for (k, &di) in m.order.iter().enumerate() {
        let pred = kept[di].label.expect("checked above");
        match m.matched_gt[k] {
            Some(g) => cm.counts[gts[g].label][pred] += 1,
            None => cm.counts[bg][pred] += 1,
        }
    }
    for &g in &m.unmatched_gts {
        cm.counts[gts[g].label][bg] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default = "default_iou")]
    pub iou_thr: f64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_budgets")]
    pub ar_budgets: Vec<usize>,
    #[serde(default = "default_conf_score")]
    pub confusion_score_thr: f64,
}

fn default_iou() -> f64 {
    0.5
}

fn default_budgets() -> Vec<usize> {
    vec![300, 500, 1000]
}

fn default_conf_score() -> f64 {
    0.05
}

impl EvalConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            class_names: Vec::new(),
            iou_thr: default_iou(),
            metric: Metric::default(),
            ar_budgets: default_budgets(),
            confusion_score_thr: default_conf_score(),
        }
    }
}

/// One image's detections and ground truths.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageEval {
    pub dets: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub num_gt: usize,
    pub num_det: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` for classes without ground truths (excluded from the means).
    pub ap_voc07: Option<f64>,
    pub ap_voc12: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub iou_thr: f64,
    /// Mean AP of the selected metric at `iou_thr`.
    pub map: f64,
    pub map_voc07: f64,
    pub map_voc12: f64,
    pub map_75: f64,
    /// Selected-metric mAP averaged over IoU 0.50:0.05:0.95.
    pub map_50_95: f64,
    pub counts: Counts,
    pub classes: Vec<ClassReport>,
    pub recall: Vec<RecallRow>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

struct ClassStats {
    per_class: Vec<(usize, usize, Vec<(f64, bool)>)>,
}

/// Per-class (num_gt, num_det, [(score, tp)]) pooled over images in
/// (score desc, image, rank) order.
fn pooled_matches(images: &[ImageEval], num_classes: usize, iou_thr: f64) -> Result<ClassStats> {
    let mut per_class: Vec<(usize, usize, Vec<(f64, bool)>)> = vec![(0, 0, Vec::new()); num_classes];
    for img in images {
        for g in &img.gts {
            per_class
                .get_mut(g.label)
                .ok_or_else(|| Error::InvalidInput(format!("gt label {} outside 0..{num_classes}", g.label)))?
                .0 += 1;
        }
        let m = match_detections(&img.dets, &img.gts, iou_thr)?;
        for (k, &di) in m.order.iter().enumerate() {
            let d = &img.dets[di];
            let label = d
                .label
                .filter(|&l| l < num_classes)
                .ok_or_else(|| Error::InvalidInput(format!("detection label {:?} outside 0..{num_classes}", d.label)))?;
            per_class[label].1 += 1;
            per_class[label].2.push((d.score, m.tp[k]));
        }
    }
    for c in &mut per_class {
        // Stable: equal scores keep image order, then within-image rank.
        c.2.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    Ok(ClassStats { per_class })
}

fn mean_over_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

fn class_aps(stats: &ClassStats, metric: Metric) -> Vec<Option<f64>> {
    stats
        .per_class
        .iter()
        .map(|(num_gt, _, list)| {
            (*num_gt > 0).then(|| {
                let flags: Vec<bool> = list.iter().map(|x| x.1).collect();
                average_precision(&pr_curve(&flags, *num_gt), metric)
            })
        })
        .collect()
}

/// Full report over a set of images.
pub fn evaluate_dataset(images: &[ImageEval], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.num_classes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one class".into()));
    }
    let n = cfg.num_classes;
    let stats = pooled_matches(images, n, cfg.iou_thr)?;
    let ap07 = class_aps(&stats, Metric::Voc07);
    let ap12 = class_aps(&stats, Metric::Voc12);

    let mut counts = Counts::default();
    let classes: Vec<ClassReport> = stats
        .per_class
        .iter()
        .enumerate()
        .map(|(c, (num_gt, num_det, list))| {
            let tp = list.iter().filter(|x| x.1).count();
            counts.tp += tp;
            counts.fp += num_det - tp;
            counts.fn_ += num_gt - tp;
            ClassReport {
                class: c,
                name: cfg.class_names.get(c).cloned(),
                num_gt: *num_gt,
                num_det: *num_det,
                tp,
                fp: num_det - tp,
                fn_: num_gt - tp,
                ap_voc07: ap07[c],
                ap_voc12: ap12[c],
            }
        })
        .collect();

    let (map_voc07, map_voc12) = (mean_over_present(&ap07), mean_over_present(&ap12));
    let map = match cfg.metric {
        Metric::Voc07 => map_voc07,
        Metric::Voc12 => map_voc12,
    };
    let mut map_by_thr = Vec::with_capacity(10);
    for t in iou_thresholds() {
        let s = pooled_matches(images, n, t)?;
        map_by_thr.push(mean_over_present(&class_aps(&s, cfg.metric)));
    }
    let map_75 = map_by_thr[5];
    let map_50_95 = map_by_thr.iter().sum::<f64>() / map_by_thr.len() as f64;

    let boxes: Vec<Vec<OrientedBox>> = images.iter().map(|i| i.gts.iter().map(|g| g.bbox).collect()).collect();
    let prop_images: Vec<ProposalImage<'_>> = images
        .iter()
        .zip(&boxes)
        .map(|(i, b)| ProposalImage {
            proposals: &i.dets,
            gts: b,
        })
        .collect();
    let recall = average_recall(&prop_images, &cfg.ar_budgets)?;

    let mut confusion = ConfusionMatrix::new(n);
    for img in images {
        confusion.add(&confusion_matrix(&img.dets, &img.gts, cfg.iou_thr, cfg.confusion_score_thr, n)?);
    }

    Ok(EvalReport {
        metric: cfg.metric,
        iou_thr: cfg.iou_thr,
        map,
        map_voc07,
        map_voc12,
        map_75,
        map_50_95,
        counts,
        classes,
        recall,
        confusion,
    })
}
