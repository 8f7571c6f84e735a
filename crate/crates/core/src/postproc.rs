//! Greedy NMS (rotated and horizontal) and proposal selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aabb_of, rotated_iou, Aabb, OrientedBox};

/// Default IoU threshold for class-agnostic proposal NMS.
pub const PROPOSAL_NMS_IOU: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub score: f64,
    /// `None` for class-agnostic proposals.
    pub label: Option<usize>,
}

impl Detection {
    pub fn new(bbox: OrientedBox, score: f64, label: Option<usize>) -> Self {
        Self { bbox, score, label }
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if !self.score.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite score {}", self.score)));
        }
        Ok(())
    }
}

/// Score descending, then original index ascending.
pub fn by_score_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    by_score_desc(&dets.iter().map(|d| d.score).collect::<Vec<_>>())
}

fn check_thr(iou_thr: f64) -> Result<()> {
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(Error::InvalidInput(format!("IoU threshold {iou_thr} not in (0, 1)")));
    }
    Ok(())
}

/// Greedy suppression over `order` using a precomputed AABB reject: pairs
/// whose bounding boxes do not touch cannot overlap.
fn greedy(
    dets: &[Detection],
    iou_thr: f64,
    overlap: impl Fn(usize, usize) -> Result<f64>,
) -> Result<Vec<usize>> {
    check_thr(iou_thr)?;
    for d in dets {
        d.validate()?;
    }
    let bounds: Vec<Aabb> = dets.iter().map(|d| aabb_of(&d.bbox)).collect::<Result<_>>()?;
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        let mut suppressed = false;
        for &k in &kept {
            if bounds[k].intersects(&bounds[i]) && overlap(k, i)? > iou_thr {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Kept indices in (score desc, index asc) order; surviving pairs have
/// rotated IoU `<= iou_thr`.
pub fn rotated_nms(dets: &[Detection], iou_thr: f64) -> Result<Vec<usize>> {
    greedy(dets, iou_thr, |a, b| rotated_iou(&dets[a].bbox, &dets[b].bbox))
}

/// Same greedy rule over the axis-aligned hulls of the boxes.
pub fn horizontal_nms(dets: &[Detection], iou_thr: f64) -> Result<Vec<usize>> {
    let bounds: Vec<Aabb> = dets.iter().map(|d| aabb_of(&d.bbox)).collect::<Result<_>>()?;
    greedy(dets, iou_thr, |a, b| Ok(bounds[a].iou(&bounds[b])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsMode {
    Rotated,
    Horizontal,
}

/// NMS run independently per label (unlabelled detections form one group),
/// results merged back into score order.
pub fn multiclass_nms(dets: &[Detection], iou_thr: f64, mode: NmsMode) -> Result<Vec<usize>> {
    let mut labels: Vec<Option<usize>> = dets.iter().map(|d| d.label).collect();
    labels.sort();
    labels.dedup();
    let mut kept = Vec::new();
    for label in labels {
        let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].label == label).collect();
        let group: Vec<Detection> = idx.iter().map(|&i| dets[i]).collect();
        let k = match mode {
            NmsMode::Rotated => rotated_nms(&group, iou_thr)?,
            NmsMode::Horizontal => horizontal_nms(&group, iou_thr)?,
        };
        kept.extend(k.into_iter().map(|j| idx[j]));
    }
    kept.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    Ok(kept)
}

/// Top-`n` proposals by score, optionally after class-agnostic rotated NMS.
pub fn select_proposals(dets: &[Detection], n: usize, use_nms: bool, iou_thr: f64) -> Result<Vec<Detection>> {
    if n == 0 {
        return Err(Error::InvalidInput("proposal budget must be >= 1".into()));
    }
    let order = if use_nms {
        rotated_nms(dets, iou_thr)?
    } else {
        for d in dets {
            d.validate()?;
        }
        score_order(dets)
    };
    Ok(order.into_iter().take(n).map(|i| dets[i]).collect())
}

/// Keeps `score >= thr`, preserving order.
pub fn score_filter(dets: &[Detection], thr: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= thr).copied().collect()
}
