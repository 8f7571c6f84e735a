//! Anchor-point grids, `(l, t, r, b, θ)` box coding and ATSS assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, rotated_iou, OrientedBox, Point};

/// Pyramid levels that carry anchor points.
pub const LEVELS: std::ops::RangeInclusive<u32> = 3..=7;
/// Image sides are padded up to a multiple of this before grid generation.
pub const PAD_MULTIPLE: u32 = 128;
/// Candidates kept per level and ground truth.
pub const DEFAULT_TOPK: usize = 9;

/// Anchor points of one pyramid level, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    pub level: u32,
    pub stride: f64,
    pub cols: usize,
    pub rows: usize,
    pub points: Vec<Point>,
}

impl PointGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn stride_of(level: u32) -> f64 {
    f64::from(1u32 << level)
}

fn pad(dim: u32) -> u32 {
    dim.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE
}

/// One grid per requested level, points at `(i + 0.5) * stride`.
pub fn generate_anchor_points(image_w: u32, image_h: u32, levels: &[u32]) -> Result<Vec<PointGrid>> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("empty level set".into()));
    }
    if image_w == 0 || image_h == 0 {
        return Err(Error::InvalidInput(format!("image size {image_w}x{image_h}")));
    }
    let (pw, ph) = (pad(image_w), pad(image_h));
    levels
        .iter()
        .map(|&level| {
            if !LEVELS.contains(&level) {
                return Err(Error::InvalidInput(format!("pyramid level P{level} not in P3..P7")));
            }
            let s = 1u32 << level;
            let (cols, rows) = (pw.div_ceil(s) as usize, ph.div_ceil(s) as usize);
            let stride = f64::from(s);
            let points = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| Point::new((c as f64 + 0.5) * stride, (r as f64 + 0.5) * stride)))
                .collect();
            Ok(PointGrid {
                level,
                stride,
                cols,
                rows,
                points,
            })
        })
        .collect()
}

/// Distances from an anchor point to the four sides of a box, measured in
/// the box frame, plus the box angle.
///
/// `t` and `b` are the offsets along `-v` and `+v`; they are unrelated to the
/// proposal quality score used by the recognition loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTarget {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
    pub theta: f64,
}

impl BoxTarget {
    /// All offsets non-negative, i.e. the point lies inside the box.
    pub fn is_inside(&self) -> bool {
        self.l >= 0.0 && self.t >= 0.0 && self.r >= 0.0 && self.b >= 0.0
    }
}

pub fn decode_box(point: Point, target: &BoxTarget) -> Result<OrientedBox> {
    let w = target.l + target.r;
    let h = target.t + target.b;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidInput(format!("non-positive extent {w}x{h} in {target:?}")));
    }
    let (s, c) = target.theta.sin_cos();
    let du = 0.5 * (target.r - target.l);
    let dv = 0.5 * (target.b - target.t);
    OrientedBox::new(point.x + c * du - s * dv, point.y + s * du + c * dv, w, h, target.theta)?.canonicalize()
}

/// Inverse of [`decode_box`] against the canonical form of `bbox`. Points
/// outside the box produce negative offsets (see [`BoxTarget::is_inside`]).
pub fn encode_box(point: Point, bbox: &OrientedBox) -> Result<BoxTarget> {
    let b = bbox.canonicalize()?;
    let (u, v) = b.to_local(point);
    Ok(BoxTarget {
        l: u + 0.5 * b.w,
        r: 0.5 * b.w - u,
        t: v + 0.5 * b.h,
        b: 0.5 * b.h - v,
        theta: b.theta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    Negative,
    Positive(usize),
}

impl Assignment {
    pub fn gt(self) -> Option<usize> {
        match self {
            Assignment::Positive(g) => Some(g),
            Assignment::Negative => None,
        }
    }
}

/// Per-anchor labels over the concatenation of all grids in input order.
/// `ious[i]` is the IoU with the assigned ground truth, `0` for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub labels: Vec<Assignment>,
    pub ious: Vec<f64>,
}

impl AssignmentResult {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|a| a.gt().is_some()).count()
    }

    /// Positive anchor count per ground truth.
    pub fn positives_per_gt(&self, num_gts: usize) -> Vec<usize> {
        let mut counts = vec![0; num_gts];
        for g in self.labels.iter().filter_map(|a| a.gt()) {
            counts[g] += 1;
        }
        counts
    }
}

fn anchor_box(p: Point, stride: f64) -> OrientedBox {
    OrientedBox {
        cx: p.x,
        cy: p.y,
        w: stride,
        h: stride,
        theta: 0.0,
    }
}

fn sq_dist(p: Point, q: Point) -> f64 {
    let (dx, dy) = (p.x - q.x, p.y - q.y);
    dx * dx + dy * dy
}

/// `mean + std` of candidate IoUs (sample standard deviation; zero for a
/// single candidate).
fn adaptive_threshold(ious: &[f64]) -> f64 {
    let n = ious.len() as f64;
    let mean = ious.iter().sum::<f64>() / n;
    let std = if ious.len() > 1 {
        (ious.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    mean + std
}

/// The `k` points of `grid` nearest to `center`, ties broken by index.
///
/// Searches a square window of cells around the center and widens it until
/// every point outside is provably farther than the k-th candidate.
fn nearest_in_grid(grid: &PointGrid, center: Point, k: usize) -> Vec<usize> {
    let k = k.min(grid.len());
    if k == 0 {
        return Vec::new();
    }
    let s = grid.stride;
    let clamp = |v: f64, n: usize| (v / s).floor().clamp(0.0, (n - 1) as f64) as i64;
    let (c0, r0) = (clamp(center.x, grid.cols), clamp(center.y, grid.rows));
    let mut radius = ((k as f64).sqrt() / 2.0).ceil() as i64;
    loop {
        let (cl, ch) = ((c0 - radius).max(0), (c0 + radius).min(grid.cols as i64 - 1));
        let (rl, rh) = ((r0 - radius).max(0), (r0 + radius).min(grid.rows as i64 - 1));
        let covers_all = cl == 0 && rl == 0 && ch == grid.cols as i64 - 1 && rh == grid.rows as i64 - 1;
        let mut cand: Vec<(f64, usize)> = (rl..=rh)
            .flat_map(|r| (cl..=ch).map(move |c| r as usize * grid.cols + c as usize))
            .map(|i| (sq_dist(grid.points[i], center), i))
            .collect();
        if cand.len() >= k {
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let bound = (radius as f64 + 0.5) * s;
            if covers_all || cand[k - 1].0 < bound * bound {
                return cand[..k].iter().map(|&(_, i)| i).collect();
            }
        }
        radius += 1;
    }
}

/// ATSS assignment with rotated IoU.
///
/// For every ground truth, the `k` anchor points nearest its center on each
/// level are candidates; their anchor boxes (stride-sized axis-aligned
/// squares) are compared to the ground truth by rotated IoU, and candidates at
/// or above `mean + std` whose point lies inside the ground truth become
/// positive. An anchor claimed by several ground truths goes to the one with
/// the highest IoU, lowest index on ties.
pub fn atss_assign(grids: &[PointGrid], gts: &[OrientedBox], k: usize) -> Result<AssignmentResult> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    for g in gts {
        g.validate()?;
    }
    let offsets: Vec<usize> = grids
        .iter()
        .scan(0, |acc, g| {
            let o = *acc;
            *acc += g.len();
            Some(o)
        })
        .collect();
    let total: usize = grids.iter().map(PointGrid::len).sum();
    let mut labels = vec![Assignment::Negative; total];
    let mut ious = vec![0.0; total];

    for (gi, gt) in gts.iter().enumerate() {
        let center = gt.center();
        let mut cands: Vec<(usize, Point, f64)> = Vec::with_capacity(k * grids.len());
        for (grid, &off) in grids.iter().zip(&offsets) {
            for local in nearest_in_grid(grid, center, k) {
                let p = grid.points[local];
                let iou = rotated_iou(&anchor_box(p, grid.stride), gt)?;
                cands.push((off + local, p, iou));
            }
        }
        if cands.is_empty() {
            continue;
        }
        let cand_ious: Vec<f64> = cands.iter().map(|c| c.2).collect();
        let thr = adaptive_threshold(&cand_ious);
        for (idx, p, iou) in cands {
            if iou < thr || !point_in_box(p, gt)? {
                continue;
            }
            if labels[idx] == Assignment::Negative || iou > ious[idx] {
                labels[idx] = Assignment::Positive(gi);
                ious[idx] = iou;
            }
        }
    }
    Ok(AssignmentResult { labels, ious })
}

/// Naive ATSS reference: full sort of every level for every ground truth, a
/// dense anchor × ground-truth IoU table, and a final per-anchor scan. Shares
/// no intermediate with [`atss_assign`].
pub fn assignment_oracle(grids: &[PointGrid], gts: &[OrientedBox], k: usize) -> Result<AssignmentResult> {
    let anchors: Vec<(Point, f64)> = grids
        .iter()
        .flat_map(|g| g.points.iter().map(move |&p| (p, g.stride)))
        .collect();
    let level_of: Vec<usize> = grids
        .iter()
        .enumerate()
        .flat_map(|(li, g)| std::iter::repeat_n(li, g.len()))
        .collect();
    let n = anchors.len();
    // positive[g][a]: anchor a passes the rule for ground truth g.
    let mut positive = vec![vec![false; n]; gts.len()];
    let mut iou_table = vec![vec![0.0; n]; gts.len()];
    for (gi, gt) in gts.iter().enumerate() {
        let c = gt.center();
        let mut candidates = Vec::new();
        for li in 0..grids.len() {
            let mut idx: Vec<usize> = (0..n).filter(|&a| level_of[a] == li).collect();
            idx.sort_by(|&a, &b| {
                let da = (anchors[a].0.x - c.x).powi(2) + (anchors[a].0.y - c.y).powi(2);
                let db = (anchors[b].0.x - c.x).powi(2) + (anchors[b].0.y - c.y).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            candidates.extend(idx.into_iter().take(k));
        }
        for a in 0..n {
            iou_table[gi][a] = rotated_iou(&anchor_box(anchors[a].0, anchors[a].1), gt)?;
        }
        if candidates.is_empty() {
            continue;
        }
        let vals: Vec<f64> = candidates.iter().map(|&a| iou_table[gi][a]).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = if vals.len() < 2 {
            0.0
        } else {
            (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        };
        for &a in &candidates {
            positive[gi][a] = iou_table[gi][a] >= m + sd && point_in_box(anchors[a].0, gt)?;
        }
    }
    let mut labels = vec![Assignment::Negative; n];
    let mut ious = vec![0.0; n];
    for a in 0..n {
        let mut best: Option<usize> = None;
        for gi in 0..gts.len() {
            if positive[gi][a] && best.is_none_or(|b| iou_table[gi][a] > iou_table[b][a]) {
                best = Some(gi);
            }
        }
        if let Some(g) = best {
            labels[a] = Assignment::Positive(g);
            ious[a] = iou_table[g][a];
        }
    }
    Ok(AssignmentResult { labels, ious })
}
