//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use obbdet::eval::GroundTruth;
use obbdet::geometry::rotated_iou;
use obbdet::{Detection, OrientedBox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(r: &mut impl Rng, extent: f64, size: (f64, f64)) -> OrientedBox {
    OrientedBox::new(
        r.random_range(0.0..extent),
        r.random_range(0.0..extent),
        r.random_range(size.0..size.1),
        r.random_range(size.0..size.1),
        r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

/// Pair drawn so that overlaps are common.
pub fn random_pair(r: &mut impl Rng) -> (OrientedBox, OrientedBox) {
    let a = random_box(r, 10.0, (1.0, 8.0));
    let b = random_box(r, 10.0, (1.0, 8.0));
    (a, b)
}

/// IoU of `[x0, x1] x [y0, y1]` rectangles from interval overlaps.
pub fn interval_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[2].max(b[2])).max(0.0);
    let inter = ix * iy;
    let area = |r: [f64; 4]| (r[1] - r[0]) * (r[3] - r[2]);
    inter / (area(a) + area(b) - inter)
}

/// Greedy NMS with the full IoU matrix precomputed.
pub fn nms_oracle(dets: &[Detection], thr: f64) -> Vec<usize> {
    let n = dets.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = rotated_iou(&dets[i].bbox, &dets[j].bbox).unwrap();
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| m[k][i] <= thr) {
            kept.push(i);
        }
    }
    kept
}

/// Fraction of `gts` with some proposal at IoU >= `thr`.
pub fn recall_oracle(props: &[OrientedBox], gts: &[OrientedBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let hit = gts
        .iter()
        .filter(|g| props.iter().any(|p| rotated_iou(p, g).unwrap() >= thr))
        .count();
    hit as f64 / gts.len() as f64
}

/// VOC 11-point AP from TP flags in ranked order.
pub fn voc07_oracle(tp: &[bool], num_gt: usize) -> f64 {
    let (mut prec, mut rec) = (Vec::new(), Vec::new());
    let mut hits = 0;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prec.push(hits as f64 / (k + 1) as f64);
        rec.push(hits as f64 / num_gt as f64);
    }
    let mut sum = 0.0;
    for i in 0..=10 {
        let level = i as f64 / 10.0;
        let mut best = 0.0f64;
        for k in 0..tp.len() {
            if rec[k] >= level {
                best = best.max(prec[k]);
            }
        }
        sum += best;
    }
    sum / 11.0
}

/// Area under the precision envelope: every TP adds `1/num_gt` of recall at
/// the best precision reachable from that rank onwards.
pub fn voc12_oracle(tp: &[bool], num_gt: usize) -> f64 {
    let mut prec = Vec::new();
    let mut hits = 0;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        prec.push(hits as f64 / (k + 1) as f64);
    }
    let mut ap = 0.0;
    for k in 0..tp.len() {
        if tp[k] {
            let env = prec[k..].iter().cloned().fold(0.0, f64::max);
            ap += env / num_gt as f64;
        }
    }
    ap
}

pub struct ClassOracle {
    pub num_gt: usize,
    pub tp_flags: Vec<bool>,
}

/// Per-class ranked TP flags pooled over images. Ties in score keep image
/// order, then detection index.
pub fn match_oracle(images: &[(Vec<Detection>, Vec<GroundTruth>)], num_classes: usize, thr: f64) -> Vec<ClassOracle> {
    (0..num_classes)
        .map(|c| {
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            let mut num_gt = 0;
            for (ii, (dets, gts)) in images.iter().enumerate() {
                let mine: Vec<usize> = (0..gts.len()).filter(|&g| gts[g].label == c).collect();
                num_gt += mine.len();
                let mut ds: Vec<usize> = (0..dets.len()).filter(|&d| dets[d].label == Some(c)).collect();
                ds.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
                let mut taken = vec![false; gts.len()];
                for d in ds {
                    let mut best: Option<(usize, f64)> = None;
                    for &g in &mine {
                        if taken[g] {
                            continue;
                        }
                        let v = rotated_iou(&dets[d].bbox, &gts[g].bbox).unwrap();
                        if best.map_or(true, |(_, b)| v > b) {
                            best = Some((g, v));
                        }
                    }
                    let hit = match best {
                        Some((g, v)) if v >= thr => {
                            taken[g] = true;
                            true
                        }
                        _ => false,
                    };
                    ranked.push((dets[d].score, ii, d, hit));
                }
            }
            ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            ClassOracle {
                num_gt,
                tp_flags: ranked.iter().map(|r| r.3).collect(),
            }
        })
        .collect()
}

/// Mean of per-class AP over classes with ground truths.
pub fn map_oracle(classes: &[ClassOracle], ap: fn(&[bool], usize) -> f64) -> f64 {
    let v: Vec<f64> = classes
        .iter()
        .filter(|c| c.num_gt > 0)
        .map(|c| ap(&c.tp_flags, c.num_gt))
        .collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `-t e^{βt} ln p`, written out directly.
pub fn arl_positive_reference(p: f64, t: f64, beta: f64) -> f64 {
    -t * (beta * t).exp() * p.ln()
}

pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
