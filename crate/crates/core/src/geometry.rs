//! Exact oriented-rectangle geometry.
//!
//! Angle convention: `theta` is the counter-clockwise angle (radians) from the
//! +x axis to the edge of length `w`. The canonical representative of a box
//! has `w >= h` and `theta` in `[-pi/2, pi/2)`; squares are further reduced to
//! `[-pi/4, pi/4)` so that the representative stays unique.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polygons with area below this (px²) are treated as empty.
pub const AREA_EPS: f64 = 1e-9;
/// Tolerance on cross-product sign tests during clipping.
pub const CROSS_EPS: f64 = 1e-12;
/// Slack on the inclusive point-in-box test.
const INSIDE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn total_cmp(&self, o: &Point) -> Ordering {
        self.x.total_cmp(&o.x).then(self.y.total_cmp(&o.y))
    }
}

/// z-component of `(b - a) x (c - a)`; positive when `a, b, c` turn left.
fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

/// Rectangle given by center, side lengths and rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Builds a box, rejecting non-finite fields and non-positive sides.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h, theta };
        b.validate()?;
        Ok(b)
    }

    /// Axis-aligned box from min/max corners.
    pub fn from_xyxy(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        Self::new(
            0.5 * (x_min + x_max),
            0.5 * (y_min + y_max),
            x_max - x_min,
            y_max - y_min,
            0.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.cx, self.cy, self.w, self.h, self.theta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite field in {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive side (w={}, h={})",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Unique representative of the same point set: `w >= h`,
    /// `theta in [-pi/2, pi/2)` (`[-pi/4, pi/4)` for squares).
    pub fn canonicalize(&self) -> Result<Self> {
        self.validate()?;
        let (w, h, theta) = if self.w < self.h {
            (self.h, self.w, self.theta + FRAC_PI_2)
        } else {
            (self.w, self.h, self.theta)
        };
        let theta = if w == h {
            wrap_angle(theta, FRAC_PI_2)
        } else {
            wrap_angle(theta, PI)
        };
        Ok(Self {
            cx: self.cx,
            cy: self.cy,
            w,
            h,
            theta,
        })
    }

    /// Corners in counter-clockwise order, starting at the local `(+w/2, +h/2)`
    /// corner.
    pub fn corners(&self) -> Result<[Point; 4]> {
        self.validate()?;
        Ok(self.corners_unchecked())
    }

    fn corners_unchecked(&self) -> [Point; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        let local = [(hw, hh), (-hw, hh), (-hw, -hh), (hw, -hh)];
        local.map(|(u, v)| Point::new(self.cx + c * u - s * v, self.cy + s * u + c * v))
    }

    /// Coordinates of `p` in the box frame (origin at the center, u along w).
    pub(crate) fn to_local(&self, p: Point) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (p.x - self.cx, p.y - self.cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Reduces `theta` into `[-period/2, period/2)`.
fn wrap_angle(theta: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let mut t = theta - period * ((theta + half) / period).floor();
    if t >= half {
        t -= period;
    }
    if t < -half {
        t += period;
    }
    t
}

/// Convex polygon with counter-clockwise vertices; empty when it has no
/// vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Normalizes a convex vertex ring: orients it counter-clockwise, drops
    /// repeated and collinear vertices, and collapses slivers below
    /// [`AREA_EPS`] to the empty polygon.
    pub fn new(vertices: Vec<Point>) -> Self {
        let mut v = dedup_ring(vertices);
        if signed_area(&v) < 0.0 {
            v.reverse();
        }
        let v = drop_collinear(v);
        if v.len() < 3 || signed_area(&v) < AREA_EPS {
            return Self::empty();
        }
        Self { vertices: v }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).max(0.0)
    }
}

fn signed_area(v: &[Point]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let n = v.len();
    let twice: f64 = (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum();
    0.5 * twice
}

fn dedup_ring(mut v: Vec<Point>) -> Vec<Point> {
    v.dedup_by(|a, b| (a.x - b.x).abs() <= CROSS_EPS && (a.y - b.y).abs() <= CROSS_EPS);
    while v.len() > 1 {
        let (f, l) = (v[0], v[v.len() - 1]);
        if (f.x - l.x).abs() <= CROSS_EPS && (f.y - l.y).abs() <= CROSS_EPS {
            v.pop();
        } else {
            break;
        }
    }
    v
}

fn drop_collinear(mut v: Vec<Point>) -> Vec<Point> {
    let mut changed = true;
    while changed && v.len() >= 3 {
        changed = false;
        let n = v.len();
        for i in 0..n {
            let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            if orient(a, b, c).abs() <= CROSS_EPS {
                v.remove(i);
                changed = true;
                break;
            }
        }
    }
    v
}

/// Clips `subject` against every edge of `clip` (Sutherland–Hodgman). Both
/// inputs must be convex and counter-clockwise.
pub fn convex_polygon_intersection(subject: &ConvexPolygon, clip: &ConvexPolygon) -> ConvexPolygon {
    if subject.is_empty() || clip.is_empty() {
        return ConvexPolygon::empty();
    }
    let mut out: Vec<Point> = subject.vertices.clone();
    let cv = &clip.vertices;
    for i in 0..cv.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (cv[i], cv[(i + 1) % cv.len()]);
        let input = std::mem::take(&mut out);
        let side = |p: Point| orient(a, b, p);
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            let cur_in = cur_side >= -CROSS_EPS;
            let prev_in = prev_side >= -CROSS_EPS;
            if cur_in != prev_in {
                let t = prev_side / (prev_side - cur_side);
                out.push(Point::new(
                    prev.x + t * (cur.x - prev.x),
                    prev.y + t * (cur.y - prev.y),
                ));
            }
            if cur_in {
                out.push(cur);
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    ConvexPolygon::new(out)
}

/// Monotone-chain convex hull. Collinear boundary points are dropped; fewer
/// than three non-collinear points give the empty polygon.
pub fn convex_hull(points: &[Point]) -> Result<ConvexPolygon> {
    if points.is_empty() {
        return Err(Error::InvalidInput("convex hull of zero points".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(Point::total_cmp);
    pts.dedup();
    if pts.len() < 3 {
        return Ok(ConvexPolygon::empty());
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    Ok(ConvexPolygon::new(hull))
}

fn box_polygon(b: &OrientedBox) -> ConvexPolygon {
    ConvexPolygon::new(b.corners_unchecked().to_vec())
}

/// Orders a pair by the canonical parameters so that pairwise kernels are
/// exactly symmetric.
fn ordered_pair<'a>(a: &'a OrientedBox, b: &'a OrientedBox) -> (&'a OrientedBox, &'a OrientedBox) {
    let key = |x: &OrientedBox| [x.cx, x.cy, x.w, x.h, x.theta];
    let (ka, kb) = (key(a), key(b));
    let ord = ka
        .iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

struct Overlap {
    iou: f64,
    union: f64,
}

fn overlap(a: &OrientedBox, b: &OrientedBox) -> Result<Option<Overlap>> {
    let (ca, cb) = (a.canonicalize()?, b.canonicalize()?);
    if ca == cb {
        return Ok(None);
    }
    let (ca, cb) = ordered_pair(&ca, &cb);
    let (pa, pb) = (box_polygon(ca), box_polygon(cb));
    let (area_a, area_b) = (pa.area(), pb.area());
    let inter = if aabb_of_unchecked(ca).intersects(&aabb_of_unchecked(cb)) {
        convex_polygon_intersection(&pa, &pb).area()
    } else {
        0.0
    };
    let union = area_a + area_b - inter;
    let iou = if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(Some(Overlap { iou, union }))
}

/// Intersection over union of two oriented boxes.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    Ok(overlap(a, b)?.map_or(1.0, |o| o.iou))
}

/// Generalized IoU with the convex hull of both corner sets as the enclosing
/// region.
pub fn rotated_giou(a: &OrientedBox, b: &OrientedBox) -> Result<f64> {
    let Some(o) = overlap(a, b)? else {
        return Ok(1.0);
    };
    let (ca, cb) = (a.canonicalize()?, b.canonicalize()?);
    let (ca, cb) = ordered_pair(&ca, &cb);
    let mut pts = ca.corners_unchecked().to_vec();
    pts.extend_from_slice(&cb.corners_unchecked());
    let hull = convex_hull(&pts)?.area();
    if hull <= 0.0 {
        return Ok(o.iou);
    }
    let uncovered = (hull - o.union).max(0.0);
    Ok(o.iou - uncovered / hull)
}

/// Inclusive containment test.
pub fn point_in_box(p: Point, b: &OrientedBox) -> Result<bool> {
    b.validate()?;
    let (u, v) = b.to_local(p);
    Ok(u.abs() <= 0.5 * b.w + INSIDE_EPS && v.abs() <= 0.5 * b.h + INSIDE_EPS)
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Aabb {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.x_min <= o.x_max && o.x_min <= self.x_max && self.y_min <= o.y_max && o.y_min <= self.y_max
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            x_min: self.x_min.min(o.x_min),
            y_min: self.y_min.min(o.y_min),
            x_max: self.x_max.max(o.x_max),
            y_max: self.y_max.max(o.y_max),
        }
    }

    /// Interval-overlap IoU.
    pub fn iou(&self, o: &Aabb) -> f64 {
        let iw = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let ih = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + o.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }
}

/// Tight axis-aligned bounds of the four corners.
pub fn aabb_of(b: &OrientedBox) -> Result<Aabb> {
    b.validate()?;
    Ok(aabb_of_unchecked(b))
}

fn aabb_of_unchecked(b: &OrientedBox) -> Aabb {
    let c = b.corners_unchecked();
    let mut out = Aabb {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for p in c {
        out.x_min = out.x_min.min(p.x);
        out.y_min = out.y_min.min(p.y);
        out.x_max = out.x_max.max(p.x);
        out.y_max = out.y_max.max(p.y);
    }
    out
}

/// Monte-Carlo IoU estimate from `n` uniform samples over the joint AABB.
///
/// Independent of the clipping path: it only uses the box-frame containment
/// test. Deterministic for a fixed `seed`.
pub fn mc_iou_oracle(a: &OrientedBox, b: &OrientedBox, n: u64, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    let region = aabb_of(a)?.union(&aabb_of(b)?);
    if !(region.width() > 0.0 && region.height() > 0.0) {
        return Err(Error::InvalidInput("degenerate joint bounding box".into()));
    }
    let frame = |bx: &OrientedBox| {
        let (s, c) = bx.theta.sin_cos();
        (bx.cx, bx.cy, c, s, 0.5 * bx.w, 0.5 * bx.h)
    };
    let inside = |f: &(f64, f64, f64, f64, f64, f64), x: f64, y: f64| {
        let (dx, dy) = (x - f.0, y - f.1);
        (f.2 * dx + f.3 * dy).abs() <= f.4 && (-f.3 * dx + f.2 * dy).abs() <= f.5
    };
    let (fa, fb) = (frame(a), frame(b));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut union, mut inter) = (0u64, 0u64);
    for _ in 0..n {
        let x = region.x_min + region.width() * rng.random::<f64>();
        let y = region.y_min + region.height() * rng.random::<f64>();
        let (ia, ib) = (inside(&fa, x, y), inside(&fb, x, y));
        union += (ia || ib) as u64;
        inter += (ia && ib) as u64;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Minimum-area enclosing rectangle of a point set (rotating calipers over the
/// hull edges), returned in canonical form.
pub fn min_area_rect(points: &[Point]) -> Result<OrientedBox> {
    let hull = convex_hull(points)?;
    let v = hull.vertices();
    if v.len() < 3 {
        return Err(Error::InvalidInput("points do not span a rectangle".into()));
    }
    let mut best: Option<(f64, OrientedBox)> = None;
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let theta = (b.y - a.y).atan2(b.x - a.x);
        let (s, c) = theta.sin_cos();
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in v {
            let (u, w) = (c * p.x + s * p.y, -s * p.x + c * p.y);
            u0 = u0.min(u);
            u1 = u1.max(u);
            v0 = v0.min(w);
            v1 = v1.max(w);
        }
        let area = (u1 - u0) * (v1 - v0);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let (uc, vc) = (0.5 * (u0 + u1), 0.5 * (v0 + v1));
            let rect = OrientedBox {
                cx: c * uc - s * vc,
                cy: s * uc + c * vc,
                w: u1 - u0,
                h: v1 - v0,
                theta,
            };
            best = Some((area, rect));
        }
    }
    let (_, rect) = best.expect("hull has edges");
    rect.canonicalize()
}
