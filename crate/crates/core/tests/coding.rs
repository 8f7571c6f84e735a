mod common;

use common::rng;
use obbdet::coding::stride_of;
use obbdet::geometry::point_in_box;
use obbdet::{assignment_oracle, atss_assign, decode_box, encode_box, generate_anchor_points, OrientedBox, Point};
use rand::Rng;

#[test]
fn grid_sizes_follow_padding() {
    for (w, h) in [(1024u32, 1024u32), (800, 600), (1, 1), (129, 257)] {
        let grids = generate_anchor_points(w, h, &[3, 4, 5, 6, 7]).unwrap();
        let pw = w.div_ceil(128) * 128;
        let ph = h.div_ceil(128) * 128;
        for g in &grids {
            let s = stride_of(g.level) as u32;
            assert_eq!((g.cols, g.rows), ((pw / s) as usize, (ph / s) as usize));
            let last = g.points[g.len() - 1];
            assert_eq!(last, Point::new((g.cols as f64 - 0.5) * s as f64, (g.rows as f64 - 0.5) * s as f64));
        }
    }
}

#[test]
fn encode_decode_roundtrip() {
    let mut r = rng(21);
    for _ in 0..2000 {
        let b = OrientedBox::new(
            r.random_range(0.0..500.0),
            r.random_range(0.0..500.0),
            r.random_range(2.0..200.0),
            r.random_range(2.0..200.0),
            r.random_range(-3.5..3.5),
        )
        .unwrap();
        let c = b.canonicalize().unwrap();
        let (u, v) = (r.random_range(-0.49..0.49), r.random_range(-0.49..0.49));
        let (cs, sn) = (c.theta.cos(), c.theta.sin());
        let p = Point::new(c.cx + cs * u * c.w - sn * v * c.h, c.cy + sn * u * c.w + cs * v * c.h);
        assert!(point_in_box(p, &b).unwrap());
        let t = encode_box(p, &b).unwrap();
        assert!(t.is_inside());
        let back = decode_box(p, &t).unwrap();
        for (x, y) in [(back.cx, c.cx), (back.cy, c.cy), (back.w, c.w), (back.h, c.h), (back.theta, c.theta)] {
            assert!((x - y).abs() < 1e-6, "{back:?} vs {c:?}");
        }
    }
}

#[test]
fn atss_matches_oracle_on_seeded_scenes() {
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let (w, h) = (r.random_range(200..520u32), r.random_range(200..520u32));
        let n = r.random_range(1..=20);
        let gts: Vec<OrientedBox> = (0..n)
            .map(|_| {
                OrientedBox::new(
                    r.random_range(0.0..w as f64),
                    r.random_range(0.0..h as f64),
                    r.random_range(6.0..220.0),
                    r.random_range(6.0..120.0),
                    r.random_range(-3.2..3.2),
                )
                .unwrap()
            })
            .collect();
        let grids = generate_anchor_points(w, h, &[3, 4, 5, 6, 7]).unwrap();
        let fast = atss_assign(&grids, &gts, 9).unwrap();
        let slow = assignment_oracle(&grids, &gts, 9).unwrap();
        assert_eq!(fast.labels, slow.labels, "scene {seed}");
        assert_eq!(fast.ious, slow.ious, "scene {seed}");
    }
}

#[test]
fn positives_lie_inside_their_gt() {
    let mut r = rng(22);
    let gts: Vec<OrientedBox> = (0..12)
        .map(|_| OrientedBox::new(r.random_range(50.0..450.0), r.random_range(50.0..450.0), 80.0, 30.0, r.random_range(-1.5..1.5)).unwrap())
        .collect();
    let grids = generate_anchor_points(512, 512, &[3, 4, 5]).unwrap();
    let res = atss_assign(&grids, &gts, 9).unwrap();
    let points: Vec<Point> = grids.iter().flat_map(|g| g.points.iter().copied()).collect();
    assert!(res.num_positive() > 0);
    for (a, p) in res.labels.iter().zip(&points) {
        if let Some(g) = a.gt() {
            assert!(point_in_box(*p, &gts[g]).unwrap());
        }
    }
}
