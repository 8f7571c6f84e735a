mod common;

use common::{map_oracle, match_oracle, recall_oracle, rng, voc07_oracle, voc12_oracle};
use obbdet::eval::{
    ap_voc07, ap_voc12, average_recall, confusion_matrix, evaluate_dataset, pr_curve, recall_at, ImageEval,
    ProposalImage,
};
use obbdet::scene::{gen_scene_set, SceneConfig};
use obbdet::{Detection, EvalConfig, GroundTruth, Metric, OrientedBox};
use rand::Rng;

fn sq(cx: f64, cy: f64) -> OrientedBox {
    OrientedBox::new(cx, cy, 10., 10., 0.).unwrap()
}

#[test]
fn fp_then_tp_gives_half() {
    let gts = vec![GroundTruth::new(sq(0., 0.), 0)];
    let dets = vec![
        Detection::new(sq(50., 50.), 0.9, Some(0)),
        Detection::new(sq(0., 0.), 0.8, Some(0)),
    ];
    let mut cfg = EvalConfig::new(1);
    let img = [ImageEval { dets, gts }];
    for m in [Metric::Voc07, Metric::Voc12] {
        cfg.metric = m;
        assert_eq!(evaluate_dataset(&img, &cfg).unwrap().map, 0.5);
    }
}

#[test]
fn hand_computed_curves() {
    // TP FP TP FP with 3 gts: P = 1, 1/2, 2/3, 1/2; R = 1/3, 1/3, 2/3, 2/3.
    let c = pr_curve(&[true, false, true, false], 3);
    assert_eq!(c.precision, vec![1.0, 0.5, 2.0 / 3.0, 0.5]);
    // Envelope: 1 on [0, 1/3], 2/3 on [1/3, 2/3].
    assert!((ap_voc12(&c) - (1.0 / 3.0 + 2.0 / 9.0)).abs() < 1e-15);
    // Levels 0..0.3 -> 1, 0.4..0.6 -> 2/3, 0.7..1 -> 0.
    assert!((ap_voc07(&c) - (4.0 + 3.0 * 2.0 / 3.0) / 11.0).abs() < 1e-15);
}

fn mini_dataset(seed: u64) -> Vec<(Vec<Detection>, Vec<GroundTruth>)> {
    let mut r = rng(seed);
    (0..r.random_range(1..5))
        .map(|_| {
            let gts: Vec<GroundTruth> = (0..r.random_range(0..8))
                .map(|_| {
                    GroundTruth::new(
                        OrientedBox::new(r.random_range(0.0..60.0), r.random_range(0.0..60.0), r.random_range(5.0..20.0), r.random_range(5.0..20.0), r.random_range(-1.6..1.6)).unwrap(),
                        r.random_range(0..3),
                    )
                })
                .collect();
            let mut dets: Vec<Detection> = Vec::new();
            for g in &gts {
                for _ in 0..r.random_range(0..3) {
                    let b = OrientedBox {
                        cx: g.bbox.cx + r.random_range(-3.0..3.0),
                        cy: g.bbox.cy + r.random_range(-3.0..3.0),
                        theta: g.bbox.theta + r.random_range(-0.3..0.3),
                        ..g.bbox
                    };
                    let label = if r.random_bool(0.8) { g.label } else { r.random_range(0..3) };
                    dets.push(Detection::new(b, (r.random_range(0.0..1.0f64) * 10.0).round() / 10.0, Some(label)));
                }
            }
            for _ in 0..r.random_range(0..4) {
                let b = OrientedBox::new(r.random_range(0.0..60.0), r.random_range(0.0..60.0), 8.0, 6.0, 0.3).unwrap();
                dets.push(Detection::new(b, r.random_range(0.0..1.0), Some(r.random_range(0..3))));
            }
            (dets, gts)
        })
        .collect()
}

#[test]
fn dataset_evaluation_matches_brute_force() {
    for seed in 0..50 {
        let data = mini_dataset(seed);
        let images: Vec<ImageEval> = data.iter().map(|(d, g)| ImageEval { dets: d.clone(), gts: g.clone() }).collect();
        let report = evaluate_dataset(&images, &EvalConfig::new(3)).unwrap();
        let oracle = match_oracle(&data, 3, 0.5);
        // Decisions are compared exactly; AP only up to summation order.
        assert!((report.map_voc07 - map_oracle(&oracle, voc07_oracle)).abs() < 1e-12, "set {seed}");
        assert!((report.map_voc12 - map_oracle(&oracle, voc12_oracle)).abs() < 1e-12, "set {seed}");
        for (cr, o) in report.classes.iter().zip(&oracle) {
            assert_eq!(cr.num_gt, o.num_gt);
            assert_eq!(cr.tp, o.tp_flags.iter().filter(|t| **t).count());
            assert_eq!(cr.num_det, o.tp_flags.len());
        }
        for (m, (dets, gts)) in data.iter().enumerate() {
            let got = obbdet::eval::match_detections(dets, gts, 0.5).unwrap();
            let single = match_oracle(&data[m..=m], 3, 0.5);
            for c in 0..3 {
                let mut mine: Vec<(usize, bool)> = got
                    .order
                    .iter()
                    .zip(&got.tp)
                    .filter(|(d, _)| dets[**d].label == Some(c))
                    .map(|(d, t)| (*d, *t))
                    .collect();
                mine.sort_by(|a, b| dets[b.0].score.partial_cmp(&dets[a.0].score).unwrap().then(a.0.cmp(&b.0)));
                let flags: Vec<bool> = mine.iter().map(|x| x.1).collect();
                assert_eq!(flags, single[c].tp_flags, "set {seed} image {m} class {c}");
            }
        }
        let o75 = match_oracle(&data, 3, 0.75);
        assert!((report.map_75 - map_oracle(&o75, voc12_oracle)).abs() < 1e-12, "set {seed}");
    }
}

#[test]
fn ap_variants_agree_on_generated_runs() {
    for seed in 0..20 {
        let cfg = SceneConfig {
            num_images: 6,
            seed,
            ..SceneConfig::default()
        };
        let set = gen_scene_set(&cfg).unwrap();
        let images: Vec<ImageEval> = set
            .images
            .iter()
            .map(|i| ImageEval {
                dets: i.predictions.iter().map(|p| p.det).collect(),
                gts: i.gts.clone(),
            })
            .collect();
        let r = evaluate_dataset(&images, &EvalConfig::new(set.class_names.len())).unwrap();
        assert!((r.map_voc07 - r.map_voc12).abs() <= 0.05, "seed {seed}: {} vs {}", r.map_voc07, r.map_voc12);
    }
}

#[test]
fn zero_noise_generated_set_is_perfect() {
    let cfg = SceneConfig {
        sigma_loc: 0.0,
        sigma_theta: 0.0,
        confusion_rate: 0.0,
        fp_rate: 0.0,
        ..SceneConfig::default()
    };
    let set = gen_scene_set(&cfg).unwrap();
    let images: Vec<ImageEval> = set
        .images
        .iter()
        .map(|i| ImageEval {
            dets: i.predictions.iter().map(|p| p.det).collect(),
            gts: i.gts.clone(),
        })
        .collect();
    let r = evaluate_dataset(&images, &EvalConfig::new(12)).unwrap();
    assert_eq!(r.map_voc07, 1.0);
    assert_eq!(r.map_voc12, 1.0);
    for c in r.classes.iter().filter(|c| c.num_gt > 0) {
        assert_eq!(c.ap_voc07, Some(1.0));
        assert_eq!(c.ap_voc12, Some(1.0));
    }
}

#[test]
fn recall_with_known_shift() {
    let mut r = rng(40);
    let gts: Vec<OrientedBox> = (0..40)
        .map(|i| OrientedBox::new(60.0 * (i % 8) as f64, 60.0 * (i / 8) as f64, 30.0, 12.0, r.random_range(-1.5..1.5)).unwrap())
        .collect();
    // Sliding by d along the long side gives IoU (w - d) / (w + d).
    let shifts: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
    let props: Vec<Detection> = gts
        .iter()
        .zip(&shifts)
        .map(|(g, d)| {
            let b = OrientedBox::new(g.cx + d * g.theta.cos(), g.cy + d * g.theta.sin(), g.w, g.h, g.theta).unwrap();
            Detection::new(b, 1.0 - d / 100.0, None)
        })
        .collect();
    let boxes: Vec<OrientedBox> = props.iter().map(|p| p.bbox).collect();
    for thr in [0.5, 0.6, 0.75, 0.85, 0.95] {
        let expect = shifts.iter().filter(|d| (30.0 - *d) / (30.0 + *d) >= thr - 1e-12).count() as f64 / 40.0;
        let got = recall_at(&props, &gts, thr).unwrap();
        assert_eq!(got, recall_oracle(&boxes, &gts, thr));
        assert!((got - expect).abs() <= 1.0 / 40.0, "thr {thr}: {got} vs {expect}");
    }
    let rows = average_recall(&[ProposalImage { proposals: &props, gts: &gts }], &[10, 40]).unwrap();
    // The 10 best-scored proposals are the 10 smallest shifts.
    assert_eq!(rows[0].at(0.5), 10.0 / 40.0);
    assert_eq!(rows[1].at(0.5), recall_oracle(&boxes, &gts, 0.5));
}

#[test]
fn confusion_rate_is_recovered() {
    let cfg = SceneConfig {
        num_images: 140,
        confusion_rate: 0.3,
        fp_rate: 0.0,
        sigma_loc: 1.0,
        seed: 5,
        ..SceneConfig::default()
    };
    let set = gen_scene_set(&cfg).unwrap();
    let mut total = obbdet::eval::ConfusionMatrix::new(12);
    let mut objects = 0;
    for img in &set.images {
        let dets: Vec<Detection> = img.predictions.iter().map(|p| p.det).collect();
        total.add(&confusion_matrix(&dets, &img.gts, 0.5, 0.0, 12).unwrap());
        objects += img.gts.len();
    }
    assert!(objects >= 2000, "{objects}");
    let f = total.off_diagonal_fraction();
    assert!((f - 0.3).abs() <= 0.03, "{f}");
}
